use serde::Serialize;

use super::{BoundaryCondition, SpinSystem};
use crate::error::{invalid, LabError, Result};
use crate::lattice::Geometry;
use crate::tolerances;

/// Largest site count accepted by [`enumerate_measure`].
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Bit-level view of a spin system: state `s` has `σ_x = +1` iff bit `x` is set.
#[derive(Debug, Clone)]
pub(crate) struct BitSystem {
    pub n: usize,
    nbr_masks: Vec<u64>,
    upper_masks: Vec<u64>,
    degree: Vec<i32>,
    external: Vec<i32>,
}

impl BitSystem {
    pub fn new(sys: &SpinSystem) -> Self {
        let g = sys.geometry();
        let n = g.site_count();
        assert!(n < 64);
        let mut nbr_masks = vec![0u64; n];
        let mut upper_masks = vec![0u64; n];
        for x in 0..n {
            for &y in g.neighbors(x) {
                nbr_masks[x] |= 1 << y;
                if y > x {
                    upper_masks[x] |= 1 << y;
                }
            }
        }
        BitSystem {
            n,
            degree: nbr_masks.iter().map(|m| m.count_ones() as i32).collect(),
            nbr_masks,
            upper_masks,
            external: (0..n).map(|x| sys.external_field(x)).collect(),
        }
    }

    #[inline]
    pub fn spin(s: u64, x: usize) -> i32 {
        ((s >> x & 1) as i32) * 2 - 1
    }

    /// Local field at `x` including boundary spins.
    #[inline]
    pub fn field(&self, s: u64, x: usize) -> i32 {
        2 * (s & self.nbr_masks[x]).count_ones() as i32 - self.degree[x] + self.external[x]
    }

    pub fn energy(&self, s: u64) -> i32 {
        let mut e = 0i32;
        for x in 0..self.n {
            let sx = Self::spin(s, x);
            let m = self.upper_masks[x];
            e += sx * (2 * (s & m).count_ones() as i32 - m.count_ones() as i32);
            e += sx * self.external[x];
        }
        e
    }
}

/// The Gibbs measure tabulated over all `2^n` configurations.
#[derive(Debug, Clone)]
pub struct ExactMeasure {
    system: SpinSystem,
    beta: f64,
    probs: Vec<f64>,
    energies: Vec<i32>,
    log_z: f64,
}

/// Exact moments of observables under an [`ExactMeasure`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservableStats {
    pub mean: f64,
    pub variance: f64,
    pub covariance: f64,
    /// `Ent(f)`; absent when `f` takes negative values.
    pub entropy: Option<f64>,
}

pub fn enumerate_measure(geom: &Geometry, bc: &BoundaryCondition, beta: f64) -> Result<ExactMeasure> {
    ExactMeasure::new(SpinSystem::new(geom.clone(), bc.clone())?, beta, DEFAULT_ENUMERATION_CAP)
}

impl ExactMeasure {
    pub fn new(system: SpinSystem, beta: f64, cap: usize) -> Result<Self> {
        let n = system.site_count();
        if n > cap {
            return Err(LabError::CapExceeded {
                what: "enumerated site count",
                value: n as u64,
                cap: cap as u64,
            });
        }
        if !beta.is_finite() {
            return Err(invalid("beta must be finite"));
        }
        let bits = BitSystem::new(&system);
        let states = 1usize << n;
        let energies: Vec<i32> = (0..states as u64).map(|s| bits.energy(s)).collect();
        let emax = energies.iter().map(|&e| beta * e as f64).fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = energies.iter().map(|&e| (beta * e as f64 - emax).exp()).collect();
        let z: f64 = neumaier_sum(probs.iter().copied());
        for p in &mut probs {
            *p /= z;
        }
        Ok(ExactMeasure {
            system,
            beta,
            probs,
            energies,
            log_z: emax + z.ln(),
        })
    }

    pub fn system(&self) -> &SpinSystem {
        &self.system
    }

    pub fn geometry(&self) -> &Geometry {
        self.system.geometry()
    }

    pub fn bc(&self) -> &BoundaryCondition {
        self.system.bc()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn site_count(&self) -> usize {
        self.system.site_count()
    }

    pub fn state_count(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `H(σ)` per state.
    pub fn energies(&self) -> &[i32] {
        &self.energies
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    /// `σ_x` as a function on the state space.
    pub fn spin(&self, x: usize) -> Vec<f64> {
        (0..self.state_count() as u64)
            .map(|s| BitSystem::spin(s, x) as f64)
            .collect()
    }

    /// Tabulate an arbitrary function of the configuration.
    pub fn tabulate(&self, f: impl Fn(&[i8]) -> f64) -> Vec<f64> {
        let n = self.site_count();
        let mut buf = vec![0i8; n];
        (0..self.state_count() as u64)
            .map(|s| {
                for (x, b) in buf.iter_mut().enumerate() {
                    *b = BitSystem::spin(s, x) as i8;
                }
                f(&buf)
            })
            .collect()
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.state_count() {
            return Err(invalid(format!(
                "function has {} entries, state space has {}",
                f.len(),
                self.state_count()
            )));
        }
        Ok(())
    }

    pub fn expectation(&self, f: &[f64]) -> f64 {
        neumaier_sum(self.probs.iter().zip(f).map(|(p, v)| p * v))
    }

    pub fn covariance(&self, f: &[f64], g: &[f64]) -> f64 {
        let mf = self.expectation(f);
        let mg = self.expectation(g);
        neumaier_sum(
            self.probs
                .iter()
                .zip(f.iter().zip(g))
                .map(|(p, (a, b))| p * (a - mf) * (b - mg)),
        )
    }

    pub fn variance(&self, f: &[f64]) -> f64 {
        self.covariance(f, f)
    }

    /// `Ent(f) = E[f log f] - E[f] log E[f]` for `f >= 0`.
    pub fn entropy(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f)?;
        weighted_entropy(&self.probs, f)
    }

    pub fn observable_stats(&self, f: &[f64], g: &[f64]) -> Result<ObservableStats> {
        self.check_len(f)?;
        self.check_len(g)?;
        Ok(ObservableStats {
            mean: self.expectation(f),
            variance: self.variance(f),
            covariance: self.covariance(f, g),
            entropy: self.entropy(f).ok(),
        })
    }

    pub fn mean_spin(&self, x: usize) -> f64 {
        neumaier_sum(
            self.probs
                .iter()
                .enumerate()
                .map(|(s, p)| p * BitSystem::spin(s as u64, x) as f64),
        )
    }

    pub fn two_point(&self, x: usize, y: usize) -> f64 {
        neumaier_sum(self.probs.iter().enumerate().map(|(s, p)| {
            p * (BitSystem::spin(s as u64, x) * BitSystem::spin(s as u64, y)) as f64
        }))
    }

    /// Largest `|Σ p - 1|`-style normalization defect.
    pub fn normalization_error(&self) -> f64 {
        (neumaier_sum(self.probs.iter().copied()) - 1.0).abs()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization_error() <= tolerances::NORMALIZATION
    }
}

/// `Ent_π(f)` computed as `Σ π m φ(f/m)` with `φ(r) = r log r - r + 1 >= 0`,
/// which avoids the cancellation of the textbook form near constants.
pub(crate) fn weighted_entropy(pi: &[f64], f: &[f64]) -> Result<f64> {
    if let Some(v) = f.iter().find(|v| **v < 0.0 || v.is_nan()) {
        return Err(invalid(format!("entropy needs a nonnegative function, found {v}")));
    }
    let m = neumaier_sum(pi.iter().zip(f).map(|(p, v)| p * v));
    if m == 0.0 {
        return Ok(0.0);
    }
    Ok(m * neumaier_sum(pi.iter().zip(f).map(|(p, v)| p * phi(v / m))))
}

fn phi(r: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    let u = r - 1.0;
    if u.abs() < 1e-2 {
        // Σ_{k>=2} (-1)^k u^k / (k (k-1))
        let mut term = u * u;
        let mut acc = 0.0;
        for k in 2..12 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * term / (k * (k - 1)) as f64;
            term *= u;
        }
        acc
    } else {
        r * r.ln() - u
    }
}

/// Compensated summation.
pub(crate) fn neumaier_sum(iter: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in iter {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::critical_beta_2d;

    #[test]
    fn single_spin_plus_boundary() {
        let g = Geometry::cube(2, 0).unwrap();
        let b = critical_beta_2d();
        let m = enumerate_measure(&g, &BoundaryCondition::Plus, b).unwrap();
        assert!((m.mean_spin(0) - (4.0 * b).tanh()).abs() < 1e-14);
        assert!((m.mean_spin(0) - 0.9428).abs() < 1e-4);
    }

    #[test]
    fn beta_zero_is_uniform() {
        let g = Geometry::cube(2, 1).unwrap();
        let m = enumerate_measure(&g, &BoundaryCondition::Free, 0.0).unwrap();
        assert!(m.probs().iter().all(|p| (p - 1.0 / 512.0).abs() < 1e-16));
        for x in 0..9 {
            assert_eq!(m.mean_spin(x), 0.0);
        }
        assert!(((512f64).ln() - m.log_partition()).abs() < 1e-12);
    }

    #[test]
    fn torus_spin_flip_symmetry() {
        let g = Geometry::torus(2, 2).unwrap();
        let m = enumerate_measure(&g, &BoundaryCondition::Periodic, critical_beta_2d()).unwrap();
        assert!(m.is_normalized());
        let full = (1u64 << 16) - 1;
        for s in 0..1u64 << 16 {
            assert_eq!(m.probs()[s as usize], m.probs()[(full ^ s) as usize]);
        }
        for x in 0..16 {
            assert!(m.mean_spin(x).abs() < 1e-15);
        }
    }

    #[test]
    fn stats_examples() {
        let g = Geometry::cube(2, 0).unwrap();
        let m = enumerate_measure(&g, &BoundaryCondition::Free, 0.7).unwrap();
        let s = m.spin(0);
        let st = m.observable_stats(&s, &s).unwrap();
        assert_eq!(st.mean, 0.0);
        assert!((st.variance - 1.0).abs() < 1e-15);
        assert_eq!(st.covariance, st.variance);
        assert!(st.entropy.is_none());
        let c = vec![3.5; 2];
        assert_eq!(m.entropy(&c).unwrap(), 0.0);
        assert!(m.entropy(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn enumeration_cap() {
        let g = Geometry::open_box(&[3, 7]).unwrap();
        assert!(matches!(
            enumerate_measure(&g, &BoundaryCondition::Free, 0.3),
            Err(LabError::CapExceeded { .. })
        ));
    }

    #[test]
    fn entropy_matches_textbook_form() {
        let pi = [0.1, 0.2, 0.3, 0.4];
        let f = [0.5, 2.0, 1.0, 3.0];
        let m: f64 = pi.iter().zip(&f).map(|(p, v)| p * v).sum();
        let direct: f64 =
            pi.iter().zip(&f).map(|(p, v)| p * v * v.ln()).sum::<f64>() - m * m.ln();
        assert!((weighted_entropy(&pi, &f).unwrap() - direct).abs() < 1e-14);
        let near = [1.0 + 1e-5, 1.0 - 1e-5, 1.0, 1.0];
        let e = weighted_entropy(&pi, &near).unwrap();
        assert!(e > 0.0);
    }
}
