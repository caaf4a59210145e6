//! Finite-volume Ising measures.
//!
//! The weight of a configuration `σ` on a volume `Λ` with boundary values `ω`
//! is `exp(β H(σ))` with
//! `H(σ) = Σ_{x~y ∈ Λ} σ_x σ_y + Σ_{a ∈ Λ, b ∈ ∂Λ, a~b} σ_a ω_b`.

mod exact;
mod observables;
mod sampler;

pub use exact::{enumerate_measure, ExactMeasure, ObservableStats, DEFAULT_ENUMERATION_CAP};
pub(crate) use exact::{neumaier_sum, weighted_entropy, BitSystem};
pub(crate) use observables::{chain_averages, mean_stderr};
pub use observables::{
    magnetization_plus, magnetization_plus_at, two_point, McBudget, Method, ObservableRecord,
};
pub use sampler::{sample_equilibrium, EquilibriumSampler, SamplerAlgorithm, SamplerDiagnostics};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::lattice::Geometry;

/// `β_c` of the square lattice, the root of `sinh(2β) = 1` found by bisection.
pub fn critical_beta_2d() -> f64 {
    let (mut lo, mut hi) = (0.1f64, 1.0f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if (2.0 * mid).sinh() < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Critical coupling: computed for `d = 2`, literature Monte Carlo estimates
/// for `d = 3` (0.2216546) and `d = 4` (0.1496947). Higher dimensions must be
/// supplied by the caller.
pub fn default_critical_beta(d: usize) -> Option<f64> {
    match d {
        2 => Some(critical_beta_2d()),
        3 => Some(0.221_654_6),
        4 => Some(0.149_694_7),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "values")]
pub enum BoundaryCondition {
    Plus,
    Minus,
    Free,
    Periodic,
    /// Spin values on `∂Λ`, in the order of [`Geometry::boundary`].
    Fixed(Vec<i8>),
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryCondition::Plus => f.write_str("plus"),
            BoundaryCondition::Minus => f.write_str("minus"),
            BoundaryCondition::Free => f.write_str("free"),
            BoundaryCondition::Periodic => f.write_str("periodic"),
            BoundaryCondition::Fixed(v) => {
                f.write_str("fixed:")?;
                for s in v {
                    f.write_str(if *s > 0 { "+" } else { "-" })?;
                }
                Ok(())
            }
        }
    }
}

impl BoundaryCondition {
    /// True when boundary spins are frozen to nonzero values.
    pub fn is_frozen(&self) -> bool {
        matches!(
            self,
            BoundaryCondition::Plus | BoundaryCondition::Minus | BoundaryCondition::Fixed(_)
        )
    }

    /// The natural default for a geometry: periodic on tori, free otherwise.
    pub fn natural(geom: &Geometry) -> Self {
        if geom.is_torus() {
            BoundaryCondition::Periodic
        } else {
            BoundaryCondition::Free
        }
    }

    fn mismatch(&self, reason: &str) -> LabError {
        LabError::BoundaryMismatch {
            bc: self.to_string(),
            reason: reason.into(),
        }
    }

    /// Boundary values `ω_b` for every `b ∈ ∂Λ` (zero for free).
    pub fn boundary_values(&self, geom: &Geometry) -> Result<Vec<i8>> {
        let nb = geom.boundary().len();
        match (self, geom.is_torus()) {
            (BoundaryCondition::Periodic, true) => Ok(Vec::new()),
            (BoundaryCondition::Periodic, false) => {
                Err(self.mismatch("periodic boundary requires a torus"))
            }
            (_, true) => Err(self.mismatch("a torus only admits the periodic boundary")),
            (BoundaryCondition::Plus, false) => Ok(vec![1; nb]),
            (BoundaryCondition::Minus, false) => Ok(vec![-1; nb]),
            (BoundaryCondition::Free, false) => Ok(vec![0; nb]),
            (BoundaryCondition::Fixed(v), false) => {
                if v.len() != nb {
                    return Err(self.mismatch(&format!(
                        "expected {nb} boundary values, got {}",
                        v.len()
                    )));
                }
                if v.iter().any(|&s| s != 1 && s != -1) {
                    return Err(self.mismatch("fixed boundary values must be ±1"));
                }
                Ok(v.clone())
            }
        }
    }
}

/// One `±1` value per site.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinConfig(pub(crate) Vec<i8>);

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(invalid("spins must be ±1"));
        }
        Ok(SpinConfig(spins))
    }

    pub fn all_plus(n: usize) -> Self {
        SpinConfig(vec![1; n])
    }

    pub fn all_minus(n: usize) -> Self {
        SpinConfig(vec![-1; n])
    }

    /// Bit `x` of `state` set means `σ_x = +1`.
    pub fn from_state(state: u64, n: usize) -> Self {
        SpinConfig((0..n).map(|x| if state >> x & 1 == 1 { 1 } else { -1 }).collect())
    }

    pub fn to_state(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0)
            .fold(0u64, |acc, (x, _)| acc | 1 << x)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.0
    }

    pub fn get(&self, x: usize) -> i8 {
        self.0[x]
    }

    pub fn flip(&mut self, x: usize) {
        self.0[x] = -self.0[x];
    }

    pub fn set(&mut self, x: usize, s: i8) {
        debug_assert!(s == 1 || s == -1);
        self.0[x] = s;
    }

    /// Pointwise order `self <= other`.
    pub fn le(&self, other: &SpinConfig) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn magnetization(&self) -> i64 {
        self.0.iter().map(|&s| s as i64).sum()
    }
}

/// A geometry paired with a validated boundary condition.
///
/// Carries the per-site external field `Σ_{b ∈ ∂Λ, b ~ x} ω_b` so local
/// fields need no boundary lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    geom: Geometry,
    bc: BoundaryCondition,
    omega: Vec<i8>,
    external: Vec<i32>,
}

impl SpinSystem {
    pub fn new(geom: Geometry, bc: BoundaryCondition) -> Result<Self> {
        let omega = bc.boundary_values(&geom)?;
        let external = (0..geom.site_count())
            .map(|x| {
                geom.boundary_contacts(x)
                    .iter()
                    .map(|&b| omega[b] as i32)
                    .sum()
            })
            .collect();
        Ok(SpinSystem {
            geom,
            bc,
            omega,
            external,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn bc(&self) -> &BoundaryCondition {
        &self.bc
    }

    pub fn site_count(&self) -> usize {
        self.geom.site_count()
    }

    pub fn omega(&self) -> &[i8] {
        &self.omega
    }

    pub fn external_field(&self, x: usize) -> i32 {
        self.external[x]
    }

    /// `Σ_{y~x} σ_y` including boundary spins.
    pub fn local_field(&self, sigma: &[i8], x: usize) -> i32 {
        self.geom
            .neighbors(x)
            .iter()
            .map(|&y| sigma[y] as i32)
            .sum::<i32>()
            + self.external[x]
    }

    /// Bound on `|local field|` over all configurations.
    pub fn max_field(&self) -> i32 {
        (0..self.site_count())
            .map(|x| {
                self.geom.neighbors(x).len() as i32
                    + self
                        .geom
                        .boundary_contacts(x)
                        .iter()
                        .map(|&b| self.omega[b].unsigned_abs() as i32)
                        .sum::<i32>()
            })
            .max()
            .unwrap_or(0)
    }

    pub fn check_config(&self, sigma: &SpinConfig) -> Result<()> {
        if sigma.len() != self.site_count() {
            return Err(invalid(format!(
                "configuration has {} spins, geometry has {} sites",
                sigma.len(),
                self.site_count()
            )));
        }
        Ok(())
    }

    /// `H(σ)`, the exponent of the Gibbs weight without `β`.
    pub fn energy(&self, sigma: &[i8]) -> i64 {
        let mut e = 0i64;
        for x in 0..self.site_count() {
            let s = sigma[x] as i64;
            for &y in self.geom.neighbors(x) {
                if x < y {
                    e += s * sigma[y] as i64;
                }
            }
            e += s * self.external[x] as i64;
        }
        e
    }
}

/// `H(σ)` for a configuration on `geom` with boundary condition `bc`.
pub fn interaction_energy(geom: &Geometry, sigma: &SpinConfig, bc: &BoundaryCondition) -> Result<f64> {
    let sys = SpinSystem::new(geom.clone(), bc.clone())?;
    sys.check_config(sigma)?;
    Ok(sys.energy(sigma.spins()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_beta_matches_closed_form() {
        let b = critical_beta_2d();
        assert!((b - (1.0 + 2f64.sqrt()).ln() / 2.0).abs() < 1e-12);
        assert!((b - 0.440_686_8).abs() < 1e-7);
    }

    #[test]
    fn energy_examples() {
        let t = Geometry::torus(2, 2).unwrap();
        let e = interaction_energy(&t, &SpinConfig::all_plus(16), &BoundaryCondition::Periodic).unwrap();
        assert_eq!(e, 32.0);

        let c = Geometry::cube(2, 1).unwrap();
        let e = interaction_energy(&c, &SpinConfig::all_plus(9), &BoundaryCondition::Plus).unwrap();
        // 12 interior bonds plus 12 boundary contacts
        assert_eq!(e, 24.0);

        let one = Geometry::cube(2, 0).unwrap();
        let e = interaction_energy(&one, &SpinConfig::all_minus(1), &BoundaryCondition::Plus).unwrap();
        assert_eq!(e, -4.0);
    }

    #[test]
    fn energy_rejects_mismatch() {
        let c = Geometry::cube(2, 1).unwrap();
        assert!(interaction_energy(&c, &SpinConfig::all_plus(4), &BoundaryCondition::Plus).is_err());
        assert!(interaction_energy(&c, &SpinConfig::all_plus(9), &BoundaryCondition::Periodic).is_err());
        let t = Geometry::torus(2, 1).unwrap();
        assert!(interaction_energy(&t, &SpinConfig::all_plus(4), &BoundaryCondition::Plus).is_err());
    }

    #[test]
    fn fixed_boundary_validation() {
        let c = Geometry::cube(2, 0).unwrap();
        assert!(SpinSystem::new(c.clone(), BoundaryCondition::Fixed(vec![1, -1, 1, 1])).is_ok());
        assert!(SpinSystem::new(c.clone(), BoundaryCondition::Fixed(vec![1, -1, 1])).is_err());
        assert!(SpinSystem::new(c, BoundaryCondition::Fixed(vec![1, 0, 1, 1])).is_err());
    }

    #[test]
    fn state_bits_roundtrip() {
        let s = SpinConfig::from_state(0b1011, 5);
        assert_eq!(s.spins(), &[1, 1, -1, 1, -1]);
        assert_eq!(s.to_state(), 0b1011);
    }
}
