//! Generators of small Glauber dynamics and their functional analysis.
//!
//! States are bit patterns (`σ_x = +1` iff bit `x` is set). Eigenproblems
//! are solved on the symmetrized generator `S = Π^{1/2} L Π^{-1/2}`, whose
//! off-diagonal entries `sqrt(c(x, σ) c(x, σ^x))` are symmetric by
//! construction.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, LabError, Result};
use crate::gibbs::{neumaier_sum, weighted_entropy, BitSystem, BoundaryCondition, ExactMeasure, SpinSystem};
use crate::glauber::{RateFamily, RateModel};
use crate::lattice::Geometry;
use crate::rng;
use crate::tolerances;

/// Largest site count for which a generator is built.
pub const GENERATOR_SITE_CAP: usize = 20;
/// Largest state count for a dense eigendecomposition.
pub const DENSE_EIGEN_CAP: usize = 1 << 12;
/// Up to this many states the dense spectrum is used by default.
pub const AUTO_DENSE_STATES: usize = 1 << 10;
/// Largest state count for the log-Sobolev search.
pub const LSI_STATE_CAP: usize = 1 << 12;
/// Largest state count for semigroup evaluation.
pub const SEMIGROUP_STATE_CAP: usize = 1 << 14;

/// Below this `Ent(F) / E[F]` the ratio `D / Ent` is dominated by rounding
/// and a candidate is discarded.
const MIN_RELATIVE_ENTROPY: f64 = 1e-12;

/// Eigenpairs of `-S`, eigenvalues ascending; columns of `vectors` are
/// orthonormal in the flat inner product.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorInvariants {
    pub max_row_sum: f64,
    pub min_off_diagonal: f64,
    pub max_reversibility_defect: f64,
    pub max_stationarity_defect: f64,
}

impl GeneratorInvariants {
    pub fn pass(&self) -> bool {
        self.max_row_sum <= tolerances::ROW_SUM
            && self.min_off_diagonal >= 0.0
            && self.max_reversibility_defect <= tolerances::DETAILED_BALANCE
            && self.max_stationarity_defect <= tolerances::STATIONARITY
    }
}

/// The full generator of a Glauber dynamics on `2^n` states together with
/// its stationary law.
#[derive(Debug)]
pub struct Generator {
    system: SpinSystem,
    model: RateModel,
    bits: BitSystem,
    n: usize,
    pi: Vec<f64>,
    sqrt_pi: Vec<f64>,
    /// Rate values indexed by `σ_x h_x + max_field`.
    table: Vec<f64>,
    /// `idx[s * n + x]` points into `table`.
    idx: Vec<u8>,
    exit: Vec<f64>,
    spectrum: OnceLock<Spectrum>,
}

/// Build the generator of `model` on `(geom, bc)`.
pub fn build_generator(geom: &Geometry, bc: &BoundaryCondition, model: &RateModel) -> Result<Generator> {
    Generator::new(SpinSystem::new(geom.clone(), bc.clone())?, model.clone())
}

impl Generator {
    pub fn new(system: SpinSystem, model: RateModel) -> Result<Self> {
        let n = system.site_count();
        if n > GENERATOR_SITE_CAP {
            return Err(LabError::CapExceeded {
                what: "generator site count",
                value: n as u64,
                cap: GENERATOR_SITE_CAP as u64,
            });
        }
        let measure = ExactMeasure::new(system.clone(), model.beta(), GENERATOR_SITE_CAP)?;
        let pi = measure.probs().to_vec();
        let bits = BitSystem::new(&system);
        let m = system.max_field();
        let table: Vec<f64> = (-m..=m).map(|p| model.rate_for(p)).collect();
        let states = 1usize << n;
        let mut idx = vec![0u8; states * n];
        idx.par_chunks_mut(n.max(1)).enumerate().for_each(|(s, row)| {
            for (x, slot) in row.iter_mut().enumerate().take(n) {
                let p = BitSystem::spin(s as u64, x) * bits.field(s as u64, x);
                *slot = (p + m) as u8;
            }
        });
        let exit = (0..states)
            .map(|s| idx[s * n..(s + 1) * n].iter().map(|&i| table[i as usize]).sum())
            .collect();
        Ok(Generator {
            sqrt_pi: pi.iter().map(|p| p.sqrt()).collect(),
            system,
            model,
            bits,
            n,
            pi,
            table,
            idx,
            exit,
            spectrum: OnceLock::new(),
        })
    }

    pub fn system(&self) -> &SpinSystem {
        &self.system
    }

    pub fn model(&self) -> &RateModel {
        &self.model
    }

    pub fn family(&self) -> RateFamily {
        self.model.family()
    }

    pub fn beta(&self) -> f64 {
        self.model.beta()
    }

    pub fn bc(&self) -> &BoundaryCondition {
        self.system.bc()
    }

    pub fn site_count(&self) -> usize {
        self.n
    }

    pub fn state_count(&self) -> usize {
        self.pi.len()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// `c(x, s)`.
    #[inline]
    pub fn rate(&self, s: usize, x: usize) -> f64 {
        self.table[self.idx[s * self.n + x] as usize]
    }

    pub fn exit_rate(&self, s: usize) -> f64 {
        self.exit[s]
    }

    /// Energy `H(s)` of a state.
    pub fn energy(&self, s: usize) -> i32 {
        self.bits.energy(s as u64)
    }

    /// The function `s ↦ σ_x(s)`.
    pub fn spin(&self, x: usize) -> Vec<f64> {
        (0..self.state_count())
            .map(|s| BitSystem::spin(s as u64, x) as f64)
            .collect()
    }

    pub fn tabulate(&self, f: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..self.state_count()).map(f).collect()
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

    /// `(L f)(s) = Σ_x c(x, s) (f(s^x) - f(s))`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        let body = |(s, o): (usize, &mut f64)| {
            let fs = f[s];
            let mut acc = 0.0;
            for x in 0..self.n {
                acc += self.rate(s, x) * (f[s ^ (1 << x)] - fs);
            }
            *o = acc;
        };
        if f.len() >= 1 << 14 {
            out.par_iter_mut().enumerate().for_each(body);
        } else {
            out.iter_mut().enumerate().for_each(body);
        }
        out
    }

    /// `(S v)(s)` for the symmetrized generator.
    pub fn apply_symmetric(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        let body = |(s, o): (usize, &mut f64)| {
            let mut acc = -self.exit[s] * v[s];
            for x in 0..self.n {
                let t = s ^ (1 << x);
                acc += (self.rate(s, x) * self.rate(t, x)).sqrt() * v[t];
            }
            *o = acc;
        };
        if v.len() >= 1 << 14 {
            out.par_iter_mut().enumerate().for_each(body);
        } else {
            out.iter_mut().enumerate().for_each(body);
        }
        out
    }

    pub fn symmetric_matrix(&self) -> DMatrix<f64> {
        let n = self.state_count();
        let mut m = DMatrix::zeros(n, n);
        for s in 0..n {
            m[(s, s)] = -self.exit[s];
            for x in 0..self.n {
                let t = s ^ (1 << x);
                m[(s, t)] = (self.rate(s, x) * self.rate(t, x)).sqrt();
            }
        }
        m
    }

    /// Row sums, signs, reversibility and stationarity of the generator matrix.
    pub fn invariants(&self) -> GeneratorInvariants {
        let states = self.state_count();
        let mut max_row_sum = 0.0f64;
        let mut min_off = f64::INFINITY;
        let mut max_rev = 0.0f64;
        let mut flux = vec![0.0; states];
        for s in 0..states {
            let mut row = -self.exit[s];
            for x in 0..self.n {
                let t = s ^ (1 << x);
                let c = self.rate(s, x);
                row += c;
                min_off = min_off.min(c);
                let a = self.pi[s] * c;
                let b = self.pi[t] * self.rate(t, x);
                let scale = a.abs().max(b.abs());
                if scale > 0.0 {
                    max_rev = max_rev.max((a - b).abs() / scale);
                }
                flux[t] += a;
            }
            flux[s] -= self.pi[s] * self.exit[s];
            max_row_sum = max_row_sum.max(row.abs());
        }
        GeneratorInvariants {
            max_row_sum,
            min_off_diagonal: if min_off.is_finite() { min_off } else { 0.0 },
            max_reversibility_defect: max_rev,
            max_stationarity_defect: flux.iter().fold(0.0, |a, v| a.max(v.abs())),
        }
    }

    pub fn expectation(&self, f: &[f64]) -> f64 {
        neumaier_sum(self.pi.iter().zip(f).map(|(p, v)| p * v))
    }

    pub fn covariance(&self, f: &[f64], g: &[f64]) -> f64 {
        let mf = self.expectation(f);
        let mg = self.expectation(g);
        neumaier_sum(
            self.pi
                .iter()
                .zip(f.iter().zip(g))
                .map(|(p, (a, b))| p * (a - mf) * (b - mg)),
        )
    }

    pub fn variance(&self, f: &[f64]) -> f64 {
        self.covariance(f, f)
    }

    /// `Ent(F) = E[F log F] - E[F] log E[F]`.
    pub fn entropy(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f)?;
        weighted_entropy(&self.pi, f)
    }

    /// `π`-weighted inner product.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        neumaier_sum(self.pi.iter().zip(f.iter().zip(g)).map(|(p, (a, b))| p * a * b))
    }

    /// `D(f) = ½ Σ_x E[c(x, σ) (∇_x f)²]`.
    pub fn dirichlet_form(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f)?;
        Ok(self.dirichlet_unchecked(f))
    }

    fn dirichlet_unchecked(&self, f: &[f64]) -> f64 {
        let terms = (0..self.state_count()).map(|s| {
            let mut acc = 0.0;
            for x in 0..self.n {
                let d = f[s ^ (1 << x)] - f[s];
                acc += self.rate(s, x) * d * d;
            }
            self.pi[s] * acc
        });
        0.5 * neumaier_sum(terms)
    }

    /// `-E[f L f]`, the operator form of the Dirichlet form.
    pub fn dirichlet_form_operator(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f)?;
        let lf = self.apply(f);
        Ok(-self.inner(f, &lf))
    }

    /// Dense spectrum of `-S`, computed once.
    pub fn spectrum(&self) -> Result<&Spectrum> {
        if let Some(s) = self.spectrum.get() {
            return Ok(s);
        }
        if self.state_count() > DENSE_EIGEN_CAP {
            return Err(LabError::CapExceeded {
                what: "dense eigensolve state count",
                value: self.state_count() as u64,
                cap: DENSE_EIGEN_CAP as u64,
            });
        }
        let neg = -self.symmetric_matrix();
        let eig = SymmetricEigen::new(neg);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(self.spectrum.get_or_init(|| Spectrum { values, vectors }))
    }

    fn use_dense(&self) -> bool {
        self.spectrum.get().is_some() || self.state_count() <= AUTO_DENSE_STATES
    }

    /// Smallest nonzero eigenvalue of `-L`.
    pub fn spectral_gap(&self) -> Result<f64> {
        if self.state_count() < 2 {
            return Err(invalid("a one-state chain has no gap"));
        }
        if self.use_dense() {
            Ok(self.spectrum()?.values[1])
        } else {
            Ok(self.gap_lanczos(600, 0)?.0)
        }
    }

    /// Eigenvector of the gap as a function on states (`Π^{-1/2} v`).
    pub fn gap_function(&self) -> Result<Vec<f64>> {
        let v: Vec<f64> = if self.use_dense() {
            self.spectrum()?.vectors.column(1).iter().copied().collect()
        } else {
            self.gap_lanczos(600, 0)?.1
        };
        Ok(v.iter().zip(&self.sqrt_pi).map(|(a, r)| a / r).collect())
    }

    fn random_orthogonal(&self, seed: u64, tag: &str) -> Vec<f64> {
        let mut r = rng::stream(seed, tag, 0);
        let mut v: Vec<f64> = (0..self.state_count()).map(|_| r.sample(StandardNormal)).collect();
        project_out(&mut v, &self.sqrt_pi);
        normalize(&mut v);
        v
    }

    /// Gap by Lanczos with full reorthogonalization on the complement of
    /// `sqrt(π)`. Returns the gap and its Ritz vector (in `S` coordinates).
    pub fn gap_lanczos(&self, max_steps: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
        let dim = self.state_count();
        if dim < 2 {
            return Err(invalid("a one-state chain has no gap"));
        }
        // memory budget of roughly 1 GiB for the basis
        let budget = ((1usize << 27) / dim).max(8);
        let m_max = max_steps.min(dim - 1).min(budget);
        let mut basis: Vec<Vec<f64>> = vec![self.random_orthogonal(seed, "lanczos")];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut best = (f64::NAN, f64::INFINITY);
        for j in 0..m_max {
            let q = &basis[j];
            let mut w: Vec<f64> = self.apply_symmetric(q).iter().map(|v| -v).collect();
            let a = dot(q, &w);
            alpha.push(a);
            for _ in 0..2 {
                project_out(&mut w, &self.sqrt_pi);
                for b in &basis {
                    let c = dot(&w, b);
                    axpy(&mut w, -c, b);
                }
            }
            let bnorm = dot(&w, &w).sqrt();
            let k = alpha.len();
            if j % 5 == 4 || j + 1 == m_max || bnorm < 1e-13 {
                let t = tridiagonal(&alpha, &beta);
                let eig = SymmetricEigen::new(t);
                let (imin, &theta) = eig
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap();
                let resid = bnorm * eig.eigenvectors[(k - 1, imin)].abs();
                best = (theta, resid);
                if resid <= 1e-11 * theta.abs().max(1.0) || bnorm < 1e-13 {
                    let y: Vec<f64> = eig.eigenvectors.column(imin).iter().copied().collect();
                    let mut v = vec![0.0; dim];
                    for (c, b) in y.iter().zip(&basis) {
                        axpy(&mut v, *c, b);
                    }
                    normalize(&mut v);
                    return Ok((theta, v));
                }
            }
            beta.push(bnorm);
            for v in &mut w {
                *v /= bnorm;
            }
            basis.push(w);
        }
        Err(LabError::Numerical(format!(
            "Lanczos did not converge in {m_max} steps (last estimate {}, residual {:.2e})",
            best.0, best.1
        )))
    }

    /// Gap by power iteration on `c I + S` restricted to the complement of
    /// `sqrt(π)`, with `c` twice the largest exit rate.
    pub fn gap_power_iteration(&self, max_steps: usize, seed: u64) -> Result<f64> {
        let c = 2.0 * self.exit.iter().copied().fold(0.0, f64::max);
        let mut v = self.random_orthogonal(seed, "power_iteration");
        let mut mu_prev = f64::NAN;
        let mut stable = 0;
        for _ in 0..max_steps {
            let sv = self.apply_symmetric(&v);
            let mut w: Vec<f64> = v.iter().zip(&sv).map(|(a, b)| c * a + b).collect();
            project_out(&mut w, &self.sqrt_pi);
            let mu = dot(&v, &w);
            normalize(&mut w);
            v = w;
            if (mu - mu_prev).abs() <= 1e-15 * c {
                stable += 1;
                if stable >= 20 {
                    return Ok(c - mu);
                }
            } else {
                stable = 0;
            }
            mu_prev = mu;
        }
        Err(LabError::Numerical(format!(
            "power iteration did not settle in {max_steps} steps"
        )))
    }

    fn check_time(t: f64) -> Result<()> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(invalid(format!("time must be finite and nonnegative, got {t}")));
        }
        Ok(())
    }

    /// `exp(t L) f`.
    pub fn semigroup_apply(&self, f: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self.semigroup_curve(f, &[t])?.pop().unwrap())
    }

    /// `exp(t L) f` for every `t` in `times`. Uses the dense spectrum when it
    /// is affordable and the uniformized series otherwise.
    pub fn semigroup_curve(&self, f: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_len(f)?;
        for &t in times {
            Self::check_time(t)?;
        }
        if self.state_count() > SEMIGROUP_STATE_CAP {
            return Err(LabError::CapExceeded {
                what: "semigroup state count",
                value: self.state_count() as u64,
                cap: SEMIGROUP_STATE_CAP as u64,
            });
        }
        if self.use_dense() {
            self.semigroup_eigen(f, times)
        } else {
            self.semigroup_uniformized(f, times)
        }
    }

    /// Semigroup through the eigendecomposition of `S`.
    pub fn semigroup_eigen(&self, f: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_len(f)?;
        let spec = self.spectrum()?;
        let g = nalgebra::DVector::from_iterator(f.len(), f.iter().zip(&self.sqrt_pi).map(|(a, r)| a * r));
        let coeff = spec.vectors.transpose() * g;
        times
            .iter()
            .map(|&t| {
                Self::check_time(t)?;
                if t == 0.0 {
                    return Ok(f.to_vec());
                }
                let scaled = nalgebra::DVector::from_iterator(
                    coeff.len(),
                    coeff.iter().zip(&spec.values).map(|(c, l)| c * (-l * t).exp()),
                );
                let h = &spec.vectors * scaled;
                Ok(h.iter().zip(&self.sqrt_pi).map(|(a, r)| a / r).collect())
            })
            .collect()
    }

    /// Semigroup as the Poisson mixture `Σ_k e^{-qt}(qt)^k/k! P^k f` with
    /// `P = I + L/q` and `q` the largest exit rate; truncation error below
    /// `1e-16 · sup |f|`.
    pub fn semigroup_uniformized(&self, f: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_len(f)?;
        let q = self.exit.iter().copied().fold(0.0, f64::max);
        let mut out: Vec<Vec<f64>> = vec![vec![0.0; f.len()]; times.len()];
        if q == 0.0 {
            return Ok(vec![f.to_vec(); times.len()]);
        }
        let lam: Vec<f64> = times.iter().map(|t| q * t).collect();
        let mut done: Vec<bool> = lam.iter().map(|&l| l == 0.0).collect();
        for (i, &l) in lam.iter().enumerate() {
            if l == 0.0 {
                out[i] = f.to_vec();
            }
        }
        let mut v = f.to_vec();
        let mut log_fact = KahanSum::default();
        let mut k = 0usize;
        while done.iter().any(|d| !d) {
            for (i, &l) in lam.iter().enumerate() {
                if done[i] {
                    continue;
                }
                let lw = -l + k as f64 * l.ln() - log_fact.value();
                let w = lw.exp();
                if w > 0.0 {
                    axpy(&mut out[i], w, &v);
                }
                if k as f64 > l {
                    let ratio = l / (k as f64 + 1.0);
                    if w / (1.0 - ratio) < 1e-17 {
                        done[i] = true;
                    }
                }
            }
            let lv = self.apply(&v);
            for (a, b) in v.iter_mut().zip(&lv) {
                *a += b / q;
            }
            k += 1;
            log_fact.add((k as f64).ln());
        }
        Ok(out)
    }

    /// `⟨f, P_t f⟩_π` on a time grid.
    pub fn time_correlation(&self, f: &[f64], times: &[f64]) -> Result<Vec<f64>> {
        let curves = self.semigroup_curve(f, times)?;
        Ok(curves.iter().map(|ft| self.inner(f, ft)).collect())
    }

    /// Smallest positive eigenvalue whose eigenvector overlaps `f`; the
    /// asymptotic decay rate of `⟨f, P_t f⟩ - E[f]²`.
    pub fn decay_rate(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f)?;
        let spec = self.spectrum()?;
        let g = nalgebra::DVector::from_iterator(f.len(), f.iter().zip(&self.sqrt_pi).map(|(a, r)| a * r));
        let coeff = spec.vectors.transpose() * g;
        let norm2 = coeff.iter().map(|c| c * c).sum::<f64>();
        spec.values
            .iter()
            .zip(coeff.iter())
            .skip(1)
            .find(|(_, c)| c.powi(2) > 1e-20 * norm2.max(1.0))
            .map(|(l, _)| *l)
            .ok_or_else(|| invalid("function is constant"))
    }

    /// `2 D(sqrt F) / Ent(F)`, or `None` when `F` is negative or has no entropy.
    pub fn lsi_ratio(&self, f: &[f64]) -> Option<f64> {
        if f.len() != self.state_count() || f.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return None;
        }
        let ent = weighted_entropy(&self.pi, f).ok()?;
        if !(ent > MIN_RELATIVE_ENTROPY * self.expectation(f)) {
            return None;
        }
        let g: Vec<f64> = f.iter().map(|v| v.sqrt()).collect();
        let r = 2.0 * self.dirichlet_unchecked(&g) / ent;
        r.is_finite().then_some(r)
    }

    /// Ratio and gradient with respect to `u = log sqrt(F)`.
    fn lsi_objective(&self, u: &[f64]) -> Option<(f64, Vec<f64>)> {
        let umax = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !umax.is_finite() {
            return None;
        }
        let g: Vec<f64> = u.iter().map(|v| (v - umax).exp()).collect();
        let f: Vec<f64> = g.iter().map(|v| v * v).collect();
        let ent = weighted_entropy(&self.pi, &f).ok()?;
        let m = self.expectation(&f);
        if !(ent > MIN_RELATIVE_ENTROPY * m) {
            return None;
        }
        let d = self.dirichlet_unchecked(&g);
        let lg = self.apply(&g);
        let ln_m = m.ln();
        let grad = (0..g.len())
            .map(|s| {
                let dd = -2.0 * self.pi[s] * lg[s];
                let de = 2.0 * g[s] * self.pi[s] * (2.0 * (u[s] - umax) - ln_m);
                g[s] * 2.0 * (dd * ent - d * de) / (ent * ent)
            })
            .collect();
        Some((2.0 * d / ent, grad))
    }
}

#[derive(Default)]
struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Remove the component along `u`, which need not be normalized.
fn project_out(v: &mut [f64], u: &[f64]) {
    let c = dot(v, u) / dot(u, u);
    axpy(v, -c, u);
}

fn tridiagonal(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    t
}

/// Knobs of the log-Sobolev search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsiSearch {
    pub restarts: usize,
    pub random_candidates: usize,
    pub max_iterations: usize,
    /// Stop refining once a round improves `γ̂` by no more than this.
    pub refine_tolerance: f64,
    pub max_refine_rounds: usize,
    pub seed: u64,
}

impl Default for LsiSearch {
    fn default() -> Self {
        LsiSearch {
            restarts: 6,
            random_candidates: 10_000,
            max_iterations: 400,
            refine_tolerance: tolerances::LSI_REFINE,
            max_refine_rounds: 6,
            seed: 0,
        }
    }
}

/// An upper estimate `γ̂` of the log-Sobolev constant with the function
/// that achieves it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LsiEstimate {
    pub gamma_hat: f64,
    /// `F*`, normalized to `E[F*] = 1`.
    pub certificate: Vec<f64>,
    /// Which candidate family produced `F*`.
    pub source: String,
    pub iterations: usize,
    pub restarts: usize,
    pub refine_rounds: usize,
    pub candidates: usize,
}

impl LsiEstimate {
    /// SHA-256 of the little-endian bytes of the certificate.
    pub fn certificate_hash(&self) -> String {
        hash_function(&self.certificate)
    }

    /// Recompute `2 D(sqrt F*) / Ent(F*)` and compare with `γ̂`.
    pub fn verify(&self, gen: &Generator) -> bool {
        match gen.lsi_ratio(&self.certificate) {
            Some(r) => (r - self.gamma_hat).abs() <= tolerances::LSI_CERTIFICATE * self.gamma_hat.max(1.0),
            None => false,
        }
    }
}

/// SHA-256 hex digest of the little-endian bytes of a function table.
pub fn hash_function(f: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in f {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

struct Best {
    ratio: f64,
    f: Vec<f64>,
    source: String,
}

impl Best {
    fn offer(&mut self, ratio: Option<f64>, f: &[f64], source: &str) -> bool {
        match ratio {
            Some(r) if r < self.ratio => {
                self.ratio = r;
                self.f = f.to_vec();
                self.source = source.into();
                true
            }
            _ => false,
        }
    }
}

/// Estimate `γ = inf_F 2 D(sqrt F) / Ent(F)` from above.
///
/// Candidates: perturbations of the constant along the gap eigenvector and
/// the spins, random positive functions, smoothed indicators, and
/// quasi-Newton descents on `log sqrt F` from several starts. Rounds of fresh
/// descents repeat until one improves `γ̂` by at most the refine tolerance.
pub fn lsi_constant(gen: &Generator, search: &LsiSearch) -> Result<LsiEstimate> {
    let states = gen.state_count();
    if states > LSI_STATE_CAP {
        return Err(LabError::CapExceeded {
            what: "log-Sobolev state count",
            value: states as u64,
            cap: LSI_STATE_CAP as u64,
        });
    }
    if states < 2 {
        return Err(invalid("a one-state chain has no entropy"));
    }
    let mut best = Best {
        ratio: f64::INFINITY,
        f: Vec::new(),
        source: String::new(),
    };
    let mut candidates = 0usize;

    // near-constant directions
    let mut directions: Vec<(String, Vec<f64>)> = vec![("gap-eigenvector".into(), gen.gap_function()?)];
    for x in 0..gen.site_count() {
        directions.push((format!("spin-{x}"), gen.spin(x)));
    }
    for (name, v) in &directions {
        let sup = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if sup == 0.0 {
            continue;
        }
        for eps in [1e-4, -1e-4] {
            let f: Vec<f64> = v.iter().map(|a| (1.0 + eps * a / sup).powi(2)).collect();
            candidates += 1;
            best.offer(gen.lsi_ratio(&f), &f, &format!("near-constant:{name}"));
        }
    }

    // random positive functions
    let random: Vec<(f64, usize)> = (0..search.random_candidates)
        .into_par_iter()
        .filter_map(|i| {
            let mut r = rng::stream(search.seed, "lsi_random", i as u64);
            let f: Vec<f64> = match i % 5 {
                4 => (0..states).map(|_| r.random::<f64>() + 1e-12).collect(),
                k => {
                    let s = [0.05, 0.3, 1.0, 3.0][k];
                    (0..states)
                        .map(|_| (s * r.sample::<f64, _>(StandardNormal)).exp())
                        .collect()
                }
            };
            gen.lsi_ratio(&f).map(|v| (v, i))
        })
        .collect();
    candidates += search.random_candidates;
    if let Some(&(v, i)) = random.iter().min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))) {
        if v < best.ratio {
            // regenerate the winner deterministically
            let mut r = rng::stream(search.seed, "lsi_random", i as u64);
            let f: Vec<f64> = match i % 5 {
                4 => (0..states).map(|_| r.random::<f64>() + 1e-12).collect(),
                k => {
                    let s = [0.05, 0.3, 1.0, 3.0][k];
                    (0..states)
                        .map(|_| (s * r.sample::<f64, _>(StandardNormal)).exp())
                        .collect()
                }
            };
            best.offer(gen.lsi_ratio(&f), &f, "random");
        }
    }

    // smoothed indicators
    let mut sets: Vec<Vec<bool>> = Vec::new();
    for x in 0..gen.site_count() {
        sets.push((0..states).map(|s| s >> x & 1 == 1).collect());
    }
    let mag = |s: usize| 2 * (s.count_ones() as i64) - gen.site_count() as i64;
    sets.push((0..states).map(|s| mag(s) > 0).collect());
    sets.push((0..states).map(|s| mag(s) >= 0).collect());
    let v = &directions[0].1;
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    for k in 1..10 {
        let thr = sorted[k * states / 10];
        sets.push(v.iter().map(|a| *a > thr).collect());
    }
    if states <= AUTO_DENSE_STATES {
        for s0 in 0..states {
            sets.push((0..states).map(|s| s == s0).collect());
        }
    }
    for set in &sets {
        for eps in [1e-3, 1e-2, 0.1, 1.0, 10.0] {
            let f: Vec<f64> = set.iter().map(|&b| if b { 1.0 + eps } else { eps }).collect();
            candidates += 1;
            best.offer(gen.lsi_ratio(&f), &f, "indicator");
        }
    }

    if !best.ratio.is_finite() {
        return Err(LabError::Numerical("no candidate with positive entropy".into()));
    }

    // descents: from the best candidate, then random starts, round by round
    let mut iterations = 0usize;
    let mut restarts = 0usize;
    let mut rounds = 0usize;
    let mut starts: Vec<Vec<f64>> = vec![best.f.iter().map(|v| 0.5 * v.ln()).collect()];
    loop {
        let before = best.ratio;
        for k in 0..search.restarts {
            let mut r = rng::stream(search.seed, "lsi_restart", (rounds * search.restarts + k) as u64);
            let s = [0.1, 0.5, 1.0, 2.0][k % 4];
            starts.push((0..states).map(|_| s * r.sample::<f64, _>(StandardNormal)).collect());
        }
        let results: Vec<(Vec<f64>, usize)> = starts
            .par_iter()
            .map(|u0| lbfgs(|u| gen.lsi_objective(u), u0.clone(), search.max_iterations))
            .collect();
        for (u, it) in results {
            iterations += it;
            restarts += 1;
            candidates += 1;
            let umax = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let f: Vec<f64> = u.iter().map(|v| (2.0 * (v - umax)).exp()).collect();
            best.offer(gen.lsi_ratio(&f), &f, "descent");
        }
        rounds += 1;
        let improved = before - best.ratio;
        if improved <= search.refine_tolerance || rounds >= search.max_refine_rounds {
            break;
        }
        starts = vec![best.f.iter().map(|v| 0.5 * v.ln()).collect()];
    }

    let m = gen.expectation(&best.f);
    let certificate: Vec<f64> = best.f.iter().map(|v| v / m).collect();
    let gamma_hat = gen
        .lsi_ratio(&certificate)
        .ok_or_else(|| LabError::Numerical("certificate lost its entropy".into()))?;
    Ok(LsiEstimate {
        gamma_hat,
        certificate,
        source: best.source,
        iterations,
        restarts,
        refine_rounds: rounds,
        candidates,
    })
}

/// Limited-memory BFGS with Armijo backtracking. `eval` returns `None`
/// outside the domain. Returns the final point and the iteration count.
fn lbfgs(eval: impl Fn(&[f64]) -> Option<(f64, Vec<f64>)>, x0: Vec<f64>, max_iter: usize) -> (Vec<f64>, usize) {
    const MEMORY: usize = 8;
    let Some((mut fx, mut g)) = eval(&x0) else {
        return (x0, 0);
    };
    let mut x = x0;
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut flat = 0;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            axpy(&mut d, -a, y);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.last() {
            let gamma = dot(s, y) / dot(y, y);
            for v in &mut d {
                *v *= gamma;
            }
        } else {
            let gn = dot(&g, &g).sqrt();
            if gn == 0.0 {
                break;
            }
            for v in &mut d {
                *v /= gn;
            }
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            axpy(&mut d, a - b, s);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            let gn = dot(&g, &g).sqrt();
            if gn == 0.0 {
                break;
            }
            for v in &mut d {
                *v /= gn;
            }
            slope = -gn;
        }
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-20 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            if let Some((fn_, gn)) = eval(&xn) {
                if fn_ <= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            hist.push((s, y, 1.0 / sy));
            if hist.len() > MEMORY {
                hist.remove(0);
            }
        }
        if fx - fnew <= 1e-15 * fx.abs() {
            flat += 1;
        } else {
            flat = 0;
        }
        x = xn;
        fx = fnew;
        g = gnew;
        if flat >= 5 {
            break;
        }
    }
    (x, it)
}

/// Summary line of a spectral computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub n: usize,
    pub bc: String,
    pub beta: f64,
    pub family: RateFamily,
    pub gap: f64,
    pub gamma_hat: Option<f64>,
    pub certificate_hash: Option<String>,
}

pub fn spectral_report(gen: &Generator, lsi: Option<&LsiEstimate>) -> Result<SpectralReport> {
    Ok(SpectralReport {
        n: gen.site_count(),
        bc: gen.bc().to_string(),
        beta: gen.beta(),
        family: gen.family(),
        gap: gen.spectral_gap()?,
        gamma_hat: lsi.map(|l| l.gamma_hat),
        certificate_hash: lsi.map(|l| l.certificate_hash()),
    })
}
