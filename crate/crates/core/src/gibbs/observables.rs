use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    enumerate_measure, BoundaryCondition, EquilibriumSampler, SamplerAlgorithm, SpinSystem,
};
use crate::error::{invalid, LabError, Result};
use crate::lattice::{Geometry, GeometrySpec};
use crate::rng;

/// Monte Carlo effort: independent chains, each burned in and then sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McBudget {
    pub chains: usize,
    pub burn_in: usize,
    pub draws: usize,
    pub steps_between: usize,
    pub seed: u64,
    pub algorithm: SamplerAlgorithm,
    /// Fail with [`LabError::Budget`] when the stderr ends up larger.
    pub target_stderr: Option<f64>,
}

impl McBudget {
    pub fn new(chains: usize, draws: usize, seed: u64) -> Self {
        McBudget {
            chains,
            burn_in: 200,
            draws,
            steps_between: 1,
            seed,
            algorithm: SamplerAlgorithm::Wolff,
            target_stderr: None,
        }
    }

    pub fn samples(&self) -> usize {
        self.chains * self.draws
    }

    fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(LabError::Budget("at least two chains are needed for a stderr".into()));
        }
        if self.draws == 0 {
            return Err(LabError::Budget("draws must be positive".into()));
        }
        Ok(())
    }

    fn check_target(&self, stderr: f64) -> Result<()> {
        match self.target_stderr {
            Some(t) if stderr > t => Err(LabError::Budget(format!(
                "stderr {stderr:.3e} exceeds requested {t:.3e}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum Method {
    Exact,
    Mc(McBudget),
}

/// One line of an observables JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub observable: String,
    pub geometry: GeometrySpec,
    pub bc: String,
    pub beta: f64,
    pub value: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub seed: Option<u64>,
}

/// Mean and standard error of per-chain estimates.
pub(crate) fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Run independent chains and return, per chain, the average of `observe`
/// over its draws. Chains run in parallel; output order is the chain index.
pub(crate) fn chain_averages<F>(
    system: &SpinSystem,
    beta: f64,
    budget: &McBudget,
    tag: &str,
    width: usize,
    observe: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&EquilibriumSampler, &mut [f64]) + Sync,
{
    budget.validate()?;
    let master = rng::derive_u64(budget.seed, tag, 0);
    (0..budget.chains)
        .into_par_iter()
        .map(|c| {
            let mut s =
                EquilibriumSampler::new(system.clone(), beta, budget.algorithm, master, c as u64)?;
            s.equilibrate(budget.burn_in);
            let mut acc = vec![0.0; width];
            let mut buf = vec![0.0; width];
            for _ in 0..budget.draws {
                for _ in 0..budget.steps_between.max(1) {
                    s.step();
                }
                observe(&s, &mut buf);
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += b;
                }
            }
            for a in &mut acc {
                *a /= budget.draws as f64;
            }
            Ok(acc)
        })
        .collect()
}

/// `⟨σ_0⟩⁺` on `Λ_L` at inverse temperature `beta`.
///
/// The Monte Carlo estimator averages `tanh(β h_0)`, the conditional mean
/// of the centre spin given its neighbours.
pub fn magnetization_plus(l: usize, d: usize, method: &Method, beta: f64) -> Result<(f64, f64)> {
    let g = Geometry::cube(d, l)?;
    let origin = g.origin();
    magnetization_plus_at(&g, origin, method, beta)
}

/// `⟨σ_x⟩⁺` for an arbitrary site of a cube.
pub fn magnetization_plus_at(
    geom: &Geometry,
    x: usize,
    method: &Method,
    beta: f64,
) -> Result<(f64, f64)> {
    if x >= geom.site_count() {
        return Err(invalid("site out of range"));
    }
    match method {
        Method::Exact => {
            let m = enumerate_measure(geom, &BoundaryCondition::Plus, beta)?;
            Ok((m.mean_spin(x), 0.0))
        }
        Method::Mc(budget) => {
            let sys = SpinSystem::new(geom.clone(), BoundaryCondition::Plus)?;
            let per_chain = chain_averages(&sys, beta, budget, "magnetization_plus", 1, |s, out| {
                out[0] = 2.0 * s.conditional_plus(x) - 1.0;
            })?;
            let v: Vec<f64> = per_chain.iter().map(|c| c[0]).collect();
            let (m, se) = mean_stderr(&v);
            budget.check_target(se)?;
            Ok((m, se))
        }
    }
}

/// `⟨σ_x σ_y⟩` under `(geom, bc)`.
pub fn two_point(
    geom: &Geometry,
    bc: &BoundaryCondition,
    x: usize,
    y: usize,
    method: &Method,
    beta: f64,
) -> Result<(f64, f64)> {
    let n = geom.site_count();
    if x >= n || y >= n {
        return Err(invalid("site out of range"));
    }
    // validates the pairing even on the shortcut paths
    let sys = SpinSystem::new(geom.clone(), bc.clone())?;
    if x == y {
        return Ok((1.0, 0.0));
    }
    if beta == 0.0 {
        return Ok((0.0, 0.0));
    }
    match method {
        Method::Exact => {
            let m = enumerate_measure(geom, bc, beta)?;
            Ok((m.two_point(x, y), 0.0))
        }
        Method::Mc(budget) => {
            let per_chain = chain_averages(&sys, beta, budget, "two_point", 1, |s, out| {
                let sp = s.spins();
                out[0] = (sp[x] * sp[y]) as f64;
            })?;
            let v: Vec<f64> = per_chain.iter().map(|c| c[0]).collect();
            let (m, se) = mean_stderr(&v);
            budget.check_target(se)?;
            Ok((m, se))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::critical_beta_2d;

    #[test]
    fn exact_plus_magnetization_single_site() {
        let b = critical_beta_2d();
        let (v, se) = magnetization_plus(0, 2, &Method::Exact, b).unwrap();
        assert!((v - (4.0 * b).tanh()).abs() < 1e-14);
        assert_eq!(se, 0.0);
        let (v0, _) = magnetization_plus(0, 2, &Method::Exact, 0.0).unwrap();
        assert_eq!(v0, 0.0);
    }

    #[test]
    fn two_point_trivial_cases() {
        let g = Geometry::torus(2, 2).unwrap();
        let bc = BoundaryCondition::Periodic;
        assert_eq!(two_point(&g, &bc, 3, 3, &Method::Exact, 0.4).unwrap(), (1.0, 0.0));
        assert_eq!(two_point(&g, &bc, 0, 5, &Method::Exact, 0.0).unwrap(), (0.0, 0.0));
        assert!(two_point(&g, &BoundaryCondition::Plus, 0, 1, &Method::Exact, 0.4).is_err());
    }

    #[test]
    fn budget_errors() {
        let b = McBudget::new(1, 10, 0);
        assert!(matches!(
            magnetization_plus(1, 2, &Method::Mc(b), 0.4),
            Err(LabError::Budget(_))
        ));
        let mut b = McBudget::new(2, 10, 0);
        b.target_stderr = Some(1e-9);
        assert!(matches!(
            magnetization_plus(1, 2, &Method::Mc(b), 0.4),
            Err(LabError::Budget(_))
        ));
    }
}
