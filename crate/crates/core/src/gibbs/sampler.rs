//! Equilibrium sampling by Wolff cluster moves and heat-bath sweeps.
//!
//! With frozen boundary spins the cluster is grown through boundary bonds as
//! well; a cluster that reaches a frozen spin is left unflipped.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SpinConfig, SpinSystem};
use crate::error::{invalid, Result};
use crate::rng::{self, LabRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerAlgorithm {
    /// A fixed number of Wolff cluster moves, then one heat-bath sweep.
    Wolff,
    HeatBath,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SamplerDiagnostics {
    pub cluster_moves: u64,
    pub rejected_clusters: u64,
    pub cluster_volume: u64,
    pub sweeps: u64,
}

impl SamplerDiagnostics {
    pub fn mean_cluster_size(&self) -> f64 {
        if self.cluster_moves == 0 {
            0.0
        } else {
            self.cluster_volume as f64 / self.cluster_moves as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumSampler {
    system: SpinSystem,
    beta: f64,
    algorithm: SamplerAlgorithm,
    master_seed: u64,
    replica: u64,
    rng: LabRng,
    sigma: Vec<i8>,
    /// Heat-bath probability of `+1` indexed by `field + max_field`.
    plus_prob: Vec<f64>,
    max_field: i32,
    add_prob: f64,
    stamp: Vec<u32>,
    generation: u32,
    stack: Vec<usize>,
    /// Cluster moves per step once calibrated.
    moves_per_step: Option<usize>,
    diagnostics: SamplerDiagnostics,
}

impl EquilibriumSampler {
    /// A sampler whose stream is derived from `(master_seed, "equilibrium", replica)`.
    /// The chain starts from a uniformly random configuration.
    pub fn new(
        system: SpinSystem,
        beta: f64,
        algorithm: SamplerAlgorithm,
        master_seed: u64,
        replica: u64,
    ) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(invalid(format!("beta must be finite and nonnegative, got {beta}")));
        }
        let n = system.site_count();
        if n == 0 {
            return Err(invalid("empty geometry"));
        }
        let mut rng = rng::stream(master_seed, "equilibrium", replica);
        let sigma = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let max_field = system.max_field();
        let plus_prob = (-max_field..=max_field)
            .map(|h| 1.0 / (1.0 + (-2.0 * beta * h as f64).exp()))
            .collect();
        Ok(EquilibriumSampler {
            system,
            beta,
            algorithm,
            master_seed,
            replica,
            rng,
            sigma,
            plus_prob,
            max_field,
            add_prob: -(-2.0 * beta).exp_m1(),
            stamp: vec![0; n],
            generation: 0,
            stack: Vec::new(),
            moves_per_step: None,
            diagnostics: SamplerDiagnostics::default(),
        })
    }

    pub fn system(&self) -> &SpinSystem {
        &self.system
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn algorithm(&self) -> SamplerAlgorithm {
        self.algorithm
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn replica(&self) -> u64 {
        self.replica
    }

    pub fn diagnostics(&self) -> SamplerDiagnostics {
        self.diagnostics
    }

    pub fn spins(&self) -> &[i8] {
        &self.sigma
    }

    pub fn config(&self) -> SpinConfig {
        SpinConfig(self.sigma.clone())
    }

    /// Heat-bath probability that site `x` is `+1` given its current neighbourhood.
    pub fn conditional_plus(&self, x: usize) -> f64 {
        let h = self.system.local_field(&self.sigma, x);
        self.plus_prob[(h + self.max_field) as usize]
    }

    pub fn heat_bath_sweep(&mut self) {
        for x in 0..self.sigma.len() {
            let p = self.conditional_plus(x);
            self.sigma[x] = if self.rng.random::<f64>() < p { 1 } else { -1 };
        }
        self.diagnostics.sweeps += 1;
    }

    /// One Wolff move; returns the size of the grown cluster.
    pub fn wolff_move(&mut self) -> usize {
        let n = self.sigma.len();
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.fill(0);
            self.generation = 1;
        }
        let gen = self.generation;
        let seed = self.rng.random_range(0..n);
        let spin = self.sigma[seed];
        self.stack.clear();
        self.stack.push(seed);
        self.stamp[seed] = gen;
        let mut cluster = vec![seed];
        let mut frozen = false;
        let geom = self.system.geometry();
        let omega = self.system.omega();
        'grow: while let Some(x) = self.stack.pop() {
            for &b in geom.boundary_contacts(x) {
                if omega[b] == spin && self.rng.random::<f64>() < self.add_prob {
                    frozen = true;
                    break 'grow;
                }
            }
            for &y in geom.neighbors(x) {
                if self.stamp[y] != gen
                    && self.sigma[y] == spin
                    && self.rng.random::<f64>() < self.add_prob
                {
                    self.stamp[y] = gen;
                    self.stack.push(y);
                    cluster.push(y);
                }
            }
        }
        self.diagnostics.cluster_moves += 1;
        self.diagnostics.cluster_volume += cluster.len() as u64;
        if frozen {
            self.diagnostics.rejected_clusters += 1;
        } else {
            for &x in &cluster {
                self.sigma[x] = -spin;
            }
        }
        cluster.len()
    }

    /// Cluster moves per step, or `None` while still calibrating.
    pub fn moves_per_step(&self) -> Option<usize> {
        self.moves_per_step
    }

    /// One unit of decorrelation: for Wolff, a fixed number of cluster moves
    /// followed by a heat-bath sweep; for heat-bath, one sweep.
    ///
    /// Before calibration a Wolff step keeps growing clusters until their
    /// volume reaches the site count. That stopping rule depends on the state
    /// and does not preserve the measure, so it is only used during
    /// at the start of [`equilibrate`](Self::equilibrate), which then freezes
    /// the move count at `ceil(n / mean cluster size)`.
    pub fn step(&mut self) {
        if self.beta == 0.0 {
            for s in &mut self.sigma {
                *s = if self.rng.random::<bool>() { 1 } else { -1 };
            }
            return;
        }
        match self.algorithm {
            SamplerAlgorithm::HeatBath => self.heat_bath_sweep(),
            SamplerAlgorithm::Wolff => {
                let n = self.sigma.len();
                match self.moves_per_step {
                    Some(k) => {
                        for _ in 0..k {
                            self.wolff_move();
                        }
                    }
                    None => {
                        let mut volume = 0;
                        while volume < n {
                            volume += self.wolff_move();
                        }
                    }
                }
                self.heat_bath_sweep();
            }
        }
    }

    /// Run `steps` burn-in steps. For Wolff the first quarter calibrates the
    /// move count and the rest run the fixed, measure-preserving kernel.
    pub fn equilibrate(&mut self, steps: usize) {
        let warm = if self.moves_per_step.is_none() { steps.div_ceil(4) } else { 0 };
        for _ in 0..warm {
            self.step();
        }
        self.calibrate();
        for _ in warm..steps {
            self.step();
        }
    }

    fn calibrate(&mut self) {
        if self.moves_per_step.is_some() || self.algorithm != SamplerAlgorithm::Wolff {
            return;
        }
        let n = self.sigma.len() as f64;
        let mean = self.diagnostics.mean_cluster_size();
        self.moves_per_step = Some(if mean > 0.0 { (n / mean).ceil().max(1.0) as usize } else { 1 });
    }

    /// Advance `steps_between` steps and return the configuration.
    pub fn draw(&mut self, steps_between: usize) -> SpinConfig {
        self.calibrate();
        for _ in 0..steps_between.max(1) {
            self.step();
        }
        self.config()
    }
}

/// Draw `count` configurations after `burn_in` steps, `steps_between` apart.
pub fn sample_equilibrium(
    sampler: &mut EquilibriumSampler,
    count: usize,
    burn_in: usize,
    steps_between: usize,
) -> Vec<SpinConfig> {
    sampler.equilibrate(burn_in);
    (0..count).map(|_| sampler.draw(steps_between)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::{critical_beta_2d, enumerate_measure, BoundaryCondition};
    use crate::lattice::Geometry;

    #[test]
    fn reproducible_from_master_seed() {
        let sys = SpinSystem::new(Geometry::torus(2, 2).unwrap(), BoundaryCondition::Periodic).unwrap();
        let mut a = EquilibriumSampler::new(sys.clone(), 0.44, SamplerAlgorithm::Wolff, 11, 3).unwrap();
        let mut b = EquilibriumSampler::new(sys.clone(), 0.44, SamplerAlgorithm::Wolff, 11, 3).unwrap();
        let mut c = EquilibriumSampler::new(sys, 0.44, SamplerAlgorithm::Wolff, 11, 4).unwrap();
        let xa = sample_equilibrium(&mut a, 20, 5, 1);
        let xb = sample_equilibrium(&mut b, 20, 5, 1);
        let xc = sample_equilibrium(&mut c, 20, 5, 1);
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn frozen_boundary_is_respected_and_marginal_matches() {
        // single spin under plus boundary: every cluster touches the boundary
        // with probability 1 - (1-p)^4, so flips are rare but allowed
        let g = Geometry::cube(2, 0).unwrap();
        let b = critical_beta_2d();
        let sys = SpinSystem::new(g.clone(), BoundaryCondition::Plus).unwrap();
        let mut s = EquilibriumSampler::new(sys, b, SamplerAlgorithm::Wolff, 5, 0).unwrap();
        let draws = sample_equilibrium(&mut s, 20_000, 10, 1);
        let mean = draws.iter().map(|c| c.get(0) as f64).sum::<f64>() / draws.len() as f64;
        let exact = enumerate_measure(&g, &BoundaryCondition::Plus, b).unwrap().mean_spin(0);
        let se = ((1.0 - exact * exact) / draws.len() as f64).sqrt();
        assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact}");
        assert!(s.diagnostics().rejected_clusters > 0);
    }

    #[test]
    fn beta_zero_draws_are_uniform() {
        let sys = SpinSystem::new(Geometry::torus(2, 2).unwrap(), BoundaryCondition::Periodic).unwrap();
        let mut s = EquilibriumSampler::new(sys, 0.0, SamplerAlgorithm::Wolff, 1, 0).unwrap();
        let draws = sample_equilibrium(&mut s, 10_000, 0, 1);
        let frac = draws.iter().filter(|c| c.get(0) == 1).count() as f64 / 1e4;
        assert!((frac - 0.5).abs() < 3.0 * 0.005);
    }
}
