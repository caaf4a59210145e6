//! Scaling measurements: autocorrelation decay, the one-arm magnetization,
//! log-Sobolev scaling on tiny systems, and the deterministic shell sum.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::gibbs::{
    chain_averages, enumerate_measure, magnetization_plus, mean_stderr, neumaier_sum, BoundaryCondition,
    EquilibriumSampler, McBudget, Method, SamplerAlgorithm, SpinSystem,
};
use crate::glauber::{CtSimulator, RateFamily, RateModel};
use crate::lattice::Geometry;
use crate::rng;
use crate::tolerances;
use crate::spectral::{lsi_constant, Generator, LsiSearch, AUTO_DENSE_STATES, LSI_STATE_CAP};

/// `α = (2δ ∧ 1) / (2η)`.
pub fn alpha_from_assumptions(delta: f64, eta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1], got {delta}")));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    Ok((2.0 * delta).min(1.0) / (2.0 * eta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub window: (f64, f64),
    pub points: usize,
    pub exponent: f64,
    pub exponent_stderr: f64,
    /// `log C` in `value ≈ C · abscissa^exponent`.
    pub log_prefactor: f64,
    pub reduced_chi2: f64,
    pub bootstrap_samples: usize,
    pub resampling: Resampling,
    pub seed: u64,
}

/// How the exponent stderr was bootstrapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    /// Gaussian redraws of each value with its stderr.
    Parametric,
    /// Redraws of the fit residuals.
    Residual,
    /// Whole replicas drawn with replacement, keeping the time correlation
    /// along each trajectory.
    Replica,
}

/// Points `(abscissa, value, stderr)` with an optional power-law fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSeries {
    pub label: String,
    pub abscissae: Vec<f64>,
    pub values: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub fit: Option<PowerLawFit>,
}

impl ScalingSeries {
    pub fn new(label: &str, abscissae: Vec<f64>, values: Vec<f64>, stderrs: Vec<f64>) -> Result<Self> {
        if abscissae.len() != values.len() || values.len() != stderrs.len() {
            return Err(invalid("series columns differ in length"));
        }
        if abscissae.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("abscissae must be strictly increasing"));
        }
        if stderrs.iter().any(|s| !(*s >= 0.0)) {
            return Err(invalid("standard errors must be nonnegative"));
        }
        Ok(ScalingSeries {
            label: label.into(),
            abscissae,
            values,
            stderrs,
            fit: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Every value is at least `-k` standard errors.
    pub fn nonnegative_within(&self, k: f64) -> bool {
        self.values.iter().zip(&self.stderrs).all(|(v, s)| *v >= -k * s)
    }

    /// No value exceeds its predecessor by more than `k` combined standard
    /// errors.
    pub fn nonincreasing_within(&self, k: f64) -> bool {
        (1..self.len()).all(|i| {
            let combined = (self.stderrs[i].powi(2) + self.stderrs[i - 1].powi(2)).sqrt();
            self.values[i] <= self.values[i - 1] + k * combined
        })
    }

    /// One JSON object per point.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            let row = serde_json::json!({
                "series": self.label,
                "abscissa": self.abscissae[i],
                "value": self.values[i],
                "stderr": self.stderrs[i],
            });
            out.push_str(&row.to_string());
            out.push('\n');
        }
        out
    }

    /// CSV with columns `abscissa,value,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("abscissa,value,stderr\n");
        for i in 0..self.len() {
            let _ = writeln!(out, "{},{},{}", self.abscissae[i], self.values[i], self.stderrs[i]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { bootstrap: 1000, seed: 0 }
    }
}

/// Weighted least squares of `ln value` on `ln abscissa`, returning
/// `(intercept, slope, chi2)`.
fn wls(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let sw = neumaier_sum(w.iter().copied());
    let sx = neumaier_sum(w.iter().zip(x).map(|(a, b)| a * b));
    let sy = neumaier_sum(w.iter().zip(y).map(|(a, b)| a * b));
    let mx = sx / sw;
    let my = sy / sw;
    let sxx = neumaier_sum(w.iter().zip(x).map(|(a, b)| a * (b - mx).powi(2)));
    let sxy = neumaier_sum(w.iter().zip(x.iter().zip(y)).map(|(a, (b, c))| a * (b - mx) * (c - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let chi2 = neumaier_sum(
        w.iter()
            .zip(x.iter().zip(y))
            .map(|(a, (b, c))| a * (c - intercept - slope * b).powi(2)),
    );
    (intercept, slope, chi2)
}

/// Fit `value ≈ C · abscissa^exponent` on the points with abscissa in
/// `window` (inclusive).
///
/// Weights are `(value / stderr)²`; with no error bars the fit is unweighted.
/// The exponent stderr is the spread of a bootstrap with a fixed seed:
/// parametric (Gaussian values with the given stderr) when error bars exist,
/// residual resampling otherwise. Windows containing a value below three
/// times its stderr are refused because the log transform is biased there.
pub fn fit_power_law(series: &ScalingSeries, window: (f64, f64), opts: &FitOptions) -> Result<ScalingSeries> {
    let idx: Vec<usize> = (0..series.len())
        .filter(|&i| series.abscissae[i] >= window.0 && series.abscissae[i] <= window.1)
        .collect();
    if idx.len() < 3 {
        return Err(LabError::Fit(format!("need at least 3 points in the window, have {}", idx.len())));
    }
    for &i in &idx {
        let (a, v, s) = (series.abscissae[i], series.values[i], series.stderrs[i]);
        if !(a > 0.0) || !(v > 0.0) {
            return Err(LabError::Fit(format!("nonpositive point ({a}, {v}) in the window")));
        }
        if v < 3.0 * s {
            return Err(LabError::Fit(format!("value {v} at {a} is below 3 stderr ({s})")));
        }
    }
    let x: Vec<f64> = idx.iter().map(|&i| series.abscissae[i].ln()).collect();
    let y: Vec<f64> = idx.iter().map(|&i| series.values[i].ln()).collect();
    let sy: Vec<f64> = idx.iter().map(|&i| series.stderrs[i] / series.values[i]).collect();
    let weighted = sy.iter().all(|s| *s > 0.0);
    let w: Vec<f64> = if weighted { sy.iter().map(|s| 1.0 / (s * s)).collect() } else { vec![1.0; idx.len()] };
    let (a, b, chi2) = wls(&x, &y, &w);
    let dof = (idx.len() - 2) as f64;
    let reduced_chi2 = if dof > 0.0 { chi2 / dof } else { 0.0 };

    let fitted: Vec<f64> = x.iter().map(|xi| a + b * xi).collect();
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(yi, fi)| yi - fi).collect();
    let mut r = rng::stream(opts.seed, "fit_power_law", 0);
    let mut slopes = Vec::with_capacity(opts.bootstrap);
    for _ in 0..opts.bootstrap {
        let yb: Vec<f64> = if weighted {
            idx.iter()
                .zip(&fitted)
                .map(|(&i, fi)| {
                    let v = fi.exp() + series.stderrs[i] * r.sample::<f64, _>(StandardNormal);
                    v.max(f64::MIN_POSITIVE).ln()
                })
                .collect()
        } else {
            fitted.iter().map(|fi| fi + resid[r.random_range(0..resid.len())]).collect()
        };
        slopes.push(wls(&x, &yb, &w).1);
    }
    let exponent_stderr = if slopes.len() >= 2 { mean_stderr(&slopes).1 * (slopes.len() as f64).sqrt() } else { 0.0 };
    let mut out = series.clone();
    out.fit = Some(PowerLawFit {
        // clipped to the points used, so open-ended windows serialize
        window: (series.abscissae[idx[0]], series.abscissae[idx[idx.len() - 1]]),
        points: idx.len(),
        exponent: b,
        exponent_stderr,
        log_prefactor: a,
        reduced_chi2,
        bootstrap_samples: opts.bootstrap,
        resampling: if weighted { Resampling::Parametric } else { Resampling::Residual },
        seed: opts.seed,
    });
    Ok(out)
}

/// Geometric grid `t_0 ρ^k` for `k = 0..` up to and including `t_max`,
/// preceded by `t = 0`.
pub fn geometric_time_grid(t0: f64, ratio: f64, t_max: f64) -> Result<Vec<f64>> {
    if !(t0 > 0.0 && ratio > 1.0 && t_max >= t0) {
        return Err(invalid("time grid needs t0 > 0, ratio > 1 and t_max >= t0"));
    }
    let mut v = vec![0.0];
    let mut t = t0;
    while t <= t_max * (1.0 + 1e-12) {
        v.push(t);
        t *= ratio;
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrConfig {
    /// Torus sides.
    pub sides: Vec<usize>,
    pub family: RateFamily,
    pub beta: f64,
    pub times: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    /// Equilibrium sampler steps before each replica starts.
    pub burn_in: usize,
}

impl AutocorrConfig {
    /// Square or cubic torus `𝕋_L` of side `2L` with default burn-in.
    pub fn torus(d: usize, l: usize, family: RateFamily, beta: f64, times: Vec<f64>, replicas: usize, seed: u64) -> Self {
        AutocorrConfig {
            sides: vec![2 * l; d],
            family,
            beta,
            times,
            replicas,
            seed,
            burn_in: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrEstimate {
    pub config: AutocorrConfig,
    pub values: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Cluster moves that hit no frozen spin, over all replicas.
    pub mean_cluster_size: f64,
    /// Per-replica curves, kept for resampling and not serialized.
    #[serde(skip)]
    pub replica_curves: Vec<Vec<f64>>,
}

impl AutocorrEstimate {
    pub fn series(&self) -> Result<ScalingSeries> {
        ScalingSeries::new("autocorrelation", self.config.times.clone(), self.values.clone(), self.stderrs.clone())
    }
}

/// Estimate `⟨σ_0, P_t σ_0⟩` on a torus.
///
/// Each replica draws `σ(0)` with the Wolff sampler, runs the uniformized
/// dynamics, and records the site average `|𝕋|⁻¹ Σ_x σ_x(0) σ_x(t)`, which
/// has the same mean by translation invariance. Error bars are the spread
/// across independent replicas.
pub fn autocorrelation_mc(cfg: &AutocorrConfig) -> Result<AutocorrEstimate> {
    if cfg.replicas < 2 {
        return Err(LabError::Budget("replicas >= 2 required for stderr".into()));
    }
    if cfg.times.is_empty() || cfg.times[0] < 0.0 || cfg.times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("times must be nonnegative and strictly increasing"));
    }
    let geom = Geometry::periodic_box(&cfg.sides)?;
    let sys = SpinSystem::new(geom, BoundaryCondition::Periodic)?;
    let model = RateModel::for_system(cfg.family, cfg.beta, &sys)?;
    let master = rng::derive_u64(cfg.seed, "autocorr_equilibrium", 0);
    let n = sys.site_count();
    let per_replica: Vec<(Vec<f64>, f64)> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let mut eq = EquilibriumSampler::new(sys.clone(), cfg.beta, SamplerAlgorithm::Wolff, master, r as u64)?;
            eq.equilibrate(cfg.burn_in);
            let start = eq.config();
            let mut sim = CtSimulator::new(&model, &sys, &start, rng::stream(cfg.seed, "autocorr_dynamics", r as u64));
            let curve = cfg
                .times
                .iter()
                .map(|&t| {
                    sim.run_until(t, |_| {});
                    let overlap: i64 = start
                        .spins()
                        .iter()
                        .zip(sim.spins())
                        .map(|(a, b)| (a * b) as i64)
                        .sum();
                    overlap as f64 / n as f64
                })
                .collect();
            Ok((curve, eq.diagnostics().mean_cluster_size()))
        })
        .collect::<Result<_>>()?;
    let k = cfg.times.len();
    let mut values = Vec::with_capacity(k);
    let mut stderrs = Vec::with_capacity(k);
    for i in 0..k {
        let col: Vec<f64> = per_replica.iter().map(|(c, _)| c[i]).collect();
        let (m, s) = mean_stderr(&col);
        values.push(m);
        stderrs.push(s);
    }
    let mean_cluster_size = per_replica.iter().map(|(_, m)| m).sum::<f64>() / cfg.replicas as f64;
    Ok(AutocorrEstimate {
        config: cfg.clone(),
        values,
        stderrs,
        mean_cluster_size,
        replica_curves: per_replica.into_iter().map(|(c, _)| c).collect(),
    })
}

/// Power-law fit of an autocorrelation curve whose exponent stderr comes
/// from resampling whole replicas.
///
/// Points of one curve share trajectories and are strongly correlated, so
/// the pointwise bootstrap of [`fit_power_law`] would understate the error.
/// The weights stay those of the full sample.
pub fn fit_autocorrelation(est: &AutocorrEstimate, window: (f64, f64), opts: &FitOptions) -> Result<ScalingSeries> {
    let mut fitted = fit_power_law(&est.series()?, window, &FitOptions { bootstrap: 0, seed: opts.seed })?;
    let curves = &est.replica_curves;
    if curves.len() < 2 {
        return Err(LabError::Budget("replica curves are needed for the replica bootstrap".into()));
    }
    let times = &est.config.times;
    let idx: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= window.0 && times[i] <= window.1).collect();
    let x: Vec<f64> = idx.iter().map(|&i| times[i].ln()).collect();
    let w: Vec<f64> = idx.iter().map(|&i| (est.values[i] / est.stderrs[i]).powi(2)).collect();
    let w = if w.iter().all(|v| v.is_finite()) { w } else { vec![1.0; idx.len()] };
    let mut r = rng::stream(opts.seed, "fit_autocorrelation", 0);
    let n = curves.len();
    let mut slopes = Vec::with_capacity(opts.bootstrap);
    for _ in 0..opts.bootstrap {
        let mut mean = vec![0.0; idx.len()];
        for _ in 0..n {
            let c = &curves[r.random_range(0..n)];
            for (m, &i) in mean.iter_mut().zip(&idx) {
                *m += c[i];
            }
        }
        if mean.iter().any(|m| *m <= 0.0) {
            continue;
        }
        let y: Vec<f64> = mean.iter().map(|m| (m / n as f64).ln()).collect();
        slopes.push(wls(&x, &y, &w).1);
    }
    if slopes.len() < 2 {
        return Err(LabError::Fit("fewer than 2 replica resamples stayed positive on the window".into()));
    }
    let fit = fitted.fit.as_mut().unwrap();
    fit.exponent_stderr = mean_stderr(&slopes).1 * (slopes.len() as f64).sqrt();
    fit.bootstrap_samples = slopes.len();
    fit.resampling = Resampling::Replica;
    Ok(fitted)
}

/// Largest site count for which the arm observables are enumerated.
pub const ARM_EXACT_SITES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmScaling {
    pub series: ScalingSeries,
    pub delta_hat: f64,
    pub delta_stderr: f64,
    /// Successive values never increase by more than three combined stderr.
    pub monotone: bool,
    /// `δ̂ ∈ (0, 1]` within two stderr.
    pub in_assumed_range: bool,
}

/// `⟨σ_0⟩⁺_{Λ_L}` for every `L`, exact on tiny cubes and Monte Carlo
/// beyond, with `δ̂` fitted over the points with `L >= 1`.
pub fn arm_scaling(d: usize, ls: &[usize], beta: f64, budget: &McBudget) -> Result<ArmScaling> {
    let points: Vec<(f64, f64)> = ls
        .iter()
        .map(|&l| {
            let sites = (2 * l + 1).pow(d as u32);
            let method = if sites <= ARM_EXACT_SITES {
                Method::Exact
            } else {
                let mut b = *budget;
                b.seed = rng::derive_u64(budget.seed, "arm_scaling", l as u64);
                Method::Mc(b)
            };
            magnetization_plus(l, d, &method, beta)
        })
        .collect::<Result<_>>()?;
    let series = ScalingSeries::new(
        "arm",
        ls.iter().map(|&l| l as f64).collect(),
        points.iter().map(|p| p.0).collect(),
        points.iter().map(|p| p.1).collect(),
    )?;
    let monotone = series.nonincreasing_within(3.0);
    let fitted = fit_power_law(&series, (1.0, f64::INFINITY), &FitOptions { bootstrap: 1000, seed: budget.seed })?;
    let fit = fitted.fit.clone().unwrap();
    let delta_hat = -fit.exponent;
    let s = fit.exponent_stderr;
    Ok(ArmScaling {
        series: fitted,
        delta_hat,
        delta_stderr: s,
        monotone,
        in_assumed_range: delta_hat + 2.0 * s > 0.0 && delta_hat - 2.0 * s <= 1.0,
    })
}

/// `|Λ_L|⁻¹ Σ_x (⟨σ_x⟩⁺_{Λ_L})²`.
///
/// The Monte Carlo estimate squares per-site means and subtracts their
/// squared standard errors, which removes the bias of squaring noisy means;
/// its stderr is a jackknife over chains.
pub fn averaged_arm(d: usize, l: usize, method: &Method, beta: f64) -> Result<(f64, f64)> {
    let geom = Geometry::cube(d, l)?;
    let n = geom.site_count();
    if beta == 0.0 {
        return Ok((0.0, 0.0));
    }
    match method {
        Method::Exact => {
            let m = enumerate_measure(&geom, &BoundaryCondition::Plus, beta)?;
            Ok((neumaier_sum((0..n).map(|x| m.mean_spin(x).powi(2))) / n as f64, 0.0))
        }
        Method::Mc(budget) => {
            let sys = SpinSystem::new(geom, BoundaryCondition::Plus)?;
            let chains = chain_averages(&sys, beta, budget, "averaged_arm", n, |s, out| {
                for (x, o) in out.iter_mut().enumerate() {
                    *o = 2.0 * s.conditional_plus(x) - 1.0;
                }
            })?;
            let stat = |rows: &[&Vec<f64>]| -> f64 {
                let k = rows.len() as f64;
                let mut total = 0.0;
                for x in 0..n {
                    let col: Vec<f64> = rows.iter().map(|r| r[x]).collect();
                    let mean = col.iter().sum::<f64>() / k;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
                    total += mean * mean - var / k;
                }
                total / n as f64
            };
            let all: Vec<&Vec<f64>> = chains.iter().collect();
            let full = stat(&all);
            let c = chains.len();
            if c < 3 {
                return Err(LabError::Budget("averaged arm needs at least three chains".into()));
            }
            let leave_one: Vec<f64> = (0..c)
                .map(|i| {
                    let rows: Vec<&Vec<f64>> = chains.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r).collect();
                    stat(&rows)
                })
                .collect();
            let mean_lo = leave_one.iter().sum::<f64>() / c as f64;
            let var = leave_one.iter().map(|v| (v - mean_lo).powi(2)).sum::<f64>() * (c as f64 - 1.0) / c as f64;
            Ok((full, var.sqrt()))
        }
    }
}

/// `value · L^{2δ ∧ 1}` for averaged-arm values, to inspect boundedness.
pub fn averaged_arm_ratios(ls: &[usize], values: &[f64], delta: f64) -> Vec<f64> {
    let e = (2.0 * delta).min(1.0);
    ls.iter().zip(values).map(|(&l, v)| v * (l.max(1) as f64).powf(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellSumReport {
    pub d: usize,
    pub delta: f64,
    pub ls: Vec<u64>,
    /// `S(L) = L^{-d} Σ_{i=1}^{L-1} i^{d-1} / (L - i)^{2δ}`.
    pub sums: Vec<f64>,
    /// `S(L) · L^{2δ ∧ 1}`.
    pub scaled: Vec<f64>,
    /// Max over min of `scaled` for `L` in the last decade of the list.
    pub last_decade_spread: f64,
}

impl ShellSumReport {
    pub fn bounded(&self, spread: f64) -> bool {
        self.last_decade_spread <= spread
    }
}

/// The shell sum, exact up to compensated double-precision summation.
pub fn shell_sum(d: usize, delta: f64, l: u64) -> f64 {
    let p = 2.0 * delta;
    let terms = (1..l).map(|i| (i as f64).powi(d as i32 - 1) / ((l - i) as f64).powf(p));
    neumaier_sum(terms) / (l as f64).powi(d as i32)
}

/// Evaluate the shell sum along `ls`. `δ = 1/2` is excluded: there the
/// sum carries an extra `log L` and `S(L) L` is unbounded.
pub fn shell_sum_check(d: usize, delta: f64, ls: &[u64]) -> Result<ShellSumReport> {
    if !(delta > 0.0 && delta <= 1.0) || delta == 0.5 {
        return Err(invalid(format!("delta must lie in (0, 1] and differ from 1/2, got {delta}")));
    }
    if d < 1 {
        return Err(invalid("dimension must be positive"));
    }
    if ls.is_empty() || ls.iter().any(|&l| l < 2) || ls.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("sizes must be increasing and at least 2"));
    }
    let e = p_exponent(delta);
    let sums: Vec<f64> = ls.par_iter().map(|&l| shell_sum(d, delta, l)).collect();
    let scaled: Vec<f64> = ls.iter().zip(&sums).map(|(&l, s)| s * (l as f64).powf(e)).collect();
    let top = *ls.last().unwrap() as f64;
    let tail: Vec<f64> = ls
        .iter()
        .zip(&scaled)
        .filter(|(l, _)| **l as f64 >= top / 10.0)
        .map(|(_, v)| *v)
        .collect();
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ShellSumReport {
        d,
        delta,
        ls: ls.to_vec(),
        sums,
        scaled,
        last_decade_spread: max / min,
    })
}

fn p_exponent(delta: f64) -> f64 {
    (2.0 * delta).min(1.0)
}

/// Log-spaced integer sizes between `lo` and `hi`, deduplicated.
pub fn log_spaced_sizes(lo: u64, hi: u64, per_decade: usize) -> Vec<u64> {
    let steps = ((hi as f64 / lo as f64).log10() * per_decade as f64).ceil() as usize;
    let mut v: Vec<u64> = (0..=steps)
        .map(|k| (lo as f64 * 10f64.powf(k as f64 / per_decade as f64)).round() as u64)
        .map(|l| l.min(hi))
        .collect();
    v.dedup();
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsiScalingPoint {
    pub sides: Vec<usize>,
    pub sites: usize,
    pub gap: f64,
    /// Lanczos gap where the dense one was also computed.
    pub gap_sparse: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub certificate_hash: Option<String>,
    /// Row sums, reversibility and stationarity of the generator.
    pub invariants_pass: bool,
}

impl LsiScalingPoint {
    /// `gap >= γ̂ - 1e-6` (vacuous without an estimate).
    pub fn consistent(&self) -> bool {
        self.gamma_hat.is_none_or(|g| self.gap >= g - tolerances::LSI_REFINE)
    }

    /// Dense and Lanczos gaps agree to `1e-6` where both exist.
    pub fn solvers_agree(&self) -> bool {
        self.gap_sparse.is_none_or(|g| (g - self.gap).abs() <= 1e-6)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsiScaling {
    pub bc: BoundaryCondition,
    pub points: Vec<LsiScalingPoint>,
    /// `γ̂⁻¹` against `n^{1/d}`, the linear size.
    pub inverse_lsi: Option<ScalingSeries>,
    pub inverse_gap: ScalingSeries,
    /// Fitted growth exponent of `γ̂⁻¹`; indicative only with so few points.
    pub eta_hat: Option<f64>,
}

/// `γ̂⁻¹` and `gap⁻¹` on boxes (or tori for the periodic boundary) of the
/// given sides.
pub fn lsi_scaling(
    sizes: &[Vec<usize>],
    bc: &BoundaryCondition,
    family: RateFamily,
    beta: f64,
    search: &LsiSearch,
) -> Result<LsiScaling> {
    let mut points: Vec<LsiScalingPoint> = sizes
        .par_iter()
        .map(|sides| {
            let geom = if matches!(bc, BoundaryCondition::Periodic) {
                Geometry::periodic_box(sides)?
            } else {
                Geometry::open_box(sides)?
            };
            let sys = SpinSystem::new(geom, bc.clone())?;
            let model = RateModel::for_system(family, beta, &sys)?;
            let gen = Generator::new(sys, model)?;
            let states = gen.state_count();
            let gap = gen.spectral_gap()?;
            let gap_sparse = if states <= AUTO_DENSE_STATES && states > 2 {
                Some(gen.gap_lanczos(states, 7)?.0)
            } else {
                None
            };
            let lsi = if states <= LSI_STATE_CAP { Some(lsi_constant(&gen, search)?) } else { None };
            Ok(LsiScalingPoint {
                sides: sides.clone(),
                sites: gen.site_count(),
                gap,
                gap_sparse,
                gamma_hat: lsi.as_ref().map(|e| e.gamma_hat),
                certificate_hash: lsi.as_ref().map(|e| e.certificate_hash()),
                invariants_pass: gen.invariants().pass(),
            })
        })
        .collect::<Result<_>>()?;
    points.sort_by(|a, b| a.sites.cmp(&b.sites));
    let linear = |p: &LsiScalingPoint| (p.sites as f64).powf(1.0 / p.sides.len() as f64);
    let xs: Vec<f64> = points.iter().map(linear).collect();
    let inverse_gap = ScalingSeries::new(
        "inverse-gap",
        xs.clone(),
        points.iter().map(|p| 1.0 / p.gap).collect(),
        vec![0.0; points.len()],
    )?;
    let inverse_lsi = if points.iter().all(|p| p.gamma_hat.is_some()) {
        Some(ScalingSeries::new(
            "inverse-lsi",
            xs,
            points.iter().map(|p| 1.0 / p.gamma_hat.unwrap()).collect(),
            vec![0.0; points.len()],
        )?)
    } else {
        None
    };
    let eta_hat = match &inverse_lsi {
        Some(s) if s.len() >= 3 => fit_power_law(s, (0.0, f64::INFINITY), &FitOptions::default())
            .ok()
            .and_then(|f| f.fit.map(|x| x.exponent)),
        _ => None,
    };
    Ok(LsiScaling {
        bc: bc.clone(),
        points,
        inverse_lsi,
        inverse_gap,
        eta_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_from_assumptions(1.0, 2.0).unwrap(), 0.25);
        assert_eq!(alpha_from_assumptions(0.5, 1.0).unwrap(), 0.5);
        assert_eq!(alpha_from_assumptions(0.25, 1.0).unwrap(), 0.25);
        assert!(alpha_from_assumptions(0.0, 1.0).is_err());
        assert!(alpha_from_assumptions(1.5, 1.0).is_err());
        assert!(alpha_from_assumptions(0.5, 0.0).is_err());
    }

    #[test]
    fn noiseless_fits() {
        let x: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 7.0 * v.powf(-0.5)).collect();
        let s = ScalingSeries::new("t", x.clone(), y, vec![0.0; 10]).unwrap();
        let f = fit_power_law(&s, (0.0, 100.0), &FitOptions::default()).unwrap().fit.unwrap();
        assert!((f.exponent + 0.5).abs() < 1e-12);
        assert!((f.log_prefactor - 7f64.ln()).abs() < 1e-12);
        let flat = ScalingSeries::new("t", x, vec![1.0; 10], vec![0.0; 10]).unwrap();
        let f = fit_power_law(&flat, (0.0, 100.0), &FitOptions::default()).unwrap().fit.unwrap();
        assert!(f.exponent.abs() < 1e-14);
    }

    #[test]
    fn fit_refusals() {
        let s = ScalingSeries::new("t", vec![1.0, 2.0, 3.0], vec![1.0, 0.5, 0.1], vec![0.0, 0.0, 0.05]).unwrap();
        assert!(fit_power_law(&s, (0.0, 10.0), &FitOptions::default()).is_err());
        assert!(fit_power_law(&s, (0.0, 2.5), &FitOptions::default()).is_err());
        assert!(ScalingSeries::new("t", vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn shell_sum_examples() {
        for d in [2, 3] {
            assert!((shell_sum(d, 0.7, 2) - 0.5f64.powi(d as i32)).abs() < 1e-16);
        }
        assert!(shell_sum_check(2, 0.5, &[2, 3]).is_err());
        assert!(shell_sum_check(2, 1.2, &[2, 3]).is_err());
    }
}
