//! Experiment configuration: a TOML file with sections, overridden by
//! command-line flags, with the master seed also settable from `LAB_SEED`.
//!
//! ```toml
//! [experiment]
//! seed = 7
//! output = "results"
//!
//! [lattice]
//! dimension = 2
//! sizes = [16]          # side parameters L
//! boxes = [[2, 2]]      # explicit sides, used instead of sizes when present
//! bc = "periodic"
//!
//! [dynamics]
//! beta = 0.44           # defaults to the critical point in d = 2
//! family = "heatbath"
//!
//! [time]
//! t0 = 1.0
//! ratio = 1.3
//! t_max = 200.0
//!
//! [budget]
//! replicas = 200
//! chains = 16
//! draws = 2000
//! burn_in = 200
//!
//! [fit]
//! window = [5.0, 100.0]
//! bootstrap = 1000
//! ```

use std::path::{Path, PathBuf};

use isinglab::gibbs::{default_critical_beta, BoundaryCondition};
use isinglab::glauber::RateFamily;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SEED_ENV: &str = "LAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Autocorr,
    Arm,
    Spectral,
    Verify,
    Shellsum,
    Fit,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Autocorr => "autocorr",
            Kind::Arm => "arm",
            Kind::Spectral => "spectral",
            Kind::Verify => "verify",
            Kind::Shellsum => "shellsum",
            Kind::Fit => "fit",
        }
    }
}

/// The file as written, before defaults and validation.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub experiment: RawExperiment,
    #[serde(default)]
    pub lattice: RawLattice,
    #[serde(default)]
    pub dynamics: RawDynamics,
    #[serde(default)]
    pub time: RawTime,
    #[serde(default)]
    pub budget: RawBudget,
    #[serde(default)]
    pub fit: RawFit,
    #[serde(default)]
    pub verify: RawVerify,
    #[serde(default)]
    pub shellsum: RawShellsum,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawExperiment {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLattice {
    pub dimension: Option<i64>,
    pub sizes: Option<Vec<i64>>,
    pub boxes: Option<Vec<Vec<i64>>>,
    pub bc: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDynamics {
    pub beta: Option<f64>,
    pub family: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTime {
    pub t0: Option<f64>,
    pub ratio: Option<f64>,
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBudget {
    pub replicas: Option<i64>,
    pub chains: Option<i64>,
    pub draws: Option<i64>,
    pub burn_in: Option<i64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFit {
    pub window: Option<Vec<f64>>,
    pub bootstrap: Option<i64>,
    pub input: Option<PathBuf>,
    pub series: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawVerify {
    pub functions: Option<i64>,
    pub ell: Option<f64>,
    pub delta: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawShellsum {
    pub dimensions: Option<Vec<i64>>,
    pub deltas: Option<Vec<f64>>,
    pub l_max: Option<i64>,
    pub per_decade: Option<i64>,
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// A validated experiment. Everything except the output directory enters
/// the digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    pub dimension: usize,
    pub sizes: Vec<usize>,
    pub boxes: Vec<Vec<usize>>,
    pub bc: BoundaryCondition,
    pub beta: f64,
    pub family: RateFamily,
    pub t0: f64,
    pub ratio: f64,
    pub t_max: f64,
    pub replicas: usize,
    pub chains: usize,
    pub draws: usize,
    pub burn_in: usize,
    pub window: Option<(f64, f64)>,
    pub bootstrap: usize,
    pub fit_input: Option<PathBuf>,
    pub fit_series: Option<String>,
    pub functions: usize,
    pub ell: f64,
    pub delta: f64,
    pub eta: f64,
    pub shell_dimensions: Vec<usize>,
    pub deltas: Vec<f64>,
    pub l_max: u64,
    pub per_decade: usize,
    #[serde(skip)]
    pub output: PathBuf,
}

fn field(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

fn nonneg(path: &str, v: i64) -> Result<usize, CliError> {
    usize::try_from(v).map_err(|_| field(path, format!("must be nonnegative, got {v}")))
}

fn positive(path: &str, v: i64) -> Result<usize, CliError> {
    match nonneg(path, v)? {
        0 => Err(field(path, "must be positive")),
        n => Ok(n),
    }
}

fn finite_positive(path: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(field(path, format!("must be positive and finite, got {v}")))
    }
}

fn parse_bc(s: &str) -> Result<BoundaryCondition, CliError> {
    match s {
        "plus" => Ok(BoundaryCondition::Plus),
        "minus" => Ok(BoundaryCondition::Minus),
        "free" => Ok(BoundaryCondition::Free),
        "periodic" => Ok(BoundaryCondition::Periodic),
        other => Err(field("lattice.bc", format!("unknown boundary condition `{other}`"))),
    }
}

impl ExperimentConfig {
    /// Apply defaults and validate every field, reporting the first failure
    /// with its `section.key` path.
    pub fn resolve(kind: Kind, raw: &RawConfig, env_seed: Option<&str>) -> Result<Self, CliError> {
        let seed = match env_seed {
            Some(s) => s
                .trim()
                .parse::<u64>()
                .map_err(|_| field(SEED_ENV, format!("not an unsigned integer: `{s}`")))?,
            None => raw.experiment.seed.unwrap_or(0),
        };
        let l = &raw.lattice;
        let dimension = positive("lattice.dimension", l.dimension.unwrap_or(2))?;
        let sizes = l
            .sizes
            .clone()
            .unwrap_or_default()
            .iter()
            .enumerate()
            .map(|(i, &v)| nonneg(&format!("lattice.sizes[{i}]"), v))
            .collect::<Result<Vec<_>, _>>()?;
        let boxes = l
            .boxes
            .clone()
            .unwrap_or_default()
            .iter()
            .enumerate()
            .map(|(i, b)| {
                if b.is_empty() {
                    return Err(field(&format!("lattice.boxes[{i}]"), "must list at least one side"));
                }
                b.iter()
                    .enumerate()
                    .map(|(j, &v)| positive(&format!("lattice.boxes[{i}][{j}]"), v))
                    .collect()
            })
            .collect::<Result<Vec<Vec<usize>>, _>>()?;
        let default_bc = match kind {
            Kind::Arm => "plus",
            Kind::Spectral => "free",
            _ => "periodic",
        };
        let bc = parse_bc(l.bc.as_deref().unwrap_or(default_bc))?;

        let beta = match raw.dynamics.beta {
            Some(b) if b >= 0.0 && b.is_finite() => b,
            Some(b) => return Err(field("dynamics.beta", format!("must be nonnegative, got {b}"))),
            None => default_critical_beta(dimension)
                .ok_or_else(|| field("dynamics.beta", format!("no default critical point in d = {dimension}")))?,
        };
        let family = raw
            .dynamics
            .family
            .as_deref()
            .unwrap_or("heatbath")
            .parse::<RateFamily>()
            .map_err(|e| field("dynamics.family", e))?;

        let t0 = finite_positive("time.t0", raw.time.t0.unwrap_or(1.0))?;
        let ratio = raw.time.ratio.unwrap_or(1.3);
        if !(ratio > 1.0 && ratio.is_finite()) {
            return Err(field("time.ratio", format!("must exceed 1, got {ratio}")));
        }
        let t_max = finite_positive("time.t_max", raw.time.t_max.unwrap_or(200.0))?;
        if t_max < t0 {
            return Err(field("time.t_max", "must be at least time.t0"));
        }

        let b = &raw.budget;
        let replicas = nonneg("budget.replicas", b.replicas.unwrap_or(200))?;
        if kind == Kind::Autocorr && replicas < 2 {
            return Err(field("budget.replicas", "replicas >= 2 required for stderr"));
        }
        let chains = nonneg("budget.chains", b.chains.unwrap_or(16))?;
        if kind == Kind::Arm && chains < 3 {
            return Err(field("budget.chains", "at least three chains are needed"));
        }
        let draws = positive("budget.draws", b.draws.unwrap_or(2000))?;
        let burn_in = nonneg("budget.burn_in", b.burn_in.unwrap_or(200))?;

        let window = match &raw.fit.window {
            None => None,
            Some(w) if w.len() == 2 && w[0] < w[1] && w[0] >= 0.0 => Some((w[0], w[1])),
            Some(_) => return Err(field("fit.window", "must be [lo, hi] with 0 <= lo < hi")),
        };
        let bootstrap = nonneg("fit.bootstrap", raw.fit.bootstrap.unwrap_or(1000))?;
        if kind == Kind::Fit {
            if raw.fit.input.is_none() {
                return Err(field("fit.input", "a result file to fit is required"));
            }
            if window.is_none() {
                return Err(field("fit.window", "required for fit"));
            }
        }

        let v = &raw.verify;
        let functions = nonneg("verify.functions", v.functions.unwrap_or(20))?;
        let ell = finite_positive("verify.ell", v.ell.unwrap_or(3.0))?;
        let delta = v.delta.unwrap_or(0.125);
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(field("verify.delta", format!("must lie in (0, 1], got {delta}")));
        }
        let eta = finite_positive("verify.eta", v.eta.unwrap_or(1.0))?;

        let s = &raw.shellsum;
        let shell_dimensions = s
            .dimensions
            .clone()
            .unwrap_or_else(|| vec![2, 3])
            .iter()
            .enumerate()
            .map(|(i, &d)| positive(&format!("shellsum.dimensions[{i}]"), d))
            .collect::<Result<Vec<_>, _>>()?;
        let deltas = s.deltas.clone().unwrap_or_else(|| vec![0.25, 0.75, 1.0]);
        for (i, &d) in deltas.iter().enumerate() {
            if !(d > 0.0 && d <= 1.0) || d == 0.5 {
                return Err(field(&format!("shellsum.deltas[{i}]"), format!("must lie in (0, 1] and differ from 1/2, got {d}")));
            }
        }
        let l_max = nonneg("shellsum.l_max", s.l_max.unwrap_or(100_000))? as u64;
        if l_max < 20 {
            return Err(field("shellsum.l_max", "must be at least 20"));
        }
        let per_decade = positive("shellsum.per_decade", s.per_decade.unwrap_or(10))?;

        let cfg = ExperimentConfig {
            kind,
            seed,
            dimension,
            sizes,
            boxes,
            bc,
            beta,
            family,
            t0,
            ratio,
            t_max,
            replicas,
            chains,
            draws,
            burn_in,
            window,
            bootstrap,
            fit_input: raw.fit.input.clone(),
            fit_series: raw.fit.series.clone(),
            functions,
            ell,
            delta,
            eta,
            shell_dimensions,
            deltas,
            l_max,
            per_decade,
            output: raw.experiment.output.clone().unwrap_or_else(|| PathBuf::from("results")),
        };
        cfg.check_shapes()?;
        Ok(cfg)
    }

    fn check_shapes(&self) -> Result<(), CliError> {
        for (i, b) in self.boxes.iter().enumerate() {
            if b.len() != self.dimension {
                return Err(field(
                    &format!("lattice.boxes[{i}]"),
                    format!("has {} sides but lattice.dimension = {}", b.len(), self.dimension),
                ));
            }
        }
        let needs_shape = matches!(self.kind, Kind::Autocorr | Kind::Arm | Kind::Spectral | Kind::Verify);
        if needs_shape && self.sizes.is_empty() && self.boxes.is_empty() {
            return Err(field("lattice.sizes", "at least one size or box is required"));
        }
        if matches!(self.kind, Kind::Autocorr | Kind::Verify) {
            if self.bc != BoundaryCondition::Periodic {
                return Err(field("lattice.bc", "this experiment runs on tori and needs `periodic`"));
            }
            if self.boxes.is_empty() && self.sizes.contains(&0) {
                return Err(field("lattice.sizes", "torus side parameters must be positive"));
            }
        }
        if self.kind == Kind::Arm {
            if !self.boxes.is_empty() {
                return Err(field("lattice.boxes", "arm scaling uses centred cubes; give lattice.sizes"));
            }
            if self.bc != BoundaryCondition::Plus {
                return Err(field("lattice.bc", "arm scaling uses the plus boundary"));
            }
            if self.sizes.iter().filter(|&&l| l >= 1).count() < 3 {
                return Err(field("lattice.sizes", "need at least three sizes L >= 1 to fit an exponent"));
            }
            if self.sizes.windows(2).any(|w| w[1] <= w[0]) {
                return Err(field("lattice.sizes", "must be strictly increasing"));
            }
        }
        Ok(())
    }

    /// Sides of each system: explicit boxes, or `2L` per axis from the side
    /// parameters (tori `𝕋_L`; open boxes of side `2L + 1` for cubes).
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        if !self.boxes.is_empty() {
            return self.boxes.clone();
        }
        let periodic = self.bc == BoundaryCondition::Periodic;
        self.sizes
            .iter()
            .map(|&l| vec![if periodic { 2 * l } else { 2 * l + 1 }; self.dimension])
            .collect()
    }

    /// Time grid `0, t0, t0 ρ, …` up to `t_max`.
    pub fn times(&self) -> Vec<f64> {
        isinglab::exponents::geometric_time_grid(self.t0, self.ratio, self.t_max).expect("validated")
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
