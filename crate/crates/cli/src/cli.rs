use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, Kind, RawConfig, SEED_ENV};
use crate::plot::emit_plot_data;
use crate::records::run;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "isinglab", version, about = "Critical Ising Glauber dynamics experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spin autocorrelation on tori by exact continuous-time simulation.
    Autocorr(RunArgs),
    /// Plus-boundary magnetization at the centre of growing cubes.
    Arm(RunArgs),
    /// Spectral gaps and log-Sobolev estimates on enumerable boxes.
    Spectral(RunArgs),
    /// Exact inequality and identity checks on small tori.
    Verify(RunArgs),
    /// Deterministic shell sums.
    Shellsum(RunArgs),
    /// Power-law fit of series stored in a results file.
    Fit(RunArgs),
    /// Tidy CSV of stored series on stdout.
    PlotData(PlotArgs),
}

fn parse_box(b: &str) -> Result<Vec<i64>, String> {
    b.split('x')
        .map(|v| v.trim().parse::<i64>().map_err(|_| format!("cannot parse box `{b}`")))
        .collect()
}

/// Flags mirror the config keys and override them.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub dimension: Option<i64>,
    /// Comma-separated side parameters, e.g. `4,8,16`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub sizes: Option<Vec<i64>>,
    /// Comma-separated boxes, e.g. `2x2,2x3`.
    #[arg(long, value_parser = parse_box, value_delimiter = ',')]
    pub boxes: Option<Vec<Vec<i64>>>,
    #[arg(long)]
    pub bc: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub replicas: Option<i64>,
    #[arg(long)]
    pub chains: Option<i64>,
    #[arg(long)]
    pub draws: Option<i64>,
    #[arg(long)]
    pub burn_in: Option<i64>,
    /// Fit window `lo,hi`.
    #[arg(long, value_delimiter = ',')]
    pub window: Option<Vec<f64>>,
    #[arg(long)]
    pub bootstrap: Option<i64>,
    /// Results file for `fit`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Series label for `fit`.
    #[arg(long)]
    pub series: Option<String>,
    #[arg(long)]
    pub functions: Option<i64>,
    #[arg(long)]
    pub ell: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub shell_dimensions: Option<Vec<i64>>,
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<f64>>,
    #[arg(long)]
    pub l_max: Option<i64>,
    #[arg(long)]
    pub per_decade: Option<i64>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Results files or directories.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    /// Keep only series with this label or experiment kind.
    #[arg(long)]
    pub series: Option<String>,
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src.clone() {
            $dst = Some(v);
        }
    };
}

impl RunArgs {
    /// Load the config file, if any, and lay the flags over it.
    pub fn raw_config(&self) -> Result<RawConfig, CliError> {
        let mut raw = match &self.config {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        set!(raw.experiment.seed, self.seed);
        set!(raw.experiment.output, self.output);
        set!(raw.lattice.dimension, self.dimension);
        set!(raw.lattice.sizes, self.sizes);
        set!(raw.lattice.boxes, self.boxes);
        set!(raw.lattice.bc, self.bc);
        set!(raw.dynamics.beta, self.beta);
        set!(raw.dynamics.family, self.family);
        set!(raw.time.t0, self.t0);
        set!(raw.time.ratio, self.ratio);
        set!(raw.time.t_max, self.t_max);
        set!(raw.budget.replicas, self.replicas);
        set!(raw.budget.chains, self.chains);
        set!(raw.budget.draws, self.draws);
        set!(raw.budget.burn_in, self.burn_in);
        set!(raw.fit.window, self.window);
        set!(raw.fit.bootstrap, self.bootstrap);
        set!(raw.fit.input, self.input);
        set!(raw.fit.series, self.series);
        set!(raw.verify.functions, self.functions);
        set!(raw.verify.ell, self.ell);
        set!(raw.verify.delta, self.delta);
        set!(raw.verify.eta, self.eta);
        set!(raw.shellsum.dimensions, self.shell_dimensions);
        set!(raw.shellsum.deltas, self.deltas);
        set!(raw.shellsum.l_max, self.l_max);
        set!(raw.shellsum.per_decade, self.per_decade);
        Ok(raw)
    }

    pub fn resolve(&self, kind: Kind, env_seed: Option<&str>) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::resolve(kind, &self.raw_config()?, env_seed)
    }
}

/// Execute a parsed command, writing CSV for `plot-data` to `stdout` and
/// one summary line per run to `stderr`. Returns the exit code.
pub fn dispatch(cli: &Cli, env_seed: Option<&str>, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32 {
    let result = match &cli.command {
        Command::PlotData(p) => emit_plot_data(&p.paths, p.series.as_deref()).and_then(|csv| {
            stdout.write_all(csv.as_bytes())?;
            Ok(0)
        }),
        cmd => {
            let (kind, args) = match cmd {
                Command::Autocorr(a) => (Kind::Autocorr, a),
                Command::Arm(a) => (Kind::Arm, a),
                Command::Spectral(a) => (Kind::Spectral, a),
                Command::Verify(a) => (Kind::Verify, a),
                Command::Shellsum(a) => (Kind::Shellsum, a),
                Command::Fit(a) => (Kind::Fit, a),
                Command::PlotData(_) => unreachable!(),
            };
            args.resolve(kind, env_seed).and_then(|cfg| run(&cfg)).map(|out| {
                let failed = out.records.iter().filter(|r| r.payload.get("pass") == Some(&false.into())).count();
                let _ = writeln!(
                    stderr,
                    "{}: {} records -> {} ({})",
                    kind.name(),
                    out.records.len(),
                    out.results_path.display(),
                    if out.pass { "all checks passed".to_string() } else if failed > 0 { format!("{failed} failed") } else { "checks failed".to_string() }
                );
                out.exit_code()
            })
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

/// Parse `args` (including the program name) and run.
pub fn main_with<I, T>(args: I, env_seed: Option<&str>, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(&cli, env_seed, stdout, stderr),
        Err(e) => {
            let _ = write!(stderr, "{e}");
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
    }
}

pub fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}
