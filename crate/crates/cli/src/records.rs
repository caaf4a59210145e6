use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::experiments::{self, Output};
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Set `LAB_CODE_REVISION` at build time to stamp a VCS revision.
pub fn code_revision() -> &'static str {
    option_env!("LAB_CODE_REVISION").unwrap_or(concat!("isinglab-", env!("CARGO_PKG_VERSION")))
}

/// One line of a results file. Only `payload` is a deterministic function
/// of the config; `timestamp` is wall-clock seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub kind: String,
    pub config_digest: String,
    pub timestamp: u64,
    pub code_revision: String,
    pub payload: Value,
}

impl ResultRecord {
    /// The payload as compact JSON, the form compared across reruns.
    pub fn payload_bytes(&self) -> String {
        serde_json::to_string(&self.payload).expect("payload serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    pub config_digest: String,
    pub config: ExperimentConfig,
    pub code_revision: String,
    pub timestamp: u64,
    pub results: String,
    pub csv: Option<String>,
    pub records: usize,
    pub checks_passed: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<ResultRecord>,
    pub results_path: PathBuf,
    pub csv_path: Option<PathBuf>,
    pub manifest_path: PathBuf,
    pub pass: bool,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Run an experiment and persist it under `cfg.output`.
///
/// Results are appended to `<kind>-<digest>.jsonl`; the CSV mirror and the
/// manifest `<kind>-<digest>.manifest.json` describe the latest run.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let Output { payloads, csv, pass } = experiments::execute(cfg)?;
    let digest = cfg.digest();
    let stem = format!("{}-{}", cfg.kind.name(), &digest[..16]);
    let dir = &cfg.output;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let timestamp = now();
    let records: Vec<ResultRecord> = payloads
        .into_iter()
        .map(|payload| ResultRecord {
            schema_version: SCHEMA_VERSION,
            kind: cfg.kind.name().into(),
            config_digest: digest.clone(),
            timestamp,
            code_revision: code_revision().into(),
            payload,
        })
        .collect();

    let results_path = dir.join(format!("{stem}.jsonl"));
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r).expect("record serializes"));
        lines.push('\n');
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&results_path)
        .map_err(|e| io_err(&results_path, e))?;
    file.write_all(lines.as_bytes()).map_err(|e| io_err(&results_path, e))?;

    let csv_path = match csv {
        Some(text) => {
            let p = dir.join(format!("{stem}.csv"));
            fs::write(&p, text).map_err(|e| io_err(&p, e))?;
            Some(p)
        }
        None => None,
    };
    let file_name = |p: &Path| p.file_name().unwrap().to_string_lossy().into_owned();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        kind: cfg.kind.name().into(),
        config_digest: digest,
        config: cfg.clone(),
        code_revision: code_revision().into(),
        timestamp,
        results: file_name(&results_path),
        csv: csv_path.as_deref().map(file_name),
        records: records.len(),
        checks_passed: pass,
    };
    let manifest_path = dir.join(format!("{stem}.manifest.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(|e| io_err(&manifest_path, e))?;
    Ok(RunOutcome {
        records,
        results_path,
        csv_path,
        manifest_path,
        pass,
    })
}

/// Parse a results file, refusing records of another schema version.
pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line)
            .map_err(|e| CliError::Schema(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let version = v.get("schema_version").and_then(Value::as_u64);
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(CliError::Schema(format!(
                "{}:{}: schema_version {:?}, expected {SCHEMA_VERSION}",
                path.display(),
                i + 1,
                version
            )));
        }
        out.push(
            serde_json::from_value(v).map_err(|e| CliError::Schema(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
