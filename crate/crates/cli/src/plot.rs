use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::experiments::payload_series;
use crate::records::read_records;
use crate::CliError;

/// Results files named by `paths`; directories contribute their `*.jsonl`
/// files in name order.
pub fn collect_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            out.extend(files);
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(CliError::Io(format!("{}: no such file", p.display())));
        }
    }
    Ok(out)
}

fn header(kind: Option<&str>) -> &'static str {
    match kind {
        Some("autocorr") => "t,C,C_err,series",
        Some("arm") => "L,m,m_err,series",
        _ => "abscissa,value,stderr,series",
    }
}

/// Tidy CSV of every stored series, one row per point.
///
/// `selector` keeps series whose label or experiment kind equals it. Rows are
/// sorted by label then abscissa; a series repeated by reruns of the same
/// config appears once. Every file is parsed before any output so that a
/// schema mismatch anywhere fails the whole call.
pub fn emit_plot_data(paths: &[PathBuf], selector: Option<&str>) -> Result<String, CliError> {
    let files = collect_files(paths)?;
    let mut bad = Vec::new();
    let mut parsed = Vec::new();
    for f in &files {
        match read_records(f) {
            Ok(r) => parsed.push(r),
            Err(CliError::Schema(msg)) => bad.push(msg),
            Err(e) => return Err(e),
        }
    }
    if !bad.is_empty() {
        return Err(CliError::Schema(bad.join("; ")));
    }
    let mut rows: BTreeMap<(String, String), (String, Vec<(f64, f64, f64)>)> = BTreeMap::new();
    for records in parsed {
        for r in records {
            for s in payload_series(&r.payload)? {
                if selector.is_some_and(|want| want != s.label && want != r.kind) {
                    continue;
                }
                let pts = (0..s.len()).map(|i| (s.abscissae[i], s.values[i], s.stderrs[i])).collect();
                rows.entry((s.label.clone(), r.config_digest.clone())).or_insert((r.kind.clone(), pts));
            }
        }
    }
    let kinds: Vec<&str> = rows.values().map(|(k, _)| k.as_str()).collect();
    let kind = kinds.first().copied().filter(|k| kinds.iter().all(|x| x == k));
    let mut out = String::from(header(kind));
    out.push('\n');
    for ((label, _), (_, pts)) in &rows {
        let mut pts = pts.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (x, v, s) in pts {
            out.push_str(&format!("{x},{v},{s},{label}\n"));
        }
    }
    Ok(out)
}
