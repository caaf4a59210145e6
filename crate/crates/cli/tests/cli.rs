use std::fs;
use std::path::{Path, PathBuf};

use isinglab_cli::cli::main_with;
use isinglab_cli::records::read_records;
use isinglab_cli::SCHEMA_VERSION;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn lab(args: &[&str], env_seed: Option<&str>) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("isinglab").chain(args.iter().copied());
    let code = main_with(argv, env_seed, &mut out, &mut err);
    Run { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn jsonl_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    v.sort();
    v
}

fn shellsum(dir: &Path, extra: &[&str]) -> Run {
    let out = dir.to_str().unwrap();
    let mut args = vec!["shellsum", "--output", out, "--l-max", "2000", "--per-decade", "4"];
    args.extend_from_slice(extra);
    lab(&args, None)
}

#[test]
fn verify_defaults_pass() {
    let dir = tempfile::tempdir().unwrap();
    let r = lab(&["verify", "--output", dir.path().to_str().unwrap(), "--sizes", "1", "--functions", "4"], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let files = jsonl_files(dir.path());
    assert_eq!(files.len(), 1);
    let records = read_records(&files[0]).unwrap();
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r.payload["pass"] == true));
    let manifest = files[0].with_extension("manifest.json");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(manifest).unwrap()).unwrap();
    assert!(records.iter().all(|r| r.config_digest == m["config_digest"]));
}

#[test]
fn config_errors_exit_two_with_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = lab(&["autocorr", "--output", out, "--sizes", "-1"], None);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("lattice.sizes[0]"), "{}", r.stderr);

    let r = lab(&["autocorr", "--output", out, "--replicas", "1"], None);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("replicas >= 2 required for stderr"), "{}", r.stderr);

    let toml = dir.path().join("bad.toml");
    fs::write(&toml, "[lattice]\nsizes = [2]\ncolour = 3\n").unwrap();
    let r = lab(&["spectral", "--config", toml.to_str().unwrap()], None);
    assert_eq!(r.code, 2, "{}", r.stderr);

    assert_eq!(lab(&["no-such-command"], None).code, 2);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let toml = dir.path().join("spectral.toml");
    fs::write(
        &toml,
        format!(
            "[experiment]\nseed = 3\noutput = {:?}\n\n[lattice]\nboxes = [[1, 2], [2, 2]]\n\n[dynamics]\nfamily = \"metropolis\"\n",
            dir.path().to_str().unwrap()
        ),
    )
    .unwrap();
    let r = lab(&["spectral", "--config", toml.to_str().unwrap(), "--beta", "0.3"], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let records = read_records(&jsonl_files(dir.path())[0]).unwrap();
    assert_eq!(records.len(), 1);
    let reports = records[0].payload["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r["family"] == "metropolis" && r["beta"] == 0.3));
}

#[test]
fn failed_fits_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(shellsum(dir.path(), &[]).code, 0);
    let input = jsonl_files(dir.path())[0].clone();
    let input = input.to_str().unwrap();
    let fits = dir.path().join("fits");
    let fits = fits.to_str().unwrap();
    // two points in the window
    let r = lab(&["fit", "--input", input, "--window", "100,200", "--output", fits], None);
    assert_eq!(r.code, 1, "{}", r.stderr);
    let r = lab(&["fit", "--input", input, "--series", "nope", "--window", "1,2000", "--output", fits], None);
    assert_eq!(r.code, 1, "{}", r.stderr);
    let r = lab(
        &["fit", "--input", input, "--series", "shellsum-d2-delta1", "--window", "10,2000", "--bootstrap", "50", "--output", fits],
        None,
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rec = read_records(&jsonl_files(Path::new(fits))[0]).unwrap();
    // the stored series is S(L)·L, which flattens towards ζ(2)
    let exponent = rec[0].payload["fit"]["exponent"].as_f64().unwrap();
    assert!(exponent > 0.0 && exponent < 0.1, "{exponent}");
}

#[test]
fn reruns_are_byte_identical_and_seed_override_applies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["autocorr", "--output", out, "--boxes", "2x2", "--replicas", "50", "--t-max", "5", "--seed", "7"];
    assert_eq!(lab(&args, None).code, 0);
    assert_eq!(lab(&args, None).code, 0);
    let files = jsonl_files(dir.path());
    assert_eq!(files.len(), 1);
    let records = read_records(&files[0]).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].payload_bytes(), records[1].payload_bytes());
    assert_eq!(records[0].config_digest, records[1].config_digest);

    // LAB_SEED overrides the configured seed and so changes the digest
    assert_eq!(lab(&args, Some("8")).code, 0);
    let files = jsonl_files(dir.path());
    assert_eq!(files.len(), 2);
    let digests: Vec<String> =
        files.iter().map(|f| read_records(f).unwrap()[0].config_digest.clone()).collect();
    assert_ne!(digests[0], digests[1]);

    assert_eq!(lab(&args, Some("not-a-number")).code, 2);
}

#[test]
fn plot_data_headers_and_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(lab(&["autocorr", "--output", out, "--boxes", "2x2", "--replicas", "20", "--t-max", "3"], None).code, 0);
    let r = lab(&["plot-data", out, "--series", "autocorr"], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let mut lines = r.stdout.lines();
    assert_eq!(lines.next(), Some("t,C,C_err,series"));
    let t: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(t.len() > 3 && t[0] == 0.0 && t.windows(2).all(|w| w[1] > w[0]));

    let arm_dir = tempfile::tempdir().unwrap();
    let arm_out = arm_dir.path().to_str().unwrap();
    let r = lab(&["arm", "--output", arm_out, "--sizes", "0,1,2,3,4", "--chains", "4", "--draws", "200"], None);
    assert!(r.code == 0 || r.code == 1, "{}", r.stderr);
    let r = lab(&["plot-data", arm_out], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let lines: Vec<&str> = r.stdout.lines().collect();
    assert_eq!(lines[0], "L,m,m_err,series");
    let ls: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ls, ["0", "1", "2", "3", "4"]);

    // the same input gives the same bytes
    assert_eq!(lab(&["plot-data", arm_out], None).stdout, r.stdout);
}

#[test]
fn mixed_schema_versions_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(shellsum(dir.path(), &[]).code, 0);
    let good = jsonl_files(dir.path())[0].clone();
    let line = fs::read_to_string(&good).unwrap().lines().next().unwrap().to_string();
    let mut rec: serde_json::Value = serde_json::from_str(&line).unwrap();
    rec["schema_version"] = (SCHEMA_VERSION + 1).into();
    let stale = dir.path().join("stale.jsonl");
    fs::write(&stale, format!("{rec}\n")).unwrap();

    let r = lab(&["plot-data", dir.path().to_str().unwrap()], None);
    assert_eq!(r.code, 4);
    assert!(r.stderr.contains("stale.jsonl"), "{}", r.stderr);
    assert!(r.stdout.is_empty());

    let r = lab(&["fit", "--input", stale.to_str().unwrap(), "--window", "1,10", "--output", dir.path().to_str().unwrap()], None);
    assert_eq!(r.code, 4);
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.jsonl");
    let r = lab(&["plot-data", missing.to_str().unwrap()], None);
    assert_eq!(r.code, 3, "{}", r.stderr);
}
