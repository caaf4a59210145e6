//! Dispatch from a validated config to the library, producing payloads,
//! an optional CSV mirror and the overall check status.

use isinglab::exponents::{
    arm_scaling, autocorrelation_mc, fit_autocorrelation, fit_power_law, log_spaced_sizes, lsi_scaling, shell_sum_check, AutocorrConfig,
    FitOptions, ScalingSeries,
};
use isinglab::gibbs::{BoundaryCondition, McBudget, SamplerAlgorithm, SpinSystem};
use isinglab::glauber::{verify_rate_axioms, AxiomCheck, RateModel};
use isinglab::inequalities::{
    conditional_entropy_identity, geometric_partition, random_test_function, run_reports, schedule_boundedness,
    second_moment_identity, verify_bodineau_helffer, verify_de_bruijn, verify_efron_stein, verify_entropy_monotone,
    verify_factorization, verify_jensen_step, verify_projection, verify_spectral_gap_inequality, CheckKind,
    ConditionalStructure, InequalityReport, CONDITIONAL_SITE_CAP,
};
use isinglab::lattice::Geometry;
use isinglab::spectral::{lsi_constant, Generator, LsiSearch, SEMIGROUP_STATE_CAP};
use isinglab::tolerances;
use isinglab::LabError;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Kind};
use crate::records::read_records;
use crate::CliError;

/// Multiple of the standard error tolerated by the statistical checks.
pub const STDERR_MULTIPLE: f64 = 4.0;

/// Torus size up to which `autocorr` also computes the exact curve.
pub const EXACT_AUTOCORR_SITES: usize = 12;

pub struct Output {
    pub payloads: Vec<Value>,
    pub csv: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
}

fn check(name: &str, pass: bool) -> Check {
    Check { name: name.into(), pass }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("payload serializes")
}

/// Tidy CSV over several series, with the label as last column.
pub fn series_csv(series: &[&ScalingSeries]) -> String {
    let mut out = String::from("abscissa,value,stderr,series\n");
    for s in series {
        for i in 0..s.len() {
            out.push_str(&format!("{},{},{},{}\n", s.abscissae[i], s.values[i], s.stderrs[i], s.label));
        }
    }
    out
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    match cfg.kind {
        Kind::Autocorr => autocorr(cfg),
        Kind::Arm => arm(cfg),
        Kind::Spectral => spectral(cfg),
        Kind::Verify => verify(cfg),
        Kind::Shellsum => shellsum(cfg),
        Kind::Fit => fit(cfg),
    }
}

fn sides_label(sides: &[usize]) -> String {
    sides.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x")
}

fn autocorr(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let times = cfg.times();
    let mut payloads = Vec::new();
    let mut all_series = Vec::new();
    let mut pass = true;
    for sides in cfg.shapes() {
        let ac = AutocorrConfig {
            sides: sides.clone(),
            family: cfg.family,
            beta: cfg.beta,
            times: times.clone(),
            replicas: cfg.replicas,
            seed: cfg.seed,
            burn_in: cfg.burn_in,
        };
        let est = autocorrelation_mc(&ac)?;
        let mut series = est.series()?;
        series.label = format!("autocorr-{}", sides_label(&sides));
        let mut checks = vec![
            check("nonnegative", series.nonnegative_within(STDERR_MULTIPLE)),
            check("nonincreasing", series.nonincreasing_within(STDERR_MULTIPLE)),
        ];
        let sites: usize = sides.iter().product();
        let mut exact = None;
        if sites <= EXACT_AUTOCORR_SITES {
            let geom = Geometry::periodic_box(&sides)?;
            let sys = SpinSystem::new(geom, BoundaryCondition::Periodic)?;
            let model = RateModel::for_system(cfg.family, cfg.beta, &sys)?;
            let gen = Generator::new(sys, model)?;
            let curve = gen.time_correlation(&gen.spin(gen.system().geometry().origin()), &times)?;
            let agree = curve
                .iter()
                .zip(series.values.iter().zip(&series.stderrs))
                .all(|(e, (v, s))| (e - v).abs() <= STDERR_MULTIPLE * s || (e - v).abs() <= 1e-12);
            checks.push(check("matches-exact", agree));
            exact = Some(curve);
        }
        let mut fit_error = None;
        if let Some(window) = cfg.window {
            match fit_autocorrelation(&est, window, &FitOptions { bootstrap: cfg.bootstrap, seed: cfg.seed }) {
                Ok(mut fitted) => {
                    let f = fitted.fit.as_ref().unwrap();
                    checks.push(check("decaying", f.exponent < 0.0));
                    fitted.label = series.label.clone();
                    series = fitted;
                }
                Err(e) => {
                    checks.push(check("decaying", false));
                    fit_error = Some(e.to_string());
                }
            }
        }
        pass &= checks.iter().all(|c| c.pass);
        payloads.push(json!({
            "sides": sides,
            "family": cfg.family,
            "beta": cfg.beta,
            "replicas": cfg.replicas,
            "series": [to_value(&series)],
            "exact": exact,
            "mean_cluster_size": est.mean_cluster_size,
            "fit_error": fit_error,
            "checks": checks,
        }));
        all_series.push(series);
    }
    let refs: Vec<&ScalingSeries> = all_series.iter().collect();
    Ok(Output { payloads, csv: Some(series_csv(&refs)), pass })
}

/// Critical one-arm exponent of the planar model, used only as a warning.
pub const PLANAR_ARM_EXPONENT: f64 = 0.125;

fn arm(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let budget = McBudget {
        chains: cfg.chains,
        burn_in: cfg.burn_in,
        draws: cfg.draws,
        steps_between: 1,
        seed: cfg.seed,
        algorithm: SamplerAlgorithm::Wolff,
        target_stderr: None,
    };
    let a = arm_scaling(cfg.dimension, &cfg.sizes, cfg.beta, &budget)?;
    let checks = vec![
        check("nonincreasing", a.monotone),
        check("positive-exponent", a.delta_hat > 0.0),
        check("assumed-range", a.in_assumed_range),
    ];
    let literature = (cfg.dimension == 2).then(|| {
        json!({
            "reference": PLANAR_ARM_EXPONENT,
            "consistent": (a.delta_hat - PLANAR_ARM_EXPONENT).abs() <= 3.0 * a.delta_stderr,
        })
    });
    let pass = checks.iter().all(|c| c.pass);
    let payload = json!({
        "dimension": cfg.dimension,
        "beta": cfg.beta,
        "series": [to_value(&a.series)],
        "delta_hat": a.delta_hat,
        "delta_stderr": a.delta_stderr,
        "literature_check": literature,
        "checks": checks,
    });
    Ok(Output {
        csv: Some(series_csv(&[&a.series])),
        payloads: vec![payload],
        pass,
    })
}

fn spectral(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let search = LsiSearch { seed: cfg.seed, ..LsiSearch::default() };
    let s = lsi_scaling(&cfg.shapes(), &cfg.bc, cfg.family, cfg.beta, &search)?;
    let reports: Vec<Value> = s
        .points
        .iter()
        .map(|p| {
            json!({
                "sides": p.sides,
                "n": p.sites,
                "bc": cfg.bc.to_string(),
                "beta": cfg.beta,
                "family": cfg.family,
                "gap": p.gap,
                "gap_sparse": p.gap_sparse,
                "gamma_hat": p.gamma_hat,
                "certificate_hash": p.certificate_hash,
            })
        })
        .collect();
    let checks = vec![
        check("generator-invariants", s.points.iter().all(|p| p.invariants_pass)),
        check("gap-dominates-lsi", s.points.iter().all(|p| p.consistent())),
        check("solvers-agree", s.points.iter().all(|p| p.solvers_agree())),
    ];
    let pass = checks.iter().all(|c| c.pass);
    let mut series = vec![&s.inverse_gap];
    if let Some(l) = &s.inverse_lsi {
        series.push(l);
    }
    let payload = json!({
        "reports": reports,
        "series": series.iter().map(|x| to_value(*x)).collect::<Vec<_>>(),
        "eta_hat": s.eta_hat,
        "checks": checks,
    });
    Ok(Output { csv: Some(series_csv(&series)), payloads: vec![payload], pass })
}

fn axiom_report(id: &str, a: &AxiomCheck) -> InequalityReport {
    InequalityReport {
        id: format!("rate-axiom-{id}"),
        kind: CheckKind::Identity,
        lhs: a.max_violation,
        rhs: 0.0,
        margin: a.max_violation,
        pass: a.pass,
        digest: isinglab::inequalities::inputs_digest(&[id, &a.note, &a.checked.to_string()]),
    }
}

fn worst(id: &str, violation: f64, tol: f64) -> InequalityReport {
    let mut r = InequalityReport::identity(id, violation, 0.0, isinglab::inequalities::inputs_digest(&[id]));
    r.pass = violation <= tol;
    r
}

/// Generator, semigroup and autocorrelation properties of one system.
pub fn semigroup_reports(gen: &Generator, seed: u64) -> Result<Vec<InequalityReport>, CliError> {
    let inv = gen.invariants();
    let mut out = vec![
        worst("generator-row-sum", inv.max_row_sum, tolerances::ROW_SUM),
        worst("generator-reversibility", inv.max_reversibility_defect, tolerances::DETAILED_BALANCE),
        worst("generator-stationarity", inv.max_stationarity_defect, tolerances::STATIONARITY),
        worst("generator-off-diagonal-sign", (-inv.min_off_diagonal).max(0.0), 0.0),
    ];
    let f = random_test_function(gen.state_count(), seed, 0);
    let p0 = gen.semigroup_apply(&f, 0.0)?;
    out.push(worst(
        "semigroup-identity-at-zero",
        f.iter().zip(&p0).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())),
        tolerances::IDENTITY,
    ));
    let times = [0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
    let mean = gen.expectation(&f);
    let curves = gen.semigroup_curve(&f, &times)?;
    let drift = curves.iter().fold(0.0f64, |a, c| a.max((gen.expectation(c) - mean).abs()));
    out.push(worst("semigroup-mean-preserved", drift, tolerances::IDENTITY));

    let c = gen.time_correlation(&gen.spin(gen.system().geometry().origin()), &times)?;
    let negative = c.iter().fold(0.0f64, |a, v| a.max(-v));
    let rise = c.windows(2).fold(0.0f64, |a, w| a.max(w[1] - w[0]));
    // convexity on a nonuniform grid via second divided differences
    let mut concave = 0.0f64;
    for k in 1..times.len() - 1 {
        let s1 = (c[k] - c[k - 1]) / (times[k] - times[k - 1]);
        let s2 = (c[k + 1] - c[k]) / (times[k + 1] - times[k]);
        concave = concave.max(s1 - s2);
    }
    out.push(worst("autocorrelation-nonnegative", negative, tolerances::IDENTITY));
    out.push(worst("autocorrelation-nonincreasing", rise, tolerances::IDENTITY));
    out.push(worst("autocorrelation-convex", concave, tolerances::IDENTITY));
    if gen.system().geometry().is_torus() {
        out.extend(second_moment_identity(gen, &times)?);
    }
    Ok(out)
}

/// Every exact check on one torus.
///
/// The block-conditioning checks run only on tori of at most
/// [`CONDITIONAL_SITE_CAP`] sites whose sides admit a block period for
/// `cfg.ell`; elsewhere they are left out.
pub fn verify_battery(cfg: &ExperimentConfig, sides: &[usize]) -> Result<Vec<InequalityReport>, CliError> {
    let geom = Geometry::periodic_box(sides)?;
    let states = 1u64 << geom.site_count().min(63);
    if states > SEMIGROUP_STATE_CAP as u64 {
        return Err(LabError::CapExceeded { what: "verify state count", value: states, cap: SEMIGROUP_STATE_CAP as u64 }.into());
    }
    let sys = SpinSystem::new(geom.clone(), BoundaryCondition::Periodic)?;
    let model = RateModel::for_system(cfg.family, cfg.beta, &sys)?;
    let axioms = verify_rate_axioms(&model, &sys, 0, cfg.seed);
    let mut out = vec![
        axiom_report("finite-range", &axioms.finite_range),
        axiom_report("detailed-balance", &axioms.detailed_balance),
        axiom_report("bounds", &axioms.bounds),
        axiom_report("translation", &axioms.translation),
    ];
    let gen = Generator::new(sys, model)?;
    out.extend(semigroup_reports(&gen, cfg.seed)?);

    let lsi = lsi_constant(&gen, &LsiSearch { seed: cfg.seed, ..LsiSearch::default() })?;
    let gap = gen.spectral_gap()?;
    out.push(InequalityReport::inequality(
        "lsi-below-gap",
        lsi.gamma_hat,
        gap + tolerances::LSI_REFINE,
        lsi.certificate_hash(),
    ));
    let states = gen.state_count();
    let seed = cfg.seed;
    let gen_ref = &gen;
    let gamma = lsi.gamma_hat;
    type Job<'a> = Box<dyn Fn() -> isinglab::Result<Vec<InequalityReport>> + Send + Sync + 'a>;
    let mut jobs: Vec<Job> = Vec::new();
    for i in 0..cfg.functions as u64 {
        jobs.push(Box::new(move || {
            let f = random_test_function(states, seed, i);
            let mut r = verify_bodineau_helffer(gen_ref, gamma, &f)?;
            r.extend(verify_spectral_gap_inequality(gen_ref, &f, &[0.25, 1.0, 4.0])?);
            r.extend(verify_de_bruijn(gen_ref, &f, &[0.25, 1.0, 2.0])?);
            r.extend(verify_entropy_monotone(gen_ref, &f, &[0.0, 0.25, 0.5, 1.0, 2.0, 4.0])?);
            Ok(r)
        }));
    }
    out.extend(run_reports(jobs)?);

    let cs = if geom.site_count() <= CONDITIONAL_SITE_CAP {
        match ConditionalStructure::new(&geom, cfg.beta, cfg.ell) {
            Ok(cs) => Some(cs),
            Err(LabError::NoAdmissibleBlockSide { .. }) => None,
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    if let Some(cs) = cs {
        out.extend(conditional_reports(&cs, Some(&gen), cfg.functions.clamp(1, 5) as usize, seed)?);
    }

    let partition = geometric_partition(2.5, 8)?;
    let last = *partition.last().unwrap();
    let grid: Vec<f64> = (0..=200).map(|k| last.powf(k as f64 / 200.0)).collect();
    out.push(schedule_boundedness(cfg.delta, cfg.eta, 1.0, &partition, &grid)?);
    Ok(out)
}

/// Block-conditioning checks: Efron–Stein (annealed and for every grid
/// configuration), projection, factorization and the conditional-entropy
/// identity; the Jensen step as well when a generator is given.
pub fn conditional_reports(
    cs: &ConditionalStructure,
    gen: Option<&Generator>,
    functions: usize,
    seed: u64,
) -> Result<Vec<InequalityReport>, CliError> {
    let states = cs.state_count();
    let omegas = cs.grid_configs();
    let mut out = Vec::new();
    for i in 0..functions as u64 {
        let f = random_test_function(states, seed, 1000 + i);
        let g = random_test_function(states, seed, 2000 + i);
        out.push(verify_efron_stein(cs, None, &f)?);
        for &w in &omegas {
            out.push(verify_efron_stein(cs, Some(w), &f)?);
        }
        out.extend(verify_projection(cs, &f, &g)?);
    }
    for &w in &omegas {
        out.push(verify_factorization(cs, w));
        out.extend(conditional_entropy_identity(cs, w));
    }
    if let Some(gen) = gen {
        let step = omegas.len().div_ceil(16).max(1);
        let chosen: Vec<u64> = omegas.iter().copied().step_by(step).collect();
        let geom = cs.geometry();
        let x = (0..geom.site_count()).find(|&x| !cs.decomposition().is_grid(x)).unwrap_or(0);
        out.extend(verify_jensen_step(gen, cs, x, 1.0, &chosen)?);
    }
    Ok(out)
}

fn verify(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let mut payloads = Vec::new();
    let mut pass = true;
    for sides in cfg.shapes() {
        for r in verify_battery(cfg, &sides)? {
            pass &= r.pass;
            let mut v = to_value(&r);
            v.as_object_mut().unwrap().insert("sides".into(), to_value(&sides));
            payloads.push(v);
        }
    }
    Ok(Output { payloads, csv: None, pass })
}

fn shellsum(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let ls = log_spaced_sizes(2, cfg.l_max, cfg.per_decade);
    let mut payloads = Vec::new();
    let mut series = Vec::new();
    let mut pass = true;
    for &d in &cfg.shell_dimensions {
        for &delta in &cfg.deltas {
            let r = shell_sum_check(d, delta, &ls)?;
            let bounded = r.bounded(1.5);
            pass &= bounded;
            let s = ScalingSeries::new(
                &format!("shellsum-d{d}-delta{delta}"),
                r.ls.iter().map(|&l| l as f64).collect(),
                r.scaled.clone(),
                vec![0.0; r.ls.len()],
            )?;
            payloads.push(json!({
                "report": to_value(&r),
                "series": [to_value(&s)],
                "checks": [check("bounded", bounded)],
            }));
            series.push(s);
        }
    }
    let refs: Vec<&ScalingSeries> = series.iter().collect();
    Ok(Output { payloads, csv: Some(series_csv(&refs)), pass })
}

/// Series stored in a payload under `series`.
pub fn payload_series(payload: &Value) -> Result<Vec<ScalingSeries>, CliError> {
    match payload.get("series") {
        None => Ok(Vec::new()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Schema(format!("series: {e}"))),
    }
}

fn fit(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let input = cfg.fit_input.as_ref().expect("validated");
    let window = cfg.window.expect("validated");
    let records = read_records(input)?;
    let mut payloads = Vec::new();
    let mut fitted_all = Vec::new();
    for r in &records {
        for s in payload_series(&r.payload)? {
            if cfg.fit_series.as_ref().is_some_and(|want| *want != s.label) {
                continue;
            }
            let fitted = fit_power_law(&s, window, &FitOptions { bootstrap: cfg.bootstrap, seed: cfg.seed })?;
            payloads.push(json!({
                "source_digest": r.config_digest,
                "series": [to_value(&fitted)],
                "fit": to_value(&fitted.fit),
            }));
            fitted_all.push(fitted);
        }
    }
    if payloads.is_empty() {
        return Err(CliError::Check(format!("no matching series in {}", input.display())));
    }
    let refs: Vec<&ScalingSeries> = fitted_all.iter().collect();
    Ok(Output { payloads, csv: Some(series_csv(&refs)), pass: true })
}
