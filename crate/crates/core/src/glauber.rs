//! Glauber flip rates and exact continuous-time simulation.
//!
//! Rates are functions of `σ_x · h_x`, the spin times its local field
//! (boundary spins included). They satisfy
//! `c(x, σ) / c(x, σ^x) = exp(-2β σ_x h_x)`, which makes the dynamics
//! reversible for the Gibbs weight `exp(β H)`: flips that raise `H` are
//! favoured.

use std::collections::HashMap;
use std::io::{self, Read, Write};

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gibbs::{ExactMeasure, SpinConfig, SpinSystem};
use crate::rng::{self, LabRng};
use crate::tolerances;

/// Interaction range of every rate family here.
pub const RANGE: i64 = 1;

/// Largest site count for exhaustive axiom checks.
pub const EXHAUSTIVE_CAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateFamily {
    Metropolis,
    #[serde(alias = "heat-bath", alias = "heat_bath")]
    Heatbath,
}

impl RateFamily {
    pub fn name(self) -> &'static str {
        match self {
            RateFamily::Metropolis => "metropolis",
            RateFamily::Heatbath => "heatbath",
        }
    }

    /// Rate as a function of `σ_x h_x`.
    pub fn rate(self, beta: f64, spin_field: i32) -> f64 {
        let e = 2.0 * beta * spin_field as f64;
        match self {
            RateFamily::Metropolis => (-e).exp().min(1.0),
            RateFamily::Heatbath => 1.0 / (1.0 + e.exp()),
        }
    }
}

impl std::str::FromStr for RateFamily {
    type Err = crate::LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metropolis" => Ok(RateFamily::Metropolis),
            "heatbath" | "heat-bath" | "heat_bath" => Ok(RateFamily::Heatbath),
            _ => Err(invalid(format!("unknown rate family {s:?}"))),
        }
    }
}

/// A rate family at fixed `β`, tabulated for `|σ_x h_x| <= max_field`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateModel {
    family: RateFamily,
    beta: f64,
    max_field: i32,
    table: Vec<f64>,
    c_min: f64,
    c_max: f64,
}

impl RateModel {
    pub fn new(family: RateFamily, beta: f64, max_field: i32) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(invalid(format!("beta must be finite and nonnegative, got {beta}")));
        }
        let table: Vec<f64> = (-max_field..=max_field).map(|p| family.rate(beta, p)).collect();
        let c_min = table.iter().copied().fold(f64::INFINITY, f64::min);
        let c_max = table.iter().copied().fold(0.0, f64::max);
        Ok(RateModel {
            family,
            beta,
            max_field,
            table,
            c_min,
            c_max,
        })
    }

    /// Model with bounds declared for the largest field that occurs in `sys`.
    pub fn for_system(family: RateFamily, beta: f64, sys: &SpinSystem) -> Result<Self> {
        Self::new(family, beta, sys.max_field().max(1))
    }

    pub fn family(&self) -> RateFamily {
        self.family
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn max_field(&self) -> i32 {
        self.max_field
    }

    /// Declared lower bound `c_m`.
    pub fn c_min(&self) -> f64 {
        self.c_min
    }

    /// Declared upper bound `c_M`.
    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    #[inline]
    pub fn rate_for(&self, spin_field: i32) -> f64 {
        if spin_field.abs() <= self.max_field {
            self.table[(spin_field + self.max_field) as usize]
        } else {
            self.family.rate(self.beta, spin_field)
        }
    }

    pub fn rate(&self, sys: &SpinSystem, sigma: &[i8], x: usize) -> f64 {
        self.rate_for(sigma[x] as i32 * sys.local_field(sigma, x))
    }
}

/// Anything that assigns a flip rate to `(x, σ)`; lets the axiom checker run
/// on deliberately broken rates.
pub trait FlipRates: Sync {
    fn beta(&self) -> f64;
    fn declared_bounds(&self) -> (f64, f64);
    fn rate(&self, sys: &SpinSystem, sigma: &[i8], x: usize) -> f64;
}

impl FlipRates for RateModel {
    fn beta(&self) -> f64 {
        self.beta
    }

    fn declared_bounds(&self) -> (f64, f64) {
        (self.c_min, self.c_max)
    }

    fn rate(&self, sys: &SpinSystem, sigma: &[i8], x: usize) -> f64 {
        RateModel::rate(self, sys, sigma, x)
    }
}

/// `c(x, σ)` for a concrete configuration; `x` must be a site of the volume.
pub fn rate(model: &RateModel, sys: &SpinSystem, sigma: &SpinConfig, x: usize) -> Result<f64> {
    sys.check_config(sigma)?;
    if x >= sys.site_count() {
        return Err(invalid(format!("site {x} out of range")));
    }
    Ok(model.rate(sys, sigma.spins(), x))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomCheck {
    pub pass: bool,
    pub checked: u64,
    pub max_violation: f64,
    pub note: String,
}

impl AxiomCheck {
    fn new(note: &str) -> Self {
        AxiomCheck {
            pass: true,
            checked: 0,
            max_violation: 0.0,
            note: note.into(),
        }
    }

    fn record(&mut self, violation: f64, tol: f64) {
        self.checked += 1;
        if violation > self.max_violation {
            self.max_violation = violation;
        }
        if violation > tol {
            self.pass = false;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateAxiomReport {
    pub exhaustive: bool,
    pub finite_range: AxiomCheck,
    pub detailed_balance: AxiomCheck,
    pub bounds: AxiomCheck,
    pub translation: AxiomCheck,
    pub observed_min: f64,
    pub observed_max: f64,
    /// Observed extremes coincide with the declared bounds.
    pub bounds_tight: bool,
}

impl RateAxiomReport {
    pub fn all_pass(&self) -> bool {
        self.finite_range.pass && self.detailed_balance.pass && self.bounds.pass && self.translation.pass
    }
}

/// Check locality, detailed balance, boundedness and translation covariance.
///
/// Systems with at most [`EXHAUSTIVE_CAP`] sites are checked on every
/// configuration, with detailed balance tested against the enumerated
/// measure; larger systems use `samples` random configurations and the
/// Boltzmann ratio instead.
pub fn verify_rate_axioms(rates: &dyn FlipRates, sys: &SpinSystem, samples: usize, seed: u64) -> RateAxiomReport {
    let n = sys.site_count();
    let geom = sys.geometry();
    let exhaustive = n <= EXHAUSTIVE_CAP;
    let beta = rates.beta();
    let (c_m, c_big) = rates.declared_bounds();

    let measure = if exhaustive {
        ExactMeasure::new(sys.clone(), beta, EXHAUSTIVE_CAP).ok()
    } else {
        None
    };

    let configs: Box<dyn Iterator<Item = Vec<i8>>> = if exhaustive {
        Box::new((0..1u64 << n).map(move |s| SpinConfig::from_state(s, n).spins().to_vec()))
    } else {
        let mut rng: LabRng = rng::stream(seed, "rate_axioms", 0);
        Box::new((0..samples).map(move |_| {
            (0..n).map(|_| if rng.random::<bool>() { 1i8 } else { -1 }).collect()
        }))
    };

    let mut finite_range = AxiomCheck::new("c(x, σ^y) = c(x, σ) for every y outside the sup-ball of radius 1");
    let mut detailed_balance = AxiomCheck::new(if exhaustive {
        "μ(σ) c(x, σ) = μ(σ^x) c(x, σ^x) against the enumerated measure"
    } else {
        "c(x, σ) / c(x, σ^x) = exp(β ΔH) on sampled configurations"
    });
    let mut bounds = AxiomCheck::new("c_m <= c(x, σ) <= c_M");
    let mut translation = AxiomCheck::new(if geom.is_torus() {
        "c(x, σ) = c(x + k, τ_{-k} σ) for all shifts k"
    } else {
        "equal rates for equal translated neighbourhood patterns"
    });
    let mut observed_min = f64::INFINITY;
    let mut observed_max = 0.0f64;

    let far: Vec<Vec<usize>> = (0..n)
        .map(|x| (0..n).filter(|&y| geom.sup_distance(x, y) > RANGE).collect())
        .collect();
    // perms[k][y] = y + k for every shift k of the torus
    let perms: Vec<Vec<usize>> = if geom.is_torus() {
        (0..n)
            .map(|s| {
                let k = geom.coords(s).to_vec();
                (0..n).map(|y| geom.translate(y, &k).unwrap()).collect()
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut shifted = vec![0i8; n];
    let mut patterns: HashMap<Vec<i8>, f64> = HashMap::new();
    let omega = sys.omega();

    for mut sigma in configs {
        for x in 0..n {
            let c = rates.rate(sys, &sigma, x);
            observed_min = observed_min.min(c);
            observed_max = observed_max.max(c);
            let below = (c_m - c).max(0.0);
            let above = (c - c_big).max(0.0);
            bounds.record(below.max(above) + if c > 0.0 { 0.0 } else { 1.0 }, 0.0);

            for &y in &far[x] {
                sigma[y] = -sigma[y];
                let cy = rates.rate(sys, &sigma, x);
                sigma[y] = -sigma[y];
                finite_range.record((cy - c).abs(), 0.0);
            }

            sigma[x] = -sigma[x];
            let cf = rates.rate(sys, &sigma, x);
            let flipped_state = SpinConfig(sigma.clone()).to_state();
            sigma[x] = -sigma[x];
            match &measure {
                Some(m) => {
                    let s = SpinConfig(sigma.clone()).to_state();
                    let lhs = m.probs()[s as usize] * c;
                    let rhs = m.probs()[flipped_state as usize] * cf;
                    detailed_balance.record(rel_diff(lhs, rhs), tolerances::DETAILED_BALANCE);
                }
                None => {
                    let expected = (-2.0 * beta * (sigma[x] as i32 * sys.local_field(&sigma, x)) as f64).exp();
                    detailed_balance.record(rel_diff(c / cf, expected), tolerances::DETAILED_BALANCE);
                }
            }

            if !geom.is_torus() {
                let mut key = Vec::with_capacity(geom.directional(x).len() + 1);
                key.push(sigma[x]);
                for slot in geom.directional(x) {
                    key.push(match *slot {
                        crate::lattice::Slot::Site(j) => sigma[j],
                        crate::lattice::Slot::Boundary(b) => omega[b],
                    });
                }
                let prev = *patterns.entry(key).or_insert(c);
                translation.record((prev - c).abs(), 0.0);
            }
        }
        for perm in &perms {
            for y in 0..n {
                shifted[perm[y]] = sigma[y];
            }
            for x in 0..n {
                let ck = rates.rate(sys, &shifted, perm[x]);
                translation.record((ck - rates.rate(sys, &sigma, x)).abs(), 0.0);
            }
        }
    }
    let tight = rel_diff(observed_min, c_m) <= 1e-15 && rel_diff(observed_max, c_big) <= 1e-15;
    RateAxiomReport {
        exhaustive,
        finite_range,
        detailed_balance,
        bounds,
        translation,
        observed_min,
        observed_max,
        bounds_tight: tight,
    }
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// One ring of the uniformizing clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub site: u32,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: SpinConfig,
    pub events: Vec<Event>,
    pub final_config: SpinConfig,
    pub horizon: f64,
}

impl Trajectory {
    /// Apply the accepted events to the initial configuration.
    pub fn replay(&self) -> SpinConfig {
        let mut s = self.initial.clone();
        for e in self.events.iter().filter(|e| e.accepted) {
            s.flip(e.site as usize);
        }
        s
    }

    pub fn flip_count(&self) -> usize {
        self.events.iter().filter(|e| e.accepted).count()
    }
}

/// Uniformized Glauber process: a Poisson clock of rate `n c_M`, a uniform
/// site at each ring, and a flip with probability `c(x, σ) / c_M`.
#[derive(Debug, Clone)]
pub struct CtSimulator<'a> {
    model: &'a RateModel,
    sys: &'a SpinSystem,
    sigma: Vec<i8>,
    time: f64,
    next_ring: f64,
    clock_rate: f64,
    rng: LabRng,
}

impl<'a> CtSimulator<'a> {
    pub fn new(model: &'a RateModel, sys: &'a SpinSystem, initial: &SpinConfig, mut rng: LabRng) -> Self {
        let clock_rate = sys.site_count() as f64 * model.c_max();
        let first: f64 = rng.sample::<f64, _>(Exp1) / clock_rate;
        CtSimulator {
            model,
            sys,
            sigma: initial.spins().to_vec(),
            time: 0.0,
            next_ring: first,
            clock_rate,
            rng,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn spins(&self) -> &[i8] {
        &self.sigma
    }

    /// Process every ring in `(time, t_end]`, reporting each to `on_event`.
    pub fn run_until(&mut self, t_end: f64, mut on_event: impl FnMut(Event)) {
        let n = self.sigma.len();
        let c_max = self.model.c_max();
        while self.next_ring <= t_end {
            let x = self.rng.random_range(0..n);
            let c = self.model.rate(self.sys, &self.sigma, x);
            let accepted = self.rng.random::<f64>() * c_max < c;
            if accepted {
                self.sigma[x] = -self.sigma[x];
            }
            on_event(Event {
                time: self.next_ring,
                site: x as u32,
                accepted,
            });
            self.next_ring += self.rng.sample::<f64, _>(Exp1) / self.clock_rate;
        }
        self.time = self.time.max(t_end);
    }
}

/// Simulate on `[0, horizon]` from `initial`, recording every clock ring.
pub fn simulate_ct(
    model: &RateModel,
    sys: &SpinSystem,
    initial: &SpinConfig,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory> {
    sys.check_config(initial)?;
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(invalid(format!("horizon must be finite and nonnegative, got {horizon}")));
    }
    let mut sim = CtSimulator::new(model, sys, initial, rng::stream(seed, "simulate_ct", 0));
    let mut events = Vec::new();
    sim.run_until(horizon, |e| events.push(e));
    Ok(Trajectory {
        initial: initial.clone(),
        final_config: SpinConfig(sim.spins().to_vec()),
        events,
        horizon,
    })
}

/// Outcome of the grand monotone coupling of two heat-bath chains.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub rings: u64,
    pub ordered_throughout: bool,
    pub lower: SpinConfig,
    pub upper: SpinConfig,
}

/// Run two heat-bath chains from `lower <= upper` with shared randomness.
///
/// Each site carries a unit-rate clock; at a ring both chains resample the
/// spin from its conditional law with the same uniform. The flip rate of
/// this update is exactly the heat-bath rate.
pub fn coupled_heat_bath(
    beta: f64,
    sys: &SpinSystem,
    lower: &SpinConfig,
    upper: &SpinConfig,
    horizon: f64,
    seed: u64,
) -> Result<CoupledRun> {
    sys.check_config(lower)?;
    sys.check_config(upper)?;
    if !lower.le(upper) {
        return Err(invalid("coupled chains need lower <= upper"));
    }
    let n = sys.site_count();
    let mut rng = rng::stream(seed, "coupled_heat_bath", 0);
    let mut lo = lower.spins().to_vec();
    let mut hi = upper.spins().to_vec();
    let plus = |h: i32| 1.0 / (1.0 + (-2.0 * beta * h as f64).exp());
    let mut t = rng.sample::<f64, _>(Exp1) / n as f64;
    let mut rings = 0;
    let mut ordered = true;
    while t <= horizon {
        let x = rng.random_range(0..n);
        let u: f64 = rng.random();
        lo[x] = if u < plus(sys.local_field(&lo, x)) { 1 } else { -1 };
        hi[x] = if u < plus(sys.local_field(&hi, x)) { 1 } else { -1 };
        ordered &= lo.iter().zip(&hi).all(|(a, b)| a <= b);
        rings += 1;
        t += rng.sample::<f64, _>(Exp1) / n as f64;
    }
    Ok(CoupledRun {
        rings,
        ordered_throughout: ordered,
        lower: SpinConfig(lo),
        upper: SpinConfig(hi),
    })
}

/// Bytes per record of the binary event log.
pub const EVENT_RECORD_BYTES: usize = 13;

/// Little-endian records: `u64` bits of the event time, `u32` site, `u8`
/// flag (1 = flip accepted). No header.
pub fn write_event_log(mut w: impl Write, events: &[Event]) -> io::Result<()> {
    for e in events {
        w.write_all(&e.time.to_bits().to_le_bytes())?;
        w.write_all(&e.site.to_le_bytes())?;
        w.write_all(&[e.accepted as u8])?;
    }
    Ok(())
}

pub fn read_event_log(mut r: impl Read) -> io::Result<Vec<Event>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() % EVENT_RECORD_BYTES != 0 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "truncated event log"));
    }
    buf.chunks_exact(EVENT_RECORD_BYTES)
        .map(|c| {
            let flag = c[12];
            if flag > 1 {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "bad event flag"));
            }
            Ok(Event {
                time: f64::from_bits(u64::from_le_bytes(c[..8].try_into().unwrap())),
                site: u32::from_le_bytes(c[8..12].try_into().unwrap()),
                accepted: flag == 1,
            })
        })
        .collect()
}
