//! Parameter scans built on the ladder and the perturbative model: fringes
//! versus chirp acceleration, mu scans, velocity-deviation scans and thermal
//! averages, plus CSV/JSON output.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gauss_quad::hermite::GaussHermite;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{
    self, canonical_populations, canonical_timing, compose_sequence, composed_populations, distance_sqr, pulse1_state,
    AnalyticError, Amplitudes, StateLabel,
};
use crate::ladder::{populations, run_sequence, LadderState, SimError, Tolerances};
use crate::physics::{self, sigma_p_from_temperature, PhysicsError};
use crate::sequence::SequenceSpec;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid scan: {0}")]
    InvalidSpec(String),
    #[error("numeric engine failed at {axis} = {value:e}: {source}")]
    Numeric { axis: String, value: f64, source: SimError },
    #[error("analytic engine failed at {axis} = {value:e}: {source}")]
    Analytic { axis: String, value: f64, source: AnalyticError },
    #[error("thermal node {node} (p = {p:e} kg m/s): {source}")]
    Node { node: usize, p: f64, source: Box<ExperimentError> },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] AnalyticError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Small value types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Numeric,
    Analytic,
    Both,
}

impl Engine {
    pub fn numeric(self) -> bool {
        matches!(self, Engine::Numeric | Engine::Both)
    }

    pub fn analytic(self) -> bool {
        matches!(self, Engine::Analytic | Engine::Both)
    }
}

impl FromStr for Engine {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "numeric" => Ok(Engine::Numeric),
            "analytic" => Ok(Engine::Analytic),
            "both" => Ok(Engine::Both),
            _ => Err(format!("unknown engine `{s}` (numeric, analytic or both)")),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Numeric => "numeric",
            Engine::Analytic => "analytic",
            Engine::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanKind {
    /// Full sequence, chirp acceleration `g_r` swept.
    FringeGr,
    /// First two pulses, `mu` swept through the Rabi frequency.
    Mu,
    /// First pulse only, `v0` swept; compared with the closed form.
    Velocity,
    /// Full sequence, cloud temperature swept.
    Temperature,
}

impl ScanKind {
    pub fn label(self) -> &'static str {
        match self {
            ScanKind::FringeGr => "fringes",
            ScanKind::Mu => "mu-scan",
            ScanKind::Velocity => "velocity",
            ScanKind::Temperature => "temperature",
        }
    }

    pub fn axis(self) -> (&'static str, &'static str) {
        match self {
            ScanKind::FringeGr => ("g_r", "m/s^2"),
            ScanKind::Mu => ("mu", "1"),
            ScanKind::Velocity => ("v0", "m/s"),
            ScanKind::Temperature => ("T_C", "K"),
        }
    }
}

/// `steps` points from `lo` to `hi` inclusive, linear or logarithmic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
    #[serde(default)]
    pub log: bool,
}

impl Range {
    pub fn linear(lo: f64, hi: f64, steps: usize) -> Self {
        Range { lo, hi, steps, log: false }
    }

    pub fn logarithmic(lo: f64, hi: f64, steps: usize) -> Self {
        Range { lo, hi, steps, log: true }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidSpec(m));
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return bad(format!("range bounds must be finite ({}, {})", self.lo, self.hi));
        }
        if self.steps < 2 {
            return bad(format!("range needs at least 2 steps, got {}", self.steps));
        }
        if !(self.lo < self.hi) {
            return bad(format!("range needs lo < hi, got {}:{}", self.lo, self.hi));
        }
        if self.log && !(self.lo > 0.0 && self.hi > 0.0) {
            return bad("logarithmic ranges need positive bounds".into());
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let last = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| {
                let f = i as f64 / last;
                if i + 1 == self.steps {
                    self.hi
                } else if self.log {
                    self.lo * (self.hi / self.lo).powf(f)
                } else {
                    self.lo + (self.hi - self.lo) * f
                }
            })
            .collect()
    }
}

/// Parses `lo:hi:steps`.
impl FromStr for Range {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected lo:hi:steps, got `{s}`"));
        }
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
        let steps = parts[2].trim().parse::<usize>().map_err(|e| format!("`{}`: {e}", parts[2]))?;
        let r = Range::linear(num(parts[0])?, num(parts[1])?, steps);
        r.validate().map_err(|e| e.to_string())?;
        Ok(r)
    }
}

/// A Maxwell-Boltzmann cloud sampled with Gauss-Hermite quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thermal {
    /// K
    pub temperature: f64,
    /// Odd, so that p = 0 is a node.
    pub nodes: usize,
}

pub const DEFAULT_THERMAL_NODES: usize = 21;

// ---------------------------------------------------------------------------
// Thermal averaging
// ---------------------------------------------------------------------------

/// Momentum nodes and normalised weights for `N(0, sigma_p^2)`.
pub fn thermal_nodes(sigma_p: f64, nodes: usize) -> Result<Vec<(f64, f64)>, ExperimentError> {
    if nodes % 2 == 0 {
        return Err(ExperimentError::InvalidSpec(format!("thermal node count must be odd, got {nodes}")));
    }
    if !(sigma_p.is_finite() && sigma_p >= 0.0) {
        return Err(ExperimentError::InvalidSpec(format!("sigma_p must be finite and >= 0, got {sigma_p}")));
    }
    if nodes == 1 || sigma_p == 0.0 {
        return Ok(vec![(0.0, 1.0)]);
    }
    let rule = GaussHermite::new(NonZeroUsize::new(nodes).expect("odd count is nonzero"));
    let norm = std::f64::consts::PI.sqrt();
    let scale = std::f64::consts::SQRT_2 * sigma_p;
    let mut out: Vec<(f64, f64)> = rule.as_node_weight_pairs().iter().map(|&(x, w)| (scale * x, w / norm)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    // The rule is symmetric; pin the middle node so p = 0 is hit exactly.
    out[nodes / 2].0 = 0.0;
    Ok(out)
}

/// Weighted average of a vector-valued evaluator over the thermal momentum
/// distribution. Nodes are evaluated in order and summed in order.
pub fn thermal_average_vec<F>(eval: F, sigma_p: f64, nodes: usize) -> Result<Vec<f64>, ExperimentError>
where
    F: Fn(f64) -> Result<Vec<f64>, ExperimentError>,
{
    let grid = thermal_nodes(sigma_p, nodes)?;
    if grid.len() == 1 {
        return eval(0.0);
    }
    let mut acc: Vec<f64> = Vec::new();
    for (i, &(p, w)) in grid.iter().enumerate() {
        let v = eval(p).map_err(|e| ExperimentError::Node { node: i, p, source: Box::new(e) })?;
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += w * x;
        }
    }
    Ok(acc)
}

/// Thermal average of `(P_a, P_b)`.
pub fn thermal_average<F>(eval: F, sigma_p: f64, nodes: usize) -> Result<(f64, f64), ExperimentError>
where
    F: Fn(f64) -> Result<(f64, f64), ExperimentError>,
{
    let v = thermal_average_vec(|p| eval(p).map(|(a, b)| vec![a, b]), sigma_p, nodes)?;
    Ok((v[0], v[1]))
}

// ---------------------------------------------------------------------------
// Single-sequence evaluation
// ---------------------------------------------------------------------------

/// Ladder amplitudes keyed like the closed forms.
pub fn ladder_amplitudes(state: &LadderState) -> Amplitudes {
    let mut m = Amplitudes::new();
    for n in state.rungs() {
        m.insert(StateLabel::a(n), state.a(n));
        m.insert(StateLabel::b(n), state.b(n));
    }
    m
}

/// Which closed-form route produced an analytic number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticRoute {
    /// Fringe coefficients of the canonical sequence.
    Canonical,
    /// Pulse-by-pulse block composition.
    Composed,
}

/// Closed-form `(P_a, P_b)`: fringe coefficients for the canonical
/// sequence, block composition for anything else.
pub fn analytic_populations(seq: &SequenceSpec, p: f64) -> Result<((f64, f64), AnalyticRoute), AnalyticError> {
    match canonical_populations(seq, p) {
        Ok(v) => Ok((v, AnalyticRoute::Canonical)),
        Err(AnalyticError::NotCanonical(_)) => Ok((composed_populations(seq, p, false)?, AnalyticRoute::Composed)),
        Err(e) => Err(e),
    }
}

/// Numeric `(P_a, P_b)` for a whole sequence.
pub fn numeric_populations(seq: &SequenceSpec, p: f64, n_max: usize, tol: Tolerances) -> Result<(f64, f64), SimError> {
    let pops = populations(&run_sequence(seq, p, n_max, tol)?);
    Ok((pops.p_a, pops.p_b))
}

/// Per-pulse perturbative parameters of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseDiagnostics {
    pub index: usize,
    pub direction: char,
    pub area: f64,
    pub rung: i32,
    pub start: f64,
    pub duration: f64,
    pub rabi: f64,
    pub eta: f64,
    pub beta: f64,
    pub mu: f64,
}

/// One sequence at one momentum offset (or thermally averaged around it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub numeric: Pops,
    pub analytic: Option<Pops>,
    pub analytic_route: Option<AnalyticRoute>,
    /// Rung populations at the central momentum.
    pub per_rung: Vec<crate::ladder::RungPopulation>,
    pub pulses: Vec<PulseDiagnostics>,
    pub p: f64,
    pub thermal: Option<Thermal>,
    pub n_max: usize,
    pub tol: Tolerances,
    pub sequence: String,
    pub units: BTreeMap<String, String>,
}

pub fn single_run(
    seq: &SequenceSpec,
    p: f64,
    n_max: usize,
    tol: Tolerances,
    thermal: Option<Thermal>,
) -> Result<RunReport, ExperimentError> {
    let params = seq.params()?;
    let centre = run_sequence(seq, p, n_max, tol)?;
    let pops = populations(&centre);
    let numeric = match thermal {
        Some(th) => {
            let sigma = sigma_p_from_temperature(&seq.species, th.temperature)?;
            let (p_a, p_b) = thermal_average(
                |dp| numeric_populations(seq, p + dp, n_max, tol).map_err(ExperimentError::from),
                sigma,
                th.nodes,
            )?;
            Pops { p_a, p_b }
        }
        None => Pops { p_a: pops.p_a, p_b: pops.p_b },
    };
    let (analytic, analytic_route) = match (thermal, analytic_populations(seq, p)) {
        (None, Ok(((p_a, p_b), route))) => (Some(Pops { p_a, p_b }), Some(route)),
        _ => (None, None),
    };
    let pulses = analytic::pulse_frames(seq, p, false)?
        .into_iter()
        .zip(seq.pulses())
        .enumerate()
        .map(|(index, (f, spec))| PulseDiagnostics {
            index: index + 1,
            direction: f.direction.symbol(),
            area: spec.area,
            rung: f.rung,
            start: f.start,
            duration: f.duration,
            rabi: f.rabi,
            eta: f.eta,
            beta: f.beta,
            mu: physics::mu(&params, f.rabi),
        })
        .collect();
    let units = [
        ("P_a", "1"),
        ("P_b", "1"),
        ("p", "kg m/s"),
        ("start", "s"),
        ("duration", "s"),
        ("rabi", "rad/s"),
        ("area", "rad"),
        ("eta", "1"),
        ("beta", "1"),
        ("mu", "1"),
        ("temperature", "K"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    Ok(RunReport {
        numeric,
        analytic,
        analytic_route,
        per_rung: pops.per_rung,
        pulses,
        p,
        thermal,
        n_max,
        tol,
        sequence: seq.to_text(),
        units,
    })
}

// ---------------------------------------------------------------------------
// Scans
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub kind: ScanKind,
    pub range: Range,
    pub base: SequenceSpec,
    pub engine: Engine,
    pub thermal: Option<Thermal>,
    pub n_max: usize,
    pub tol: Tolerances,
    /// Worker threads; `None` uses the rayon default. Results do not depend
    /// on it.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl ScanSpec {
    pub fn new(kind: ScanKind, range: Range, base: SequenceSpec) -> Self {
        ScanSpec {
            kind,
            range,
            base,
            engine: Engine::Numeric,
            thermal: None,
            n_max: crate::ladder::DEFAULT_N_MAX,
            tol: Tolerances::default(),
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.range.validate()?;
        self.validate_settings()?;
        self.check_axis(self.range.lo)?;
        self.check_axis(self.range.hi)
    }

    /// Everything except the range.
    pub fn validate_settings(&self) -> Result<(), ExperimentError> {
        self.base.validate().map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?;
        self.tol.validate()?;
        if self.n_max < 2 {
            return Err(ExperimentError::InvalidSpec(format!("n_max must be >= 2, got {}", self.n_max)));
        }
        if let Some(th) = self.thermal {
            if !(th.temperature.is_finite() && th.temperature >= 0.0) {
                return Err(ExperimentError::InvalidSpec(format!("temperature must be >= 0 K, got {}", th.temperature)));
            }
            if th.nodes % 2 == 0 {
                return Err(ExperimentError::InvalidSpec(format!("thermal node count must be odd, got {}", th.nodes)));
            }
        }
        if self.workers == Some(0) {
            return Err(ExperimentError::InvalidSpec("workers must be >= 1".into()));
        }
        let need = match self.kind {
            ScanKind::Mu => 2,
            _ => 1,
        };
        if self.base.pulse_count() < need {
            return Err(ExperimentError::InvalidSpec(format!("{} scan needs at least {need} pulses", self.kind.label())));
        }
        Ok(())
    }

    fn check_axis(&self, x: f64) -> Result<(), ExperimentError> {
        let name = self.kind.axis().0;
        let ok = match self.kind {
            ScanKind::Mu | ScanKind::Velocity => x > 0.0,
            ScanKind::Temperature => x >= 0.0,
            ScanKind::FringeGr => true,
        };
        if ok && x.is_finite() {
            Ok(())
        } else {
            Err(ExperimentError::InvalidSpec(format!("{name} = {x} is out of range for a {} scan", self.kind.label())))
        }
    }

    /// Extra columns carried by each point, after `P_a`, `P_b`.
    pub fn extra_columns(&self) -> Vec<String> {
        let base: Vec<&str> = match self.kind {
            ScanKind::FringeGr => vec!["gamma"],
            ScanKind::Mu => vec!["P_a0", "P_a2", "P_b-1"],
            ScanKind::Velocity => vec!["eta1", "distance_sqr"],
            ScanKind::Temperature => vec!["sigma_p"],
        };
        base.into_iter().map(String::from).collect()
    }

    /// The sequence evaluated at axis value `x`.
    pub fn sequence_at(&self, x: f64) -> Result<SequenceSpec, ExperimentError> {
        let mut seq = self.base.clone();
        match self.kind {
            ScanKind::FringeGr => seq.g_r = x,
            ScanKind::Mu => {
                let params = seq.params()?;
                seq.rabi = params.omega_r / x;
                seq = seq.first_pulses(2);
            }
            ScanKind::Velocity => {
                seq.v0 = x;
                seq = seq.first_pulses(1);
            }
            ScanKind::Temperature => {}
        }
        Ok(seq)
    }

    fn sigma_p_at(&self, x: f64) -> Result<(f64, usize), ExperimentError> {
        match (self.kind, self.thermal) {
            (ScanKind::Temperature, th) => {
                let nodes = th.map_or(DEFAULT_THERMAL_NODES, |t| t.nodes);
                Ok((sigma_p_from_temperature(&self.base.species, x)?, nodes))
            }
            (_, Some(th)) => Ok((sigma_p_from_temperature(&self.base.species, th.temperature)?, th.nodes)),
            (_, None) => Ok((0.0, 1)),
        }
    }
}

/// `(P_a, P_b)` from one engine at one axis value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pops {
    pub p_a: f64,
    pub p_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub axis: f64,
    pub numeric: Option<Pops>,
    pub analytic: Option<Pops>,
    /// Named extra observables, numeric engine first when both ran
    /// (analytic ones carry an `_analytic` suffix).
    pub extra: BTreeMap<String, f64>,
}

impl ScanPoint {
    /// Numeric populations if computed, else analytic.
    pub fn primary(&self) -> Pops {
        self.numeric.or(self.analytic).expect("every point carries at least one engine")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub code_version: String,
    pub kind: ScanKind,
    pub axis: String,
    pub axis_unit: String,
    pub range: Range,
    pub engine: Engine,
    pub thermal: Option<Thermal>,
    pub n_max: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub species: String,
    pub mass_kg: f64,
    pub wavelength_m: f64,
    pub rabi: f64,
    pub v0: f64,
    pub z0: f64,
    pub g: f64,
    pub g_r: f64,
    pub sequence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub contrast_numeric: Option<f64>,
    pub contrast_analytic: Option<f64>,
    /// Closed-form fringe period in `g_r` (canonical fringe scans only).
    pub analytic_period: Option<f64>,
    pub analytic_route: Option<AnalyticRoute>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub metadata: Metadata,
    /// Names of the extra per-point observables.
    pub columns: Vec<String>,
    pub points: Vec<ScanPoint>,
    pub summary: Summary,
    pub warnings: Vec<String>,
    /// SI unit of every field and column.
    pub units: BTreeMap<String, String>,
}

/// Michelson contrast `(max - min) / (max + min)`.
pub fn contrast(values: &[f64]) -> f64 {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() || hi + lo == 0.0 {
        return 0.0;
    }
    (hi - lo) / (hi + lo)
}

fn axis_err_numeric(spec: &ScanSpec, x: f64) -> impl Fn(SimError) -> ExperimentError + '_ {
    move |source| ExperimentError::Numeric { axis: spec.kind.axis().0.into(), value: x, source }
}

fn axis_err_analytic(spec: &ScanSpec, x: f64) -> impl Fn(AnalyticError) -> ExperimentError + '_ {
    move |source| ExperimentError::Analytic { axis: spec.kind.axis().0.into(), value: x, source }
}

/// Numeric observables `[P_a, P_b, extras...]` at momentum `p`.
fn numeric_observables(spec: &ScanSpec, seq: &SequenceSpec, x: f64, p: f64) -> Result<Vec<f64>, ExperimentError> {
    let wrap = axis_err_numeric(spec, x);
    let state = run_sequence(seq, p, spec.n_max, spec.tol).map_err(&wrap)?;
    let pops = populations(&state);
    let mut v = vec![pops.p_a, pops.p_b];
    match spec.kind {
        ScanKind::FringeGr => v.push(seq.g - seq.g_r),
        ScanKind::Mu => {
            v.push(state.a(0).norm_sqr());
            v.push(state.a(2).norm_sqr());
            v.push(state.b(-1).norm_sqr());
        }
        ScanKind::Velocity => {
            let (eta1, mu, beta) = first_pulse_params(seq, p).map_err(axis_err_analytic(spec, x))?;
            v.push(eta1);
            v.push(distance_sqr(&ladder_amplitudes(&state), &pulse1_state(beta, eta1, mu)));
        }
        ScanKind::Temperature => {}
    }
    Ok(v)
}

fn first_pulse_params(seq: &SequenceSpec, p: f64) -> Result<(f64, f64, f64), AnalyticError> {
    let params = seq.params()?;
    let tp = &seq.timeline()[0];
    let eta1 = physics::eta(&params, tp.rabi, seq.v0 + seq.g * tp.end)?;
    Ok((eta1, physics::mu(&params, seq.rabi), physics::beta(&params, p, seq.rabi)))
}

/// Analytic observables `[P_a, P_b, extras...]` at momentum `p`.
fn analytic_observables(
    spec: &ScanSpec,
    seq: &SequenceSpec,
    x: f64,
    p: f64,
) -> Result<(Vec<f64>, AnalyticRoute), ExperimentError> {
    let wrap = axis_err_analytic(spec, x);
    match spec.kind {
        ScanKind::FringeGr | ScanKind::Temperature => {
            let ((pa, pb), route) = analytic_populations(seq, p).map_err(&wrap)?;
            let mut v = vec![pa, pb];
            if spec.kind == ScanKind::FringeGr {
                v.push(seq.g - seq.g_r);
            }
            Ok((v, route))
        }
        ScanKind::Mu => {
            // Block composition: identical to the written-out two-pulse state
            // at odd special mu, and unitary in between.
            let amps = compose_sequence(seq, p, false).map_err(&wrap)?.total();
            let (pa, pb) = analytic::level_populations(&amps);
            let pop = |l| analytic::amplitude(&amps, l).norm_sqr();
            Ok((vec![pa, pb, pop(StateLabel::a(0)), pop(StateLabel::a(2)), pop(StateLabel::b(-1))], AnalyticRoute::Composed))
        }
        ScanKind::Velocity => {
            let (eta1, mu, beta) = first_pulse_params(seq, p).map_err(&wrap)?;
            let (pa, pb) = analytic::level_populations(&pulse1_state(beta, eta1, mu));
            Ok((vec![pa, pb, eta1, 0.0], AnalyticRoute::Canonical))
        }
    }
}

struct PointOutcome {
    point: ScanPoint,
    route: Option<AnalyticRoute>,
}

fn evaluate_point(spec: &ScanSpec, x: f64, columns: &[String]) -> Result<PointOutcome, ExperimentError> {
    let seq = spec.sequence_at(x)?;
    let (sigma_p, nodes) = spec.sigma_p_at(x)?;
    let mut extra = BTreeMap::new();
    let mut numeric = None;
    let mut analytic = None;
    let mut route = None;

    if spec.engine.numeric() {
        let v = thermal_average_vec(|p| numeric_observables(spec, &seq, x, p), sigma_p, nodes)?;
        numeric = Some(Pops { p_a: v[0], p_b: v[1] });
        for (name, val) in columns.iter().zip(&v[2..]) {
            extra.insert(name.clone(), *val);
        }
    }
    if spec.engine.analytic() {
        let r = std::cell::Cell::new(None);
        let v = thermal_average_vec(
            |p| {
                let (v, rt) = analytic_observables(spec, &seq, x, p)?;
                r.set(Some(rt));
                Ok(v)
            },
            sigma_p,
            nodes,
        )?;
        route = r.get();
        analytic = Some(Pops { p_a: v[0], p_b: v[1] });
        let numeric_ran = numeric.is_some();
        for (name, val) in columns.iter().zip(&v[2..]) {
            // distance_sqr is a numeric-vs-analytic quantity; gamma and eta1
            // are inputs and already present when both engines ran.
            if spec.kind == ScanKind::Velocity && name == "distance_sqr" {
                continue;
            }
            if numeric_ran {
                if matches!(name.as_str(), "gamma" | "eta1") {
                    continue;
                }
                extra.insert(format!("{name}_analytic"), *val);
            } else {
                extra.insert(name.clone(), *val);
            }
        }
    }
    if spec.kind == ScanKind::Temperature {
        extra.insert("sigma_p".into(), sigma_p);
    }
    Ok(PointOutcome { point: ScanPoint { axis: x, numeric, analytic, extra }, route })
}

fn units_map(spec: &ScanSpec) -> BTreeMap<String, String> {
    let (axis, unit) = spec.kind.axis();
    let mut u: BTreeMap<String, String> = [
        ("P_a", "1"),
        ("P_b", "1"),
        ("P_a0", "1"),
        ("P_a2", "1"),
        ("P_b-1", "1"),
        ("gamma", "m/s^2"),
        ("eta1", "1"),
        ("distance_sqr", "1"),
        ("sigma_p", "kg m/s"),
        ("contrast", "1"),
        ("analytic_period", "m/s^2"),
        ("mass_kg", "kg"),
        ("wavelength_m", "m"),
        ("rabi", "rad/s"),
        ("v0", "m/s"),
        ("z0", "m"),
        ("g", "m/s^2"),
        ("g_r", "m/s^2"),
        ("temperature", "K"),
        ("rel_tol", "1"),
        ("abs_tol", "1"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    for k in ["P_a", "P_b", "P_a0", "P_a2", "P_b-1"] {
        u.insert(format!("{k}_analytic"), "1".into());
    }
    u.insert(axis.into(), unit.into());
    u
}

/// Evaluate the scan observables at arbitrary axis values, in parallel,
/// returned in input order. The range of `spec` is ignored.
pub fn evaluate_points(spec: &ScanSpec, xs: &[f64]) -> Result<Vec<ScanPoint>, ExperimentError> {
    evaluate_points_with_route(spec, xs).map(|(p, _)| p)
}

fn evaluate_points_with_route(
    spec: &ScanSpec,
    xs: &[f64],
) -> Result<(Vec<ScanPoint>, Option<AnalyticRoute>), ExperimentError> {
    spec.validate_settings()?;
    for &x in xs {
        spec.check_axis(x)?;
    }
    let columns = spec.extra_columns();
    let work = || xs.par_iter().map(|&x| evaluate_point(spec, x, &columns)).collect::<Result<Vec<_>, _>>();
    let outcomes = match spec.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let route = outcomes.iter().find_map(|o| o.route);
    Ok((outcomes.into_iter().map(|o| o.point).collect(), route))
}

/// Run a scan. Points are evaluated in parallel and returned in axis order;
/// the numbers do not depend on the worker count.
pub fn run_scan(spec: &ScanSpec) -> Result<ScanResult, ExperimentError> {
    spec.validate()?;
    let (points, route) = evaluate_points_with_route(spec, &spec.range.values())?;

    let mut warnings = Vec::new();
    let mut analytic_period = None;
    if matches!(spec.kind, ScanKind::FringeGr | ScanKind::Temperature) {
        if let Ok(timing) = canonical_timing(&spec.base) {
            let params = spec.base.params()?;
            let period = analytic::fringe_period(params.k_e, timing.t_wait, timing.tau1);
            if spec.kind == ScanKind::FringeGr {
                analytic_period = Some(period);
                let span = (spec.range.hi - spec.range.lo).abs();
                if span < 2.0 * period {
                    warnings.push(format!(
                        "scan spans {:.3} fringe periods (< 2); contrast may be underestimated",
                        span / period
                    ));
                }
            }
            warnings.extend(analytic::short_wait_warning(timing.t_wait, timing.tau1));
        }
    }
    if route == Some(AnalyticRoute::Composed) && spec.kind != ScanKind::Mu {
        warnings.push("sequence is not canonical; analytic values come from block composition".into());
    }

    let contrast_of = |f: fn(&ScanPoint) -> Option<Pops>| -> Option<f64> {
        let v: Option<Vec<f64>> = points.iter().map(|p| f(p).map(|x| x.p_a)).collect();
        v.filter(|v| v.len() > 1).map(|v| contrast(&v))
    };
    let fringe = spec.kind == ScanKind::FringeGr;
    let summary = Summary {
        contrast_numeric: if fringe { contrast_of(|p| p.numeric) } else { None },
        contrast_analytic: if fringe { contrast_of(|p| p.analytic) } else { None },
        analytic_period,
        analytic_route: route,
    };

    let b = &spec.base;
    let (axis, axis_unit) = spec.kind.axis();
    let metadata = Metadata {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        kind: spec.kind,
        axis: axis.into(),
        axis_unit: axis_unit.into(),
        range: spec.range,
        engine: spec.engine,
        thermal: spec.thermal,
        n_max: spec.n_max,
        rel_tol: spec.tol.rel_tol,
        abs_tol: spec.tol.abs_tol,
        species: b.species.name.clone(),
        mass_kg: b.species.mass,
        wavelength_m: b.species.wavelength,
        rabi: b.rabi,
        v0: b.v0,
        z0: b.z0,
        g: b.g,
        g_r: b.g_r,
        sequence: b.to_text(),
    };
    let columns = points.first().map(|p| p.extra.keys().cloned().collect()).unwrap_or_default();
    Ok(ScanResult { metadata, columns, points, summary, warnings, units: units_map(spec) })
}

// ---------------------------------------------------------------------------
// Fringe fitting
// ---------------------------------------------------------------------------

/// `y ~ offset + c cos(omega x) + s sin(omega x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub omega: f64,
    pub period: f64,
    pub offset: f64,
    pub cos: f64,
    pub sin: f64,
    pub amplitude: f64,
    pub rms: f64,
}

fn linear_fit(xs: &[f64], ys: &[f64], omega: f64) -> Option<([f64; 3], f64)> {
    // Normal equations for three basis functions.
    let mut m = [[0.0f64; 3]; 3];
    let mut r = [0.0f64; 3];
    for (&x, &y) in xs.iter().zip(ys) {
        let (s, c) = (omega * x).sin_cos();
        let f = [1.0, c, s];
        for i in 0..3 {
            r[i] += f[i] * y;
            for j in 0..3 {
                m[i][j] += f[i] * f[j];
            }
        }
    }
    let coef = solve3(m, r)?;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let (s, c) = (omega * x).sin_cos();
            let e = y - coef[0] - coef[1] * c - coef[2] * s;
            e * e
        })
        .sum();
    Some((coef, sse))
}

fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = (i + 1..3).map(|k| m[i][k] * x[k]).sum();
        x[i] = (r[i] - s) / m[i][i];
    }
    Some(x)
}

/// Least-squares sinusoid with the frequency searched in
/// `[0.8, 1.25] * omega_guess` (golden section on the projected residual).
pub fn fit_sinusoid(xs: &[f64], ys: &[f64], omega_guess: f64) -> Result<SinusoidFit, ExperimentError> {
    if xs.len() != ys.len() || xs.len() < 4 {
        return Err(ExperimentError::InvalidSpec("sinusoid fit needs at least 4 paired samples".into()));
    }
    if !(omega_guess.is_finite() && omega_guess > 0.0) {
        return Err(ExperimentError::InvalidSpec(format!("bad frequency guess {omega_guess}")));
    }
    let sse = |w: f64| linear_fit(xs, ys, w).map_or(f64::INFINITY, |(_, s)| s);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.8 * omega_guess, 1.25 * omega_guess);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (sse(c), sse(d));
    while (b - a) > 1e-13 * omega_guess {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = sse(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = sse(d);
        }
    }
    let omega = 0.5 * (a + b);
    let (coef, s) = linear_fit(xs, ys, omega)
        .ok_or_else(|| ExperimentError::InvalidSpec("sinusoid fit is singular".into()))?;
    Ok(SinusoidFit {
        omega,
        period: std::f64::consts::TAU / omega,
        offset: coef[0],
        cos: coef[1],
        sin: coef[2],
        amplitude: coef[1].hypot(coef[2]),
        rms: (s / xs.len() as f64).sqrt(),
    })
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}` (csv or json)")),
        }
    }
}

/// `%.9g`: nine significant digits, trailing zeros trimmed.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.8e}", x);
    let (mant, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..9).contains(&exp) {
        trim(&format!("{:.*}", (8 - exp) as usize, x))
    } else {
        format!("{}e{}", trim(mant), exp)
    }
}

fn csv_header_lines(r: &ScanResult) -> Vec<String> {
    let m = &r.metadata;
    let mut lines = vec![
        format!("gravsim {} {}", m.code_version, m.kind.label()),
        format!("engine = {}", m.engine),
        format!("axis = {} [{}]", m.axis, m.axis_unit),
        format!("range = {}:{}:{}{}", format_sig(m.range.lo), format_sig(m.range.hi), m.range.steps, if m.range.log { " log" } else { "" }),
        format!(
            "species = {} mass_kg = {} wavelength_m = {}",
            m.species,
            format_sig(m.mass_kg),
            format_sig(m.wavelength_m)
        ),
        format!(
            "rabi = {} rad/s  v0 = {} m/s  z0 = {} m  g = {} m/s^2  g_r = {} m/s^2",
            format_sig(m.rabi),
            format_sig(m.v0),
            format_sig(m.z0),
            format_sig(m.g),
            format_sig(m.g_r)
        ),
        format!("n_max = {}  rel_tol = {}  abs_tol = {}", m.n_max, format_sig(m.rel_tol), format_sig(m.abs_tol)),
    ];
    match m.thermal {
        Some(t) => lines.push(format!("thermal = {} K, {} nodes", format_sig(t.temperature), t.nodes)),
        None => lines.push("thermal = none".into()),
    }
    if let Some(c) = r.summary.contrast_numeric {
        lines.push(format!("contrast_numeric = {}", format_sig(c)));
    }
    if let Some(c) = r.summary.contrast_analytic {
        lines.push(format!("contrast_analytic = {}", format_sig(c)));
    }
    if let Some(p) = r.summary.analytic_period {
        lines.push(format!("analytic_period = {} m/s^2", format_sig(p)));
    }
    for w in &r.warnings {
        lines.push(format!("warning: {w}"));
    }
    lines.push("sequence:".into());
    lines.extend(m.sequence.lines().map(|l| format!("  {l}")));
    lines
}

/// Column names after the axis, in file order.
pub fn csv_columns(r: &ScanResult) -> Vec<String> {
    let mut cols = vec!["P_a".to_string(), "P_b".to_string()];
    let both = r.points.first().is_some_and(|p| p.numeric.is_some() && p.analytic.is_some());
    if both {
        cols.push("P_a_analytic".into());
        cols.push("P_b_analytic".into());
    }
    if let Some(p) = r.points.first() {
        cols.extend(p.extra.keys().cloned());
    }
    cols
}

pub fn write_csv<W: Write>(r: &ScanResult, mut w: W) -> std::io::Result<()> {
    for line in csv_header_lines(r) {
        writeln!(w, "# {line}")?;
    }
    let cols = csv_columns(r);
    writeln!(w, "{},{}", r.metadata.axis, cols.join(","))?;
    for p in &r.points {
        let mut row = vec![format_sig(p.axis)];
        let prim = p.primary();
        row.push(format_sig(prim.p_a));
        row.push(format_sig(prim.p_b));
        if let (Some(_), Some(a)) = (p.numeric, p.analytic) {
            row.push(format_sig(a.p_a));
            row.push(format_sig(a.p_b));
        }
        row.extend(p.extra.values().map(|v| format_sig(*v)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_json<W: Write>(r: &ScanResult, w: W) -> Result<(), ExperimentError> {
    serde_json::to_writer_pretty(w, r)?;
    Ok(())
}

pub fn write_results(r: &ScanResult, path: &Path, format: Format) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Io { path: path.to_path_buf(), source };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = std::io::BufWriter::new(file);
    match format {
        Format::Csv => write_csv(r, &mut w).map_err(io)?,
        Format::Json => write_json(r, &mut w)?,
    }
    w.flush().map_err(io)
}

pub fn read_json(path: &Path) -> Result<ScanResult, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })?;
    Ok(serde_json::from_str(&text)?)
}

/// Parsed CSV body: header columns and numeric rows.
pub fn read_csv_rows(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> = lines.next().ok_or("missing header")?.split(',').map(String::from).collect();
    let rows = lines
        .map(|l| {
            l.split(',').map(|v| v.parse::<f64>().map_err(|e| format!("`{v}`: {e}"))).collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((header, rows))
}
