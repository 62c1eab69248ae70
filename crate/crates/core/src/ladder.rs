//! Direct integration of the momentum-ladder amplitude equations on a
//! truncated rung range. Both Raman pairs are always active; this is the
//! reference the perturbative model is checked against.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::{self, OdeError, OdeOptions};
use crate::physics::{AtomLaserParams, Direction, PhysicsError};
use crate::sequence::{build_chirp_with, ChirpAnchoring, ChirpProgram, ChirpSegment, SequenceError, SequenceSpec, Step};

pub const DEFAULT_N_MAX: usize = 7;
pub const DEFAULT_REL_TOL: f64 = 1e-10;
pub const DEFAULT_ABS_TOL: f64 = 1e-12;
/// Population allowed on the two outermost rungs before a run is rejected.
pub const LEAK_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("integration became stiff at t = {t:e} s (dt = {dt:e} s); fastest phase rate {phase_rate:e} rad/s")]
    Stiff { t: f64, dt: f64, phase_rate: f64 },
    #[error("population {leak:e} reached the truncation boundary n = +-{n_max} (raise n_max)")]
    TruncationLeak { leak: f64, n_max: usize },
    #[error("invalid simulation settings: {0}")]
    Settings(String),
    #[error("integrator failure: {0}")]
    Ode(OdeError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// Amplitudes `C^a_{p + n hbar k_e}` and `C^b_{p + n hbar k_e}` for
/// `n in [-n_max, n_max]`, in the interaction picture with respect to the
/// free kinetic energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderState {
    /// Base momentum offset (kg m/s).
    pub p: f64,
    pub n_max: usize,
    pub amps_a: Vec<Complex64>,
    pub amps_b: Vec<Complex64>,
    /// Absolute clock (s).
    pub t: f64,
}

impl LadderState {
    /// All population in |a, 0>.
    pub fn initial(p: f64, n_max: usize) -> Self {
        let len = 2 * n_max + 1;
        let mut amps_a = vec![Complex64::new(0.0, 0.0); len];
        amps_a[n_max] = Complex64::new(1.0, 0.0);
        LadderState { p, n_max, amps_a, amps_b: vec![Complex64::new(0.0, 0.0); len], t: 0.0 }
    }

    pub fn zeros(p: f64, n_max: usize, t: f64) -> Self {
        let len = 2 * n_max + 1;
        LadderState { p, n_max, amps_a: vec![Complex64::new(0.0, 0.0); len], amps_b: vec![Complex64::new(0.0, 0.0); len], t }
    }

    fn index(&self, n: i32) -> Option<usize> {
        let i = i64::from(n) + self.n_max as i64;
        (0..self.amps_a.len() as i64).contains(&i).then_some(i as usize)
    }

    /// Amplitude of |a, n>; zero outside the truncated range.
    pub fn a(&self, n: i32) -> Complex64 {
        self.index(n).map_or(Complex64::new(0.0, 0.0), |i| self.amps_a[i])
    }

    pub fn b(&self, n: i32) -> Complex64 {
        self.index(n).map_or(Complex64::new(0.0, 0.0), |i| self.amps_b[i])
    }

    pub fn set_a(&mut self, n: i32, v: Complex64) {
        let i = self.index(n).expect("rung inside truncation");
        self.amps_a[i] = v;
    }

    pub fn set_b(&mut self, n: i32, v: Complex64) {
        let i = self.index(n).expect("rung inside truncation");
        self.amps_b[i] = v;
    }

    pub fn rungs(&self) -> std::ops::RangeInclusive<i32> {
        let n = self.n_max as i32;
        -n..=n
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps_a.iter().chain(&self.amps_b).map(|c| c.norm_sqr()).sum()
    }

    /// Population sitting on the outermost rungs of both levels.
    pub fn boundary_population(&self) -> f64 {
        let last = self.amps_a.len() - 1;
        self.amps_a[0].norm_sqr() + self.amps_a[last].norm_sqr() + self.amps_b[0].norm_sqr() + self.amps_b[last].norm_sqr()
    }

    /// Same amplitudes on a wider rung range.
    pub fn widened(&self, n_max: usize) -> Self {
        assert!(n_max >= self.n_max);
        let mut out = LadderState::zeros(self.p, n_max, self.t);
        for n in self.rungs() {
            out.set_a(n, self.a(n));
            out.set_b(n, self.b(n));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungPopulation {
    pub n: i32,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    pub per_rung: Vec<RungPopulation>,
    pub p_a: f64,
    pub p_b: f64,
}

pub fn populations(state: &LadderState) -> Populations {
    let per_rung: Vec<RungPopulation> = state
        .rungs()
        .map(|n| RungPopulation { n, a: state.a(n).norm_sqr(), b: state.b(n).norm_sqr() })
        .collect();
    let p_a = per_rung.iter().map(|r| r.a).sum();
    let p_b = per_rung.iter().map(|r| r.b).sum();
    Populations { per_rung, p_a, p_b }
}

/// Which couplings are switched on during a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Couplings {
    #[default]
    Both,
    /// Only the pair the pulse is chirped for; the opposite-Doppler pair is
    /// zeroed (eta -> 0). Used for gauge and resonance checks.
    TargetOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Hard cap on the step (s); the phase-rate cap is applied on top.
    pub dt_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rel_tol: DEFAULT_REL_TOL, abs_tol: DEFAULT_ABS_TOL, dt_max: 1e-6 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(v > 0.0 && v <= 1e-4) {
                return Err(SimError::Settings(format!("{name} must lie in (0, 1e-4], got {v}")));
            }
        }
        if !(self.dt_max > 0.0) {
            return Err(SimError::Settings(format!("dt_max must be > 0, got {}", self.dt_max)));
        }
        Ok(())
    }
}

/// Everything the integrator needs besides the state: the atom/laser
/// constants, the true trajectory and the chirp program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEnv {
    pub params: AtomLaserParams,
    pub g: f64,
    pub v0: f64,
    pub z0: f64,
    pub chirp: ChirpProgram,
    pub tol: Tolerances,
    pub couplings: Couplings,
}

impl SimEnv {
    pub fn from_sequence(seq: &SequenceSpec, tol: Tolerances) -> Result<Self, SimError> {
        Self::with_anchoring(seq, tol, ChirpAnchoring::default())
    }

    pub fn with_anchoring(seq: &SequenceSpec, tol: Tolerances, anchoring: ChirpAnchoring) -> Result<Self, SimError> {
        tol.validate()?;
        if !(seq.rabi.is_finite() && seq.rabi > 0.0) {
            return Err(SequenceError::BadRabi(seq.rabi).into());
        }
        Ok(SimEnv {
            params: seq.params()?,
            g: seq.g,
            v0: seq.v0,
            z0: seq.z0,
            chirp: build_chirp_with(seq, anchoring)?,
            tol,
            couplings: Couplings::Both,
        })
    }
}

/// (z_c, v_z) on the true free-fall trajectory.
pub fn classical_trajectory(env: &SimEnv, t: f64) -> (f64, f64) {
    (env.z0 + env.v0 * t + 0.5 * env.g * t * t, env.v0 + env.g * t)
}

/// Phase polynomial re-expanded around a pulse start: `c0 + c1 u + c2 u^2`
/// with `u = t - start`, `c0` reduced modulo 2 pi.
#[derive(Debug, Clone, Copy)]
struct LocalPhase {
    c0: f64,
    c1: f64,
    c2: f64,
}

impl LocalPhase {
    fn from_absolute(abs: [f64; 3], start: f64) -> Self {
        let c0 = abs[0] + start * (abs[1] + start * abs[2]);
        let c1 = abs[1] + 2.0 * abs[2] * start;
        LocalPhase { c0: c0.rem_euclid(TAU), c1, c2: abs[2] }
    }

    fn at(&self, u: f64) -> f64 {
        self.c0 + u * (self.c1 + u * self.c2)
    }

    fn max_rate(&self, duration: f64) -> f64 {
        self.c1.abs().max((self.c1 + 2.0 * self.c2 * duration).abs())
    }
}

/// Precomputed coupling phases for one pulse.
///
/// With `W = exp(2 i omega_R t)`:
///   <b,n+1|H|a,n> = Omega exp(i Phi_plus(t)) W^n
///   <b,n-1|H|a,n> = Omega exp(i Psi(t)) W^-n
/// where `Phi_plus = Theta_+ + (k p/m + omega_R) t` and
/// `Psi = Theta_- - (k p/m - omega_R) t`.
struct PulseCoupling {
    rabi: f64,
    plus: LocalPhase,
    minus: LocalPhase,
    recoil: LocalPhase,
    plus_on: bool,
    minus_on: bool,
    n_max: usize,
}

impl PulseCoupling {
    fn new(env: &SimEnv, seg: &ChirpSegment, p: f64, n_max: usize) -> Self {
        let k = env.params.k_e;
        let wr = env.params.omega_r;
        let dop = k * p / env.params.mass();
        let al = seg.coeffs;
        let kz = [k * env.z0, k * env.v0, 0.5 * k * env.g];
        let plus = [al[0] + kz[0], al[1] + kz[1] + dop + wr, al[2] + kz[2]];
        let minus = [al[0] - kz[0], al[1] - kz[1] - dop + wr, al[2] - kz[2]];
        let (plus_on, minus_on) = match (env.couplings, seg.direction) {
            (Couplings::Both, _) => (true, true),
            (Couplings::TargetOnly, Direction::Plus) => (true, false),
            (Couplings::TargetOnly, Direction::Minus) => (false, true),
        };
        PulseCoupling {
            rabi: seg.rabi,
            plus: LocalPhase::from_absolute(plus, seg.start),
            minus: LocalPhase::from_absolute(minus, seg.start),
            recoil: LocalPhase::from_absolute([0.0, 2.0 * wr, 0.0], seg.start),
            plus_on,
            minus_on,
            n_max,
        }
    }

    fn max_phase_rate(&self, duration: f64) -> f64 {
        let ladder = 2.0 * self.recoil.c1 * self.n_max as f64;
        let mut rate: f64 = self.rabi;
        if self.plus_on {
            rate = rate.max(self.plus.max_rate(duration) + ladder);
        }
        if self.minus_on {
            rate = rate.max(self.minus.max_rate(duration) + ladder);
        }
        rate
    }

    /// y = [a_{-N..N}, b_{-N..N}]
    fn rhs(&self, u: f64, y: &[Complex64], dy: &mut [Complex64], wpow: &mut [Complex64]) {
        let m = 2 * self.n_max + 1;
        let (a, b) = y.split_at(m);
        let (da, db) = dy.split_at_mut(m);
        da.fill(Complex64::new(0.0, 0.0));
        db.fill(Complex64::new(0.0, 0.0));

        let w = Complex64::from_polar(1.0, self.recoil.at(u));
        let w_inv = w.conj();
        // wpow[i] = W^(i - N)
        let mut acc = Complex64::new(1.0, 0.0);
        wpow[self.n_max] = acc;
        for j in 1..=self.n_max {
            acc *= w;
            wpow[self.n_max + j] = acc;
        }
        acc = Complex64::new(1.0, 0.0);
        for j in 1..=self.n_max {
            acc *= w_inv;
            wpow[self.n_max - j] = acc;
        }
        let minus_i = Complex64::new(0.0, -1.0);

        if self.plus_on {
            let e = Complex64::from_polar(self.rabi, self.plus.at(u)) * minus_i;
            // a_i (rung n) <-> b_{i+1} (rung n+1)
            for i in 0..m - 1 {
                let c = e * wpow[i];
                db[i + 1] += c * a[i];
                // -i conj(Omega e^{i phi}) = conj(i Omega e^{i phi}) = -conj(c)
                da[i] -= c.conj() * b[i + 1];
            }
        }
        if self.minus_on {
            let e = Complex64::from_polar(self.rabi, self.minus.at(u)) * minus_i;
            // a_i (rung n) <-> b_{i-1} (rung n-1), coupling carries W^-n
            for i in 1..m {
                let c = e * wpow[m - 1 - i];
                db[i - 1] += c * a[i];
                da[i] -= c.conj() * b[i - 1];
            }
        }
    }
}

/// Statistics of one integrated pulse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PulseStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub max_phase_rate: f64,
}

/// Integrate one chirped pulse with both Raman pairs active.
pub fn evolve_pulse(state: &LadderState, seg: &ChirpSegment, env: &SimEnv) -> Result<LadderState, SimError> {
    evolve_pulse_with_stats(state, seg, env).map(|(s, _)| s)
}

pub fn evolve_pulse_with_stats(
    state: &LadderState,
    seg: &ChirpSegment,
    env: &SimEnv,
) -> Result<(LadderState, PulseStats), SimError> {
    let duration = seg.duration();
    if !(duration >= 0.0) {
        return Err(SimError::Settings(format!("pulse duration must be >= 0, got {duration}")));
    }
    let mut out = state.clone();
    out.t = seg.end;
    if duration == 0.0 || seg.rabi == 0.0 {
        return Ok((out, PulseStats::default()));
    }

    let n_max = state.n_max;
    let m = 2 * n_max + 1;
    let coupling = PulseCoupling::new(env, seg, state.p, n_max);
    let rate = coupling.max_phase_rate(duration);
    let dt_cap = (TAU / (20.0 * rate)).min(env.tol.dt_max);
    let opts = OdeOptions {
        rel_tol: env.tol.rel_tol,
        abs_tol: env.tol.abs_tol,
        dt_max: dt_cap,
        dt_min: 1e-6 * duration,
        dt_initial: dt_cap.min(duration / 100.0),
    };

    let mut y: Vec<Complex64> = state.amps_a.iter().chain(&state.amps_b).copied().collect();
    let mut wpow = vec![Complex64::new(0.0, 0.0); m];
    let stats = ode::integrate(|u, y, dy| coupling.rhs(u, y, dy, &mut wpow), &mut y, 0.0, duration, &opts)
        .map_err(|e| match e {
            OdeError::StepUnderflow { t, dt, .. } => SimError::Stiff { t: seg.start + t, dt, phase_rate: rate },
            other => SimError::Ode(other),
        })?;
    out.amps_a.copy_from_slice(&y[..m]);
    out.amps_b.copy_from_slice(&y[m..]);

    let leak = out.boundary_population();
    if leak > LEAK_LIMIT {
        return Err(SimError::TruncationLeak { leak, n_max });
    }
    Ok((
        out,
        PulseStats { steps: stats.accepted, rejected: stats.rejected, rhs_evals: stats.rhs_evals, max_phase_rate: rate },
    ))
}

/// Fields off: the interaction-picture amplitudes do not move; all kinetic
/// phase bookkeeping re-enters through the absolute time of the next pulse.
pub fn evolve_wait(state: &LadderState, duration: f64) -> Result<LadderState, SimError> {
    if !(duration >= 0.0) {
        return Err(SimError::Settings(format!("wait duration must be >= 0, got {duration}")));
    }
    let mut out = state.clone();
    out.t += duration;
    Ok(out)
}

/// Snapshot after each step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub after_step: Vec<LadderState>,
    pub final_state: LadderState,
}

/// Fold the steps of `seq` over `initial`, recording the state after every
/// step.
pub fn run_steps(seq: &SequenceSpec, env: &SimEnv, initial: LadderState) -> Result<Trace, SimError> {
    let mut state = initial;
    let mut after_step = Vec::with_capacity(seq.steps.len());
    let mut seg_iter = env.chirp.segments.iter();
    for step in &seq.steps {
        state = match step {
            Step::Pulse(_) => {
                let seg = seg_iter
                    .next()
                    .ok_or_else(|| SimError::Settings("chirp program has fewer segments than pulses".into()))?;
                evolve_pulse(&state, seg, env)?
            }
            Step::Wait(w) => evolve_wait(&state, w.duration)?,
        };
        after_step.push(state.clone());
    }
    Ok(Trace { after_step, final_state: state })
}

/// Run a whole sequence for one momentum class `p`, starting from |a, 0>.
pub fn run_sequence(seq: &SequenceSpec, p: f64, n_max: usize, tol: Tolerances) -> Result<LadderState, SimError> {
    let env = SimEnv::from_sequence(seq, tol)?;
    run_with_env(seq, &env, p, n_max)
}

pub fn run_with_env(seq: &SequenceSpec, env: &SimEnv, p: f64, n_max: usize) -> Result<LadderState, SimError> {
    if n_max < 2 {
        return Err(SimError::Settings(format!("n_max must be >= 2, got {n_max}")));
    }
    run_steps(seq, env, LadderState::initial(p, n_max)).map(|t| t.final_state)
}
