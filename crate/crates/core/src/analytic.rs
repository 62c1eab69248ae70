//! First-order perturbative model of the composite sequence.
//!
//! Two codings of the same algebra live here. The block engine
//! ([`PulseFrame`], [`apply_pulse`], [`compose_sequence`]) builds the
//! zeroth-order two-level blocks and the boundary-term leakage for any pulse
//! and composes them as `U ~ U0 - i int V(t1) U0(t1) dt1`. The closed forms
//! ([`pulse1_state`], [`pulse2_state`], [`fringe_coefficients`]) are written
//! out term by term for the canonical sequence.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{cd_sd, AtomLaserParams, Direction, PhysicsError};
use crate::sequence::{SequenceError, SequenceSpec, Step};

/// Largest |eta| for which the boundary-term leakage is offered.
pub const ETA_LIMIT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("|eta| = {eta:e} is outside the perturbative regime (< {limit})")]
    NotPerturbative { eta: f64, limit: f64 },
    #[error("sequence is not the canonical seven-pulse gravimeter: {0}")]
    NotCanonical(String),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `Gamma_X = exp(i X / eta)`.
pub fn gamma_factor(x: f64, eta: f64) -> Complex64 {
    Complex64::from_polar(1.0, x / eta)
}

// ---------------------------------------------------------------------------
// State labels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateLabel {
    pub level: Level,
    pub rung: i32,
}

impl StateLabel {
    pub fn a(rung: i32) -> Self {
        StateLabel { level: Level::A, rung }
    }

    pub fn b(rung: i32) -> Self {
        StateLabel { level: Level::B, rung }
    }
}

impl std::fmt::Display for StateLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let l = match self.level {
            Level::A => 'a',
            Level::B => 'b',
        };
        write!(f, "|{l},{}>", self.rung)
    }
}

/// Sparse amplitude map over ladder states.
pub type Amplitudes = BTreeMap<StateLabel, Complex64>;

fn add_to(map: &mut Amplitudes, label: StateLabel, v: Complex64) {
    if v != Complex64::new(0.0, 0.0) {
        *map.entry(label).or_insert(Complex64::new(0.0, 0.0)) += v;
    }
}

pub fn amplitude(map: &Amplitudes, label: StateLabel) -> Complex64 {
    map.get(&label).copied().unwrap_or(Complex64::new(0.0, 0.0))
}

pub fn norm_sqr(map: &Amplitudes) -> f64 {
    map.values().map(|v| v.norm_sqr()).sum()
}

/// `sum |x - y|^2` over the union of labels.
pub fn distance_sqr(x: &Amplitudes, y: &Amplitudes) -> f64 {
    let mut labels: Vec<&StateLabel> = x.keys().chain(y.keys()).collect();
    labels.sort();
    labels.dedup();
    labels.into_iter().map(|l| (amplitude(x, *l) - amplitude(y, *l)).norm_sqr()).sum()
}

/// Total population in each internal level.
pub fn level_populations(map: &Amplitudes) -> (f64, f64) {
    let mut pa = 0.0;
    let mut pb = 0.0;
    for (l, v) in map {
        match l.level {
            Level::A => pa += v.norm_sqr(),
            Level::B => pb += v.norm_sqr(),
        }
    }
    (pa, pb)
}

/// A state split by perturbative order. Leakage is generated from the
/// zeroth-order part only; products of two small parameters are dropped.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerturbedState {
    pub zeroth: Amplitudes,
    pub first: Amplitudes,
}

impl PerturbedState {
    pub fn ground() -> Self {
        let mut zeroth = Amplitudes::new();
        zeroth.insert(StateLabel::a(0), c(1.0, 0.0));
        PerturbedState { zeroth, first: Amplitudes::new() }
    }

    pub fn total(&self) -> Amplitudes {
        let mut out = self.zeroth.clone();
        for (l, v) in &self.first {
            add_to(&mut out, *l, *v);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Two-level blocks
// ---------------------------------------------------------------------------

/// Detuned two-level evolution under `<e|H|g> = Omega exp(i s u)` for a time
/// `u`, returned as `(F, G)` with
/// `U|g> = F|g> - G|e>`, `U|e> = G*|g> + F*|e>`.
pub fn detuned_rabi(rabi: f64, s: f64, u: f64) -> (Complex64, Complex64) {
    let wt = (rabi * rabi + 0.25 * s * s).sqrt();
    let (sn, cs) = (wt * u).sin_cos();
    let ratio = if wt == 0.0 { 0.0 } else { 0.5 * s / wt };
    let amp = if wt == 0.0 { u * rabi } else { rabi / wt * sn };
    let f = Complex64::from_polar(1.0, -0.5 * s * u) * c(cs, ratio * sn);
    let g = Complex64::from_polar(1.0, 0.5 * s * u) * c(0.0, amp);
    (f, g)
}

/// `(f, g)` of the plus-resonant chain `|a,n> <-> |b,n+1>` with detuning
/// `delta^(n)_p = k_e (p + n hbar k_e) / m`.
pub fn f_g(n: i32, t: f64, p: f64, rabi: f64, params: &AtomLaserParams) -> (Complex64, Complex64) {
    detuned_rabi(rabi, params.delta_n(p, n), t)
}

/// `(h, j)` of the minus-resonant chain `|b,n+1> <-> |a,n+2>`.
pub fn h_j(n: i32, t: f64, p: f64, rabi: f64, params: &AtomLaserParams) -> (Complex64, Complex64) {
    let (f, g) = detuned_rabi(rabi, -params.delta_n(p, n), t);
    // h = F and j = G* in the minus orientation.
    (f, g.conj())
}

/// Zeroth-order block of one resonant chain plus its first-order leakage.
///
/// `out[pair[i]] += u0[i][j] in[pair[j]]` and
/// `out[targets[i]] += leakage[i][j] in[pair[j]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPropagator {
    pub direction: Direction,
    /// `[|a,n>, |b,n +- 1>]`
    pub pair: [StateLabel; 2],
    pub u0: [[Complex64; 2]; 2],
    /// Off-resonant partner of each pair member.
    pub targets: [StateLabel; 2],
    pub leakage: [[Complex64; 2]; 2],
}

impl BlockPropagator {
    /// `max |(U0^dag U0 - 1)_ij|`.
    pub fn u0_unitarity_defect(&self) -> f64 {
        let u = &self.u0;
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let mut s = Complex64::new(0.0, 0.0);
                for k in 0..2 {
                    s += u[k][i].conj() * u[k][j];
                }
                if i == j {
                    s -= 1.0;
                }
                worst = worst.max(s.norm());
            }
        }
        worst
    }

    /// `max |(U^dag U - 1)_ij|` with `U = U0 + leakage` on the pair.
    pub fn first_order_unitarity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let mut s = Complex64::new(0.0, 0.0);
                for k in 0..2 {
                    s += self.u0[k][i].conj() * self.u0[k][j];
                    s += self.leakage[k][i].conj() * self.leakage[k][j];
                }
                if i == j {
                    s -= 1.0;
                }
                worst = worst.max(s.norm());
            }
        }
        worst
    }
}

/// Zeroth-order plus-resonant block (`f`, `g`) in the frame chirped for rung 0.
pub fn u0_plus_block(n: i32, t: f64, p: f64, rabi: f64, params: &AtomLaserParams) -> BlockPropagator {
    let (f, g) = f_g(n, t, p, rabi, params);
    BlockPropagator {
        direction: Direction::Plus,
        pair: [StateLabel::a(n), StateLabel::b(n + 1)],
        u0: [[f, g.conj()], [-g, f.conj()]],
        targets: [StateLabel::b(n - 1), StateLabel::a(n + 2)],
        leakage: [[Complex64::new(0.0, 0.0); 2]; 2],
    }
}

/// Zeroth-order minus-resonant block (`h`, `j`) in the frame chirped for
/// rung 2, acting on `|a,n+2> <-> |b,n+1>`.
pub fn u0_minus_block(n: i32, t: f64, p: f64, rabi: f64, params: &AtomLaserParams) -> BlockPropagator {
    let (h, j) = h_j(n, t, p, rabi, params);
    BlockPropagator {
        direction: Direction::Minus,
        pair: [StateLabel::a(n + 2), StateLabel::b(n + 1)],
        u0: [[h, j], [-j.conj(), h.conj()]],
        targets: [StateLabel::b(n + 3), StateLabel::a(n)],
        leakage: [[Complex64::new(0.0, 0.0); 2]; 2],
    }
}

// ---------------------------------------------------------------------------
// Pulse frames
// ---------------------------------------------------------------------------

/// How the large Doppler phase `k (z_c + z_ref)` of the opposite pair is
/// evaluated at the pulse boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DopplerPhase {
    /// `Omega t / eta` in absolute time, eta of the pulse being evaluated.
    /// This is the form behind the `Gamma_X` factors.
    Linear,
    /// Full trajectories: `k (2 z0 + 2 v0 t + (g + g_r) t^2 / 2)`.
    Exact { k_e: f64, z0: f64, v0: f64, g: f64, g_r: f64 },
}

/// Everything the block engine needs for one pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseFrame {
    pub direction: Direction,
    /// Rung of the a-state of the resonant chain the chirp targets.
    pub rung: i32,
    pub rabi: f64,
    pub omega_r: f64,
    pub start: f64,
    pub duration: f64,
    /// `Omega / (2 k_e v_z)` at the end of the pulse.
    pub eta: f64,
    /// `k_e p / (2 m Omega)`.
    pub beta: f64,
    /// `k_e gamma t_start^2 / 2`, held constant over the pulse.
    pub gamma_phase: f64,
    pub doppler: DopplerPhase,
}

impl PulseFrame {
    fn end(&self) -> f64 {
        self.start + self.duration
    }

    fn big_phase(&self, t: f64) -> f64 {
        match self.doppler {
            DopplerPhase::Linear => self.rabi * t / self.eta,
            DopplerPhase::Exact { k_e, z0, v0, g, g_r } => k_e * (2.0 * z0 + 2.0 * v0 * t + 0.25 * (g + g_r) * t * t),
        }
    }

    /// Resonant chain containing a label: the rung of its a-state.
    fn chain_of(&self, label: StateLabel) -> i32 {
        match (self.direction, label.level) {
            (_, Level::A) => label.rung,
            (Direction::Plus, Level::B) => label.rung - 1,
            (Direction::Minus, Level::B) => label.rung + 1,
        }
    }

    fn pair(&self, n: i32) -> [StateLabel; 2] {
        match self.direction {
            Direction::Plus => [StateLabel::a(n), StateLabel::b(n + 1)],
            Direction::Minus => [StateLabel::a(n), StateLabel::b(n - 1)],
        }
    }

    /// Detuning rate and phase of the resonant coupling of chain n.
    fn chain_phase(&self, n: i32, beta: f64) -> (f64, f64) {
        let d = 2.0 * self.rabi * beta + 2.0 * f64::from(n - self.rung) * self.omega_r;
        match self.direction {
            Direction::Plus => (d, self.gamma_phase + d * self.start),
            Direction::Minus => (-d, -self.gamma_phase - d * self.start),
        }
    }

    fn u0_at(&self, n: i32, u: f64, beta: f64) -> [[Complex64; 2]; 2] {
        let (s, theta) = self.chain_phase(n, beta);
        let (f, g) = detuned_rabi(self.rabi, s, u);
        let e = Complex64::from_polar(1.0, theta);
        [[f, g.conj() * e.conj()], [-g * e, f.conj()]]
    }

    /// Targets and full phases `P(t)` of the off-resonant couplings leaving
    /// each pair member; the sign is that of the large Doppler part.
    fn leak_channels(&self, n: i32) -> [(StateLabel, f64, f64); 2] {
        let wr = self.omega_r;
        let r = f64::from(self.rung);
        let nf = f64::from(n);
        match self.direction {
            // <b,n-1|V|a,n> = Omega exp(-i(K + 2(n+r) wR t)),
            // <a,n+2|V|b,n+1> = Omega exp(+i(K + 2(n+2+r) wR t))
            Direction::Plus => [
                (StateLabel::b(n - 1), -1.0, 2.0 * (nf + r) * wr),
                (StateLabel::a(n + 2), 1.0, 2.0 * (nf + 2.0 + r) * wr),
            ],
            // <b,n+1|V|a,n> = Omega exp(+i(K + 2(n+r) wR t)),
            // <a,n-2|V|b,n-1> = Omega exp(-i(K + 2(n-2+r) wR t))
            Direction::Minus => [
                (StateLabel::b(n + 1), 1.0, 2.0 * (nf + r) * wr),
                (StateLabel::a(n - 2), -1.0, 2.0 * (nf - 2.0 + r) * wr),
            ],
        }
    }

    fn check_eta(&self) -> Result<(), AnalyticError> {
        if !(self.eta.abs() < ETA_LIMIT) {
            return Err(AnalyticError::NotPerturbative { eta: self.eta, limit: ETA_LIMIT });
        }
        Ok(())
    }

    /// Block of chain n over the whole pulse. Leakage is the boundary term
    /// `-sgn eta [exp(i P(t)) A(t)]_{t0}^{t1}` evaluated at beta = 0.
    pub fn block(&self, n: i32) -> Result<BlockPropagator, AnalyticError> {
        self.check_eta()?;
        let u0 = self.u0_at(n, self.duration, self.beta);
        let u0_free = if self.beta == 0.0 { u0 } else { self.u0_at(n, self.duration, 0.0) };
        let channels = self.leak_channels(n);
        let (t0, t1) = (self.start, self.end());
        let mut leakage = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, &(_, sgn, slope)) in channels.iter().enumerate() {
            let e1 = Complex64::from_polar(1.0, sgn * (self.big_phase(t1) + slope * t1));
            let e0 = Complex64::from_polar(1.0, sgn * (self.big_phase(t0) + slope * t0));
            for j in 0..2 {
                let a0 = if i == j { 1.0 } else { 0.0 };
                leakage[i][j] = -sgn * self.eta * (e1 * u0_free[i][j] - e0 * a0);
            }
        }
        Ok(BlockPropagator {
            direction: self.direction,
            pair: self.pair(n),
            u0,
            targets: [channels[0].0, channels[1].0],
            leakage,
        })
    }
}

/// Plus-pulse leakage amplitudes `(chi, zeta)` of chain m into the
/// off-resonant rungs: `chi` takes `|a,m>` to `|b,m-1>`, `zeta` takes
/// `|b,m+1>` to `|a,m+2>` (each for unit input on the source after `U0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlusLeakage {
    pub chi: Complex64,
    pub zeta: Complex64,
}

/// Minus-pulse counterparts `(kappa, nu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinusLeakage {
    pub kappa: Complex64,
    pub nu: Complex64,
}

/// `chi = eta [e^{-iP} f]_0^t`, `zeta = -eta [e^{iP} g]_0^t` for the chain
/// `|a,m> <-> |b,m+1>` of a plus pulse chirped for rung 0.
pub fn u1_plus_block(frame: &PulseFrame, m: i32) -> Result<PlusLeakage, AnalyticError> {
    if frame.direction != Direction::Plus {
        return Err(AnalyticError::NotCanonical("u1_plus_block needs a plus pulse".into()));
    }
    let b = frame.block(m)?;
    // Unit input on |a,m>: chi on |b,m-1>, and the |a,m+2> leak is -zeta.
    Ok(PlusLeakage { chi: b.leakage[0][0], zeta: -b.leakage[1][0] })
}

/// `kappa`, `nu` for the chain `|a,m> <-> |b,m-1>` of a minus pulse, for unit
/// input on `|b,m-1>`: `kappa` lands on `|a,m-2>`, `nu` on `|b,m+1>`.
pub fn u1_minus_block(frame: &PulseFrame, m: i32) -> Result<MinusLeakage, AnalyticError> {
    if frame.direction != Direction::Minus {
        return Err(AnalyticError::NotCanonical("u1_minus_block needs a minus pulse".into()));
    }
    let b = frame.block(m)?;
    Ok(MinusLeakage { kappa: b.leakage[1][1], nu: b.leakage[0][1] })
}

/// Blocks covering every chain touched by `labels`.
pub fn first_order_propagator(frame: &PulseFrame, labels: &[StateLabel]) -> Result<Vec<BlockPropagator>, AnalyticError> {
    let mut chains: Vec<i32> = labels.iter().map(|l| frame.chain_of(*l)).collect();
    chains.sort_unstable();
    chains.dedup();
    chains.into_iter().map(|n| frame.block(n)).collect()
}

fn apply_blocks(frame: &PulseFrame, input: &Amplitudes, with_leak: bool, out: &mut Amplitudes, leak_out: &mut Amplitudes) -> Result<(), AnalyticError> {
    let labels: Vec<StateLabel> = input.keys().copied().collect();
    for block in first_order_propagator(frame, &labels)? {
        let v = [amplitude(input, block.pair[0]), amplitude(input, block.pair[1])];
        for i in 0..2 {
            add_to(out, block.pair[i], block.u0[i][0] * v[0] + block.u0[i][1] * v[1]);
            if with_leak {
                add_to(leak_out, block.targets[i], block.leakage[i][0] * v[0] + block.leakage[i][1] * v[1]);
            }
        }
    }
    Ok(())
}

/// One pulse on a perturbed state: `zeroth' = U0 zeroth`,
/// `first' = U0 first + U1 zeroth`.
pub fn apply_pulse(frame: &PulseFrame, state: &PerturbedState) -> Result<PerturbedState, AnalyticError> {
    let mut zeroth = Amplitudes::new();
    let mut first = Amplitudes::new();
    let mut scratch = Amplitudes::new();
    apply_blocks(frame, &state.zeroth, true, &mut zeroth, &mut first)?;
    apply_blocks(frame, &state.first, false, &mut first, &mut scratch)?;
    Ok(PerturbedState { zeroth, first })
}

/// Frames for every pulse of a sequence at momentum offset `p`.
pub fn pulse_frames(seq: &SequenceSpec, p: f64, doppler_exact: bool) -> Result<Vec<PulseFrame>, AnalyticError> {
    seq.validate()?;
    let params = seq.params()?;
    let k = params.k_e;
    let gamma = seq.g - seq.g_r;
    let doppler = if doppler_exact {
        DopplerPhase::Exact { k_e: k, z0: seq.z0, v0: seq.v0, g: seq.g, g_r: seq.g_r }
    } else {
        DopplerPhase::Linear
    };
    seq.timeline()
        .into_iter()
        .map(|tp| {
            let v_end = seq.v0 + seq.g * tp.end;
            let eta = crate::physics::eta(&params, tp.rabi, v_end)?;
            Ok(PulseFrame {
                direction: tp.pulse.direction,
                rung: tp.pulse.target_rung,
                rabi: tp.rabi,
                omega_r: params.omega_r,
                start: tp.start,
                duration: tp.end - tp.start,
                eta,
                beta: crate::physics::beta(&params, p, tp.rabi),
                gamma_phase: 0.5 * k * gamma * tp.start * tp.start,
                doppler,
            })
        })
        .collect()
}

/// Compose all pulses of `seq` on `|a,0>`; waits only move the clock, which
/// the frames already carry.
pub fn compose_sequence(seq: &SequenceSpec, p: f64, doppler_exact: bool) -> Result<PerturbedState, AnalyticError> {
    let mut state = PerturbedState::ground();
    for frame in pulse_frames(seq, p, doppler_exact)? {
        state = apply_pulse(&frame, &state)?;
    }
    Ok(state)
}

// ---------------------------------------------------------------------------
// Closed forms for the first two pulses
// ---------------------------------------------------------------------------

/// State after the pi/2+ beamsplitter, written out term by term.
pub fn pulse1_state(beta: f64, eta1: f64, mu: f64) -> Amplitudes {
    let s = FRAC_1_SQRT_2;
    let g = gamma_factor(PI / 4.0, eta1);
    let mut m = Amplitudes::new();
    m.insert(StateLabel::a(0), s * (1.0 + I * (1.0 - PI / 4.0) * beta));
    m.insert(StateLabel::b(1), -I * s * (1.0 + I * (PI / 4.0) * beta));
    m.insert(StateLabel::b(-1), -s * (std::f64::consts::SQRT_2 - g.conj()) * eta1);
    m.insert(StateLabel::a(2), I * s * Complex64::from_polar(1.0, PI * mu) * g * eta1);
    m
}

/// Coefficients of the split state after pulse 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCoefficients {
    pub c_d: f64,
    pub s_d: f64,
    pub q_plus: f64,
    pub p_minus: f64,
    pub w: Complex64,
    pub r_a_plus: Complex64,
}

pub fn split_coefficients(eta1: f64, mu: f64) -> SplitCoefficients {
    let (c_d, s_d) = cd_sd(mu);
    let w = std::f64::consts::SQRT_2 - gamma_factor(PI / 4.0, eta1).conj();
    let r_a_plus = c_d + I * Complex64::from_polar(1.0, -mu * PI) * w * s_d * eta1;
    SplitCoefficients { c_d, s_d, q_plus: 1.0 + PI / 4.0, p_minus: 1.0 - 5.0 * PI / 4.0, w, r_a_plus }
}

/// State after the pi- pulse that completes the momentum split, written out
/// term by term. Each `Gamma_X` carries the eta it multiplies.
pub fn pulse2_state(beta: f64, eta1: f64, eta2: f64, mu: f64) -> Amplitudes {
    let s = FRAC_1_SQRT_2;
    let k = split_coefficients(eta1, mu);
    let e_mu = Complex64::from_polar(1.0, mu * PI);
    let g1 = |x: f64| gamma_factor(x, eta1);
    let g2 = |x: f64| gamma_factor(x, eta2);
    let mut m = Amplitudes::new();
    m.insert(
        StateLabel::a(0),
        s * e_mu.conj() * (k.r_a_plus + I * k.q_plus * k.c_d * beta + I * eta2 * g2(PI / 4.0).conj()),
    );
    m.insert(StateLabel::a(2), -s * (1.0 + I * (5.0 * PI / 4.0) * beta));
    m.insert(StateLabel::b(-1), -s * e_mu * (e_mu * k.s_d * (-I + k.p_minus * beta) + k.w * k.c_d * eta1));
    m.insert(
        StateLabel::b(1),
        s * e_mu * (g1(PI / 4.0) * eta1 + g2(PI / 4.0) * (1.0 + e_mu * g2(PI / 2.0)) * eta2),
    );
    m.insert(StateLabel::b(3), s * Complex64::from_polar(1.0, 6.0 * PI * mu) * g2(3.0 * PI / 4.0) * eta2);
    m
}

// ---------------------------------------------------------------------------
// Fringe coefficients
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeCoefficients {
    pub phi_g: f64,
    pub a0: f64,
    pub b0: f64,
    pub a0_beta: f64,
    pub b0_beta: f64,
    pub a2: f64,
    pub b2: f64,
    pub a3: f64,
    pub b3: f64,
    pub a5: f64,
    pub b5: f64,
    pub a6: f64,
    pub b6: f64,
    pub phi_2: f64,
    pub phi_x: f64,
    pub phi_y: f64,
    pub phi_z: f64,
    pub phi_5: f64,
    pub phi_6: f64,
    pub xi_x: f64,
    pub xi_y: f64,
    pub xi_z: f64,
    pub xi_5: f64,
    pub xi_6: f64,
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub lambda_z: f64,
    pub lambda_5: f64,
    pub lambda_6: f64,
}

/// Argument of the zeroth-order fringe: `2 k_e gamma T^2 [1 + 10 r + 95/4 r^2]`
/// with `r = tau1 / T`.
pub fn fringe_argument(k_e: f64, gamma: f64, t_wait: f64, tau1: f64) -> f64 {
    let r = tau1 / t_wait;
    2.0 * k_e * gamma * t_wait * t_wait * (1.0 + 10.0 * r + 23.75 * r * r)
}

/// Fringe period in gamma implied by [`fringe_argument`].
pub fn fringe_period(k_e: f64, t_wait: f64, tau1: f64) -> f64 {
    let r = tau1 / t_wait;
    PI / (k_e * t_wait * t_wait * (1.0 + 10.0 * r + 23.75 * r * r))
}

/// The closed forms assume the wait dominates every pulse.
pub fn short_wait_warning(t_wait: f64, tau1: f64) -> Option<String> {
    (t_wait < 100.0 * tau1).then(|| format!("T = {t_wait:e} s is below 100 tau1 = {:e} s; fringe coefficients lose accuracy", 100.0 * tau1))
}

/// Every coefficient of the final populations of the canonical sequence.
#[allow(clippy::too_many_arguments)]
pub fn fringe_coefficients(
    gamma: f64,
    t_wait: f64,
    tau1: f64,
    mu: f64,
    rabi: f64,
    v0: f64,
    g: f64,
    params: &AtomLaserParams,
) -> FringeCoefficients {
    let k = params.k_e;
    let t = t_wait;
    let r = tau1 / t;
    let phi_g = k * gamma * t * t;

    let xi_x = 1.5 * (1.0 + 26.0 / 3.0 * r + 111.0 / 6.0 * r * r);
    let xi_y = xi_x;
    let xi_z = 1.5 * (1.0 + 20.0 / 3.0 * r + 15.5 * r * r);
    let xi_5 = 2.5 * (1.0 + 46.0 / 5.0 * r + 21.1 * r * r);
    let xi_6 = 1.0 + 12.0 * r + 36.75 * r * r;
    let lambda_x = 1.0 + 5.0 * r;
    let lambda_y = 1.0 + 3.0 * r;
    let lambda_z = lambda_x;
    let lambda_5 = 1.0 + 7.0 * r;
    let lambda_6 = 1.0 + 4.5 * r;

    // 2 k z_c(T Lambda) with z_c = v0 t + g t^2 / 2
    let drift = |lam: f64| 2.0 * k * v0 * t * lam + k * g * t * t * lam * lam;
    let wt = rabi * t;
    let phi_x = phi_g * xi_x + drift(lambda_x) + 0.5 * mu * (5.0 * PI + 4.0 * wt);
    let phi_y = phi_g * xi_y + drift(lambda_y) + mu * (PI + 2.0 * wt);
    let phi_z = phi_g * xi_z + drift(lambda_z) + 0.5 * mu * (5.0 * PI + 4.0 * wt);
    let phi_2 = phi_g + 2.0 * k * v0 * tau1 + k * g * tau1 * tau1;
    let phi_5 = phi_g * xi_5 - drift(lambda_5) - 2.0 * mu * (2.0 * PI + wt);
    let phi_6 = phi_g * xi_6 - 2.0 * drift(lambda_6) - mu * (5.0 * PI + 4.0 * wt);

    let arg = fringe_argument(k, gamma, t, tau1);
    let (sg, cg) = phi_g.sin_cos();
    FringeCoefficients {
        phi_g,
        a0: 0.5 + 0.5 * arg.cos(),
        b0: 0.5 - 0.5 * arg.cos(),
        a0_beta: 0.0,
        b0_beta: 0.0,
        a2: -cg * phi_2.sin(),
        b2: -sg * phi_2.cos(),
        a3: -cg * (phi_x.sin() + phi_y.sin() - phi_z.sin()),
        b3: sg * (phi_x.cos() + phi_y.cos() - phi_z.cos()),
        a5: cg * phi_5.sin(),
        b5: -sg * phi_5.cos(),
        a6: cg * phi_6.sin(),
        b6: -sg * phi_6.cos(),
        phi_2,
        phi_x,
        phi_y,
        phi_z,
        phi_5,
        phi_6,
        xi_x,
        xi_y,
        xi_z,
        xi_5,
        xi_6,
        lambda_x,
        lambda_y,
        lambda_z,
        lambda_5,
        lambda_6,
    }
}

/// The eta of each pulse that survives in the final populations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalEtas {
    pub eta2: f64,
    pub eta3: f64,
    pub eta5: f64,
    pub eta6: f64,
}

/// `(P_a, P_b)` at first order in beta and eta.
pub fn final_populations(coeffs: &FringeCoefficients, beta: f64, etas: &SignalEtas) -> (f64, f64) {
    let c = coeffs;
    let pa = c.a0 + c.a0_beta * beta + c.a2 * etas.eta2 + c.a3 * etas.eta3 + c.a5 * etas.eta5 + c.a6 * etas.eta6;
    let pb = c.b0 + c.b0_beta * beta + c.b2 * etas.eta2 + c.b3 * etas.eta3 + c.b5 * etas.eta5 + c.b6 * etas.eta6;
    (pa, pb)
}

/// Wait time, first-pulse duration and per-pulse eta of a canonical sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalTiming {
    pub t_wait: f64,
    pub tau1: f64,
    pub etas: Vec<f64>,
}

/// Check that `seq` has the canonical shape and extract its timing.
pub fn canonical_timing(seq: &SequenceSpec) -> Result<CanonicalTiming, AnalyticError> {
    use Direction::{Minus, Plus};
    let expect = [
        Some((Plus, PI / 2.0, 0)),
        Some((Minus, PI, 2)),
        None,
        Some((Plus, PI, 0)),
        Some((Minus, PI, 2)),
        Some((Plus, PI, 0)),
        None,
        Some((Minus, PI, 2)),
        Some((Plus, PI / 2.0, 0)),
    ];
    if seq.steps.len() != expect.len() {
        return Err(AnalyticError::NotCanonical(format!("expected 9 steps, found {}", seq.steps.len())));
    }
    let mut waits = Vec::new();
    for (i, (step, want)) in seq.steps.iter().zip(expect).enumerate() {
        match (step, want) {
            (Step::Pulse(p), Some((d, area, rung))) => {
                if p.direction != d || (p.area - area).abs() > 1e-12 || p.target_rung != rung || p.rabi.is_some() {
                    return Err(AnalyticError::NotCanonical(format!("step {} differs from the canonical pulse", i + 1)));
                }
            }
            (Step::Wait(w), None) => waits.push(w.duration),
            _ => return Err(AnalyticError::NotCanonical(format!("step {} has the wrong kind", i + 1))),
        }
    }
    if (waits[0] - waits[1]).abs() > 1e-15 * waits[0].abs().max(1.0) || waits[0] <= 0.0 {
        return Err(AnalyticError::NotCanonical("the two waits must be equal and positive".into()));
    }
    let params = seq.params()?;
    let etas = seq
        .timeline()
        .iter()
        .map(|tp| crate::physics::eta(&params, tp.rabi, seq.v0 + seq.g * tp.end))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CanonicalTiming { t_wait: waits[0], tau1: PI / (4.0 * seq.rabi), etas })
}

/// Closed-form `(P_a, P_b)` for a canonical sequence at momentum offset `p`.
pub fn canonical_populations(seq: &SequenceSpec, p: f64) -> Result<(f64, f64), AnalyticError> {
    let timing = canonical_timing(seq)?;
    let params = seq.params()?;
    let mu = crate::physics::mu(&params, seq.rabi);
    let coeffs = fringe_coefficients(seq.g - seq.g_r, timing.t_wait, timing.tau1, mu, seq.rabi, seq.v0, seq.g, &params);
    let e = &timing.etas;
    let etas = SignalEtas { eta2: e[1], eta3: e[2], eta5: e[4], eta6: e[5] };
    Ok(final_populations(&coeffs, crate::physics::beta(&params, p, seq.rabi), &etas))
}

/// Final populations of the composed block model, summed over rungs.
pub fn composed_populations(seq: &SequenceSpec, p: f64, doppler_exact: bool) -> Result<(f64, f64), AnalyticError> {
    Ok(level_populations(&compose_sequence(seq, p, doppler_exact)?.total()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{derive_params, special_mu, AtomSpecies};

    fn rb() -> AtomLaserParams {
        derive_params(&AtomSpecies::rb87()).unwrap()
    }

    #[test]
    fn resonant_block_is_balanced_beamsplitter() {
        let params = rb();
        let rabi = 1.0e5;
        let b = u0_plus_block(0, PI / (4.0 * rabi), 0.0, rabi, &params);
        assert!((b.u0[0][0] - c(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        assert!((-b.u0[1][0] - c(0.0, FRAC_1_SQRT_2)).norm() < 1e-15);
    }

    #[test]
    fn zeroth_order_blocks_are_unitary() {
        let params = rb();
        for n in -3..=3 {
            for &t in &[1e-6, 7.17e-6, 3e-5] {
                for &p in &[0.0, 1e-29, -3e-28] {
                    assert!(u0_plus_block(n, t, p, 1.1e5, &params).u0_unitarity_defect() < 1e-12);
                    assert!(u0_minus_block(n, t, p, 1.1e5, &params).u0_unitarity_defect() < 1e-12);
                    let (h, j) = h_j(n, t, p, 1.1e5, &params);
                    assert!((h.norm_sqr() + j.norm_sqr() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn spectator_chain_matches_cd_sd() {
        // Minus pulse chirped for rung 2 sees the |a,0>,|b,-1> chain detuned by 4 wR.
        let params = rb();
        let mu = 2f64.sqrt();
        let rabi = params.omega_r / mu;
        let (h, j) = h_j(-2, PI / (2.0 * rabi), 0.0, rabi, &params);
        let (cd, sd) = cd_sd(mu);
        let hh = h * Complex64::from_polar(1.0, mu * PI);
        assert!((hh.re - cd).abs() < 1e-12);
        assert!((hh.im - 2.0 * mu * sd).abs() < 1e-12);
        assert!((j.norm() - sd.abs()).abs() < 1e-12);
    }

    #[test]
    fn pulse1_zeroth_order() {
        let s = pulse1_state(0.0, 1e-30, 0.9);
        assert!((amplitude(&s, StateLabel::a(0)) - c(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        assert!((amplitude(&s, StateLabel::b(1)) - c(0.0, -FRAC_1_SQRT_2)).norm() < 1e-15);
        let eta = 3e-3;
        let s = pulse1_state(0.0, eta, 0.9);
        assert!((amplitude(&s, StateLabel::a(2)).norm_sqr() - eta * eta / 2.0).abs() < 1e-18);
    }

    #[test]
    fn pulse2_special_mu() {
        let mu = special_mu(1).unwrap();
        let s = pulse2_state(0.0, 1e-30, 1e-30, mu);
        assert!((amplitude(&s, StateLabel::a(0)).norm_sqr() - 0.5).abs() < 1e-12);
        assert!((amplitude(&s, StateLabel::a(2)).norm_sqr() - 0.5).abs() < 1e-12);
        assert!(amplitude(&s, StateLabel::b(-1)).norm_sqr() < 1e-24);
        // a0 / a2 = exp(-i pi mu): the phase picked up by the spectator cycle.
        let ratio = amplitude(&s, StateLabel::a(0)) / amplitude(&s, StateLabel::a(2));
        assert!((ratio * Complex64::from_polar(1.0, PI * mu) - 1.0).norm() < 1e-12);
    }

    #[test]
    fn pulse2_non_special_leak() {
        let s = pulse2_state(0.0, 1e-30, 1e-30, 2f64.sqrt());
        assert!((amplitude(&s, StateLabel::b(-1)).norm_sqr() - 1.0 / 18.0).abs() < 1e-12);
    }

    #[test]
    fn fringe_coefficients_identities() {
        let params = rb();
        let fc = fringe_coefficients(0.0, 0.1, 7.17e-6, 0.866, 1.0947e5, 10.0, 9.81, &params);
        assert_eq!(fc.a0, 1.0);
        assert_eq!(fc.b0, 0.0);
        assert_eq!(fc.a0_beta, 0.0);
        assert_eq!(fc.b0_beta, 0.0);
        assert_eq!(fc.xi_y, fc.xi_x);
        assert_eq!(fc.lambda_z, fc.lambda_x);
        let fc = fringe_coefficients(1e-6, 1e9, 1e-6, 0.866, 1.0947e5, 10.0, 9.81, &params);
        assert!((fc.xi_x - 1.5).abs() < 1e-12 && (fc.lambda_x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fringe_period_rb87() {
        let params = rb();
        let period = fringe_period(params.k_e, 0.1, 7.17e-6);
        assert!((period - 1.9496e-5).abs() / 1.9496e-5 < 1e-3, "{period}");
    }

    #[test]
    fn final_populations_ideal() {
        let params = rb();
        let fc = fringe_coefficients(0.0, 0.1, 7.17e-6, 0.866, 1.0947e5, 10.0, 9.81, &params);
        let z = SignalEtas { eta2: 0.0, eta3: 0.0, eta5: 0.0, eta6: 0.0 };
        assert_eq!(final_populations(&fc, 0.0, &z), (1.0, 0.0));
    }

    fn frames(mu: f64, beta: f64, eta1: f64, eta2: f64) -> [PulseFrame; 2] {
        let omega_r = rb().omega_r;
        let rabi = omega_r / mu;
        let tau1 = PI / (4.0 * rabi);
        let f1 = PulseFrame {
            direction: Direction::Plus,
            rung: 0,
            rabi,
            omega_r,
            start: 0.0,
            duration: tau1,
            eta: eta1,
            beta,
            gamma_phase: 0.0,
            doppler: DopplerPhase::Linear,
        };
        let f2 = PulseFrame { direction: Direction::Minus, rung: 2, start: tau1, duration: 2.0 * tau1, eta: eta2, ..f1.clone() };
        [f1, f2]
    }

    #[test]
    fn block_engine_reproduces_pulse1() {
        for &(mu, eta) in &[(0.866, 3e-3), (1.9, 4.4e-4), (1.4142, 7e-2)] {
            let [f1, _] = frames(mu, 0.0, eta, eta);
            let s1 = apply_pulse(&f1, &PerturbedState::ground()).unwrap().total();
            assert!(distance_sqr(&s1, &pulse1_state(0.0, eta, mu)).sqrt() < 1e-12);
        }
    }

    #[test]
    fn block_engine_reproduces_pulse2_at_odd_special_mu() {
        for m in [1, 3] {
            let mu = special_mu(m).unwrap();
            for &(e1, e2) in &[(3e-3, 2.7e-3), (1e-4, 9.9e-5), (5e-2, 4.8e-2)] {
                let [f1, f2] = frames(mu, 0.0, e1, e2);
                let s = apply_pulse(&f2, &apply_pulse(&f1, &PerturbedState::ground()).unwrap()).unwrap().total();
                let d = pulse2_state(0.0, e1, e2, mu);
                for (l, v) in d.iter() {
                    assert!((amplitude(&s, *l) - v).norm() < 1e-12, "m={m} {l}");
                }
            }
        }
    }

    #[test]
    fn pulse2_beta_slope_of_a2() {
        let mu = special_mu(1).unwrap();
        let h = 1e-7;
        let run = |b: f64| {
            let [f1, f2] = frames(mu, b, 1e-30, 1e-30);
            apply_pulse(&f2, &apply_pulse(&f1, &PerturbedState::ground()).unwrap()).unwrap().total()
        };
        let d = (amplitude(&run(h), StateLabel::a(2)) - amplitude(&run(-h), StateLabel::a(2))) / (2.0 * h);
        let want = -FRAC_1_SQRT_2 * I * (5.0 * PI / 4.0);
        assert!((d - want).norm() < 1e-6, "{d}");
    }

    #[test]
    fn leakage_vanishes_at_high_velocity() {
        let frame = PulseFrame {
            direction: Direction::Plus,
            rung: 0,
            rabi: 1e5,
            omega_r: 9.48e4,
            start: 0.0,
            duration: PI / 4e5,
            eta: 1e-9,
            beta: 0.0,
            gamma_phase: 0.0,
            doppler: DopplerPhase::Linear,
        };
        let l = u1_plus_block(&frame, 0).unwrap();
        assert!(l.chi.norm() < 3e-9 && l.zeta.norm() < 3e-9);
        let bad = PulseFrame { eta: 0.2, ..frame };
        assert!(matches!(u1_plus_block(&bad, 0), Err(AnalyticError::NotPerturbative { .. })));
    }
}
