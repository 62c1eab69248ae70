//! Composite pulse sequences: the data model, the line-oriented text format,
//! the canonical seven-pulse gravimeter program, and the chirp laws that keep
//! each pulse's target transition resonant on the reference trajectory.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{derive_params, AtomLaserParams, AtomSpecies, Direction, PhysicsError};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SequenceError {
    #[error("sequence has no pulses")]
    NoPulses,
    #[error("Rabi frequency must be positive, got {0} rad/s")]
    BadRabi(f64),
    #[error("pulse {index}: {reason}")]
    BadPulse { index: usize, reason: String },
    #[error("wait {index}: duration must be >= 0, got {duration} s")]
    BadWait { index: usize, duration: f64 },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub direction: Direction,
    /// Pulse area (rad): pi/2 for a beamsplitter, pi for a mirror.
    pub area: f64,
    /// Rung `n` of the targeted transition: |a,n> <-> |b,n+1> for `Plus`,
    /// |a,n> <-> |b,n-1> for `Minus`.
    pub target_rung: i32,
    /// Per-pulse Rabi frequency override (rad/s).
    pub rabi: Option<f64>,
}

impl PulseSpec {
    pub fn new(direction: Direction, area: f64) -> Self {
        PulseSpec { direction, area, target_rung: default_rung(direction), rabi: None }
    }

    pub fn with_rung(mut self, rung: i32) -> Self {
        self.target_rung = rung;
        self
    }

    pub fn rabi_or(&self, default: f64) -> f64 {
        self.rabi.unwrap_or(default)
    }

    /// Rabi flopping runs at 2 Omega, so a pulse of area A lasts A / (2 Omega).
    pub fn duration(&self, default_rabi: f64) -> f64 {
        self.area / (2.0 * self.rabi_or(default_rabi))
    }
}

/// Default target rung per direction: the resonant path a0 -> b1 -> a2.
pub fn default_rung(direction: Direction) -> i32 {
    match direction {
        Direction::Plus => 0,
        Direction::Minus => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitSpec {
    /// s
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Step {
    Pulse(PulseSpec),
    Wait(WaitSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub species: AtomSpecies,
    /// Sequence-level Rabi frequency (rad/s).
    pub rabi: f64,
    pub steps: Vec<Step>,
    /// m/s
    pub v0: f64,
    /// m
    pub z0: f64,
    /// m/s^2
    pub g: f64,
    /// Chirp acceleration (m/s^2); the fringe variable is `g - g_r`.
    pub g_r: f64,
}

/// A pulse together with its place on the absolute clock.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedPulse {
    pub index: usize,
    pub pulse: PulseSpec,
    pub rabi: f64,
    pub start: f64,
    pub end: f64,
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<(), SequenceError> {
        self.species.validate()?;
        if !(self.rabi.is_finite() && self.rabi > 0.0) {
            return Err(SequenceError::BadRabi(self.rabi));
        }
        for (name, v) in [("v0", self.v0), ("z0", self.z0), ("g", self.g), ("gr", self.g_r)] {
            if !v.is_finite() {
                return Err(SequenceError::NonFinite(name));
            }
        }
        let mut pulses = 0;
        for (index, step) in self.steps.iter().enumerate() {
            match step {
                Step::Pulse(p) => {
                    pulses += 1;
                    if !(p.area.is_finite() && p.area > 0.0) {
                        return Err(SequenceError::BadPulse { index, reason: format!("area must be > 0, got {}", p.area) });
                    }
                    if let Some(r) = p.rabi {
                        if !(r.is_finite() && r > 0.0) {
                            return Err(SequenceError::BadPulse { index, reason: format!("Rabi override must be > 0, got {r}") });
                        }
                    }
                }
                Step::Wait(w) => {
                    if !(w.duration.is_finite() && w.duration >= 0.0) {
                        return Err(SequenceError::BadWait { index, duration: w.duration });
                    }
                }
            }
        }
        if pulses == 0 {
            return Err(SequenceError::NoPulses);
        }
        Ok(())
    }

    pub fn params(&self) -> Result<AtomLaserParams, PhysicsError> {
        derive_params(&self.species)
    }

    pub fn pulses(&self) -> impl Iterator<Item = &PulseSpec> {
        self.steps.iter().filter_map(|s| match s {
            Step::Pulse(p) => Some(p),
            Step::Wait(_) => None,
        })
    }

    pub fn pulse_count(&self) -> usize {
        self.pulses().count()
    }

    pub fn wait_count(&self) -> usize {
        self.steps.len() - self.pulse_count()
    }

    /// Absolute start/end time of every pulse, in step order.
    pub fn timeline(&self) -> Vec<TimedPulse> {
        let mut t = 0.0;
        let mut out = Vec::new();
        for step in &self.steps {
            match step {
                Step::Pulse(p) => {
                    let rabi = p.rabi_or(self.rabi);
                    let start = t;
                    t += p.duration(self.rabi);
                    out.push(TimedPulse { index: out.len(), pulse: p.clone(), rabi, start, end: t });
                }
                Step::Wait(w) => t += w.duration,
            }
        }
        out
    }

    pub fn total_duration(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| match s {
                Step::Pulse(p) => p.duration(self.rabi),
                Step::Wait(w) => w.duration,
            })
            .sum()
    }

    pub fn total_pulse_time(&self) -> f64 {
        self.pulses().map(|p| p.duration(self.rabi)).sum()
    }

    /// Same program truncated to its first `n` pulses (waits in between kept).
    pub fn first_pulses(&self, n: usize) -> SequenceSpec {
        let mut steps = Vec::new();
        let mut seen = 0;
        for step in &self.steps {
            if seen == n {
                break;
            }
            if matches!(step, Step::Pulse(_)) {
                seen += 1;
            }
            steps.push(step.clone());
        }
        SequenceSpec { steps, ..self.clone() }
    }

    /// Free-fall time between pulse groups, taken from the first wait.
    pub fn first_wait(&self) -> Option<f64> {
        self.steps.iter().find_map(|s| match s {
            Step::Wait(w) => Some(w.duration),
            Step::Pulse(_) => None,
        })
    }

    /// Serialise to the text format; `parse_sequence` reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "atom {}", self.species.name);
        let _ = writeln!(out, "rabi {} rad/s", self.rabi);
        let _ = writeln!(out, "v0 {} m/s", self.v0);
        let _ = writeln!(out, "z0 {} m", self.z0);
        let _ = writeln!(out, "g {} m/s2", self.g);
        let _ = writeln!(out, "gr {} m/s2", self.g_r);
        for step in &self.steps {
            match step {
                Step::Pulse(p) => {
                    let _ = write!(out, "pulse {} {} rung {}", p.direction.symbol(), format_area(p.area), p.target_rung);
                    if let Some(r) = p.rabi {
                        let _ = write!(out, " rabi {r} rad/s");
                    }
                    out.push('\n');
                }
                Step::Wait(w) => {
                    let _ = writeln!(out, "wait {} s", w.duration);
                }
            }
        }
        out
    }
}

impl fmt::Display for SequenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn format_area(area: f64) -> String {
    if area == PI / 2.0 {
        "pi/2".to_string()
    } else if area == PI {
        "pi".to_string()
    } else {
        format!("{area} rad")
    }
}

/// The seven-pulse momentum-superposition gravimeter:
/// pi/2+, pi-, wait T, pi+, pi-, pi+, wait T, pi-, pi/2+.
pub fn canonical_gravimeter_sequence(
    t_wait: f64,
    rabi: f64,
    species: AtomSpecies,
    v0: f64,
    g: f64,
    g_r: f64,
) -> SequenceSpec {
    use Direction::{Minus, Plus};
    let p = |d, area| Step::Pulse(PulseSpec::new(d, area));
    let w = || Step::Wait(WaitSpec { duration: t_wait });
    SequenceSpec {
        species,
        rabi,
        steps: vec![
            p(Plus, PI / 2.0),
            p(Minus, PI),
            w(),
            p(Plus, PI),
            p(Minus, PI),
            p(Plus, PI),
            w(),
            p(Minus, PI),
            p(Plus, PI / 2.0),
        ],
        v0,
        z0: 0.0,
        g,
        g_r,
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let content = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in content.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(Token { text: &content[s..i], column: content[..s].chars().count() + 1 });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(Token { text: &content[s..], column: content[..s].chars().count() + 1 });
    }
    tokens
}

struct LineCursor<'a, 'b> {
    line: usize,
    end_column: usize,
    tokens: &'b [Token<'a>],
    pos: usize,
}

impl<'a, 'b> LineCursor<'a, 'b> {
    fn err_at(&self, column: usize, message: impl Into<String>) -> ParseError {
        ParseError { line: self.line, column, message: message.into() }
    }

    fn next(&mut self, what: &str) -> Result<&'b Token<'a>, ParseError> {
        match self.tokens.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t)
            }
            None => Err(self.err_at(self.end_column, format!("expected {what}, found end of line"))),
        }
    }

    fn peek(&self) -> Option<&'b Token<'a>> {
        self.tokens.get(self.pos)
    }

    fn number(&mut self, what: &str) -> Result<f64, ParseError> {
        let tok = self.next(what)?;
        match tok.text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err_at(tok.column, format!("malformed number `{}` for {what}", tok.text))),
        }
    }

    fn keyword(&mut self, expected: &[&str], what: &str) -> Result<&'a str, ParseError> {
        let tok = self.next(what)?;
        if expected.contains(&tok.text) {
            Ok(tok.text)
        } else {
            Err(self.err_at(
                tok.column,
                format!("unexpected unit `{}` for {what} (expected {})", tok.text, expected.join(" | ")),
            ))
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) => Err(self.err_at(t.column, format!("unexpected trailing token `{}`", t.text))),
            None => Ok(()),
        }
    }
}

fn rabi_value(cursor: &mut LineCursor<'_, '_>) -> Result<f64, ParseError> {
    let value = cursor.number("Rabi frequency")?;
    let unit = cursor.keyword(&["rad/s", "Hz"], "Rabi frequency")?;
    Ok(if unit == "Hz" { value * std::f64::consts::TAU } else { value })
}

/// Parse the sequence text format using the built-in species table.
pub fn parse_sequence(text: &str) -> Result<SequenceSpec, ParseError> {
    parse_sequence_with(text, &[])
}

/// Parse, resolving `atom NAME` against `extra_species` first and then the
/// built-in table.
pub fn parse_sequence_with(text: &str, extra_species: &[AtomSpecies]) -> Result<SequenceSpec, ParseError> {
    let mut species: Option<AtomSpecies> = None;
    let mut rabi: Option<f64> = None;
    let mut v0: Option<f64> = None;
    let mut z0: Option<f64> = None;
    let mut g: Option<f64> = None;
    let mut g_r: Option<f64> = None;
    let mut steps = Vec::new();
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let tokens = tokenize(raw);
        if tokens.is_empty() {
            continue;
        }
        let mut cur = LineCursor { line: line_no, end_column: raw.chars().count() + 1, tokens: &tokens, pos: 0 };
        let head = cur.next("keyword")?;
        let kw_col = head.column;

        macro_rules! header {
            ($slot:ident, $name:literal, $value:expr) => {{
                if $slot.is_some() {
                    return Err(cur.err_at(kw_col, format!("duplicate header `{}`", $name)));
                }
                $slot = Some($value);
            }};
        }

        match head.text {
            "atom" => {
                let name = cur.next("atom name")?;
                let found = extra_species
                    .iter()
                    .find(|s| s.name == name.text)
                    .cloned()
                    .or_else(|| AtomSpecies::lookup(name.text));
                let Some(sp) = found else {
                    return Err(cur.err_at(name.column, format!("unknown atom `{}`", name.text)));
                };
                header!(species, "atom", sp);
            }
            "rabi" => {
                let col = cur.peek().map_or(cur.end_column, |t| t.column);
                let r = rabi_value(&mut cur)?;
                if r <= 0.0 {
                    return Err(cur.err_at(col, "Rabi frequency must be positive"));
                }
                header!(rabi, "rabi", r);
            }
            "v0" => {
                let v = cur.number("v0")?;
                cur.keyword(&["m/s"], "v0")?;
                header!(v0, "v0", v);
            }
            "z0" => {
                let v = cur.number("z0")?;
                cur.keyword(&["m"], "z0")?;
                header!(z0, "z0", v);
            }
            "g" => {
                let v = cur.number("g")?;
                cur.keyword(&["m/s2"], "g")?;
                header!(g, "g", v);
            }
            "gr" => {
                let v = cur.number("gr")?;
                cur.keyword(&["m/s2"], "gr")?;
                header!(g_r, "gr", v);
            }
            "pulse" => {
                if species.is_none() {
                    return Err(cur.err_at(kw_col, "atom not set before first pulse"));
                }
                if rabi.is_none() {
                    return Err(cur.err_at(kw_col, "rabi not set"));
                }
                let sign = cur.next("pulse direction")?;
                let direction = match sign.text {
                    "+" => Direction::Plus,
                    "-" => Direction::Minus,
                    other => return Err(cur.err_at(sign.column, format!("expected `+` or `-`, found `{other}`"))),
                };
                let area_tok = cur.next("pulse area")?;
                let area = match area_tok.text {
                    "pi/2" => PI / 2.0,
                    "pi" => PI,
                    num => {
                        let v = match num.parse::<f64>() {
                            Ok(v) if v.is_finite() => v,
                            _ => return Err(cur.err_at(area_tok.column, format!("malformed pulse area `{num}`"))),
                        };
                        cur.keyword(&["rad"], "pulse area")?;
                        if v <= 0.0 {
                            return Err(cur.err_at(area_tok.column, "pulse area must be positive"));
                        }
                        v
                    }
                };
                let mut pulse = PulseSpec::new(direction, area);
                while let Some(tok) = cur.peek() {
                    match tok.text {
                        "rung" => {
                            cur.pos += 1;
                            let r = cur.next("rung index")?;
                            pulse.target_rung = r
                                .text
                                .parse::<i32>()
                                .map_err(|_| cur.err_at(r.column, format!("malformed rung `{}`", r.text)))?;
                        }
                        "rabi" => {
                            cur.pos += 1;
                            let col = cur.peek().map_or(cur.end_column, |t| t.column);
                            let r = rabi_value(&mut cur)?;
                            if r <= 0.0 {
                                return Err(cur.err_at(col, "Rabi frequency must be positive"));
                            }
                            pulse.rabi = Some(r);
                        }
                        other => return Err(cur.err_at(tok.column, format!("unknown pulse option `{other}`"))),
                    }
                }
                steps.push(Step::Pulse(pulse));
            }
            "wait" => {
                let col = cur.peek().map_or(cur.end_column, |t| t.column);
                let v = cur.number("wait duration")?;
                let unit = cur.keyword(&["s", "ms", "us"], "wait duration")?;
                let scale = match unit {
                    "ms" => 1e-3,
                    "us" => 1e-6,
                    _ => 1.0,
                };
                if v < 0.0 {
                    return Err(cur.err_at(col, "wait duration must be >= 0"));
                }
                steps.push(Step::Wait(WaitSpec { duration: v * scale }));
            }
            other => return Err(cur.err_at(kw_col, format!("unknown keyword `{other}`"))),
        }
        cur.finish()?;
    }

    let at_end = |message: &str| ParseError { line: last_line.max(1), column: 1, message: message.to_string() };
    if !steps.iter().any(|s| matches!(s, Step::Pulse(_))) {
        return Err(at_end("sequence has no pulses"));
    }
    let g = g.unwrap_or(9.81);
    Ok(SequenceSpec {
        species: species.expect("checked before first pulse"),
        rabi: rabi.expect("checked before first pulse"),
        steps,
        v0: v0.unwrap_or(0.0),
        z0: z0.unwrap_or(0.0),
        g,
        g_r: g_r.unwrap_or(g),
    })
}

// ---------------------------------------------------------------------------
// Chirp
// ---------------------------------------------------------------------------

/// How the per-pulse chirp laws are stitched together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ChirpAnchoring {
    /// Every law is referenced to t = 0 (two free-running ramps, one per
    /// momentum direction); the resonant exponent is exactly zero on the
    /// reference trajectory. The laser phase may jump when the direction
    /// switches.
    #[default]
    Absolute,
    /// Each law is re-anchored at its own pulse start so the phase is
    /// continuous; the phase is held during waits.
    PhaseContinuous,
}

/// Laser phase law during one pulse, in absolute time:
/// `alpha(t) = c0 + c1 t + c2 t^2` with `Xi(t) = -alpha(t)` (hyperfine
/// splitting absorbed into the rotating frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChirpSegment {
    pub start: f64,
    pub end: f64,
    pub direction: Direction,
    pub rung: i32,
    pub rabi: f64,
    pub area: f64,
    /// Constant added on top of the absolute law for phase continuity (rad).
    pub offset: f64,
    pub coeffs: [f64; 3],
}

impl ChirpSegment {
    pub fn alpha(&self, t: f64) -> f64 {
        self.coeffs[0] + t * (self.coeffs[1] + t * self.coeffs[2])
    }

    pub fn xi(&self, t: f64) -> f64 {
        -self.alpha(t)
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChirpProgram {
    pub anchoring: ChirpAnchoring,
    pub segments: Vec<ChirpSegment>,
}

impl ChirpProgram {
    /// Xi at time t; held at the last pulse boundary between pulses.
    pub fn xi(&self, t: f64) -> f64 {
        let mut last = 0.0;
        for seg in &self.segments {
            if t < seg.start {
                return last;
            }
            if t <= seg.end {
                return seg.xi(t);
            }
            last = seg.xi(seg.end);
        }
        last
    }

    /// Largest |Xi(t_k-) - Xi(t_k+)| over pulse boundaries.
    pub fn max_discontinuity(&self) -> f64 {
        let mut prev = 0.0;
        let mut worst: f64 = 0.0;
        for seg in &self.segments {
            worst = worst.max((seg.xi(seg.start) - prev).abs());
            prev = seg.xi(seg.end);
        }
        worst
    }
}

/// Absolute law for one pulse, before any continuity offset.
fn absolute_law(params: &AtomLaserParams, seq: &SequenceSpec, direction: Direction, rung: i32) -> [f64; 3] {
    let k = params.k_e;
    let wr = params.omega_r;
    let n = f64::from(rung);
    // k z_ref(t) with the reference trajectory accelerating at g_r.
    let kz = [k * seq.z0, k * seq.v0, 0.5 * k * seq.g_r];
    match direction {
        // alpha + k z_ref + (2n+1) w_R t = 0
        Direction::Plus => [-kz[0], -kz[1] - (2.0 * n + 1.0) * wr, -kz[2]],
        // alpha - k z_ref - (2n-1) w_R t = 0
        Direction::Minus => [kz[0], kz[1] + (2.0 * n - 1.0) * wr, kz[2]],
    }
}

pub fn build_chirp(seq: &SequenceSpec) -> Result<ChirpProgram, SequenceError> {
    build_chirp_with(seq, ChirpAnchoring::default())
}

pub fn build_chirp_with(seq: &SequenceSpec, anchoring: ChirpAnchoring) -> Result<ChirpProgram, SequenceError> {
    let params = seq.params()?;
    let mut segments = Vec::new();
    let mut held_alpha = 0.0;
    for tp in seq.timeline() {
        let mut coeffs = absolute_law(&params, seq, tp.pulse.direction, tp.pulse.target_rung);
        let offset = match anchoring {
            ChirpAnchoring::Absolute => 0.0,
            ChirpAnchoring::PhaseContinuous => {
                let s = tp.start;
                held_alpha - (coeffs[0] + s * (coeffs[1] + s * coeffs[2]))
            }
        };
        coeffs[0] += offset;
        let seg = ChirpSegment {
            start: tp.start,
            end: tp.end,
            direction: tp.pulse.direction,
            rung: tp.pulse.target_rung,
            rabi: tp.rabi,
            area: tp.pulse.area,
            offset,
            coeffs,
        };
        held_alpha = seg.alpha(seg.end);
        segments.push(seg);
    }
    Ok(ChirpProgram { anchoring, segments })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const GRAVIMETER_TEXT: &str = "\
atom Rb87
rabi 1.0947e5 rad/s
v0 10 m/s
g 9.81 m/s2
gr 9.81 m/s2
pulse + pi/2
pulse - pi
wait 100 ms
pulse + pi
pulse - pi
pulse + pi
wait 100 ms
pulse - pi
pulse + pi/2
";

    #[test]
    fn parses_canonical_file() {
        let seq = parse_sequence(GRAVIMETER_TEXT).unwrap();
        assert_eq!(seq.pulse_count(), 7);
        assert_eq!(seq.wait_count(), 2);
        assert_eq!(seq.rabi, 1.0947e5);
        assert_eq!(seq.v0, 10.0);
        assert_eq!(seq.z0, 0.0);
        let dirs: String = seq.pulses().map(|p| p.direction.symbol()).collect();
        assert_eq!(dirs, "+-+-+-+");
        let rungs: Vec<i32> = seq.pulses().map(|p| p.target_rung).collect();
        assert_eq!(rungs, vec![0, 2, 0, 2, 0, 2, 0]);
        assert_eq!(seq.first_wait(), Some(0.1));
        let canon = canonical_gravimeter_sequence(0.1, 1.0947e5, AtomSpecies::rb87(), 10.0, 9.81, 9.81);
        assert_eq!(seq, canon);
    }

    #[test]
    fn rabi_must_precede_pulses() {
        let err = parse_sequence("atom Rb87\npulse + pi/2\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("rabi not set"), "{err}");
    }

    #[test]
    fn error_positions() {
        let err = parse_sequence("atom Rb87\nrabi 1e5 rad/s\nplse + pi\n").unwrap_err();
        assert_eq!((err.line, err.column), (3, 1));
        assert!(err.message.contains("plse"));

        let err = parse_sequence("atom Rb87\nrabi 1e5 rad/s\nwait 1x ms\n").unwrap_err();
        assert_eq!((err.line, err.column), (3, 6));
        assert!(err.message.contains("1x"));

        let err = parse_sequence("atom Rb87\nrabi 1e5 rad/s\nwait 1 min\n").unwrap_err();
        assert!(err.message.contains("min"));

        let err = parse_sequence("atom Rb87\nrabi 1e5 rad/s\nrabi 2e5 rad/s\npulse + pi\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("duplicate header `rabi`"));

        let err = parse_sequence("atom Cs133\n").unwrap_err();
        assert!(err.message.contains("Cs133"));

        let err = parse_sequence("atom Rb87\nrabi 1e5 rad/s\npulse * pi\n").unwrap_err();
        assert_eq!(err.column, 7);

        let err = parse_sequence("atom Rb87\nrabi 1e5 rad/s\n").unwrap_err();
        assert!(err.message.contains("no pulses"));
    }

    #[test]
    fn hz_is_converted_and_comments_ignored() {
        let seq = parse_sequence("# header\natom Rb87 # inline\nrabi 1000 Hz\n\npulse + 1.5 rad rung -1\n").unwrap();
        assert!((seq.rabi - 2.0 * PI * 1000.0).abs() < 1e-9);
        let p = seq.pulses().next().unwrap();
        assert_eq!(p.area, 1.5);
        assert_eq!(p.target_rung, -1);
    }

    #[test]
    fn custom_species_from_config() {
        let k = AtomSpecies::new("K41", 6.8e-26, 766.7e-9).unwrap();
        let seq = parse_sequence_with("atom K41\nrabi 1e5 rad/s\npulse - pi\n", &[k.clone()]).unwrap();
        assert_eq!(seq.species, k);
    }

    #[test]
    fn canonical_timing() {
        let rabi = 1.0e5;
        let seq = canonical_gravimeter_sequence(0.01, rabi, AtomSpecies::rb87(), 5.0, 9.81, 9.8);
        seq.validate().unwrap();
        assert_eq!(seq.pulse_count(), 7);
        assert_eq!(seq.wait_count(), 2);
        let expect = 2.0 * PI / (4.0 * rabi) + 5.0 * PI / (2.0 * rabi);
        assert!((seq.total_pulse_time() - expect).abs() < 1e-18);
        assert!((seq.total_pulse_time() - 3.0 * PI / rabi).abs() < 1e-18);
        assert!((seq.timeline()[0].end - PI / (4.0 * rabi)).abs() < 1e-20);
    }

    #[test]
    fn chirp_resonance_conditions() {
        let seq = parse_sequence(GRAVIMETER_TEXT).unwrap();
        let params = seq.params().unwrap();
        let chirp = build_chirp(&seq).unwrap();
        let k = params.k_e;
        let wr = params.omega_r;
        let zref = |t: f64| seq.z0 + seq.v0 * t + 0.5 * seq.g_r * t * t;
        // pulse 1: omega_R t + Theta_+ = 0
        let s1 = &chirp.segments[0];
        for t in [0.0, 0.5 * s1.end, s1.end] {
            let theta_plus = s1.alpha(t) + k * zref(t);
            assert!((wr * t + theta_plus).abs() < 1e-9);
        }
        // pulse 2: Theta_- - 3 omega_R t = 0
        let s2 = &chirp.segments[1];
        for t in [s2.start, s2.end] {
            let theta_minus = s2.alpha(t) - k * zref(t);
            assert!((theta_minus - 3.0 * wr * t).abs() < 1e-9);
        }
        // |d2 Xi / dt2| = k_e g_r
        for seg in &chirp.segments {
            assert!((2.0 * seg.coeffs[2].abs() - k * seq.g_r).abs() < 1e-6);
        }
    }

    #[test]
    fn chirp_linear_without_acceleration() {
        let mut seq = parse_sequence(GRAVIMETER_TEXT).unwrap();
        seq.g_r = 0.0;
        seq.v0 = 0.0;
        for anchoring in [ChirpAnchoring::Absolute, ChirpAnchoring::PhaseContinuous] {
            let chirp = build_chirp_with(&seq, anchoring).unwrap();
            assert!(chirp.segments.iter().all(|s| s.coeffs[2] == 0.0));
        }
    }

    #[test]
    fn phase_continuous_chirp_has_no_jumps() {
        let seq = parse_sequence(GRAVIMETER_TEXT).unwrap();
        let chirp = build_chirp_with(&seq, ChirpAnchoring::PhaseContinuous).unwrap();
        // Xi reaches ~1e6 rad, so the boundary check is relative to that scale.
        let scale = chirp.segments.iter().map(|s| s.xi(s.end).abs()).fold(1.0, f64::max);
        assert!(chirp.max_discontinuity() <= 1e-12 * scale.max(1.0) + 1e-12, "{}", chirp.max_discontinuity());
        // Held during the wait.
        let s2 = &chirp.segments[1];
        assert_eq!(chirp.xi(s2.end + 0.05), s2.xi(s2.end));
    }
}
