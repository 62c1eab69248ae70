//! `gravsim`: command-line front end for the gravimeter simulator.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gravsim_core::acceptance::{run_acceptance, AcceptanceOptions};
use gravsim_core::analytic::{canonical_timing, fringe_period};
use gravsim_core::experiments::{
    format_sig, single_run, write_csv, write_json, RunReport, DEFAULT_THERMAL_NODES,
};
use gravsim_core::ladder::DEFAULT_N_MAX;
use gravsim_core::physics::{special_mu, AtomSpecies};
use gravsim_core::sequence::parse_sequence_with;
use gravsim_core::{
    canonical_gravimeter_sequence, derive_params, run_scan, Engine, Error, Format, Range, ScanKind, ScanResult,
    ScanSpec, SequenceSpec, Thermal, Tolerances,
};

const AFTER_HELP: &str = "\
Units:
  Everything is SI. Frequencies are stored as angular frequencies in rad/s.
  --rabi takes rad/s by default and also accepts a `Hz`, `kHz` or `MHz`
  suffix; Hz values are multiplied by 2*pi on input, so `--rabi 17.4kHz`
  means 2*pi*17400 rad/s. The same rule applies to `rabi ... Hz` lines in
  sequence files. --temperature takes kelvin and accepts mK, uK or nK.

Precedence:
  command-line flags > config file (--seed-file) > sequence file > defaults.

Config file (TOML key = value):
  species.name, species.mass_kg, species.wavelength_m, g, g_r, v0,
  temperature, nodes, rabi, mu, n_max, rel_tol, abs_tol, workers.
  A species defined there may be named by `atom` lines in sequence files.

Without a sequence file the built-in seven-pulse gravimeter is used:
  T = 10 ms, Omega = omega_R/mu_1 (mu_1 = sqrt(3)/2), v0 = 5 m/s, g = g_r = 9.81.

Exit codes: 0 success, 2 input error, 3 computation error.";

#[derive(Parser)]
#[command(name = "gravsim", version, about = "Composite Raman-pulse atom gravimeter simulator", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one sequence and print populations, the rung table and
    /// perturbative diagnostics.
    Run(RunArgs),
    /// Fringe scan: sweep the chirp acceleration g_r over the full sequence.
    Fringes(FringeArgs),
    /// Sweep mu = omega_R/Omega over the first two pulses.
    MuScan(MuScanArgs),
    /// Numeric vs closed-form deviation after the first pulse, swept over v0.
    Compare(CompareArgs),
    /// Run the acceptance suite and print one line per criterion.
    Validate(ValidateArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Output file. `-` writes to stdout. Scans default to
    /// `<scan-kind>_<unix-time>.<csv|json>` in the working directory.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Output format; defaults to the --out extension, else csv.
    #[arg(long, value_enum)]
    format: Option<OutFormat>,
    /// Worker threads for scans [default: number of cores].
    #[arg(long, env = "GRAVSIM_WORKERS", value_parser = clap::value_parser!(u32).range(1..))]
    workers: Option<u32>,
    /// Half-width K of the momentum ladder (rungs -K..K) [default: 7].
    #[arg(long, value_name = "K")]
    n_max: Option<usize>,
    /// Relative tolerance of the adaptive integrator [default: 1e-10].
    #[arg(long, value_name = "X")]
    rel_tol: Option<f64>,
    /// Absolute tolerance of the adaptive integrator [default: 1e-12].
    #[arg(long, value_name = "X")]
    abs_tol: Option<f64>,
    /// TOML config file with species and parameter overrides.
    #[arg(long, value_name = "PATH")]
    seed_file: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// True gravitational acceleration g (m/s^2).
    #[arg(long)]
    g: Option<f64>,
    /// Chirp acceleration g_r (m/s^2).
    #[arg(long = "gr", value_name = "G_R")]
    g_r: Option<f64>,
    /// Launch velocity v0 (m/s).
    #[arg(long)]
    v0: Option<f64>,
    /// Cloud temperature T_C; enables thermal averaging (K, or mK/uK/nK suffix).
    #[arg(long, value_parser = parse_temperature, value_name = "T_C")]
    temperature: Option<f64>,
    /// Gauss-Hermite nodes for thermal averaging; odd [default: 21].
    #[arg(long)]
    nodes: Option<usize>,
    /// Rabi frequency Omega (rad/s; Hz, kHz, MHz suffixes are multiplied by 2*pi).
    #[arg(long, value_parser = parse_rabi, value_name = "OMEGA")]
    rabi: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Sequence file.
    file: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
    /// Set Omega = omega_R / mu. `special:M` selects the M-th special value.
    #[arg(long, value_parser = parse_mu, conflicts_with = "rabi")]
    mu: Option<f64>,
}

#[derive(Args)]
struct FringeArgs {
    /// Sequence file.
    file: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
    /// Set Omega = omega_R / mu. `special:M` selects the M-th special value.
    #[arg(long, value_parser = parse_mu, conflicts_with = "rabi")]
    mu: Option<f64>,
    /// Explicit g_r range `lo:hi:steps` (m/s^2).
    #[arg(long = "gr-range", value_name = "LO:HI:STEPS", conflicts_with_all = ["gr_span", "steps"])]
    gr_range: Option<Range>,
    /// Total g_r span centred on the sequence's g_r (m/s^2) [default: 5 fringe periods].
    #[arg(long)]
    gr_span: Option<f64>,
    /// Number of g_r points [default: 201].
    #[arg(long)]
    steps: Option<usize>,
    /// numeric, analytic or both.
    #[arg(long, default_value = "numeric")]
    engine: Engine,
}

#[derive(Args)]
struct MuScanArgs {
    /// Sequence file; only its first two pulses are used.
    file: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
    /// mu range `lo:hi:steps`.
    #[arg(long, default_value = "0.3:3.0:541", value_name = "LO:HI:STEPS")]
    mu: Range,
    /// numeric, analytic or both.
    #[arg(long, default_value = "both")]
    engine: Engine,
}

#[derive(Args)]
struct CompareArgs {
    /// Sequence file; only its first pulse is used.
    file: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
    /// Set Omega = omega_R / mu. `special:M` selects the M-th special value.
    #[arg(long, value_parser = parse_mu, conflicts_with = "rabi")]
    mu: Option<f64>,
    /// v0 range `lo:hi:steps` (m/s).
    #[arg(long = "v0-range", default_value = "0.5:10:40", value_name = "LO:HI:STEPS")]
    v0_range: Range,
    /// Point spacing of the v0 range.
    #[arg(long, value_enum, default_value = "log")]
    spacing: Spacing,
}

#[derive(Args)]
struct ValidateArgs {
    /// Run only these criteria, e.g. `--only 1,2,3`.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=8))]
    only: Vec<u8>,
    /// Worker threads for the scans [default: number of cores].
    #[arg(long, env = "GRAVSIM_WORKERS", value_parser = clap::value_parser!(u32).range(1..))]
    workers: Option<u32>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Spacing {
    Lin,
    Log,
}

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

enum CliError {
    Input(String),
    Compute(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}

impl<E: Into<Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        let e = e.into();
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Compute(e.to_string())
        }
    }
}

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

type CliResult<T> = Result<T, CliError>;

// ---------------------------------------------------------------------------
// Value parsers
// ---------------------------------------------------------------------------

fn parse_scaled(s: &str, units: &[(&str, f64)], what: &str) -> Result<f64, String> {
    let s = s.trim();
    for (suffix, factor) in units {
        if let Some(num) = s.strip_suffix(suffix) {
            if let Ok(v) = num.trim().parse::<f64>() {
                return Ok(v * factor);
            }
        }
    }
    s.parse::<f64>().map_err(|_| format!("cannot read {what} `{s}`"))
}

fn parse_rabi(s: &str) -> Result<f64, String> {
    let tau = std::f64::consts::TAU;
    let v = parse_scaled(s, &[("rad/s", 1.0), ("MHz", tau * 1e6), ("kHz", tau * 1e3), ("Hz", tau)], "frequency")?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("Rabi frequency must be positive, got {s}"))
    }
}

fn parse_temperature(s: &str) -> Result<f64, String> {
    let v = parse_scaled(s, &[("nK", 1e-9), ("uK", 1e-6), ("mK", 1e-3), ("K", 1.0)], "temperature")?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("temperature must be >= 0 K, got {s}"))
    }
}

fn parse_mu(s: &str) -> Result<f64, String> {
    if let Some(m) = s.strip_prefix("special:") {
        let m: u32 = m.parse().map_err(|_| format!("`{m}` is not a positive integer"))?;
        return special_mu(m).map_err(|e| e.to_string());
    }
    let v: f64 = s.parse().map_err(|_| format!("cannot read mu `{s}` (a number or special:M)"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("mu must be positive, got {s}"))
    }
}

// ---------------------------------------------------------------------------
// Settings: defaults < sequence file < config file < flags
// ---------------------------------------------------------------------------

#[derive(Default)]
struct Settings {
    species: Option<AtomSpecies>,
    g: Option<f64>,
    g_r: Option<f64>,
    v0: Option<f64>,
    temperature: Option<f64>,
    nodes: Option<usize>,
    rabi: Option<f64>,
    mu: Option<f64>,
    n_max: Option<usize>,
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    workers: Option<usize>,
}

impl Settings {
    fn from_flags(common: &Common, o: &Overrides, mu: Option<f64>) -> Self {
        Settings {
            species: None,
            g: o.g,
            g_r: o.g_r,
            v0: o.v0,
            temperature: o.temperature,
            nodes: o.nodes,
            rabi: o.rabi,
            mu,
            n_max: common.n_max,
            rel_tol: common.rel_tol,
            abs_tol: common.abs_tol,
            workers: common.workers.map(|w| w as usize),
        }
    }

    fn over(self, lower: Settings) -> Settings {
        // Rabi frequency and mu set the same thing; the higher layer wins.
        let (rabi, mu) = if self.rabi.is_some() || self.mu.is_some() {
            (self.rabi, self.mu)
        } else {
            (lower.rabi, lower.mu)
        };
        Settings {
            species: self.species.or(lower.species),
            g: self.g.or(lower.g),
            g_r: self.g_r.or(lower.g_r),
            v0: self.v0.or(lower.v0),
            temperature: self.temperature.or(lower.temperature),
            nodes: self.nodes.or(lower.nodes),
            rabi,
            mu,
            n_max: self.n_max.or(lower.n_max),
            rel_tol: self.rel_tol.or(lower.rel_tol),
            abs_tol: self.abs_tol.or(lower.abs_tol),
            workers: self.workers.or(lower.workers),
        }
    }

    fn tolerances(&self) -> Tolerances {
        let mut tol = Tolerances::default();
        if let Some(r) = self.rel_tol {
            tol.rel_tol = r;
        }
        if let Some(a) = self.abs_tol {
            tol.abs_tol = a;
        }
        tol
    }

    fn thermal(&self) -> CliResult<Option<Thermal>> {
        let nodes = self.nodes.unwrap_or(DEFAULT_THERMAL_NODES);
        if nodes % 2 == 0 {
            return Err(input(format!("--nodes must be odd, got {nodes}")));
        }
        Ok(self.temperature.map(|temperature| Thermal { temperature, nodes }))
    }

    fn workers(&self) -> usize {
        self.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

fn read_config(path: &Path) -> CliResult<Settings> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text.parse().map_err(|e| input(format!("{}: {e}", path.display())))?;
    let bad = |key: &str, want: &str| input(format!("{}: `{key}` must be {want}", path.display()));
    let num = |key: &str| -> CliResult<Option<f64>> {
        match table.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(v)) => Ok(Some(*v)),
            Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(bad(key, "a number")),
        }
    };
    let count = |key: &str| -> CliResult<Option<usize>> {
        match table.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(v)) if *v > 0 => Ok(Some(*v as usize)),
            Some(_) => Err(bad(key, "a positive integer")),
        }
    };
    let mu = match table.get("mu") {
        None => None,
        Some(toml::Value::String(s)) => Some(parse_mu(s).map_err(|e| bad("mu", &e))?),
        Some(_) => num("mu")?,
    };

    let species = match table.get("species") {
        None => None,
        Some(toml::Value::Table(sp)) => {
            let name = match sp.get("name") {
                Some(toml::Value::String(s)) => s.clone(),
                _ => return Err(bad("species.name", "a string")),
            };
            let field = |key: &str| match sp.get(key) {
                None => Ok(None),
                Some(toml::Value::Float(v)) => Ok(Some(*v)),
                Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
                Some(_) => Err(bad(&format!("species.{key}"), "a number")),
            };
            match (field("mass_kg")?, field("wavelength_m")?) {
                (Some(m), Some(l)) => Some(AtomSpecies::new(name, m, l).map_err(|e| input(e.to_string()))?),
                (None, None) => Some(
                    AtomSpecies::lookup(&name)
                        .ok_or_else(|| input(format!("unknown species `{name}`; give mass_kg and wavelength_m")))?,
                ),
                _ => return Err(input("species.mass_kg and species.wavelength_m go together")),
            }
        }
        Some(_) => return Err(bad("species", "a table")),
    };

    Ok(Settings {
        species,
        g: num("g")?,
        g_r: num("g_r")?,
        v0: num("v0")?,
        temperature: num("temperature")?,
        nodes: count("nodes")?,
        rabi: num("rabi")?,
        mu,
        n_max: count("n_max")?,
        rel_tol: num("rel_tol")?,
        abs_tol: num("abs_tol")?,
        workers: count("workers")?,
    })
}

/// The sequence after every layer of overrides, plus the merged settings.
fn load(file: Option<&Path>, common: &Common, o: &Overrides, mu: Option<f64>) -> CliResult<(SequenceSpec, Settings)> {
    let config = match &common.seed_file {
        Some(p) => read_config(p)?,
        None => Settings::default(),
    };
    let settings = Settings::from_flags(common, o, mu).over(config);
    let extra: Vec<AtomSpecies> = settings.species.iter().cloned().collect();

    let mut seq = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
            parse_sequence_with(&text, &extra).map_err(|e| input(format!("{}: {e}", path.display())))?
        }
        None => {
            let species = settings.species.clone().unwrap_or_else(AtomSpecies::rb87);
            let params = derive_params(&species)?;
            let mu1 = special_mu(1)?;
            canonical_gravimeter_sequence(0.01, params.omega_r / mu1, species, 5.0, 9.81, 9.81)
        }
    };

    if let Some(g) = settings.g {
        seq.g = g;
    }
    if let Some(g_r) = settings.g_r {
        seq.g_r = g_r;
    }
    if let Some(v0) = settings.v0 {
        seq.v0 = v0;
    }
    if let Some(rabi) = settings.rabi {
        seq.rabi = rabi;
    }
    if let Some(mu) = settings.mu {
        seq.rabi = derive_params(&seq.species)?.rabi_for_mu(mu);
    }
    seq.validate()?;
    Ok((seq, settings))
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn resolve_format(common: &Common) -> Format {
    if let Some(f) = common.format {
        return f.into();
    }
    match common.out.as_ref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
        Some("json") => Format::Json,
        _ => Format::Csv,
    }
}

/// Write scan data and return where it went (`None` for stdout).
fn emit_scan(r: &ScanResult, common: &Common) -> CliResult<Option<PathBuf>> {
    let format = resolve_format(common);
    let path = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}_{}.{}", r.metadata.kind.label(), unix_time(), format.extension())));
    let io = |e: std::io::Error| input(format!("{}: {e}", path.display()));
    if path.as_os_str() == "-" {
        let mut out = std::io::stdout().lock();
        match format {
            Format::Csv => write_csv(r, &mut out).map_err(io)?,
            Format::Json => {
                write_json(r, &mut out)?;
                writeln!(out).map_err(io)?;
            }
        }
        return Ok(None);
    }
    gravsim_core::write_results(r, &path, format)?;
    Ok(Some(path))
}

fn scan_summary(r: &ScanResult, written: &Option<PathBuf>) -> Vec<String> {
    let mut lines = vec![format!(
        "{}: {} points over {} = {} .. {} {}",
        r.metadata.kind.label(),
        r.points.len(),
        r.metadata.axis,
        format_sig(r.metadata.range.lo),
        format_sig(r.metadata.range.hi),
        r.metadata.axis_unit
    )];
    if let Some(c) = r.summary.contrast_numeric {
        lines.push(format!("contrast (numeric)  = {}", format_sig(c)));
    }
    if let Some(c) = r.summary.contrast_analytic {
        lines.push(format!("contrast (analytic) = {}", format_sig(c)));
    }
    if let Some(p) = r.summary.analytic_period {
        lines.push(format!("analytic period     = {} m/s^2", format_sig(p)));
    }
    for w in &r.warnings {
        lines.push(format!("warning: {w}"));
    }
    if let Some(p) = written {
        lines.push(format!("wrote {}", p.display()));
    }
    lines
}

fn scan(spec: ScanSpec, common: &Common) -> CliResult<()> {
    let r = run_scan(&spec)?;
    let written = emit_scan(&r, common)?;
    let lines = scan_summary(&r, &written);
    if written.is_some() {
        lines.iter().for_each(|l| println!("{l}"));
    } else {
        lines.iter().for_each(|l| eprintln!("{l}"));
    }
    Ok(())
}

fn scan_spec(kind: ScanKind, range: Range, seq: SequenceSpec, settings: &Settings) -> CliResult<ScanSpec> {
    let mut spec = ScanSpec::new(kind, range, seq);
    spec.n_max = settings.n_max.unwrap_or(DEFAULT_N_MAX);
    spec.tol = settings.tolerances();
    spec.thermal = settings.thermal()?;
    spec.workers = Some(settings.workers());
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_run(a: RunArgs) -> CliResult<()> {
    let (seq, settings) = load(a.file.as_deref(), &a.common, &a.overrides, a.mu)?;
    let n_max = settings.n_max.unwrap_or(DEFAULT_N_MAX);
    let report = single_run(&seq, 0.0, n_max, settings.tolerances(), settings.thermal()?)?;
    print_report(&seq, &report);

    let wants_file = a.common.out.is_some() || a.common.format.is_some();
    if wants_file {
        if matches!(a.common.format, Some(OutFormat::Csv)) {
            return Err(input("run writes JSON only; use --format json"));
        }
        let path = a.common.out.clone().unwrap_or_else(|| PathBuf::from(format!("run_{}.json", unix_time())));
        let io = |e: std::io::Error| input(format!("{}: {e}", path.display()));
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Compute(e.to_string()))?;
        if path.as_os_str() == "-" {
            println!("{text}");
        } else {
            std::fs::write(&path, text + "\n").map_err(io)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn print_report(seq: &SequenceSpec, r: &RunReport) {
    let f = |x: f64| format_sig(x);
    println!(
        "sequence: {} pulses, {} waits, {} s; species {}; Omega = {} rad/s ({} Hz)",
        seq.pulse_count(),
        seq.wait_count(),
        f(seq.total_duration()),
        seq.species.name,
        f(seq.rabi),
        f(seq.rabi / std::f64::consts::TAU)
    );
    println!("v0 = {} m/s  g = {} m/s^2  g_r = {} m/s^2  gamma = {} m/s^2", f(seq.v0), f(seq.g), f(seq.g_r), f(seq.g - seq.g_r));
    if let Some(th) = r.thermal {
        println!("thermal average: T_C = {} K, {} nodes", f(th.temperature), th.nodes);
    }
    println!();
    println!("P_a = {}", f(r.numeric.p_a));
    println!("P_b = {}", f(r.numeric.p_b));
    if let (Some(an), Some(route)) = (r.analytic, r.analytic_route) {
        let route = match route {
            gravsim_core::experiments::AnalyticRoute::Canonical => "closed form",
            gravsim_core::experiments::AnalyticRoute::Composed => "block composition",
        };
        println!("analytic ({route}): P_a = {}  P_b = {}", f(an.p_a), f(an.p_b));
    }
    println!();
    println!("{:>5}  {:>16}  {:>16}", "rung", "P(a,n)", "P(b,n)");
    for rung in &r.per_rung {
        println!("{:>5}  {:>16}  {:>16}", rung.n, f(rung.a), f(rung.b));
    }
    println!();
    println!(
        "{:>5} {:>3} {:>16} {:>5} {:>16} {:>16} {:>16} {:>16} {:>16}",
        "pulse", "dir", "area (rad)", "rung", "start (s)", "duration (s)", "eta", "beta", "mu"
    );
    for p in &r.pulses {
        println!(
            "{:>5} {:>3} {:>16} {:>5} {:>16} {:>16} {:>16} {:>16} {:>16}",
            p.index,
            p.direction,
            f(p.area),
            p.rung,
            f(p.start),
            f(p.duration),
            f(p.eta),
            f(p.beta),
            f(p.mu)
        );
    }
}

fn cmd_fringes(a: FringeArgs) -> CliResult<()> {
    let (seq, settings) = load(a.file.as_deref(), &a.common, &a.overrides, a.mu)?;
    let range = match a.gr_range {
        Some(r) => r,
        None => {
            let span = match a.gr_span {
                Some(s) if s.is_finite() && s > 0.0 => s,
                Some(s) => return Err(input(format!("--gr-span must be positive, got {s}"))),
                None => {
                    let timing = canonical_timing(&seq)
                        .map_err(|_| input("sequence is not the canonical gravimeter; give --gr-span or --gr-range"))?;
                    5.0 * fringe_period(seq.params()?.k_e, timing.t_wait, timing.tau1)
                }
            };
            Range::linear(seq.g_r - span / 2.0, seq.g_r + span / 2.0, a.steps.unwrap_or(201))
        }
    };
    range.validate()?;
    let mut spec = scan_spec(ScanKind::FringeGr, range, seq, &settings)?;
    spec.engine = a.engine;
    scan(spec, &a.common)
}

fn cmd_mu_scan(a: MuScanArgs) -> CliResult<()> {
    let (seq, settings) = load(a.file.as_deref(), &a.common, &a.overrides, None)?;
    let mut spec = scan_spec(ScanKind::Mu, a.mu, seq, &settings)?;
    spec.engine = a.engine;
    scan(spec, &a.common)
}

fn cmd_compare(a: CompareArgs) -> CliResult<()> {
    let (seq, settings) = load(a.file.as_deref(), &a.common, &a.overrides, a.mu)?;
    let r = a.v0_range;
    let range = match a.spacing {
        Spacing::Lin => r,
        Spacing::Log => Range::logarithmic(r.lo, r.hi, r.steps),
    };
    range.validate()?;
    let mut spec = scan_spec(ScanKind::Velocity, range, seq, &settings)?;
    spec.engine = Engine::Both;
    scan(spec, &a.common)
}

fn cmd_validate(a: ValidateArgs) -> CliResult<()> {
    let opts = AcceptanceOptions { workers: a.workers.map(|w| w as usize), only: a.only };
    let reports = run_acceptance(&opts, |r| println!("{r}"));
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
    if failed.is_empty() {
        println!("all {} criteria passed", reports.len());
        Ok(())
    } else {
        Err(CliError::Compute(format!("criteria failed: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Fringes(a) => cmd_fringes(a),
        Command::MuScan(a) => cmd_mu_scan(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Input(msg) | CliError::Compute(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
