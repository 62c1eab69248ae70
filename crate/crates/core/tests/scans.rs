use std::path::PathBuf;

use gravsim_core::experiments::{
    numeric_populations, read_csv_rows, read_json, thermal_average, write_csv, Engine, Format, Range, ScanKind,
    ScanSpec, Thermal,
};
use gravsim_core::ladder::Tolerances;
use gravsim_core::physics::{derive_params, sigma_p_from_temperature, special_mu, AtomSpecies};
use gravsim_core::sequence::{canonical_gravimeter_sequence, parse_sequence};
use gravsim_core::{run_scan, write_results, SequenceSpec};
use proptest::prelude::*;

fn base(t_wait: f64, v0: f64) -> SequenceSpec {
    let sp = AtomSpecies::rb87();
    let params = derive_params(&sp).unwrap();
    canonical_gravimeter_sequence(t_wait, params.omega_r / special_mu(1).unwrap(), sp, v0, 9.81, 9.81)
}

fn mu_spec(workers: usize) -> ScanSpec {
    let mut spec = ScanSpec::new(ScanKind::Mu, Range::linear(0.5, 2.5, 6), base(0.01, 5.0));
    spec.engine = Engine::Both;
    spec.workers = Some(workers);
    spec
}

#[test]
fn worker_count_does_not_change_results() {
    let one = run_scan(&mu_spec(1)).unwrap();
    let three = run_scan(&mu_spec(3)).unwrap();
    assert_eq!(one.points, three.points);
}

#[test]
fn thermal_quadrature_is_converged_at_cold_temperatures() {
    let seq = base(0.01, 5.0).first_pulses(2);
    let sigma = sigma_p_from_temperature(&seq.species, 0.32e-6).unwrap();
    let eval = |p: f64| numeric_populations(&seq, p, 7, Tolerances::default()).map_err(Into::into);
    let coarse = thermal_average(eval, sigma, 21).unwrap();
    let fine = thermal_average(eval, sigma, 41).unwrap();
    assert!((coarse.0 - fine.0).abs() < 1e-8, "{coarse:?} vs {fine:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn thermal_average_of_a_constant_is_the_constant(sigma in 1e-30f64..1e-26, c in 0.0f64..1.0, k in 0usize..20) {
        let (a, b) = thermal_average(|_| Ok((c, 1.0 - c)), sigma, 2 * k + 1).unwrap();
        prop_assert!((a - c).abs() < 1e-12 && (b - (1.0 - c)).abs() < 1e-12);
    }

    #[test]
    fn thermal_average_of_p_squared_is_the_variance(sigma in 1e-30f64..1e-26, k in 1usize..20) {
        let (a, _) = thermal_average(|p| Ok(((p / sigma).powi(2), 0.0)), sigma, 2 * k + 1).unwrap();
        prop_assert!((a - 1.0).abs() < 1e-10, "{a}");
    }
}

#[test]
fn zero_temperature_reduces_to_single_momentum() {
    let seq = base(0.01, 5.0).first_pulses(2);
    let direct = numeric_populations(&seq, 0.0, 7, Tolerances::default()).unwrap();
    let avg = thermal_average(|p| numeric_populations(&seq, p, 7, Tolerances::default()).map_err(Into::into), 0.0, 5)
        .unwrap();
    assert_eq!(direct, avg);
}

#[test]
fn csv_and_json_outputs_round_trip() {
    let mut spec = mu_spec(1);
    spec.range = Range::linear(0.8, 1.6, 4);
    let r = run_scan(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let json = dir.path().join("mu.json");
    write_results(&r, &json, Format::Json).unwrap();
    assert_eq!(read_json(&json).unwrap(), r);
    assert_eq!(r.units["P_a_analytic"], "1");
    assert_eq!(r.units["mu"], "1");

    let csv = dir.path().join("mu.csv");
    write_results(&r, &csv, Format::Csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let (header, rows) = read_csv_rows(&text).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(&header[..5], ["mu", "P_a", "P_b", "P_a_analytic", "P_b_analytic"]);
    assert!(rows.iter().all(|r| r.len() == header.len()));
    let comments = text.lines().filter(|l| l.starts_with('#')).count();
    assert_eq!(text.lines().count(), comments + 1 + 4);
    for (row, p) in rows.iter().zip(&r.points) {
        let n = p.numeric.unwrap();
        assert!((row[1] - n.p_a).abs() <= 1e-9 * n.p_a.abs().max(1e-300) + 1e-300);
    }
}

#[test]
fn large_mu_suppresses_the_opposite_pair() {
    let mut spec = ScanSpec::new(ScanKind::Mu, Range::linear(15.0, 20.0, 6), base(0.01, 5.0));
    spec.engine = Engine::Numeric;
    let r = run_scan(&spec).unwrap();
    let worst = r.points.iter().map(|p| p.extra["P_b-1"]).fold(0.0, f64::max);
    assert!(worst < 1e-3, "P(b,-1) up to {worst}");
}

#[test]
fn velocity_scan_decays_without_large_ripple() {
    let mut spec = ScanSpec::new(ScanKind::Velocity, Range::logarithmic(0.5, 10.0, 8), base(0.01, 5.0));
    spec.engine = Engine::Numeric;
    let r = run_scan(&spec).unwrap();
    let eta: Vec<f64> = r.points.iter().map(|p| p.extra["eta1"]).collect();
    for w in r.points.windows(2) {
        let ratio = w[1].extra["eta1"] / w[0].extra["eta1"];
        // eta is taken at the first pulse, a few microseconds after launch.
        assert!((ratio - w[0].axis / w[1].axis).abs() < 1e-3);
    }
    let d: Vec<f64> = r.points.iter().map(|p| p.extra["distance_sqr"]).collect();
    assert!(d.last().unwrap() < d.first().unwrap(), "{d:?}");
    for (di, ei) in d.iter().zip(&eta) {
        assert!(di.sqrt() < 3.0 * ei, "distance {} vs eta {}", di.sqrt(), ei);
    }
}

#[test]
fn invalid_ranges_are_rejected() {
    assert!("1:0:5".parse::<Range>().is_err());
    assert!("0:1:1".parse::<Range>().is_err());
    assert!("0:1".parse::<Range>().is_err());
    let spec = ScanSpec::new(ScanKind::Mu, Range::linear(-1.0, 1.0, 3), base(0.01, 5.0));
    assert!(run_scan(&spec).is_err());
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/fig2_fringes.csv")
}

/// Eleven points of the shipped example's fringe, both engines. Set
/// `GRAVSIM_BLESS=1` to rewrite the reference after an intended change.
#[test]
fn shipped_example_fringe_matches_golden_file() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../examples/fig2.seq");
    let seq = parse_sequence(&std::fs::read_to_string(root).unwrap()).unwrap();
    let mut spec = ScanSpec::new(ScanKind::FringeGr, Range::linear(9.81 - 1e-5, 9.81 + 1e-5, 11), seq);
    spec.engine = Engine::Both;
    spec.thermal = None;
    let r = run_scan(&spec).unwrap();
    let mut out = Vec::new();
    write_csv(&r, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    if std::env::var_os("GRAVSIM_BLESS").is_some() {
        std::fs::write(golden_path(), &text).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).expect("golden file; run with GRAVSIM_BLESS=1 to create");
    let (gh, grows) = read_csv_rows(&golden).unwrap();
    let (h, rows) = read_csv_rows(&text).unwrap();
    assert_eq!(gh, h);
    assert_eq!(grows.len(), rows.len());
    for (g, n) in grows.iter().zip(&rows) {
        for (a, b) in g.iter().zip(n) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn thermal_spec_is_validated() {
    let mut spec = mu_spec(1);
    spec.thermal = Some(Thermal { temperature: -1.0, nodes: 5 });
    assert!(run_scan(&spec).is_err());
}
