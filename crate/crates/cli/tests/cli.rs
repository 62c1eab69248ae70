use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gravsim() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gravsim"));
    c.env_remove("GRAVSIM_WORKERS");
    c
}

fn example() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../examples/fig2.seq")
}

fn run(args: &[&str]) -> Output {
    gravsim().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value_after(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no `{key}` in\n{text}"));
    line[key.len()..].trim().parse().unwrap()
}

/// Header and numeric rows of a CSV file written by the tool.
fn csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn run_on_shipped_example_sits_on_the_bright_fringe() {
    let o = run(&["run", example().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let p_a = value_after(&text, "P_a =");
    let p_b = value_after(&text, "P_b =");
    assert!((p_a - 1.0).abs() < 1e-5, "{p_a}");
    assert!((p_a + p_b - 1.0).abs() < 1e-8);
    assert!(text.contains("rung") && text.contains("eta") && text.contains("beta"));
}

#[test]
fn missing_file_is_an_input_error() {
    let o = run(&["run", "no/such/file.seq"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such/file.seq"));
}

#[test]
fn parse_errors_report_their_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.seq");
    std::fs::write(&path, "atom Rb87\nrabi 1e5 rad/s\npulse + pi/2\npulse * pi\n").unwrap();
    let o = run(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4, column"), "{}", stderr(&o));
}

#[test]
fn bad_flag_values_are_input_errors() {
    for args in [
        vec!["mu-scan", "--mu", "3:1:10"],
        vec!["mu-scan", "--mu", "0.5:1"],
        vec!["run", "--mu", "special:0"],
        vec!["run", "--rabi", "-4Hz"],
        vec!["run", "--nodes", "4", "--temperature", "1nK"],
        vec!["fringes", "--gr-span", "-1"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    let o = gravsim().args(["mu-scan", "--mu", "1:2:3"]).env("GRAVSIM_WORKERS", "0").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn special_mu_sets_rabi_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.json");
    let o = run(&["run", "--mu", "special:1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let pulse = &report["pulses"][0];
    assert!((pulse["mu"].as_f64().unwrap() - 3f64.sqrt() / 2.0).abs() < 1e-12);
    // omega_R for 87Rb at 780.241 nm is 94775.02 rad/s.
    assert!((pulse["rabi"].as_f64().unwrap() - 94775.0178 / (3f64.sqrt() / 2.0)).abs() < 1e-2);
    assert_eq!(report["units"]["rabi"], "rad/s");
}

#[test]
fn hertz_input_is_converted_to_angular_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.json");
    let o = run(&["run", "--rabi", "17kHz", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let rabi = report["pulses"][0]["rabi"].as_f64().unwrap();
    assert!((rabi - 17e3 * std::f64::consts::TAU).abs() < 1e-6);
}

#[test]
fn flags_override_config_which_overrides_the_sequence_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "v0 = 7.0\ng_r = 9.8\n").unwrap();
    let seq = example();
    let report = |extra: &[&str]| {
        let out = dir.path().join("r.json");
        let mut args = vec!["run", seq.to_str().unwrap(), "--seed-file", cfg.to_str().unwrap(), "--out"];
        args.push(out.to_str().unwrap());
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        v["sequence"].as_str().unwrap().to_string()
    };
    let from_config = report(&[]);
    assert!(from_config.contains("v0 7 m/s") && from_config.contains("gr 9.8 m/s2"), "{from_config}");
    let from_flag = report(&["--v0", "3"]);
    assert!(from_flag.contains("v0 3 m/s") && from_flag.contains("gr 9.8 m/s2"), "{from_flag}");
}

#[test]
fn config_species_can_be_named_by_a_sequence_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("k.toml");
    std::fs::write(
        &cfg,
        "species.name = \"K41\"\nspecies.mass_kg = 6.8033e-26\nspecies.wavelength_m = 766.7e-9\n",
    )
    .unwrap();
    let seq = dir.path().join("k.seq");
    std::fs::write(&seq, "atom K41\nrabi 1e5 rad/s\nv0 5 m/s\npulse + pi/2\n").unwrap();
    let o = run(&["run", seq.to_str().unwrap(), "--seed-file", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("species K41"));
    let o = run(&["run", seq.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fringe_scan_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f.csv");
    let o = run(&[
        "fringes",
        example().to_str().unwrap(),
        "--gr-span",
        "5e-5",
        "--steps",
        "401",
        "--engine",
        "both",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (header, rows) = csv(&out);
    assert_eq!(rows.len(), 401);
    assert_eq!(&header[..5], ["g_r", "P_a", "P_b", "P_a_analytic", "P_b_analytic"]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# gravsim"));
    // The centre row is gamma = 0, the bright fringe.
    assert!((rows[200][1] - 1.0).abs() < 1e-5);
}

#[test]
fn mu_scan_reproduces_two_pulse_populations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mu.csv");
    let o = run(&["mu-scan", "--mu", "0.3:3.0:541", "--v0", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (header, rows) = csv(&out);
    assert_eq!(rows.len(), 541);
    let col = header.iter().position(|h| h == "P_b-1").unwrap();
    let nearest = |mu: f64| rows.iter().min_by(|a, b| (a[0] - mu).abs().total_cmp(&(b[0] - mu).abs())).unwrap();
    // The grid step is 0.005, so the row nearest sqrt(2) sits 7.9e-4 away.
    assert!((nearest(2f64.sqrt())[col] - 0.0556).abs() < 0.005);
    // Near the special values mu_1 and mu_2 the opposite pair is dark.
    for mu in [3f64.sqrt() / 2.0, 15f64.sqrt() / 2.0] {
        let row = nearest(mu);
        assert!(row[col] < 1e-3, "mu {}: P(b,-1) = {}", row[0], row[col]);
    }
}

#[test]
fn json_output_carries_units() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.json");
    let o = run(&["compare", "--v0-range", "1:10:4", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["points"].as_array().unwrap().len(), 4);
    assert_eq!(v["units"]["v0"], "m/s");
    assert_eq!(v["units"]["eta1"], "1");
}

#[test]
fn default_output_name_is_kind_and_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let o = gravsim().current_dir(dir.path()).args(["mu-scan", "--mu", "1:2:3", "--format", "json"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let names: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert_eq!(names.len(), 1);
    let name = &names[0];
    assert!(name.starts_with("mu-scan_") && name.ends_with(".json"), "{name}");
    assert!(name["mu-scan_".len()..name.len() - 5].parse::<u64>().is_ok());
}

#[test]
fn single_worker_output_is_reproducible() {
    let args = ["mu-scan", "--mu", "0.8:1.6:5", "--workers", "1", "--out", "-"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let two = run(&["mu-scan", "--mu", "0.8:1.6:5", "--workers", "2", "--out", "-"]);
    assert_eq!(a.stdout, two.stdout);
}

#[test]
fn validate_runs_selected_criteria() {
    let o = run(&["validate", "--only", "1,2,3"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    for id in 1..=3 {
        assert!(text.contains(&format!("criterion {id} PASS")), "{text}");
    }
    assert!(!text.contains("criterion 4"));
}

#[test]
fn help_documents_flags_and_frequency_convention() {
    let top = stdout(&run(&["--help"]));
    assert!(top.contains("2*pi") && top.contains("rad/s"));
    assert!(top.contains("flags > config file"));
    let fringes = stdout(&run(&["fringes", "--help"]));
    for flag in [
        "--out", "--format", "--workers", "--n-max", "--rel-tol", "--abs-tol", "--seed-file", "--g ", "--gr ",
        "--v0", "--temperature", "--nodes", "--rabi", "--mu", "--gr-span", "--gr-range", "--steps", "--engine",
    ] {
        assert!(fringes.contains(flag), "fringes --help lacks {flag}");
    }
    assert!(fringes.contains("GRAVSIM_WORKERS"));
}
