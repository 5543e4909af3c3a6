use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_chord-atlas")
}

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new() -> Self {
        Run { dir: tempfile::tempdir().unwrap() }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn exec(&self, sub: &str, config: &str, extra: &[&str]) -> Output {
        let cfg = self.dir.path().join("run.toml");
        std::fs::write(&cfg, config).unwrap();
        Command::new(bin())
            .arg(sub)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(self.out())
            .args(extra)
            .output()
            .unwrap()
    }
}

fn json_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const HARMONIC_CONTACT: &str = r#"
[system]
name = "harmonic"
LAMBDA
[contact_check]
mu = MUS
sampler = { box_lo = [-2.0, -2.0], box_hi = [2.0, 2.0], grid_per_axis = 9 }
"#;

#[test]
fn contact_check_symmetric_passes_with_kappa_two() {
    let run = Run::new();
    let o = run.exec("contact-check", &HARMONIC_CONTACT.replace("LAMBDA", "").replace("MUS", "[0.0, 0.5]"), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines = json_lines(&run.out().join("contact.jsonl"));
    assert_eq!(lines.len(), 2);
    for l in lines {
        assert!((l["kappa"].as_f64().unwrap() - 2.0).abs() < 1e-8);
        assert_eq!(l["passed"], Value::Bool(true));
    }
}

#[test]
fn contact_check_standard_lambda_fails_with_violations() {
    let run = Run::new();
    let cfg = HARMONIC_CONTACT.replace("LAMBDA", "lambda = \"standard\"").replace("MUS", "[0.0]");
    let o = run.exec("contact-check", &cfg, &[]);
    assert_eq!(code(&o), 1);
    let l = &json_lines(&run.out().join("contact.jsonl"))[0];
    assert!(l["violation_count"].as_u64().unwrap() > 0);
    assert!(!l["violations"].as_array().unwrap().is_empty());
}

#[test]
fn empty_mu_grid_and_bad_config_are_usage_errors() {
    let run = Run::new();
    let o = run.exec("contact-check", &HARMONIC_CONTACT.replace("LAMBDA", "").replace("MUS", "[]"), &[]);
    assert_eq!(code(&o), 2);
    let o = run.exec("contact-check", "[system]\nname = \"harmonic\"\nbogus = 1\n", &[]);
    assert_eq!(code(&o), 2);
    let o = run.exec("find-chord", "[system]\nname = \"harmonic\"\n[solver]\natol = 0.0\n", &[]);
    assert_eq!(code(&o), 2);
    let o = Command::new(bin()).arg("find-chord").output().unwrap();
    assert_eq!(code(&o), 2, "missing --config");
}

#[test]
fn find_chord_harmonic_and_collapsed_guess() {
    let run = Run::new();
    let cfg = "[system]\nname = \"harmonic\"\n[find_chord]\nguesses = [{ mu = 0.0, u = [1.1], tau = 1.4 }]\n";
    let o = run.exec("find-chord", cfg, &[]);
    assert_eq!(code(&o), 0);
    let rec = &json_lines(&run.out().join("chords.jsonl"))[0];
    assert!((rec["tau"].as_f64().unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-9);

    let cfg = "[system]\nname = \"harmonic\"\n[find_chord]\nguesses = [{ mu = 0.0, u = [1.0], tau = 1e-9 }]\n";
    let o = run.exec("find-chord", cfg, &[]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("period collapsed"));
}

#[test]
fn find_chord_reads_seed_file() {
    let run = Run::new();
    let seeds = run.dir.path().join("seeds.jsonl");
    std::fs::write(&seeds, "{\"mu\": 0.2, \"u\": [1.2], \"tau\": 1.5}\n").unwrap();
    let o = run.exec("find-chord", "[system]\nname = \"harmonic_shift\"\n", &["--seed-file", seeds.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let rec = &json_lines(&run.out().join("chords.jsonl"))[0];
    assert!((rec["u"][0].as_f64().unwrap() - 1.4f64.sqrt()).abs() < 1e-9);
}

#[test]
fn rtbp_scan_finds_a_symmetric_chord() {
    let run = Run::new();
    let cfg = r#"
[system]
name = "rtbp_planar"
params = { mass_ratio = 1e-3 }
[find_chord.scan]
mu = 3.5
first_lo = 0.15
first_hi = 0.30
count = 61
second_guess = -2.0
t_max = 1.0
"#;
    let o = run.exec("find-chord", cfg, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let recs = json_lines(&run.out().join("chords.jsonl"));
    assert!(!recs.is_empty());
    for r in recs {
        let mu = r["mu"].as_f64().unwrap();
        assert!((3.0..=4.5).contains(&mu));
        assert!(r["residual_norm"].as_f64().unwrap() < 1e-9);
    }
}

#[test]
fn continue_harmonic_family_plots_the_closed_form() {
    let run = Run::new();
    let cfg = "[system]\nname = \"harmonic_shift\"\n[continue]\nseeds = [{ mu = 0.0, u = [1.0], tau = 1.5707963267948966 }]\n";
    let o = run.exec("continue", cfg, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines = json_lines(&run.out().join("family_0.atlas.jsonl"));
    assert_eq!(lines[0]["record"], "header");
    assert!(lines.iter().all(|l| l["record"] != "event" || l["kind"] == "range_end"));
    let csv = std::fs::read_to_string(run.out().join("family_0.csv")).unwrap();
    let mut rows = 0;
    for l in csv.lines().skip(1) {
        let v: Vec<f64> = l.split(',').map(|t| t.parse().unwrap()).collect();
        assert!((v[1] - (1.0 + 2.0 * v[0]).sqrt()).abs() < 1e-8);
        rows += 1;
    }
    assert!(rows > 10);
    assert!(run.out().join("families.gp").exists());
}

#[test]
fn continue_synthetic_fold_attaches_probe() {
    let run = Run::new();
    let cfg = r#"
[system]
name = "synthetic_fold"
[continue]
seeds = [{ mu = 0.3, u = [0.72139, 0.69311], tau = 1.38621 }]
"#;
    let o = run.exec("continue", cfg, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines = json_lines(&run.out().join("family_0.atlas.jsonl"));
    let folds: Vec<&Value> = lines.iter().filter(|l| l["record"] == "event" && l["kind"] == "fold").collect();
    assert_eq!(folds.len(), 1);
    assert!((folds[0]["point"]["mu"].as_f64().unwrap() - 0.5).abs() < 1e-8);
    let probes: Vec<&Value> = lines.iter().filter(|l| l["record"] == "probe").collect();
    assert!(!probes.is_empty());
    assert_eq!(probes[0]["limit_degenerate"], Value::Bool(true));
}

const STRETCH: &str = r#"
[system]
name = "harmonic_shift"
[gradient_flow]
mode = "stretch"
seed = { mu = 0.0, u = [1.0], tau = 1.5707963267948966 }
mu1 = 0.05
r_list = RS
"#;

#[test]
fn gradient_flow_exit_codes() {
    let run = Run::new();
    let o = run.exec("gradient-flow", &STRETCH.replace("RS", "[0.0, 12.0]"), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let recs = json_lines(&run.out().join("stretch.jsonl"));
    assert_eq!(recs[1]["outcome"], "approached");
    assert!(recs[1]["plateau_gradient_norm"].as_f64().unwrap() < 1e-6);

    let o = run.exec("gradient-flow", &STRETCH.replace("RS", "[2.0]"), &[]);
    assert_eq!(code(&o), 1, "short plateau parks away from the target chord");

    let cfg = r#"
[system]
name = "harmonic_shift"
[gradient_flow]
mode = "flow"
seed = { mu = 0.1, u = [1.1], tau = 1.5 }
mu1 = 0.1
perturbation = 1e-2
"#;
    let o = run.exec("gradient-flow", cfg, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(run.out().join("flow.csv")).unwrap();
    assert!(csv.starts_with("s,mu,sigma,action,gradient_norm,energy"));
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|t| t.parse().unwrap()).collect();
    assert!(last[4] < 1e-8);
}
