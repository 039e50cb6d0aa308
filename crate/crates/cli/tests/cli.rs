use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use logsym_core::synthetic::scenarios;
use logsym_core::Generator;
use serde_json::Value;
use tempfile::TempDir;

const SEMI: &str = r#"{"model":"logsym","generator":{"family":"normal"},
  "location":{"parametric":["intercept"],"smooth":[
    {"kind":"ncs","covariate":"age","lambda":100},
    {"kind":"ncs","covariate":"period","lambda":10}]},
  "dispersion":{"parametric":["intercept"],"smooth":[
    {"kind":"ncs","covariate":"age","lambda":1000}]}}"#;

const POISSON: &str = r#"{"model":"poisson"}"#;

fn logsym(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_logsym"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

struct Work {
    dir: TempDir,
}

impl Work {
    /// Temp dir with a simulated table in `sim/mortality.csv` and the two
    /// spec documents.
    fn new(truth: &logsym_core::TruthSpec) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let w = Work { dir };
        std::fs::write(w.path("truth.json"), serde_json::to_string(truth).unwrap()).unwrap();
        std::fs::write(w.path("semi.json"), SEMI).unwrap();
        std::fs::write(w.path("pois.json"), POISSON).unwrap();
        let o = logsym(&["simulate", "--truth", &w.arg("truth.json"), "--out", &w.arg("sim"), "--seed", "3"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        w
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn arg(&self, rel: &str) -> String {
        self.path(rel).to_string_lossy().into_owned()
    }

    fn input(&self) -> String {
        self.arg("sim/mortality.csv")
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn simulate_writes_integer_deaths_for_every_cell() {
    let w = Work::new(&scenarios::linear_counts());
    let rows = csv_rows(&w.path("sim/mortality.csv"));
    assert_eq!(rows.len(), 320);
    for r in &rows {
        assert!(r[5].parse::<u64>().is_ok(), "deaths `{}`", r[5]);
    }
    assert_eq!(json(&w.path("sim/truth.json"))["seed"], 3);
}

#[test]
fn poisson_fit_and_overwrite_guard() {
    let w = Work::new(&scenarios::linear_counts());
    let args = ["fit", "--input", &w.input(), "--spec", &w.arg("pois.json"), "--out", &w.arg("fit")];
    assert_eq!(code(&logsym(&args)), 0);
    let fit = json(&w.path("fit/fit.json"));
    assert_eq!(fit["model"], "poisson");
    assert_eq!(fit["coefficients"].as_array().unwrap().len(), 3);
    assert_eq!(fit["converged"], true);

    let again = logsym(&args);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&logsym(&forced)), 0);
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let w = Work::new(&scenarios::linear_counts());
    let missing = logsym(&["fit", "--input", &w.input(), "--spec", &w.arg("nope.json"), "--out", &w.arg("a")]);
    assert_eq!(code(&missing), 2);

    std::fs::write(w.path("broken.json"), r#"{"model":"logsym","generator":{"family":"cauchy"}}"#).unwrap();
    let broken = logsym(&["fit", "--input", &w.input(), "--spec", &w.arg("broken.json"), "--out", &w.arg("b")]);
    assert_eq!(code(&broken), 2);

    let level = logsym(&[
        "envelope", "--input", &w.input(), "--spec", &w.arg("pois.json"), "--out", &w.arg("c"),
        "--level", "1.5",
    ]);
    assert_eq!(code(&level), 2);
}

#[test]
fn identical_specs_tie() {
    let w = Work::new(&scenarios::linear_counts());
    let o = logsym(&[
        "compare", "--input", &w.input(), "--spec", &w.arg("pois.json"), "--spec2", &w.arg("pois.json"),
        "--out", &w.arg("cmp"),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&w.path("cmp/comparison.json"));
    assert_eq!(report["preferred"], "tie");
    assert_eq!(report["scale_caveat"], false);
}

#[test]
fn mixed_comparison_flags_the_scale_caveat() {
    let w = Work::new(&scenarios::curved_logsym(Generator::Normal));
    let o = logsym(&[
        "compare", "--input", &w.input(), "--spec", &w.arg("semi.json"), "--spec2", &w.arg("pois.json"),
        "--out", &w.arg("cmp"),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&w.path("cmp/comparison.json"));
    assert_eq!(report["scale_caveat"], true);
    assert_eq!(report["models"].as_array().unwrap().len(), 2);
    let rows = csv_rows(&w.path("cmp/scatter.csv"));
    assert_eq!(rows.len(), 2 * 320);
    assert_eq!(rows[0][0], "semiparametric");
    assert_eq!(rows[320][0], "poisson");
}

#[test]
fn curves_cover_every_term() {
    let w = Work::new(&scenarios::curved_logsym(Generator::Normal));
    let o = logsym(&["curves", "--input", &w.input(), "--spec", &w.arg("semi.json"), "--out", &w.arg("cv")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&w.path("cv/curves.csv"));
    assert_eq!(rows.len(), 3 * 200);
    for block in rows.chunks(200) {
        assert!(block.iter().all(|r| r[0] == block[0][0]));
        let x: Vec<f64> = block.iter().map(|r| r[1].parse().unwrap()).collect();
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    let pois = logsym(&["curves", "--input", &w.input(), "--spec", &w.arg("pois.json"), "--out", &w.arg("cp")]);
    assert_eq!(code(&pois), 2);
}

#[test]
fn single_replicate_envelope_is_degenerate() {
    let w = Work::new(&scenarios::linear_counts());
    let o = logsym(&[
        "envelope", "--input", &w.input(), "--spec", &w.arg("pois.json"), "--out", &w.arg("env"),
        "--m-sims", "1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&w.path("env/envelope.csv"));
    assert_eq!(rows.len(), 320);
    assert!(rows.iter().all(|r| r[3] == r[4]));
}

#[test]
fn saved_fit_drives_envelope() {
    let w = Work::new(&scenarios::curved_logsym(Generator::Normal));
    let fit = ["fit", "--input", &w.input(), "--spec", &w.arg("semi.json"), "--out", &w.arg("fit")];
    assert_eq!(code(&logsym(&fit)), 0);
    let from_fit = logsym(&[
        "envelope", "--input", &w.input(), "--fit", &w.arg("fit/fit.json"), "--out", &w.arg("e1"),
        "--m-sims", "5", "--kind", "dispersion",
    ]);
    assert_eq!(code(&from_fit), 0, "{}", String::from_utf8_lossy(&from_fit.stderr));
    let from_spec = logsym(&[
        "envelope", "--input", &w.input(), "--spec", &w.arg("semi.json"), "--out", &w.arg("e2"),
        "--m-sims", "5", "--kind", "dispersion",
    ]);
    assert_eq!(code(&from_spec), 0);
    assert_eq!(
        std::fs::read(w.path("e1/envelope.csv")).unwrap(),
        std::fs::read(w.path("e2/envelope.csv")).unwrap()
    );

    let wrong_kind = logsym(&[
        "envelope", "--input", &w.input(), "--fit", &w.arg("fit/fit.json"), "--out", &w.arg("e3"),
        "--kind", "deviance",
    ]);
    assert_eq!(code(&wrong_kind), 2);
}
