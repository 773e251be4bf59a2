use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfm"))
        .args(args)
        .env_remove("DFM_PARALLEL")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--n", "50", "--T", "75", "--r", "4", "--q", "4", "--seed", "11", "--out", p(dir)];
    args.extend_from_slice(extra);
    dfm(&args)
}

fn read_matrix(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|s| s.parse().unwrap()).collect())
        .collect()
}

#[test]
fn simulate_writes_a_time_by_series_panel() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = simulate(&out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let panel = read_matrix(&out.join("panel.csv"));
    assert_eq!(panel.len(), 75);
    assert!(panel.iter().all(|row| row.len() == 50));
    for f in ["factors.csv", "common.csv", "params.toml", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }

    let again = tmp.path().join("again");
    assert!(simulate(&again, &[]).status.success());
    assert_eq!(
        fs::read(out.join("panel.csv")).unwrap(),
        fs::read(again.join("panel.csv")).unwrap()
    );
}

#[test]
fn invalid_delta_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = simulate(&tmp.path().join("s"), &["--delta", "0.4"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("--delta"), "{msg}");
    assert!(msg.contains("1/3"), "{msg}");
}

#[test]
fn refuses_non_empty_output_without_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    assert!(simulate(&out, &[]).status.success());
    let o = simulate(&out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--overwrite"));
    assert!(simulate(&out, &["--overwrite"]).status.success());
}

#[test]
fn noiseless_panel_is_recovered() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    assert!(simulate(&sim, &[]).status.success());
    let fit = tmp.path().join("fit");
    let o = dfm(&["fit", "--panel", p(&sim.join("common.csv")), "--r", "4", "--q", "4", "--out", p(&fit)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], serde_json::Value::Bool(true));
    let truth = read_matrix(&sim.join("common.csv"));
    let est = read_matrix(&fit.join("common.csv"));
    let (mut ss, mut k) = (0.0, 0usize);
    for (a, b) in truth.iter().zip(&est) {
        for (x, y) in a.iter().zip(b) {
            ss += (x - y) * (x - y);
            k += 1;
        }
    }
    assert!((ss / k as f64).sqrt() < 1e-6);
}

#[test]
fn fit_outputs_and_iteration_limits() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    assert!(simulate(&sim, &[]).status.success());
    let panel = sim.join("panel.csv");

    let one = tmp.path().join("one");
    let o = dfm(&["fit", "--panel", p(&panel), "--r", "4", "--q", "4", "--max-iter", "1", "--out", p(&one)]);
    let trace = fs::read_to_string(one.join("loglik.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3, "header, start and one iteration");
    assert_eq!(o.status.code(), Some(4));

    let tight = tmp.path().join("tight");
    let o = dfm(&[
        "fit", "--panel", p(&panel), "--r", "4", "--q", "4", "--epsilon", "1e-12", "--max-iter", "5", "--out", p(&tight),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(tight.join("params.toml").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("converged: false"));

    let full = tmp.path().join("full");
    let o = dfm(&["fit", "--panel", p(&panel), "--r", "4", "--q", "4", "--out", p(&full)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let var = read_matrix(&full.join("variance.csv"));
    assert_eq!(var.len(), 75);
    assert!(var.iter().flatten().all(|v| *v > 0.0));

    let o = dfm(&["eval", "--truth", p(&sim), "--fit", p(&full), "--json", p(&tmp.path().join("eval.json"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ev: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("eval.json")).unwrap()).unwrap();
    assert!(ev["tr_f"].as_f64().unwrap() > 0.5);
    assert!(ev["coverage"]["count"].as_u64().unwrap() > 0);
}

#[test]
fn fit_variants_run() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    assert!(simulate(&sim, &["--tau", "0.5", "--delta", "0.2"]).status.success());
    let panel = sim.join("panel.csv");
    for (name, extra) in [
        ("ridge", vec!["--idio-cov", "ridge", "--ridge-mu", "5"]),
        ("ar", vec!["--idio-ar"]),
        ("std", vec!["--standardize", "--criterion", "joint"]),
    ] {
        let out = tmp.path().join(name);
        let mut args = vec!["fit", "--panel", p(&panel), "--r", "4", "--q", "2", "--out", p(&out)];
        args.extend(extra);
        let o = dfm(&args);
        assert!(matches!(o.status.code(), Some(0) | Some(4)), "{name}: {}", stderr(&o));
        assert_eq!(read_matrix(&out.join("common.csv")).len(), 75);
    }
    let o = dfm(&["pc", "--panel", p(&panel), "--r", "4", "--q", "2", "--out", p(&tmp.path().join("pc"))]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn bundled_experiment_reports_relative_mse() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("mc");
    let o = dfm(&["montecarlo", "--bundled", "table4_small", "--replications", "2", "--parallel", "2", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t4 = fs::read_to_string(out.join("table4.csv")).unwrap();
    assert!(t4.lines().next().unwrap().contains("rel_MSE"));
    assert_eq!(t4.lines().count(), 57);
}

const SMALL: &str = r#"
name = "det"
seed = 5
replications = 4

[defaults]
r = 2
q = 2

[[cells]]
name = "a"
n = 30
T = 40

[[cells]]
name = "b"
n = 40
T = 30
q = 1
tau = 0.5
delta = 0.2
"#;

#[test]
fn results_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = tmp.path().join("exp.toml");
    fs::write(&exp, SMALL).unwrap();
    let mut outs = Vec::new();
    for threads in ["1", "8"] {
        let out = tmp.path().join(format!("mc{threads}"));
        let o = dfm(&["montecarlo", "--experiment", p(&exp), "--parallel", threads, "--out", p(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(out);
    }
    for f in ["table2.csv", "table3.csv", "table4.csv", "table5.csv", "histogram.csv"] {
        assert_eq!(
            fs::read(outs[0].join(f)).unwrap(),
            fs::read(outs[1].join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn malformed_experiment_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = tmp.path().join("bad.toml");
    fs::write(&exp, "name = \"x\"\nseed = 1\nreplications = 2\n\n[[cells]]\nname = \"a\"\nn = = 3\n").unwrap();
    let o = dfm(&["montecarlo", "--experiment", p(&exp), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("line 7"), "{msg}");
}
