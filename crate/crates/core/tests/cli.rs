use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sentiment-ssm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("error JSON on stderr");
    serde_json::from_str(line).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_panel_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = run(&["fit", "--panel", s(&missing), "--out", s(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "io");
    assert_eq!(e["exit_code"], 2);
    assert!(e["path"].as_str().unwrap().ends_with("nope.csv"));
}

#[test]
fn bad_run_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--out", s(dir.path())]);
    assert!(o.status.success());
    let o = run(&[
        "fit",
        "--panel",
        s(&dir.path().join("panel.csv")),
        "--iterations",
        "100",
        "--burn-in",
        "200",
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "config");
}

#[test]
fn unparseable_toml_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.toml");
    fs::write(&cfg, "output_dir = [").unwrap();
    let o = run(&["run", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "parse");
    assert!(e["path"].as_str().unwrap().ends_with("broken.toml"));
}

#[test]
fn validate_rejects_swapped_arms() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--seed", "3", "--out", s(d)]);
    let panel = d.join("panel.csv");
    let small = ["--iterations", "1200", "--burn-in", "200", "--thin", "1", "--chains", "2"];
    for (v, name) in [("hierarchical", "het"), ("homoscedastic", "hom")] {
        let out = d.join(name);
        let mut args = vec!["fit", "--panel", s(&panel), "--variant", v, "--out", s(&out)];
        args.extend(small);
        ok(&args);
    }
    let o = run(&[
        "validate",
        "--draws-hetero",
        s(&d.join("hom")),
        "--draws-homo",
        s(&d.join("het")),
        "--panel",
        s(&panel),
        "--out",
        s(&d.join("t.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn staged_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--seed", "11", "--emit-articles", "--out", s(d)]);
    for f in ["panel.csv", "truth.csv", "truth_params.json", "articles.jsonl", "manifest.json"] {
        assert!(d.join(f).exists(), "{f}");
    }

    // The emitted articles aggregate back into the same panel.
    let agg = d.join("agg/panel.csv");
    ok(&[
        "aggregate",
        "--articles",
        s(&d.join("articles.jsonl")),
        "--categories",
        "cat1,cat2,cat3,cat4,cat5,cat6",
        "--start-date",
        "2024-01-01",
        "--windows",
        "104",
        "--out",
        s(&agg),
    ]);
    let a = sentiment_ssm::io::read_panel_csv(&agg).unwrap();
    let b = sentiment_ssm::io::read_panel_csv(&d.join("panel.csv")).unwrap();
    assert_eq!(a.categories, b.categories);
    assert_eq!(a.window_starts, b.window_starts);
    for t in 0..a.windows() {
        for j in 0..a.n_categories() {
            assert_eq!(a.is_observed(t, j), b.is_observed(t, j));
            if a.is_observed(t, j) {
                assert!((a.y[(t, j)] - b.y[(t, j)]).abs() < 1e-12);
                assert!((a.n[(t, j)] - b.n[(t, j)]).abs() < 1e-12);
            }
        }
    }

    let panel = d.join("panel.csv");
    let small = ["--iterations", "2000", "--burn-in", "500", "--thin", "2", "--chains", "2"];
    for (v, name) in [("hierarchical", "het"), ("homoscedastic", "hom")] {
        let out = d.join(name);
        let mut args = vec!["fit", "--panel", s(&panel), "--variant", v, "--out", s(&out)];
        args.extend(small);
        ok(&args);
        for f in ["meta.json", "draws.bin", "draws.csv", "manifest.json"] {
            assert!(out.join(f).exists(), "{name}/{f}");
        }
    }

    let stdout = ok(&[
        "diagnose",
        "--draws",
        s(&d.join("het")),
        "--names",
        "theta[1],sigma[2]",
        "--traces",
        s(&d.join("traces.csv")),
        "--out",
        s(&d.join("diag.json")),
    ]);
    assert!(stdout.contains("R-hat"));
    let diag: Value = serde_json::from_str(&fs::read_to_string(d.join("diag.json")).unwrap()).unwrap();
    assert_eq!(diag["scalars"].as_array().map(|a| a.len()), Some(2));

    ok(&["ppc", "--draws", s(&d.join("het")), "--panel", s(&panel), "--out", s(&d.join("ppc.csv"))]);
    let ppc = fs::read_to_string(d.join("ppc.csv")).unwrap();
    assert!(ppc.starts_with("category,cov80,cov95,p_mean,p_out"));
    assert_eq!(ppc.lines().count(), 7);

    ok(&[
        "validate",
        "--draws-hetero",
        s(&d.join("het")),
        "--draws-homo",
        s(&d.join("hom")),
        "--panel",
        s(&panel),
        "--out",
        s(&d.join("table1.csv")),
    ]);
    let t1 = fs::read_to_string(d.join("table1.csv")).unwrap();
    assert_eq!(t1.lines().count(), 5);
    assert!(d.join("table1.json").exists());

    let plots = d.join("plots");
    ok(&["export-plots", "--draws", s(&d.join("het")), "--panel", s(&panel), "--out", s(&plots)]);
    for j in 1..=6 {
        let text = fs::read_to_string(plots.join(format!("cat{j}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 105);
    }
}

#[test]
fn run_subcommand_from_toml() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            r#"output_dir = "{}"
seed = 9
variants = ["hierarchical"]

[input]
kind = "synthetic"

[input.synth]
categories = ["a", "b"]
windows = 30
theta = [0.8, 0.6]
mu = [-0.2, 0.2]
sigma_eta = [0.05, 0.05]
sigma = [0.1, 0.2]

[run]
chains = 2
iterations = 1500
burn_in = 500
thin = 2
"#,
            out.display()
        ),
    )
    .unwrap();
    let stdout = ok(&["run", "--config", s(&cfg)]);
    assert!(stdout.contains("hierarchical"));
    for f in ["panel.csv", "truth.csv", "manifest.json", "hierarchical/diagnostics.json", "hierarchical/plots/a.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(!out.join("table1.csv").exists());
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 9);
}

#[test]
fn shipped_configs_parse() {
    use sentiment_ssm::pipeline::{InputConfig, PipelineConfig};
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let synth: PipelineConfig = sentiment_ssm::pipeline::load_toml(&root.join("synthetic.toml")).unwrap();
    assert!(matches!(synth.input, InputConfig::Synthetic { emit_articles: true, .. }));
    assert_eq!(synth.variants.len(), 2);
    let articles: PipelineConfig = sentiment_ssm::pipeline::load_toml(&root.join("articles.toml")).unwrap();
    match articles.input {
        InputConfig::Articles(a) => {
            assert_eq!(a.categories.len(), 6);
            assert_eq!(a.windowing.window_count, 104);
        }
        other => panic!("{other:?}"),
    }
}
