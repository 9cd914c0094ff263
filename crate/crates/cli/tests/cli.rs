use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neurolens_core::{Representation, SynthConfig};
use serde_json::Value;
use tempfile::TempDir;

fn neurolens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurolens"))
        .args(args)
        .env_remove("NEUROLENS_THREADS")
        .output()
        .expect("run neurolens")
}

fn ok(args: &[&str]) -> String {
    let out = neurolens(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

/// Six neurons, four concepts: the target's salient neurons are shared
/// with the other concepts at lower levels.
fn shared_config(scale: f64, per_concept: usize, seed: u64) -> SynthConfig {
    let means = [
        [4.0, 2.0, 0.0, 0.0],
        [4.0, 0.0, 2.0, 0.0],
        [4.0, 0.0, 0.0, 2.0],
        [0.0, 1.0, 1.0, 1.0],
        [1.0, 1.0, 0.0, 0.0],
        [1.0, 1.0, 1.0, 1.0],
    ];
    let mut cfg = SynthConfig::uniform(per_concept, 6, 4, 0.0, 1.0, 1.0, Representation::Base, seed);
    cfg.means = means
        .iter()
        .map(|r| r.iter().map(|m| m * scale).collect())
        .collect();
    cfg
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, name: &str, cfg: &SynthConfig) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, serde_json::to_vec(cfg).unwrap()).unwrap();
        p
    }

    fn synth(&self, name: &str, cfg: &SynthConfig, seed: u64) -> PathBuf {
        let config = self.config(&format!("{name}.json"), cfg);
        let out = self.path(name);
        ok(&["synth", "--config", s(&config), "--seed", &seed.to_string(), "--out", s(&out)]);
        out
    }
}

#[test]
fn synth_then_ingest_check() {
    let ws = Workspace::new();
    let data = ws.synth("d.actv", &shared_config(1.0, 20, 1), 1);
    assert!(ws.path("d.actv.manifest.json").exists());
    let report = ws.path("check.json");
    let stdout = ok(&["ingest-check", "--data", s(&data), "--out", s(&report)]);
    let printed: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(printed["n_samples"], 80);
    assert_eq!(printed["samples_per_concept"], serde_json::json!([20, 20, 20, 20]));
    let written = read_json(&report);
    assert_eq!(written["run"]["command"], "ingest-check");
    assert_eq!(written["n_neurons"], 6);
}

#[test]
fn separability_report_embeds_its_run() {
    let ws = Workspace::new();
    let data = ws.synth("d.actv", &shared_config(1.0, 50, 2), 2);
    let out = ws.path("s.json");
    ok(&["separability", "--data", s(&data), "--bins", "2048", "--out", s(&out)]);
    let report = read_json(&out);
    let score = report["layer_score"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert_eq!(report["run"]["params"]["B"], 2048);
    assert_eq!(report["run"]["inputs"]["data"], s(&data));
    assert!(report["run"]["timestamp"].is_string());

    // a cached bank gives the same score
    let dens = ws.path("d.dens");
    ok(&["fit-densities", "--data", s(&data), "--out", s(&dens)]);
    let cached = ws.path("s2.json");
    ok(&["separability", "--data", s(&data), "--densities", s(&dens), "--out", s(&cached)]);
    assert_eq!(read_json(&cached)["layer_score"], report["layer_score"]);
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let ws = Workspace::new();
    let data = ws.synth("d.actv", &shared_config(1.0, 40, 3), 3);
    let again = ws.synth("e.actv", &shared_config(1.0, 40, 3), 3);
    assert_eq!(fs::read(&data).unwrap(), fs::read(&again).unwrap());
    let plan = ws.path("plan.json");
    let build = || {
        ok(&["--deterministic", "build-plan", "--data", s(&data), "--method", "app", "--target", "0", "--out", s(&plan)]);
        (fs::read(&plan).unwrap(), fs::read(ws.path("plan.json.dens")).unwrap())
    };
    let first = build();
    assert_eq!(first, build());
    assert!(read_json(&plan)["run"].get("timestamp").is_none());

    let report = ws.path("s.json");
    let score = || {
        ok(&["--deterministic", "separability", "--data", s(&data), "--out", s(&report)]);
        fs::read(&report).unwrap()
    };
    assert_eq!(score(), score());
}

#[test]
fn overlap_modes() {
    let ws = Workspace::new();
    let data = ws.synth("d.actv", &shared_config(1.0, 30, 4), 4);
    let top = ws.path("top.json");
    ok(&["overlap", "--data", s(&data), "--mode", "topk", "--k", "3", "--out", s(&top)]);
    let report = read_json(&top);
    assert_eq!(report["K"], 3);
    assert_eq!(report["pairwise"].as_array().unwrap().len(), 6);

    let mut dense = shared_config(1.0, 30, 4);
    dense.representation = Representation::Sae;
    dense.means = vec![vec![5.0; 4]; 6];
    let sparse = ws.synth("sae.actv", &dense, 5);
    let active = ws.path("active.json");
    ok(&["overlap", "--data", s(&sparse), "--mode", "active", "--out", s(&active)]);
    assert_eq!(read_json(&active)["all_k_pct"], 100.0);
}

#[test]
fn plan_file_and_inline_flags_agree() {
    let ws = Workspace::new();
    let fit = ws.synth("fit.actv", &shared_config(1.0, 60, 6), 6);
    let eval = ws.synth("eval.actv", &shared_config(1.0, 60, 6), 7);
    for method in ["app", "aura", "range", "adaptive", "full"] {
        let plan = ws.path(&format!("{method}.json"));
        ok(&["build-plan", "--data", s(&fit), "--method", method, "--target", "0", "--p", "0.3", "--out", s(&plan)]);
        let via_plan = ws.path(&format!("{method}-plan.actv"));
        ok(&["intervene", "--data", s(&eval), "--fit", s(&fit), "--plan", s(&plan), "--out", s(&via_plan)]);
        let via_flags = ws.path(&format!("{method}-flags.actv"));
        ok(&[
            "intervene", "--data", s(&eval), "--fit", s(&fit), "--method", method, "--target", "0",
            "--p", "0.3", "--out", s(&via_flags),
        ]);
        assert_eq!(fs::read(&via_plan).unwrap(), fs::read(&via_flags).unwrap(), "{method}");
        assert_ne!(fs::read(&via_plan).unwrap(), fs::read(&eval).unwrap(), "{method}");
    }
}

#[test]
fn evaluate_writes_report_and_tables() {
    let ws = Workspace::new();
    let fit = ws.synth("fit.actv", &shared_config(1.0, 100, 8), 8);
    let eval = ws.synth("eval.actv", &shared_config(1.0, 100, 8), 9);
    let plan = ws.path("plan.json");
    ok(&["build-plan", "--data", s(&fit), "--method", "app", "--target", "0", "--out", s(&plan)]);
    assert!(ws.path("plan.json.dens").exists());
    let report = ws.path("r.json");
    let table = ws.path("r.csv");
    let corr = ws.path("corr.csv");
    ok(&[
        "evaluate", "--fit", s(&fit), "--eval", s(&eval), "--plan", s(&plan), "--ppl-base", "10",
        "--ppl-post", "10.5", "--out", s(&report), "--csv", s(&table), "--append-correlation",
        s(&corr), "--run-id", "first",
    ]);
    let r = read_json(&report);
    let d_acc = r["d_acc"].as_f64().unwrap();
    let aux = r["d_acc_aux"].as_f64().unwrap();
    assert_eq!(r["delta_acc"].as_f64().unwrap(), d_acc - aux);
    assert_eq!(r["dppl"], 0.5);
    assert_eq!(r["run"]["params"]["method"], "app");

    let text = fs::read_to_string(&table).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("concept,metric,before,after"));
    assert_eq!(lines.count(), 8);

    ok(&[
        "evaluate", "--fit", s(&fit), "--eval", s(&eval), "--plan", s(&plan), "--out", s(&report),
        "--append-correlation", s(&corr), "--score", "0.5", "--run-id", "second",
    ]);
    let rows = fs::read_to_string(&corr).unwrap();
    let rows: Vec<&str> = rows.lines().collect();
    assert_eq!(rows[0], "score,delta_acc,method,run_id");
    assert_eq!(rows.len(), 3);
    assert!(rows[2].starts_with("0.5,") && rows[2].ends_with(",app,second"));
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    let one_concept = ws.synth("one.actv", &SynthConfig::uniform(10, 3, 1, 1.0, 1.0, 1.0, Representation::Base, 1), 1);
    let out = neurolens(&[
        "intervene", "--data", s(&one_concept), "--method", "app", "--target", "0", "--tau", "0.1",
        "--out", s(&ws.path("x.actv")),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2 concepts"));

    assert_eq!(code(&neurolens(&["separability", "--data", "x.actv"])), 2);
    assert_eq!(code(&neurolens(&["no-such-command"])), 2);

    let good = ws.synth("good.actv", &shared_config(1.0, 10, 2), 2);
    let mut bytes = fs::read(&good).unwrap();
    bytes[0] = b'X';
    fs::write(&good, bytes).unwrap();
    let out = neurolens(&["ingest-check", "--data", s(&good)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
    assert_eq!(code(&neurolens(&["ingest-check", "--data", s(&ws.path("missing.actv"))])), 3);

    let flat = ws.path("flat.csv");
    fs::write(&flat, "score,delta_acc,method,run_id\n0.5,0.1,app,a\n0.5,0.2,app,b\n0.5,0.3,app,c\n").unwrap();
    let out = neurolens(&["correlate", "--input", s(&flat), "--out", s(&ws.path("c.json"))]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn threads_flag_wins_over_environment() {
    let ws = Workspace::new();
    let data = ws.synth("d.actv", &shared_config(1.0, 10, 1), 1);
    let run = |env: &str, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_neurolens"));
        cmd.env("NEUROLENS_THREADS", env);
        if let Some(f) = flag {
            cmd.args(["--threads", f]);
        }
        cmd.args(["ingest-check", "--data", s(&data)]);
        cmd.output().unwrap()
    };
    assert_eq!(code(&run("0", None)), 2);
    assert_eq!(code(&run("0", Some("2"))), 0);
    assert_eq!(code(&run("3", None)), 0);
}

#[test]
fn full_pipeline_correlates_separability_with_erasure() {
    let ws = Workspace::new();
    let corr = ws.path("corr.csv");
    for i in 0..20u64 {
        let cfg = shared_config(0.1 * (i + 1) as f64, 300, 0);
        let fit = ws.synth(&format!("fit{i}.actv"), &cfg, 100 + 2 * i);
        let eval = ws.synth(&format!("eval{i}.actv"), &cfg, 101 + 2 * i);
        let dens = ws.path(&format!("fit{i}.dens"));
        ok(&["fit-densities", "--data", s(&fit), "--out", s(&dens)]);
        for method in ["app", "full"] {
            let plan = ws.path(&format!("{method}{i}.json"));
            ok(&[
                "build-plan", "--data", s(&fit), "--densities", s(&dens), "--method", method,
                "--target", "0", "--p", "0.3", "--out", s(&plan),
            ]);
            let erased = ws.path(&format!("{method}{i}.actv"));
            ok(&["intervene", "--data", s(&eval), "--fit", s(&fit), "--plan", s(&plan), "--out", s(&erased)]);
            ok(&[
                "evaluate", "--fit", s(&fit), "--eval", s(&eval), "--plan", s(&plan), "--densities",
                s(&dens), "--out", s(&ws.path(&format!("{method}{i}.report.json"))),
                "--append-correlation", s(&corr), "--run-id", &format!("config-{i}"),
            ]);
        }
    }
    let out = ws.path("correlation.json");
    ok(&["--deterministic", "correlate", "--input", s(&corr), "--out", s(&out)]);
    let report = read_json(&out);
    let methods = report["methods"].as_array().unwrap();
    let r_of = |name: &str| {
        methods
            .iter()
            .find(|m| m["method"] == name)
            .map(|m| m["r"].as_f64().unwrap())
            .unwrap()
    };
    assert!(r_of("app") > 0.0, "{report}");
    assert!(r_of("app") > r_of("full"), "{report}");
    assert_eq!(methods[0]["n"], 20);
}
