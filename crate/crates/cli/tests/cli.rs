use std::path::Path;
use std::process::{Command, Output};

use equipomdp::envs::{export_pomdp, CarFlag2dConfig, EnvConfig};
use equipomdp::pomdp::History;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_equipomdp"));
    c.env_remove("EQUIPOMDP_RUN_ROOT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn train_small(dir: &Path, seed: &str, eval_interval: &str) -> Output {
    let out = dir.to_str().unwrap();
    run(&[
        "train", "--env", "carflag1d", "--half-size", "4", "--agent", "equi", "--steps", "1200", "--n-envs", "4",
        "--eval-interval", eval_interval, "--eval-episodes", "10", "--seed", seed, "--out", out,
    ])
}

#[test]
fn train_smoke_writes_curve_manifest_and_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("t0");
    let o = run(&["train", "--env", "carflag1d", "--agent", "equi", "--steps", "1000", "--seed", "0", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let curve = std::fs::read_to_string(dir.join("curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("step,episodes,success_rate,mean_return,policy_loss,value_loss,entropy,seed"));
    assert!(lines.count() >= 1);
    for f in ["manifest.toml", "init.ckpt", "final.ckpt", "best.ckpt"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let manifest = std::fs::read_to_string(dir.join("manifest.toml")).unwrap();
    for key in ["lr = 0.0003", "n_steps = 5", "entropy_coef = 0.01", "variant = \"equi\"", "name = \"reflection\"", "total_steps = 1000"] {
        assert!(manifest.contains(key), "missing `{key}` in\n{manifest}");
    }
}

#[test]
fn same_flags_and_seed_give_identical_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert_eq!(code(&train_small(&a, "3", "400")), 0);
    assert_eq!(code(&train_small(&b, "3", "400")), 0);
    let curve_a = std::fs::read(a.join("curve.csv")).unwrap();
    assert_eq!(curve_a, std::fs::read(b.join("curve.csv")).unwrap());
    assert_eq!(curve_a.iter().filter(|&&b| b == b'\n').count(), 4);
    // the manifest alone reproduces the run
    let manifest = a.join("manifest.toml");
    let o = run(&["train", "--config", manifest.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(curve_a, std::fs::read(c.join("curve.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("final.ckpt")).unwrap(), std::fs::read(c.join("final.ckpt")).unwrap());
}

#[test]
fn zero_steps_writes_header_and_initial_checkpoint_only() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("z");
    let o = run(&["train", "--steps", "0", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(std::fs::read_to_string(dir.join("curve.csv")).unwrap().lines().count(), 1);
    assert!(dir.join("init.ckpt").exists());
    assert!(!dir.join("final.ckpt").exists());
}

#[test]
fn run_root_variable_sets_default_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin()
        .env("EQUIPOMDP_RUN_ROOT", tmp.path())
        .args(["train", "--steps", "0", "--seed", "7", "--agent", "plain"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(tmp.path().join("train-carflag1d-plain-s7").join("manifest.toml").exists());
}

#[test]
fn configuration_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();
    let o = run(&["train", "--env", "carflag1d", "--agent", "equi", "--group", "c4", "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("not a symmetry of carflag1d"), "{}", text(&o));
    assert!(!Path::new(out).exists());

    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[agent]\nlearning_rate = 0.1\n").unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("learning_rate"), "{}", text(&o));

    for args in [
        vec!["train", "--env", "carflag2d", "--grid-size", "4"],
        vec!["train", "--agent", "equivariant"],
        vec!["train", "--lr", "-1"],
        vec!["verify", "bogus"],
        vec!["verify", "theorem1", "--env", "carflag2d", "--grid-size", "9"],
        vec!["frobnicate"],
    ] {
        let o = run(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", text(&o));
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[env]\nkind = \"carflag2d\"\nsize = 5\n\n[agent]\nseed = 11\ntotal_steps = 0\nlr = 0.002\n",
    )
    .unwrap();
    let dir = tmp.path().join("r");
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let manifest = std::fs::read_to_string(dir.join("manifest.toml")).unwrap();
    for key in ["seed = 4", "lr = 0.002", "size = 5", "info_radius = 1", "name = \"c4\""] {
        assert!(manifest.contains(key), "missing `{key}` in\n{manifest}");
    }
}

#[test]
fn eval_reloads_checkpoint_and_dumps_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("e");
    assert_eq!(code(&train_small(&dir, "1", "400")), 0);
    let trace = tmp.path().join("trace.txt");
    let o = run(&[
        "eval",
        dir.to_str().unwrap(),
        "--checkpoint",
        "final",
        "--trace",
        trace.to_str().unwrap(),
        "--trace-episodes",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("success rate"), "{}", text(&o));
    let t = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(t.matches("# episode").count(), 2, "{t}");
    assert!(t.contains("action=") && t.contains("goal="), "{t}");
    // a network of a different shape cannot load the checkpoint
    let o = run(&["eval", dir.to_str().unwrap(), "--agent", "plain"]);
    assert_eq!(code(&o), 1, "{}", text(&o));
}

#[test]
fn verify_theorem1_passes_on_symmetric_grid_and_fails_with_offset() {
    let o = run(&["verify", "theorem1", "--env", "carflag2d", "--grid-size", "3", "--horizon", "6"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("theorem1: PASS"));
    let o = run(&["verify", "theorem1", "--env", "carflag2d", "--grid-size", "3", "--horizon", "6", "--offset", "1"]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(text(&o).contains("worst:"), "{}", text(&o));
}

#[test]
fn verify_table_suites() {
    let o = run(&["verify", "lemma1", "--env", "carflag2d", "--grid-size", "3", "--depth", "4"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let o = run(&["verify", "invariance", "--half-size", "5"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let o = run(&["verify", "invariance", "--half-size", "5", "--offset", "2"]);
    assert_eq!(code(&o), 1, "{}", text(&o));
}

#[test]
fn verify_equivariance_depends_on_lstm_init() {
    let small = ["--networks", "4", "--histories", "3", "--max-len", "12"];
    let o = run(&[&["verify", "equivariance"][..], &small].concat());
    assert_eq!(code(&o), 0, "{}", text(&o));
    let o = run(&[&["verify", "equivariance", "--lstm-init", "random"][..], &small].concat());
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(text(&o).contains("equivariance: FAIL"));
}

#[test]
fn verify_gradcheck_passes() {
    let o = run(&["verify", "gradcheck", "--agent", "equi-critic-only"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("a2c-loss (equi-critic-only)"));
}

fn parse_history(s: &str) -> History {
    let (mut obs, mut actions) = (Vec::new(), Vec::new());
    for tok in s.split_whitespace() {
        let (kind, idx) = tok.split_at(1);
        let idx: usize = idx.parse().unwrap();
        if kind == "o" {
            obs.push(idx);
        } else {
            actions.push(idx);
        }
    }
    History::from_parts(obs, actions).unwrap()
}

#[test]
fn oracle_table_satisfies_bellman_and_solves_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("o");
    let o = run(&["oracle", "--env", "carflag2d", "--grid-size", "3", "--horizon", "5", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let summary: toml::Table = std::fs::read_to_string(dir.join("summary.toml")).unwrap().parse().unwrap();
    assert_eq!(summary["greedy_success_rate"].as_float(), Some(1.0));
    assert_eq!(summary["greedy_episodes"].as_integer(), Some(200));

    // recompute Q from beliefs built independently of the history tree
    let cfg = EnvConfig::Carflag2d(CarFlag2dConfig {
        size: 3,
        ..Default::default()
    });
    let (pomdp, _) = export_pomdp(&cfg, 0.99).unwrap();
    let mut reader = csv::Reader::from_path(dir.join("q_table.csv")).unwrap();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let h = parse_history(&rec[2]);
        let q: Vec<f64> = (0..4).map(|a| rec[3 + a].parse().unwrap()).collect();
        let v: f64 = rec[7].parse().unwrap();
        rows.push((h, q, v));
    }
    let value = |h: &History| rows.iter().find(|r| &r.0 == h).map(|r| r.2);
    let mut checked = 0;
    for (h, q, v) in rows.iter().step_by(7) {
        let b = pomdp.belief_of(h).unwrap();
        assert!((v - q.iter().copied().fold(f64::NEG_INFINITY, f64::max)).abs() < 1e-12);
        for a in 0..4 {
            let reward: f64 = (0..pomdp.n_states()).map(|s| b.get(s) * pomdp.r(s, a)).sum();
            let mut expect = reward;
            if h.len() + 1 < 5 {
                let pred = pomdp.predict(&b, a).unwrap();
                for o in 0..pomdp.n_obs() {
                    let p: f64 = (0..pomdp.n_states()).map(|s| pred[s] * pomdp.o(a, s, o)).sum();
                    if p > 0.0 {
                        expect += 0.99 * p * value(&h.extended(a, o)).expect("child in table");
                    }
                }
            }
            assert!((q[a] - expect).abs() < 1e-9, "h = {h}, a = {a}: {} vs {expect}", q[a]);
        }
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn oracle_budget_exceeded_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["oracle", "--env", "carflag2d", "--grid-size", "3", "--budget", "50", "--out", tmp.path().join("b").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("node budget"), "{}", text(&o));
}

#[test]
fn plotdata_aggregates_seeds_and_rejects_misaligned_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert_eq!(code(&train_small(&a, "0", "400")), 0);
    assert_eq!(code(&train_small(&b, "1", "400")), 0);
    assert_eq!(code(&train_small(&c, "2", "600")), 0);
    let agg = tmp.path().join("agg.csv");
    let o = run(&["plotdata", a.to_str().unwrap(), b.join("curve.csv").to_str().unwrap(), "--out", agg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let read = |p: &Path| -> Vec<Vec<String>> {
        csv::Reader::from_path(p)
            .unwrap()
            .records()
            .map(|r| r.unwrap().iter().map(String::from).collect())
            .collect()
    };
    let (ra, rb, rg) = (read(&a.join("curve.csv")), read(&b.join("curve.csv")), read(&agg));
    assert_eq!(rg.len(), ra.len());
    for i in 0..rg.len() {
        let (x, y): (f64, f64) = (ra[i][2].parse().unwrap(), rb[i][2].parse().unwrap());
        let mean: f64 = rg[i][2].parse().unwrap();
        let std: f64 = rg[i][3].parse().unwrap();
        assert_eq!(rg[i][0], ra[i][0]);
        assert!((mean - (x + y) / 2.0).abs() < 1e-12);
        assert!((std - (x - y).abs() / 2.0).abs() < 1e-12);
    }
    let o = run(&["plotdata", a.to_str().unwrap(), c.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("do not align"), "{}", text(&o));
}
