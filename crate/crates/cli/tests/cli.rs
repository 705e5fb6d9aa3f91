use std::path::PathBuf;
use std::process::{Command, Output};

fn perp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("perp-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn equilibrium_reports_default_gap_and_speed() {
    let o = perp(&["equilibrium", "--steps", "500"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("gap_eq=11 m"), "{s}");
    assert!(s.contains("v_eq=8.95"), "{s}");
}

#[test]
fn simulate_is_deterministic() {
    let dir = scratch("sim");
    let a = dir.join("a.jsonl");
    let b = dir.join("b.jsonl");
    for p in [&a, &b] {
        let o = perp(&["simulate", "--steps", "600", "--seed", "0", "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ta = std::fs::read(&a).unwrap();
    assert_eq!(ta, std::fs::read(&b).unwrap());
    assert_eq!(ta.iter().filter(|&&c| c == b'\n').count(), 600);
    let other = dir.join("c.jsonl");
    perp(&["simulate", "--steps", "600", "--seed", "1", "--out", other.to_str().unwrap()]);
    assert_ne!(ta, std::fs::read(&other).unwrap());
}

#[test]
fn compare_without_checkpoints_fails_and_lists_them() {
    let dir = scratch("cmp");
    let o = perp(&[
        "compare",
        "--artifacts",
        dir.to_str().unwrap(),
        "--set",
        "compare.policies=[\"pcp\", \"perp\"]",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let e = stderr(&o);
    assert!(e.contains("pcp_d20_s0.json"), "{e}");
}

#[test]
fn unknown_config_key_exits_with_config_error() {
    let dir = scratch("cfg");
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, "[perp]\nresidual_bond = 3.0\n").unwrap();
    let o = perp(&["equilibrium", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("perp.residual_bond"), "{}", stderr(&o));

    let o = perp(&["equilibrium", "--config", dir.join("absent.toml").to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("absent.toml"), "{}", stderr(&o));
}

#[test]
fn flag_overrides_file_overrides_default() {
    let dir = scratch("prec");
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, "[env]\ncircumference = 600.0\n[idm]\ndesired_speed = 25.0\n").unwrap();
    let file = stdout(&perp(&["equilibrium", "--steps", "10", "--config", cfg.to_str().unwrap()]));
    assert!(file.contains("gap_eq=10 m"), "{file}");
    let flag = stdout(&perp(&[
        "equilibrium",
        "--steps",
        "10",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "env.circumference=680",
    ]));
    assert!(flag.contains("gap_eq=12 m"), "{flag}");
}

#[test]
fn help_lists_config_keys() {
    let o = perp(&["train-pcp", "--help"]);
    let s = stdout(&o);
    for key in ["pcp.iterations = 1000", "pcp.ppo.learning_rate = 0.0001", "dti.train.batch_size = 16", "perp.residual_bound = 6.0"] {
        assert!(s.contains(key), "missing `{key}`");
    }
    for sub in ["simulate", "train-pcp", "collect-dti-data", "train-dti", "eval-dti", "train-perp", "evaluate", "compare", "equilibrium", "pipeline"] {
        let o = perp(&[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        assert!(stdout(&o).contains("--seed"), "{sub} lacks --seed");
    }
}

#[test]
fn tiny_training_chain_runs_end_to_end() {
    let dir = scratch("chain");
    let art = dir.to_str().unwrap();
    let common = [
        "--artifacts",
        art,
        "--seed",
        "4",
        "--set",
        "pcp.warmup=50",
        "--set",
        "pcp.horizon=100",
        "--set",
        "pcp.episodes_per_iteration=2",
        "--set",
        "pcp.eval_episodes=1",
        "--set",
        "pcp.action_max=8",
    ];
    let run = |extra: &[&str]| {
        let mut args: Vec<&str> = extra.to_vec();
        args.extend_from_slice(&common);
        let o = perp(&args);
        assert!(o.status.success(), "{extra:?}: {}", stderr(&o));
        stdout(&o)
    };
    run(&["train-pcp", "--iters", "1"]);
    assert!(dir.join("pcp_d20_s4.json").exists());
    assert!(dir.join("pcp_d20_s4.csv").exists());
    run(&["collect-dti-data", "--windows-per-trait", "4", "--set", "dti.collect.horizon=100", "--set", "dti.collect.warmup=50"]);
    let out = run(&["train-dti", "--epochs", "1"]);
    assert!(out.contains("accuracy="), "{out}");
    let ckpt = dir.join("dti_d20_s4.json");
    let out = run(&["eval-dti", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(out.contains("trait +5.0"), "{out}");
    run(&[
        "train-perp",
        "--iters",
        "1",
        "--set",
        "perp.warmup=50",
        "--set",
        "perp.horizon=100",
        "--set",
        "perp.episodes_per_iteration=2",
        "--set",
        "perp.eval_episodes=1",
    ]);
    let traces = dir.join("traces.jsonl");
    let out = run(&[
        "evaluate",
        "--policy",
        "perp",
        "--episodes",
        "2",
        "--set",
        "eval.warmup=50",
        "--set",
        "eval.horizon=100",
        "--traces",
        traces.to_str().unwrap(),
    ]);
    assert!(out.contains("hold_violations=0"), "{out}");
    assert_eq!(std::fs::read_to_string(&traces).unwrap().lines().count(), 2);
    let out = run(&[
        "compare",
        "--set",
        "compare.seeds=[4]",
        "--set",
        "compare.policies=[\"osl\", \"pcp\", \"perp\"]",
        "--set",
        "eval.episodes=2",
        "--set",
        "eval.warmup=50",
        "--set",
        "eval.horizon=100",
    ]);
    assert!(out.contains("rows=3"), "{out}");
    let csv = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("policy,delta,seed,avg_speed,avg_std,collisions,emissions_proxy"), "{csv}");
}
