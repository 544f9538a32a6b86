use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use posthoc_cli::{execute, CliError, Command, Context, ExperimentConfig, Overrides};
use posthoc_core::SplitReport;

/// Small and fast variant of the default experiment.
fn small(out: &Path, extra: &[&str]) -> Vec<String> {
    let mut sets: Vec<String> = [
        "splits.0.size=600",
        "splits.1.size=200",
        "splits.2.size=200",
        "train.epochs=2",
        "train.hidden_dim=8",
        "train.repr_dim=6",
        "sweep.k_grid=[2,3]",
        "sweep.lambda_grid=[0,0.5]",
        "sweep.seeds=1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    sets.extend(extra.iter().map(|s| s.to_string()));
    sets.push(format!("out_dir={}", out.display()));
    sets
}

fn context(sets: Vec<String>) -> Context {
    let config = ExperimentConfig::load(
        None,
        &Overrides {
            sets,
            ..Overrides::default()
        },
    )
    .unwrap();
    Context::new(config, 2)
}

fn run(ctx: &mut Context, cmd: Command) -> Vec<String> {
    execute(&cmd, ctx).unwrap().files
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if matches!(path.extension().and_then(|e| e.to_str()), Some("json" | "csv" | "md")) {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn gen_writes_default_splits_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let mut ctx = context(vec![format!("out_dir={}", dir.path().display())]);
    let files = run(&mut ctx, Command::Gen);
    assert!(files.contains(&"manifest-gen.json".to_string()));
    let rows = |name: &str| fs::read_to_string(dir.path().join("data").join(name)).unwrap().lines().count() - 2;
    assert_eq!(rows("train.csv"), 8000);
    assert_eq!(rows("id_dev.csv"), 2000);
    assert_eq!(rows("ood_test.csv"), 2000);
    let first = snapshot(dir.path());
    run(&mut ctx, Command::Gen);
    assert_eq!(first, snapshot(dir.path()));
}

#[test]
fn zero_sized_split_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let err = ExperimentConfig::load(
        None,
        &Overrides {
            sets: small(&out, &["splits.2.size=0"]),
            ..Overrides::default()
        },
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(!out.exists());
}

#[test]
fn train_and_sweep_never_read_ood_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut ctx = context(small(dir.path(), &[]));
    run(&mut ctx, Command::Gen);
    let mut ctx = context(small(dir.path(), &[]));
    run(&mut ctx, Command::Sweep);
    run(&mut ctx, Command::Train { use_sweep: true });
    assert_eq!(ctx.store.reads(), ["train", "id_dev", "train", "id_dev"]);
    run(&mut ctx, Command::Eval { model: None });
    assert!(ctx.store.reads().contains(&"ood_test".to_string()));
}

#[test]
fn single_expert_model_gives_identical_rule_accuracies() {
    let dir = tempfile::tempdir().unwrap();
    let mut ctx = context(small(dir.path(), &["train.num_experts=1", "train.lambda=0"]));
    run(&mut ctx, Command::Gen);
    run(&mut ctx, Command::Train { use_sweep: false });
    run(&mut ctx, Command::Eval { model: None });
    let reports: Vec<SplitReport> = serde_json::from_str(&fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 2);
    for r in &reports {
        let accs: Vec<f64> = r.accuracy.values().copied().collect();
        assert_eq!(accs.len(), 3);
        assert!(accs.iter().all(|&a| a == accs[0]), "{}: {accs:?}", r.split);
    }
}

#[test]
fn full_pipeline_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let commands = [
        Command::Gen,
        Command::Sweep,
        Command::Train { use_sweep: true },
        Command::Eval { model: None },
        Command::Detect { model: None },
        Command::Report,
    ];
    let mut ctx = context(small(dir.path(), &[]));
    for cmd in &commands {
        run(&mut ctx, cmd.clone());
    }
    let first = snapshot(dir.path());
    assert!(first.len() >= 20, "{:?}", first.keys().collect::<Vec<_>>());
    // a different worker count must not change anything
    let mut ctx = context(small(dir.path(), &[]));
    ctx.workers = 1;
    for cmd in &commands {
        run(&mut ctx, cmd.clone());
    }
    assert_eq!(first, snapshot(dir.path()));

    let manifest: serde_json::Value = serde_json::from_slice(&first[Path::new("manifest-eval.json")]).unwrap();
    let listed: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert!(listed.contains(&"eval.json") && listed.contains(&"expert_predictions_ood_test.csv"));
}

#[test]
fn missing_inputs_have_their_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut ctx = context(small(dir.path(), &[]));
    for cmd in [Command::Train { use_sweep: false }, Command::Eval { model: None }, Command::Report] {
        let err = execute(&cmd, &mut ctx).unwrap_err();
        assert!(matches!(err, CliError::MissingInput { .. }), "{err}");
        assert_eq!(err.exit_code(), 4);
    }
}

#[test]
fn corrupted_split_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut ctx = context(small(dir.path(), &[]));
    run(&mut ctx, Command::Gen);
    let path = dir.path().join("data/train.csv");
    let text = fs::read_to_string(&path).unwrap().replacen(",", ",oops", 3);
    fs::write(&path, text).unwrap();
    let err = execute(&Command::Train { use_sweep: false }, &mut ctx).unwrap_err();
    assert_eq!(err.exit_code(), 5, "{err}");

    // data generated under a different generator config is rejected too
    let mut other = context(small(dir.path(), &["generator.sigma_core=0.6"]));
    let err = execute(&Command::Sweep, &mut other).unwrap_err();
    assert_eq!(err.exit_code(), 5, "{err}");
}

fn binary() -> Process {
    Process::new(env!("CARGO_BIN_EXE_posthoc"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = |args: &[&str]| binary().args(args).output().unwrap().status.code().unwrap();

    assert_eq!(status(&["frobnicate"]), 2);
    assert_eq!(status(&["gen", "--set", "train.nope=1"]), 3);
    assert_eq!(status(&["train", "--out", out.to_str().unwrap()]), 4);
    assert_eq!(status(&["gen", "--config", dir.path().join("absent.json").to_str().unwrap()]), 4);

    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(status(&["gen", "--out", blocker.join("sub").to_str().unwrap()]), 6);

    let mut args = vec!["gen".to_string(), "--seed".into(), "5".into()];
    for s in small(&out, &[]) {
        args.push("--set".into());
        args.push(s);
    }
    let output = binary().args(&args).output().unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let listed = String::from_utf8(output.stdout).unwrap();
    assert!(listed.lines().any(|l| l == "data/ood_test.csv"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest-gen.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen");
    assert_eq!(manifest["files"].as_array().unwrap().len(), 3);
}

#[test]
fn shipped_config_file_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let config = ExperimentConfig::load(Some(&path), &Overrides::default()).unwrap();
    assert_eq!(config, ExperimentConfig::default());
}
