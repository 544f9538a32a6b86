//! Reproducible experiments driven by a single JSON config: generate the
//! synthetic splits, sweep and train mixture-of-softmax models, evaluate the
//! decision rules and gate post-hoc control with the shift detector.

pub mod config;
pub mod error;
pub mod manifest;
pub mod store;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use posthoc_core::eval::{self, EvalSettings, SplitReport};
use posthoc_core::trainer::{self, TrainHistory};
use posthoc_core::{Checkpoint, DecisionRule, Generator, ShiftVerdict, SweepResult};
use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
use manifest::RunManifest;
pub use store::DataStore;

#[derive(Debug, Parser)]
#[command(name = "posthoc", version, about = "Shortcut-robust mixture-of-softmax experiments")]
pub struct Cli {
    /// Experiment config (JSON). Built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory, overriding `out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Global seed, overriding `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for the sweep.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    /// Override a config field, e.g. `--set train.lambda=1`. Repeatable.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub sets: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand)]
pub enum Command {
    /// Generate every configured split into `<out>/data`.
    Gen,
    /// Train one model on train, selecting the epoch on id_dev.
    Train {
        /// Take K and lambda from `<out>/sweep.json`.
        #[arg(long)]
        use_sweep: bool,
    },
    /// Two-stage search over K then lambda on id_dev.
    Sweep,
    /// Accuracy per rule, penalty statistics and profiles per split.
    Eval {
        /// Checkpoint to evaluate (default `<out>/model.json`).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Flag shifted splits and report gated accuracy.
    Detect {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Summarise the artifacts already in the output directory.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train { .. } => "train",
            Command::Sweep => "sweep",
            Command::Eval { .. } => "eval",
            Command::Detect { .. } => "detect",
            Command::Report => "report",
        }
    }
}

pub struct Context {
    pub config: ExperimentConfig,
    pub workers: usize,
    pub store: DataStore,
    timings: Vec<(String, std::time::Duration)>,
}

impl Context {
    pub fn new(config: ExperimentConfig, workers: usize) -> Self {
        let store = DataStore::new(config.out_dir.join("data"), config.generator_config());
        Context {
            config,
            workers: workers.max(1),
            store,
            timings: Vec::new(),
        }
    }

    pub fn from_cli(cli: &Cli) -> CliResult<Self> {
        let overrides = Overrides {
            sets: cli.sets.clone(),
            seed: cli.seed,
            out_dir: cli.out.clone(),
        };
        let config = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
        Ok(Context::new(config, cli.workers))
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out_dir
    }

    fn timed<T>(&mut self, step: &str, f: impl FnOnce(&Self) -> CliResult<T>) -> CliResult<T> {
        let start = Instant::now();
        let value = f(self)?;
        self.timings.push((step.to_string(), start.elapsed()));
        eprintln!("[{step}] done in {:.1}s", start.elapsed().as_secs_f64());
        Ok(value)
    }

    fn write(&self, rel: &str, contents: &str) -> CliResult<String> {
        let path = self.out_dir().join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::output(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| CliError::output(&path, e))?;
        Ok(rel.to_string())
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> CliResult<String> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(rel, &text)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str, producer: &str) -> CliResult<T> {
        let path = self.out_dir().join(rel);
        let text = fs::read_to_string(&path).map_err(|_| CliError::MissingInput {
            path: path.clone(),
            hint: format!("run `posthoc {producer}` first"),
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    fn load_model(&self, explicit: Option<&Path>) -> CliResult<Checkpoint> {
        let path = explicit.map_or_else(|| self.out_dir().join("model.json"), Path::to_path_buf);
        if !path.exists() {
            return Err(CliError::MissingInput {
                path,
                hint: "run `posthoc train` first".into(),
            });
        }
        let ck = Checkpoint::load(&path)?;
        let expected_input = self.config.generator.feature_dim();
        let c = ck.model.config;
        if c.input_dim != expected_input || c.num_labels != self.config.generator.num_labels {
            return Err(CliError::Data(format!(
                "model expects {} features and {} labels, the data has {expected_input} and {}",
                c.input_dim, c.num_labels, self.config.generator.num_labels
            )));
        }
        Ok(ck)
    }

    fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            batch_size: self.config.train.batch_size,
            ell: self.config.ell(),
            seed: self.config.eval_seed(),
            rules: self.config.eval.rules.clone(),
        }
    }
}

/// Files produced by a command, relative to the output directory.
#[derive(Debug)]
pub struct Outcome {
    pub command: String,
    pub files: Vec<String>,
}

pub fn run(cli: &Cli) -> CliResult<Outcome> {
    let mut ctx = Context::from_cli(cli)?;
    execute(&cli.command, &mut ctx)
}

/// Runs one command and writes its manifest.
pub fn execute(command: &Command, ctx: &mut Context) -> CliResult<Outcome> {
    fs::create_dir_all(ctx.out_dir()).map_err(|e| CliError::output(ctx.out_dir(), e))?;
    let files = match command {
        Command::Gen => cmd_gen(ctx)?,
        Command::Train { use_sweep } => cmd_train(ctx, *use_sweep)?,
        Command::Sweep => cmd_sweep(ctx)?,
        Command::Eval { model } => cmd_eval(ctx, model.as_deref())?,
        Command::Detect { model } => cmd_detect(ctx, model.as_deref())?,
        Command::Report => cmd_report(ctx)?,
    };
    let name = command.name();
    let records = files
        .iter()
        .map(|f| manifest::record_file(ctx.out_dir(), f))
        .collect::<CliResult<Vec<_>>>()?;
    let timings = RunManifest::timings_name(name);
    ctx.write(&timings, &manifest::timings_text(&ctx.timings))?;
    let manifest = RunManifest {
        tool: "posthoc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        config_hash: ctx.config.hash(),
        seeds: ctx.config.seeds(),
        files: records,
        timings: timings.clone(),
    };
    let manifest_file = ctx.write_json(&RunManifest::file_name(name), &manifest)?;
    let mut all = files;
    all.push(timings);
    all.push(manifest_file);
    Ok(Outcome {
        command: name.into(),
        files: all,
    })
}

fn cmd_gen(ctx: &mut Context) -> CliResult<Vec<String>> {
    // every split is checked before anything is written
    ctx.config.validate()?;
    let generator = Generator::new(ctx.config.generator_config())?;
    let splits = ctx.config.splits.clone();
    let mut files = Vec::new();
    for spec in &splits {
        let rel = ctx.timed(&format!("gen:{}", spec.name), |ctx| {
            let instances = generator.sample_split(spec)?;
            let path = ctx.store.write(&spec.name, generator.split_seed(&spec.name), &instances)?;
            eprintln!("wrote {} ({} rows)", path.display(), instances.len());
            Ok(format!("data/{}.csv", spec.name))
        })?;
        files.push(rel);
    }
    Ok(files)
}

fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from("epoch,train_classification,train_penalty,dev_accuracy,dev_classification,dev_penalty,dev_total,best\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.17e}")).unwrap_or_default();
    for e in &history.epochs {
        writeln!(
            out,
            "{},{:.17e},{},{:.17e},{:.17e},{},{:.17e},{}",
            e.epoch,
            e.train.classification,
            opt(e.train.penalty),
            e.dev_accuracy,
            e.dev.classification,
            opt(e.dev.penalty),
            e.dev_total,
            e.epoch == history.best_epoch
        )
        .unwrap();
    }
    out
}

fn cmd_train(ctx: &mut Context, use_sweep: bool) -> CliResult<Vec<String>> {
    let mut config = ctx.config.train_config();
    if use_sweep {
        let sweep: SweepResult = ctx.read_json("sweep.json", "sweep")?;
        config.num_experts = sweep.best_num_experts;
        config.lambda = sweep.best_lambda;
    }
    let train = ctx.store.read(config::TRAIN_SPLIT)?;
    let dev = ctx.store.read(config::DEV_SPLIT)?;
    let labels = ctx.config.generator.num_labels;
    let (model, history) = ctx.timed("train", |_| Ok(trainer::fit(&config, labels, &train, &dev)?))?;
    eprintln!(
        "K={} lambda={} ell={}: best epoch {} with id_dev accuracy {:.4}",
        config.num_experts,
        config.lambda,
        history.ell,
        history.best_epoch,
        history.epochs[history.best_epoch].dev_accuracy
    );
    let ck = Checkpoint::new(model, trainer::init_seed(&config));
    let model_rel = "model.json";
    ck.save(&ctx.out_dir().join(model_rel))
        .map_err(|e| match e {
            posthoc_core::Error::Io { path, source } => CliError::output(path, source),
            other => other.into(),
        })?;
    Ok(vec![
        model_rel.to_string(),
        ctx.write_json("train_history.json", &history)?,
        ctx.write("train_history.csv", &history_csv(&history))?,
    ])
}

fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from("stage,num_experts,lambda,classification,penalty,total,selected\n");
    for (stage, cands) in [(1, &result.stage1), (2, &result.stage2)] {
        for c in cands {
            let selected = if stage == 1 {
                c.num_experts == result.best_num_experts
            } else {
                c.lambda == result.best_lambda
            };
            writeln!(
                out,
                "{stage},{},{},{:.17e},{:.17e},{:.17e},{selected}",
                c.num_experts, c.lambda, c.classification, c.penalty, c.total
            )
            .unwrap();
        }
    }
    out
}

fn cmd_sweep(ctx: &mut Context) -> CliResult<Vec<String>> {
    let base = ctx.config.sweep_base();
    let grid = ctx.config.sweep.clone();
    let train = ctx.store.read(config::TRAIN_SPLIT)?;
    let dev = ctx.store.read(config::DEV_SPLIT)?;
    let labels = ctx.config.generator.num_labels;
    let workers = ctx.workers;
    let result = ctx.timed("sweep", |_| {
        Ok(trainer::two_stage_search(&base, &grid, labels, &train, &dev, workers)?)
    })?;
    eprintln!("selected K*={} lambda*={}", result.best_num_experts, result.best_lambda);
    Ok(vec![
        ctx.write_json("sweep.json", &result)?,
        ctx.write("sweep.csv", &sweep_csv(&result))?,
    ])
}

fn cmd_eval(ctx: &mut Context, model: Option<&Path>) -> CliResult<Vec<String>> {
    let ck = ctx.load_model(model)?;
    let settings = ctx.eval_settings();
    let mut reports = Vec::new();
    for name in ctx.config.eval.splits.clone() {
        let split = ctx.store.read(&name)?;
        let report = ctx.timed(&format!("eval:{name}"), |_| {
            Ok(eval::evaluate_split(&ck.model, &name, &split, &settings)?)
        })?;
        let accs: Vec<String> = report.accuracy.iter().map(|(r, a)| format!("{r}={a:.4}")).collect();
        eprintln!("{name}: {}", accs.join(" "));
        reports.push(report);
    }
    let mut files = vec![
        ctx.write_json("eval.json", &reports)?,
        ctx.write("eval.csv", &eval::reports_csv(&reports))?,
        ctx.write("mixture_profiles.csv", &eval::mixture_profiles_csv(&reports))?,
    ];
    for r in &reports {
        files.push(ctx.write(
            &format!("expert_predictions_{}.csv", r.split),
            &eval::matrix_csv(&r.expert_predictions, "expert_", "label_"),
        )?);
    }
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectRecord {
    pub split: String,
    pub verdict: ShiftVerdict,
    pub rule: DecisionRule,
    pub gated_accuracy: f64,
}

fn cmd_detect(ctx: &mut Context, model: Option<&Path>) -> CliResult<Vec<String>> {
    let ck = ctx.load_model(model)?;
    let settings = ctx.eval_settings();
    let multiplier = ctx.config.eval.shift_multiplier;
    let gate = ctx.config.eval.gate_rule;
    let reference_name = ctx.config.eval.reference_split.clone();
    let reference_split = ctx.store.read(&reference_name)?;
    let reference = eval::penalty_statistic(&ck.model, &reference_split, settings.batch_size, settings.ell, settings.seed)?;
    let mut records = Vec::new();
    for name in ctx.config.eval.splits.clone() {
        let split = ctx.store.read(&name)?;
        let record = ctx.timed(&format!("detect:{name}"), |_| {
            let target = eval::penalty_statistic(&ck.model, &split, settings.batch_size, settings.ell, settings.seed)?;
            let verdict = eval::detect_shift(reference, target, multiplier);
            let (rule, gated_accuracy) = eval::gated_accuracy(&ck.model, &split, &verdict, gate)?;
            Ok(DetectRecord {
                split: name.clone(),
                verdict,
                rule,
                gated_accuracy,
            })
        })?;
        eprintln!(
            "{name}: score {:.2} -> {} ({}, accuracy {:.4})",
            record.verdict.score,
            if record.verdict.shifted { "shifted" } else { "in-distribution" },
            record.rule,
            record.gated_accuracy
        );
        records.push(record);
    }
    let mut csv = String::from("split,reference_mean,reference_std,target_mean,target_std,score,threshold,shifted,rule,gated_accuracy\n");
    for r in &records {
        let v = &r.verdict;
        writeln!(
            csv,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{},{},{:.17e}",
            r.split, v.reference.mean, v.reference.std, v.target.mean, v.target.std, v.score, v.threshold, v.shifted, r.rule, r.gated_accuracy
        )
        .unwrap();
    }
    Ok(vec![ctx.write_json("detect.json", &records)?, ctx.write("detect.csv", &csv)?])
}

fn cmd_report(ctx: &mut Context) -> CliResult<Vec<String>> {
    let reports: Vec<SplitReport> = ctx.read_json("eval.json", "eval")?;
    let detect: Option<Vec<DetectRecord>> = ctx.out_dir().join("detect.json").exists().then(|| ctx.read_json("detect.json", "detect")).transpose()?;
    let sweep: Option<SweepResult> = ctx.out_dir().join("sweep.json").exists().then(|| ctx.read_json("sweep.json", "sweep")).transpose()?;

    let mut md = String::from("# Experiment report\n\n");
    writeln!(md, "config hash `{}`, seed {}\n", ctx.config.hash(), ctx.config.seed).unwrap();
    if let Some(s) = &sweep {
        writeln!(md, "Sweep selected K* = {}, lambda* = {}.\n", s.best_num_experts, s.best_lambda).unwrap();
    }
    let rules = &ctx.config.eval.rules;
    md.push_str("| split |");
    for r in rules {
        write!(md, " {r} |").unwrap();
    }
    md.push_str(" L_R mean | L_R std |\n|---|");
    md.push_str(&"---|".repeat(rules.len() + 2));
    md.push('\n');
    let mut csv = String::from("split,rule,accuracy\n");
    for rep in &reports {
        write!(md, "| {} |", rep.split).unwrap();
        for r in rules {
            match rep.accuracy.get(r) {
                Some(a) => {
                    write!(md, " {:.2} |", 100.0 * a).unwrap();
                    writeln!(csv, "{},{r},{a:.17e}", rep.split).unwrap();
                }
                None => md.push_str(" - |"),
            }
        }
        match rep.penalty {
            Some(p) => writeln!(md, " {:.3} | {:.3} |", p.mean, p.std).unwrap(),
            None => md.push_str(" - | - |\n"),
        }
    }
    if let Some(records) = &detect {
        md.push_str("\n| split | shift score | shifted | rule | accuracy |\n|---|---|---|---|---|\n");
        for r in records {
            writeln!(
                md,
                "| {} | {:.2} | {} | {} | {:.2} |",
                r.split,
                r.verdict.score,
                r.verdict.shifted,
                r.rule,
                100.0 * r.gated_accuracy
            )
            .unwrap();
            writeln!(csv, "{},gated:{},{:.17e}", r.split, r.rule, r.gated_accuracy).unwrap();
        }
    }
    Ok(vec![ctx.write("report.md", &md)?, ctx.write("report.csv", &csv)?])
}
