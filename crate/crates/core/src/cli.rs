//! The `millwatch` command line.
//!
//! Every subcommand resolves a [`RunConfig`] from defaults, `--config`, and
//! `--set key=value` overrides (`--seed` and `--out` are shorthands for the
//! matching keys), then writes its artifacts under `out`.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::config::RunConfig;
use crate::coordinator::{incident_dataset, FsmDefinition};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evalsim::{
    check_delay_budget, delay_table, metrics_table, precision_recall_f1, run_baseline,
    simulate_deployment, suite_mean_abs_delay, validate_path, ConfusionMatrix, Metrics,
    SimulationReport,
};
use crate::model::{
    evaluate_sequences, network_hash, pretrain_upstream, train_end_to_end, EncoderClassifier,
};
use crate::nn::io::{load_network, save_network};
use crate::synthgen::{
    extract_sequence_samples, extract_steady_samples, Manifest, TrialRecording, TrialSplit,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_THRESHOLD: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "millwatch",
    version,
    about = "Streaming machine-part interaction classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel evaluation and generation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dotted configuration override, e.g. `training.lr=0.0005`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic trials and a manifest.
    Gen,
    /// Pretrain the window encoder on steady-state windows.
    Pretrain,
    /// Train the encoder-classifier end to end.
    Train,
    /// Held-out classification metrics.
    Eval,
    /// Replay held-out trials through the full pipeline.
    Simulate,
    /// Simulate both the proposed system and the single-window baseline.
    Compare,
    /// Validate an FSM definition file.
    FsmCheck {
        /// Definition to check; defaults to the configured FSM.
        path: Option<PathBuf>,
    },
    /// Write rejected decisions from simulated trials as a dataset.
    ExportIncidents,
}

/// Error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Fsm(_) | Error::InvalidArgument(_) => EXIT_USAGE,
            Error::Diverged { .. } | Error::NonFinite(_) => EXIT_DIVERGED,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn threshold(message: String) -> Failure {
    Failure {
        code: EXIT_THRESHOLD,
        message,
    }
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("out={}", serde_json::to_string(out)?));
    }
    RunConfig::resolve(cli.config.as_deref(), &overrides)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    let cfg = resolve_config(cli)?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()).into());
        }
        // Ignored if a pool already exists, e.g. when called twice in-process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match &cli.command {
        Command::Gen => {
            cmd_gen(&cfg)?;
        }
        Command::Pretrain => {
            cmd_pretrain(&cfg)?;
        }
        Command::Train => {
            cmd_train(&cfg)?;
        }
        Command::Eval => {
            cmd_eval(&cfg)?;
        }
        Command::Simulate => {
            cmd_simulate(&cfg)?;
        }
        Command::Compare => {
            cmd_compare(&cfg)?;
        }
        Command::FsmCheck { path } => {
            cmd_fsm_check(&cfg, path.as_deref())?;
        }
        Command::ExportIncidents => {
            cmd_export_incidents(&cfg)?;
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn config_value(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

pub fn load_fsm(cfg: &RunConfig) -> Result<FsmDefinition> {
    match &cfg.fsm {
        Some(p) => FsmDefinition::load(p),
        None => Ok(FsmDefinition::milling()),
    }
}

fn load_trials(cfg: &RunConfig, split: TrialSplit) -> Result<Vec<(String, TrialRecording)>> {
    let path = cfg.manifest_path();
    let manifest = Manifest::load(&path)?;
    manifest.load_split(&path, split)
}

/// Sub-seeds derived from the master seed, one per consumer.
fn sub_seed(cfg: &RunConfig, purpose: u64) -> u64 {
    crate::synthgen::trial_seed(cfg.seed, u64::MAX - purpose)
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<Manifest> {
    create_dir(&cfg.out)?;
    let g = &cfg.gen;
    let manifest = Manifest::generate(
        &cfg.out,
        &g.params,
        cfg.seed,
        g.trials,
        g.test_trials,
        g.simulation_trials,
        config_value(cfg),
    )?;
    println!(
        "wrote {} trials and {}",
        manifest.trials.len(),
        cfg.out.join("manifest.json").display()
    );
    Ok(manifest)
}

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<String> {
    let train = load_trials(cfg, TrialSplit::Train)?;
    let e = &cfg.extraction;
    let data = extract_steady_samples(
        &train,
        cfg.windowing.w,
        e.margin,
        e.stride,
        sub_seed(cfg, 1),
    )?;
    log::info!(
        "pretraining on {} windows {:?}",
        data.len(),
        data.class_histogram()
    );
    let (net, report) = pretrain_upstream(&data, &cfg.training_config())?;
    create_dir(&cfg.out)?;
    let path = cfg.upstream_path();
    save_network(&path, &net)?;
    write(
        &cfg.out.join("pretrain_report.csv"),
        &report.to_csv(Some(&cfg.echo())),
    )?;
    let hash = network_hash(&net);
    println!("upstream {} sha256 {hash}", path.display());
    Ok(hash)
}

fn training_sequences(cfg: &RunConfig) -> Result<Dataset> {
    let train = load_trials(cfg, TrialSplit::Train)?;
    let mut data = extract_sequence_samples(
        &train,
        &cfg.extraction.sampling(&cfg.windowing),
        sub_seed(cfg, 2),
    )?;
    for path in &cfg.paths.extra_sequences {
        let extra = Dataset::load(path)?;
        if (extra.kind, extra.classes, extra.n, extra.w)
            != (data.kind, data.classes, data.n, data.w)
        {
            return Err(Error::Data(format!(
                "{}: layout does not match the training sequences",
                path.display()
            )));
        }
        let (reviewed, pending): (Vec<_>, Vec<_>) =
            extra.samples.into_iter().partition(|s| s.reviewed);
        if !pending.is_empty() {
            log::warn!(
                "{}: skipping {} unreviewed records",
                path.display(),
                pending.len()
            );
        }
        for s in reviewed {
            data.push(s)?;
        }
    }
    Ok(data)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let upstream = load_network(&cfg.upstream_path())?;
    let data = training_sequences(cfg)?;
    log::info!(
        "training on {} sequences {:?}",
        data.len(),
        data.class_histogram()
    );
    let (model, report) = train_end_to_end(&data, upstream, &cfg.training_config())?;
    create_dir(&cfg.out)?;
    let path = cfg.model_path();
    model.save(&path, &cfg.echo())?;
    write(
        &cfg.out.join("train_report.csv"),
        &report.to_csv(Some(&cfg.echo())),
    )?;
    let hash = model.parameter_hash();
    println!("model {} sha256 {hash}", path.display());
    Ok(hash)
}

pub fn cmd_eval(cfg: &RunConfig) -> std::result::Result<Metrics, Failure> {
    let model = EncoderClassifier::load(&cfg.model_path())?;
    let fsm = load_fsm(cfg)?;
    let test = load_trials(cfg, TrialSplit::Test)?;
    if test.is_empty() {
        return Err(Error::Data("the manifest has no test trials".into()).into());
    }
    let data = extract_sequence_samples(
        &test,
        &cfg.extraction.sampling(&cfg.windowing),
        sub_seed(cfg, 3),
    )?;
    let (_, preds) = evaluate_sequences(&model, &data)?;
    let cm = ConfusionMatrix::from_pairs(fsm.class_names(), &data.labels(), &preds)?;
    let metrics = precision_recall_f1(&cm);
    create_dir(&cfg.out)?;
    let table = metrics_table(&metrics);
    write(&cfg.out.join("eval.txt"), &table)?;
    write(
        &cfg.out.join("confusion.csv"),
        &format!("# config={}\n{}", cfg.echo(), cm.to_csv()),
    )?;
    write_json(
        &cfg.out.join("eval.json"),
        &json!({ "config": config_value(cfg), "model_hash": model.parameter_hash(), "metrics": metrics, "confusion": cm }),
    )?;
    print!("{table}");
    if let Some(min) = cfg.min_macro_f1 {
        if metrics.macro_f1 < min {
            return Err(threshold(format!(
                "macro F1 {:.3} is below the required {min}",
                metrics.macro_f1
            )));
        }
    }
    Ok(metrics)
}

fn simulation_trials(cfg: &RunConfig) -> Result<Vec<(String, TrialRecording)>> {
    let trials = load_trials(cfg, TrialSplit::Simulation)?;
    if trials.is_empty() {
        return Err(Error::Data("the manifest has no simulation trials".into()));
    }
    Ok(trials)
}

fn write_reports(cfg: &RunConfig, dir: &Path, reports: &[SimulationReport]) -> Result<String> {
    create_dir(dir)?;
    for r in reports {
        write_json(
            &dir.join(format!("{}.json", r.trial)),
            &json!({ "config": config_value(cfg), "report": r }),
        )?;
    }
    let table = delay_table(reports);
    write(&dir.join("delays.txt"), &table)?;
    Ok(table)
}

/// Whether every report follows the FSM and meets the delay budget.
fn budget_failures(
    cfg: &RunConfig,
    fsm: &FsmDefinition,
    reports: &[SimulationReport],
) -> Vec<String> {
    let mut failures = Vec::new();
    for r in reports {
        if let Err(e) = validate_path(fsm, &r.transitions) {
            failures.push(format!("{}: {e}", r.trial));
        }
        for c in check_delay_budget(r, cfg.eval.epsilon)
            .iter()
            .filter(|c| !c.pass)
        {
            let what = match c.delay {
                Some(d) => format!("delay {d:+.3} s exceeds {} s", cfg.eval.epsilon),
                None => "not detected".into(),
            };
            failures.push(format!(
                "{}: {} -> {} {what}",
                r.trial, r.states[c.from], r.states[c.to]
            ));
        }
    }
    failures
}

pub fn simulate_all(
    cfg: &RunConfig,
) -> Result<(FsmDefinition, EncoderClassifier, Vec<SimulationReport>)> {
    let model = EncoderClassifier::load(&cfg.model_path())?;
    let fsm = load_fsm(cfg)?;
    let reports = simulation_trials(cfg)?
        .iter()
        .map(|(name, t)| simulate_deployment(&model, &fsm, name, t, &cfg.eval))
        .collect::<Result<Vec<_>>>()?;
    Ok((fsm, model, reports))
}

pub fn cmd_simulate(cfg: &RunConfig) -> std::result::Result<Vec<SimulationReport>, Failure> {
    let (fsm, _, reports) = simulate_all(cfg)?;
    let table = write_reports(cfg, &cfg.out.join("simulation"), &reports)?;
    print!("{table}");
    let failures = budget_failures(cfg, &fsm, &reports);
    write_json(
        &cfg.out.join("simulation").join("summary.json"),
        &json!({
            "config": config_value(cfg),
            "mean_abs_delay": suite_mean_abs_delay(&reports),
            "failures": failures,
        }),
    )?;
    if !failures.is_empty() {
        return Err(threshold(failures.join("; ")));
    }
    Ok(reports)
}

/// Returns the proposed-system and baseline reports, in trial order.
pub fn cmd_compare(cfg: &RunConfig) -> Result<(Vec<SimulationReport>, Vec<SimulationReport>)> {
    let (fsm, _, proposed) = simulate_all(cfg)?;
    // The baseline is the pretrained window classifier, not the upstream
    // after end-to-end fine-tuning.
    let upstream = load_network(&cfg.upstream_path())?;
    let baseline = simulation_trials(cfg)?
        .iter()
        .map(|(name, t)| run_baseline(&upstream, &fsm, name, t, &cfg.eval))
        .collect::<Result<Vec<_>>>()?;
    let p_table = write_reports(cfg, &cfg.out.join("compare").join("proposed"), &proposed)?;
    let b_table = write_reports(cfg, &cfg.out.join("compare").join("baseline"), &baseline)?;
    let p = suite_mean_abs_delay(&proposed);
    let b = suite_mean_abs_delay(&baseline);
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3} s"));
    let verdict = match (p, b) {
        (Some(p), Some(b)) if p < b => "the proposed system has the lower mean |delay|",
        (Some(p), Some(b)) if b < p => "the baseline has the lower mean |delay|",
        (Some(_), Some(_)) => "both systems have the same mean |delay|",
        (Some(_), None) => "the baseline matched no transitions",
        (None, _) => "the proposed system matched no transitions",
    };
    let spurious =
        |rs: &[SimulationReport]| rs.iter().map(|r| r.false_detections.len()).sum::<usize>();
    let summary = format!(
        "proposed system\n{p_table}\nbaseline\n{b_table}\nproposed mean |delay| {}, baseline mean |delay| {}: {verdict}\n\
         unmatched detections: proposed {}, baseline {}\n",
        fmt(p),
        fmt(b),
        spurious(&proposed),
        spurious(&baseline),
    );
    write(&cfg.out.join("compare").join("compare.txt"), &summary)?;
    write_json(
        &cfg.out.join("compare").join("summary.json"),
        &json!({ "config": config_value(cfg), "proposed_mean_abs_delay": p, "baseline_mean_abs_delay": b }),
    )?;
    print!("{summary}");
    Ok((proposed, baseline))
}

pub fn cmd_fsm_check(cfg: &RunConfig, path: Option<&Path>) -> Result<FsmDefinition> {
    let fsm = match path {
        Some(p) => FsmDefinition::load(p)?,
        None => load_fsm(cfg)?,
    };
    println!("states: {}", fsm.states().join(", "));
    println!("events: {}", fsm.events().join(", "));
    println!("initial: {}", fsm.states()[fsm.initial()]);
    for (x, e, y) in fsm.transitions() {
        println!(
            "  {} -[{}]-> {}",
            fsm.states()[x],
            fsm.events()[e],
            fsm.states()[y]
        );
    }
    for (x, name) in fsm.states().iter().enumerate() {
        let active: Vec<&str> = fsm
            .active_events(x)
            .map(|e| fsm.events()[e].as_str())
            .collect();
        println!("  active in {name}: {{{}}}", active.join(", "));
    }
    println!("classes: {}", fsm.class_names().join(", "));
    Ok(fsm)
}

pub fn cmd_export_incidents(cfg: &RunConfig) -> Result<usize> {
    let (fsm, _, reports) = simulate_all(cfg)?;
    let ds = incident_dataset(
        reports.iter().flat_map(|r| &r.incidents),
        fsm.classes(),
        &cfg.eval.windowing,
    )?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join("incidents.csv");
    ds.save(&path)?;
    println!("wrote {} incidents to {}", ds.len(), path.display());
    Ok(ds.len())
}
