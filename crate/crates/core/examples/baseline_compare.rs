//! Shows why the FSM guard matters. A single misclassified window makes the
//! unguarded per-window baseline report a state change; the coordinator
//! rejects it. With a run directory, also compares both systems on the
//! held-out simulation trials.
//!
//! ```text
//! cargo run --release --example baseline_compare -- runs/demo
//! ```

use std::path::PathBuf;

use millwatch::coordinator::{CoordinatorConfig, FsmDefinition};
use millwatch::evalsim::{
    baseline_transitions, replay_decisions, run_baseline, simulate_deployment,
    suite_mean_abs_delay, EvalConfig,
};
use millwatch::model::EncoderClassifier;
use millwatch::nn::io::load_network;
use millwatch::synthgen::{Manifest, TrialSplit};

fn main() -> millwatch::Result<()> {
    let fsm = FsmDefinition::milling();

    // NoInt throughout, except one window that looks like Entry.
    let stream: Vec<(usize, f64)> = (0..30)
        .map(|i| (usize::from(i == 12), i as f64 * 0.1))
        .collect();
    let base = baseline_transitions(&stream, 0, 1);
    let (coord, outcomes) = replay_decisions(&fsm, &CoordinatorConfig::default(), &stream)?;
    println!("flicker at t=1.2 s");
    for c in &base {
        println!(
            "  baseline reports {} -> {} at {:.1} s",
            fsm.states()[c.from],
            fsm.states()[c.to],
            c.time
        );
    }
    println!(
        "  coordinator: {} at t=1.2 s, state stays {}",
        outcomes[12].label(),
        coord.state_name()
    );

    let Some(dir) = std::env::args().nth(1).map(PathBuf::from) else {
        return Ok(());
    };
    let model = EncoderClassifier::load(&dir.join("model.swnn"))?;
    let upstream = load_network(&dir.join("upstream.swnn"))?;
    let manifest_path = dir.join("manifest.json");
    let trials =
        Manifest::load(&manifest_path)?.load_split(&manifest_path, TrialSplit::Simulation)?;
    let cfg = EvalConfig::default();
    let mut proposed = Vec::new();
    let mut baseline = Vec::new();
    for (name, trial) in &trials {
        proposed.push(simulate_deployment(&model, &fsm, name, trial, &cfg)?);
        baseline.push(run_baseline(&upstream, &fsm, name, trial, &cfg)?);
    }
    let show = |v: Option<f64>| v.map_or("n/a".into(), |v| format!("{v:.3} s"));
    let spurious = |rs: &[millwatch::evalsim::SimulationReport]| {
        rs.iter().map(|r| r.false_detections.len()).sum::<usize>()
    };
    println!("\n{} trials", trials.len());
    println!(
        "  proposed: mean |delay| {}, {} unmatched",
        show(suite_mean_abs_delay(&proposed)),
        spurious(&proposed)
    );
    println!(
        "  baseline: mean |delay| {}, {} unmatched",
        show(suite_mean_abs_delay(&baseline)),
        spurious(&baseline)
    );
    Ok(())
}
