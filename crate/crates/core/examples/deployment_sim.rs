//! Replays held-out trials through the streaming front end, the trained
//! model, and the FSM coordinator, then scores transition delays.
//!
//! Expects a run directory with `manifest.json` and `model.swnn`, as written
//! by `millwatch gen`/`train` or the `train_pipeline` example.
//!
//! ```text
//! cargo run --release --example deployment_sim -- runs/demo
//! ```

use std::path::PathBuf;

use millwatch::coordinator::FsmDefinition;
use millwatch::evalsim::{check_delay_budget, delay_table, simulate_deployment, EvalConfig};
use millwatch::model::EncoderClassifier;
use millwatch::synthgen::{Manifest, TrialSplit};

fn main() -> millwatch::Result<()> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "runs/demo".into()),
    );
    let model = EncoderClassifier::load(&dir.join("model.swnn"))?;
    let manifest_path = dir.join("manifest.json");
    let trials =
        Manifest::load(&manifest_path)?.load_split(&manifest_path, TrialSplit::Simulation)?;
    let fsm = FsmDefinition::milling();
    let cfg = EvalConfig::default();

    let mut reports = Vec::new();
    for (name, trial) in &trials {
        let r = simulate_deployment(&model, &fsm, name, trial, &cfg)?;
        println!(
            "{name}: {} decisions, path {}",
            r.decisions.len(),
            r.state_path_names().join(" -> ")
        );
        println!(
            "  {} incidents, {} unmatched detections",
            r.incidents.len(),
            r.false_detections.len()
        );
        let failed = check_delay_budget(&r, cfg.epsilon)
            .iter()
            .filter(|c| !c.pass)
            .count();
        println!(
            "  {failed} transitions outside the {} s budget",
            cfg.epsilon
        );
        reports.push(r);
    }
    print!("\n{}", delay_table(&reports));
    Ok(())
}
