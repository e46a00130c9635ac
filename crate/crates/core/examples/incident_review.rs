//! Collects the decisions the coordinator rejected during a replay, exports
//! them as a sequence dataset, marks them reviewed with corrected labels,
//! and writes a file that `paths.extra_sequences` can feed back into
//! training.
//!
//! ```text
//! cargo run --release --example incident_review -- runs/demo
//! ```

use std::path::PathBuf;

use millwatch::coordinator::{incident_dataset, FsmDefinition};
use millwatch::dataset::Dataset;
use millwatch::evalsim::{simulate_deployment, EvalConfig};
use millwatch::model::EncoderClassifier;
use millwatch::synthgen::{sequence_label, Manifest, TrialSplit};

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

    let mut reviewed: Option<Dataset> = None;
    for (name, trial) in &trials {
        let report = simulate_deployment(&model, &fsm, name, trial, &cfg)?;
        let mut ds = incident_dataset(report.incidents.iter(), fsm.classes(), &cfg.windowing)?;
        for (s, inc) in ds.samples.iter_mut().zip(&report.incidents) {
            // A reviewer would relabel by hand; the generator's ground truth
            // stands in for that here.
            let truth = sequence_label(trial, inc.end_index as usize, cfg.windowing.w);
            println!(
                "{name} t={:>6.2} s  proposed {:<14} truth {:<14} {}",
                inc.end_time,
                fsm.class_name(inc.proposed_class).unwrap_or("?"),
                fsm.class_name(truth).unwrap_or("?"),
                inc.reason.as_str()
            );
            s.label = truth;
            s.reviewed = true;
        }
        match &mut reviewed {
            Some(all) => ds.samples.into_iter().try_for_each(|s| all.push(s))?,
            None => reviewed = Some(ds),
        }
    }
    let Some(ds) = reviewed else {
        println!("no simulation trials");
        return Ok(());
    };
    let path = dir.join("reviewed_incidents.csv");
    ds.save(&path)?;
    println!("\n{} reviewed records -> {}", ds.len(), path.display());
    println!(
        "retrain with: millwatch train --out {} --set 'paths.extra_sequences=[\"{}\"]'",
        dir.display(),
        path.display()
    );
    Ok(())
}
