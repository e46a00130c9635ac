//! Generates trials, pretrains the upstream window classifier, trains the
//! full encoder-classifier on labeled sequences, and reports held-out
//! metrics. Artifacts land in the output directory so the deployment
//! examples can pick them up.
//!
//! ```text
//! cargo run --release --example train_pipeline -- runs/demo          # a few minutes
//! cargo run --release --example train_pipeline -- runs/full full     # acceptance-sized
//! ```

use std::path::PathBuf;
use std::time::Instant;

use millwatch::coordinator::FsmDefinition;
use millwatch::evalsim::{metrics_table, precision_recall_f1, ConfusionMatrix};
use millwatch::model::{
    evaluate_sequences, network_hash, pretrain_upstream, train_end_to_end, Split, TrainingConfig,
};
use millwatch::nn::io::save_network;
use millwatch::synthgen::{
    extract_sequence_samples, extract_steady_samples, GenParams, Manifest, SequenceSampling,
    TrialSplit,
};

fn main() -> millwatch::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/demo".into()));
    let full = args.next().as_deref() == Some("full");

    let (trials, test, sim, per_class) = if full { (35, 6, 5, 16) } else { (12, 2, 2, 8) };
    let cfg = TrainingConfig {
        pretrain_epochs: if full { 3 } else { 2 },
        end_to_end_epochs: if full { 10 } else { 3 },
        seed: 1,
        ..TrainingConfig::default()
    };

    let sampling = SequenceSampling {
        per_class,
        ..SequenceSampling::default()
    };
    let manifest = Manifest::generate(
        &out,
        &GenParams::default(),
        1,
        trials,
        test,
        sim,
        serde_json::json!({}),
    )?;
    let manifest_path = out.join("manifest.json");
    let train = manifest.load_split(&manifest_path, TrialSplit::Train)?;
    let held_out = manifest.load_split(&manifest_path, TrialSplit::Test)?;
    println!(
        "{} training trials, {} test trials",
        train.len(),
        held_out.len()
    );

    let t0 = Instant::now();
    let steady = extract_steady_samples(&train, 400, 100, 10, 2)?;
    let (upstream, report) = pretrain_upstream(&steady, &cfg)?;
    if let Some(r) = report.last(Split::Validation) {
        println!(
            "pretrained on {} windows: validation accuracy {:.3}",
            steady.len(),
            r.accuracy
        );
    }
    save_network(&out.join("upstream.swnn"), &upstream)?;

    let seqs = extract_sequence_samples(&train, &sampling, 3)?;
    let (model, report) = train_end_to_end(&seqs, upstream.clone(), &cfg)?;
    if let Some(r) = report.last(Split::Validation) {
        println!(
            "trained on {} sequences: validation accuracy {:.3}",
            seqs.len(),
            r.accuracy
        );
    }
    model.save(&out.join("model.swnn"), r#"{"example":"train_pipeline"}"#)?;
    println!("training took {:.0} s", t0.elapsed().as_secs_f64());
    println!("upstream {}", &network_hash(&upstream)[..16]);
    println!("model    {}", &model.parameter_hash()[..16]);

    let test_seqs = extract_sequence_samples(&held_out, &sampling, 4)?;
    let (_, preds) = evaluate_sequences(&model, &test_seqs)?;
    let cm = ConfusionMatrix::from_pairs(
        FsmDefinition::milling().class_names(),
        &test_seqs.labels(),
        &preds,
    )?;
    print!("\n{}", metrics_table(&precision_recall_f1(&cm)));
    println!("\nartifacts in {}", out.display());
    Ok(())
}
