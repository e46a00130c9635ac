//! Generates a labeled milling trial, writes it as CSV, and draws the steady
//! windows and labeled sequences used for the two training stages.
//!
//! ```text
//! cargo run --example synthetic_trials -- 12
//! ```

use millwatch::synthgen::*;

fn main() -> millwatch::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let params = GenParams::default().with_seed(seed);
    let trial = generate_trial(&params)?;

    println!("{} samples at {} Hz", trial.len(), trial.fs);
    for (k, &t) in trial.transitions.iter().enumerate() {
        println!(
            "  {:>5} -> {:<5} at sample {t} ({:.2} s)",
            STATE_NAMES[k],
            STATE_NAMES[k + 1],
            trial.transition_time(k)
        );
    }

    let path = std::env::temp_dir().join(format!("trial_{seed}.csv"));
    trial.to_recording().save(&path)?;
    println!("wrote {}", path.display());

    let trials = vec![(format!("trial_{seed}"), trial)];
    let steady = extract_steady_samples(&trials, 400, 100, 10, seed)?;
    let seqs = extract_sequence_samples(&trials, &SequenceSampling::default(), seed)?;
    println!("steady windows per state   {:?}", steady.class_histogram());
    println!("sequences per class        {:?}", seqs.class_histogram());
    println!("classes                    {CLASS_NAMES:?}");
    Ok(())
}
