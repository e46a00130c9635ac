//! Feeds a signal to the sliding-window partitioner in irregular chunks, as
//! a live acquisition loop would, and shows that the emissions match a
//! single batch pass.

use millwatch::stream::{
    denoise, window_count, FilterKind, FilterSpec, Partitioner, WindowingConfig,
};
use millwatch::synthgen::{generate_trial, GenParams};

fn main() -> millwatch::Result<()> {
    let trial = generate_trial(&GenParams::default().with_seed(1))?;
    let cfg = WindowingConfig::deployment();
    println!(
        "w {} overlap {} n {} -> buffer {} samples, a decision every {} samples ({} s)",
        cfg.w,
        cfg.overlap,
        cfg.n,
        cfg.span(),
        cfg.stride(),
        cfg.stride() as f64 / cfg.fs
    );

    let smooth = denoise(
        &trial.samples,
        FilterSpec {
            kind: FilterKind::Median,
            width: 5,
        },
    )?;

    let mut live = Partitioner::new(cfg.clone())?;
    let mut ends = Vec::new();
    for chunk in smooth.chunks(173) {
        ends.extend(live.push_samples(chunk).into_iter().map(|s| s.end_index));
    }
    let batch: Vec<u64> = Partitioner::new(cfg.clone())?
        .push_samples(&smooth)
        .iter()
        .map(|s| s.end_index)
        .collect();

    println!(
        "{} emissions (expected {})",
        ends.len(),
        window_count(smooth.len() as u64, &cfg)
    );
    println!(
        "first ends at sample {}, last at {}",
        ends[0],
        ends[ends.len() - 1]
    );
    println!("chunked == batch: {}", ends == batch);
    Ok(())
}
