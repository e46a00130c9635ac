//! Resolves a run configuration the way the CLI does: defaults, then a JSON
//! file, then dotted overrides.

use millwatch::config::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("millwatch-config-example");
    std::fs::create_dir_all(&dir)?;
    let file = dir.join("run.json");
    std::fs::write(
        &file,
        r#"{ "seed": 9, "training": { "end_to_end_epochs": 4 } }"#,
    )?;

    let cfg = RunConfig::resolve(
        Some(&file),
        &[
            "training.lr=0.0005".into(),
            "eval.windowing.stride=50".into(),
            "out=runs/tuned".into(),
        ],
    )?;
    println!(
        "seed {}  epochs {}  lr {}",
        cfg.seed, cfg.training.end_to_end_epochs, cfg.training.lr
    );
    println!(
        "decision stride {} samples, output {}",
        cfg.eval.windowing.stride(),
        cfg.out.display()
    );
    println!("model path {}", cfg.model_path().display());

    match RunConfig::resolve(None, &["training.learning_rate=0.1".into()]) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    println!("\necho: {}", cfg.echo());
    Ok(())
}
