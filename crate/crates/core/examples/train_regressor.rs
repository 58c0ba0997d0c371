//! Train the scatterer-map regressor on synthetic patches and save weights.
//!
//! Usage: cargo run --release --example train_regressor -- [iterations] [out.weights] [train.toml]

use scatsim::neural::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let out = args.next().unwrap_or_else(|| "regressor.weights".into());

    let base = match args.next() {
        Some(path) => toml::from_str(&std::fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    let cfg = TrainConfig { iterations, ..base };
    let t0 = std::time::Instant::now();
    let outcome = train(&cfg)?;
    println!(
        "{} iterations in {:.1}s: validation MAE {:.4} (constant predictor {:.4})",
        iterations,
        t0.elapsed().as_secs_f64(),
        outcome.val_mae,
        outcome.baseline_mae
    );
    outcome.weights.save(&out)?;
    println!("weights written to {out}");
    Ok(())
}
