//! Rotation sweep (0–45°) on the inclusion phantom with all four methods.
//!
//! Usage: cargo run --release --example rotation_experiment -- <weights> [out-dir]

use scatsim::experiment::{run_experiment, write_outputs, ExperimentConfig, ExperimentKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let weights = args.next().ok_or("usage: rotation_experiment <weights> [out-dir]")?;
    let out = args.next().unwrap_or_else(|| "rotation-out".into());
    let cfg = ExperimentConfig {
        kind: ExperimentKind::Rotation,
        weights: Some(weights.into()),
        ..Default::default()
    };
    let result = run_experiment(&cfg)?;
    write_outputs(&result, &cfg, out.as_ref())?;
    println!("method      value  dI      dSNR    dCNR    KL");
    for r in &result.rows {
        let m = r.metrics;
        println!("{:<11} {:>5}  {:.4}  {:.4}  {:.4}  {:.4}", r.method.name(), r.value, m.delta_i, m.delta_snr, m.delta_cnr, m.kl_mean);
    }
    println!("{:.0}s; outputs in {out}", result.seconds);
    Ok(())
}
