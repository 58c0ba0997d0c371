//! Estimate a parameter map with a trained regressor and re-simulate from it.
//!
//! Usage: cargo run --release --example scat_param -- <weights>
//! (train weights first with the `train_regressor` example)

use scatsim::estimators::scat_param;
use scatsim::forward::{bmode, discretize_psf, render, simulate, write_pgm, DepthPsfBank};
use scatsim::neural::NetworkWeights;
use scatsim::phantoms::{make_inclusion_phantom, InclusionPhantomConfig};
use scatsim::{Grid2D, NoiseModel, Psf, ScattererModel, SimRng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).ok_or("usage: scat_param <weights>")?;
    let weights = NetworkWeights::load(&path)?;

    let fine = Grid2D::scatterer(256, 512, 40.0, 1540.0)?;
    let coarse = fine.coarsen_axial(4)?;
    let cfg = InclusionPhantomConfig {
        side: 5.0,
        inclusion_radius: 1.5,
        ..Default::default()
    };
    let phantom = make_inclusion_phantom(&cfg, &coarse)?;
    let model = ScattererModel::default();
    let bank = DepthPsfBank::single(discretize_psf(&Psf::new(6.0, 0.25, 0.03, 40.0, 1540.0)?, &fine)?);
    let acquired = simulate(&phantom.map, &model, &bank, &NoiseModel::new(0.05)?, &mut SimRng::new(1))?;

    let (pm, sc) = scat_param(&acquired.envelope, &weights, &model, &mut SimRng::new(2))?;
    let inside = pm.mu().iter().zip(&phantom.inclusion).filter(|(_, m)| **m).map(|(v, _)| *v);
    let outside = pm.mu().iter().zip(&phantom.background).filter(|(_, m)| **m).map(|(v, _)| *v);
    let mean = |it: &mut dyn Iterator<Item = f64>| {
        let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        s / n as f64
    };
    println!(
        "estimated μ: inclusion {:.3} (true {}), background {:.3} (true {})",
        mean(&mut inside.into_iter()),
        cfg.mu_inclusion,
        mean(&mut outside.into_iter()),
        cfg.mu_background
    );

    let (_, env) = render(&sc, &bank, &NoiseModel::none(), &mut SimRng::new(3))?;
    write_pgm(&bmode(&acquired.envelope, 50.0)?, "scat_param_input.pgm")?;
    write_pgm(&bmode(&env, 50.0)?, "scat_param_resimulated.pgm")?;
    write_pgm(&pm.mu().clone(), "scat_param_map.pgm")?;
    println!("wrote scat_param_input.pgm, scat_param_resimulated.pgm, scat_param_map.pgm");
    Ok(())
}
