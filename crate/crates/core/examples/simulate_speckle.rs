//! Simulate fully developed speckle from a homogeneous phantom and check the
//! envelope against a Rayleigh law. Writes `speckle.pgm`.

use scatsim::forward::{bmode, discretize_psf, simulate, write_pgm, DepthPsfBank};
use scatsim::metrics::{rayleigh_fit, rayleigh_snr};
use scatsim::model::check_rayleigh_density;
use scatsim::{Grid2D, NoiseModel, ParameterMap, Psf, ScattererModel, SimRng};

fn main() -> scatsim::Result<()> {
    let fine = Grid2D::scatterer(256, 512, 40.0, 1540.0)?;
    let model = ScattererModel::default();
    let density = check_rayleigh_density(&model, &fine)?;
    println!("scatterer density {:.0}/mm² (Rayleigh minimum met: {})", density.density, density.passes);

    let pm = ParameterMap::constant(fine.coarsen_axial(4)?, 0.5, 4)?;
    let psf = Psf::new(6.0, 0.2, 0.03, 40.0, 1540.0)?;
    let bank = DepthPsfBank::single(discretize_psf(&psf, &fine)?);
    let sim = simulate(&pm, &model, &bank, &NoiseModel::none(), &mut SimRng::new(1))?;

    let (hl, ha) = bank.entries()[0].kernel.half_extents();
    let env = sim.envelope.values();
    let interior: Vec<f64> = env
        .slice(ndarray::s![ha..fine.n_axial - ha, hl..fine.n_lateral - hl])
        .iter()
        .copied()
        .collect();
    let fit = rayleigh_fit(&interior)?;
    let mean = interior.iter().sum::<f64>() / interior.len() as f64;
    let sd = (interior.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / interior.len() as f64).sqrt();
    println!("{} interior pixels: KS {:.4}, SNR {:.3} (Rayleigh {:.3})", fit.n, fit.ks, mean / sd, rayleigh_snr());

    write_pgm(&bmode(&sim.envelope, 50.0)?, "speckle.pgm")?;
    println!("B-mode written to speckle.pgm");
    Ok(())
}
