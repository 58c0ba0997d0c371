//! Wiener deconvolution of a simulated RF image into a tissue reflectivity
//! function, and the normal-equation residual that certifies it.

use scatsim::estimators::{circular_convolve, normal_equation_residual, wiener_trf, WienerConfig};
use scatsim::forward::{discretize_psf, sample_scatterers};
use scatsim::{Grid2D, ParameterMap, Psf, RfImage, ScattererModel, SimRng};

fn main() -> scatsim::Result<()> {
    let grid = Grid2D::scatterer(128, 256, 40.0, 1540.0)?;
    let kernel = discretize_psf(&Psf::new(6.0, 0.05, 0.01, 40.0, 1540.0)?, &grid)?;
    let pm = ParameterMap::constant(grid, 0.5, 1)?;
    let sc = sample_scatterers(&pm, &ScattererModel::new(0.05, 0.05, 1)?, &grid, &mut SimRng::new(2))?;
    let rf = RfImage::new(grid, circular_convolve(sc.values(), &kernel))?;

    for eps in [1e-1, 1e-2, 1e-4] {
        let trf = wiener_trf(&rf, &kernel, &WienerConfig::with_nsr(eps))?;
        let err = (trf.values() - sc.values()).mapv(|v| v * v).sum().sqrt() / sc.values().mapv(|v| v * v).sum().sqrt();
        println!(
            "ε {eps:>7.0e}: relative error to scatterers {err:.3}, normal-equation residual {:.2e}",
            normal_equation_residual(&rf, &kernel, eps, &trf)
        );
    }
    Ok(())
}
