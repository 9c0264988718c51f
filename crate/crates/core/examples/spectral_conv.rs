//! FFT conventions and a spectral convolution evaluated on two grids with
//! the same weights.

use std::f64::consts::PI;
use std::sync::Arc;

use neurop::discretization::{Discretization, Domain, DomainKind, Field};
use neurop::layers::{OperatorLayer, SpectralConv};
use neurop::tensor::fft::{fourier_interpolate, irfft, rfft};
use neurop::tensor::ParamStore;

fn main() -> neurop::Result<()> {
    let x: Vec<f64> = (0..8).map(|j| (2.0 * PI * j as f64 / 8.0).cos()).collect();
    let half = rfft(&x, false)?;
    println!("rfft of cos on 8 points, mode 1 = {:.3}", half[1]);
    let back = irfft(&half, 8, false)?;
    println!("roundtrip error {:.1e}", x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    println!("interpolated to 16: {:.4?}", fourier_interpolate(&x, 16, false)?);

    let mut store = ParamStore::new(1);
    let layer = SpectralConv::new(&mut store, "spec", 1, 6, 1, 1)?;
    let torus = Domain::unit(DomainKind::Torus1d);
    let input = |x: &[f64]| (2.0 * PI * x[0]).sin() + 0.5 * (6.0 * PI * x[0]).cos();
    let coarse = Arc::new(Discretization::uniform_grid(&torus, 32)?);
    let fine = Arc::new(Discretization::uniform_grid(&torus, 64)?);
    let gc = layer.apply(&store, &Field::scalar_fn(coarse.clone(), input)?, &coarse)?;
    let gf = layer.apply(&store, &Field::scalar_fn(fine.clone(), input)?, &fine)?;
    // every other fine point is a coarse point
    let gap = gc.values().iter().zip(gf.values().iter().step_by(2)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("same layer on 32 and 64 points, max gap at shared points {gap:.1e}");

    // or evaluate the coarse input straight onto the fine grid
    let up = layer.apply(&store, &Field::scalar_fn(coarse, input)?, &fine)?;
    let gap = up.values().iter().zip(gf.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("32 -> 64 super-resolution gap {gap:.1e}");
    Ok(())
}
