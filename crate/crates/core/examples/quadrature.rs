//! Quadrature weights for the three point-set types and their convergence
//! on a smooth integrand.

use std::f64::consts::PI;
use std::sync::Arc;

use neurop::discretization::{delaunay_weights_2d, Discretization, Domain, DomainKind, Field};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> neurop::Result<()> {
    // corners of the unit square
    let corners = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    println!("unit-square corner weights: {:?}", delaunay_weights_2d(&corners)?);

    let interval = Domain::unit(DomainKind::Interval);
    let f = |x: &[f64]| (PI * x[0]).sin();
    let exact = 2.0 / PI;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("{:>6} {:>12} {:>12}", "n", "riemann", "monte-carlo");
    for n in [16, 64, 256, 1024] {
        let mut xs: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let mc = Discretization::monte_carlo(&interval, xs.clone(), |_| 1.0)?;
        xs.sort_by(f64::total_cmp);
        let rm = Discretization::riemann_1d(&interval, xs)?;
        let err = |d: Discretization| -> neurop::Result<f64> {
            Ok((Field::scalar_fn(Arc::new(d), f)?.integrate()[0] - exact).abs())
        };
        println!("{n:>6} {:>12.3e} {:>12.3e}", err(rm)?, err(mc)?);
    }
    Ok(())
}
