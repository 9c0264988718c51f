//! Reverse-mode gradients through a spectral convolution, checked against
//! central finite differences.

use std::f64::consts::PI;
use std::sync::Arc;

use neurop::discretization::{Discretization, Domain, DomainKind, Field};
use neurop::layers::{field_batch, OperatorLayer, ParamVars, SpectralConv};
use neurop::tensor::{grad_check, ParamStore};

fn main() -> neurop::Result<()> {
    let mut store = ParamStore::new(3);
    let layer = SpectralConv::new(&mut store, "spec", 1, 4, 2, 2)?;
    let disc = Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Torus1d), 16)?);
    let input = Field::from_fn(disc.clone(), 2, |x| vec![(2.0 * PI * x[0]).sin(), (4.0 * PI * x[0]).cos()])?;
    let x = field_batch(&[input])?;

    let report = grad_check(
        &store,
        |tape, leaves| {
            let p = ParamVars::from_vars(leaves.to_vec());
            let y = layer.forward(&p, tape.constant(x.clone()), &disc, &disc)?;
            Ok(y.square()?.sum())
        },
        1e-5,
        1e-5,
    )?;
    for e in &report.entries {
        println!("{:<14} max relative deviation {:.2e} {}", e.name, e.max_rel_dev, if e.passed { "ok" } else { "FAIL" });
    }
    Ok(())
}
