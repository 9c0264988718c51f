//! Discretization drift of every layer family along dyadic refinements, and
//! the kNN baseline on density-skewed clouds.

use neurop::evaluation::drift_csv;
use neurop::evaluation::suite::{knn_vs_gno, layer_drift_suite};

fn main() -> neurop::Result<()> {
    for (name, report) in layer_drift_suite(0)? {
        println!("{name}");
        print!("{}", drift_csv(&report));
    }
    let (knn, gno) = knn_vs_gno(0)?;
    println!("skewed clouds, last-level drift: knn {:.2e}, gno {:.2e}", knn.last(), gno.last());
    Ok(())
}
