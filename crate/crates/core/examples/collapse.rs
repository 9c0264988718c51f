//! A fixed stencil shrinks to a pointwise map as the grid refines; a
//! convolution defined by a kernel function keeps its window.

use neurop::evaluation::suite::collapse_suite;

fn main() -> neurop::Result<()> {
    let report = collapse_suite(0.1)?;
    println!("{:>6} {:>22} {:>20}", "n", "stencil vs pointwise", "operator vs window");
    for r in &report.rows {
        println!("{:>6} {:>22.3e} {:>20.3e}", r.n, r.discrete_to_pointwise, r.operator_to_window);
    }
    println!("the two limits differ by {:.3}", report.separation);
    Ok(())
}
