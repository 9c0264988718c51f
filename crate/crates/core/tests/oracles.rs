//! Layer and quadrature outputs against independent reference computations.

mod support;

use support::oracles;

#[test]
fn delaunay_corners_and_weight_sums() {
    println!("{}", oracles::quadrature_correctness());
}

#[test]
fn integration_orders_and_monte_carlo_rate() {
    println!("{}", oracles::integration_convergence());
}

#[test]
fn spectral_conv_matches_direct_convolution() {
    println!("{}", oracles::spectral_equivalence());
}

#[test]
fn attention_reference_and_weight_splitting() {
    println!("{}", oracles::attention_reduction());
}

#[test]
fn drift_sequences_of_operator_layers() {
    println!("{}", oracles::discretization_convergence());
}

#[test]
fn discrete_conv_collapses_to_pointwise() {
    println!("{}", oracles::receptive_field_collapse());
}
