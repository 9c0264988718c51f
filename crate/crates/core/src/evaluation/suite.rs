//! Ready-made measurement setups shared by the CLI, the examples and the
//! tests: drift sequences for every operator layer, the kNN/GNO contrast on
//! density-skewed clouds, and the receptive-field collapse pair.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{discretization_convergence_test, receptive_field_collapse_demo, CollapseReport, DriftReport};
use crate::baselines::{DiscreteConv, KnnGnn};
use crate::discretization::{refine, riemann_weights_1d, Discretization, Domain, DomainKind, Field, RefinementChain};
use crate::error::Result;
use crate::layers::{
    Activation, Attention, AttentionConfig, ConvOperator, EncDec, EncDecConfig, IntegralTransform,
    KernelVariant, Mlp, OperatorLayer, SpectralConv,
};
use crate::tensor::{ParamStore, Tensor};

/// Dyadic torus chain `n0, 2 n0, .., 2^levels n0`.
pub fn torus_chain(n0: usize, levels: usize) -> Result<RefinementChain> {
    refine(&Discretization::uniform_grid(&Domain::unit(DomainKind::Torus1d), n0)?, levels)
}

/// Dyadic interval chain `n0 + 1, 2 n0 + 1, ..`.
pub fn interval_chain(n0: usize, levels: usize) -> Result<RefinementChain> {
    refine(&Discretization::uniform_grid(&Domain::unit(DomainKind::Interval), n0 + 1)?, levels)
}

/// Band-limited test inputs on the unit interval or circle.
pub fn band_limited_inputs(d: &Arc<Discretization>) -> Result<Vec<Field>> {
    Ok(vec![
        Field::scalar_fn(d.clone(), |x| (2.0 * PI * x[0]).sin() + 0.5 * (4.0 * PI * x[0]).cos())?,
        Field::scalar_fn(d.clone(), |x| 0.7 * (2.0 * PI * x[0]).cos() - 0.3 * (6.0 * PI * x[0]).sin())?,
    ])
}

/// `[f, cos 2 pi x, sin 2 pi x]`: attention sees only values, so position
/// rides along as periodic channels.
fn with_position(fields: Vec<Field>) -> Result<Vec<Field>> {
    fields
        .into_iter()
        .map(|f| {
            let values = f
                .values()
                .iter()
                .zip(f.disc().points())
                .flat_map(|(v, x)| [*v, (2.0 * PI * x).cos(), (2.0 * PI * x).sin()])
                .collect();
            Field::new(f.disc().clone(), values, 3)
        })
        .collect()
}

/// Drift of a freshly initialized layer of each kind: integral transform
/// (interval, trapezoid weights), spectral convolution, attention and
/// encoder-decoder (torus), each over four dyadic refinements of 16.
pub fn layer_drift_suite(seed: u64) -> Result<Vec<(&'static str, DriftReport)>> {
    let mut store = ParamStore::new(seed);
    let it = IntegralTransform::new(&mut store, "integral", 1, 1, 1, &[16], KernelVariant::Diagonal, None, true)?;
    let sc = SpectralConv::new(&mut store, "spectral", 1, 8, 1, 1)?;
    let att = Attention::new(
        &mut store,
        "attention",
        AttentionConfig {
            channels_in: 3,
            heads: 2,
            d_att: 4,
            d_value: 2,
            temperature: None,
            channels_out: Some(1),
        },
    )?;
    let ed = EncDec::new(
        &mut store,
        "encdec",
        &EncDecConfig {
            encoder_hidden: None,
            decoder_hidden: None,
            ..EncDecConfig::default()
        },
    )?;
    let interval = interval_chain(16, 4)?;
    let torus = torus_chain(16, 4)?;
    let store = &store;
    fn apply<'a>(store: &'a ParamStore, layer: &'a dyn OperatorLayer) -> impl Fn(&Field) -> Result<Field> + 'a {
        move |f| layer.apply(store, f, f.disc())
    }
    Ok(vec![
        (
            "integral_transform",
            discretization_convergence_test(apply(store, &it), band_limited_inputs, &interval)?,
        ),
        (
            "spectral_conv",
            discretization_convergence_test(apply(store, &sc), band_limited_inputs, &torus)?,
        ),
        (
            "attention",
            discretization_convergence_test(apply(store, &att), |d| with_position(band_limited_inputs(d)?), &torus)?,
        ),
        ("encdec", discretization_convergence_test(apply(store, &ed), band_limited_inputs, &torus)?),
    ])
}

/// Prefix-nested clouds on the unit interval `n0, 2 n0, ..` whose added points alternate
/// between densities `1 + a sin(2 pi x)` and `1 - a sin(2 pi x)`, so the
/// empirical density oscillates along the chain. Weights are half-gap
/// (trapezoid) weights of the sorted points.
pub fn skewed_chain(n0: usize, levels: usize, a: f64, seed: u64) -> Result<RefinementChain> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |sign: f64, count: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let x: f64 = rng.gen();
            if rng.gen::<f64>() * (1.0 + a) <= 1.0 + sign * a * (2.0 * PI * x).sin() {
                out.push(x);
            }
        }
        out
    };
    let domain = Domain::unit(DomainKind::Interval);
    let mut points = draw(0.0, n0);
    let mut levels_out = vec![riemann_cloud(&domain, points.clone())?];
    for k in 0..levels {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let more = draw(sign, points.len());
        points.extend(more);
        levels_out.push(riemann_cloud(&domain, points.clone())?);
    }
    RefinementChain::from_prefix_levels(levels_out)
}

/// Half-gap weights for unsorted 1-D points.
pub fn riemann_cloud(domain: &Domain, points: Vec<f64>) -> Result<Discretization> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| points[i].total_cmp(&points[j]));
    let sorted: Vec<f64> = order.iter().map(|&i| points[i]).collect();
    let ws = riemann_weights_1d(&sorted, domain)?;
    let mut w = vec![0.0; points.len()];
    for (rank, &i) in order.iter().enumerate() {
        w[i] = ws[rank];
    }
    Discretization::new(domain.clone(), points, w)
}

/// Drift of a mean-aggregating kNN layer (`k = n / 2`) and of a GNO with a
/// smooth kernel on the same skewed chain `16 .. 256`.
pub fn knn_vs_gno(seed: u64) -> Result<(DriftReport, DriftReport)> {
    let chain = skewed_chain(16, 4, 0.9, seed)?;
    let inputs = |d: &Arc<Discretization>| Ok(vec![Field::scalar_fn(d.clone(), |x| (2.0 * PI * x[0]).sin())?]);
    let knn = discretization_convergence_test(
        |f| KnnGnn::new(f.len() / 2, None, 1, 1)?.apply(&ParamStore::new(0), f, f.disc()),
        inputs,
        &chain,
    )?;
    let mut store = ParamStore::new(seed);
    let gno = IntegralTransform::new(&mut store, "gno", 1, 1, 1, &[8], KernelVariant::Diagonal, None, false)?;
    let gno = discretization_convergence_test(|f| gno.apply(&store, f, f.disc()), inputs, &chain)?;
    Ok((knn, gno))
}

/// Normalized taps `[1, 2, 4, 2, 1] / 10` against a box kernel of radius
/// `r` on the torus chain `16 .. 1024`, input `sin(2 pi x)`.
pub fn collapse_suite(r: f64) -> Result<CollapseReport> {
    let mut store = ParamStore::new(0);
    let conv = DiscreteConv::new(&mut store, "conv", 1, 2, 1, 1)?;
    store.set(
        conv.taps,
        Tensor::real(&[5, 1, 1], [1.0, 2.0, 4.0, 2.0, 1.0].iter().map(|t| t / 10.0).collect())?,
    )?;
    let kernel = Mlp::new(&mut store, "box", &[1, 1], Activation::Identity)?;
    let (w, b) = kernel.last_layer();
    store.set(w, Tensor::real(&[1, 1], vec![0.0])?)?;
    store.set(b, Tensor::real(&[1], vec![1.0 / (2.0 * r)])?)?;
    let box_op = ConvOperator::from_parts(kernel, r, None, 1, 1, 1)?;
    let s = 2.0 * PI * r;
    receptive_field_collapse_demo(
        &store,
        &conv,
        &box_op,
        |x| (2.0 * PI * x[0]).sin(),
        |x| (2.0 * PI * x[0]).sin() * s.sin() / s,
        &torus_chain(16, 6)?,
    )
}
