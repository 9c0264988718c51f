//! Gradient checks of every layer, on inputs of at most 16 points, over 10
//! seeds. The input field is itself a parameter so input gradients are
//! checked too.

use std::sync::Arc;

use neurop::baselines::{ConvRoute, DiscreteConv, KnnGnn};
use neurop::discretization::{Discretization, Domain, DomainKind, Field};
use neurop::layers::{
    Activation, Attention, AttentionConfig, ConvOperator, EncDec, EncDecConfig, FnoBlock, FourierFeatures,
    IntegralTransform, KernelInterpolatedConv, KernelVariant, Mlp, NormStats, OperatorLayer, ParamVars, Pointwise,
    SpectralConv,
};
use neurop::losses::{h1_var, l2_var, poisson_residual_var, relative_l2_var, DerivativeMode};
use neurop::model::{Arch, Model, ModelConfig};
use neurop::tensor::{grad_check, InitScheme, ParamId, ParamStore, Tape, Tensor, Var};
use neurop::Result;

const SEEDS: u64 = 10;
const TOL: f64 = 1e-5;
const STEP: f64 = 1e-5;

fn torus1(n: usize) -> Arc<Discretization> {
    Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Torus1d), n).unwrap())
}

fn torus2(n: usize) -> Arc<Discretization> {
    Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Torus2d), n).unwrap())
}

/// Irregular weights on an irregular cloud, for layers that accept one.
fn cloud(n: usize, seed: u64) -> Arc<Discretization> {
    let pts: Vec<f64> = (0..n).map(|i| ((i as f64 + 0.5) / n as f64 + 0.013 * ((seed + i as u64) % 5) as f64) % 1.0).collect();
    let w: Vec<f64> = (0..n).map(|i| (1.0 + 0.3 * (i % 3) as f64) / n as f64).collect();
    Arc::new(Discretization::new(Domain::unit(DomainKind::Torus1d), pts, w).unwrap())
}

/// `sum(y * c) + 0.5 sum(y^2)` with fixed pseudo-random `c`.
fn probe<'t>(tape: &'t Tape, y: Var<'t>) -> Result<Var<'t>> {
    let n: usize = y.shape().iter().product();
    let c = Tensor::real(&y.shape(), (0..n).map(|i| ((i * 7919 % 13) as f64 - 6.0) / 6.0).collect())?;
    let lin = y.mul(tape.constant(c))?.sum();
    lin.add(y.square()?.sum().scale(0.5))
}

fn input(store: &mut ParamStore, bs: usize, n: usize, c: usize) -> ParamId {
    let name = format!("input{}", store.len());
    store.init(&name, &[bs, n, c], InitScheme::UniformFanIn { fan_in: 1 }).unwrap()
}

/// Runs `grad_check` on `layer` applied to the `input` parameter.
fn check(store: &ParamStore, x: ParamId, layer: &dyn OperatorLayer, inp: &Discretization, query: &Discretization) {
    check_except(store, x, layer, inp, query, &[]);
}

/// As `check`, skipping parameters whose exact gradient is identically zero.
fn check_except(
    store: &ParamStore,
    x: ParamId,
    layer: &dyn OperatorLayer,
    inp: &Discretization,
    query: &Discretization,
    skip: &[&str],
) {
    let mut report = grad_check(
        store,
        |tape, leaves| {
            let p = ParamVars::from_vars(leaves.to_vec());
            let y = layer.forward(&p, p.get(x), inp, query)?;
            probe(tape, y)
        },
        STEP,
        TOL,
    )
    .unwrap();
    report.entries.retain(|e| !skip.contains(&e.name.as_str()));
    assert!(report.passed(), "{report:#?}");
}

pub fn pointwise_mlp() {
    for seed in 0..SEEDS {
        let mut s = ParamStore::new(seed);
        let layer = Pointwise {
            net: Mlp::new(&mut s, "p", &[2, 5, 3], Activation::Gelu).unwrap(),
        };
        let x = input(&mut s, 2, 8, 2);
        let d = cloud(8, seed);
        check(&s, x, &layer, &d, &d);
    }
}

pub fn integral_transform_both_variants() {
    for seed in 0..SEEDS {
        let mut s = ParamStore::new(seed);
        let lin = IntegralTransform::new(&mut s, "k", 1, 2, 2, &[4], KernelVariant::Diagonal, Some(0.3), true).unwrap();
        let non = IntegralTransform::new(&mut s, "n", 1, 2, 3, &[4], KernelVariant::Nonlinear, None, false).unwrap();
        let x = input(&mut s, 1, 10, 2);
        let d = cloud(10, seed);
        let q = cloud(6, seed + 1);
        check(&s, x, &lin, &d, &q);
        check(&s, x, &non, &d, &q);
    }
}

pub fn conv_operators() {
    for seed in 0..SEEDS {
        let mut s = ParamStore::new(seed);
        let plain = ConvOperator::new(&mut s, "c", 1, 2, 2, &[4], 0.2, None).unwrap();
        let ff = FourierFeatures {
            modes: 2,
            periods: vec![1.0],
        };
        let feat = ConvOperator::new(&mut s, "f", 1, 2, 1, &[4], 0.3, Some(ff)).unwrap();
        let interp = KernelInterpolatedConv::new(&mut s, "i", 1, 1, 2, 2, 1.0 / 8.0).unwrap();
        let x = input(&mut s, 2, 16, 2);
        let d = torus1(16);
        check(&s, x, &plain, &d, &d);
        check(&s, x, &feat, &d, &d);
        check(&s, x, &interp, &d, &d);
    }
}

pub fn spectral_conv_1d_2d_and_fno_block() {
    for seed in 0..SEEDS {
        let mut s = ParamStore::new(seed);
        let sc1 = SpectralConv::new(&mut s, "s1", 1, 4, 2, 3).unwrap();
        let sc2 = SpectralConv::new(&mut s, "s2", 2, 2, 2, 2).unwrap();
        let block = FnoBlock::new(&mut s, "b", 2, 2, 2, &[3], Activation::Gelu).unwrap();
        let x1 = input(&mut s, 2, 16, 2);
        check(&s, x1, &sc1, &torus1(16), &torus1(16));
        // Fourier interpolation onto a finer query grid
        check(&s, x1, &sc1, &torus1(16), &torus1(32));
        let mut s2 = s.clone();
        let x2 = input(&mut s2, 1, 16, 2);
        check(&s2, x2, &sc2, &torus2(4), &torus2(4));
        check(&s2, x2, &block, &torus2(4), &torus2(4));
    }
}

pub fn attention_with_heads_and_projection() {
    for seed in 0..SEEDS {
        let mut s = ParamStore::new(seed);
        let att = Attention::new(
            &mut s,
            "a",
            AttentionConfig {
                channels_in: 3,
                heads: 2,
                d_att: 2,
                d_value: 2,
                temperature: Some(0.7),
                channels_out: Some(2),
            },
        )
        .unwrap();
        let x = input(&mut s, 2, 8, 3);
        let d = cloud(8, seed);
        // a key bias shifts every logit of a query equally, so softmax ignores it
        check_except(&s, x, &att, &d, &d, &["a.key.0.bias"]);
        let f = Field::new(d.clone(), (0..24).map(|i| ((i * 5 % 7) as f64 - 3.0) / 3.0).collect(), 3).unwrap();
        let before = att.apply(&s, &f, &d).unwrap();
        let bias = s.id_of("a.key.0.bias").unwrap();
        let v = s.get(bias).value.real_data().unwrap().iter().map(|b| b + 3.7).collect();
        let shape = s.get(bias).value.shape().to_vec();
        s.set(bias, Tensor::real(&shape, v).unwrap()).unwrap();
        let after = att.apply(&s, &f, &d).unwrap();
        for (a, b) in before.values().iter().zip(after.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

pub fn encoder_decoder_variants() {
    for seed in 0..SEEDS {
        let mut s = ParamStore::new(seed);
        let learned = EncDec::new(
            &mut s,
            "l",
            &EncDecConfig {
                channels_in: 2,
                channels_out: 2,
                encoder_hidden: Some(vec![4]),
                latent_dim: 3,
                latent_hidden: Some(vec![4]),
                decoder_hidden: Some(vec![4]),
                ..EncDecConfig::default()
            },
        )
        .unwrap();
        let fourier = EncDec::new(
            &mut s,
            "f",
            &EncDecConfig {
                channels_in: 2,
                channels_out: 2,
                encoder_hidden: None,
                fourier_modes: 3,
                latent_dim: 5,
                latent_hidden: None,
                decoder_hidden: None,
                ..EncDecConfig::default()
            },
        )
        .unwrap();
        let x = input(&mut s, 1, 12, 2);
        let d = cloud(12, seed);
        let q = cloud(5, seed + 3);
        check(&s, x, &learned, &d, &q);
        check(&s, x, &fourier, &d, &q);
    }
}

pub fn baselines() {
    for seed in 0..SEEDS {
        let mut s = ParamStore::new(seed);
        let direct = DiscreteConv::new(&mut s, "d", 1, 2, 2, 2).unwrap().with_route(ConvRoute::Direct);
        let fft = DiscreteConv::from_taps(&s, direct.taps).unwrap().with_route(ConvRoute::Fft);
        let conv2 = DiscreteConv::new(&mut s, "d2", 2, 1, 2, 1).unwrap().with_route(ConvRoute::Fft);
        let msg = Mlp::new(&mut s, "m", &[4, 3, 2], Activation::Gelu).unwrap();
        let knn = KnnGnn::new(3, Some(msg), 1, 2).unwrap();
        let x = input(&mut s, 2, 16, 2);
        let d = torus1(16);
        check(&s, x, &direct, &d, &d);
        check(&s, x, &fft, &d, &d);
        check(&s, x, &conv2, &torus2(4), &torus2(4));
        check(&s, x, &knn, &cloud(16, seed), &cloud(16, seed));
    }
}

pub fn normalization_apply_and_invert() {
    for seed in 0..SEEDS {
        let mut s = ParamStore::new(seed);
        let x = input(&mut s, 2, 8, 2);
        let stats = NormStats {
            mean: vec![0.3, -1.0],
            std: vec![2.0, 0.5],
        };
        let report = grad_check(
            &s,
            |tape, leaves| {
                let y = stats.apply(leaves[x.0])?;
                let z = stats.invert(y.square()?)?;
                probe(tape, z)
            },
            STEP,
            TOL,
        )
        .unwrap();
        assert!(report.passed(), "{report:#?}");
    }
}

pub fn losses_wrt_prediction() {
    for seed in 0..SEEDS {
        let mut s = ParamStore::new(seed);
        let pred = input(&mut s, 2, 16, 1);
        let d = torus2(4);
        let d1 = torus1(16);
        let target = Tensor::real(&[2, 16, 1], (0..32).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect()).unwrap();
        for which in 0..6 {
            let report = grad_check(
                &s,
                |tape, leaves| {
                    let p = leaves[pred.0];
                    let t = tape.constant(target.clone());
                    match which {
                        0 => l2_var(p, t, &d),
                        1 => relative_l2_var(p, t, &d),
                        2 => h1_var(p, t, &d, DerivativeMode::Fourier),
                        3 => h1_var(p, t, &d1, DerivativeMode::CentralDifference),
                        4 => poisson_residual_var(p, t, &d),
                        _ => h1_var(p, t, &d1, DerivativeMode::Fourier),
                    }
                },
                STEP,
                TOL,
            )
            .unwrap();
            assert!(report.passed(), "loss {which}: {report:#?}");
        }
    }
}

pub fn whole_models() {
    for arch in [Arch::Fno, Arch::ConvBaseline, Arch::Linear] {
        for seed in 0..3 {
            let cfg = ModelConfig {
                arch,
                width: 3,
                blocks: 1,
                modes: 2,
                half_width: 1,
                pos_freqs: 1,
                projection_hidden: 3,
                init_seed: seed,
                ..ModelConfig::default()
            };
            let model = Model::new(&cfg).unwrap();
            let mut s = model.store.clone();
            let x = input(&mut s, 1, 16, 1);
            let d = torus2(4);
            let report = grad_check(
                &s,
                |tape, leaves| {
                    let p = ParamVars::from_vars(leaves.to_vec());
                    probe(tape, model.forward(&p, leaves[x.0], &d)?)
                },
                STEP,
                TOL,
            )
            .unwrap();
            assert!(report.passed(), "{arch:?}: {report:#?}");
        }
    }
}
