//! Randomized invariants across modules.

use std::f64::consts::PI;
use std::sync::Arc;

use neurop::baselines::{ConvRoute, DiscreteConv};
use neurop::data::{grf_sample, poisson_solve, GrfSpec};
use neurop::discretization::{refine, subsample, Discretization, Domain, DomainKind, Field};
use neurop::error::ContainerError;
use neurop::io::Container;
use neurop::layers::{
    Attention, AttentionConfig, EncDec, EncDecConfig, IntegralTransform, KernelVariant, OperatorLayer, SpectralConv,
};
use neurop::losses::{h1_loss, l2_loss, poisson_residual, relative_l2, DerivativeMode};
use neurop::tensor::{fft, ParamStore, Tensor, C64};
use proptest::prelude::*;
use proptest::test_runner::Config;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn torus1(n: usize) -> Arc<Discretization> {
    Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Torus1d), n).unwrap())
}

fn torus2(n: usize) -> Arc<Discretization> {
    Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Torus2d), n).unwrap())
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn pow2() -> impl Strategy<Value = usize> {
    (1u32..=10).prop_map(|k| 1usize << k)
}

proptest! {
    #![proptest_config(Config { cases: 48, failure_persistence: None, ..Config::default() })]

    #[test]
    fn riemann_weights_positive_and_sum_to_length(
        pts in prop::collection::vec(0.0f64..1.0, 1..60),
        periodic in any::<bool>(),
    ) {
        let kind = if periodic { DomainKind::Torus1d } else { DomainKind::Interval };
        let d = Discretization::riemann_1d(&Domain::unit(kind), sorted_unique(pts)).unwrap();
        prop_assert!(d.weights().iter().all(|&w| w > 0.0));
        prop_assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_weights_positive_and_sum_to_measure(n in 1usize..40, kind_ix in 0usize..4, len in 0.5f64..3.0) {
        let kind = [DomainKind::Interval, DomainKind::Torus1d, DomainKind::Square, DomainKind::Torus2d][kind_ix];
        let bounds = vec![(-0.25, len - 0.25); kind.dim()];
        let dom = Domain::new(kind, bounds).unwrap();
        let d = Discretization::uniform_grid(&dom, n).unwrap();
        prop_assert!(d.weights().iter().all(|&w| w > 0.0));
        prop_assert!((d.weights().iter().sum::<f64>() - dom.measure()).abs() < 1e-12 * dom.measure().max(1.0));
    }

    #[test]
    fn delaunay_weights_positive(pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..40)) {
        let flat: Vec<f64> = pts.iter().flat_map(|&(x, y)| [x, y]).collect();
        if let Ok(d) = Discretization::delaunay_2d(&Domain::unit(DomainKind::Square), flat) {
            prop_assert!(d.weights().iter().all(|&w| w >= 0.0));
            prop_assert!(d.weights().iter().sum::<f64>() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn splitting_a_point_keeps_the_integral(
        pts in prop::collection::vec(0.0f64..1.0, 2..40),
        pick in any::<prop::sample::Index>(),
    ) {
        let d = Discretization::riemann_1d(&Domain::unit(DomainKind::Torus1d), sorted_unique(pts)).unwrap();
        let f = |x: f64| (2.0 * PI * x).sin() + x * x;
        let i = pick.index(d.len());
        let base: f64 = d.points().iter().zip(d.weights()).map(|(x, w)| f(*x) * w).sum();
        let mut p = d.points().to_vec();
        let mut w = d.weights().to_vec();
        w[i] /= 2.0;
        p.push(p[i]);
        w.push(w[i]);
        let split = Arc::new(Discretization::new(d.domain().clone(), p, w).unwrap());
        let field = Field::scalar_fn(split, |x| f(x[0])).unwrap();
        prop_assert!((field.integrate()[0] - base).abs() < 1e-12);
    }

    #[test]
    fn fft_roundtrip_parseval_and_linearity(n in pow2(), seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = fft::rfft(&x, false).unwrap();
        let back = fft::irfft(&spec, n, false).unwrap();
        for (u, v) in x.iter().zip(&back) {
            prop_assert!((u - v).abs() < 1e-12);
        }
        let mut full: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
        fft::fft_in_place(&mut full, false, false).unwrap();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spectral: f64 = full.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        prop_assert!((energy - spectral).abs() < 1e-10 * energy.max(1.0));
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let lhs = fft::rfft(&mix, false).unwrap();
        let ry = fft::rfft(&y, false).unwrap();
        for ((l, p), q) in lhs.iter().zip(&spec).zip(&ry) {
            prop_assert!((l - (p * a + q * b)).norm() < 1e-12 * n as f64);
        }
    }

    #[test]
    fn solver_and_residual_are_dual(seed in any::<u64>(), n in prop::sample::select(vec![8usize, 16, 32])) {
        let spec = GrfSpec { seed, ..GrfSpec::default() };
        let f = grf_sample(&spec, &torus2(n)).unwrap();
        let u = poisson_solve(&f).unwrap();
        prop_assert!(poisson_residual(&u, &f).unwrap() < 1e-10);
        // homogeneity of degree two
        let s = 1.7;
        let scale = |g: &Field| Field::new(g.disc().clone(), g.values().iter().map(|v| v * s).collect(), 1).unwrap();
        let perturbed = Field::new(u.disc().clone(), u.values().iter().enumerate().map(|(i, v)| v + 1e-3 * (i % 3) as f64).collect(), 1).unwrap();
        let r1 = poisson_residual(&perturbed, &f).unwrap();
        let r2 = poisson_residual(&scale(&perturbed), &scale(&f)).unwrap();
        prop_assert!((r2 - s * s * r1).abs() < 1e-10 * r2.max(1.0));
    }

    #[test]
    fn subsampling_commutes_with_band_limitation(seed in any::<u64>(), n in prop::sample::select(vec![16usize, 32, 64])) {
        let spec = GrfSpec { seed, ..GrfSpec::default() };
        let sample = grf_sample(&spec, &torus1(n)).unwrap();
        let mut a = fft::rfft(sample.values(), false).unwrap();
        a.iter_mut().skip(n / 4).for_each(|z| *z = C64::new(0.0, 0.0));
        let limited = fft::irfft(&a, n, false).unwrap();
        let fine = Field::new(torus1(n), limited, 1).unwrap();
        let coarse = subsample(&fine, n / 2, 0).unwrap();
        let b = fft::rfft(coarse.values(), false).unwrap();
        for k in 0..n / 4 {
            let (fine_k, coarse_k) = (a[k] / n as f64, b[k] / (n / 2) as f64);
            prop_assert!((fine_k - coarse_k).norm() < 1e-10, "mode {}", k);
        }
    }

    #[test]
    fn losses_nonnegative_and_zero_on_equal(vals in prop::collection::vec(-2.0f64..2.0, 16), shift in 0.01f64..1.0) {
        let d = torus1(16);
        let a = Field::new(d.clone(), vals.clone(), 1).unwrap();
        let b = Field::new(d, vals.iter().enumerate().map(|(i, v)| v + shift * (i as f64 * 0.7).sin()).collect(), 1).unwrap();
        prop_assert_eq!(l2_loss(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(h1_loss(&a, &a, DerivativeMode::Fourier).unwrap(), 0.0);
        prop_assert!(l2_loss(&a, &b).unwrap() > 0.0);
        prop_assert!(h1_loss(&a, &b, DerivativeMode::CentralDifference).unwrap() > 0.0);
        prop_assert!(relative_l2(&b, &a).unwrap() >= 0.0);
    }

    #[test]
    fn container_roundtrip_and_corruption(
        vals in prop::collection::vec(-1e6f64..1e6, 1..50),
        flip in any::<prop::sample::Index>(),
    ) {
        let mut c = Container::new();
        c.push("r", Tensor::real(&[vals.len()], vals.clone()).unwrap()).unwrap();
        let z: Vec<C64> = vals.iter().map(|&v| C64::new(v, -v / 3.0)).collect();
        c.push("z", Tensor::complex(&[1, vals.len()], z).unwrap()).unwrap();
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes.clone());
        prop_assert_eq!(&back, &c);
        // corrupt one payload byte (payload sits between header and checksum)
        let payload = 16 * vals.len() + 8 * vals.len();
        let start = bytes.len() - 8 - payload;
        let mut bad = bytes.clone();
        bad[start + flip.index(payload)] ^= 0x40;
        let is_checksum = matches!(Container::from_bytes(&bad), Err(ContainerError::Checksum { .. }));
        prop_assert!(is_checksum);
    }
}

#[test]
fn l2_loss_is_resolution_consistent() {
    let err = |n: usize| {
        let d = torus2(n);
        let a = Field::scalar_fn(d.clone(), |x| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos() + 0.3).unwrap();
        let b = Field::scalar_fn(d, |_| 0.0).unwrap();
        l2_loss(&a, &b).unwrap()
    };
    assert!((err(64) - err(128)).abs() < 1e-4);
}

#[test]
fn parameter_count_is_independent_of_the_grid() {
    let mut store = ParamStore::new(1);
    let layers: Vec<Box<dyn OperatorLayer>> = vec![
        Box::new(SpectralConv::new(&mut store, "s", 1, 4, 1, 1).unwrap()),
        Box::new(IntegralTransform::new(&mut store, "i", 1, 1, 1, &[4], KernelVariant::Diagonal, None, true).unwrap()),
        Box::new(
            Attention::new(
                &mut store,
                "a",
                AttentionConfig {
                    channels_in: 1,
                    heads: 1,
                    d_att: 2,
                    d_value: 1,
                    temperature: None,
                    channels_out: None,
                },
            )
            .unwrap(),
        ),
        Box::new(
            EncDec::new(
                &mut store,
                "e",
                &EncDecConfig {
                    encoder_hidden: None,
                    decoder_hidden: None,
                    ..EncDecConfig::default()
                },
            )
            .unwrap(),
        ),
    ];
    let before = store.real_dof();
    for n in [16, 1024] {
        let d = torus1(n);
        let f = Field::scalar_fn(d.clone(), |x| (2.0 * PI * x[0]).cos()).unwrap();
        for (i, l) in layers.iter().enumerate() {
            // attention is quadratic in n; keep it on the small grid
            if i == 2 && n > 64 {
                continue;
            }
            let out = l.apply(&store, &f, &d).unwrap();
            assert_eq!(out.len(), n);
        }
        assert_eq!(store.real_dof(), before);
    }
}

#[test]
fn discrete_conv_receptive_field_is_2k_plus_1_points() {
    for k in [1, 2, 3] {
        let mut store = ParamStore::new(k as u64);
        let conv = DiscreteConv::new(&mut store, "c", 1, k, 1, 1).unwrap().with_route(ConvRoute::Direct);
        for n in [16, 32, 64] {
            let d = torus1(n);
            let base = Field::scalar_fn(d.clone(), |x| (2.0 * PI * x[0]).sin()).unwrap();
            let g0 = conv.apply(&store, &base, &d).unwrap();
            let j = n / 2;
            let influencing: Vec<usize> = (0..n)
                .filter(|&i| {
                    let mut v = base.values().to_vec();
                    v[i] += 1.0;
                    let g = conv.apply(&store, &Field::new(d.clone(), v, 1).unwrap(), &d).unwrap();
                    (g.values()[j] - g0.values()[j]).abs() > 1e-14
                })
                .collect();
            assert_eq!(influencing, ((j - k)..=(j + k)).collect::<Vec<_>>(), "k {k}, n {n}");
        }
    }
}

#[test]
fn refinement_chains_are_prefix_nested() {
    for (kind, n0) in [(DomainKind::Torus1d, 4), (DomainKind::Interval, 5), (DomainKind::Torus2d, 4)] {
        let chain = refine(&Discretization::uniform_grid(&Domain::unit(kind), n0).unwrap(), 3).unwrap();
        for k in 1..chain.len() {
            let coarse = chain.nested(k - 1).unwrap();
            let fine = chain.nested(k).unwrap();
            assert_eq!(&fine.points()[..coarse.points().len()], coarse.points());
        }
    }
}
