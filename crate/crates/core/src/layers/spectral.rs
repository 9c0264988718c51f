use serde::{Deserialize, Serialize};

use super::{check_batch, grid_view, require_same_points, Activation, Mlp, OperatorLayer, ParamVars};
use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::tensor::{InitScheme, ParamId, ParamStore, Var};

/// FFT-based convolution with a fixed number of learned complex modes.
///
/// Weights are `(m, c_in, c_out)` in 1-D. In 2-D they are
/// `(2m - 1, m, c_in, c_out)`: the first axis holds frequencies
/// `-(m-1)..=(m-1)` in ascending order, the second (real-FFT) axis holds
/// `0..m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConv {
    pub weights: ParamId,
    pub modes: usize,
    dim: usize,
    channels_in: usize,
    channels_out: usize,
}

impl SpectralConv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        modes: usize,
        channels_in: usize,
        channels_out: usize,
    ) -> Result<Self> {
        if !(1..=2).contains(&dim) || modes == 0 {
            return Err(Error::InvalidArgument(format!(
                "spectral convolution needs dim 1 or 2 and modes >= 1 (dim {dim}, modes {modes})"
            )));
        }
        let std = 1.0 / ((channels_in * channels_out) as f64).sqrt();
        let weights = store.init(
            &format!("{name}.weights"),
            &Self::weight_shape(dim, modes, channels_in, channels_out),
            InitScheme::ComplexGaussian { std },
        )?;
        Ok(SpectralConv {
            weights,
            modes,
            dim,
            channels_in,
            channels_out,
        })
    }

    pub fn weight_shape(dim: usize, modes: usize, ci: usize, co: usize) -> Vec<usize> {
        if dim == 1 {
            vec![modes, ci, co]
        } else {
            vec![2 * modes - 1, modes, ci, co]
        }
    }

    /// Wrap an existing complex weight parameter.
    pub fn from_weights(store: &ParamStore, weights: ParamId) -> Result<Self> {
        let s = store.get(weights).value.shape().to_vec();
        let (dim, modes) = match s.len() {
            3 => (1, s[0]),
            4 if s[0] == 2 * s[1] - 1 => (2, s[1]),
            _ => return Err(Error::Shape(format!("spectral weights of shape {s:?}"))),
        };
        Ok(SpectralConv {
            weights,
            modes,
            dim,
            channels_in: s[dim],
            channels_out: s[dim + 1],
        })
    }

    pub fn channels_out(&self) -> usize {
        self.channels_out
    }

    fn effective_modes(&self, n_in: &[usize], n_out: &[usize]) -> usize {
        let cap = n_in
            .iter()
            .chain(n_out)
            .map(|&n| n.div_ceil(2))
            .min()
            .unwrap_or(self.modes);
        if cap < self.modes {
            log::warn!(
                "grid {n_in:?} -> {n_out:?} resolves only {cap} of {} modes; truncating",
                self.modes
            );
        }
        cap.min(self.modes)
    }
}

fn freq_rows(m: usize, n: usize) -> Vec<usize> {
    (-(m as isize - 1)..m as isize)
        .map(|f| f.rem_euclid(n as isize) as usize)
        .collect()
}

impl OperatorLayer for SpectralConv {
    fn forward<'t>(
        &self,
        p: &ParamVars<'t>,
        x: Var<'t>,
        input: &Discretization,
        query: &Discretization,
    ) -> Result<Var<'t>> {
        check_batch(x, input.len(), Some(self.channels_in), "spectral convolution")?;
        let n_in = input.require_torus_grid()?.to_vec();
        let n_out = query.require_torus_grid()?.to_vec();
        if n_in.len() != self.dim || n_out.len() != self.dim || input.domain() != query.domain() {
            return Err(Error::Shape(format!(
                "spectral convolution in {} dimensions maps {n_in:?} to {n_out:?} on one domain",
                self.dim
            )));
        }
        let bs = x.shape()[0];
        let me = self.effective_modes(&n_in, &n_out);
        let (ci, co) = (self.channels_in, self.channels_out);
        let mut w = p.get(self.weights);
        let first: Vec<usize> = (0..me).collect();
        let out = if self.dim == 1 {
            if me < self.modes {
                w = w.slice(0, 0, me)?;
            }
            let h_out = n_out[0] / 2 + 1;
            x.rfft(1)?
                .slice(1, 0, me)?
                .mode_mix(w)?
                .scatter_add(1, &first, h_out)?
                .irfft(1, n_out[0])?
        } else {
            if me < self.modes {
                let rows: Vec<usize> = (self.modes - me..self.modes + me - 1).collect();
                w = w.gather(0, &rows)?.slice(1, 0, me)?;
            }
            let nm = (2 * me - 1) * me;
            let spec = grid_view(x, &n_in)?
                .rfft(2)?
                .fft(1, false)?
                .gather(1, &freq_rows(me, n_in[0]))?
                .slice(2, 0, me)?
                .reshape(&[bs, nm, ci])?;
            let mixed = spec
                .mode_mix(w.reshape(&[nm, ci, co])?)?
                .reshape(&[bs, 2 * me - 1, me, co])?;
            mixed
                .scatter_add(2, &first, n_out[1] / 2 + 1)?
                .scatter_add(1, &freq_rows(me, n_out[0]), n_out[0])?
                .fft(1, true)?
                .irfft(2, n_out[1])?
                .reshape(&[bs, query.len(), co])?
        };
        let ratio = query.len() as f64 / input.len() as f64;
        Ok(if ratio == 1.0 { out } else { out.scale(ratio) })
    }
}

/// `mlp(act(spectral(f) + skip(f)))`, channel count preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnoBlock {
    pub spectral: SpectralConv,
    pub skip: Mlp,
    pub mlp: Mlp,
    pub activation: Activation,
}

impl FnoBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        modes: usize,
        channels: usize,
        mlp_hidden: &[usize],
        activation: Activation,
    ) -> Result<Self> {
        let spectral = SpectralConv::new(store, &format!("{name}.spectral"), dim, modes, channels, channels)?;
        let skip = Mlp::new(store, &format!("{name}.skip"), &[channels, channels], Activation::Identity)?;
        let mut widths = vec![channels];
        widths.extend_from_slice(mlp_hidden);
        widths.push(channels);
        let mlp = Mlp::new(store, &format!("{name}.mlp"), &widths, Activation::Gelu)?;
        Ok(FnoBlock {
            spectral,
            skip,
            mlp,
            activation,
        })
    }
}

impl OperatorLayer for FnoBlock {
    fn forward<'t>(
        &self,
        p: &ParamVars<'t>,
        x: Var<'t>,
        input: &Discretization,
        query: &Discretization,
    ) -> Result<Var<'t>> {
        require_same_points(input, query, "FNO block")?;
        let s = self.spectral.forward(p, x, input, query)?;
        let h = s.add(self.skip.forward(p, x)?)?;
        self.mlp.forward(p, self.activation.apply(h)?)
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;
    use crate::discretization::{Domain, DomainKind, Field};
    use crate::tensor::{Tensor, C64};

    fn identity_weights(store: &mut ParamStore, conv: &SpectralConv, only_zero: bool) {
        let shape = store.get(conv.weights).value.shape().to_vec();
        let n: usize = shape.iter().product();
        let mut v = vec![C64::new(0.0, 0.0); n];
        if conv.dim == 1 {
            let top = if only_zero { 1 } else { conv.modes };
            v.iter_mut().take(top).for_each(|z| *z = C64::new(1.0, 0.0));
        } else {
            let m = conv.modes;
            for r in 0..2 * m - 1 {
                for c in 0..m {
                    let zero = r == m - 1 && c == 0;
                    if zero || !only_zero {
                        v[r * m + c] = C64::new(1.0, 0.0);
                    }
                }
            }
        }
        store.set(conv.weights, Tensor::complex(&shape, v).unwrap()).unwrap();
    }

    #[test]
    fn identity_on_band_limited_2d() {
        let mut store = ParamStore::new(0);
        let conv = SpectralConv::new(&mut store, "s", 2, 4, 1, 1).unwrap();
        identity_weights(&mut store, &conv, false);
        let d = Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Torus2d), 16).unwrap());
        let f = Field::scalar_fn(d.clone(), |x| {
            (2.0 * PI * (x[0] - 2.0 * x[1])).sin() + (2.0 * PI * 3.0 * x[0]).cos() + 0.3
        })
        .unwrap();
        let g = conv.apply(&store, &f, &d).unwrap();
        let err = g.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn mode_zero_gives_mean() {
        let mut store = ParamStore::new(0);
        let conv = SpectralConv::new(&mut store, "s", 1, 3, 1, 1).unwrap();
        identity_weights(&mut store, &conv, true);
        let d = Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Torus1d), 8).unwrap());
        let f = Field::scalar_fn(d.clone(), |x| x[0] * x[0]).unwrap();
        let mean = f.values().iter().sum::<f64>() / 8.0;
        let g = conv.apply(&store, &f, &d).unwrap();
        assert!(g.values().iter().all(|v| (v - mean).abs() < 1e-12));
    }

    #[test]
    fn interpolates_cosine() {
        let mut store = ParamStore::new(0);
        let conv = SpectralConv::new(&mut store, "s", 1, 2, 1, 1).unwrap();
        identity_weights(&mut store, &conv, false);
        let dom = Domain::unit(DomainKind::Torus1d);
        let d8 = Arc::new(Discretization::uniform_grid(&dom, 8).unwrap());
        let d16 = Arc::new(Discretization::uniform_grid(&dom, 16).unwrap());
        let f = Field::scalar_fn(d8, |x| (2.0 * PI * x[0]).cos()).unwrap();
        let g = conv.apply(&store, &f, &d16).unwrap();
        for i in 0..16 {
            assert!((g.values()[i] - (2.0 * PI * i as f64 / 16.0).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn coarse_grids_truncate_modes() {
        let mut store = ParamStore::new(0);
        let conv = SpectralConv::new(&mut store, "s", 2, 8, 2, 3).unwrap();
        let d = Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Torus2d), 8).unwrap());
        let f = Field::from_fn(d.clone(), 2, |x| vec![x[0], x[1]]).unwrap();
        assert_eq!(conv.apply(&store, &f, &d).unwrap().channels(), 3);
    }

    #[test]
    fn bounded_domain_rejected() {
        let mut store = ParamStore::new(0);
        let conv = SpectralConv::new(&mut store, "s", 1, 2, 1, 1).unwrap();
        let d = Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Interval), 8).unwrap());
        let f = Field::scalar_fn(d.clone(), |x| x[0]).unwrap();
        assert!(matches!(conv.apply(&store, &f, &d), Err(Error::UnsupportedDomain(_))));
    }

    #[test]
    fn identity_block() {
        let mut store = ParamStore::new(0);
        let block = FnoBlock::new(&mut store, "b", 1, 3, 2, &[], Activation::Identity).unwrap();
        let shape = store.get(block.spectral.weights).value.shape().to_vec();
        store.set(block.spectral.weights, Tensor::zeros(&shape, crate::tensor::DType::Complex)).unwrap();
        for net in [&block.skip, &block.mlp] {
            let (w, b) = net.last_layer();
            store.set(w, Tensor::eye(2)).unwrap();
            store.set(b, Tensor::zeros(&[2], crate::tensor::DType::Real)).unwrap();
        }
        let d = Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Torus1d), 16).unwrap());
        let f = Field::from_fn(d.clone(), 2, |x| vec![x[0], (9.0 * x[0]).sin()]).unwrap();
        let g = block.apply(&store, &f, &d).unwrap();
        assert_eq!(g.values(), f.values());
    }
}
