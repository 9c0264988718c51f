//! Index-based layers without a continuum limit: a discrete convolution
//! whose stencil is counted in grid points, and a k-nearest-neighbour
//! message-passing layer.

use serde::{Deserialize, Serialize};

use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::layers::{check_batch, grid_view, Mlp, OperatorLayer, ParamVars};
use crate::tensor::{InitScheme, ParamId, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvRoute {
    /// Direct stencil for small kernels, FFT otherwise.
    #[default]
    Auto,
    Direct,
    Fft,
}

/// `g_j = sum_{|j - i| <= k} K_{j-i} f_i` with periodic wrap and no
/// quadrature scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteConv {
    pub taps: ParamId,
    pub half_width: usize,
    pub route: ConvRoute,
    dim: usize,
    channels_in: usize,
    channels_out: usize,
}

impl DiscreteConv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        half_width: usize,
        channels_in: usize,
        channels_out: usize,
    ) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidArgument(format!("discrete conv supports 1-D and 2-D, got {dim}")));
        }
        let side = 2 * half_width + 1;
        let mut shape = vec![side; dim];
        shape.extend([channels_in, channels_out]);
        let taps = store.init(
            name,
            &shape,
            InitScheme::UniformFanIn {
                fan_in: side.pow(dim as u32) * channels_in,
            },
        )?;
        Ok(DiscreteConv {
            taps,
            half_width,
            route: ConvRoute::Auto,
            dim,
            channels_in,
            channels_out,
        })
    }

    /// Wrap existing taps of shape `(2k+1 per axis.., ci, co)`.
    pub fn from_taps(store: &ParamStore, taps: ParamId) -> Result<Self> {
        let s = store.get(taps).value.shape().to_vec();
        if s.len() < 3 || s.len() > 4 || s[0] % 2 == 0 || s[..s.len() - 2].iter().any(|&v| v != s[0]) {
            return Err(Error::Shape(format!("taps of shape {s:?} are not an odd square stencil")));
        }
        let dim = s.len() - 2;
        Ok(DiscreteConv {
            taps,
            half_width: s[0] / 2,
            route: ConvRoute::Auto,
            dim,
            channels_in: s[dim],
            channels_out: s[dim + 1],
        })
    }

    pub fn with_route(mut self, route: ConvRoute) -> Self {
        self.route = route;
        self
    }

    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    fn use_fft(&self, n: usize) -> bool {
        match self.route {
            ConvRoute::Direct => false,
            ConvRoute::Fft => true,
            ConvRoute::Auto => self.side() > 7 && n.is_power_of_two(),
        }
    }

    /// Circular convolution through the transform: the taps are wrapped
    /// onto the grid, transformed, and multiplied mode by mode.
    fn forward_fft<'t>(&self, x: Var<'t>, taps: Var<'t>, shape: &[usize]) -> Result<Var<'t>> {
        let (k, d) = (self.half_width as isize, self.dim);
        let (ci, co) = (self.channels_in, self.channels_out);
        let bs = x.shape()[0];
        let mut kern = taps;
        for (a, &n) in shape.iter().enumerate() {
            let idx: Vec<usize> = (-k..=k).map(|m| m.rem_euclid(n as isize) as usize).collect();
            kern = kern.scatter_add(a, &idx, n)?;
        }
        let last = shape[d - 1];
        let h = last / 2 + 1;
        let modes: usize = shape[..d - 1].iter().product::<usize>() * h;
        let mut kh = kern.rfft(d - 1)?;
        let mut xh = grid_view(x, shape)?.rfft(d)?;
        if d == 2 {
            kh = kh.fft(0, false)?;
            xh = xh.fft(1, false)?;
        }
        let yh = xh
            .reshape(&[bs, modes, ci])?
            .mode_mix(kh.reshape(&[modes, ci, co])?)?;
        let mut spec_shape = vec![bs];
        spec_shape.extend_from_slice(&shape[..d - 1]);
        spec_shape.extend([h, co]);
        let mut y = yh.reshape(&spec_shape)?;
        if d == 2 {
            y = y.fft(1, true)?;
        }
        y.irfft(d, last)?.reshape(&[bs, shape.iter().product(), co])
    }
}

impl OperatorLayer for DiscreteConv {
    fn forward<'t>(
        &self,
        p: &ParamVars<'t>,
        x: Var<'t>,
        input: &Discretization,
        query: &Discretization,
    ) -> Result<Var<'t>> {
        crate::layers::require_same_points(input, query, "a discrete convolution")?;
        check_batch(x, input.len(), Some(self.channels_in), "discrete conv")?;
        let shape = input
            .grid_shape()
            .ok_or_else(|| Error::UnsupportedDomain("discrete convolution needs a grid".into()))?
            .to_vec();
        if shape.len() != self.dim {
            return Err(Error::Shape(format!(
                "{}-D stencil on a {}-D grid",
                self.dim,
                shape.len()
            )));
        }
        let taps = p.get(self.taps);
        if self.use_fft(shape[0]) {
            return self.forward_fft(x, taps, &shape);
        }
        let bs = x.shape()[0];
        grid_view(x, &shape)?
            .periodic_stencil(taps)?
            .reshape(&[bs, input.len(), self.channels_out])
    }
}

/// Mean aggregation over the `k` nearest input points (the point itself
/// included), `g_j = (1/k) sum_{i in N_k(j)} m(x_i, x_j, f_i)`. Without a
/// message net the message is `f_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnGnn {
    pub k: usize,
    pub message: Option<Mlp>,
    channels_in: usize,
}

impl KnnGnn {
    /// `message`, if given, maps `[x_i, x_j, f_i]` (width `2d + c_in`) to the
    /// output channels.
    pub fn new(k: usize, message: Option<Mlp>, dim: usize, channels_in: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k_neighbors must be positive".into()));
        }
        if let Some(m) = &message {
            if m.in_dim() != 2 * dim + channels_in {
                return Err(Error::Shape(format!(
                    "message net takes {} inputs, expected {}",
                    m.in_dim(),
                    2 * dim + channels_in
                )));
            }
        }
        Ok(KnnGnn {
            k,
            message,
            channels_in,
        })
    }

    /// Sorted by distance, then index.
    pub fn neighbors(disc: &Discretization, k: usize) -> Result<Vec<Vec<usize>>> {
        let n = disc.len();
        if k > n {
            return Err(Error::InvalidArgument(format!(
                "k_neighbors = {k} exceeds the {n} available points"
            )));
        }
        let dom = disc.domain();
        Ok((0..n)
            .map(|j| {
                let mut d: Vec<(f64, usize)> =
                    (0..n).map(|i| (dom.distance(disc.point(i), disc.point(j)), i)).collect();
                d.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
                let mut near: Vec<(f64, usize)> = d[..k].to_vec();
                near.sort_by(|a, b| a.partial_cmp(b).unwrap());
                near.into_iter().map(|(_, i)| i).collect()
            })
            .collect())
    }
}

impl OperatorLayer for KnnGnn {
    fn forward<'t>(
        &self,
        p: &ParamVars<'t>,
        x: Var<'t>,
        input: &Discretization,
        query: &Discretization,
    ) -> Result<Var<'t>> {
        crate::layers::require_same_points(input, query, "a kNN graph layer")?;
        check_batch(x, input.len(), Some(self.channels_in), "kNN layer")?;
        let nb = Self::neighbors(input, self.k)?;
        let (n, d) = (input.len(), input.dim());
        let mut src = Vec::with_capacity(n * self.k);
        let mut dst = Vec::with_capacity(n * self.k);
        for (j, list) in nb.iter().enumerate() {
            for &i in list {
                src.push(i);
                dst.push(j);
            }
        }
        let fx = x.gather(1, &src)?;
        let msg = match &self.message {
            None => fx,
            Some(net) => {
                let bs = x.shape()[0];
                let mut coords = Vec::with_capacity(src.len() * 2 * d);
                for (&i, &j) in src.iter().zip(&dst) {
                    coords.extend_from_slice(input.point(i));
                    coords.extend_from_slice(input.point(j));
                }
                let c = x.tape().constant(crate::tensor::Tensor::real(
                    &[bs, src.len(), 2 * d],
                    coords.repeat(bs),
                )?);
                net.forward(p, Var::concat(&[c, fx], 2)?)?
            }
        };
        Ok(msg.scatter_add(1, &dst, n)?.scale(1.0 / self.k as f64))
    }
}
