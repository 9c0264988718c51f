use serde::{Deserialize, Serialize};

use super::{check_batch, grid_view, require_same_points, Activation, FourierFeatures, Mlp, OperatorLayer, ParamVars};
use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::tensor::{InitScheme, ParamId, ParamStore, Tensor, Var};

/// Largest tap index `k` with `k h <= r`, capped at `n / 2` so that every
/// grid point appears at most once.
pub fn conv_taps_extent(n: usize, spacing: f64, radius: f64) -> usize {
    (((radius / spacing) * (1.0 + 1e-12)).floor() as usize).min(n / 2)
}

fn multi_index(mut flat: usize, sizes: &[usize]) -> Vec<isize> {
    let mut m = vec![0isize; sizes.len()];
    for d in (0..sizes.len()).rev() {
        m[d] = (flat % sizes[d]) as isize - (sizes[d] / 2) as isize;
        flat /= sizes[d];
    }
    m
}

/// Convolution operator `g(y) = Delta sum_{|y - x| <= r} K(y - x) f(x)` on an
/// equispaced torus grid; `K` is an MLP of the offset returning a
/// `c_in x c_out` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvOperator {
    pub kernel: Mlp,
    pub radius: f64,
    pub features: Option<FourierFeatures>,
    dim: usize,
    channels_in: usize,
    channels_out: usize,
}

impl ConvOperator {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        channels_in: usize,
        channels_out: usize,
        hidden: &[usize],
        radius: f64,
        features: Option<FourierFeatures>,
    ) -> Result<Self> {
        let k_in = features.as_ref().map_or(dim, FourierFeatures::out_dim);
        let mut widths = vec![k_in];
        widths.extend_from_slice(hidden);
        widths.push(channels_in * channels_out);
        let kernel = Mlp::new(store, &format!("{name}.kernel"), &widths, Activation::Gelu)?;
        Self::from_parts(kernel, radius, features, dim, channels_in, channels_out)
    }

    pub fn from_parts(
        kernel: Mlp,
        radius: f64,
        features: Option<FourierFeatures>,
        dim: usize,
        channels_in: usize,
        channels_out: usize,
    ) -> Result<Self> {
        let k_in = features.as_ref().map_or(dim, FourierFeatures::out_dim);
        if kernel.in_dim() != k_in || kernel.out_dim() != channels_in * channels_out {
            return Err(Error::Shape(format!(
                "kernel widths {:?} do not map {k_in} offset features to {channels_in}x{channels_out}",
                kernel.widths()
            )));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
        }
        Ok(ConvOperator {
            kernel,
            radius,
            features,
            dim,
            channels_in,
            channels_out,
        })
    }

    /// Stencil taps `(2k+1 per axis.., c_in, c_out)` for a grid, already
    /// multiplied by the cell volume.
    pub fn taps<'t>(&self, p: &ParamVars<'t>, disc: &Discretization, tape: &'t crate::tensor::Tape) -> Result<Var<'t>> {
        let shape = disc.require_torus_grid()?.to_vec();
        let h = disc.spacing().unwrap();
        if h.iter().any(|&hi| self.radius < hi) {
            return Err(Error::EmptyNeighborhood {
                index: 0,
                coords: disc.point(0).to_vec(),
            });
        }
        let ext: Vec<usize> = shape
            .iter()
            .zip(&h)
            .map(|(&n, &hi)| conv_taps_extent(n, hi, self.radius))
            .collect();
        let sizes: Vec<usize> = ext.iter().map(|k| 2 * k + 1).collect();
        let total: usize = sizes.iter().product();
        let mut offsets = Vec::new();
        let mut slots = Vec::new();
        for flat in 0..total {
            let m = multi_index(flat, &sizes);
            // -n/2 and n/2 name the same point on an even grid
            let dup = m
                .iter()
                .zip(&shape)
                .any(|(&mi, &n)| n % 2 == 0 && mi == -((n / 2) as isize));
            let z: Vec<f64> = m.iter().zip(&h).map(|(&mi, &hi)| mi as f64 * hi).collect();
            let dist = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !dup && dist <= self.radius * (1.0 + 1e-12) {
                offsets.extend(z);
                slots.push(flat);
            }
        }
        let s = slots.len();
        let input = match &self.features {
            Some(ff) => Tensor::real(&[s, ff.out_dim()], ff.embed(&offsets))?,
            None => Tensor::real(&[s, self.dim], offsets)?,
        };
        let cell: f64 = h.iter().product();
        let k = self.kernel.forward(p, tape.constant(input))?;
        let mut tshape = sizes;
        tshape.extend([self.channels_in, self.channels_out]);
        k.scatter_add(0, &slots, total)?.reshape(&tshape).map(|t| t.scale(cell))
    }
}

impl OperatorLayer for ConvOperator {
    fn forward<'t>(
        &self,
        p: &ParamVars<'t>,
        x: Var<'t>,
        input: &Discretization,
        query: &Discretization,
    ) -> Result<Var<'t>> {
        require_same_points(input, query, "convolution operator")?;
        check_batch(x, input.len(), Some(self.channels_in), "convolution operator")?;
        if input.dim() != self.dim {
            return Err(Error::Shape("convolution dimension mismatch".into()));
        }
        let shape = input.require_torus_grid()?.to_vec();
        let taps = self.taps(p, input, x.tape())?;
        let bs = x.shape()[0];
        grid_view(x, &shape)?
            .periodic_stencil(taps)?
            .reshape(&[bs, input.len(), self.channels_out])
    }
}

/// Discrete stencil taps learned at spacing `ref_spacing`, reinterpreted as
/// a piecewise-linear continuous kernel so the physical receptive field stays
/// `2 k ref_spacing` at every resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelInterpolatedConv {
    pub taps: ParamId,
    pub half_width: usize,
    pub ref_spacing: f64,
    dim: usize,
    channels_in: usize,
    channels_out: usize,
}

impl KernelInterpolatedConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        half_width: usize,
        channels_in: usize,
        channels_out: usize,
        ref_spacing: f64,
    ) -> Result<Self> {
        let side = 2 * half_width + 1;
        let mut shape = vec![side; dim];
        shape.extend([channels_in, channels_out]);
        let fan_in = channels_in * side.pow(dim as u32);
        let taps = store.init(&format!("{name}.taps"), &shape, InitScheme::UniformFanIn { fan_in })?;
        Self::from_taps(store, taps, ref_spacing)
    }

    /// Wrap an existing taps parameter `(2k+1 per axis.., c_in, c_out)`.
    pub fn from_taps(store: &ParamStore, taps: ParamId, ref_spacing: f64) -> Result<Self> {
        let shape = store.get(taps).value.shape().to_vec();
        let dim = shape.len().checked_sub(2).filter(|d| (1..=2).contains(d)).ok_or_else(|| {
            Error::Shape(format!("taps of shape {shape:?} are not 1-D or 2-D"))
        })?;
        let side = shape[0];
        if side % 2 == 0 || shape[..dim].iter().any(|&s| s != side) {
            return Err(Error::Shape(format!("taps {shape:?} need equal odd sides")));
        }
        if !(ref_spacing > 0.0) {
            return Err(Error::InvalidArgument("reference spacing must be positive".into()));
        }
        Ok(KernelInterpolatedConv {
            taps,
            half_width: side / 2,
            ref_spacing,
            dim,
            channels_in: shape[dim],
            channels_out: shape[dim + 1],
        })
    }

    /// Linear-interpolation matrix `(2k'+1, 2k+1)` from reference taps to
    /// offsets `m h`, `|m h| <= k ref_spacing`.
    fn interpolation(&self, h: f64) -> Tensor {
        let k = self.half_width as isize;
        let kk = ((self.half_width as f64 * self.ref_spacing / h) * (1.0 + 1e-12)).floor() as isize;
        let (rows, cols) = ((2 * kk + 1) as usize, (2 * k + 1) as usize);
        let mut a = vec![0.0; rows * cols];
        for (r, m) in (-kk..=kk).enumerate() {
            let u = (m as f64 * h / self.ref_spacing).clamp(-(k as f64), k as f64);
            let lo = u.floor();
            let frac = u - lo;
            let c0 = (lo as isize + k) as usize;
            a[r * cols + c0] += 1.0 - frac;
            if frac > 0.0 {
                a[r * cols + c0 + 1] += frac;
            }
        }
        Tensor::from_real(vec![rows, cols], a)
    }

    /// Taps at the grid's spacing, including the `(h / ref_spacing)^d`
    /// quadrature factor.
    pub fn resampled_taps<'t>(&self, p: &ParamVars<'t>, disc: &Discretization) -> Result<Var<'t>> {
        let taps = p.get(self.taps);
        let h = disc
            .spacing()
            .ok_or_else(|| Error::UnsupportedDomain("kernel interpolation needs a grid".into()))?;
        if h.iter().all(|&hi| hi == self.ref_spacing) {
            return Ok(taps);
        }
        let cc = self.channels_in * self.channels_out;
        let side = 2 * self.half_width + 1;
        let tape = taps.tape();
        let mut t = taps.reshape(&[side, side.pow(self.dim as u32 - 1) * cc])?;
        let mut lens = vec![side; self.dim];
        for &hi in &h {
            let a = self.interpolation(hi);
            let rows = a.shape()[0];
            // interpolate along the leading axis, then rotate it to the back
            let rest: usize = lens.iter().skip(1).product::<usize>() * cc;
            t = tape.constant(a).matmul(t.reshape(&[lens[0], rest])?)?;
            lens[0] = rows;
            if self.dim == 2 {
                t = t.reshape(&[lens[0], lens[1], cc])?.transpose(0, 1)?;
                lens.swap(0, 1);
            }
        }
        let factor: f64 = h.iter().map(|hi| hi / self.ref_spacing).product();
        let mut shape = lens;
        shape.extend([self.channels_in, self.channels_out]);
        Ok(t.reshape(&shape)?.scale(factor))
    }
}

impl OperatorLayer for KernelInterpolatedConv {
    fn forward<'t>(
        &self,
        p: &ParamVars<'t>,
        x: Var<'t>,
        input: &Discretization,
        query: &Discretization,
    ) -> Result<Var<'t>> {
        require_same_points(input, query, "interpolated convolution")?;
        check_batch(x, input.len(), Some(self.channels_in), "interpolated convolution")?;
        let shape = input.require_torus_grid()?.to_vec();
        if shape.len() != self.dim {
            return Err(Error::Shape("interpolated convolution dimension mismatch".into()));
        }
        let taps = self.resampled_taps(p, input)?;
        let bs = x.shape()[0];
        grid_view(x, &shape)?
            .periodic_stencil(taps)?
            .reshape(&[bs, input.len(), self.channels_out])
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::discretization::{Domain, DomainKind, Field};
    use crate::tensor::DType;

    fn box_kernel(store: &mut ParamStore, r: f64) -> Mlp {
        let net = Mlp::new(store, "box", &[1, 1], Activation::Identity).unwrap();
        let (w, b) = net.last_layer();
        store.set(w, Tensor::zeros(&[1, 1], DType::Real)).unwrap();
        store.set(b, Tensor::real(&[1], vec![1.0 / (2.0 * r)]).unwrap()).unwrap();
        net
    }

    #[test]
    fn box_kernel_preserves_constants() {
        let mut store = ParamStore::new(0);
        // half-cell radius: 2k+1 points span exactly 2r
        let r = 8.5 / 64.0;
        let layer = ConvOperator::from_parts(box_kernel(&mut store, r), r, None, 1, 1, 1).unwrap();
        let d = Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Torus1d), 64).unwrap());
        let f = Field::scalar_fn(d.clone(), |_| 2.5).unwrap();
        let g = layer.apply(&store, &f, &d).unwrap();
        assert!(g.values().iter().all(|v| (v - 2.5).abs() < 1e-10));
    }

    #[test]
    fn radius_below_spacing_rejected() {
        let mut store = ParamStore::new(0);
        let layer = ConvOperator::from_parts(box_kernel(&mut store, 0.01), 0.01, None, 1, 1, 1).unwrap();
        let d = Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Torus1d), 8).unwrap());
        let f = Field::scalar_fn(d.clone(), |_| 1.0).unwrap();
        assert!(matches!(layer.apply(&store, &f, &d), Err(Error::EmptyNeighborhood { .. })));
    }

    #[test]
    fn outside_radius_has_no_influence() {
        let mut store = ParamStore::new(1);
        let layer = ConvOperator::new(&mut store, "c", 1, 1, 1, &[8], 0.1, None).unwrap();
        let d = Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Torus1d), 32).unwrap());
        let f = Field::scalar_fn(d.clone(), |x| x[0].sin()).unwrap();
        let mut v = f.values().to_vec();
        v[16] += 3.0;
        let f2 = Field::new(d.clone(), v, 1).unwrap();
        let (g, g2) = (layer.apply(&store, &f, &d).unwrap(), layer.apply(&store, &f2, &d).unwrap());
        for j in 0..32 {
            let dist = d.domain().distance(d.point(j), d.point(16));
            if dist > 0.1 {
                assert_eq!(g.values()[j].to_bits(), g2.values()[j].to_bits());
            }
        }
    }

    #[test]
    fn interpolation_keeps_physical_width() {
        let mut store = ParamStore::new(0);
        let layer = KernelInterpolatedConv::new(&mut store, "k", 1, 2, 1, 1, 1.0 / 16.0).unwrap();
        assert_eq!(layer.interpolation(1.0 / 16.0).shape(), &[5, 5]);
        let a = layer.interpolation(1.0 / 32.0);
        assert_eq!(a.shape(), &[9, 5]);
        // offset 1/32 sits halfway between taps 0 and 1
        let row = &a.real_data().unwrap()[5 * 5..6 * 5];
        assert_eq!(row, &[0.0, 0.0, 0.5, 0.5, 0.0]);
    }
}
