//! Neural-operator layers. Every layer maps a batch `(bs, n, c)` of function
//! values on an input discretization to a batch on a query discretization.

mod attention;
mod conv;
mod encdec;
mod integral;
mod norm;
mod padding;
mod spectral;

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use attention::{Attention, AttentionConfig};
pub use conv::{conv_taps_extent, ConvOperator, KernelInterpolatedConv};
pub use encdec::{Decoder, EncDec, EncDecConfig, Encoder, FourierBasis, LatentMap};
pub use integral::{IntegralTransform, KernelVariant, RadiusGraph};
pub use norm::{dataset_stats, normalization, standardize, NormStats, StandardizedField, EPS as NORM_EPS};
pub use padding::{crop_indices, domain_padding, pad_indices, unpad, PaddedField};
pub use spectral::{FnoBlock, SpectralConv};

use crate::discretization::{Discretization, Field};
use crate::error::{Error, Result};
use crate::tensor::{InitScheme, ParamId, ParamStore, Tape, Tensor, Var};

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
pub struct ParamVars<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> ParamVars<'t> {
    /// Tracked leaves, for training.
    pub fn leaves(tape: &'t Tape, store: &ParamStore) -> Self {
        ParamVars {
            vars: store.iter().map(|(_, p)| tape.leaf(p.value.clone())).collect(),
        }
    }

    /// Untracked copies, for inference.
    pub fn constants(tape: &'t Tape, store: &ParamStore) -> Self {
        ParamVars {
            vars: store
                .iter()
                .map(|(_, p)| tape.constant(p.value.clone()))
                .collect(),
        }
    }

    /// Handles already on a tape, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        ParamVars { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::Gelu => x.gelu(),
            Activation::Relu => x.relu(),
            Activation::Identity => Ok(x),
        }
    }
}

/// Periodic features `cos(2 pi k z / L), sin(2 pi k z / L)` for
/// `k = 1..=modes` per axis. A linear net on top of them is a
/// trigonometric polynomial, i.e. an exactly band-limited periodic kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierFeatures {
    pub modes: usize,
    pub periods: Vec<f64>,
}

impl FourierFeatures {
    pub fn out_dim(&self) -> usize {
        2 * self.modes * self.periods.len()
    }

    /// `(rows, d)` coordinates to `(rows, 2 * modes * d)` features.
    pub fn embed(&self, coords: &[f64]) -> Vec<f64> {
        let d = self.periods.len();
        let mut out = Vec::with_capacity(coords.len() / d * self.out_dim());
        for row in coords.chunks(d) {
            for (z, l) in row.iter().zip(&self.periods) {
                for k in 1..=self.modes {
                    let a = 2.0 * PI * k as f64 * z / l;
                    out.push(a.cos());
                    out.push(a.sin());
                }
            }
        }
        out
    }
}

/// Multilayer perceptron `widths[0] -> ... -> widths[last]`, activation
/// between layers but not after the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    params: Vec<(ParamId, ParamId)>,
}

/// The MLP that parametrizes kernels, lifting/projection and latent maps.
pub type KernelNet = Mlp;

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "MLP `{name}` needs at least two positive widths, got {widths:?}"
            )));
        }
        let mut params = Vec::with_capacity(widths.len() - 1);
        for (i, w) in widths.windows(2).enumerate() {
            let scheme = InitScheme::UniformFanIn { fan_in: w[0] };
            let wid = store.init(&format!("{name}.{i}.weight"), &[w[0], w[1]], scheme)?;
            let bid = store.init(&format!("{name}.{i}.bias"), &[w[1]], scheme)?;
            params.push((wid, bid));
        }
        Ok(Mlp {
            widths: widths.to_vec(),
            activation,
            params,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Ids of the final layer's weight and bias.
    pub fn last_layer(&self) -> (ParamId, ParamId) {
        *self.params.last().unwrap()
    }

    /// Apply to `x` of shape `(.., in_dim)`.
    pub fn forward<'t>(&self, p: &ParamVars<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let c = *x.shape().last().unwrap_or(&0);
        if c != self.in_dim() {
            return Err(Error::Shape(format!(
                "MLP expects {} input channels, got {c}",
                self.in_dim()
            )));
        }
        let mut h = x;
        for (i, &(w, b)) in self.params.iter().enumerate() {
            h = h.matmul(p.get(w))?.add_bias(p.get(b))?;
            if i + 1 < self.params.len() {
                h = self.activation.apply(h)?;
            }
        }
        Ok(h)
    }
}

/// Listing-style sinusoidal embedding: for each axis and `k = 0..F`, the
/// angle `2^k pi x` contributes `sin` then `cos`. Output is `(n, 2 F d)`.
pub fn positional_encoding(coords: &[f64], dim: usize, num_frequencies: usize) -> Result<Tensor> {
    if num_frequencies == 0 {
        return Err(Error::InvalidArgument("num_frequencies must be at least 1".into()));
    }
    if dim == 0 || coords.len() % dim != 0 {
        return Err(Error::Shape(format!("{} coordinates for dimension {dim}", coords.len())));
    }
    let n = coords.len() / dim;
    let mut out = Vec::with_capacity(n * 2 * num_frequencies * dim);
    for row in coords.chunks(dim) {
        for &x in row {
            for k in 0..num_frequencies {
                let a = (1u64 << k) as f64 * PI * x;
                out.push(a.sin());
                out.push(a.cos());
            }
        }
    }
    Tensor::real(&[n, 2 * num_frequencies * dim], out)
}

/// Positional features of a discretization's points. Bounded domains use
/// [`positional_encoding`] as is. On a torus the angle becomes
/// `2^k 2 pi (x - lo) / L`, so every feature is a smooth periodic function
/// and its samples on different grids come from the same band-limited
/// signal.
pub fn positional_features(disc: &Discretization, num_frequencies: usize) -> Result<Tensor> {
    let domain = disc.domain();
    if !domain.is_periodic() {
        return positional_encoding(disc.points(), disc.dim(), num_frequencies);
    }
    let d = disc.dim();
    let scaled: Vec<f64> = disc
        .points()
        .chunks(d)
        .flat_map(|row| {
            row.iter()
                .zip(domain.bounds())
                .map(|(x, (lo, hi))| 2.0 * (x - lo) / (hi - lo))
        })
        .collect();
    positional_encoding(&scaled, d, num_frequencies)
}

/// Append positional features of the field's points to its channels.
pub fn concat_to_field(field: &Field, features: &Tensor) -> Result<Field> {
    let n = field.len();
    if features.ndim() != 2 || features.shape()[0] != n {
        return Err(Error::Shape(format!(
            "features {:?} for a field with {n} points",
            features.shape()
        )));
    }
    let k = features.shape()[1];
    let c = field.channels();
    let fv = features.real_data()?;
    let mut values = Vec::with_capacity(n * (c + k));
    for i in 0..n {
        values.extend_from_slice(field.row(i));
        values.extend_from_slice(&fv[i * k..(i + 1) * k]);
    }
    Field::new(field.disc().clone(), values, c + k)
}

/// Concatenate constant per-point features `(n, k)` onto a batch
/// `(bs, n, c)`.
pub fn concat_features<'t>(x: Var<'t>, features: &Tensor) -> Result<Var<'t>> {
    let s = x.shape();
    if s.len() != 3 || features.ndim() != 2 || features.shape()[0] != s[1] {
        return Err(Error::Shape(format!(
            "features {:?} for batch {s:?}",
            features.shape()
        )));
    }
    let k = features.shape()[1];
    let tiled = features.real_data()?.repeat(s[0]);
    let f = x.tape().constant(Tensor::real(&[s[0], s[1], k], tiled)?);
    Var::concat(&[x, f], 2)
}

/// A layer mapping a batch `(bs, n_in, c_in)` on `input` to
/// `(bs, n_out, c_out)` on `query`.
pub trait OperatorLayer {
    fn forward<'t>(
        &self,
        p: &ParamVars<'t>,
        x: Var<'t>,
        input: &Discretization,
        query: &Discretization,
    ) -> Result<Var<'t>>;

    /// Evaluate on a single field without tracking gradients.
    fn apply(&self, store: &ParamStore, field: &Field, query: &Arc<Discretization>) -> Result<Field> {
        let tape = Tape::new();
        let p = ParamVars::constants(&tape, store);
        let x = tape.constant(field_batch(std::slice::from_ref(field))?);
        let y = self.forward(&p, x, field.disc(), query)?.value();
        let c = *y.shape().last().unwrap();
        Field::new(query.clone(), y.real_data()?.to_vec(), c)
    }
}

/// Pointwise (Nemytskii) layer: an MLP applied to every point's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pointwise {
    pub net: Mlp,
}

impl OperatorLayer for Pointwise {
    fn forward<'t>(
        &self,
        p: &ParamVars<'t>,
        x: Var<'t>,
        input: &Discretization,
        query: &Discretization,
    ) -> Result<Var<'t>> {
        require_same_points(input, query, "pointwise layer")?;
        self.net.forward(p, x)
    }
}

/// Row-wise application of `net`, keeping the discretization.
pub fn pointwise_layer(store: &ParamStore, field: &Field, net: &Mlp) -> Result<Field> {
    if field.channels() != net.in_dim() {
        return Err(Error::Shape(format!(
            "pointwise net expects {} channels, field has {}",
            net.in_dim(),
            field.channels()
        )));
    }
    Pointwise { net: net.clone() }.apply(store, field, field.disc())
}

pub(crate) fn require_same_points(a: &Discretization, b: &Discretization, what: &str) -> Result<()> {
    if a.points() != b.points() {
        return Err(Error::InvalidArgument(format!(
            "{what} is evaluated at its input points; the query discretization differs"
        )));
    }
    Ok(())
}

/// Stack fields sharing one discretization into a `(bs, n, c)` tensor.
pub fn field_batch(fields: &[Field]) -> Result<Tensor> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (n, c) = (first.len(), first.channels());
    let mut v = Vec::with_capacity(fields.len() * n * c);
    for f in fields {
        if f.len() != n || f.channels() != c {
            return Err(Error::Shape("batch fields differ in size".into()));
        }
        v.extend_from_slice(f.values());
    }
    Tensor::real(&[fields.len(), n, c], v)
}

/// Batch reshaped to `(bs, grid.., c)`.
pub(crate) fn grid_view<'t>(x: Var<'t>, shape: &[usize]) -> Result<Var<'t>> {
    let s = x.shape();
    let mut full = vec![s[0]];
    full.extend_from_slice(shape);
    full.push(*s.last().unwrap());
    x.reshape(&full)
}

pub(crate) fn check_batch(x: Var<'_>, n: usize, c: Option<usize>, what: &str) -> Result<()> {
    let s = x.shape();
    if s.len() != 3 || s[1] != n || c.is_some_and(|c| s[2] != c) {
        return Err(Error::Shape(format!(
            "{what}: expected (bs, {n}, {}), got {s:?}",
            c.map_or("c".to_string(), |c| c.to_string())
        )));
    }
    Ok(())
}
