use serde::{Deserialize, Serialize};

use super::{check_batch, Activation, Mlp, OperatorLayer, ParamVars};
use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor, Var};

/// Input/query pairs `(i, j)` with `|x_i - y_j| <= r` (closed ball, periodic
/// metric on torus domains), ordered by query then input index.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusGraph {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl RadiusGraph {
    /// Brute-force `O(n m)` search; `radius = None` connects every pair.
    pub fn build(input: &Discretization, query: &Discretization, radius: Option<f64>) -> Result<Self> {
        if input.dim() != query.dim() {
            return Err(Error::Shape("input and query dimensions differ".into()));
        }
        let (n, m) = (input.len(), query.len());
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for j in 0..m {
            let y = query.point(j);
            let before = src.len();
            for i in 0..n {
                if radius.map_or(true, |r| input.domain().distance(input.point(i), y) <= r) {
                    src.push(i);
                    dst.push(j);
                }
            }
            if src.len() == before {
                return Err(Error::EmptyNeighborhood {
                    index: j,
                    coords: y.to_vec(),
                });
            }
        }
        Ok(RadiusGraph { src, dst })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    /// `K(x, y)` has one output per channel and multiplies `f(x)`
    /// elementwise.
    #[default]
    Diagonal,
    /// `K(x, y, f(x))` produces the output channels directly.
    Nonlinear,
}

/// `g(y_j) = sum_{x_i in B_r(y_j)} K(x_i, y_j, [f(x_i)]) [* f(x_i)] Delta_i + b(y_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralTransform {
    pub kernel: Mlp,
    pub bias: Option<Mlp>,
    pub radius: Option<f64>,
    pub variant: KernelVariant,
    dim: usize,
    channels_in: usize,
}

impl IntegralTransform {
    /// Kernel MLP with the given hidden widths; input and output widths
    /// follow from `variant`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        channels_in: usize,
        channels_out: usize,
        hidden: &[usize],
        variant: KernelVariant,
        radius: Option<f64>,
        with_bias: bool,
    ) -> Result<Self> {
        let k_in = match variant {
            KernelVariant::Diagonal => {
                if channels_out != channels_in {
                    return Err(Error::InvalidArgument(format!(
                        "diagonal kernels keep the channel count ({channels_in} -> {channels_out})"
                    )));
                }
                2 * dim
            }
            KernelVariant::Nonlinear => 2 * dim + channels_in,
        };
        let mut widths = vec![k_in];
        widths.extend_from_slice(hidden);
        widths.push(channels_out);
        let kernel = Mlp::new(store, &format!("{name}.kernel"), &widths, Activation::Gelu)?;
        let bias = if with_bias {
            Some(Mlp::new(
                store,
                &format!("{name}.bias"),
                &[dim, channels_out],
                Activation::Identity,
            )?)
        } else {
            None
        };
        Self::from_parts(kernel, bias, radius, variant, dim, channels_in)
    }

    pub fn from_parts(
        kernel: Mlp,
        bias: Option<Mlp>,
        radius: Option<f64>,
        variant: KernelVariant,
        dim: usize,
        channels_in: usize,
    ) -> Result<Self> {
        if let Some(r) = radius {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
            }
        }
        let k_in = match variant {
            KernelVariant::Diagonal => 2 * dim,
            KernelVariant::Nonlinear => 2 * dim + channels_in,
        };
        if kernel.in_dim() != k_in
            || (variant == KernelVariant::Diagonal && kernel.out_dim() != channels_in)
        {
            return Err(Error::Shape(format!(
                "kernel widths {:?} do not fit a {variant:?} transform on {dim}-D points with {channels_in} channels",
                kernel.widths()
            )));
        }
        if let Some(b) = &bias {
            if b.in_dim() != dim || b.out_dim() != kernel.out_dim() {
                return Err(Error::Shape("bias net widths do not fit".into()));
            }
        }
        Ok(IntegralTransform {
            kernel,
            bias,
            radius,
            variant,
            dim,
            channels_in,
        })
    }
}

impl OperatorLayer for IntegralTransform {
    fn forward<'t>(
        &self,
        p: &ParamVars<'t>,
        x: Var<'t>,
        input: &Discretization,
        query: &Discretization,
    ) -> Result<Var<'t>> {
        check_batch(x, input.len(), Some(self.channels_in), "integral transform")?;
        if input.dim() != self.dim {
            return Err(Error::Shape(format!(
                "transform built for {}-D points, input is {}-D",
                self.dim,
                input.dim()
            )));
        }
        let tape = x.tape();
        let graph = RadiusGraph::build(input, query, self.radius)?;
        let d = self.dim;
        let npairs = graph.len();
        let mut coords = Vec::with_capacity(npairs * 2 * d);
        for (&i, &j) in graph.src.iter().zip(&graph.dst) {
            coords.extend_from_slice(input.point(i));
            coords.extend_from_slice(query.point(j));
        }
        let weights = Tensor::real(
            &[npairs],
            graph.src.iter().map(|&i| input.weights()[i]).collect(),
        )?;
        let fx = x.gather(1, &graph.src)?;
        let contrib = match self.variant {
            KernelVariant::Diagonal => {
                let pair = tape.constant(Tensor::real(&[npairs, 2 * d], coords)?);
                let k = self.kernel.forward(p, pair)?;
                fx.mul_bcast(k)?
            }
            KernelVariant::Nonlinear => {
                let bs = x.shape()[0];
                let pair = tape.constant(Tensor::real(&[bs, npairs, 2 * d], coords.repeat(bs))?);
                self.kernel.forward(p, Var::concat(&[pair, fx], 2)?)?
            }
        };
        let mut out = contrib
            .mul_const(&weights, 1)?
            .scatter_add(1, &graph.dst, query.len())?;
        if let Some(b) = &self.bias {
            let y = tape.constant(Tensor::real(&[query.len(), d], query.points().to_vec())?);
            out = out.add_bcast(b.forward(p, y)?)?;
        }
        Ok(out)
    }
}
