use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{check_batch, Activation, Mlp, OperatorLayer, ParamVars};
use crate::discretization::{Discretization, Domain};
use crate::error::{Error, Result};
use crate::tensor::{InitScheme, ParamId, ParamStore, Tensor, Var};

/// Real orthonormal Fourier system on a box: the constant, then a
/// `cos`/`sin` pair per wavevector of a half-plane with `|k_a| < modes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FourierBasis {
    pub dim: usize,
    pub modes: usize,
}

impl FourierBasis {
    fn wavevectors(&self) -> Vec<Vec<isize>> {
        let m = self.modes as isize;
        let mut out = Vec::new();
        if self.dim == 1 {
            out.extend((1..m).map(|k| vec![k]));
        } else {
            out.extend((1..m).map(|k| vec![k, 0]));
            for k2 in 1..m {
                for k1 in -(m - 1)..m {
                    out.push(vec![k1, k2]);
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.wavevectors().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(n, len)` basis values at the points of `disc`.
    pub fn eval(&self, domain: &Domain, points: &[f64]) -> Result<Tensor> {
        if domain.dim() != self.dim {
            return Err(Error::Shape(format!(
                "{}-D Fourier basis on a {}-D domain",
                self.dim,
                domain.dim()
            )));
        }
        let vol = domain.measure();
        let (c0, c1) = (1.0 / vol.sqrt(), (2.0 / vol).sqrt());
        let ks = self.wavevectors();
        let lo: Vec<f64> = domain.bounds().iter().map(|b| b.0).collect();
        let len = domain.lengths();
        let n = points.len() / self.dim;
        let mut out = Vec::with_capacity(n * self.len());
        for x in points.chunks(self.dim) {
            out.push(c0);
            for k in &ks {
                let phase: f64 = (0..self.dim)
                    .map(|a| 2.0 * PI * k[a] as f64 * (x[a] - lo[a]) / len[a])
                    .sum();
                out.push(c1 * phase.cos());
                out.push(c1 * phase.sin());
            }
        }
        Tensor::real(&[n, self.len()], out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Encoder {
    /// Learned basis `b(x)`: an MLP from coordinates to `c_in * latent`
    /// values; `v_j = sum_i sum_c b(x_i)[c, j] f(x_i)[c] Delta_i`.
    Learned(Mlp),
    /// Inner products with a fixed Fourier basis, per channel.
    Fourier(FourierBasis),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LatentMap {
    Mlp(Mlp),
    /// Elementwise scaling of the latent vector.
    Diagonal(ParamId),
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Decoder {
    /// Nonlinear manifold decoder: MLP of `latent ⊕ y`.
    Nomad(Mlp),
    /// Per-channel linear combination of a Fourier basis.
    FourierLinear(FourierBasis),
}

/// Construction options for [`EncDec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncDecConfig {
    pub dim: usize,
    pub channels_in: usize,
    pub channels_out: usize,
    /// `Some(hidden)` for a learned encoder basis, `None` for Fourier.
    pub encoder_hidden: Option<Vec<usize>>,
    /// Latent width of the learned encoder.
    pub latent_dim: usize,
    /// Modes of the Fourier encoder/decoder.
    pub fourier_modes: usize,
    /// `Some(hidden)` for an MLP latent map, `None` for a diagonal one.
    pub latent_hidden: Option<Vec<usize>>,
    /// `Some(hidden)` for a NOMAD decoder, `None` for a Fourier decoder.
    pub decoder_hidden: Option<Vec<usize>>,
}

impl Default for EncDecConfig {
    fn default() -> Self {
        EncDecConfig {
            dim: 1,
            channels_in: 1,
            channels_out: 1,
            encoder_hidden: Some(vec![32]),
            latent_dim: 64,
            fourier_modes: 8,
            latent_hidden: Some(vec![64]),
            decoder_hidden: Some(vec![64]),
        }
    }
}

/// `g(y) = decoder(K(encoder(f)), y)`; queryable at any points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncDec {
    pub encoder: Encoder,
    pub latent: LatentMap,
    pub decoder: Decoder,
    dim: usize,
    channels_in: usize,
    channels_out: usize,
}

impl EncDec {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &EncDecConfig) -> Result<Self> {
        let (d, ci, co) = (cfg.dim, cfg.channels_in, cfg.channels_out);
        let basis = FourierBasis {
            dim: d,
            modes: cfg.fourier_modes,
        };
        if cfg.fourier_modes == 0 || cfg.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent sizes must be positive".into()));
        }
        let widths = |first: usize, hidden: &[usize], last: usize| {
            let mut w = vec![first];
            w.extend_from_slice(hidden);
            w.push(last);
            w
        };
        let (encoder, k) = match &cfg.encoder_hidden {
            Some(h) => (
                Encoder::Learned(Mlp::new(
                    store,
                    &format!("{name}.encoder"),
                    &widths(d, h, ci * cfg.latent_dim),
                    Activation::Gelu,
                )?),
                cfg.latent_dim,
            ),
            None => (Encoder::Fourier(basis), ci * basis.len()),
        };
        let latent = match &cfg.latent_hidden {
            Some(h) => LatentMap::Mlp(Mlp::new(
                store,
                &format!("{name}.latent"),
                &widths(k, h, k),
                Activation::Gelu,
            )?),
            None => LatentMap::Diagonal(store.init(
                &format!("{name}.latent.diag"),
                &[k],
                InitScheme::UniformFanIn { fan_in: 1 },
            )?),
        };
        let decoder = match &cfg.decoder_hidden {
            Some(h) => Decoder::Nomad(Mlp::new(
                store,
                &format!("{name}.decoder"),
                &widths(k + d, h, co),
                Activation::Gelu,
            )?),
            None => {
                if k != co * basis.len() {
                    return Err(Error::Shape(format!(
                        "a Fourier decoder with {} basis functions cannot read a latent of width {k} into {co} channels",
                        basis.len()
                    )));
                }
                Decoder::FourierLinear(basis)
            }
        };
        Ok(EncDec {
            encoder,
            latent,
            decoder,
            dim: d,
            channels_in: ci,
            channels_out: co,
        })
    }

    /// Latent vectors `(bs, k)`.
    pub fn encode<'t>(&self, p: &ParamVars<'t>, x: Var<'t>, input: &Discretization) -> Result<Var<'t>> {
        check_batch(x, input.len(), Some(self.channels_in), "encoder")?;
        let tape = x.tape();
        let (bs, n, c) = (x.shape()[0], input.len(), self.channels_in);
        let dw = Tensor::real(&[n], input.weights().to_vec())?;
        match &self.encoder {
            Encoder::Learned(net) => {
                let coords = tape.constant(Tensor::real(&[n, self.dim], input.points().to_vec())?);
                let k = net.out_dim() / c;
                let b = net.forward(p, coords)?.mul_const(&dw, 0)?.reshape(&[n * c, k])?;
                x.reshape(&[bs, n * c])?.matmul(b)
            }
            Encoder::Fourier(basis) => {
                let phi = basis.eval(input.domain(), input.points())?;
                let j = basis.len();
                let phi = tape.constant(phi).mul_const(&dw, 0)?;
                x.transpose(1, 2)?.matmul(phi)?.reshape(&[bs, c * j])
            }
        }
    }

    pub fn map_latent<'t>(&self, p: &ParamVars<'t>, v: Var<'t>) -> Result<Var<'t>> {
        match &self.latent {
            LatentMap::Mlp(net) => net.forward(p, v),
            LatentMap::Diagonal(w) => v.mul_bcast(p.get(*w)),
            LatentMap::Identity => Ok(v),
        }
    }

    /// Outputs `(bs, m, c_out)` at the query points.
    pub fn decode<'t>(&self, p: &ParamVars<'t>, w: Var<'t>, query: &Discretization) -> Result<Var<'t>> {
        let tape = w.tape();
        let (bs, k) = (w.shape()[0], w.shape()[1]);
        let m = query.len();
        match &self.decoder {
            Decoder::Nomad(net) => {
                let wide = w.reshape(&[bs, 1, k])?.gather(1, &vec![0; m])?;
                let y = Tensor::real(&[bs, m, self.dim], query.points().repeat(bs))?;
                net.forward(p, Var::concat(&[wide, tape.constant(y)], 2)?)
            }
            Decoder::FourierLinear(basis) => {
                let j = basis.len();
                let phi = basis.eval(query.domain(), query.points())?;
                let phi_t = tape.constant(phi).transpose(0, 1)?;
                w.reshape(&[bs, self.channels_out, j])?
                    .matmul(phi_t)?
                    .transpose(1, 2)
            }
        }
    }
}

impl OperatorLayer for EncDec {
    fn forward<'t>(
        &self,
        p: &ParamVars<'t>,
        x: Var<'t>,
        input: &Discretization,
        query: &Discretization,
    ) -> Result<Var<'t>> {
        let v = self.encode(p, x, input)?;
        let w = self.map_latent(p, v)?;
        self.decode(p, w, query)
    }
}
