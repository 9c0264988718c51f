//! End-to-end surrogates for the forcing-to-solution map: lifting,
//! a stack of blocks, projection, with positional features and
//! normalization statistics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{ConvRoute, DiscreteConv};
use crate::discretization::{Discretization, Field};
use crate::error::{Error, Result};
use crate::layers::{
    concat_features, field_batch, positional_features, standardize, Activation, FnoBlock, Mlp,
    NormStats, OperatorLayer, ParamVars, SpectralConv, StandardizedField,
};
use crate::tensor::{ParamStore, Tape, Var};

const PREDICT_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    #[default]
    Fno,
    /// FNO layout with each spectral convolution replaced by an
    /// index-based stencil of `2 * half_width + 1` taps per axis.
    ConvBaseline,
    /// One spectral convolution, `1 -> 1` channel, nothing else.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub dim: usize,
    pub width: usize,
    pub blocks: usize,
    /// Fourier modes per axis (FNO and linear).
    pub modes: usize,
    /// Stencil half width (conv baseline).
    pub half_width: usize,
    /// Positional-encoding frequencies `F`.
    pub pos_freqs: usize,
    pub projection_hidden: usize,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::Fno,
            dim: 2,
            width: 32,
            blocks: 2,
            modes: 16,
            half_width: 15,
            pos_freqs: 1,
            projection_hidden: 64,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.dim", self.dim),
            ("model.width", self.width),
            ("model.blocks", self.blocks),
            ("model.modes", self.modes),
            ("model.projection_hidden", self.projection_hidden),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config {
                    key: key.into(),
                    message: "must be positive".into(),
                });
            }
        }
        if !(1..=2).contains(&self.dim) {
            return Err(Error::Config {
                key: "model.dim".into(),
                message: format!("must be 1 or 2, got {}", self.dim),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvBlock {
    conv: DiscreteConv,
    skip: Mlp,
    mlp: Mlp,
}

impl OperatorLayer for ConvBlock {
    fn forward<'t>(
        &self,
        p: &ParamVars<'t>,
        x: Var<'t>,
        input: &Discretization,
        query: &Discretization,
    ) -> Result<Var<'t>> {
        let h = self.conv.forward(p, x, input, query)?.add(self.skip.forward(p, x)?)?;
        self.mlp.forward(p, h.gelu()?)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Fno(Vec<FnoBlock>),
    Conv(Vec<ConvBlock>),
    Linear(SpectralConv),
}

/// A trained or freshly initialized surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub input_stats: Option<NormStats>,
    pub output_stats: Option<NormStats>,
    lift: Option<Mlp>,
    body: Body,
    projection: Option<Mlp>,
}

impl Model {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.init_seed);
        let (d, c) = (config.dim, config.width);
        let (lift, body, projection) = match config.arch {
            Arch::Linear => (
                None,
                Body::Linear(SpectralConv::new(&mut store, "linear", d, config.modes, 1, 1)?),
                None,
            ),
            arch => {
                let c_in = 1 + 2 * config.pos_freqs * d;
                let lift = Mlp::new(&mut store, "lift", &[c_in, c], Activation::Identity)?;
                let body = if arch == Arch::Fno {
                    Body::Fno(
                        (0..config.blocks)
                            .map(|b| {
                                FnoBlock::new(&mut store, &format!("block{b}"), d, config.modes, c, &[c], Activation::Gelu)
                            })
                            .collect::<Result<_>>()?,
                    )
                } else {
                    Body::Conv(
                        (0..config.blocks)
                            .map(|b| {
                                let name = format!("block{b}");
                                Ok(ConvBlock {
                                    conv: DiscreteConv::new(&mut store, &format!("{name}.conv"), d, config.half_width, c, c)?
                                        .with_route(ConvRoute::Auto),
                                    skip: Mlp::new(&mut store, &format!("{name}.skip"), &[c, c], Activation::Identity)?,
                                    mlp: Mlp::new(&mut store, &format!("{name}.mlp"), &[c, c, c], Activation::Gelu)?,
                                })
                            })
                            .collect::<Result<_>>()?,
                    )
                };
                let projection = Mlp::new(
                    &mut store,
                    "projection",
                    &[c, config.projection_hidden, 1],
                    Activation::Gelu,
                )?;
                (Some(lift), body, Some(projection))
            }
        };
        Ok(Model {
            config: config.clone(),
            store,
            input_stats: None,
            output_stats: None,
            lift,
            body,
            projection,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.real_dof()
    }

    /// Record normalization statistics (computed on training data).
    pub fn set_stats(&mut self, input: NormStats, output: NormStats) {
        self.input_stats = Some(input);
        self.output_stats = Some(output);
    }

    fn stats(&self) -> Result<(&NormStats, &NormStats)> {
        match (&self.input_stats, &self.output_stats) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::InvalidArgument("model has no normalization statistics".into())),
        }
    }

    /// Map a standardized `(bs, n, 1)` batch to standardized outputs.
    pub fn forward<'t>(&self, p: &ParamVars<'t>, x: Var<'t>, disc: &Discretization) -> Result<Var<'t>> {
        let mut h = match &self.lift {
            Some(lift) => {
                let enc = positional_features(disc, self.config.pos_freqs)?;
                lift.forward(p, concat_features(x, &enc)?)?
            }
            None => x,
        };
        match &self.body {
            Body::Fno(blocks) => {
                for b in blocks {
                    h = b.forward(p, h, disc, disc)?;
                }
            }
            Body::Conv(blocks) => {
                for b in blocks {
                    h = b.forward(p, h, disc, disc)?;
                }
            }
            Body::Linear(conv) => h = conv.forward(p, h, disc, disc)?,
        }
        match &self.projection {
            Some(proj) => proj.forward(p, h),
            None => Ok(h),
        }
    }

    pub fn standardize_inputs(&self, fields: &[Field]) -> Result<Vec<StandardizedField>> {
        let (s, _) = self.stats()?;
        fields.iter().map(|f| standardize(f, s)).collect()
    }

    pub fn standardize_targets(&self, fields: &[Field]) -> Result<Vec<StandardizedField>> {
        let (_, s) = self.stats()?;
        fields.iter().map(|f| standardize(f, s)).collect()
    }

    /// Physical-unit predictions for fields sharing one discretization,
    /// evaluated in chunks of `PREDICT_CHUNK`.
    pub fn predict_batch(&self, forcing: &[Field]) -> Result<Vec<Field>> {
        let mut out = Vec::with_capacity(forcing.len());
        for chunk in forcing.chunks(PREDICT_CHUNK) {
            out.extend(self.predict_chunk(chunk)?);
        }
        Ok(out)
    }

    fn predict_chunk(&self, forcing: &[Field]) -> Result<Vec<Field>> {
        let (_, out_stats) = self.stats()?;
        let disc: Arc<Discretization> = forcing
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?
            .disc()
            .clone();
        let std_in: Vec<Field> = self
            .standardize_inputs(forcing)?
            .into_iter()
            .map(StandardizedField::into_inner)
            .collect();
        let tape = Tape::new();
        let p = ParamVars::constants(&tape, &self.store);
        let x = tape.constant(field_batch(&std_in)?);
        let y = self.forward(&p, x, &disc)?.value();
        let y = y.real_data()?;
        let n = disc.len();
        y.chunks(n)
            .map(|row| {
                StandardizedField::assume(Field::new(disc.clone(), row.to_vec(), 1)?).destandardize(out_stats)
            })
            .collect()
    }

    pub fn predict(&self, forcing: &Field) -> Result<Field> {
        Ok(self.predict_batch(std::slice::from_ref(forcing))?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_is_parameter_matched() {
        let fno = Model::new(&ModelConfig::default()).unwrap();
        let conv = Model::new(&ModelConfig {
            arch: Arch::ConvBaseline,
            ..ModelConfig::default()
        })
        .unwrap();
        let (a, b) = (fno.param_count() as f64, conv.param_count() as f64);
        assert!((a - b).abs() / a < 0.05, "{a} vs {b}");
    }

    #[test]
    fn same_seed_same_model() {
        let a = Model::new(&ModelConfig::default()).unwrap();
        let b = Model::new(&ModelConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_dim_rejected() {
        let e = Model::new(&ModelConfig {
            width: 0,
            ..ModelConfig::default()
        })
        .unwrap_err();
        assert!(e.is_validation());
    }
}
