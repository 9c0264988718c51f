use serde::{Deserialize, Serialize};

use super::{check_batch, require_same_points, Activation, Mlp, OperatorLayer, ParamVars};
use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub channels_in: usize,
    pub heads: usize,
    /// Key/query width per head.
    pub d_att: usize,
    /// Value width per head.
    pub d_value: usize,
    /// Defaults to `d_att^(-1/2)`.
    pub temperature: Option<f64>,
    /// Output width of a final linear map over the concatenated heads;
    /// `None` returns the heads as they are.
    pub channels_out: Option<usize>,
}

/// Self-attention with quadrature weights. Queries are the input points, so
/// outputs exist only there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub config: AttentionConfig,
    pub key: Mlp,
    pub query: Mlp,
    pub value: Mlp,
    pub output: Option<Mlp>,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, config: AttentionConfig) -> Result<Self> {
        let AttentionConfig {
            channels_in: c,
            heads,
            d_att,
            d_value,
            ..
        } = config;
        if heads == 0 || d_att == 0 || d_value == 0 {
            return Err(Error::InvalidArgument("attention widths must be positive".into()));
        }
        if let Some(t) = config.temperature {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument(format!("temperature must be positive, got {t}")));
            }
        }
        let lin = |store: &mut ParamStore, part: &str, out: usize| {
            Mlp::new(store, &format!("{name}.{part}"), &[c, out], Activation::Identity)
        };
        let key = lin(store, "key", heads * d_att)?;
        let query = lin(store, "query", heads * d_att)?;
        let value = lin(store, "value", heads * d_value)?;
        let output = match config.channels_out {
            Some(co) => Some(Mlp::new(
                store,
                &format!("{name}.output"),
                &[heads * d_value, co],
                Activation::Identity,
            )?),
            None => None,
        };
        Ok(Attention {
            config,
            key,
            query,
            value,
            output,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.config
            .temperature
            .unwrap_or(1.0 / (self.config.d_att as f64).sqrt())
    }
}

impl OperatorLayer for Attention {
    fn forward<'t>(
        &self,
        p: &ParamVars<'t>,
        x: Var<'t>,
        input: &Discretization,
        query: &Discretization,
    ) -> Result<Var<'t>> {
        require_same_points(input, query, "self-attention")?;
        check_batch(x, input.len(), Some(self.config.channels_in), "attention")?;
        let (da, dv) = (self.config.d_att, self.config.d_value);
        let k = self.key.forward(p, x)?;
        let q = self.query.forward(p, x)?;
        let v = self.value.forward(p, x)?;
        let tau = self.temperature();
        let heads = (0..self.config.heads)
            .map(|h| {
                let kh = k.slice(2, h * da, da)?.transpose(1, 2)?;
                let scores = q.slice(2, h * da, da)?.bmm(kh)?.scale(tau);
                scores
                    .softmax_last(Some(input.weights()))?
                    .bmm(v.slice(2, h * dv, dv)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let out = if heads.len() == 1 {
            heads[0]
        } else {
            Var::concat(&heads, 2)?
        };
        match &self.output {
            Some(o) => o.forward(p, out),
            None => Ok(out),
        }
    }
}
