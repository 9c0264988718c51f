use serde::{Deserialize, Serialize};

use crate::discretization::Field;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

pub const EPS: f64 = 1e-8;

/// Per-channel mean and standard deviation under quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn scale(&self) -> Vec<f64> {
        self.std.iter().map(|s| s.max(EPS)).collect()
    }

    fn check(&self, c: usize) -> Result<()> {
        if self.channels() != c || self.std.len() != c {
            return Err(Error::Shape(format!(
                "stats for {} channels applied to {c}",
                self.channels()
            )));
        }
        Ok(())
    }

    /// `(x - mean) / max(std, eps)` on a `(.., c)` batch.
    pub fn apply<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.check(*x.shape().last().unwrap_or(&0))?;
        let tape = x.tape();
        let s = self.scale();
        let c = s.len();
        let inv = tape.constant(Tensor::real(&[c], s.iter().map(|v| 1.0 / v).collect())?);
        let shift = tape.constant(Tensor::real(
            &[c],
            self.mean.iter().zip(&s).map(|(m, s)| -m / s).collect(),
        )?);
        x.mul_bcast(inv)?.add_bcast(shift)
    }

    /// Inverse of [`NormStats::apply`].
    pub fn invert<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.check(*x.shape().last().unwrap_or(&0))?;
        let tape = x.tape();
        let c = self.channels();
        let s = tape.constant(Tensor::real(&[c], self.scale())?);
        let m = tape.constant(Tensor::real(&[c], self.mean.clone())?);
        x.mul_bcast(s)?.add_bcast(m)
    }
}

pub fn normalization(field: &Field) -> NormStats {
    let c = field.channels();
    let w = field.disc().weights();
    let total: f64 = w.iter().sum();
    let mut mean = vec![0.0; c];
    for (i, wi) in w.iter().enumerate() {
        for (m, v) in mean.iter_mut().zip(field.row(i)) {
            *m += v * wi;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut var = vec![0.0; c];
    for (i, wi) in w.iter().enumerate() {
        for ((s, v), m) in var.iter_mut().zip(field.row(i)).zip(&mean) {
            *s += (v - m).powi(2) * wi;
        }
    }
    let std = var.iter().map(|s| (s / total).sqrt()).collect();
    NormStats { mean, std }
}

/// Average of per-sample statistics.
pub fn dataset_stats(fields: &[Field]) -> Result<NormStats> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidArgument("no fields to normalize over".into()))?;
    let c = first.channels();
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for f in fields {
        if f.channels() != c {
            return Err(Error::Shape("fields differ in channel count".into()));
        }
        let s = normalization(f);
        mean.iter_mut().zip(&s.mean).for_each(|(a, b)| *a += b);
        std.iter_mut().zip(&s.std).for_each(|(a, b)| *a += b);
    }
    let k = fields.len() as f64;
    mean.iter_mut().for_each(|a| *a /= k);
    std.iter_mut().for_each(|a| *a /= k);
    Ok(NormStats { mean, std })
}

/// A field known to be in standardized units. Only [`standardize`] builds
/// one, so a field cannot be standardized twice by accident.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedField(Field);

impl StandardizedField {
    pub fn field(&self) -> &Field {
        &self.0
    }

    pub fn into_inner(self) -> Field {
        self.0
    }

    /// Wrap a field that is already in standardized units (e.g. model
    /// output).
    pub fn assume(field: Field) -> Self {
        StandardizedField(field)
    }

    pub fn destandardize(&self, stats: &NormStats) -> Result<Field> {
        let f = &self.0;
        stats.check(f.channels())?;
        let s = stats.scale();
        let c = f.channels();
        let v = f
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v * s[i % c] + stats.mean[i % c])
            .collect();
        Field::new(f.disc().clone(), v, c)
    }
}

pub fn standardize(field: &Field, stats: &NormStats) -> Result<StandardizedField> {
    let c = field.channels();
    stats.check(c)?;
    let s = stats.scale();
    let v = field
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| (v - stats.mean[i % c]) / s[i % c])
        .collect();
    Ok(StandardizedField(Field::new(field.disc().clone(), v, c)?))
}
