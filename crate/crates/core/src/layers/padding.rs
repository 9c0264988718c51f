use std::sync::Arc;

use crate::discretization::{Discretization, Domain, DomainKind, Field};
use crate::error::{Error, Result};

/// A bounded-grid field extended by replicated boundary values onto a torus
/// grid, together with what is needed to crop it back.
#[derive(Debug, Clone)]
pub struct PaddedField {
    pub field: Field,
    pub pad: usize,
    pub original: Arc<Discretization>,
}

impl PaddedField {
    /// Crop a field living on the padded grid (e.g. a layer output) back to
    /// the original points.
    pub fn crop(&self, padded: &Field) -> Result<Field> {
        unpad(padded, &self.original, self.pad)
    }
}

fn row_major(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (i, n)| acc * n + i)
}

/// For every point of the padded grid, the flat index of the original point
/// whose value it carries (nearest, i.e. clamped).
pub fn pad_indices(shape: &[usize], pad: usize) -> Vec<usize> {
    let padded: Vec<usize> = shape.iter().map(|n| n + 2 * pad).collect();
    let total: usize = padded.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0; shape.len()];
    for flat in 0..total {
        let mut rem = flat;
        for a in (0..shape.len()).rev() {
            let j = rem % padded[a];
            rem /= padded[a];
            idx[a] = j.saturating_sub(pad).min(shape[a] - 1);
        }
        out.push(row_major(&idx, shape));
    }
    out
}

/// Flat indices into the padded grid of the original points, in the
/// original order.
pub fn crop_indices(shape: &[usize], pad: usize) -> Vec<usize> {
    let padded: Vec<usize> = shape.iter().map(|n| n + 2 * pad).collect();
    let total: usize = shape.iter().product();
    let mut idx = vec![0; shape.len()];
    (0..total)
        .map(|flat| {
            let mut rem = flat;
            for a in (0..shape.len()).rev() {
                idx[a] = rem % shape[a] + pad;
                rem /= shape[a];
            }
            row_major(&idx, &padded)
        })
        .collect()
}

/// Pads `round(pad_fraction * n)` points per side and axis. The result
/// lives on a torus grid with the same spacing, so the physical pad width
/// stays fixed across resolutions.
pub fn domain_padding(field: &Field, pad_fraction: f64) -> Result<PaddedField> {
    if !(pad_fraction >= 0.0) || !pad_fraction.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "pad fraction must be nonnegative, got {pad_fraction}"
        )));
    }
    let disc = field.disc();
    if disc.domain().is_periodic() {
        return Err(Error::UnsupportedDomain("domain padding is for non-periodic grids".into()));
    }
    let shape = disc
        .grid_shape()
        .ok_or_else(|| Error::UnsupportedDomain("domain padding needs an equispaced grid".into()))?
        .to_vec();
    let n = shape[0];
    if n < 2 {
        return Err(Error::InvalidArgument("padding needs at least two points per axis".into()));
    }
    let pad = (pad_fraction * n as f64).round() as usize;
    let m = n + 2 * pad;
    let bounds: Vec<(f64, f64)> = disc
        .domain()
        .bounds()
        .iter()
        .map(|&(lo, hi)| {
            let h = (hi - lo) / (n - 1) as f64;
            let start = lo - pad as f64 * h;
            (start, start + m as f64 * h)
        })
        .collect();
    let kind = match disc.dim() {
        1 => DomainKind::Torus1d,
        _ => DomainKind::Torus2d,
    };
    let ext = Arc::new(Discretization::uniform_grid(&Domain::new(kind, bounds)?, m)?);
    let c = field.channels();
    let mut values = Vec::with_capacity(ext.len() * c);
    for i in pad_indices(&shape, pad) {
        values.extend_from_slice(field.row(i));
    }
    Ok(PaddedField {
        field: Field::new(ext, values, c)?,
        pad,
        original: disc.clone(),
    })
}

/// Crop a field on a padded grid back to `original`.
pub fn unpad(padded: &Field, original: &Arc<Discretization>, pad: usize) -> Result<Field> {
    let shape = original
        .grid_shape()
        .ok_or_else(|| Error::UnsupportedDomain("unpad needs a grid".into()))?;
    let expect: usize = shape.iter().map(|n| n + 2 * pad).product();
    if padded.len() != expect {
        return Err(Error::Shape(format!(
            "padded field has {} points, expected {expect}",
            padded.len()
        )));
    }
    let c = padded.channels();
    let mut values = Vec::with_capacity(original.len() * c);
    for i in crop_indices(shape, pad) {
        values.extend_from_slice(padded.row(i));
    }
    Field::new(original.clone(), values, c)
}
