use super::Domain;
use crate::error::{Error, Result};

/// Half-gap weights for sorted 1-D points. Bounded domains add the gap to
/// the nearest endpoint to the outer weights; torus domains wrap around.
pub fn riemann_weights_1d(points: &[f64], domain: &Domain) -> Result<Vec<f64>> {
    if domain.dim() != 1 {
        return Err(Error::UnsupportedDomain(format!(
            "Riemann weights need a 1-D domain, got {:?}",
            domain.kind()
        )));
    }
    let n = points.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no points".into()));
    }
    for (i, w) in points.windows(2).enumerate() {
        if w[1] == w[0] {
            return Err(Error::InvalidArgument(format!(
                "duplicate point {} at indices {i} and {}",
                w[0],
                i + 1
            )));
        }
        if w[1] < w[0] {
            return Err(Error::InvalidArgument(format!(
                "points must be strictly increasing ({} follows {})",
                w[1], w[0]
            )));
        }
    }
    if let Some(p) = points.iter().find(|p| !domain.contains(&[**p])) {
        return Err(Error::InvalidArgument(format!("point {p} lies outside the domain")));
    }
    let (a, b) = domain.bounds()[0];
    let len = b - a;
    if n == 1 {
        return Ok(vec![len]);
    }
    let mut w = vec![0.0; n];
    for i in 1..n - 1 {
        w[i] = (points[i + 1] - points[i - 1]) / 2.0;
    }
    if domain.is_periodic() {
        w[0] = (points[1] - (points[n - 1] - len)) / 2.0;
        w[n - 1] = (points[0] + len - points[n - 2]) / 2.0;
    } else {
        w[0] = (points[1] - points[0]) / 2.0 + (points[0] - a);
        w[n - 1] = (points[n - 1] - points[n - 2]) / 2.0 + (b - points[n - 1]);
    }
    Ok(w)
}

/// Importance weights `1 / (n p(x_i))` for points drawn from density `p`.
pub fn monte_carlo_weights(
    points: &[f64],
    dim: usize,
    density: impl Fn(&[f64]) -> f64,
) -> Result<Vec<f64>> {
    if dim == 0 || points.len() % dim != 0 || points.is_empty() {
        return Err(Error::Shape(format!(
            "{} coordinates do not form nonempty {dim}-dimensional points",
            points.len()
        )));
    }
    let n = points.len() / dim;
    points
        .chunks(dim)
        .enumerate()
        .map(|(i, x)| {
            let p = density(x);
            if p > 0.0 && p.is_finite() {
                Ok(1.0 / (n as f64 * p))
            } else {
                Err(Error::InvalidArgument(format!(
                    "density at point {i} {x:?} is {p} (must be positive)"
                )))
            }
        })
        .collect()
}
