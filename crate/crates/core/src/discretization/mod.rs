//! Domains, point clouds with quadrature weights, and numerical integration.

mod delaunay;
mod quadrature;
mod refine;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use delaunay::{delaunay_weights_2d, triangulate};
pub use quadrature::{monte_carlo_weights, riemann_weights_1d};
pub use refine::{refine, subsample, subsample_grid_indices, RefinementChain};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Interval,
    Torus1d,
    Square,
    Torus2d,
}

impl DomainKind {
    pub fn dim(self) -> usize {
        match self {
            DomainKind::Interval | DomainKind::Torus1d => 1,
            DomainKind::Square | DomainKind::Torus2d => 2,
        }
    }

    pub fn is_periodic(self) -> bool {
        matches!(self, DomainKind::Torus1d | DomainKind::Torus2d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    kind: DomainKind,
    bounds: Vec<(f64, f64)>,
}

impl Domain {
    pub fn new(kind: DomainKind, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.len() != kind.dim() {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} needs {} bounds, got {}",
                kind.dim(),
                bounds.len()
            )));
        }
        if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidArgument(format!(
                "domain bounds must satisfy lower < upper, got [{lo}, {hi}]"
            )));
        }
        Ok(Domain { kind, bounds })
    }

    /// `kind` on the unit cube.
    pub fn unit(kind: DomainKind) -> Self {
        Domain {
            kind,
            bounds: vec![(0.0, 1.0); kind.dim()],
        }
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn is_periodic(&self) -> bool {
        self.kind.is_periodic()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| hi - lo).collect()
    }

    pub fn measure(&self) -> f64 {
        self.lengths().iter().product()
    }

    /// Whether `p` lies in the domain; torus kinds use the half-open cell.
    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter().zip(&self.bounds).all(|(&x, &(lo, hi))| {
                if self.is_periodic() {
                    x >= lo && x < hi
                } else {
                    x >= lo && x <= hi
                }
            })
    }

    /// Coordinate difference `b - a`, wrapped to the nearest image on torus
    /// axes.
    pub fn delta(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        for (d, ((&x, &y), &(lo, hi))) in a.iter().zip(b).zip(&self.bounds).enumerate() {
            let mut diff = y - x;
            if self.is_periodic() {
                let len = hi - lo;
                diff -= len * (diff / len).round();
            }
            out[d] = diff;
        }
    }

    /// Euclidean distance under the periodic metric on torus kinds.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut buf = [0.0; 3];
        let d = self.dim();
        self.delta(a, b, &mut buf[..d]);
        buf[..d].iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// How a discretization's weights were produced; subsampling re-applies the
/// same rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    Grid,
    Riemann,
    Delaunay,
    MonteCarlo,
    Explicit,
}

/// Point cloud on a domain with per-point quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    domain: Domain,
    points: Vec<f64>,
    weights: Vec<f64>,
    grid: Option<Vec<usize>>,
    rule: WeightRule,
}

impl Discretization {
    /// Validating constructor for explicit weights. `points` is `n x d`
    /// row-major.
    pub fn new(domain: Domain, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::build(domain, points, weights, None, WeightRule::Explicit)
    }

    pub(crate) fn build(
        domain: Domain,
        points: Vec<f64>,
        weights: Vec<f64>,
        grid: Option<Vec<usize>>,
        rule: WeightRule,
    ) -> Result<Self> {
        let d = domain.dim();
        if points.len() % d != 0 {
            return Err(Error::Shape(format!(
                "{} coordinates do not form {d}-dimensional points",
                points.len()
            )));
        }
        let n = points.len() / d;
        if n == 0 {
            return Err(Error::InvalidArgument("a discretization needs at least one point".into()));
        }
        if weights.len() != n {
            return Err(Error::Shape(format!("{} weights for {n} points", weights.len())));
        }
        if let Some(i) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight {i} is {} (must be finite and nonnegative)",
                weights[i]
            )));
        }
        if let Some(i) = (0..n).find(|&i| !domain.contains(&points[i * d..(i + 1) * d])) {
            return Err(Error::InvalidArgument(format!(
                "point {i} {:?} lies outside the domain",
                &points[i * d..(i + 1) * d]
            )));
        }
        Ok(Discretization {
            domain,
            points,
            weights,
            grid,
            rule,
        })
    }

    /// Equispaced tensor grid with `n_per_axis` points per axis in row-major
    /// order (last axis fastest). Torus kinds exclude the identified right
    /// endpoint and use equal weights; bounded kinds include both endpoints
    /// and use Riemann weights per axis.
    pub fn uniform_grid(domain: &Domain, n_per_axis: usize) -> Result<Self> {
        if n_per_axis == 0 {
            return Err(Error::InvalidArgument("n_per_axis must be positive".into()));
        }
        let d = domain.dim();
        let axes: Vec<Vec<f64>> = domain
            .bounds()
            .iter()
            .map(|&(lo, hi)| axis_points(lo, hi, n_per_axis, domain.is_periodic()))
            .collect();
        let axis_weights: Vec<Vec<f64>> = if domain.is_periodic() {
            let total = n_per_axis.pow(d as u32) as f64;
            let w = domain.measure() / total;
            return Self::tensor_grid(domain, &axes, vec![w; n_per_axis.pow(d as u32)]);
        } else {
            domain
                .bounds()
                .iter()
                .zip(&axes)
                .map(|(&(lo, hi), pts)| {
                    riemann_weights_1d(pts, &Domain::new(DomainKind::Interval, vec![(lo, hi)])?)
                })
                .collect::<Result<_>>()?
        };
        let total = n_per_axis.pow(d as u32);
        let mut weights = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for a in (0..d).rev() {
                w *= axis_weights[a][rem % n_per_axis];
                rem /= n_per_axis;
            }
            weights.push(w);
        }
        Self::tensor_grid(domain, &axes, weights)
    }

    fn tensor_grid(domain: &Domain, axes: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let d = axes.len();
        let n = axes[0].len();
        let total = n.pow(d as u32);
        let mut points = Vec::with_capacity(total * d);
        for flat in 0..total {
            let mut idx = vec![0; d];
            let mut rem = flat;
            for a in (0..d).rev() {
                idx[a] = rem % n;
                rem /= n;
            }
            for a in 0..d {
                points.push(axes[a][idx[a]]);
            }
        }
        Self::build(
            domain.clone(),
            points,
            weights,
            Some(vec![n; d]),
            WeightRule::Grid,
        )
    }

    /// Sorted 1-D points with Riemann (trapezoid-type) weights.
    pub fn riemann_1d(domain: &Domain, points: Vec<f64>) -> Result<Self> {
        let w = riemann_weights_1d(&points, domain)?;
        Self::build(domain.clone(), points, w, None, WeightRule::Riemann)
    }

    /// 2-D cloud with Delaunay weights (they cover the convex hull).
    pub fn delaunay_2d(domain: &Domain, points: Vec<f64>) -> Result<Self> {
        if domain.dim() != 2 {
            return Err(Error::UnsupportedDomain(
                "Delaunay weights need a 2-D domain".into(),
            ));
        }
        let w = delaunay_weights_2d(&points)?;
        Self::build(domain.clone(), points, w, None, WeightRule::Delaunay)
    }

    /// Samples from `density` with importance weights `1 / (n p(x_i))`.
    pub fn monte_carlo(
        domain: &Domain,
        points: Vec<f64>,
        density: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let w = monte_carlo_weights(&points, domain.dim(), density)?;
        Self::build(domain.clone(), points, w, None, WeightRule::MonteCarlo)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Points per axis when this is a tensor grid.
    pub fn grid_shape(&self) -> Option<&[usize]> {
        self.grid.as_deref()
    }

    pub fn rule(&self) -> WeightRule {
        self.rule
    }

    /// Grid spacing per axis for equispaced grids.
    pub fn spacing(&self) -> Option<Vec<f64>> {
        let shape = self.grid.as_ref()?;
        Some(
            self.domain
                .bounds()
                .iter()
                .zip(shape)
                .map(|(&(lo, hi), &n)| {
                    if self.domain.is_periodic() {
                        (hi - lo) / n as f64
                    } else if n > 1 {
                        (hi - lo) / (n - 1) as f64
                    } else {
                        hi - lo
                    }
                })
                .collect(),
        )
    }

    /// Same points with each weight replaced.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::build(
            self.domain.clone(),
            self.points.clone(),
            weights,
            self.grid.clone(),
            WeightRule::Explicit,
        )
    }

    /// Equispaced torus grid, required by FFT-based layers.
    pub fn require_torus_grid(&self) -> Result<&[usize]> {
        match (&self.grid, self.domain.is_periodic()) {
            (Some(shape), true) => Ok(shape),
            _ => Err(Error::UnsupportedDomain(format!(
                "an equispaced torus grid is required, got a {:?} {:?} discretization",
                self.domain.kind(),
                self.rule
            ))),
        }
    }
}

pub(crate) fn axis_points(lo: f64, hi: f64, n: usize, periodic: bool) -> Vec<f64> {
    let len = hi - lo;
    if periodic {
        (0..n).map(|i| lo + len * (i as f64 / n as f64)).collect()
    } else if n == 1 {
        vec![lo + 0.5 * len]
    } else {
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + len * (i as f64 / (n - 1) as f64)
                }
            })
            .collect()
    }
}

/// Function values (`n x c`, row-major) on a discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    disc: Arc<Discretization>,
    values: Vec<f64>,
    channels: usize,
}

impl Field {
    pub fn new(disc: Arc<Discretization>, values: Vec<f64>, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("a field needs at least one channel".into()));
        }
        if values.len() != disc.len() * channels {
            return Err(Error::Shape(format!(
                "{} values for {} points x {channels} channels",
                values.len(),
                disc.len()
            )));
        }
        Ok(Field {
            disc,
            values,
            channels,
        })
    }

    /// Sample `f` at every point of `disc`.
    pub fn from_fn(
        disc: Arc<Discretization>,
        channels: usize,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(disc.len() * channels);
        for i in 0..disc.len() {
            let v = f(disc.point(i));
            if v.len() != channels {
                return Err(Error::Shape(format!(
                    "function returned {} channels, expected {channels}",
                    v.len()
                )));
            }
            values.extend(v);
        }
        Self::new(disc, values, channels)
    }

    pub fn scalar_fn(disc: Arc<Discretization>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Self::from_fn(disc, 1, |x| vec![f(x)])
    }

    pub fn disc(&self) -> &Arc<Discretization> {
        &self.disc
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.disc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disc.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    /// Weighted sum per channel.
    pub fn integrate(&self) -> Vec<f64> {
        integrate(self)
    }
}

/// Quadrature `sum_i f(x_i) w_i` per channel.
pub fn integrate(field: &Field) -> Vec<f64> {
    let c = field.channels;
    let mut out = vec![0.0; c];
    for (row, w) in field.values.chunks(c).zip(field.disc.weights()) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v * w);
    }
    out
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    #[test]
    fn torus_grids_have_equal_weights() {
        let d = Discretization::uniform_grid(&Domain::unit(DomainKind::Torus1d), 4).unwrap();
        assert_eq!(d.points(), &[0.0, 0.25, 0.5, 0.75]);
        assert_eq!(d.weights(), &[0.25; 4]);
        let d2 = Discretization::uniform_grid(&Domain::unit(DomainKind::Torus2d), 2).unwrap();
        assert_eq!(d2.len(), 4);
        assert_eq!(d2.weights(), &[0.25; 4]);
    }

    #[test]
    fn interval_grid_uses_riemann_boundary_rule() {
        let d = Discretization::uniform_grid(&Domain::unit(DomainKind::Interval), 3).unwrap();
        assert_eq!(d.points(), &[0.0, 0.5, 1.0]);
        assert_eq!(d.weights(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn zero_points_per_axis_rejected() {
        assert!(matches!(
            Discretization::uniform_grid(&Domain::unit(DomainKind::Square), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn bad_bounds_rejected() {
        assert!(Domain::new(DomainKind::Interval, vec![(1.0, 1.0)]).is_err());
    }

    #[test]
    fn integrate_constant_and_sine() {
        let disc = Arc::new(
            Discretization::uniform_grid(&Domain::unit(DomainKind::Torus1d), 64).unwrap(),
        );
        let c = Field::scalar_fn(disc.clone(), |_| 3.5).unwrap();
        assert!((integrate(&c)[0] - 3.5).abs() < 1e-14);
        let s = Field::scalar_fn(disc, |x| (2.0 * PI * x[0]).sin()).unwrap();
        assert!(integrate(&s)[0].abs() < 1e-12);
    }

    #[test]
    fn integrate_x_squared_on_riemann_grid() {
        let disc = Arc::new(
            Discretization::uniform_grid(&Domain::unit(DomainKind::Interval), 1000).unwrap(),
        );
        let f = Field::scalar_fn(disc, |x| x[0] * x[0]).unwrap();
        assert!((integrate(&f)[0] - 1.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn square_grid_weights_sum_to_area() {
        let dom = Domain::new(DomainKind::Square, vec![(0.0, 2.0), (-1.0, 1.0)]).unwrap();
        let d = Discretization::uniform_grid(&dom, 7).unwrap();
        let s: f64 = d.weights().iter().sum();
        assert!((s - 4.0).abs() < 1e-12);
    }

    #[test]
    fn field_shape_checked() {
        let disc = Arc::new(
            Discretization::uniform_grid(&Domain::unit(DomainKind::Torus1d), 4).unwrap(),
        );
        assert!(Field::new(disc.clone(), vec![0.0; 5], 1).is_err());
        assert!(Field::new(disc, vec![], 0).is_err());
    }

    #[test]
    fn periodic_distance_wraps() {
        let t = Domain::unit(DomainKind::Torus1d);
        assert!((t.distance(&[0.05], &[0.95]) - 0.1).abs() < 1e-12);
        let i = Domain::unit(DomainKind::Interval);
        assert!((i.distance(&[0.05], &[0.95]) - 0.9).abs() < 1e-12);
    }
}
