use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Discretization, Field, WeightRule};
use crate::error::{Error, Result};

/// Nested discretizations `X_1 ⊆ X_2 ⊆ ...`.
///
/// Grid levels are stored in row-major grid order (what FFT layers need);
/// `embedding(k)` maps each point of level `k` to its index in level `k + 1`
/// and [`nested`](Self::nested) reorders a level so the previous level's
/// points come first.
#[derive(Debug, Clone)]
pub struct RefinementChain {
    levels: Vec<Arc<Discretization>>,
    embeddings: Vec<Vec<usize>>,
}

impl RefinementChain {
    /// Chain of clouds where each level holds the previous one as a prefix.
    pub fn from_prefix_levels(levels: Vec<Discretization>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("empty refinement chain".into()));
        }
        for (k, w) in levels.windows(2).enumerate() {
            let (coarse, fine) = (&w[0], &w[1]);
            if coarse.domain() != fine.domain()
                || coarse.len() > fine.len()
                || fine.points()[..coarse.points().len()] != *coarse.points()
            {
                return Err(Error::InvalidArgument(format!(
                    "level {k} is not a prefix of level {}",
                    k + 1
                )));
            }
        }
        let embeddings = levels.windows(2).map(|w| (0..w[0].len()).collect()).collect();
        Ok(RefinementChain {
            levels: levels.into_iter().map(Arc::new).collect(),
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, k: usize) -> &Arc<Discretization> {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[Arc<Discretization>] {
        &self.levels
    }

    pub fn finest(&self) -> &Arc<Discretization> {
        self.levels.last().unwrap()
    }

    /// Index in level `k + 1` of each point of level `k`.
    pub fn embedding(&self, k: usize) -> &[usize] {
        &self.embeddings[k]
    }

    /// Level `k` reordered so level `k - 1` (itself reordered the same way)
    /// forms a prefix; weights follow their points.
    pub fn nested(&self, k: usize) -> Result<Discretization> {
        let order = self.nested_order(k);
        let d = self.levels[k].dim();
        let src = &self.levels[k];
        let mut pts = Vec::with_capacity(src.points().len());
        let mut w = Vec::with_capacity(src.len());
        for &i in &order {
            pts.extend_from_slice(&src.points()[i * d..(i + 1) * d]);
            w.push(src.weights()[i]);
        }
        Discretization::build(src.domain().clone(), pts, w, None, src.rule())
    }

    fn nested_order(&self, k: usize) -> Vec<usize> {
        let n = self.levels[k].len();
        if k == 0 {
            return (0..n).collect();
        }
        let prev: Vec<usize> = self
            .nested_order(k - 1)
            .into_iter()
            .map(|i| self.embeddings[k - 1][i])
            .collect();
        let mut used = vec![false; n];
        prev.iter().for_each(|&i| used[i] = true);
        let mut order = prev;
        order.extend((0..n).filter(|&i| !used[i]));
        order
    }
}

fn refined_count(n: usize, periodic: bool) -> usize {
    if periodic {
        2 * n
    } else {
        2 * n - 1
    }
}

/// Dyadic refinement of a grid: `levels` additional levels, each doubling
/// the cells per axis.
pub fn refine(disc: &Discretization, levels: usize) -> Result<RefinementChain> {
    let shape = disc
        .grid_shape()
        .filter(|_| disc.rule() == WeightRule::Grid)
        .ok_or_else(|| Error::InvalidArgument("refine needs a uniform grid discretization".into()))?
        .to_vec();
    let periodic = disc.domain().is_periodic();
    if !periodic && shape[0] < 2 {
        return Err(Error::InvalidArgument(
            "refining a bounded grid needs at least 2 points per axis".into(),
        ));
    }
    let d = shape.len();
    let mut out = vec![Arc::new(disc.clone())];
    let mut embeddings = Vec::new();
    let mut n = shape[0];
    for _ in 0..levels {
        let m = refined_count(n, periodic);
        let fine = Discretization::uniform_grid(disc.domain(), m)?;
        let total = n.pow(d as u32);
        let emb = (0..total)
            .map(|flat| {
                let mut rem = flat;
                let mut idx = 0;
                let mut stride = 1;
                for _ in 0..d {
                    idx += 2 * (rem % n) * stride;
                    rem /= n;
                    stride *= m;
                }
                idx
            })
            .collect();
        embeddings.push(emb);
        out.push(Arc::new(fine));
        n = m;
    }
    Ok(RefinementChain {
        levels: out,
        embeddings,
    })
}

/// Row-major indices of the stride-subsampled grid with `m` points per axis.
pub fn subsample_grid_indices(disc: &Discretization, m: usize) -> Result<Vec<usize>> {
    let shape = disc
        .grid_shape()
        .ok_or_else(|| Error::InvalidArgument("not a grid discretization".into()))?;
    let n = shape[0];
    let d = shape.len();
    let stride = if disc.domain().is_periodic() {
        (m > 0 && n % m == 0).then(|| n / m)
    } else if m == 1 {
        None
    } else {
        (m >= 2 && (n - 1) % (m - 1) == 0).then(|| (n - 1) / (m - 1))
    }
    .ok_or_else(|| {
        Error::InvalidArgument(format!(
            "cannot stride-subsample {n} points per axis to {m}"
        ))
    })?;
    let total = m.pow(d as u32);
    Ok((0..total)
        .map(|flat| {
            let mut rem = flat;
            let mut idx = 0;
            let mut s = 1;
            for _ in 0..d {
                idx += (rem % m) * stride * s;
                rem /= m;
                s *= n;
            }
            idx
        })
        .collect())
}

fn gather(field: &Field, idx: &[usize]) -> Vec<f64> {
    let mut v = Vec::with_capacity(idx.len() * field.channels());
    for &i in idx {
        v.extend_from_slice(field.row(i));
    }
    v
}

/// Subset of `target_n` points with weights recomputed by the rule that
/// produced the original ones: a stride for grids (`target_n` must be a
/// perfect power of a compatible per-axis count), a seeded uniform subset
/// without replacement for clouds.
pub fn subsample(field: &Field, target_n: usize, seed: u64) -> Result<Field> {
    let disc = field.disc();
    let n = disc.len();
    if target_n == 0 || target_n > n {
        return Err(Error::InvalidArgument(format!(
            "target_n must be in 1..={n}, got {target_n}"
        )));
    }
    let c = field.channels();
    if disc.rule() == WeightRule::Grid {
        let d = disc.dim();
        let m = (target_n as f64).powf(1.0 / d as f64).round() as usize;
        if m.pow(d as u32) != target_n {
            return Err(Error::InvalidArgument(format!(
                "{target_n} is not a {d}-dimensional grid size"
            )));
        }
        let idx = subsample_grid_indices(disc, m)?;
        let sub = Discretization::uniform_grid(disc.domain(), m)?;
        return Field::new(Arc::new(sub), gather(field, &idx), c);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, target_n).into_vec();
    idx.sort_unstable();
    let pts: Vec<f64> = idx.iter().flat_map(|&i| disc.point(i).to_vec()).collect();
    let sub = match disc.rule() {
        WeightRule::Riemann => {
            idx.sort_by(|&a, &b| disc.point(a)[0].total_cmp(&disc.point(b)[0]));
            let pts = idx.iter().map(|&i| disc.point(i)[0]).collect();
            Discretization::riemann_1d(disc.domain(), pts)?
        }
        WeightRule::Delaunay => Discretization::delaunay_2d(disc.domain(), pts)?,
        WeightRule::MonteCarlo => {
            let scale = n as f64 / target_n as f64;
            let w = idx.iter().map(|&i| disc.weights()[i] * scale).collect();
            Discretization::build(disc.domain().clone(), pts, w, None, WeightRule::MonteCarlo)?
        }
        WeightRule::Explicit | WeightRule::Grid => {
            return Err(Error::InvalidArgument(
                "explicit weights have no rule to recompute after subsampling".into(),
            ));
        }
    };
    Field::new(Arc::new(sub), gather(field, &idx), c)
}

#[cfg(test)]
mod tests {
    use super::super::{integrate, Domain, DomainKind};
    use super::*;

    #[test]
    fn torus_refinement_nests() {
        let d = Discretization::uniform_grid(&Domain::unit(DomainKind::Torus1d), 4).unwrap();
        let chain = refine(&d, 1).unwrap();
        assert_eq!(chain.level(1).len(), 8);
        let nested = chain.nested(1).unwrap();
        assert_eq!(&nested.points()[..4], d.points());
    }

    #[test]
    fn square_refinement_nests_over_levels() {
        let d = Discretization::uniform_grid(&Domain::unit(DomainKind::Square), 3).unwrap();
        let chain = refine(&d, 3).unwrap();
        assert_eq!(chain.finest().len(), 17 * 17);
        for k in 1..chain.len() {
            let prev = chain.nested(k - 1).unwrap();
            let cur = chain.nested(k).unwrap();
            assert_eq!(&cur.points()[..prev.points().len()], prev.points());
            assert!((cur.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn refine_rejects_clouds() {
        let d = Discretization::riemann_1d(&Domain::unit(DomainKind::Interval), vec![0.1, 0.4]).unwrap();
        assert!(refine(&d, 1).is_err());
    }

    #[test]
    fn subsample_constant_field_keeps_integral() {
        let d = Arc::new(Discretization::uniform_grid(&Domain::unit(DomainKind::Torus2d), 8).unwrap());
        let f = Field::scalar_fn(d, |_| 2.0).unwrap();
        let s = subsample(&f, 16, 0).unwrap();
        assert_eq!(s.len(), 16);
        assert!(s.values().iter().all(|&v| v == 2.0));
        assert!((integrate(&s)[0] - 2.0).abs() < 1e-14);
        assert!(subsample(&f, 65, 0).is_err());
        assert!(subsample(&f, 9, 0).is_err());
    }

    #[test]
    fn subsample_cloud_reweights_by_delaunay() {
        let mut pts = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        pts.extend((0..80).map(|i| (0.1 + (i as f64 * 0.618_034)).fract() * 0.9 + 0.05));
        let d = Arc::new(Discretization::delaunay_2d(&Domain::unit(DomainKind::Square), pts).unwrap());
        let f = Field::scalar_fn(d, |x| x[0]).unwrap();
        let s = subsample(&f, 20, 3).unwrap();
        let sum: f64 = s.disc().weights().iter().sum();
        let hull = crate::discretization::delaunay_weights_2d(s.disc().points()).unwrap();
        assert!((sum - hull.iter().sum::<f64>()).abs() < 1e-12);
        for i in 0..s.len() {
            assert_eq!(s.values()[i], s.disc().point(i)[0]);
        }
    }
}
