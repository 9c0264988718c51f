//! Resolution sweeps, discretization-convergence drift, receptive-field
//! collapse and the empirical error decomposition.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::baselines::DiscreteConv;
use crate::data::{poisson_solve, PoissonDataset};
use crate::discretization::{subsample_grid_indices, Discretization, Field, RefinementChain};
use crate::error::{Error, Result};
use crate::layers::{ConvOperator, OperatorLayer};
use crate::losses::relative_l2;
use crate::model::Model;
use crate::tensor::ParamStore;

pub mod suite;

/// Anything that maps forcings to solutions on the forcing's points.
pub trait Surrogate {
    fn name(&self) -> String;
    fn predict_batch(&self, forcing: &[Field]) -> Result<Vec<Field>>;
}

impl Surrogate for Model {
    fn name(&self) -> String {
        serde_json::to_value(self.config.arch)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_else(|| "model".into())
    }

    fn predict_batch(&self, forcing: &[Field]) -> Result<Vec<Field>> {
        Model::predict_batch(self, forcing)
    }
}

/// The exact spectral solver wrapped as a surrogate. Subsampled forcings
/// are not exactly mean-zero, so the mean is projected out first.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoissonOracle;

impl Surrogate for PoissonOracle {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict_batch(&self, forcing: &[Field]) -> Result<Vec<Field>> {
        forcing
            .iter()
            .map(|f| {
                let mean = f.values().iter().sum::<f64>() / f.len() as f64;
                let centred = Field::new(f.disc().clone(), f.values().iter().map(|v| v - mean).collect(), 1)?;
                poisson_solve(&centred)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub resolution: usize,
    pub model: String,
    pub rel_l2_mean: f64,
    pub rel_l2_std: f64,
    pub n_samples: usize,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-sample relative errors at one resolution.
pub fn relative_errors(model: &dyn Surrogate, data: &PoissonDataset, resolution: usize) -> Result<Vec<f64>> {
    let (_, forcing, solution) = data.at_resolution(resolution)?;
    let preds = model.predict_batch(&forcing)?;
    preds.iter().zip(&solution).map(|(p, u)| relative_l2(p, u)).collect()
}

/// Mean and (population) standard deviation of the relative L2 error per
/// resolution, ascending.
pub fn resolution_sweep(model: &dyn Surrogate, data: &PoissonDataset, resolutions: &[usize]) -> Result<Vec<SweepRow>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let mut res = resolutions.to_vec();
    res.sort_unstable();
    res.dedup();
    res.into_iter()
        .map(|r| {
            let errs = relative_errors(model, data, r)?;
            let (mean, std) = mean_std(&errs);
            Ok(SweepRow {
                resolution: r,
                model: model.name(),
                rel_l2_mean: mean,
                rel_l2_std: std,
                n_samples: errs.len(),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("resolution,model,rel_l2_mean,rel_l2_std,n_samples\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:e},{:e},{}",
            r.resolution, r.model, r.rel_l2_mean, r.rel_l2_std, r.n_samples
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    /// Coarser level `k` of the pair `(k, k + 1)`.
    pub level: usize,
    /// Points at level `k`.
    pub n: usize,
    pub drift_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub rows: Vec<DriftRow>,
    /// `d_{k+1} <= 1.1 d_k` for every consecutive pair (drifts below
    /// `DRIFT_FLOOR` count as converged).
    pub nonincreasing: bool,
    /// Least-squares slope of `-log d` against `log n`.
    pub observed_order: f64,
}

pub const DRIFT_SLACK: f64 = 1.1;
pub const DRIFT_FLOOR: f64 = 1e-12;

impl DriftReport {
    pub fn drifts(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.drift_l2).collect()
    }

    pub fn last(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.drift_l2)
    }
}

pub fn drift_csv(report: &DriftReport) -> String {
    let mut s = String::from("level,n,drift_l2\n");
    for r in &report.rows {
        let _ = writeln!(s, "{},{},{:e}", r.level, r.n, r.drift_l2);
    }
    s
}

/// Weighted L2 norm of `a - b` over the points of `disc`.
fn l2_diff(disc: &Discretization, a: &[f64], b: &[f64], c: usize) -> f64 {
    disc.weights()
        .iter()
        .enumerate()
        .map(|(i, w)| (0..c).map(|ch| (a[i * c + ch] - b[i * c + ch]).powi(2)).sum::<f64>() * w)
        .sum::<f64>()
        .sqrt()
}

/// `d_k = sup_f ||M(f|X_{k+1}) - M(f|X_k)||` on the points of `X_k`, the
/// supremum taken over the fields `inputs` builds on each level. `op` must
/// return its output on the input's points.
pub fn discretization_convergence_test(
    op: impl Fn(&Field) -> Result<Field>,
    inputs: impl Fn(&Arc<Discretization>) -> Result<Vec<Field>>,
    chain: &RefinementChain,
) -> Result<DriftReport> {
    if chain.len() < 2 {
        return Err(Error::InvalidArgument("a drift sequence needs at least two levels".into()));
    }
    let outputs: Vec<Vec<Field>> = chain
        .levels()
        .iter()
        .map(|d| inputs(d)?.iter().map(&op).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for k in 0..chain.len() - 1 {
        let coarse = chain.level(k);
        let emb = chain.embedding(k);
        let mut worst: f64 = 0.0;
        for (gc, gf) in outputs[k].iter().zip(&outputs[k + 1]) {
            let c = gc.channels();
            if gf.channels() != c || gc.len() != coarse.len() {
                return Err(Error::Shape("operator outputs do not live on the input points".into()));
            }
            let restricted: Vec<f64> = emb.iter().flat_map(|&i| gf.row(i).to_vec()).collect();
            worst = worst.max(l2_diff(coarse, gc.values(), &restricted, c));
        }
        rows.push(DriftRow {
            level: k,
            n: coarse.len(),
            drift_l2: worst,
        });
    }
    let nonincreasing = rows
        .windows(2)
        .all(|w| w[1].drift_l2 <= DRIFT_SLACK * w[0].drift_l2 || w[1].drift_l2 <= DRIFT_FLOOR);
    Ok(DriftReport {
        observed_order: observed_order(&rows),
        rows,
        nonincreasing,
    })
}

fn observed_order(rows: &[DriftRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.drift_l2 > DRIFT_FLOOR)
        .map(|r| ((r.n as f64).ln(), -r.drift_l2.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::INFINITY;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseRow {
    pub n: usize,
    /// `||discrete_conv(f) - f * sum K||`.
    pub discrete_to_pointwise: f64,
    /// `||conv_operator(f) - windowed average of f||`.
    pub operator_to_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseReport {
    pub rows: Vec<CollapseRow>,
    /// `||f * sum K - window(f)||` on the finest level: the distance between
    /// the two limits.
    pub separation: f64,
}

/// Runs an index stencil and a box-kernel integral operator of radius `r`
/// along a 1-D torus chain. `window` is the exact windowed average
/// `(1/2r) int_{x-r}^{x+r} f`.
pub fn receptive_field_collapse_demo(
    store: &ParamStore,
    conv: &DiscreteConv,
    box_op: &ConvOperator,
    f: impl Fn(&[f64]) -> f64,
    window: impl Fn(&[f64]) -> f64,
    chain: &RefinementChain,
) -> Result<CollapseReport> {
    let taps = store.get(conv.taps).value.to_vec_real()?;
    let mass: f64 = taps.iter().sum();
    let mut rows = Vec::new();
    let mut separation = 0.0;
    for d in chain.levels() {
        let field = Field::scalar_fn(d.clone(), &f)?;
        let pointwise: Vec<f64> = field.values().iter().map(|v| v * mass).collect();
        let win = Field::scalar_fn(d.clone(), &window)?;
        let g = conv.apply(store, &field, d)?;
        let h = box_op.apply(store, &field, d)?;
        rows.push(CollapseRow {
            n: d.len(),
            discrete_to_pointwise: l2_diff(d, g.values(), &pointwise, 1),
            operator_to_window: l2_diff(d, h.values(), win.values(), 1),
        });
        separation = l2_diff(d, &pointwise, win.values(), 1);
    }
    Ok(CollapseReport { rows, separation })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionEntry {
    pub sample: usize,
    /// Relative error at the training resolution.
    pub err_train: f64,
    /// Relative error at the query resolution.
    pub err_query: f64,
    /// `||M(f|X) - M(f|X_fine)|| / ||u||` on the points of `X`.
    pub drift_train: f64,
    /// `||M(f|X~) - M(f|X_fine)|| / ||u||` on the points of `X~`.
    pub drift_query: f64,
    /// `err_query <= (1 + slack) (err_train + drift_train + drift_query)`.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub train_res: usize,
    pub query_res: usize,
    pub fine_res: usize,
    pub slack: f64,
    pub entries: Vec<DecompositionEntry>,
}

impl DecompositionReport {
    pub fn fraction_holding(&self) -> f64 {
        self.entries.iter().filter(|e| e.holds).count() as f64 / self.entries.len().max(1) as f64
    }
}

fn relative_drift(coarse: &Field, fine: &Field, target: &Field) -> Result<f64> {
    let idx = subsample_grid_indices(fine.disc(), coarse.disc().grid_shape().expect("grid")[0])?;
    let restricted: Vec<f64> = idx.iter().map(|&i| fine.values()[i]).collect();
    let d = coarse.disc();
    let norm = l2_diff(d, target.values(), &vec![0.0; target.len()], 1);
    if norm == 0.0 {
        return Err(Error::DivisionGuard("target has zero norm".into()));
    }
    Ok(l2_diff(d, coarse.values(), &restricted, 1) / norm)
}

/// Observable part of the error chain: test error at the training
/// resolution, drift of both resolutions to the dataset's native grid, and
/// whether the triangle inequality holds with relative `slack`.
pub fn error_decomposition(
    model: &dyn Surrogate,
    data: &PoissonDataset,
    train_res: usize,
    query_res: usize,
    slack: f64,
) -> Result<DecompositionReport> {
    if train_res == query_res {
        return Err(Error::InvalidArgument("query resolution must differ from the training one".into()));
    }
    let fine_res = data.native_resolution();
    let (_, f_tr, u_tr) = data.at_resolution(train_res)?;
    let (_, f_q, u_q) = data.at_resolution(query_res)?;
    let p_tr = model.predict_batch(&f_tr)?;
    let p_q = model.predict_batch(&f_q)?;
    let p_fine = model.predict_batch(&data.forcing)?;
    let mut entries = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let err_train = relative_l2(&p_tr[i], &u_tr[i])?;
        let err_query = relative_l2(&p_q[i], &u_q[i])?;
        let drift_train = relative_drift(&p_tr[i], &p_fine[i], &u_tr[i])?;
        let drift_query = relative_drift(&p_q[i], &p_fine[i], &u_q[i])?;
        let bound = (1.0 + slack) * (err_train + drift_train + drift_query);
        entries.push(DecompositionEntry {
            sample: i,
            err_train,
            err_query,
            drift_train,
            drift_query,
            holds: err_query <= bound,
        });
    }
    Ok(DecompositionReport {
        train_res,
        query_res,
        fine_res,
        slack,
        entries,
    })
}
