//! Function-space losses under quadrature, spectral and finite-difference
//! derivatives, and the Poisson residual.
//!
//! The `*_var` functions act on `(bs, n, c)` batches on the tape and return
//! the batch mean; the plain functions take [`Field`]s.

use serde::{Deserialize, Serialize};

use crate::discretization::{Discretization, Field};
use crate::error::{Error, Result};
use crate::layers::grid_view;
use crate::tensor::{wavenumber, Tape, Tensor, Var, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    #[default]
    Fourier,
    CentralDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L2,
    RelativeL2,
    H1(DerivativeMode),
    /// Needs the forcing; ignores the target.
    PoissonResidual,
}

/// Fixed nonnegative combination of loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    terms: Vec<(LossKind, f64)>,
}

impl LossSpec {
    pub fn new(terms: Vec<(LossKind, f64)>) -> Result<Self> {
        if terms.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("loss weights must be finite and nonnegative".into()));
        }
        if !terms.iter().any(|(_, w)| *w > 0.0) {
            return Err(Error::InvalidArgument("at least one loss weight must be positive".into()));
        }
        Ok(LossSpec { terms })
    }

    pub fn single(kind: LossKind) -> Self {
        LossSpec {
            terms: vec![(kind, 1.0)],
        }
    }

    pub fn terms(&self) -> &[(LossKind, f64)] {
        &self.terms
    }

    pub fn needs_forcing(&self) -> bool {
        self.terms.iter().any(|(k, _)| *k == LossKind::PoissonResidual)
    }

    pub fn evaluate<'t>(
        &self,
        pred: Var<'t>,
        target: Var<'t>,
        forcing: Option<Var<'t>>,
        disc: &Discretization,
    ) -> Result<Var<'t>> {
        let mut total: Option<Var<'t>> = None;
        for &(kind, w) in &self.terms {
            if w == 0.0 {
                continue;
            }
            let term = match kind {
                LossKind::L2 => l2_var(pred, target, disc)?,
                LossKind::RelativeL2 => relative_l2_var(pred, target, disc)?,
                LossKind::H1(mode) => h1_var(pred, target, disc, mode)?,
                LossKind::PoissonResidual => {
                    let f = forcing.ok_or_else(|| {
                        Error::InvalidArgument("the Poisson residual needs the forcing".into())
                    })?;
                    poisson_residual_var(pred, f, disc)?
                }
            }
            .scale(w);
            total = Some(match total {
                Some(t) => t.add(term)?,
                None => term,
            });
        }
        total.ok_or_else(|| Error::InvalidArgument("empty loss".into()))
    }
}

fn weights(disc: &Discretization) -> Result<Tensor> {
    Tensor::real(&[disc.len()], disc.weights().to_vec())
}

/// Per-sample `sum_j sum_c |x|^2 Delta_j`, shape `(bs)`.
fn sq_norms<'t>(x: Var<'t>, disc: &Discretization) -> Result<Var<'t>> {
    x.abs2().mul_const(&weights(disc)?, 1)?.sum_axis(2)?.sum_axis(1)
}

fn check_pair(pred: Var<'_>, target: Var<'_>, disc: &Discretization) -> Result<()> {
    let (a, b) = (pred.shape(), target.shape());
    if a != b || a.len() != 3 || a[1] != disc.len() {
        return Err(Error::Shape(format!(
            "loss on {a:?} vs {b:?} over {} points",
            disc.len()
        )));
    }
    Ok(())
}

pub fn l2_var<'t>(pred: Var<'t>, target: Var<'t>, disc: &Discretization) -> Result<Var<'t>> {
    check_pair(pred, target, disc)?;
    Ok(sq_norms(pred.sub(target)?, disc)?.mean())
}

/// Batch mean of `||pred - target|| / ||target||`; the target norm is
/// treated as a constant.
pub fn relative_l2_var<'t>(pred: Var<'t>, target: Var<'t>, disc: &Discretization) -> Result<Var<'t>> {
    check_pair(pred, target, disc)?;
    let norms = sq_norms(target, disc)?.value();
    let inv = norms
        .real_data()?
        .iter()
        .enumerate()
        .map(|(b, v)| {
            if *v > 0.0 {
                Ok(1.0 / v.sqrt())
            } else {
                Err(Error::DivisionGuard(format!("target {b} has zero norm")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let inv = Tensor::real(&[inv.len()], inv)?;
    Ok(sq_norms(pred.sub(target)?, disc)?
        .sqrt()?
        .mul_const(&inv, 0)?
        .mean())
}

/// Spectral derivative along grid `axis`: mode `k` is multiplied by
/// `2 pi i k / L`, the Nyquist mode by zero.
pub fn fourier_derivative_var<'t>(x: Var<'t>, disc: &Discretization, axis: usize) -> Result<Var<'t>> {
    let shape = disc.require_torus_grid()?.to_vec();
    if axis >= shape.len() {
        return Err(Error::InvalidArgument(format!("axis {axis} on a {}-D grid", shape.len())));
    }
    let n = shape[axis];
    let len = disc.domain().lengths()[axis];
    let factors: Vec<C64> = (0..n).map(|k| C64::new(0.0, wavenumber(k, n, len))).collect();
    let factors = Tensor::complex(&[n], factors)?;
    let s = x.shape();
    grid_view(x, &shape)?
        .to_complex()
        .fft(axis + 1, false)?
        .mul_const(&factors, axis + 1)?
        .fft(axis + 1, true)?
        .real_part()?
        .reshape(&s)
}

/// Second-order central differences; periodic wrap on torus grids,
/// one-sided first-order differences at the ends of bounded grids.
pub fn central_difference_var<'t>(x: Var<'t>, disc: &Discretization, axis: usize) -> Result<Var<'t>> {
    let shape = disc
        .grid_shape()
        .ok_or_else(|| Error::UnsupportedDomain("finite differences need a grid".into()))?
        .to_vec();
    if axis >= shape.len() {
        return Err(Error::InvalidArgument(format!("axis {axis} on a {}-D grid", shape.len())));
    }
    let n = shape[axis];
    if n < 2 {
        return Err(Error::InvalidArgument("finite differences need two points per axis".into()));
    }
    let h = disc.spacing().expect("grid has spacing")[axis];
    let periodic = disc.domain().is_periodic();
    let (mut plus, mut minus, mut inv) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..n {
        let (p, m, span) = if periodic {
            ((j + 1) % n, (j + n - 1) % n, 2.0 * h)
        } else if j == 0 {
            (1, 0, h)
        } else if j == n - 1 {
            (n - 1, n - 2, h)
        } else {
            (j + 1, j - 1, 2.0 * h)
        };
        plus.push(p);
        minus.push(m);
        inv.push(1.0 / span);
    }
    let inv = Tensor::real(&[n], inv)?;
    let s = x.shape();
    let g = grid_view(x, &shape)?;
    g.gather(axis + 1, &plus)?
        .sub(g.gather(axis + 1, &minus)?)?
        .mul_const(&inv, axis + 1)?
        .reshape(&s)
}

pub fn derivative_var<'t>(
    x: Var<'t>,
    disc: &Discretization,
    axis: usize,
    mode: DerivativeMode,
) -> Result<Var<'t>> {
    match mode {
        DerivativeMode::Fourier => fourier_derivative_var(x, disc, axis),
        DerivativeMode::CentralDifference => central_difference_var(x, disc, axis),
    }
}

/// `sum_j (|e|^2 + |grad e|^2) Delta_j` with `e = pred - target`.
pub fn h1_var<'t>(
    pred: Var<'t>,
    target: Var<'t>,
    disc: &Discretization,
    mode: DerivativeMode,
) -> Result<Var<'t>> {
    check_pair(pred, target, disc)?;
    if mode == DerivativeMode::Fourier {
        disc.require_torus_grid()?;
    }
    let e = pred.sub(target)?;
    let mut total = sq_norms(e, disc)?;
    for axis in 0..disc.dim() {
        total = total.add(sq_norms(derivative_var(e, disc, axis, mode)?, disc)?)?;
    }
    Ok(total.mean())
}

/// `-Laplace(u)` through two spectral derivatives per axis.
pub fn neg_laplacian_var<'t>(u: Var<'t>, disc: &Discretization) -> Result<Var<'t>> {
    let mut lap: Option<Var<'t>> = None;
    for axis in 0..disc.dim() {
        let d2 = fourier_derivative_var(fourier_derivative_var(u, disc, axis)?, disc, axis)?;
        lap = Some(match lap {
            Some(l) => l.add(d2)?,
            None => d2,
        });
    }
    Ok(lap.expect("dim >= 1").neg())
}

/// `||(-Laplace u) - f||^2` under quadrature.
pub fn poisson_residual_var<'t>(u: Var<'t>, f: Var<'t>, disc: &Discretization) -> Result<Var<'t>> {
    check_pair(u, f, disc)?;
    Ok(sq_norms(neg_laplacian_var(u, disc)?.sub(f)?, disc)?.mean())
}

fn shared<'a>(a: &'a Field, b: &Field) -> Result<&'a Discretization> {
    if a.disc().points() != b.disc().points() || a.channels() != b.channels() {
        return Err(Error::InvalidArgument(
            "losses need both fields on the same discretization".into(),
        ));
    }
    Ok(a.disc())
}

fn pair_on_tape<'t>(tape: &'t Tape, a: &Field, b: &Field) -> Result<(Var<'t>, Var<'t>)> {
    let shape = [1, a.len(), a.channels()];
    Ok((
        tape.constant(Tensor::real(&shape, a.values().to_vec())?),
        tape.constant(Tensor::real(&shape, b.values().to_vec())?),
    ))
}

pub fn l2_loss(pred: &Field, target: &Field) -> Result<f64> {
    let disc = shared(pred, target)?;
    let tape = Tape::new();
    let (p, t) = pair_on_tape(&tape, pred, target)?;
    l2_var(p, t, disc)?.value().item()
}

pub fn relative_l2(pred: &Field, target: &Field) -> Result<f64> {
    let disc = shared(pred, target)?;
    let tape = Tape::new();
    let (p, t) = pair_on_tape(&tape, pred, target)?;
    relative_l2_var(p, t, disc)?.value().item()
}

pub fn h1_loss(pred: &Field, target: &Field, mode: DerivativeMode) -> Result<f64> {
    let disc = shared(pred, target)?;
    let tape = Tape::new();
    let (p, t) = pair_on_tape(&tape, pred, target)?;
    h1_var(p, t, disc, mode)?.value().item()
}

pub fn fourier_derivative(field: &Field, axis: usize) -> Result<Field> {
    let tape = Tape::new();
    let x = tape.constant(Tensor::real(
        &[1, field.len(), field.channels()],
        field.values().to_vec(),
    )?);
    let d = fourier_derivative_var(x, field.disc(), axis)?.value();
    Field::new(field.disc().clone(), d.to_vec_real()?, field.channels())
}

pub fn poisson_residual(u: &Field, f: &Field) -> Result<f64> {
    let disc = shared(u, f)?;
    let tape = Tape::new();
    let (a, b) = pair_on_tape(&tape, u, f)?;
    poisson_residual_var(a, b, disc)?.value().item()
}
