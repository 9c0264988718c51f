//! Differentiable operations on [`Var`].

use std::f64::consts::PI;

use super::fft::{self, split_axis};
use super::tape::Var;
use super::{numel, DType, Data, Tensor, C64};
use crate::error::{Error, Result};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Reduce a gradient to the dtype of the operand it flows into.
fn to_dtype(g: Tensor, dtype: DType) -> Tensor {
    match (g.dtype(), dtype) {
        (DType::Complex, DType::Real) => {
            Tensor::from_real(g.shape().to_vec(), g.cx().iter().map(|z| z.re).collect())
        }
        (DType::Real, DType::Complex) => g.to_complex(),
        _ => g,
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn require_real(t: &Tensor, what: &str) -> Result<()> {
    if t.dtype() != DType::Real {
        return Err(Error::Dtype(format!("{what} is only defined for real tensors")));
    }
    Ok(())
}

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

fn map_real(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_real(t.shape().to_vec(), t.re().iter().map(|&x| f(x)).collect())
}

fn map_complex(t: &Tensor, f: impl Fn(C64) -> C64) -> Tensor {
    Tensor::from_complex(t.shape().to_vec(), t.cx().iter().map(|&x| f(x)).collect())
}

fn scale_tensor(t: &Tensor, alpha: f64) -> Tensor {
    match t.data() {
        Data::Real(_) => map_real(t, |x| alpha * x),
        Data::Complex(_) => map_complex(t, |x| x * alpha),
    }
}

/// Elementwise product `a * conj(b)` (or `a * b` when `conj_b` is false) with
/// dtype promotion.
fn elementwise_mul(a: &Tensor, b: &Tensor, conj_b: bool) -> Tensor {
    let shape = a.shape().to_vec();
    match (a.data(), b.data()) {
        (Data::Real(x), Data::Real(y)) => {
            Tensor::from_real(shape, x.iter().zip(y).map(|(p, q)| p * q).collect())
        }
        _ => {
            let x = a.to_complex();
            let y = b.to_complex();
            Tensor::from_complex(
                shape,
                x.cx()
                    .iter()
                    .zip(y.cx())
                    .map(|(p, q)| if conj_b { p * q.conj() } else { p * q })
                    .collect(),
            )
        }
    }
}

/// `C (m x n) (+)= op(A) op(B)` for row-major real matrices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe exactly the m*k, k*n and m*n buffers,
    // whose lengths are checked by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn cgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[C64],
    a_h: bool,
    b: &[C64],
    b_h: bool,
    c: &mut [C64],
) {
    // a_h / b_h request the conjugate transpose of the stored operand.
    for i in 0..m {
        for p in 0..k {
            let av = if a_h { a[p * m + i].conj() } else { a[i * k + p] };
            if av == ZERO {
                continue;
            }
            let row = &mut c[i * n..(i + 1) * n];
            if b_h {
                for (j, cv) in row.iter_mut().enumerate() {
                    *cv += av * b[j * k + p].conj();
                }
            } else {
                for (cv, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *cv += av * bv;
                }
            }
        }
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

impl<'t> Var<'t> {
    fn binary_same_shape(self, other: Var<'t>, what: &str) -> Result<(Tensor, Tensor)> {
        self.same_tape(other)?;
        let a = self.value();
        let b = other.value();
        check_same_shape(&a, &b, what)?;
        Ok((a, b))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.binary_same_shape(other, "add")?;
        let (da, db) = (a.dtype(), b.dtype());
        let out = a.add_same(&b);
        Ok(self.tape.op(out, &[self, other], move |g| {
            Ok(vec![to_dtype(g.clone(), da), to_dtype(g.clone(), db)])
        }))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.binary_same_shape(other, "sub")?;
        let (da, db) = (a.dtype(), b.dtype());
        let out = a.add_same(&scale_tensor(&b, -1.0));
        Ok(self.tape.op(out, &[self, other], move |g| {
            Ok(vec![
                to_dtype(g.clone(), da),
                to_dtype(scale_tensor(g, -1.0), db),
            ])
        }))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.binary_same_shape(other, "mul")?;
        let out = elementwise_mul(&a, &b, false);
        Ok(self.tape.op(out, &[self, other], move |g| {
            Ok(vec![
                to_dtype(elementwise_mul(g, &b, true), a.dtype()),
                to_dtype(elementwise_mul(g, &a, true), b.dtype()),
            ])
        }))
    }

    /// Elementwise product where `other` matches the trailing axes of `self`
    /// and is broadcast over the leading ones.
    pub fn mul_bcast(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
            return Err(Error::Shape(format!(
                "mul_bcast: {sb:?} is not a suffix of {sa:?}"
            )));
        }
        let inner = b.len();
        let outer = if inner == 0 { 0 } else { a.len() / inner };
        let tiled = tile(&b, outer, &sa);
        let out = elementwise_mul(&a, &tiled, false);
        Ok(self.tape.op(out, &[self, other], move |g| {
            let ga = to_dtype(elementwise_mul(g, &tiled, true), a.dtype());
            let full = elementwise_mul(g, &a, true);
            let gb = sum_leading(&full, outer, &sb);
            Ok(vec![ga, to_dtype(gb, b.dtype())])
        }))
    }

    /// `self + other` with `other` matching the trailing axes of `self`.
    pub fn add_bcast(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
            return Err(Error::Shape(format!(
                "add_bcast: {sb:?} is not a suffix of {sa:?}"
            )));
        }
        let inner = b.len();
        let outer = if inner == 0 { 0 } else { a.len() / inner };
        let out = a.add_same(&tile(&b, outer, &sa));
        let (da, db) = (a.dtype(), b.dtype());
        Ok(self.tape.op(out, &[self, other], move |g| {
            Ok(vec![
                to_dtype(g.clone(), da),
                to_dtype(sum_leading(g, outer, &sb), db),
            ])
        }))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn scale(self, alpha: f64) -> Var<'t> {
        let out = scale_tensor(&self.value(), alpha);
        self.tape
            .op(out, &[self], move |g| Ok(vec![scale_tensor(g, alpha)]))
    }

    /// Multiply by a constant tensor covering axes
    /// `first_axis .. first_axis + factors.ndim()`, broadcast over the rest.
    pub fn mul_const(self, factors: &Tensor, first_axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let fshape = factors.shape();
        if first_axis + fshape.len() > shape.len()
            || shape[first_axis..first_axis + fshape.len()] != *fshape
        {
            return Err(Error::Shape(format!(
                "mul_const: factors {fshape:?} do not match axes {first_axis}.. of {shape:?}"
            )));
        }
        let outer: usize = shape[..first_axis].iter().product();
        let inner: usize = shape[first_axis + fshape.len()..].iter().product();
        let out = mul_factors(&x, factors, outer, inner, false);
        let dtype = x.dtype();
        let factors = factors.clone();
        Ok(self.tape.op(out, &[self], move |g| {
            Ok(vec![to_dtype(mul_factors(g, &factors, outer, inner, true), dtype)])
        }))
    }

    /// `x + b` with `b` broadcast along the last axis.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(bias)?;
        let x = self.value();
        let b = bias.value();
        require_real(&x, "add_bias")?;
        require_real(&b, "add_bias")?;
        let c = *x.shape().last().unwrap_or(&1);
        if b.shape() != [c] {
            return Err(Error::Shape(format!(
                "bias of shape {:?} for input {:?}",
                b.shape(),
                x.shape()
            )));
        }
        let bv = b.re();
        let mut out = x.re().to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(bv).for_each(|(o, bi)| *o += bi);
        }
        let out = Tensor::from_real(x.shape().to_vec(), out);
        Ok(self.tape.op(out, &[self, bias], move |g| {
            let mut gb = vec![0.0; c];
            for row in g.re().chunks(c) {
                gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
            }
            Ok(vec![g.clone(), Tensor::from_real(vec![c], gb)])
        }))
    }

    /// Matrix product contracting the last axis of `self` with the first axis
    /// of a 2-D `rhs`; leading axes of `self` are treated as rows.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs)?;
        let a = self.value();
        let b = rhs.value();
        if a.ndim() < 1 || b.ndim() != 2 {
            return Err(Error::Shape(format!(
                "matmul needs (.., k) x (k, n), got {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let k = *a.shape().last().unwrap();
        if b.shape()[0] != k {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let n = b.shape()[1];
        let m = if k == 0 { 0 } else { a.len() / k };
        let mut out_shape = a.shape().to_vec();
        *out_shape.last_mut().unwrap() = n;
        let (da, db) = (a.dtype(), b.dtype());
        if da == DType::Real && db == DType::Real {
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, a.re(), false, b.re(), false, &mut c);
            let out = Tensor::from_real(out_shape, c);
            let (ashape, bshape) = (a.shape().to_vec(), b.shape().to_vec());
            Ok(self.tape.op(out, &[self, rhs], move |g| {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g.re(), false, b.re(), true, &mut ga);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, a.re(), true, g.re(), false, &mut gb);
                Ok(vec![
                    Tensor::from_real(ashape.clone(), ga),
                    Tensor::from_real(bshape.clone(), gb),
                ])
            }))
        } else {
            let ac = a.to_complex();
            let bc = b.to_complex();
            let mut c = vec![ZERO; m * n];
            cgemm(m, k, n, ac.cx(), false, bc.cx(), false, &mut c);
            let out = Tensor::from_complex(out_shape, c);
            let (ashape, bshape) = (a.shape().to_vec(), b.shape().to_vec());
            Ok(self.tape.op(out, &[self, rhs], move |g| {
                let gc = g.to_complex();
                let mut ga = vec![ZERO; m * k];
                cgemm(m, n, k, gc.cx(), false, bc.cx(), true, &mut ga);
                let mut gb = vec![ZERO; k * n];
                cgemm(k, m, n, ac.cx(), true, gc.cx(), false, &mut gb);
                Ok(vec![
                    to_dtype(Tensor::from_complex(ashape.clone(), ga), da),
                    to_dtype(Tensor::from_complex(bshape.clone(), gb), db),
                ])
            }))
        }
    }

    /// Batched real matrix product `(B, m, k) x (B, k, n) -> (B, m, n)`.
    pub fn bmm(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs)?;
        let a = self.value();
        let b = rhs.value();
        require_real(&a, "bmm")?;
        require_real(&b, "bmm")?;
        if a.ndim() != 3 || b.ndim() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1]
        {
            return Err(Error::Shape(format!(
                "bmm needs (B,m,k) x (B,k,n), got {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
        let mut c = vec![0.0; bs * m * n];
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &a.re()[i * m * k..(i + 1) * m * k],
                false,
                &b.re()[i * k * n..(i + 1) * k * n],
                false,
                &mut c[i * m * n..(i + 1) * m * n],
            );
        }
        let out = Tensor::from_real(vec![bs, m, n], c);
        Ok(self.tape.op(out, &[self, rhs], move |g| {
            let mut ga = vec![0.0; bs * m * k];
            let mut gb = vec![0.0; bs * k * n];
            for i in 0..bs {
                let gi = &g.re()[i * m * n..(i + 1) * m * n];
                gemm(
                    m,
                    n,
                    k,
                    gi,
                    false,
                    &b.re()[i * k * n..(i + 1) * k * n],
                    true,
                    &mut ga[i * m * k..(i + 1) * m * k],
                );
                gemm(
                    k,
                    m,
                    n,
                    &a.re()[i * m * k..(i + 1) * m * k],
                    true,
                    gi,
                    false,
                    &mut gb[i * k * n..(i + 1) * k * n],
                );
            }
            Ok(vec![
                Tensor::from_real(vec![bs, m, k], ga),
                Tensor::from_real(vec![bs, k, n], gb),
            ])
        }))
    }

    /// Per-mode channel mixing of complex coefficients:
    /// `(B, M, ci) x (M, ci, co) -> (B, M, co)`.
    pub fn mode_mix(self, weights: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(weights)?;
        let x = self.value().to_complex();
        let w = weights.value();
        let wdtype = w.dtype();
        let w = w.to_complex();
        if x.ndim() != 3 || w.ndim() != 3 || x.shape()[1] != w.shape()[0] || x.shape()[2] != w.shape()[1]
        {
            return Err(Error::Shape(format!(
                "mode_mix needs (B,M,ci) x (M,ci,co), got {:?} x {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let xdtype = self.dtype();
        let (bs, modes, ci) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let co = w.shape()[2];
        let (xs, ws) = (x.cx(), w.cx());
        let mut out = vec![ZERO; bs * modes * co];
        for b in 0..bs {
            for m in 0..modes {
                let xrow = &xs[(b * modes + m) * ci..(b * modes + m + 1) * ci];
                let orow = &mut out[(b * modes + m) * co..(b * modes + m + 1) * co];
                for (i, xv) in xrow.iter().enumerate() {
                    let wrow = &ws[(m * ci + i) * co..(m * ci + i + 1) * co];
                    for (o, wv) in orow.iter_mut().zip(wrow) {
                        o.re += xv.re * wv.re - xv.im * wv.im;
                        o.im += xv.re * wv.im + xv.im * wv.re;
                    }
                }
            }
        }
        let out = Tensor::from_complex(vec![bs, modes, co], out);
        Ok(self.tape.op(out, &[self, weights], move |g| {
            let gs = g.cx();
            let (xs, ws) = (x.cx(), w.cx());
            let mut gx = vec![ZERO; bs * modes * ci];
            let mut gw = vec![ZERO; modes * ci * co];
            for b in 0..bs {
                for m in 0..modes {
                    let grow = &gs[(b * modes + m) * co..(b * modes + m + 1) * co];
                    for i in 0..ci {
                        let xv = xs[(b * modes + m) * ci + i];
                        let wrow = &ws[(m * ci + i) * co..(m * ci + i + 1) * co];
                        let gwrow = &mut gw[(m * ci + i) * co..(m * ci + i + 1) * co];
                        let mut acc = ZERO;
                        for ((gv, wv), gwv) in grow.iter().zip(wrow).zip(gwrow.iter_mut()) {
                            // gx += g * conj(w); gw += conj(x) * g
                            acc.re += gv.re * wv.re + gv.im * wv.im;
                            acc.im += gv.im * wv.re - gv.re * wv.im;
                            gwv.re += xv.re * gv.re + xv.im * gv.im;
                            gwv.im += xv.re * gv.im - xv.im * gv.re;
                        }
                        gx[(b * modes + m) * ci + i] = acc;
                    }
                }
            }
            Ok(vec![
                to_dtype(Tensor::from_complex(vec![bs, modes, ci], gx), xdtype),
                to_dtype(Tensor::from_complex(vec![modes, ci, co], gw), wdtype),
            ])
        }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let out = x.reshape(shape)?;
        let orig = x.shape().to_vec();
        Ok(self
            .tape
            .op(out, &[self], move |g| Ok(vec![g.reshape(&orig)?])))
    }

    /// Swap two axes.
    pub fn transpose(self, a1: usize, a2: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis(x.shape(), a1)?;
        check_axis(x.shape(), a2)?;
        let out = swap_axes(&x, a1, a2);
        Ok(self
            .tape
            .op(out, &[self], move |g| Ok(vec![swap_axes(g, a1, a2)])))
    }

    /// Concatenate along `axis`; all other axes must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let values: Vec<Tensor> = parts
            .iter()
            .map(|p| {
                first.same_tape(*p)?;
                Ok(p.value())
            })
            .collect::<Result<_>>()?;
        let base = values[0].shape().to_vec();
        check_axis(&base, axis)?;
        let dtype = values[0].dtype();
        for v in &values {
            let s = v.shape();
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::Shape(format!("concat: {s:?} vs {base:?}")));
            }
            if v.dtype() != dtype {
                return Err(Error::Dtype("concat of mixed dtypes".into()));
            }
        }
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = split_axis(&base, axis);
        let mut shape = base.clone();
        shape[axis] = total;
        let out = match dtype {
            DType::Real => {
                let mut out = Vec::with_capacity(numel(&shape));
                for o in 0..outer {
                    for (v, &l) in values.iter().zip(&lens) {
                        out.extend_from_slice(&v.re()[o * l * inner..(o + 1) * l * inner]);
                    }
                }
                Tensor::from_real(shape.clone(), out)
            }
            DType::Complex => {
                let mut out = Vec::with_capacity(numel(&shape));
                for o in 0..outer {
                    for (v, &l) in values.iter().zip(&lens) {
                        out.extend_from_slice(&v.cx()[o * l * inner..(o + 1) * l * inner]);
                    }
                }
                Tensor::from_complex(shape.clone(), out)
            }
        };
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(first.tape.op(out, parts, move |g| {
            let mut offset = 0;
            let mut res = Vec::with_capacity(lens.len());
            for (l, s) in lens.iter().zip(&shapes) {
                let idx: Vec<usize> = (offset..offset + l).collect();
                res.push(gather_axis(g, axis, &idx).reshape(s)?);
                offset += l;
            }
            Ok(res)
        }))
    }

    /// Contiguous range along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather(axis, &idx)
    }

    /// Index select along `axis`; indices may repeat.
    pub fn gather(self, axis: usize, indices: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        check_axis(x.shape(), axis)?;
        let len = x.shape()[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::Shape(format!(
                "gather index {bad} out of range for axis of length {len}"
            )));
        }
        let out = gather_axis(&x, axis, indices);
        let indices = indices.to_vec();
        Ok(self.tape.op(out, &[self], move |g| {
            Ok(vec![scatter_axis(g, axis, &indices, len)])
        }))
    }

    /// Adjoint of [`gather`](Self::gather): entries are summed into position
    /// `indices[i]` of a zero tensor with `out_len` entries along `axis`.
    pub fn scatter_add(self, axis: usize, indices: &[usize], out_len: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis(x.shape(), axis)?;
        if x.shape()[axis] != indices.len() {
            return Err(Error::Shape(format!(
                "scatter_add: {} indices for axis of length {}",
                indices.len(),
                x.shape()[axis]
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= out_len) {
            return Err(Error::Shape(format!(
                "scatter index {bad} out of range {out_len}"
            )));
        }
        let out = scatter_axis(&x, axis, indices, out_len);
        let indices = indices.to_vec();
        Ok(self
            .tape
            .op(out, &[self], move |g| Ok(vec![gather_axis(g, axis, &indices)])))
    }

    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = match x.data() {
            Data::Real(v) => Tensor::from_real(vec![], vec![v.iter().sum()]),
            Data::Complex(v) => Tensor::from_complex(vec![], vec![v.iter().sum()]),
        };
        self.tape.op(out, &[self], move |g| {
            Ok(vec![match g.data() {
                Data::Real(v) => Tensor::from_real(shape.clone(), vec![v[0]; numel(&shape)]),
                Data::Complex(v) => {
                    Tensor::from_complex(shape.clone(), vec![v[0]; numel(&shape)])
                }
            }])
        })
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        require_real(&x, "sum_axis")?;
        check_axis(x.shape(), axis)?;
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let xv = x.re();
        for o in 0..outer {
            for j in 0..len {
                let src = &xv[(o * len + j) * inner..(o * len + j + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(a, b)| *a += b);
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let in_shape = x.shape().to_vec();
        Ok(self.tape.op(Tensor::from_real(shape, out), &[self], move |g| {
            let gv = g.re();
            let mut res = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for j in 0..len {
                    res[(o * len + j) * inner..(o * len + j + 1) * inner]
                        .copy_from_slice(&gv[o * inner..(o + 1) * inner]);
                }
            }
            Ok(vec![Tensor::from_real(in_shape.clone(), res)])
        }))
    }

    fn unary_real(
        self,
        what: &str,
        f: impl Fn(f64) -> (f64, f64),
    ) -> Result<Var<'t>> {
        let x = self.value();
        require_real(&x, what)?;
        let (vals, ders): (Vec<f64>, Vec<f64>) = x.re().iter().map(|&v| f(v)).unzip();
        let shape = x.shape().to_vec();
        Ok(self.tape.op(
            Tensor::from_real(shape.clone(), vals),
            &[self],
            move |g| {
                Ok(vec![Tensor::from_real(
                    shape.clone(),
                    g.re().iter().zip(&ders).map(|(a, b)| a * b).collect(),
                )])
            },
        ))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(self) -> Result<Var<'t>> {
        self.unary_real("gelu", gelu_parts)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary_real("relu", |x| if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) })
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary_real("exp", |x| {
            let e = x.exp();
            (e, e)
        })
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary_real("sqrt", |x| {
            let s = x.sqrt();
            (s, 0.5 / s)
        })
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.unary_real("square", |x| (x * x, 2.0 * x))
    }

    /// `|z|^2`, real output for real or complex input.
    pub fn abs2(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = match x.data() {
            Data::Real(v) => v.iter().map(|a| a * a).collect(),
            Data::Complex(v) => v.iter().map(|z| z.norm_sqr()).collect(),
        };
        self.tape
            .op(Tensor::from_real(shape, out), &[self], move |g| {
                let gv = g.re();
                Ok(vec![match x.data() {
                    Data::Real(v) => Tensor::from_real(
                        x.shape().to_vec(),
                        v.iter().zip(gv).map(|(a, b)| 2.0 * a * b).collect(),
                    ),
                    Data::Complex(v) => Tensor::from_complex(
                        x.shape().to_vec(),
                        v.iter().zip(gv).map(|(z, b)| z * (2.0 * b)).collect(),
                    ),
                }])
            })
    }

    /// Real part of a complex tensor.
    pub fn real_part(self) -> Result<Var<'t>> {
        let x = self.value();
        x.complex_data()?;
        let out = to_dtype(x, DType::Real);
        Ok(self
            .tape
            .op(out, &[self], move |g| Ok(vec![g.to_complex()])))
    }

    pub fn to_complex(self) -> Var<'t> {
        let x = self.value();
        if x.dtype() == DType::Complex {
            return self;
        }
        self.tape
            .op(x.to_complex(), &[self], move |g| Ok(vec![to_dtype(g.clone(), DType::Real)]))
    }

    /// Softmax along the last axis. With `weights`, entry `i` is scaled by
    /// `weights[i] > 0` inside both numerator and denominator:
    /// `p_i = w_i exp(s_i) / sum_l w_l exp(s_l)`.
    pub fn softmax_last(self, weights: Option<&[f64]>) -> Result<Var<'t>> {
        let x = self.value();
        require_real(&x, "softmax")?;
        let n = *x.shape().last().unwrap_or(&1);
        if let Some(w) = weights {
            if w.len() != n {
                return Err(Error::Shape(format!(
                    "softmax weights of length {} for axis of length {n}",
                    w.len()
                )));
            }
        }
        let mut out = vec![0.0; x.len()];
        for (row, orow) in x.re().chunks(n).zip(out.chunks_mut(n)) {
            let max = row
                .iter()
                .enumerate()
                .filter(|(i, _)| weights.map_or(true, |w| w[*i] > 0.0))
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (i, (o, &s)) in orow.iter_mut().zip(row).enumerate() {
                let w = weights.map_or(1.0, |w| w[i]);
                *o = if w > 0.0 { w * (s - max).exp() } else { 0.0 };
                denom += *o;
            }
            orow.iter_mut().for_each(|o| *o /= denom);
        }
        let p = Tensor::from_real(x.shape().to_vec(), out);
        let saved = p.clone();
        Ok(self.tape.op(p, &[self], move |g| {
            let mut gx = vec![0.0; saved.len()];
            for ((prow, grow), orow) in saved
                .re()
                .chunks(n)
                .zip(g.re().chunks(n))
                .zip(gx.chunks_mut(n))
            {
                let dot: f64 = prow.iter().zip(grow).map(|(a, b)| a * b).sum();
                for ((o, pv), gv) in orow.iter_mut().zip(prow).zip(grow) {
                    *o = pv * (gv - dot);
                }
            }
            Ok(vec![Tensor::from_real(saved.shape().to_vec(), gx)])
        }))
    }

    /// Real-to-complex transform along `axis`, keeping modes `0..=n/2`.
    pub fn rfft(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        require_real(&x, "rfft")?;
        check_axis(x.shape(), axis)?;
        let fb = self.tape.allow_dft_fallback();
        let split = split_axis(x.shape(), axis);
        let n = split.1;
        let h = n / 2 + 1;
        let out = fft::map_lines(x.re(), split, h, |line| fft::rfft(line, fb))?;
        let mut shape = x.shape().to_vec();
        shape[axis] = h;
        let out = Tensor::from_complex(shape.clone(), out);
        let (outer, _, inner) = split;
        let in_shape = x.shape().to_vec();
        Ok(self.tape.op(out, &[self], move |g| {
            // grad_x_j = Re sum_{k <= n/2} G_k exp(+2 pi i jk/n)
            let res = fft::map_lines(g.cx(), (outer, h, inner), n, |line| {
                let mut buf = vec![ZERO; n];
                buf[..h].copy_from_slice(line);
                fft::unscaled_backward(&mut buf, fb)?;
                Ok(buf.into_iter().map(|z| z.re).collect::<Vec<f64>>())
            })?;
            Ok(vec![Tensor::from_real(in_shape.clone(), res)])
        }))
    }

    /// Complex transform along `axis`; the inverse carries `1/n`.
    pub fn fft(self, axis: usize, inverse: bool) -> Result<Var<'t>> {
        let x = self.value().to_complex();
        let dtype = self.dtype();
        check_axis(x.shape(), axis)?;
        let fb = self.tape.allow_dft_fallback();
        let split = split_axis(x.shape(), axis);
        let n = split.1;
        let out = fft::map_lines(x.cx(), split, n, |line| {
            let mut buf = line.to_vec();
            fft::fft_in_place(&mut buf, inverse, fb)?;
            Ok(buf)
        })?;
        let out = Tensor::from_complex(x.shape().to_vec(), out);
        let shape = x.shape().to_vec();
        Ok(self.tape.op(out, &[self], move |g| {
            let res = fft::map_lines(g.cx(), split, n, |line| {
                let mut buf = line.to_vec();
                if inverse {
                    fft::fft_in_place(&mut buf, false, fb)?;
                    let s = 1.0 / n as f64;
                    buf.iter_mut().for_each(|z| *z *= s);
                } else {
                    fft::unscaled_backward(&mut buf, fb)?;
                }
                Ok(buf)
            })?;
            Ok(vec![to_dtype(Tensor::from_complex(shape.clone(), res), dtype)])
        }))
    }

    /// Complex-to-real inverse along `axis` producing `n` samples; shorter
    /// inputs are zero-padded in frequency.
    pub fn irfft(self, axis: usize, n: usize) -> Result<Var<'t>> {
        let x = self.value();
        let x = x.complex_data().map(|_| x.clone())?;
        check_axis(x.shape(), axis)?;
        let fb = self.tape.allow_dft_fallback();
        let split = split_axis(x.shape(), axis);
        let h = split.1;
        let out = fft::map_lines(x.cx(), split, n, |line| fft::irfft(line, n, fb))?;
        let mut shape = x.shape().to_vec();
        shape[axis] = n;
        let out = Tensor::from_real(shape.clone(), out);
        let (outer, _, inner) = split;
        let in_shape = x.shape().to_vec();
        Ok(self.tape.op(out, &[self], move |g| {
            let res = fft::map_lines(g.re(), (outer, n, inner), h, |line| {
                let spec = fft::rfft(line, fb)?;
                Ok((0..h)
                    .map(|k| {
                        let c = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
                        spec[k] * (c / n as f64)
                    })
                    .collect::<Vec<C64>>())
            })?;
            Ok(vec![Tensor::from_complex(in_shape.clone(), res)])
        }))
    }

    /// Periodic index stencil on a 1-D or 2-D grid:
    /// `g[j] = sum_m taps[m] . f[j - m]` with `m` ranging over
    /// `-k..=k` per axis. `self` is `(B, grid.., ci)`, `taps` is
    /// `(2k+1 per axis.., ci, co)`.
    pub fn periodic_stencil(self, taps: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(taps)?;
        let x = self.value();
        let w = taps.value();
        require_real(&x, "periodic_stencil")?;
        require_real(&w, "periodic_stencil")?;
        let dims = x.ndim().checked_sub(2).unwrap_or(0);
        if !(1..=2).contains(&dims) || w.ndim() != dims + 2 {
            return Err(Error::Shape(format!(
                "periodic_stencil: input {:?}, taps {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let ci = x.shape()[dims + 1];
        if w.shape()[dims] != ci {
            return Err(Error::Shape(format!(
                "periodic_stencil: {} input channels, taps expect {}",
                ci,
                w.shape()[dims]
            )));
        }
        let co = w.shape()[dims + 1];
        let grid: Vec<usize> = x.shape()[1..=dims].to_vec();
        let sizes: Vec<usize> = w.shape()[..dims].to_vec();
        if sizes.iter().any(|s| s % 2 == 0) {
            return Err(Error::Shape(format!("stencil sides {sizes:?} must be odd")));
        }
        let stencil = Stencil::new(grid.clone(), sizes, ci, co, x.shape()[0]);
        let out = stencil.forward(x.re(), w.re());
        let mut oshape = x.shape().to_vec();
        oshape[dims + 1] = co;
        let (xs, ws) = (x.clone(), w.clone());
        Ok(self
            .tape
            .op(Tensor::from_real(oshape, out), &[self, taps], move |g| {
                let (gx, gw) = stencil.backward(xs.re(), ws.re(), g.re());
                Ok(vec![
                    Tensor::from_real(xs.shape().to_vec(), gx),
                    Tensor::from_real(ws.shape().to_vec(), gw),
                ])
            }))
    }
}

fn mul_factors(t: &Tensor, factors: &Tensor, outer: usize, inner: usize, conj: bool) -> Tensor {
    let mid = factors.len();
    let shape = t.shape().to_vec();
    match (t.data(), factors.data()) {
        (Data::Real(v), Data::Real(f)) => {
            let mut out = v.clone();
            for o in 0..outer {
                for (s, &fv) in f.iter().enumerate() {
                    let base = (o * mid + s) * inner;
                    out[base..base + inner].iter_mut().for_each(|z| *z *= fv);
                }
            }
            Tensor::from_real(shape, out)
        }
        _ => {
            let tc = t.to_complex();
            let fc = factors.to_complex();
            let mut out = tc.cx().to_vec();
            for o in 0..outer {
                for (s, &fv) in fc.cx().iter().enumerate() {
                    let fv = if conj { fv.conj() } else { fv };
                    let base = (o * mid + s) * inner;
                    out[base..base + inner].iter_mut().for_each(|z| *z *= fv);
                }
            }
            Tensor::from_complex(shape, out)
        }
    }
}

fn tile(b: &Tensor, outer: usize, shape: &[usize]) -> Tensor {
    match b.data() {
        Data::Real(v) => Tensor::from_real(shape.to_vec(), v.repeat(outer)),
        Data::Complex(v) => Tensor::from_complex(shape.to_vec(), v.repeat(outer)),
    }
}

fn sum_leading(t: &Tensor, outer: usize, shape: &[usize]) -> Tensor {
    let inner = numel(shape);
    match t.data() {
        Data::Real(v) => {
            let mut out = vec![0.0; inner];
            for o in 0..outer {
                out.iter_mut()
                    .zip(&v[o * inner..(o + 1) * inner])
                    .for_each(|(a, b)| *a += b);
            }
            Tensor::from_real(shape.to_vec(), out)
        }
        Data::Complex(v) => {
            let mut out = vec![ZERO; inner];
            for o in 0..outer {
                out.iter_mut()
                    .zip(&v[o * inner..(o + 1) * inner])
                    .for_each(|(a, b)| *a += b);
            }
            Tensor::from_complex(shape.to_vec(), out)
        }
    }
}

fn gather_axis(x: &Tensor, axis: usize, idx: &[usize]) -> Tensor {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = idx.len();
    fn go<T: Copy>(v: &[T], outer: usize, len: usize, inner: usize, idx: &[usize]) -> Vec<T> {
        let mut out = Vec::with_capacity(outer * idx.len() * inner);
        for o in 0..outer {
            for &i in idx {
                out.extend_from_slice(&v[(o * len + i) * inner..(o * len + i + 1) * inner]);
            }
        }
        out
    }
    match x.data() {
        Data::Real(v) => Tensor::from_real(shape, go(v, outer, len, inner, idx)),
        Data::Complex(v) => Tensor::from_complex(shape, go(v, outer, len, inner, idx)),
    }
}

fn scatter_axis(x: &Tensor, axis: usize, idx: &[usize], out_len: usize) -> Tensor {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = out_len;
    fn go<T: Copy + std::ops::AddAssign + Default>(
        v: &[T],
        outer: usize,
        len: usize,
        inner: usize,
        idx: &[usize],
        out_len: usize,
    ) -> Vec<T> {
        let mut out = vec![T::default(); outer * out_len * inner];
        for o in 0..outer {
            for (j, &i) in idx.iter().enumerate().take(len) {
                let src = &v[(o * len + j) * inner..(o * len + j + 1) * inner];
                let dst = &mut out[(o * out_len + i) * inner..(o * out_len + i + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(a, b)| *a += *b);
            }
        }
        out
    }
    match x.data() {
        Data::Real(v) => Tensor::from_real(shape, go(v, outer, len, inner, idx, out_len)),
        Data::Complex(v) => Tensor::from_complex(shape, go(v, outer, len, inner, idx, out_len)),
    }
}

fn swap_axes(x: &Tensor, a1: usize, a2: usize) -> Tensor {
    if a1 == a2 {
        return x.clone();
    }
    let shape = x.shape();
    let nd = shape.len();
    let mut strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let mut new_shape = shape.to_vec();
    new_shape.swap(a1, a2);
    let mut src_strides = strides.clone();
    src_strides.swap(a1, a2);
    let total = x.len();
    let mut index = vec![0usize; nd];
    let mut order = Vec::with_capacity(total);
    for _ in 0..total {
        order.push(index.iter().zip(&src_strides).map(|(i, s)| i * s).sum::<usize>());
        for d in (0..nd).rev() {
            index[d] += 1;
            if index[d] < new_shape[d] {
                break;
            }
            index[d] = 0;
        }
    }
    match x.data() {
        Data::Real(v) => Tensor::from_real(new_shape, order.iter().map(|&i| v[i]).collect()),
        Data::Complex(v) => Tensor::from_complex(new_shape, order.iter().map(|&i| v[i]).collect()),
    }
}

/// Direct periodic stencil on 1-D or 2-D grids.
#[derive(Clone)]
struct Stencil {
    grid: Vec<usize>,
    sizes: Vec<usize>,
    ci: usize,
    co: usize,
    batch: usize,
}

impl Stencil {
    fn new(grid: Vec<usize>, sizes: Vec<usize>, ci: usize, co: usize, batch: usize) -> Self {
        Stencil {
            grid,
            sizes,
            ci,
            co,
            batch,
        }
    }

    fn points(&self) -> usize {
        self.grid.iter().product()
    }

    /// For each tap index `t` and output point `j`, the source point `j - m`.
    fn offsets(&self) -> Vec<(usize, Vec<usize>)> {
        let n = self.points();
        let taps: usize = self.sizes.iter().product();
        (0..taps)
            .map(|t| {
                let mut rem = t;
                let mut m = vec![0isize; self.sizes.len()];
                for d in (0..self.sizes.len()).rev() {
                    let s = self.sizes[d];
                    m[d] = (rem % s) as isize - (s / 2) as isize;
                    rem /= s;
                }
                let src = (0..n)
                    .map(|j| {
                        let mut rem = j;
                        let mut coords = vec![0usize; self.grid.len()];
                        for d in (0..self.grid.len()).rev() {
                            coords[d] = rem % self.grid[d];
                            rem /= self.grid[d];
                        }
                        let mut flat = 0usize;
                        for d in 0..self.grid.len() {
                            let g = self.grid[d] as isize;
                            let c = (coords[d] as isize - m[d]).rem_euclid(g) as usize;
                            flat = flat * self.grid[d] + c;
                        }
                        flat
                    })
                    .collect();
                (t, src)
            })
            .collect()
    }

    fn forward(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let n = self.points();
        let (ci, co) = (self.ci, self.co);
        let mut out = vec![0.0; self.batch * n * co];
        for (t, src) in self.offsets() {
            let wt = &w[t * ci * co..(t + 1) * ci * co];
            for b in 0..self.batch {
                for (j, &s) in src.iter().enumerate() {
                    let xrow = &x[(b * n + s) * ci..(b * n + s + 1) * ci];
                    let orow = &mut out[(b * n + j) * co..(b * n + j + 1) * co];
                    for (i, &xv) in xrow.iter().enumerate() {
                        for (o, wv) in orow.iter_mut().zip(&wt[i * co..(i + 1) * co]) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
        out
    }

    fn backward(&self, x: &[f64], w: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.points();
        let (ci, co) = (self.ci, self.co);
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; w.len()];
        for (t, src) in self.offsets() {
            let wt = &w[t * ci * co..(t + 1) * ci * co];
            for b in 0..self.batch {
                for (j, &s) in src.iter().enumerate() {
                    let grow = &g[(b * n + j) * co..(b * n + j + 1) * co];
                    for i in 0..ci {
                        let xv = x[(b * n + s) * ci + i];
                        let wrow = &wt[i * co..(i + 1) * co];
                        let mut acc = 0.0;
                        for o in 0..co {
                            acc += grow[o] * wrow[o];
                            gw[(t * ci + i) * co + o] += xv * grow[o];
                        }
                        gx[(b * n + s) * ci + i] += acc;
                    }
                }
            }
        }
        (gx, gw)
    }
}

/// Angular frequency `2 pi k / L` for FFT index `idx` of an `n`-point axis;
/// the Nyquist index maps to zero.
pub fn wavenumber(idx: usize, n: usize, length: f64) -> f64 {
    let k = if idx < n.div_ceil(2) {
        idx as f64
    } else if n % 2 == 0 && idx == n / 2 {
        0.0
    } else {
        idx as f64 - n as f64
    };
    2.0 * PI * k / length
}
