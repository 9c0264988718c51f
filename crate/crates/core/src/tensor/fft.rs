//! Radix-2 Cooley-Tukey transforms.
//!
//! Convention: the forward transform is unnormalized,
//! `X_k = sum_j x_j exp(-2 pi i j k / n)`, and the inverse carries `1/n`.
//! Lengths must be powers of two unless the O(n^2) direct DFT fallback is
//! requested explicitly.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use super::C64;
use crate::error::{Error, Result};

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

thread_local! {
    static TWIDDLES: RefCell<HashMap<usize, Rc<Vec<C64>>>> = RefCell::new(HashMap::new());
}

fn twiddles(n: usize) -> Rc<Vec<C64>> {
    TWIDDLES.with(|cache| {
        cache
            .borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                Rc::new(
                    (0..n / 2)
                        .map(|k| C64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
                        .collect(),
                )
            })
            .clone()
    })
}

/// Unnormalized in-place transform with `exp(-2 pi i jk/n)` (forward) or
/// `exp(+2 pi i jk/n)` (backward).
fn radix2(buf: &mut [C64], backward: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let tw = twiddles(n);
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = tw[k * step];
                let w = if backward { w.conj() } else { w };
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn direct_dft(buf: &mut [C64], backward: bool) {
    let n = buf.len();
    let sign = if backward { 1.0 } else { -1.0 };
    let out: Vec<C64> = (0..n)
        .map(|k| {
            buf.iter()
                .enumerate()
                .map(|(j, &x)| {
                    let angle = sign * 2.0 * PI * ((j * k) % n) as f64 / n as f64;
                    x * C64::from_polar(1.0, angle)
                })
                .sum()
        })
        .collect();
    buf.copy_from_slice(&out);
}

fn raw(buf: &mut [C64], backward: bool, allow_fallback: bool) -> Result<()> {
    let n = buf.len();
    if is_power_of_two(n) {
        radix2(buf, backward);
        Ok(())
    } else if allow_fallback && n > 0 {
        direct_dft(buf, backward);
        Ok(())
    } else {
        Err(Error::UnsupportedLength(n))
    }
}

/// Complex transform in place. The inverse is scaled by `1/n`.
pub fn fft_in_place(buf: &mut [C64], inverse: bool, allow_fallback: bool) -> Result<()> {
    raw(buf, inverse, allow_fallback)?;
    if inverse {
        let scale = 1.0 / buf.len() as f64;
        buf.iter_mut().for_each(|z| *z *= scale);
    }
    Ok(())
}

/// Unnormalized transform in the `exp(+2 pi i jk/n)` direction.
pub(crate) fn unscaled_backward(buf: &mut [C64], allow_fallback: bool) -> Result<()> {
    raw(buf, true, allow_fallback)
}

/// Half spectrum `X_0 .. X_{n/2}` of a real signal.
pub fn rfft(x: &[f64], allow_fallback: bool) -> Result<Vec<C64>> {
    let n = x.len();
    let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    raw(&mut buf, false, allow_fallback)?;
    buf.truncate(n / 2 + 1);
    Ok(buf)
}

/// Real signal of length `n` from a (possibly shorter) half spectrum. Missing
/// modes are zero; imaginary parts of the DC and Nyquist entries are ignored.
pub fn irfft(half: &[C64], n: usize, allow_fallback: bool) -> Result<Vec<f64>> {
    let h = n / 2 + 1;
    if half.len() > h {
        return Err(Error::InvalidArgument(format!(
            "irfft output length {n} cannot represent {} modes",
            half.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("irfft output length 0".into()));
    }
    let mut full = vec![C64::new(0.0, 0.0); n];
    for (k, &z) in half.iter().enumerate() {
        if k == 0 || (n % 2 == 0 && k == n / 2) {
            full[k] = C64::new(z.re, 0.0);
        } else {
            full[k] = z;
            full[n - k] = z.conj();
        }
    }
    fft_in_place(&mut full, true, allow_fallback)?;
    Ok(full.into_iter().map(|z| z.re).collect())
}

/// Band-limited interpolation of a periodic real signal onto `n_out` points.
/// Coefficients are rescaled by `n_out / n` so sample values are preserved.
pub fn fourier_interpolate(x: &[f64], n_out: usize, allow_fallback: bool) -> Result<Vec<f64>> {
    let n = x.len();
    let mut spec = rfft(x, allow_fallback)?;
    let keep = spec.len().min(n_out / 2 + 1);
    spec.truncate(keep);
    let scale = n_out as f64 / n as f64;
    spec.iter_mut().for_each(|z| *z *= scale);
    irfft(&spec, n_out, allow_fallback)
}

/// Decompose `shape` around `axis` into `(outer, len, inner)`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Apply `f` to every line of `data` along the middle axis of an
/// `(outer, len, inner)` layout, writing lines of length `out_len`.
pub(crate) fn map_lines<T: Copy, U: Copy + Default>(
    data: &[T],
    (outer, len, inner): (usize, usize, usize),
    out_len: usize,
    mut f: impl FnMut(&[T]) -> Result<Vec<U>>,
) -> Result<Vec<U>> {
    let mut out = vec![U::default(); outer * out_len * inner];
    let mut line = Vec::with_capacity(len);
    for o in 0..outer {
        for i in 0..inner {
            line.clear();
            line.extend((0..len).map(|j| data[(o * len + j) * inner + i]));
            let res = f(&line)?;
            debug_assert_eq!(res.len(), out_len);
            for (j, v) in res.into_iter().enumerate() {
                out[(o * out_len + j) * inner + i] = v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[C64]) -> Vec<C64> {
        let mut b = x.to_vec();
        direct_dft(&mut b, false);
        b
    }

    #[test]
    fn constant_signal_has_only_dc() {
        let x = vec![2.5; 8];
        let spec = rfft(&x, false).unwrap();
        assert!((spec[0].re - 20.0).abs() < 1e-12);
        for z in &spec[1..] {
            assert!(z.norm() < 1e-12);
        }
    }

    #[test]
    fn cosine_mode_one_is_half_n() {
        let x: Vec<f64> = (0..8).map(|j| (2.0 * PI * j as f64 / 8.0).cos()).collect();
        let spec = rfft(&x, false).unwrap();
        assert!((spec[1] - C64::new(4.0, 0.0)).norm() < 1e-12);
        for (k, z) in spec.iter().enumerate() {
            if k != 1 {
                assert!(z.norm() < 1e-12, "mode {k} = {z}");
            }
        }
    }

    #[test]
    fn radix2_matches_direct_dft() {
        let x: Vec<C64> = (0..16)
            .map(|j| C64::new((j as f64 * 0.37).sin(), (j as f64 * 1.3).cos()))
            .collect();
        let mut fast = x.clone();
        fft_in_place(&mut fast, false, false).unwrap();
        for (a, b) in fast.iter().zip(naive(&x)) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn odd_lengths_need_the_fallback() {
        let x = vec![1.0, 2.0, 3.0];
        assert!(matches!(rfft(&x, false), Err(Error::UnsupportedLength(3))));
        let spec = rfft(&x, true).unwrap();
        assert!((spec[0].re - 6.0).abs() < 1e-12);
        let back = irfft(&spec, 3, true).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn irfft_rejects_too_many_modes() {
        let spec = vec![C64::new(1.0, 0.0); 6];
        assert!(matches!(
            irfft(&spec, 4, false),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn fourier_interpolation_of_cosine() {
        let x: Vec<f64> = (0..8).map(|j| (2.0 * PI * j as f64 / 8.0).cos()).collect();
        let mut spec = rfft(&x, false).unwrap();
        // Rescale so the inverse at 16 points keeps the amplitude.
        spec.iter_mut().for_each(|z| *z *= 2.0);
        let fine = irfft(&spec, 16, false).unwrap();
        for (j, v) in fine.iter().enumerate() {
            let exact = (2.0 * PI * j as f64 / 16.0).cos();
            assert!((v - exact).abs() < 1e-10);
        }
    }
}
