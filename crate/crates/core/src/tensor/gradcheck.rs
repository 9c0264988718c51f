use super::{Data, DType, ParamStore, Tape, Tensor, Var, C64};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    /// `max |autodiff - fd| / max(|autodiff|_inf, |fd|_inf, 1e-8)`; complex
    /// parameters report the worse of the real and imaginary parts.
    pub max_rel_dev: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_dev)
            .fold(0.0, f64::max)
    }
}

fn perturbed(t: &Tensor, idx: usize, delta: f64, imag: bool) -> Tensor {
    match t.data() {
        Data::Real(v) => {
            let mut v = v.clone();
            v[idx] += delta;
            Tensor::from_real(t.shape().to_vec(), v)
        }
        Data::Complex(v) => {
            let mut v = v.clone();
            v[idx] += if imag {
                C64::new(0.0, delta)
            } else {
                C64::new(delta, 0.0)
            };
            Tensor::from_complex(t.shape().to_vec(), v)
        }
    }
}

fn rel_dev(ad: &[f64], fd: &[f64]) -> f64 {
    let scale = ad
        .iter()
        .chain(fd)
        .map(|v| v.abs())
        .fold(1e-8, f64::max);
    ad.iter()
        .zip(fd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Compare reverse-mode gradients of `f` against central differences.
///
/// `f` receives one tracked leaf per parameter of `store`, in store order,
/// and must return a real scalar. It must be deterministic.
pub fn grad_check<F>(store: &ParamStore, f: F, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let values: Vec<Tensor> = store.iter().map(|(_, p)| p.value.clone()).collect();
    if values.is_empty() {
        return Ok(GradCheckReport::default());
    }
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let leaves: Vec<Var> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        f(&tape, &leaves)?.value().item()
    };

    let tape = Tape::new();
    let leaves: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
    let loss = f(&tape, &leaves)?;
    let grads = tape.backward(loss)?;

    let mut entries = Vec::new();
    for (pi, ((_, param), leaf)) in store.iter().zip(&leaves).enumerate() {
        let ad = grads.get_or_zeros(*leaf)?;
        let parts: &[bool] = match param.value.dtype() {
            DType::Real => &[false],
            DType::Complex => &[false, true],
        };
        let mut worst: f64 = 0.0;
        for &imag in parts {
            let ad_part: Vec<f64> = match ad.data() {
                Data::Real(v) => v.clone(),
                Data::Complex(v) => v.iter().map(|z| if imag { z.im } else { z.re }).collect(),
            };
            let mut fd = Vec::with_capacity(ad_part.len());
            for idx in 0..param.value.len() {
                let mut plus = values.clone();
                plus[pi] = perturbed(&values[pi], idx, step, imag);
                let mut minus = values.clone();
                minus[pi] = perturbed(&values[pi], idx, -step, imag);
                fd.push((eval(&plus)? - eval(&minus)?) / (2.0 * step));
            }
            worst = worst.max(rel_dev(&ad_part, &fd));
        }
        entries.push(GradCheckEntry {
            name: param.name.clone(),
            max_rel_dev: worst,
            passed: worst < tolerance,
        });
    }
    Ok(GradCheckReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::InitScheme;

    #[test]
    fn empty_store_passes() {
        let store = ParamStore::new(0);
        let r = grad_check(&store, |t, _| Ok(t.constant(Tensor::scalar(1.0))), 1e-5, 1e-5).unwrap();
        assert!(r.entries.is_empty() && r.passed());
    }

    #[test]
    fn linear_model_gradients() {
        let mut store = ParamStore::new(5);
        store.init("w", &[3, 2], InitScheme::UniformFanIn { fan_in: 3 }).unwrap();
        store.init("b", &[2], InitScheme::UniformFanIn { fan_in: 3 }).unwrap();
        let x = Tensor::real(&[4, 3], (0..12).map(|v| (v as f64 * 0.3).cos()).collect()).unwrap();
        let r = grad_check(
            &store,
            |t, p| {
                let y = t.constant(x.clone()).matmul(p[0])?.add_bias(p[1])?;
                Ok(y.square()?.sum())
            },
            1e-5,
            1e-7,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn complex_mode_mix_gradients() {
        let mut store = ParamStore::new(2);
        store.init("w", &[3, 2, 2], InitScheme::ComplexGaussian { std: 0.5 }).unwrap();
        store.init("x", &[2, 3, 2], InitScheme::ComplexGaussian { std: 1.0 }).unwrap();
        let r = grad_check(
            &store,
            |_, p| Ok(p[1].mode_mix(p[0])?.abs2().sum()),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
