use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{numel, DType, Tensor, C64};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    /// Real values uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    UniformFanIn { fan_in: usize },
    /// Real and imaginary parts i.i.d. `N(0, std^2)`, so the RMS magnitude
    /// of an entry is `std * sqrt(2)`.
    ComplexGaussian { std: f64 },
    Zeros { dtype: DType },
}

/// Named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

impl Parameter {
    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// Real degrees of freedom (complex entries count twice).
    pub fn real_dof(&self) -> usize {
        match self.value.dtype() {
            DType::Real => self.value.len(),
            DType::Complex => 2 * self.value.len(),
        }
    }
}

/// Draw a parameter deterministically from `seed`.
pub fn init_param(name: &str, shape: &[usize], scheme: InitScheme, seed: u64) -> Result<Parameter> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = numel(shape);
    let value = match scheme {
        InitScheme::UniformFanIn { fan_in } => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            Tensor::real(shape, (0..n).map(|_| rng.gen_range(-bound..=bound)).collect())?
        }
        InitScheme::ComplexGaussian { std } => {
            if !(std > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "complex-gaussian std must be positive, got {std}"
                )));
            }
            Tensor::complex(
                shape,
                (0..n)
                    .map(|_| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        C64::new(re * std, im * std)
                    })
                    .collect(),
            )?
        }
        InitScheme::Zeros { dtype } => Tensor::zeros(shape, dtype),
    };
    Ok(Parameter {
        name: name.to_string(),
        value,
    })
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct ParamId(pub usize);

/// Flat, ordered parameter store with unique names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
    next_seed: u64,
}

impl ParamStore {
    /// Store whose parameter draws derive from `seed`.
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
            next_seed: seed,
        }
    }

    pub fn add(&mut self, param: Parameter) -> Result<ParamId> {
        if self.by_name.contains_key(&param.name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{}`",
                param.name
            )));
        }
        let id = self.params.len();
        self.by_name.insert(param.name.clone(), id);
        self.params.push(param);
        Ok(ParamId(id))
    }

    /// Initialize and register a parameter with the next seed in sequence.
    pub fn init(&mut self, name: &str, shape: &[usize], scheme: InitScheme) -> Result<ParamId> {
        let seed = self.next_seed;
        self.next_seed = self.next_seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.add(init_param(name, shape, scheme, seed)?)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() || p.value.dtype() != value.dtype() {
            return Err(Error::Shape(format!(
                "parameter `{}` expects {:?} ({:?}), got {:?} ({:?})",
                p.name,
                p.value.shape(),
                p.value.dtype(),
                value.shape(),
                value.dtype()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total real degrees of freedom.
    pub fn real_dof(&self) -> usize {
        self.params.iter().map(Parameter::real_dof).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let a = init_param("w", &[4, 3], InitScheme::ComplexGaussian { std: 0.1 }, 9).unwrap();
        let b = init_param("w", &[4, 3], InitScheme::ComplexGaussian { std: 0.1 }, 9).unwrap();
        assert_eq!(a, b);
        let u = init_param("u", &[5], InitScheme::UniformFanIn { fan_in: 4 }, 1).unwrap();
        assert!(u.value.re().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn complex_gaussian_rms_magnitude() {
        let p = init_param("w", &[100_000], InitScheme::ComplexGaussian { std: 0.02 }, 3).unwrap();
        let ms: f64 = p.value.cx().iter().map(|z| z.norm_sqr()).sum::<f64>() / 1e5;
        let target = 0.02 * 2f64.sqrt();
        assert!((ms.sqrt() - target).abs() < 0.05 * target);
        let re: Vec<f64> = p.value.cx().iter().map(|z| z.re).collect();
        let var = re.iter().map(|v| v * v).sum::<f64>() / re.len() as f64;
        assert!((var.sqrt() - 0.02).abs() < 0.05 * 0.02);
    }

    #[test]
    fn empty_shape_is_empty_parameter() {
        let p = init_param("e", &[0], InitScheme::UniformFanIn { fan_in: 1 }, 0).unwrap();
        assert_eq!(p.numel(), 0);
    }

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new(0);
        s.init("a", &[1], InitScheme::Zeros { dtype: DType::Real }).unwrap();
        assert!(s.init("a", &[1], InitScheme::Zeros { dtype: DType::Real }).is_err());
    }

    #[test]
    fn nonpositive_std_rejected() {
        assert!(init_param("w", &[1], InitScheme::ComplexGaussian { std: 0.0 }, 0).is_err());
    }
}
