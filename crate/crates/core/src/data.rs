//! Gaussian random forcings on the periodic unit box and their Poisson
//! solutions `-Laplace u = f`, `mean(u) = 0`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::discretization::{subsample_grid_indices, Discretization, Domain, DomainKind, Field};
use crate::error::{ContainerError, Error, Result};
use crate::io::{container_read, container_write, Container};
use crate::tensor::{fft, Tensor, C64};

/// Covariance `sigma^2 (4 pi^2 |k|^2 + tau^2)^(-alpha)` per Fourier mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrfSpec {
    pub sigma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for GrfSpec {
    fn default() -> Self {
        GrfSpec {
            sigma: 1.0,
            tau: 3.0,
            alpha: 2.0,
            seed: 0,
        }
    }
}

impl GrfSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.tau > 0.0) {
            return Err(Error::InvalidArgument("GRF sigma and tau must be positive".into()));
        }
        if !(self.alpha > dim as f64 / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "GRF smoothness alpha = {} must exceed {} in {dim}-D",
                self.alpha,
                dim as f64 / 2.0
            )));
        }
        Ok(())
    }

    pub fn density(&self, k2: f64) -> f64 {
        self.sigma * self.sigma * (4.0 * PI * PI * k2 + self.tau * self.tau).powf(-self.alpha)
    }
}

/// Integer frequency of FFT index `i` on `n` points; `None` for Nyquist.
fn freq(i: usize, n: usize) -> Option<f64> {
    if n % 2 == 0 && i == n / 2 {
        None
    } else if i < n.div_ceil(2) {
        Some(i as f64)
    } else {
        Some(i as f64 - n as f64)
    }
}

/// Unnormalized forward (or 1/n inverse) transform over every axis of a
/// row-major `n^d` array.
fn fft_nd(buf: &mut [C64], n: usize, d: usize, inverse: bool) -> Result<()> {
    let total = buf.len();
    let mut line = vec![C64::new(0.0, 0.0); n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        for start in 0..total {
            if (start / stride) % n != 0 {
                continue;
            }
            for (j, v) in line.iter_mut().enumerate() {
                *v = buf[start + j * stride];
            }
            fft::fft_in_place(&mut line, inverse, false)?;
            for (j, v) in line.iter().enumerate() {
                buf[start + j * stride] = *v;
            }
        }
    }
    Ok(())
}

/// Integer wavevectors per flat index (`None` if any component is Nyquist).
fn wavevectors(n: usize, d: usize) -> Vec<Option<Vec<f64>>> {
    (0..n.pow(d as u32))
        .map(|flat| {
            let mut rem = flat;
            let mut k = vec![0.0; d];
            for a in (0..d).rev() {
                k[a] = freq(rem % n, n)?;
                rem /= n;
            }
            Some(k)
        })
        .collect()
}

fn unit_torus_grid(disc: &Discretization) -> Result<(usize, usize)> {
    let shape = disc.require_torus_grid()?;
    if disc.domain().lengths().iter().any(|l| (l - 1.0).abs() > 1e-12) {
        return Err(Error::UnsupportedDomain("expected the unit torus".into()));
    }
    Ok((shape[0], shape.len()))
}

fn grf_with_rng(spec: &GrfSpec, disc: &Arc<Discretization>, rng: &mut ChaCha8Rng) -> Result<Field> {
    let (n, d) = unit_torus_grid(disc)?;
    spec.validate(d)?;
    if !n.is_power_of_two() {
        return Err(Error::UnsupportedLength(n));
    }
    let total = disc.len();
    let mut buf: Vec<C64> = (0..total)
        .map(|_| C64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    fft_nd(&mut buf, n, d, false)?;
    let root_n = (total as f64).sqrt();
    for (z, k) in buf.iter_mut().zip(wavevectors(n, d)) {
        *z *= match k {
            Some(k) if k.iter().any(|&v| v != 0.0) => {
                spec.density(k.iter().map(|v| v * v).sum()).sqrt() * root_n
            }
            _ => 0.0,
        };
    }
    fft_nd(&mut buf, n, d, true)?;
    Field::new(disc.clone(), buf.iter().map(|z| z.re).collect(), 1)
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One real GRF sample on a power-of-two grid of the unit torus. The zero
/// mode and Nyquist modes are zero; the same seed gives the same field.
pub fn grf_sample(spec: &GrfSpec, disc: &Arc<Discretization>) -> Result<Field> {
    grf_with_rng(spec, disc, &mut sample_rng(spec.seed, 0))
}

/// Spectral solve of `-Laplace u = f` on the unit torus with `mean(u) = 0`.
/// A mean below `1e-6` in magnitude is removed; a larger one is an error.
pub fn poisson_solve(f: &Field) -> Result<Field> {
    let disc = f.disc();
    let (n, d) = unit_torus_grid(disc)?;
    if f.channels() != 1 {
        return Err(Error::InvalidArgument("poisson_solve expects a scalar field".into()));
    }
    let mean = f.values().iter().sum::<f64>() / f.len() as f64;
    if mean.abs() >= 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "forcing has mean {mean:e}; the periodic problem needs a mean-zero forcing"
        )));
    }
    let mut buf: Vec<C64> = f.values().iter().map(|v| C64::new(v - mean, 0.0)).collect();
    fft_nd(&mut buf, n, d, false)?;
    for (flat, z) in buf.iter_mut().enumerate() {
        let mut rem = flat;
        let mut k2 = 0.0;
        for _ in 0..d {
            let i = rem % n;
            rem /= n;
            let k = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
            k2 += k * k;
        }
        *z = if k2 == 0.0 { C64::new(0.0, 0.0) } else { *z / (4.0 * PI * PI * k2) };
    }
    fft_nd(&mut buf, n, d, true)?;
    Field::new(disc.clone(), buf.iter().map(|z| z.re).collect(), 1)
}

/// Forcing/solution pairs on a shared native torus grid.
#[derive(Debug, Clone)]
pub struct PoissonDataset {
    pub spec: GrfSpec,
    pub seed: u64,
    pub disc: Arc<Discretization>,
    pub forcing: Vec<Field>,
    pub solution: Vec<Field>,
}

const KIND: &str = "poisson-torus";

impl PoissonDataset {
    /// Sample `i` draws from stream `i` of the seed, so prefixes of larger
    /// datasets coincide with smaller ones.
    pub fn generate(spec: &GrfSpec, dim: usize, n: usize, count: usize, seed: u64) -> Result<Self> {
        let kind = match dim {
            1 => DomainKind::Torus1d,
            2 => DomainKind::Torus2d,
            _ => return Err(Error::InvalidArgument(format!("dimension {dim} is not supported"))),
        };
        let disc = Arc::new(Discretization::uniform_grid(&Domain::unit(kind), n)?);
        let mut forcing = Vec::with_capacity(count);
        let mut solution = Vec::with_capacity(count);
        for i in 0..count {
            let f = grf_with_rng(spec, &disc, &mut sample_rng(seed, i as u64))?;
            solution.push(poisson_solve(&f)?);
            forcing.push(f);
        }
        Ok(PoissonDataset {
            spec: *spec,
            seed,
            disc,
            forcing,
            solution,
        })
    }

    pub fn len(&self) -> usize {
        self.forcing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forcing.is_empty()
    }

    pub fn native_resolution(&self) -> usize {
        self.disc.grid_shape().expect("grid")[0]
    }

    pub fn dim(&self) -> usize {
        self.disc.dim()
    }

    /// First `n_train` samples and the rest.
    pub fn split(&self, n_train: usize) -> Result<(PoissonDataset, PoissonDataset)> {
        if n_train > self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot take {n_train} training samples from {}",
                self.len()
            )));
        }
        let part = |r: std::ops::Range<usize>| PoissonDataset {
            spec: self.spec,
            seed: self.seed,
            disc: self.disc.clone(),
            forcing: self.forcing[r.clone()].to_vec(),
            solution: self.solution[r].to_vec(),
        };
        Ok((part(0..n_train), part(n_train..self.len())))
    }

    /// All samples stride-subsampled to `m` points per axis.
    pub fn at_resolution(&self, m: usize) -> Result<(Arc<Discretization>, Vec<Field>, Vec<Field>)> {
        let native = self.native_resolution();
        if m > native {
            return Err(Error::InvalidArgument(format!(
                "resolution {m} exceeds the native {native}"
            )));
        }
        if m == native {
            return Ok((self.disc.clone(), self.forcing.clone(), self.solution.clone()));
        }
        let idx = subsample_grid_indices(&self.disc, m)?;
        let disc = Arc::new(Discretization::uniform_grid(self.disc.domain(), m)?);
        let pick = |fs: &[Field]| -> Result<Vec<Field>> {
            fs.iter()
                .map(|f| Field::new(disc.clone(), idx.iter().map(|&i| f.values()[i]).collect(), 1))
                .collect()
        };
        Ok((disc.clone(), pick(&self.forcing)?, pick(&self.solution)?))
    }

    pub fn to_container(&self) -> Result<Container> {
        let n = self.disc.len();
        let stack = |fs: &[Field]| {
            Tensor::real(&[fs.len(), n], fs.iter().flat_map(|f| f.values().iter().copied()).collect())
        };
        let mut c = Container::new();
        c.push("forcing", stack(&self.forcing)?)?;
        c.push("solution", stack(&self.solution)?)?;
        c.set_meta("kind", KIND.into());
        c.set_meta("dim", self.dim().into());
        c.set_meta("resolution", self.native_resolution().into());
        c.set_meta("count", self.len().into());
        c.set_meta("seed", self.seed.into());
        c.set_meta("grf", serde_json::to_value(self.spec).expect("spec serializes"));
        c.set_meta(
            "task",
            "-Laplace u = f on the periodic unit box, mean(u) = 0; f Gaussian random field".into(),
        );
        Ok(c)
    }

    pub fn from_container(c: &Container) -> std::result::Result<Self, ContainerError> {
        let bad = |m: &str| ContainerError::Header(m.to_string());
        if c.meta_value("kind")?.as_str() != Some(KIND) {
            return Err(bad("not a Poisson dataset"));
        }
        let int = |k: &str| c.meta_value(k)?.as_u64().ok_or_else(|| bad(k));
        let dim = int("dim")? as usize;
        let n = int("resolution")? as usize;
        let seed = int("seed")?;
        let spec: GrfSpec =
            serde_json::from_value(c.meta_value("grf")?.clone()).map_err(|e| bad(&e.to_string()))?;
        let kind = if dim == 1 { DomainKind::Torus1d } else { DomainKind::Torus2d };
        let disc = Arc::new(
            Discretization::uniform_grid(&Domain::unit(kind), n).map_err(|e| bad(&e.to_string()))?,
        );
        let unstack = |name: &str| -> std::result::Result<Vec<Field>, ContainerError> {
            let t = c.require(name)?;
            let v = t.real_data().map_err(|e| bad(&e.to_string()))?;
            if t.shape().len() != 2 || t.shape()[1] != disc.len() {
                return Err(bad(&format!("entry `{name}` has shape {:?}", t.shape())));
            }
            v.chunks(disc.len())
                .map(|row| Field::new(disc.clone(), row.to_vec(), 1).map_err(|e| bad(&e.to_string())))
                .collect()
        };
        Ok(PoissonDataset {
            spec,
            seed,
            forcing: unstack("forcing")?,
            solution: unstack("solution")?,
            disc,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container_write(path, &self.to_container()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let c = container_read(path)?;
        Self::from_container(&c).map_err(|source| Error::Container {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Generate and write a dataset in one go.
pub fn generate_dataset(
    spec: &GrfSpec,
    n: usize,
    count: usize,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<PoissonDataset> {
    let ds = PoissonDataset::generate(spec, 2, n, count, seed)?;
    ds.save(path)?;
    Ok(ds)
}
