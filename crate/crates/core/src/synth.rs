//! Synthetic low-rank tensors with uniformly sampled observations: a Tucker
//! core multiplied by per-mode factor matrices, three draw families, and a
//! peak-scaled additive noise model.

use nalgebra::QR;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Matrix, ObservationSet};

/// Distribution family for the core and factor draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Core and factors i.i.d. standard normal.
    Gaussian,
    /// Core and factors i.i.d. uniform on [-0.5, 0.5).
    UniformCentered,
    /// Core uniform on [0, 1); factors orthonormal with singular values
    /// decaying as `i^{-1/2}`.
    PowerLaw,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "uniform_centered" => Ok(Self::UniformCentered),
            "power_law" => Ok(Self::PowerLaw),
            other => Err(Error::InvalidConfig(format!(
                "unknown family '{other}' (expected gaussian, uniform_centered, or power_law)"
            ))),
        }
    }
}

/// Recipe for one synthetic instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub dims: Vec<usize>,
    /// Core size shared across modes; every mode unfolding of the truth has
    /// rank at most this.
    #[serde(rename = "rank")]
    pub core_rank: usize,
    pub family: Family,
    /// Fraction of entries observed, in (0, 1].
    pub sr: f64,
    /// Noise level relative to the truth's peak entry.
    #[serde(rename = "sigma", default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::InvalidConfig("dims must be nonempty".into()));
        }
        let min_dim = *self.dims.iter().min().unwrap();
        if self.core_rank == 0 || self.core_rank > min_dim {
            return Err(Error::InvalidConfig(format!(
                "core rank {} outside [1, {min_dim}] for dims {:?}",
                self.core_rank, self.dims
            )));
        }
        if !(self.sr > 0.0 && self.sr <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sample ratio {} outside (0, 1]",
                self.sr
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise sigma {} is negative",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

fn draw_core(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<DenseTensor> {
    let dims = vec![spec.core_rank; spec.dims.len()];
    let total: usize = dims.iter().product();
    let values = (0..total)
        .map(|_| match spec.family {
            Family::Gaussian => rng.sample(StandardNormal),
            Family::UniformCentered => rng.random::<f64>() - 0.5,
            Family::PowerLaw => rng.random::<f64>(),
        })
        .collect();
    DenseTensor::new(dims, values)
}

fn draw_factor(family: Family, rows: usize, rank: usize, rng: &mut ChaCha8Rng) -> Matrix {
    match family {
        Family::Gaussian | Family::UniformCentered => {
            let mut a = Matrix::zeros(rows, rank);
            for j in 0..rank {
                for i in 0..rows {
                    a[(i, j)] = match family {
                        Family::Gaussian => rng.sample(StandardNormal),
                        _ => rng.random::<f64>() - 0.5,
                    };
                }
            }
            a
        }
        Family::PowerLaw => {
            let mut g = Matrix::zeros(rows, rank);
            for j in 0..rank {
                for i in 0..rows {
                    g[(i, j)] = rng.sample(StandardNormal);
                }
            }
            let mut q = QR::new(g).q();
            for j in 0..rank {
                let scale = 1.0 / ((j + 1) as f64).sqrt();
                let mut col = q.column_mut(j);
                col *= scale;
            }
            q
        }
    }
}

/// Adds i.i.d. normal noise scaled so its peak entry is exactly
/// `sigma` times the truth's peak entry.
pub fn add_noise(truth: &DenseTensor, sigma: f64, rng: &mut ChaCha8Rng) -> Result<DenseTensor> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma {sigma} is negative"
        )));
    }
    if sigma == 0.0 {
        return Ok(truth.clone());
    }
    let noise: Vec<f64> = (0..truth.len()).map(|_| rng.sample(StandardNormal)).collect();
    let noise_peak = noise.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if noise_peak == 0.0 {
        return Err(Error::InvalidArgument(
            "noise draw has zero peak entry".into(),
        ));
    }
    let scale = sigma * truth.max_abs() / noise_peak;
    let values = truth
        .values()
        .iter()
        .zip(&noise)
        .map(|(t, n)| t + scale * n)
        .collect();
    DenseTensor::new(truth.dims().to_vec(), values)
}

/// Number of observed entries for a sample ratio: round half away from zero,
/// clamped to at least one and at most every entry.
pub fn sample_count(sr: f64, total: usize) -> usize {
    ((sr * total as f64).round() as usize).clamp(1, total)
}

/// Draws one instance: the clean truth and the observation set, whose values
/// carry noise when `noise_sigma` is positive. Deterministic given the seed.
pub fn generate(spec: &SynthSpec) -> Result<(DenseTensor, ObservationSet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let core = draw_core(spec, &mut rng)?;
    let mut truth = core;
    for (i, &d) in spec.dims.iter().enumerate() {
        let a = draw_factor(spec.family, d, spec.core_rank, &mut rng);
        truth = truth.mode_product(&a, i + 1)?;
    }
    let observed_source = if spec.noise_sigma > 0.0 {
        add_noise(&truth, spec.noise_sigma, &mut rng)?
    } else {
        truth.clone()
    };
    let total = truth.len();
    let count = sample_count(spec.sr, total);
    let mut indices = rand::seq::index::sample(&mut rng, total, count).into_vec();
    indices.sort_unstable();
    let obs = ObservationSet::from_tensor(
        &observed_source,
        indices.into_iter().map(|i| i + 1).collect(),
    )?;
    Ok((truth, obs))
}
