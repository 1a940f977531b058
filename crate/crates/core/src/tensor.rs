//! Dense N-way tensors, mode-n matricization, and masked observations.
//!
//! Values are stored in generalized column-major order: the first index
//! varies fastest, so the 1-based linear index of `(i_1, …, i_N)` is
//! `1 + Σ_k (i_k − 1) · Π_{m<k} I_m`. Mode indices and linear indices are
//! 1-based on every public interface.

use crate::error::{Error, Result};

pub type Matrix = nalgebra::DMatrix<f64>;

/// Largest tensor order the library supports.
pub const MAX_ORDER: usize = 8;

fn validate_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_ORDER {
        return Err(Error::InvalidArgument(format!(
            "tensor order must be between 1 and {MAX_ORDER}, got {}",
            dims.len()
        )));
    }
    let mut total: usize = 1;
    for &d in dims {
        if d == 0 {
            return Err(Error::InvalidArgument(
                "tensor dimensions must be positive".into(),
            ));
        }
        total = total.checked_mul(d).ok_or_else(|| {
            Error::InvalidArgument("tensor dimension product overflows".into())
        })?;
    }
    Ok(total)
}

/// Converts a 1-based mode index to the internal 0-based one.
fn check_mode(mode: usize, order: usize) -> Result<usize> {
    if mode == 0 || mode > order {
        Err(Error::ModeOutOfRange { mode, order })
    } else {
        Ok(mode - 1)
    }
}

/// Dense real tensor of order 1 to 8.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let total = validate_dims(&dims)?;
        if values.len() != total {
            return Err(Error::InvalidArgument(format!(
                "expected {total} values for dims {dims:?}, got {}",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let total = validate_dims(&dims)?;
        Ok(Self {
            dims,
            values: vec![0.0; total],
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// Total number of entries.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Mode-n matricization: an `I_n × Π_{j≠n} I_j` matrix whose columns are
    /// the mode-n fibers, ordered with smaller non-n indices varying fastest.
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        let n = check_mode(mode, self.order())?;
        let rows = self.dims[n];
        let cols = self.values.len() / rows;
        let inner: usize = self.dims[..n].iter().product();
        let block = inner * rows;
        let outer = self.values.len() / block;
        let mut m = Matrix::zeros(rows, cols);
        let dst = m.as_mut_slice();
        for o in 0..outer {
            for i in 0..rows {
                let src = o * block + i * inner;
                let col = o * inner;
                for k in 0..inner {
                    dst[i + (col + k) * rows] = self.values[src + k];
                }
            }
        }
        Ok(m)
    }

    /// Inverse of [`unfold`](Self::unfold) under the same column ordering.
    pub fn fold(m: &Matrix, mode: usize, dims: &[usize]) -> Result<Self> {
        let total = validate_dims(dims)?;
        let n = check_mode(mode, dims.len())?;
        let rows = dims[n];
        let cols = total / rows;
        if m.nrows() != rows || m.ncols() != cols {
            return Err(Error::ShapeMismatch(format!(
                "cannot fold a {}x{} matrix into dims {dims:?} along mode {mode}",
                m.nrows(),
                m.ncols()
            )));
        }
        let inner: usize = dims[..n].iter().product();
        let block = inner * rows;
        let outer = total / block;
        let mut values = vec![0.0; total];
        let src = m.as_slice();
        for o in 0..outer {
            for i in 0..rows {
                let dst = o * block + i * inner;
                let col = o * inner;
                for k in 0..inner {
                    values[dst + k] = src[i + (col + k) * rows];
                }
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            values,
        })
    }

    /// Mode-n product with a matrix: `fold_n(A · T_(n))`, replacing dimension
    /// `I_n` by `a.nrows()`.
    pub fn mode_product(&self, a: &Matrix, mode: usize) -> Result<Self> {
        let n = check_mode(mode, self.order())?;
        if a.ncols() != self.dims[n] {
            return Err(Error::ShapeMismatch(format!(
                "mode-{mode} product needs {} columns, matrix has {}",
                self.dims[n],
                a.ncols()
            )));
        }
        let unfolded = self.unfold(mode)?;
        let product = a * unfolded;
        let mut dims = self.dims.clone();
        dims[n] = a.nrows();
        Self::fold(&product, mode, &dims)
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch {
                expected: self.dims.clone(),
                got: other.dims.clone(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn fro_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `‖estimate − truth‖_F / ‖truth‖_F`.
pub fn relerr(estimate: &DenseTensor, truth: &DenseTensor) -> Result<f64> {
    if estimate.dims != truth.dims {
        return Err(Error::DimMismatch {
            expected: truth.dims.clone(),
            got: estimate.dims.clone(),
        });
    }
    let denom = truth.fro_norm();
    if denom == 0.0 {
        return Err(Error::ZeroNormReference);
    }
    let num = estimate
        .values
        .iter()
        .zip(&truth.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// The observed entries of a partially known tensor: the index set Ω together
/// with the observed values.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    dims: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl ObservationSet {
    /// `indices` are 1-based linear indices, strictly increasing.
    pub fn new(dims: Vec<usize>, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let total = validate_dims(&dims)?;
        if indices.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} indices but {} observed values",
                indices.len(),
                values.len()
            )));
        }
        let mut prev = 0usize;
        for &idx in &indices {
            if idx == 0 || idx > total {
                return Err(Error::InvalidArgument(format!(
                    "observation index {idx} outside [1, {total}]"
                )));
            }
            if idx <= prev {
                return Err(Error::InvalidArgument(
                    "observation indices must be strictly increasing".into(),
                ));
            }
            prev = idx;
        }
        Ok(Self {
            dims,
            indices,
            values,
        })
    }

    /// Observes `t` at the given indices.
    pub fn from_tensor(t: &DenseTensor, indices: Vec<usize>) -> Result<Self> {
        let values = {
            let total = t.len();
            indices
                .iter()
                .map(|&idx| {
                    if idx == 0 || idx > total {
                        Err(Error::InvalidArgument(format!(
                            "observation index {idx} outside [1, {total}]"
                        )))
                    } else {
                        Ok(t.values[idx - 1])
                    }
                })
                .collect::<Result<Vec<f64>>>()?
        };
        Self::new(t.dims.clone(), indices, values)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn sampling_ratio(&self) -> f64 {
        let total: usize = self.dims.iter().product();
        self.indices.len() as f64 / total as f64
    }

    /// `‖ℬ‖_F`, the norm of the observed data.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_dims(&self, t: &DenseTensor) -> Result<()> {
        if self.dims != t.dims {
            return Err(Error::DimMismatch {
                expected: self.dims.clone(),
                got: t.dims.clone(),
            });
        }
        Ok(())
    }

    /// `P_Ω(t)`: keeps the entries of `t` at Ω, zeros out the rest.
    pub fn project(&self, t: &DenseTensor) -> Result<DenseTensor> {
        self.check_dims(t)?;
        let mut out = DenseTensor::zeros(self.dims.clone())?;
        for &idx in &self.indices {
            out.values[idx - 1] = t.values[idx - 1];
        }
        Ok(out)
    }

    /// Keeps `t` on the complement of Ω and writes the observed values on Ω.
    pub fn fill_unobserved(&self, t: &DenseTensor) -> Result<DenseTensor> {
        self.check_dims(t)?;
        let mut out = t.clone();
        for (&idx, &v) in self.indices.iter().zip(&self.values) {
            out.values[idx - 1] = v;
        }
        Ok(out)
    }

    /// The dense tensor ℬ: observed values at Ω, zeros elsewhere.
    pub fn to_dense(&self) -> DenseTensor {
        let mut out = DenseTensor::zeros(self.dims.clone()).expect("dims validated on construction");
        for (&idx, &v) in self.indices.iter().zip(&self.values) {
            out.values[idx - 1] = v;
        }
        out
    }

    /// `‖P_Ω(t) − ℬ‖_F`.
    pub fn residual_norm(&self, t: &DenseTensor) -> Result<f64> {
        self.check_dims(t)?;
        Ok(self
            .indices
            .iter()
            .zip(&self.values)
            .map(|(&idx, &v)| {
                let d = t.values[idx - 1] - v;
                d * d
            })
            .sum::<f64>()
            .sqrt())
    }
}
