//! Comparator solvers reusing the completion core: matrix completion on the
//! last-mode unfolding, and completion of a balanced "square" reshape of the
//! permuted tensor.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::{solve, SolveReport, SolverConfig};
use crate::tensor::{DenseTensor, ObservationSet};

/// Linear-index translation between a tensor and the same data with its
/// modes permuted, read in generalized column-major order.
#[derive(Debug, Clone)]
pub struct PermutedReshape {
    dims: Vec<usize>,
    perm: Vec<usize>,
    strides: Vec<usize>,
    permuted_strides: Vec<usize>,
    left_dim: usize,
    right_dim: usize,
}

impl PermutedReshape {
    /// `perm` lists 1-based modes; the first `split` of them become the rows
    /// of the reshaped matrix.
    pub fn new(dims: &[usize], perm: &[usize], split: usize) -> Result<Self> {
        let n = dims.len();
        if perm.len() != n {
            return Err(Error::InvalidArgument(format!(
                "permutation of length {} for an order-{n} tensor",
                perm.len()
            )));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p == 0 || p > n || seen[p - 1] {
                return Err(Error::InvalidArgument(format!(
                    "invalid mode permutation {perm:?}"
                )));
            }
            seen[p - 1] = true;
        }
        if split == 0 || split >= n {
            return Err(Error::InvalidArgument(format!(
                "split {split} outside [1, {}]",
                n - 1
            )));
        }
        let mut strides = vec![1usize; n];
        for k in 1..n {
            strides[k] = strides[k - 1] * dims[k - 1];
        }
        let mut permuted_strides = vec![1usize; n];
        for k in 1..n {
            permuted_strides[k] = permuted_strides[k - 1] * dims[perm[k - 1] - 1];
        }
        let left_dim = perm[..split].iter().map(|&p| dims[p - 1]).product();
        let right_dim = perm[split..].iter().map(|&p| dims[p - 1]).product();
        Ok(Self {
            dims: dims.to_vec(),
            perm: perm.to_vec(),
            strides,
            permuted_strides,
            left_dim,
            right_dim,
        })
    }

    pub fn matrix_dims(&self) -> [usize; 2] {
        [self.left_dim, self.right_dim]
    }

    /// 0-based linear index in the original tensor to its position in the
    /// permuted layout.
    pub fn forward(&self, idx: usize) -> usize {
        let mut out = 0;
        for (k, &p) in self.perm.iter().enumerate() {
            let coord = (idx / self.strides[p - 1]) % self.dims[p - 1];
            out += coord * self.permuted_strides[k];
        }
        out
    }

    /// Inverse of [`forward`](Self::forward).
    pub fn backward(&self, idx: usize) -> usize {
        let mut out = 0;
        for (k, &p) in self.perm.iter().enumerate() {
            let coord = (idx / self.permuted_strides[k]) % self.dims[p - 1];
            out += coord * self.strides[p - 1];
        }
        out
    }

    /// Observations with indices carried into the permuted layout.
    pub fn remap_observations(&self, obs: &ObservationSet) -> Result<ObservationSet> {
        let mut pairs: Vec<(usize, f64)> = obs
            .indices()
            .iter()
            .zip(obs.values())
            .map(|(&idx, &v)| (self.forward(idx - 1) + 1, v))
            .collect();
        pairs.sort_unstable_by_key(|&(idx, _)| idx);
        let (indices, values) = pairs.into_iter().unzip();
        ObservationSet::new(
            vec![self.left_dim, self.right_dim],
            indices,
            values,
        )
    }

    /// Reads a completed matrix-shaped tensor back into the original layout.
    pub fn restore(&self, reshaped: &DenseTensor) -> Result<DenseTensor> {
        if reshaped.len() != self.dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "reshaped tensor has {} entries, expected {}",
                reshaped.len(),
                self.dims.iter().product::<usize>()
            )));
        }
        let mut values = vec![0.0; reshaped.len()];
        for (idx, slot) in values.iter_mut().enumerate() {
            *slot = reshaped.values()[self.forward(idx)];
        }
        DenseTensor::new(self.dims.clone(), values)
    }
}

/// Balanced two-group split of the modes: the permutation, the split point,
/// and the resulting matrix shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SquarePlan {
    /// 1-based modes, row group first, each group in ascending order.
    pub perm: Vec<usize>,
    /// Number of leading modes forming the rows.
    pub split: usize,
    pub left_dim: usize,
    pub right_dim: usize,
}

impl SquarePlan {
    pub fn reshape(&self, dims: &[usize]) -> Result<PermutedReshape> {
        let r = PermutedReshape::new(dims, &self.perm, self.split)?;
        if r.left_dim != self.left_dim || r.right_dim != self.right_dim {
            return Err(Error::ShapeMismatch(format!(
                "plan {self:?} does not match dims {dims:?}"
            )));
        }
        Ok(r)
    }
}

/// Searches every two-group split of the modes for the most nearly square
/// matrix shape. Ties go to the lexicographically smallest descending-sorted
/// row-group dimensions, then to the smaller row group.
pub fn square_plan(dims: &[usize]) -> Result<SquarePlan> {
    let n = dims.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "square reshape needs at least two modes".into(),
        ));
    }
    let total: usize = dims.iter().product();
    let mut best: Option<(usize, Vec<usize>, usize, Vec<usize>)> = None;
    for bits in 1usize..(1 << n) - 1 {
        let subset: Vec<usize> = (0..n).filter(|k| bits >> k & 1 == 1).map(|k| k + 1).collect();
        let left: usize = subset.iter().map(|&p| dims[p - 1]).product();
        let right = total / left;
        let diff = left.abs_diff(right);
        let mut left_desc: Vec<usize> = subset.iter().map(|&p| dims[p - 1]).collect();
        left_desc.sort_unstable_by(|a, b| b.cmp(a));
        let key = (diff, left_desc, subset.len(), subset);
        match &best {
            Some(b) if (&b.0, &b.1, &b.2) <= (&key.0, &key.1, &key.2) => {}
            _ => best = Some(key),
        }
    }
    let (_, _, split, subset) = best.unwrap();
    let mut perm = subset.clone();
    perm.extend((1..=n).filter(|p| !subset.contains(p)));
    let left_dim = perm[..split].iter().map(|&p| dims[p - 1]).product();
    let right_dim = perm[split..].iter().map(|&p| dims[p - 1]).product();
    Ok(SquarePlan {
        perm,
        split,
        left_dim,
        right_dim,
    })
}

fn complete_reshaped(
    obs: &ObservationSet,
    map: &PermutedReshape,
    cfg: &SolverConfig,
) -> Result<(DenseTensor, SolveReport)> {
    let obs2 = map.remap_observations(obs)?;
    let mut cfg2 = cfg.clone();
    // Only the row-side factorization drives the completion.
    cfg2.alphas = vec![1.0, 0.0];
    let (est2, report) = solve(&obs2, &cfg2)?;
    Ok((map.restore(&est2)?, report))
}

/// Matrix completion on the last-mode unfolding: the tensor is reshaped to
/// `I_N × Π_{j<N} I_j`, completed as a two-way problem at the config's ranks,
/// and folded back. `cfg` describes the two-way solve.
pub fn matcomp(obs: &ObservationSet, cfg: &SolverConfig) -> Result<(DenseTensor, SolveReport)> {
    let n = obs.dims().len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "matrix completion needs at least two modes".into(),
        ));
    }
    let mut perm = vec![n];
    perm.extend(1..n);
    let map = PermutedReshape::new(obs.dims(), &perm, 1)?;
    complete_reshaped(obs, &map, cfg)
}

/// Completion of the plan's square reshape: permute and reshape the indices,
/// complete the matrix at the config's ranks, and undo the reshape.
pub fn square_solve(
    obs: &ObservationSet,
    plan: &SquarePlan,
    cfg: &SolverConfig,
) -> Result<(DenseTensor, SolveReport)> {
    let map = plan.reshape(obs.dims())?;
    complete_reshaped(obs, &map, cfg)
}
