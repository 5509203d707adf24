//! Dense vectors, support sets, and the hard-thresholding operator.
//!
//! Every algorithm step in the crate bottoms out here: local SGD updates are
//! axpy loops on [`DenseVector`], and sparsity is enforced by
//! [`hard_threshold`], which keeps the `tau` largest-magnitude coordinates
//! (ties broken toward the lower index) and writes exact zeros elsewhere.

use std::cmp::Ordering;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense coordinate vector of fixed length.
///
/// The public operations keep entries finite; callers that run iterative
/// updates check [`DenseVector::all_finite`] after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector<F: Real> {
    values: Vec<F>,
}

impl<F: Real> DenseVector<F> {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![F::zero(); len],
        }
    }

    pub fn from_vec(values: Vec<F>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<F> {
        self.values
    }

    /// Index set of coordinates that are not exactly zero.
    pub fn support(&self) -> SupportSet {
        SupportSet {
            indices: self
                .values
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_zero())
                .map(|(i, _)| i)
                .collect(),
        }
    }

    /// Number of coordinates that are not exactly zero.
    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| !v.is_zero()).count()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> F {
        self.values.iter().map(|v| *v * *v).sum()
    }

    pub fn dot(&self, other: &Self) -> F {
        debug_assert_eq!(self.len(), other.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a * *b)
            .sum()
    }

    /// `self += a * other`, entrywise.
    pub fn axpy(&mut self, a: F, other: &[F]) {
        debug_assert_eq!(self.len(), other.len());
        for (x, g) in self.values.iter_mut().zip(other) {
            *x += a * *g;
        }
    }

    pub fn scale(&mut self, a: F) {
        for x in &mut self.values {
            *x *= a;
        }
    }

    /// Squared Euclidean distance to `other`.
    pub fn dist_sq(&self, other: &Self) -> F {
        debug_assert_eq!(self.len(), other.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let d = *a - *b;
                d * d
            })
            .sum()
    }
}

impl<F: Real> Deref for DenseVector<F> {
    type Target = [F];

    fn deref(&self) -> &[F] {
        &self.values
    }
}

impl<F: Real> DerefMut for DenseVector<F> {
    fn deref_mut(&mut self) -> &mut [F] {
        &mut self.values
    }
}

/// Strictly increasing, duplicate-free set of coordinate indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SupportSet {
    indices: Vec<usize>,
}

impl SupportSet {
    /// Builds a support set from arbitrary indices, sorting and deduplicating.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    /// Size of the intersection with `other` (both sides are sorted).
    pub fn intersection_len(&self, other: &SupportSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Sorted, deduplicated union of the given support sets.
pub fn support_union(parts: &[SupportSet]) -> SupportSet {
    let mut indices: Vec<usize> = parts.iter().flat_map(|s| s.iter()).collect();
    indices.sort_unstable();
    indices.dedup();
    SupportSet { indices }
}

/// Sparsity budget `tau`, optionally paired with the true sparsity `tau_star`.
///
/// The contraction factor of the thresholding step is only defined for
/// `tau > tau_star`, so equality is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparsityBudget {
    pub tau: usize,
    pub tau_star: Option<usize>,
}

impl SparsityBudget {
    pub fn new(tau: usize, dim: usize) -> Result<Self> {
        if tau == 0 || tau > dim {
            return Err(Error::Config(format!(
                "sparsity budget tau={tau} must lie in [1, {dim}]"
            )));
        }
        Ok(Self {
            tau,
            tau_star: None,
        })
    }

    pub fn with_true_sparsity(mut self, tau_star: usize) -> Result<Self> {
        if tau_star == 0 || tau_star >= self.tau {
            return Err(Error::Config(format!(
                "true sparsity tau_star={tau_star} must satisfy 1 <= tau_star < tau={}",
                self.tau
            )));
        }
        self.tau_star = Some(tau_star);
        Ok(self)
    }
}

/// Indices of the `tau` largest-magnitude entries of `values`, ties broken
/// toward the lower index. Returned sorted ascending.
pub fn top_tau_indices<F: Real>(values: &[F], tau: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    if tau < values.len() {
        order.select_nth_unstable_by(tau - 1, |&a, &b| {
            magnitude_order(values[a], a, values[b], b)
        });
        order.truncate(tau);
    }
    order.sort_unstable();
    order
}

// Total order: larger magnitude first, lower index first among equals.
fn magnitude_order<F: Real>(va: F, a: usize, vb: F, b: usize) -> Ordering {
    match vb.abs().partial_cmp(&va.abs()) {
        Some(Ordering::Equal) | None => a.cmp(&b),
        Some(ord) => ord,
    }
}

/// Keeps the `tau` largest-magnitude coordinates of `x` (exact selection,
/// lower index wins ties) and zeroes the rest; kept coordinates retain
/// their input values.
pub fn hard_threshold<F: Real>(x: &DenseVector<F>, tau: usize) -> Result<DenseVector<F>> {
    if tau == 0 || tau > x.len() {
        return Err(Error::Config(format!(
            "hard_threshold budget tau={tau} must lie in [1, {}]",
            x.len()
        )));
    }
    if tau == x.len() {
        return Ok(x.clone());
    }
    let mut out = DenseVector::zeros(x.len());
    for i in top_tau_indices(x.as_slice(), tau) {
        out[i] = x[i];
    }
    Ok(out)
}

/// Applies [`hard_threshold`] independently to each of `blocks` equal-length
/// contiguous blocks of `x` (one block per class for stacked parameters).
pub fn hard_threshold_blocks<F: Real>(
    x: &DenseVector<F>,
    tau: usize,
    blocks: usize,
) -> Result<DenseVector<F>> {
    if blocks == 0 || x.len() % blocks != 0 {
        return Err(Error::Dimension(format!(
            "length {} is not divisible into {blocks} blocks",
            x.len()
        )));
    }
    if blocks == 1 {
        return hard_threshold(x, tau);
    }
    let dim = x.len() / blocks;
    if tau == 0 || tau > dim {
        return Err(Error::Config(format!(
            "hard_threshold budget tau={tau} must lie in [1, {dim}]"
        )));
    }
    let mut out = DenseVector::zeros(x.len());
    for b in 0..blocks {
        let lo = b * dim;
        let block = &x.as_slice()[lo..lo + dim];
        if tau == dim {
            out.as_mut_slice()[lo..lo + dim].copy_from_slice(block);
            continue;
        }
        for i in top_tau_indices(block, tau) {
            out[lo + i] = block[i];
        }
    }
    Ok(out)
}

/// Projection onto the support `s`: equal to `x` on indices in `s`, zero
/// elsewhere.
pub fn restrict<F: Real>(x: &DenseVector<F>, s: &SupportSet) -> Result<DenseVector<F>> {
    let mut out = DenseVector::zeros(x.len());
    for i in s.iter() {
        if i >= x.len() {
            return Err(Error::Dimension(format!(
                "support index {i} out of range for dimension {}",
                x.len()
            )));
        }
        out[i] = x[i];
    }
    Ok(out)
}
