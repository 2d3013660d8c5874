//! Dense finite vectors and the distance/similarity kernels shared by every
//! other module.
//!
//! The slice-level helpers (`sq_dist`, `dot`, `norm`, ...) skip validation and
//! are used in the hot loops; the public `Vector` API checks dimensions and
//! norms.

use crate::error::{Error, Result};

/// A dense vector whose components are all finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        Ok(Vector(values))
    }

    /// Builds a vector from values already known to be finite.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Vector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// `||a - b||_2`.
pub fn euclidean_distance(a: &Vector, b: &Vector) -> Result<f64> {
    check_dims(&a.0, &b.0)?;
    Ok(sq_dist(&a.0, &b.0).sqrt())
}

/// `a·b / (||a||·||b||)`. Zero-norm inputs are rejected.
pub fn cosine_similarity(a: &Vector, b: &Vector) -> Result<f64> {
    check_dims(&a.0, &b.0)?;
    let (na, nb) = (norm(&a.0), norm(&b.0));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm {
            context: "cosine_similarity",
        });
    }
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}

/// Max-subtracted softmax.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("softmax scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("softmax scores"));
    }
    Ok(softmax_unchecked(scores))
}

pub(crate) fn softmax_unchecked(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log Σ exp(s)`, stabilized.
pub(crate) fn log_sum_exp(scores: &[f64]) -> f64 {
    // ln_1p over the non-maximal terms keeps precision when they are tiny.
    let Some((arg, &max)) = scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
        return f64::NEG_INFINITY;
    };
    let rest: f64 = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, s)| (s - max).exp())
        .sum();
    max + rest.ln_1p()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Fixed-order component-wise mean. `rows` must be non-empty and share a dim.
pub(crate) fn mean_of<'a, I>(rows: I, dim: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
        count += 1;
    }
    debug_assert!(count > 0);
    let n = count as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}
