//! Prototype losses over embeddings, each returning the mean loss and its
//! analytic gradient with respect to every embedding. Prototypes are
//! constants.
//!
//! Soft-assignment losses weight each instance–prototype distance by
//! `softmax_k(cos(z, μ_k) / τ)` and differentiate through both the distance
//! and the weights. With `d_k` the distances, `w` the weights and `L = Σ w_k d_k`:
//!
//! ```text
//! ∂L/∂z = Σ_k w_k ∂d_k/∂z + Σ_k w_k (d_k − L) ∂cos_k/∂z / τ
//! ∂cos_k/∂z = μ_k / (|z||μ_k|) − cos_k · z / |z|²
//! ```

use crate::error::{Error, Result};
use crate::vector::{dot, log_sum_exp, norm, softmax_unchecked, sq_dist};

/// Mean loss and per-embedding gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Instance–prototype distance used by a soft-assignment loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtoDistance {
    /// `||z − μ||₂`.
    Euclidean,
    /// `1 − cos(z, μ)`.
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Weighting {
    /// `softmax_k(cos(z, μ_k)/τ)`; `detach` stops gradients through it.
    Semantic { tau: f64, detach: bool },
    /// `1/K'` for every prototype.
    Uniform,
}

fn check_inputs<E: AsRef<[f64]>, P: AsRef<[f64]>>(embeddings: &[E], prototypes: &[P]) -> Result<usize> {
    if embeddings.is_empty() {
        return Err(Error::EmptyInput("embeddings"));
    }
    let dim = prototypes
        .first()
        .map(|p| p.as_ref().len())
        .ok_or(Error::EmptyInput("prototypes"))?;
    for v in embeddings
        .iter()
        .map(AsRef::as_ref)
        .chain(prototypes.iter().map(AsRef::as_ref))
    {
        if v.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: v.len(),
            });
        }
    }
    Ok(dim)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("tau must be > 0, got {tau}")))
    }
}

/// Cosines of `z` against every prototype and their gradients w.r.t. `z`.
struct CosineTerms {
    cos: Vec<f64>,
    grad: Vec<Vec<f64>>,
}

fn cosine_terms<P: AsRef<[f64]>>(z: &[f64], prototypes: &[P], proto_norms: &[f64]) -> Result<CosineTerms> {
    let nz = norm(z);
    if nz == 0.0 {
        return Err(Error::ZeroNorm { context: "embedding" });
    }
    let mut cos = Vec::with_capacity(prototypes.len());
    let mut grad = Vec::with_capacity(prototypes.len());
    for (mu, &nm) in prototypes.iter().zip(proto_norms) {
        let mu = mu.as_ref();
        let c = dot(z, mu) / (nz * nm);
        let g = mu
            .iter()
            .zip(z)
            .map(|(m, zi)| m / (nz * nm) - c * zi / (nz * nz))
            .collect();
        cos.push(c);
        grad.push(g);
    }
    Ok(CosineTerms { cos, grad })
}

fn prototype_norms<P: AsRef<[f64]>>(prototypes: &[P]) -> Result<Vec<f64>> {
    prototypes
        .iter()
        .map(|p| match norm(p.as_ref()) {
            0.0 => Err(Error::ZeroNorm { context: "prototype" }),
            n => Ok(n),
        })
        .collect()
}

/// Euclidean distances from `z` to every prototype and their gradients
/// (zero at coincident points).
fn euclidean_terms<P: AsRef<[f64]>>(z: &[f64], prototypes: &[P]) -> (Vec<f64>, Vec<Vec<f64>>) {
    prototypes
        .iter()
        .map(|mu| {
            let mu = mu.as_ref();
            let d = sq_dist(z, mu).sqrt();
            let g = if d == 0.0 {
                vec![0.0; z.len()]
            } else {
                z.iter().zip(mu).map(|(a, b)| (a - b) / d).collect()
            };
            (d, g)
        })
        .unzip()
}

/// Softmax weights `softmax_k(cos(z, μ_k)/τ)` for every embedding.
pub fn semantic_weights<E: AsRef<[f64]>, P: AsRef<[f64]>>(
    embeddings: &[E],
    prototypes: &[P],
    tau: f64,
) -> Result<Vec<Vec<f64>>> {
    check_inputs(embeddings, prototypes)?;
    check_tau(tau)?;
    let norms = prototype_norms(prototypes)?;
    embeddings
        .iter()
        .map(|z| {
            let ct = cosine_terms(z.as_ref(), prototypes, &norms)?;
            let scores: Vec<f64> = ct.cos.iter().map(|c| c / tau).collect();
            Ok(softmax_unchecked(&scores))
        })
        .collect()
}

/// Soft-assignment prototype loss `(1/n) Σ_i Σ_k w_ik d(z_i, μ_k)`.
pub fn soft_prototype_loss<E: AsRef<[f64]>, P: AsRef<[f64]>>(
    embeddings: &[E],
    prototypes: &[P],
    distance: ProtoDistance,
    weighting: Weighting,
) -> Result<LossGrad> {
    let dim = check_inputs(embeddings, prototypes)?;
    let needs_cos = distance == ProtoDistance::Cosine || matches!(weighting, Weighting::Semantic { .. });
    if let Weighting::Semantic { tau, .. } = weighting {
        check_tau(tau)?;
    }
    let norms = if needs_cos {
        prototype_norms(prototypes)?
    } else {
        Vec::new()
    };
    let k = prototypes.len();
    let n = embeddings.len() as f64;

    let mut total = 0.0;
    let mut grads = Vec::with_capacity(embeddings.len());
    for z in embeddings {
        let z = z.as_ref();
        let cos = if needs_cos {
            Some(cosine_terms(z, prototypes, &norms)?)
        } else {
            None
        };
        let (dists, dist_grads) = match distance {
            ProtoDistance::Euclidean => euclidean_terms(z, prototypes),
            ProtoDistance::Cosine => {
                let ct = cos.as_ref().expect("computed above");
                let d = ct.cos.iter().map(|c| 1.0 - c).collect();
                let g = ct.grad.iter().map(|g| g.iter().map(|x| -x).collect()).collect();
                (d, g)
            }
        };
        let weights = match weighting {
            Weighting::Semantic { tau, .. } => {
                let ct = cos.as_ref().expect("computed above");
                let scores: Vec<f64> = ct.cos.iter().map(|c| c / tau).collect();
                softmax_unchecked(&scores)
            }
            Weighting::Uniform => vec![1.0 / k as f64; k],
        };
        let loss_i: f64 = weights.iter().zip(&dists).map(|(w, d)| w * d).sum();
        total += loss_i;

        let mut g = vec![0.0; dim];
        for (w, dg) in weights.iter().zip(&dist_grads) {
            for (gi, x) in g.iter_mut().zip(dg) {
                *gi += w * x;
            }
        }
        if let Weighting::Semantic { tau, detach: false } = weighting {
            let ct = cos.as_ref().expect("computed above");
            for ((w, d), cg) in weights.iter().zip(&dists).zip(&ct.grad) {
                let coeff = w * (d - loss_i) / tau;
                for (gi, x) in g.iter_mut().zip(cg) {
                    *gi += coeff * x;
                }
            }
        }
        g.iter_mut().for_each(|x| *x /= n);
        grads.push(g);
    }
    Ok(LossGrad { loss: total / n, grads })
}

/// Semantic-aware prototypical loss: Euclidean distances weighted by the
/// cosine softmax.
pub fn spl_loss<E: AsRef<[f64]>, P: AsRef<[f64]>>(embeddings: &[E], prototypes: &[P], tau: f64) -> Result<LossGrad> {
    soft_prototype_loss(
        embeddings,
        prototypes,
        ProtoDistance::Euclidean,
        Weighting::Semantic { tau, detach: false },
    )
}

/// Labeled-prototype regularizer: cosine distances weighted by the cosine
/// softmax.
pub fn reg_loss<E: AsRef<[f64]>, P: AsRef<[f64]>>(embeddings: &[E], prototypes: &[P], tau: f64) -> Result<LossGrad> {
    soft_prototype_loss(
        embeddings,
        prototypes,
        ProtoDistance::Cosine,
        Weighting::Semantic { tau, detach: false },
    )
}

/// Hard-assignment prototypical loss
/// `−(1/n) Σ_i log softmax_j(−d(z_i, μ_j))[g_i]` with Euclidean `d`.
pub fn pl_loss<E: AsRef<[f64]>, P: AsRef<[f64]>>(
    embeddings: &[E],
    assignments: &[usize],
    prototypes: &[P],
) -> Result<LossGrad> {
    let dim = check_inputs(embeddings, prototypes)?;
    if assignments.len() != embeddings.len() {
        return Err(Error::Shape(format!(
            "{} assignments for {} embeddings",
            assignments.len(),
            embeddings.len()
        )));
    }
    if let Some(&bad) = assignments.iter().find(|&&g| g >= prototypes.len()) {
        return Err(Error::Shape(format!(
            "assignment {bad} outside 0..{}",
            prototypes.len()
        )));
    }
    let n = embeddings.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(embeddings.len());
    for (z, &target) in embeddings.iter().zip(assignments) {
        let (dists, dist_grads) = euclidean_terms(z.as_ref(), prototypes);
        let neg: Vec<f64> = dists.iter().map(|d| -d).collect();
        total += dists[target] + log_sum_exp(&neg);
        let p = softmax_unchecked(&neg);
        let mut g = dist_grads[target].clone();
        for (pj, dg) in p.iter().zip(&dist_grads) {
            for (gi, x) in g.iter_mut().zip(dg) {
                *gi -= pj * x;
            }
        }
        debug_assert_eq!(g.len(), dim);
        g.iter_mut().for_each(|x| *x /= n);
        grads.push(g);
    }
    Ok(LossGrad { loss: total / n, grads })
}

/// Cross-entropy of the true category under `softmax_j(cos(z, μ_j)/τ)`.
/// `labels` index into `prototypes`.
pub fn ce_loss<E: AsRef<[f64]>, P: AsRef<[f64]>>(
    embeddings: &[E],
    labels: &[usize],
    prototypes: &[P],
    tau: f64,
) -> Result<LossGrad> {
    let dim = check_inputs(embeddings, prototypes)?;
    check_tau(tau)?;
    if labels.len() != embeddings.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} embeddings",
            labels.len(),
            embeddings.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= prototypes.len()) {
        return Err(Error::Label(format!("category index {bad}")));
    }
    let norms = prototype_norms(prototypes)?;
    let n = embeddings.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(embeddings.len());
    for (z, &y) in embeddings.iter().zip(labels) {
        let ct = cosine_terms(z.as_ref(), prototypes, &norms)?;
        let scores: Vec<f64> = ct.cos.iter().map(|c| c / tau).collect();
        total += log_sum_exp(&scores) - scores[y];
        let p = softmax_unchecked(&scores);
        let mut g = vec![0.0; dim];
        for (j, (pj, cg)) in p.iter().zip(&ct.grad).enumerate() {
            let coeff = (pj - if j == y { 1.0 } else { 0.0 }) / tau;
            for (gi, x) in g.iter_mut().zip(cg) {
                *gi += coeff * x;
            }
        }
        g.iter_mut().for_each(|x| *x /= n);
        grads.push(g);
    }
    Ok(LossGrad { loss: total / n, grads })
}
