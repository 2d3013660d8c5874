//! The composed objective, moving-average prototype updates and the
//! full-batch training loop.

use crate::alignment::{
    decouple, hungarian_match, labeled_prototypes, unlabeled_prototypes, DecoupledData, MatchingResult, PrototypeKind,
    PrototypeSet,
};
use crate::clustering::kmeans_best_of;
use crate::config::{Config, KChoice};
use crate::dataset::TrainingView;
use crate::error::{Error, Result};
use crate::evaluation::estimate_k;
use crate::vector::Vector;

use super::head::{HeadGrad, ProjectionHead};
use super::losses::{ce_loss, pl_loss, reg_loss, soft_prototype_loss, LossGrad, ProtoDistance, Weighting};

/// Per-term values of the training objective at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// Soft-assignment loss of novel-cluster instances against novel prototypes.
    /// Under `no_decouple` this holds the single term over all unlabeled data.
    pub spl_novel: f64,
    /// Soft-assignment loss of known-cluster instances against matched prototypes.
    pub spl_known: f64,
    pub ce: f64,
    /// Unweighted labeled-prototype regularizer.
    pub reg: f64,
    /// `spl_known + ce + gamma * reg`.
    pub known_total: f64,
    /// `spl_novel + known_total`.
    pub total: f64,
}

/// Inputs the objective reads: raw feature vectors plus the fixed
/// pseudo-label structure.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub labeled: Vec<&'a [f64]>,
    /// Known-category index per labeled input.
    pub labels: Vec<usize>,
    pub unlabeled: Vec<&'a [f64]>,
}

impl<'a> Batch<'a> {
    pub fn from_view(view: &TrainingView<'a>) -> Result<Self> {
        let labels = view
            .labeled
            .iter()
            .map(|r| {
                view.label_space
                    .known_index(&r.label)
                    .ok_or_else(|| Error::Label(r.label.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            labeled: view.labeled.iter().map(|r| r.vector.as_slice()).collect(),
            labels,
            unlabeled: view.unlabeled.iter().map(|v| v.as_slice()).collect(),
        })
    }
}

/// Everything `total_loss` needs besides the head parameters.
#[derive(Clone, Debug)]
pub struct Objective<'s> {
    pub labeled_prototypes: &'s PrototypeSet,
    pub unlabeled_prototypes: &'s PrototypeSet,
    pub matching: &'s MatchingResult,
    pub unlabeled_assignment: &'s [usize],
    pub decoupled: &'s DecoupledData,
}

fn embed(head: &ProjectionHead, inputs: &[&[f64]]) -> Vec<Vec<f64>> {
    inputs.iter().map(|x| head.forward_slice(x)).collect()
}

fn scatter(target: &mut [Vec<f64>], indices: &[usize], result: &LossGrad, scale: f64) {
    for (&i, g) in indices.iter().zip(&result.grads) {
        for (t, x) in target[i].iter_mut().zip(g) {
            *t += scale * x;
        }
    }
}

impl Objective<'_> {
    fn prototype_term(
        &self,
        embeddings: &[&[f64]],
        prototypes: &[Vector],
        hard: &[usize],
        config: &Config,
    ) -> Result<LossGrad> {
        if config.ablation.no_soft_assignment {
            return pl_loss(embeddings, hard, prototypes);
        }
        let weighting = if config.ablation.no_semantic_weights {
            Weighting::Uniform
        } else {
            Weighting::Semantic {
                tau: config.tau,
                detach: config.detach_weights,
            }
        };
        soft_prototype_loss(embeddings, prototypes, ProtoDistance::Euclidean, weighting)
    }

    /// Loss breakdown and parameter gradient of the objective at `head`.
    pub fn evaluate(
        &self,
        head: &ProjectionHead,
        batch: &Batch<'_>,
        config: &Config,
    ) -> Result<(LossBreakdown, HeadGrad)> {
        if self.unlabeled_assignment.len() != batch.unlabeled.len() {
            return Err(Error::Shape(
                "cluster assignment does not cover the unlabeled batch".into(),
            ));
        }
        let zl = embed(head, &batch.labeled);
        let zu = embed(head, &batch.unlabeled);
        let mut gl = vec![vec![0.0; head.d_out()]; zl.len()];
        let mut gu = vec![vec![0.0; head.d_out()]; zu.len()];
        let mut out = LossBreakdown::default();
        let pick = |idx: &[usize]| idx.iter().map(|&i| zu[i].as_slice()).collect::<Vec<_>>();

        if config.ablation.no_decouple {
            if !zu.is_empty() {
                let all: Vec<usize> = (0..zu.len()).collect();
                let r = self.prototype_term(
                    &pick(&all),
                    &self.unlabeled_prototypes.prototypes,
                    self.unlabeled_assignment,
                    config,
                )?;
                out.spl_novel = r.loss;
                scatter(&mut gu, &all, &r, 1.0);
            }
        } else {
            let novel_idx: Vec<usize> = self.decoupled.novel.iter().map(|m| m.index).collect();
            if !novel_idx.is_empty() {
                let slots: Vec<usize> = self.decoupled.novel.iter().map(|m| m.slot).collect();
                let protos = self.unlabeled_prototypes.select(&self.matching.unmatched);
                let r = self.prototype_term(&pick(&novel_idx), &protos, &slots, config)?;
                out.spl_novel = r.loss;
                scatter(&mut gu, &novel_idx, &r, 1.0);
            } else if !self.matching.unmatched.is_empty() {
                log::warn!("no unlabeled instance fell into a novel cluster; novel loss is 0");
            }

            let known_idx: Vec<usize> = self.decoupled.known.iter().map(|m| m.index).collect();
            if !known_idx.is_empty() {
                let slots: Vec<usize> = self.decoupled.known.iter().map(|m| m.slot).collect();
                let protos = self.unlabeled_prototypes.select(&self.matching.matched);
                let known_emb = pick(&known_idx);
                let r = self.prototype_term(&known_emb, &protos, &slots, config)?;
                out.spl_known = r.loss;
                scatter(&mut gu, &known_idx, &r, 1.0);

                let r = reg_loss(&known_emb, &self.labeled_prototypes.prototypes, config.tau)?;
                out.reg = r.loss;
                scatter(&mut gu, &known_idx, &r, config.gamma);
            }
        }

        if !config.ablation.no_ce && !zl.is_empty() {
            let r = ce_loss(&zl, &batch.labels, &self.labeled_prototypes.prototypes, config.tau)?;
            out.ce = r.loss;
            let all: Vec<usize> = (0..zl.len()).collect();
            scatter(&mut gl, &all, &r, 1.0);
        }

        out.known_total = out.spl_known + out.ce + config.gamma * out.reg;
        out.total = out.spl_novel + out.known_total;

        let mut grad = HeadGrad::zeros_like(head);
        for ((x, z), g) in batch.labeled.iter().zip(&zl).zip(&gl) {
            head.accumulate_grad(x, z, g, &mut grad);
        }
        for ((x, z), g) in batch.unlabeled.iter().zip(&zu).zip(&gu) {
            head.accumulate_grad(x, z, g, &mut grad);
        }
        Ok((out, grad))
    }
}

/// `alpha · old + (1 − alpha) · new`, component-wise.
pub fn ema_update(old: &PrototypeSet, new: &PrototypeSet, alpha: f64) -> Result<PrototypeSet> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if old.len() != new.len() || old.dim() != new.dim() {
        return Err(Error::Shape(format!(
            "cannot blend {}x{} prototypes with {}x{}",
            old.len(),
            old.dim(),
            new.len(),
            new.dim()
        )));
    }
    let prototypes = old
        .prototypes
        .iter()
        .zip(&new.prototypes)
        .map(|(o, n)| {
            Vector::from_raw(
                o.as_slice()
                    .iter()
                    .zip(n.as_slice())
                    .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                    .collect(),
            )
        })
        .collect();
    Ok(PrototypeSet {
        kind: old.kind,
        prototypes,
        category_keys: old.category_keys.clone(),
    })
}

/// Model and pseudo-label state after training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub head: ProjectionHead,
    /// Moving-average labeled prototypes.
    pub labeled_prototypes: PrototypeSet,
    /// Cluster-mean prototypes of the unlabeled data, fixed after construction.
    pub unlabeled_prototypes: PrototypeSet,
    pub matching: MatchingResult,
    /// Cluster index per unlabeled instance.
    pub unlabeled_assignment: Vec<usize>,
    pub decoupled: DecoupledData,
    pub epoch: usize,
    pub loss_trace: Vec<LossBreakdown>,
}

impl TrainState {
    pub fn objective(&self) -> Objective<'_> {
        Objective {
            labeled_prototypes: &self.labeled_prototypes,
            unlabeled_prototypes: &self.unlabeled_prototypes,
            matching: &self.matching,
            unlabeled_assignment: &self.unlabeled_assignment,
            decoupled: &self.decoupled,
        }
    }

    pub fn k(&self) -> usize {
        self.unlabeled_prototypes.len()
    }
}

/// Loss breakdown and head gradient for `state` on `batch`.
pub fn total_loss(state: &TrainState, batch: &Batch<'_>, config: &Config) -> Result<(LossBreakdown, HeadGrad)> {
    state.objective().evaluate(&state.head, batch, config)
}

fn current_labeled_prototypes(
    head: &ProjectionHead,
    batch: &Batch<'_>,
    view: &TrainingView<'_>,
) -> Result<PrototypeSet> {
    let z = embed(head, &batch.labeled);
    let labels: Vec<&str> = view.labeled.iter().map(|r| r.label.as_str()).collect();
    labeled_prototypes(&z, &labels, view.label_space)
}

struct Pseudo {
    prototypes: PrototypeSet,
    assignment: Vec<usize>,
}

fn cluster_unlabeled(head: &ProjectionHead, batch: &Batch<'_>, k: usize, seed: u64, config: &Config) -> Result<Pseudo> {
    let z = embed(head, &batch.unlabeled);
    let clustering = kmeans_best_of(
        &z,
        k,
        seed,
        config.kmeans_restarts,
        config.kmeans_max_iter,
        config.kmeans_tol,
    )?;
    Ok(Pseudo {
        prototypes: unlabeled_prototypes(&z, &clustering)?,
        assignment: clustering.assignment,
    })
}

fn resolve_k(head: &ProjectionHead, batch: &Batch<'_>, view: &TrainingView<'_>, config: &Config) -> Result<usize> {
    let m = view.label_space.m();
    let k = match config.k {
        KChoice::Auto => view.label_space.k(),
        KChoice::Fixed(k) => k,
        KChoice::Estimate => {
            let k_max = config.k_max.unwrap_or(3 * m).max(2);
            let z = embed(head, &batch.unlabeled);
            let est = estimate_k(&z, k_max, config.threshold_factor, config.seed, config.kmeans_restarts)?;
            if est < m {
                log::warn!("estimated K={est} is below the {m} known categories; using {m}");
            }
            est.max(m)
        }
    };
    if k < m {
        return Err(Error::Config(format!("K={k} is smaller than the {m} known categories")));
    }
    Ok(k)
}

/// Trains the projection head.
///
/// Clusters the unlabeled embeddings into K groups, builds both prototype
/// sets, matches them and splits the unlabeled data once; then runs
/// full-batch gradient descent for `config.epochs` epochs, refreshing the
/// labeled prototypes after every step with the moving average (or by
/// overwriting under `no_ema`). Unlabeled prototypes and the split stay
/// fixed unless a re-match or re-cluster period is configured.
pub fn train(view: &TrainingView<'_>, config: &Config) -> Result<TrainState> {
    config.validate()?;
    let batch = Batch::from_view(view)?;
    if batch.unlabeled.is_empty() {
        return Err(Error::EmptyInput("unlabeled partition"));
    }
    let dim = batch.labeled[0].len();
    let mut head = ProjectionHead::init(dim, dim, config.activation, config.init_noise, config.seed)?;
    let k = resolve_k(&head, &batch, view, config)?;

    let pseudo = cluster_unlabeled(&head, &batch, k, config.seed, config)?;
    let mut labeled = current_labeled_prototypes(&head, &batch, view)?;
    let mut matching = hungarian_match(&labeled, &pseudo.prototypes)?;
    let mut state = TrainState {
        head: head.clone(),
        decoupled: decouple(&matching, &pseudo.assignment)?,
        labeled_prototypes: labeled.clone(),
        unlabeled_prototypes: pseudo.prototypes,
        unlabeled_assignment: pseudo.assignment,
        matching: matching.clone(),
        epoch: 0,
        loss_trace: Vec::with_capacity(config.epochs),
    };
    if !state.matching.suspicious_matches(3.0).is_empty() {
        log::warn!("some matched prototype distances exceed 3x the median");
    }

    let mut velocity = vec![0.0; head.param_count()];
    for epoch in 0..config.epochs {
        if epoch > 0 && config.recluster_period > 0 && epoch % config.recluster_period == 0 {
            let pseudo = cluster_unlabeled(&head, &batch, k, config.seed.wrapping_add(epoch as u64), config)?;
            matching = hungarian_match(&labeled, &pseudo.prototypes)?;
            state.decoupled = decouple(&matching, &pseudo.assignment)?;
            state.unlabeled_prototypes = pseudo.prototypes;
            state.unlabeled_assignment = pseudo.assignment;
            state.matching = matching.clone();
        } else if epoch > 0 && config.rematch_period > 0 && epoch % config.rematch_period == 0 {
            matching = hungarian_match(&labeled, &state.unlabeled_prototypes)?;
            state.decoupled = decouple(&matching, &state.unlabeled_assignment)?;
            state.matching = matching.clone();
        }
        state.labeled_prototypes = labeled.clone();

        let (breakdown, grad) = state.objective().evaluate(&head, &batch, config)?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        state.loss_trace.push(breakdown);

        let mut params = head.params();
        for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(grad.to_flat()) {
            *v = config.momentum * *v - config.learning_rate * g;
            *p += *v;
        }
        head.set_params(&params)?;

        let fresh = current_labeled_prototypes(&head, &batch, view)?;
        labeled = if config.ablation.no_ema {
            fresh
        } else {
            ema_update(&labeled, &fresh, config.alpha)?
        };
        state.epoch = epoch + 1;
    }

    state.head = head;
    state.labeled_prototypes = labeled;
    debug_assert_eq!(state.labeled_prototypes.kind, PrototypeKind::Labeled);
    Ok(state)
}
