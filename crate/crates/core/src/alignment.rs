//! Category prototypes, prototype matching and the known/novel split of the
//! unlabeled data.
//!
//! Labeled prototypes are class means; unlabeled prototypes are cluster
//! means. Matching every labeled prototype to a distinct unlabeled prototype
//! at minimum total Euclidean distance marks the matched clusters as known
//! categories and the rest as novel.

use crate::assignment::min_cost_assignment;
use crate::clustering::Clustering;
use crate::dataset::LabelSpace;
use crate::error::{Error, Result};
use crate::vector::{mean_of, sq_dist, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrototypeKind {
    Labeled,
    Unlabeled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    pub kind: PrototypeKind,
    pub prototypes: Vec<Vector>,
    /// Known-category id per prototype; empty for unlabeled sets.
    pub category_keys: Vec<String>,
}

impl PrototypeSet {
    pub fn new(kind: PrototypeKind, prototypes: Vec<Vector>, category_keys: Vec<String>) -> Result<Self> {
        let dim = prototypes
            .first()
            .map(Vector::dim)
            .ok_or(Error::EmptyInput("prototype set"))?;
        if let Some(p) = prototypes.iter().find(|p| p.dim() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                actual: p.dim(),
            });
        }
        let keys_ok = match kind {
            PrototypeKind::Labeled => category_keys.len() == prototypes.len(),
            PrototypeKind::Unlabeled => category_keys.is_empty(),
        };
        if !keys_ok {
            return Err(Error::Shape(format!(
                "{} category keys for {} {kind:?} prototypes",
                category_keys.len(),
                prototypes.len()
            )));
        }
        Ok(PrototypeSet {
            kind,
            prototypes,
            category_keys,
        })
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].dim()
    }

    /// Prototypes at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Vec<Vector> {
        indices.iter().map(|&i| self.prototypes[i].clone()).collect()
    }
}

/// Class-mean prototypes, one per known category in `label_space` order.
pub fn labeled_prototypes<P, S>(embeddings: &[P], labels: &[S], label_space: &LabelSpace) -> Result<PrototypeSet>
where
    P: AsRef<[f64]>,
    S: AsRef<str>,
{
    if embeddings.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let dim = embeddings
        .first()
        .map(|e| e.as_ref().len())
        .ok_or(Error::EmptyInput("labeled embeddings"))?;
    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); label_space.m()];
    for (e, label) in embeddings.iter().zip(labels) {
        let j = label_space
            .known_index(label.as_ref())
            .ok_or_else(|| Error::Label(label.as_ref().to_string()))?;
        if e.as_ref().len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: e.as_ref().len(),
            });
        }
        members[j].push(e.as_ref());
    }
    let mut prototypes = Vec::with_capacity(members.len());
    for (j, rows) in members.into_iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::MissingCategory(label_space.known_ids()[j].clone()));
        }
        prototypes.push(Vector::from_raw(mean_of(rows, dim)));
    }
    PrototypeSet::new(PrototypeKind::Labeled, prototypes, label_space.known_ids().to_vec())
}

/// Cluster-mean prototypes of `points` under `clustering`'s assignment.
pub fn unlabeled_prototypes<P: AsRef<[f64]>>(points: &[P], clustering: &Clustering) -> Result<PrototypeSet> {
    if points.len() != clustering.assignment.len() {
        return Err(Error::Shape(format!(
            "{} points but {} cluster assignments",
            points.len(),
            clustering.assignment.len()
        )));
    }
    let dim = points
        .first()
        .map(|p| p.as_ref().len())
        .ok_or(Error::EmptyInput("unlabeled embeddings"))?;
    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); clustering.k()];
    for (p, &c) in points.iter().zip(&clustering.assignment) {
        members
            .get_mut(c)
            .ok_or_else(|| Error::Shape(format!("cluster index {c} out of range")))?
            .push(p.as_ref());
    }
    let prototypes = members
        .into_iter()
        .enumerate()
        .map(|(j, rows)| {
            if rows.is_empty() {
                Err(Error::EmptyCluster(j))
            } else {
                Ok(Vector::from_raw(mean_of(rows, dim)))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    PrototypeSet::new(PrototypeKind::Unlabeled, prototypes, Vec::new())
}

/// Optimal labeled→unlabeled prototype matching.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchingResult {
    /// Unlabeled prototype index matched to each labeled prototype.
    pub permutation: Vec<usize>,
    pub total_cost: f64,
    /// Matched unlabeled indices in labeled order (the known-category clusters).
    pub matched: Vec<usize>,
    /// Unmatched unlabeled indices, ascending (the novel-category clusters).
    pub unmatched: Vec<usize>,
    /// `M × K` Euclidean distances.
    pub cost_matrix: Vec<Vec<f64>>,
}

impl MatchingResult {
    pub fn k(&self) -> usize {
        self.matched.len() + self.unmatched.len()
    }

    pub fn matched_distances(&self) -> Vec<f64> {
        self.permutation
            .iter()
            .enumerate()
            .map(|(i, &j)| self.cost_matrix[i][j])
            .collect()
    }

    /// Labeled indices whose matched distance exceeds `factor` times the
    /// median matched distance. These usually mean two known categories
    /// collapsed into one cluster.
    pub fn suspicious_matches(&self, factor: f64) -> Vec<usize> {
        let d = self.matched_distances();
        let mut sorted = d.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        d.iter()
            .enumerate()
            .filter(|(_, &x)| x > factor * median)
            .map(|(i, _)| i)
            .collect()
    }

    /// Builds a result from an explicit permutation (used when reading checkpoints).
    pub fn from_permutation(permutation: Vec<usize>, cost_matrix: Vec<Vec<f64>>) -> Result<Self> {
        let k = cost_matrix.first().map_or(0, Vec::len);
        if permutation.len() != cost_matrix.len() {
            return Err(Error::Shape("permutation length differs from cost rows".into()));
        }
        let mut used = vec![false; k];
        for &j in &permutation {
            if j >= k || std::mem::replace(&mut used[j], true) {
                return Err(Error::Shape("permutation is not injective into 0..K".into()));
            }
        }
        let total_cost = permutation.iter().enumerate().map(|(i, &j)| cost_matrix[i][j]).sum();
        Ok(MatchingResult {
            matched: permutation.clone(),
            unmatched: (0..k).filter(|&j| !used[j]).collect(),
            permutation,
            total_cost,
            cost_matrix,
        })
    }
}

/// Pairwise Euclidean distances between two prototype lists.
fn distance_matrix(rows: &[Vector], cols: &[Vector]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|a| {
            cols.iter()
                .map(|b| sq_dist(a.as_slice(), b.as_slice()).sqrt())
                .collect()
        })
        .collect()
}

/// Minimum total-distance injective matching of labeled onto unlabeled
/// prototypes (`M <= K`).
pub fn hungarian_match(labeled: &PrototypeSet, unlabeled: &PrototypeSet) -> Result<MatchingResult> {
    if labeled.len() > unlabeled.len() {
        return Err(Error::Shape(format!(
            "{} labeled prototypes exceed {} unlabeled prototypes",
            labeled.len(),
            unlabeled.len()
        )));
    }
    if labeled.dim() != unlabeled.dim() {
        return Err(Error::Dimension {
            expected: labeled.dim(),
            actual: unlabeled.dim(),
        });
    }
    let cost_matrix = distance_matrix(&labeled.prototypes, &unlabeled.prototypes);
    let assignment = min_cost_assignment(&cost_matrix)?;
    MatchingResult::from_permutation(assignment.row_to_col, cost_matrix)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnownMember {
    /// Index into the unlabeled partition.
    pub index: usize,
    /// Position in the matched list, which is also the known-category index.
    pub slot: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NovelMember {
    pub index: usize,
    /// Position in the unmatched list.
    pub slot: usize,
}

/// Unlabeled instances split by whether their cluster was matched.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DecoupledData {
    pub known: Vec<KnownMember>,
    pub novel: Vec<NovelMember>,
}

impl DecoupledData {
    pub fn len(&self) -> usize {
        self.known.len() + self.novel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits the unlabeled instances by cluster membership.
pub fn decouple(matching: &MatchingResult, assignment: &[usize]) -> Result<DecoupledData> {
    let k = matching.k();
    let mut slot_of = vec![None; k];
    for (slot, &c) in matching.matched.iter().enumerate() {
        slot_of[c] = Some((true, slot));
    }
    for (slot, &c) in matching.unmatched.iter().enumerate() {
        slot_of[c] = Some((false, slot));
    }
    let mut out = DecoupledData::default();
    for (index, &c) in assignment.iter().enumerate() {
        match slot_of.get(c).copied().flatten() {
            Some((true, slot)) => out.known.push(KnownMember { index, slot }),
            Some((false, slot)) => out.novel.push(NovelMember { index, slot }),
            None => return Err(Error::Shape(format!("cluster index {c} outside 0..{k}"))),
        }
    }
    Ok(out)
}

/// The matched unlabeled prototypes in labeled order.
pub fn aligned_unlabeled(unlabeled: &PrototypeSet, matching: &MatchingResult) -> PrototypeSet {
    PrototypeSet {
        kind: PrototypeKind::Unlabeled,
        prototypes: unlabeled.select(&matching.matched),
        category_keys: Vec::new(),
    }
}

/// `M × M` distances between labeled prototypes (rows) and aligned
/// unlabeled prototypes (columns).
pub fn prototype_distance_matrix(labeled: &PrototypeSet, aligned: &PrototypeSet) -> Result<Vec<Vec<f64>>> {
    if labeled.len() != aligned.len() {
        return Err(Error::Shape(format!(
            "{} labeled vs {} aligned prototypes",
            labeled.len(),
            aligned.len()
        )));
    }
    if labeled.dim() != aligned.dim() {
        return Err(Error::Dimension {
            expected: labeled.dim(),
            actual: aligned.dim(),
        });
    }
    Ok(distance_matrix(&labeled.prototypes, &aligned.prototypes))
}
