//! Labeled, unlabeled and test partitions plus the category space.

use std::collections::{BTreeSet, HashSet};

use crate::error::{Error, Result};
use crate::vector::Vector;

/// Known categories (labeled) and novel categories (seen only in ground truth).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSpace {
    known: Vec<String>,
    novel: Vec<String>,
}

impl LabelSpace {
    pub fn new(known: Vec<String>, novel: Vec<String>) -> Result<Self> {
        if known.is_empty() {
            return Err(Error::Config("label space needs at least one known category".into()));
        }
        let known_set: HashSet<&String> = known.iter().collect();
        if known_set.len() != known.len() {
            return Err(Error::Config("duplicate known category".into()));
        }
        let novel_set: HashSet<&String> = novel.iter().collect();
        if novel_set.len() != novel.len() {
            return Err(Error::Config("duplicate novel category".into()));
        }
        if let Some(shared) = novel.iter().find(|n| known_set.contains(n)) {
            return Err(Error::Config(format!("category `{shared}` is both known and novel")));
        }
        Ok(LabelSpace { known, novel })
    }

    pub fn known_ids(&self) -> &[String] {
        &self.known
    }

    pub fn novel_ids(&self) -> &[String] {
        &self.novel
    }

    /// Number of known categories.
    pub fn m(&self) -> usize {
        self.known.len()
    }

    /// Total number of categories.
    pub fn k(&self) -> usize {
        self.known.len() + self.novel.len()
    }

    pub fn known_index(&self, label: &str) -> Option<usize> {
        self.known.iter().position(|k| k == label)
    }

    pub fn is_known(&self, label: &str) -> bool {
        self.known_index(label).is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledInstance {
    pub id: String,
    pub vector: Vector,
    pub label: String,
}

/// An instance whose label, if present, is ground truth reserved for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: String,
    pub vector: Vector,
    pub truth: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    labeled: Vec<LabeledInstance>,
    unlabeled: Vec<Instance>,
    test: Vec<Instance>,
    label_space: LabelSpace,
    dim: usize,
}

impl Dataset {
    pub fn new(
        labeled: Vec<LabeledInstance>,
        unlabeled: Vec<Instance>,
        test: Vec<Instance>,
        label_space: LabelSpace,
    ) -> Result<Self> {
        let dim = labeled
            .first()
            .map(|r| r.vector.dim())
            .ok_or(Error::EmptyInput("labeled partition"))?;

        let vectors = labeled
            .iter()
            .map(|r| &r.vector)
            .chain(unlabeled.iter().map(|r| &r.vector))
            .chain(test.iter().map(|r| &r.vector));
        for v in vectors {
            if v.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: v.dim(),
                });
            }
        }

        let mut ids = HashSet::new();
        let all_ids = labeled
            .iter()
            .map(|r| &r.id)
            .chain(unlabeled.iter().map(|r| &r.id))
            .chain(test.iter().map(|r| &r.id));
        for id in all_ids {
            if !ids.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }

        if let Some(row) = labeled.iter().find(|r| !label_space.is_known(&r.label)) {
            return Err(Error::Label(row.label.clone()));
        }

        Ok(Dataset {
            labeled,
            unlabeled,
            test,
            label_space,
            dim,
        })
    }

    pub fn labeled(&self) -> &[LabeledInstance] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[Instance] {
        &self.unlabeled
    }

    pub fn test(&self) -> &[Instance] {
        &self.test
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Known categories that never occur in the unlabeled ground truth.
    /// Empty when the unlabeled partition carries no ground truth at all.
    pub fn known_missing_from_unlabeled(&self) -> Vec<String> {
        let present: BTreeSet<&str> = self.unlabeled.iter().filter_map(|r| r.truth.as_deref()).collect();
        if present.is_empty() {
            return Vec::new();
        }
        self.label_space
            .known_ids()
            .iter()
            .filter(|k| !present.contains(k.as_str()))
            .cloned()
            .collect()
    }

    /// The part of the dataset training may read: no unlabeled ground truth,
    /// no test split.
    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            labeled: &self.labeled,
            unlabeled: self.unlabeled.iter().map(|r| &r.vector).collect(),
            label_space: &self.label_space,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainingView<'a> {
    pub labeled: &'a [LabeledInstance],
    pub unlabeled: Vec<&'a Vector>,
    pub label_space: &'a LabelSpace,
}
