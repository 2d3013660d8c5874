//! Embedding files, dataset manifests and the synthetic Gaussian-mixture
//! generator.
//!
//! An embedding file is UTF-8 text: a header line `dim=<d> count=<n>`
//! followed by `n` rows `<id>\t<label-or-?>\t<v1>\t...\t<vd>`. Floats are
//! written with Rust's shortest round-trip formatting so a save/load cycle
//! is exact.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, Instance, LabelSpace, LabeledInstance};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::vector::{sq_dist, Vector};

pub const UNKNOWN_LABEL: &str = "?";
pub const LABELED_FILE: &str = "labeled.tsv";
pub const UNLABELED_FILE: &str = "unlabeled.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const MANIFEST_FILE: &str = "manifest.txt";

const MAX_CENTER_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub label: Option<String>,
    pub vector: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub rows: Vec<EmbeddingRow>,
}

impl EmbeddingFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::schema(path, "missing header line"))?;
        let (dim, count) = parse_header(header)
            .ok_or_else(|| Error::schema(path, format!("bad header `{header}`, expected `dim=<d> count=<n>`")))?;
        if dim == 0 {
            return Err(Error::schema(path, "dim must be positive"));
        }

        let mut rows = Vec::with_capacity(count);
        let mut seen = HashSet::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let lineno = i + 2;
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default();
            let label = fields
                .next()
                .ok_or_else(|| Error::schema(path, format!("line {lineno}: missing label")))?;
            if id.is_empty() || label.is_empty() {
                return Err(Error::schema(path, format!("line {lineno}: empty id or label")));
            }
            let values = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::schema(path, format!("line {lineno}: bad number `{f}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != dim {
                return Err(Error::schema(
                    path,
                    format!("line {lineno}: {} components, header says {dim}", values.len()),
                ));
            }
            let vector =
                Vector::new(values).map_err(|_| Error::schema(path, format!("line {lineno}: non-finite component")))?;
            if !seen.insert(id.to_string()) {
                return Err(Error::DuplicateId(id.to_string()));
            }
            rows.push(EmbeddingRow {
                id: id.to_string(),
                label: (label != UNKNOWN_LABEL).then(|| label.to_string()),
                vector,
            });
        }
        if rows.len() != count {
            return Err(Error::schema(
                path,
                format!("header count {count} but {} rows", rows.len()),
            ));
        }
        Ok(EmbeddingFile { dim, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("dim={} count={}\n", self.dim, self.rows.len());
        for row in &self.rows {
            out.push_str(&row.id);
            out.push('\t');
            out.push_str(row.label.as_deref().unwrap_or(UNKNOWN_LABEL));
            for v in row.vector.as_slice() {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut dim = None;
    let mut count = None;
    for token in line.split_whitespace() {
        let (key, value) = token.split_once('=')?;
        match key {
            "dim" => dim = Some(value.parse().ok()?),
            "count" => count = Some(value.parse().ok()?),
            _ => return None,
        }
    }
    Some((dim?, count?))
}

/// A dataset plus the non-fatal issues found while loading it.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

/// Reads three embedding files into a validated `Dataset`.
///
/// Known categories are the distinct labeled-file labels, sorted; novel
/// categories are the remaining ground-truth labels of the unlabeled and test
/// files, sorted.
pub fn load_dataset(labeled: &Path, unlabeled: &Path, test: &Path) -> Result<LoadedDataset> {
    let files = [labeled, unlabeled, test]
        .map(EmbeddingFile::read)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let [lab, unl, tst]: [EmbeddingFile; 3] = files.try_into().expect("three files");

    for (file, path) in [(&unl, unlabeled), (&tst, test)] {
        if file.dim != lab.dim {
            return Err(Error::schema(
                path,
                format!("dim {} differs from labeled file dim {}", file.dim, lab.dim),
            ));
        }
    }

    let mut labeled_rows = Vec::with_capacity(lab.rows.len());
    for row in lab.rows {
        let label = row.label.ok_or_else(|| Error::MissingLabel(row.id.clone()))?;
        labeled_rows.push(LabeledInstance {
            id: row.id,
            vector: row.vector,
            label,
        });
    }
    let known: BTreeSet<String> = labeled_rows.iter().map(|r| r.label.clone()).collect();
    let to_instances = |file: EmbeddingFile| -> Vec<Instance> {
        file.rows
            .into_iter()
            .map(|r| Instance {
                id: r.id,
                vector: r.vector,
                truth: r.label,
            })
            .collect()
    };
    let unlabeled_rows = to_instances(unl);
    let test_rows = to_instances(tst);
    let novel: BTreeSet<String> = unlabeled_rows
        .iter()
        .chain(&test_rows)
        .filter_map(|r| r.truth.clone())
        .filter(|l| !known.contains(l))
        .collect();

    let label_space = LabelSpace::new(known.into_iter().collect(), novel.into_iter().collect())?;
    let dataset = Dataset::new(labeled_rows, unlabeled_rows, test_rows, label_space)?;
    let warnings = coverage_warnings(&dataset);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(LoadedDataset { dataset, warnings })
}

fn coverage_warnings(dataset: &Dataset) -> Vec<String> {
    let missing = dataset.known_missing_from_unlabeled();
    if missing.is_empty() {
        Vec::new()
    } else {
        vec![format!(
            "known categories absent from unlabeled ground truth: {}",
            missing.join(",")
        )]
    }
}

/// Contents of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub labeled: PathBuf,
    pub unlabeled: PathBuf,
    pub test: PathBuf,
    pub dim: usize,
    pub m: usize,
    pub k: Option<usize>,
    pub labeled_count: usize,
    pub unlabeled_count: usize,
    pub test_count: usize,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "labeled={}", self.labeled.display());
        let _ = writeln!(out, "unlabeled={}", self.unlabeled.display());
        let _ = writeln!(out, "test={}", self.test.display());
        let _ = writeln!(out, "dim={}", self.dim);
        let _ = writeln!(out, "M={}", self.m);
        if let Some(k) = self.k {
            let _ = writeln!(out, "K={k}");
        }
        let _ = writeln!(out, "labeled_count={}", self.labeled_count);
        let _ = writeln!(out, "unlabeled_count={}", self.unlabeled_count);
        let _ = writeln!(out, "test_count={}", self.test_count);
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut get = std::collections::HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::schema(path, format!("bad manifest line `{line}`")))?;
            get.insert(k.to_string(), v.to_string());
        }
        let field = |key: &str| {
            get.get(key)
                .cloned()
                .ok_or_else(|| Error::schema(path, format!("manifest missing `{key}`")))
        };
        let number = |key: &str| -> Result<usize> {
            field(key)?
                .parse()
                .map_err(|_| Error::schema(path, format!("manifest `{key}` is not an integer")))
        };
        Ok(Manifest {
            labeled: field("labeled")?.into(),
            unlabeled: field("unlabeled")?.into(),
            test: field("test")?.into(),
            dim: number("dim")?,
            m: number("M")?,
            k: if get.contains_key("K") {
                Some(number("K")?)
            } else {
                None
            },
            labeled_count: number("labeled_count")?,
            unlabeled_count: number("unlabeled_count")?,
            test_count: number("test_count")?,
        })
    }
}

fn to_file(dim: usize, rows: impl Iterator<Item = (String, Option<String>, Vector)>) -> EmbeddingFile {
    EmbeddingFile {
        dim,
        rows: rows
            .map(|(id, label, vector)| EmbeddingRow { id, label, vector })
            .collect(),
    }
}

/// Writes the three partitions and a manifest into `dir`; returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dim = dataset.dim();
    to_file(
        dim,
        dataset
            .labeled()
            .iter()
            .map(|r| (r.id.clone(), Some(r.label.clone()), r.vector.clone())),
    )
    .write(&dir.join(LABELED_FILE))?;
    for (rows, name) in [(dataset.unlabeled(), UNLABELED_FILE), (dataset.test(), TEST_FILE)] {
        to_file(
            dim,
            rows.iter().map(|r| (r.id.clone(), r.truth.clone(), r.vector.clone())),
        )
        .write(&dir.join(name))?;
    }

    let has_truth = dataset
        .unlabeled()
        .iter()
        .chain(dataset.test())
        .any(|r| r.truth.is_some());
    let manifest = Manifest {
        labeled: LABELED_FILE.into(),
        unlabeled: UNLABELED_FILE.into(),
        test: TEST_FILE.into(),
        dim,
        m: dataset.label_space().m(),
        k: has_truth.then(|| dataset.label_space().k()),
        labeled_count: dataset.labeled().len(),
        unlabeled_count: dataset.unlabeled().len(),
        test_count: dataset.test().len(),
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads a dataset from a manifest file or a directory containing one.
/// Relative file paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<LoadedDataset> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest = Manifest::parse(&text, &manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let loaded = load_dataset(
        &base.join(&manifest.labeled),
        &base.join(&manifest.unlabeled),
        &base.join(&manifest.test),
    )?;
    let d = &loaded.dataset;
    let checks = [
        ("dim", manifest.dim, d.dim()),
        ("M", manifest.m, d.label_space().m()),
        ("labeled_count", manifest.labeled_count, d.labeled().len()),
        ("unlabeled_count", manifest.unlabeled_count, d.unlabeled().len()),
        ("test_count", manifest.test_count, d.test().len()),
    ];
    for (key, declared, actual) in checks {
        if declared != actual {
            return Err(Error::schema(
                &manifest_path,
                format!("manifest {key}={declared} but files give {actual}"),
            ));
        }
    }
    Ok(loaded)
}

/// Knobs of the Gaussian-mixture generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    /// Total category count.
    pub k_true: usize,
    /// Known category count.
    pub m: usize,
    pub dim: usize,
    /// Training instances per category (labeled + unlabeled).
    pub per_class_count: usize,
    /// Held-out test instances per category.
    pub test_per_class: usize,
    pub cluster_std: f64,
    /// Minimum distance between any two category centers.
    pub center_separation: f64,
    /// Fraction of each known category's training instances that are labeled.
    pub labeled_ratio: f64,
    /// Pick the known categories at random instead of the first `m`.
    pub random_known: bool,
    pub seed: u64,
}

impl SynthSpec {
    pub fn known_ratio(&self) -> f64 {
        self.m as f64 / self.k_true as f64
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.m < 1 || self.m > self.k_true {
            return fail("need 1 <= known <= k");
        }
        if self.dim == 0 {
            return fail("dim must be positive");
        }
        if self.per_class_count < 2 {
            return fail("per_class_count must be >= 2 so every known category is both labeled and unlabeled");
        }
        if !(self.labeled_ratio > 0.0 && self.labeled_ratio < 1.0) {
            return fail("labeled_ratio must lie in (0, 1)");
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return fail("cluster_std must be > 0");
        }
        if !(self.center_separation > 0.0 && self.center_separation.is_finite()) {
            return fail("center_separation must be > 0");
        }
        Ok(())
    }

    /// Labeled instances drawn per known category.
    pub fn labeled_per_class(&self) -> usize {
        let n = (self.labeled_ratio * self.per_class_count as f64).round() as usize;
        n.clamp(1, self.per_class_count - 1)
    }
}

pub fn category_name(index: usize, total: usize) -> String {
    let width = total.saturating_sub(1).to_string().len().max(2);
    format!("c{index:0width$}")
}

fn draw_centers(spec: &SynthSpec, rng: &mut rng::Rng, max_attempts: usize) -> Result<Vec<Vec<f64>>> {
    // Box half-width grows with K^(1/dim) so the packing stays feasible.
    let half = spec.center_separation * (spec.k_true as f64).powf(1.0 / spec.dim as f64);
    let min_sq = spec.center_separation * spec.center_separation;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.k_true);
    let mut attempts = 0;
    while centers.len() < spec.k_true {
        if attempts == max_attempts {
            return Err(Error::Separation {
                centers: spec.k_true,
                separation: spec.center_separation,
                attempts,
            });
        }
        attempts += 1;
        let candidate: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(-half..=half)).collect();
        if centers.iter().all(|c| sq_dist(c, &candidate) >= min_sq) {
            centers.push(candidate);
        }
    }
    Ok(centers)
}

/// Samples an isotropic Gaussian mixture and splits it into labeled,
/// unlabeled and test partitions.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Stream::Synthetic);
    let centers = draw_centers(spec, &mut rng, MAX_CENTER_ATTEMPTS)?;

    let names: Vec<String> = (0..spec.k_true).map(|i| category_name(i, spec.k_true)).collect();
    let mut order: Vec<usize> = (0..spec.k_true).collect();
    if spec.random_known {
        order.shuffle(&mut rng);
    }
    let mut known_idx: Vec<usize> = order[..spec.m].to_vec();
    known_idx.sort_unstable();
    let is_known = |c: usize| known_idx.binary_search(&c).is_ok();

    let n_labeled = spec.labeled_per_class();
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut test = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        let name = &names[c];
        for i in 0..spec.per_class_count + spec.test_per_class {
            let values: Vec<f64> = center
                .iter()
                .map(|mu| mu + spec.cluster_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let id = format!("{name}-{i:05}");
            let vector = Vector::from_raw(values);
            if i >= spec.per_class_count {
                test.push(Instance {
                    id,
                    vector,
                    truth: Some(name.clone()),
                });
            } else if is_known(c) && i < n_labeled {
                labeled.push(LabeledInstance {
                    id,
                    vector,
                    label: name.clone(),
                });
            } else {
                unlabeled.push(Instance {
                    id,
                    vector,
                    truth: Some(name.clone()),
                });
            }
        }
    }
    unlabeled.shuffle(&mut rng);
    test.shuffle(&mut rng);

    let known: Vec<String> = known_idx.iter().map(|&c| names[c].clone()).collect();
    let novel: Vec<String> = (0..spec.k_true)
        .filter(|&c| !is_known(c))
        .map(|c| names[c].clone())
        .collect();
    Dataset::new(labeled, unlabeled, test, LabelSpace::new(known, novel)?)
}
