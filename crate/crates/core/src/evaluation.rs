//! Hungarian-matched clustering accuracy, category-count estimation and the
//! evaluation report.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::alignment::{aligned_unlabeled, prototype_distance_matrix};
use crate::assignment::min_cost_assignment;
use crate::clustering::kmeans_on_stream;
use crate::config::Config;
use crate::dataset::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::learning::TrainState;
use crate::rng::Stream;
use crate::vector::{dot, sq_dist};

/// Accuracy under the best one-to-one cluster→label mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyResult {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Distinct ground-truth labels, sorted.
    pub labels: Vec<String>,
    /// Label assigned to each cluster index `0..=max(predicted)`; `None` for
    /// clusters left without a label.
    pub mapping: Vec<Option<String>>,
}

/// Fraction of instances whose cluster maps to their label under the
/// maximum-agreement one-to-one mapping (Hungarian on negated counts).
pub fn clustering_accuracy<S: AsRef<str>>(truth: &[S], predicted: &[usize]) -> Result<AccuracyResult> {
    if truth.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("accuracy inputs"));
    }
    let labels: Vec<String> = truth
        .iter()
        .map(|t| t.as_ref().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let clusters = predicted.iter().max().map_or(0, |m| m + 1);
    let n = clusters.max(labels.len());

    let mut counts = vec![vec![0usize; labels.len()]; clusters];
    for (t, &c) in truth.iter().zip(predicted) {
        let l = labels
            .binary_search_by(|x| x.as_str().cmp(t.as_ref()))
            .expect("label collected above");
        counts[c][l] += 1;
    }
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            (0..n)
                .map(|l| match (counts.get(c), l < labels.len()) {
                    (Some(row), true) => -(row[l] as f64),
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    let assignment = min_cost_assignment(&cost)?;

    let mut mapping = vec![None; clusters];
    let mut correct = 0;
    for (c, slot) in mapping.iter_mut().enumerate() {
        let l = assignment.row_to_col[c];
        if l < labels.len() {
            correct += counts[c][l];
            *slot = Some(labels[l].clone());
        }
    }
    Ok(AccuracyResult {
        accuracy: correct as f64 / truth.len() as f64,
        correct,
        total: truth.len(),
        labels,
        mapping,
    })
}

/// Correct and total instance counts for one slice of the test set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    /// `None` for an empty slice.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Clusters smaller than `threshold_factor · n / k_max` are dropped when
/// counting categories.
#[derive(Clone, Debug, PartialEq)]
pub struct KEstimate {
    pub k: usize,
    pub k_max: usize,
    /// Sizes of the `k_max` k-means clusters.
    pub cluster_sizes: Vec<usize>,
    /// Sizes of the groups left after merging over-split clusters.
    pub group_sizes: Vec<usize>,
    pub min_size: f64,
}

/// Two clusters are one category when their centers are closer than this
/// many pooled standard deviations, measured along the line through both
/// centers or per dimension over all directions, whichever is smaller.
/// Pieces of one split Gaussian measure about 3 (small fragments can reach
/// 8, but those fall under the size cut anyway); categories ten standard
/// deviations apart measure 10 or more.
pub const MERGE_SEPARATION: f64 = 6.0;

fn separation(points: &[&[f64]], a: &[usize], b: &[usize], ca: &[f64], cb: &[f64]) -> f64 {
    let dir: Vec<f64> = cb.iter().zip(ca).map(|(x, y)| x - y).collect();
    let len = dot(&dir, &dir).sqrt();
    if len == 0.0 {
        return 0.0;
    }
    let project = |idx: &[usize]| -> (f64, f64) {
        let t: Vec<f64> = idx
            .iter()
            .map(|&i| {
                points[i]
                    .iter()
                    .zip(ca)
                    .zip(&dir)
                    .map(|((x, c), d)| (x - c) * d)
                    .sum::<f64>()
                    / len
            })
            .collect();
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let var = t.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / t.len() as f64;
        (mean, var)
    };
    let (ma, va) = project(a);
    let (mb, vb) = project(b);
    let n = (a.len() + b.len()) as f64;
    let pooled = ((va * a.len() as f64 + vb * b.len() as f64) / n).sqrt();
    let axis = if pooled == 0.0 {
        f64::INFINITY
    } else {
        (mb - ma).abs() / pooled
    };

    // With few points per cluster in many dimensions, k-means can cut one
    // Gaussian along a direction where the halves look far apart. The
    // per-dimension spread over all directions does not suffer from that.
    let spread = |idx: &[usize], c: &[f64]| idx.iter().map(|&i| sq_dist(points[i], c)).sum::<f64>();
    let iso = ((spread(a, ca) + spread(b, cb)) / (n * ca.len() as f64)).sqrt();
    let overall = if iso == 0.0 { f64::INFINITY } else { len / iso };
    axis.min(overall)
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut i = i;
    while parent[i] != r {
        let next = parent[i];
        parent[i] = r;
        i = next;
    }
    r
}

/// Estimates the number of categories: k-means with `k_max`, merge clusters
/// that are not separated along their center axis, then count the groups
/// holding at least `threshold_factor · n / k_max` points.
pub fn estimate_k_detailed<P: AsRef<[f64]>>(
    embeddings: &[P],
    k_max: usize,
    threshold_factor: f64,
    seed: u64,
    restarts: usize,
) -> Result<KEstimate> {
    if k_max < 2 {
        return Err(Error::Config(format!("k_max must be >= 2, got {k_max}")));
    }
    if !(threshold_factor > 0.0 && threshold_factor < 1.0) {
        return Err(Error::Config("threshold_factor must lie in (0, 1)".into()));
    }
    let n = embeddings.len();
    if n < k_max {
        return Err(Error::InfeasibleK { k: k_max, distinct: n });
    }
    let clustering = kmeans_on_stream(
        embeddings,
        k_max,
        seed,
        Stream::EstimateK,
        restarts,
        crate::clustering::DEFAULT_MAX_ITER,
        crate::clustering::DEFAULT_TOL,
    )?;
    let points: Vec<&[f64]> = embeddings.iter().map(AsRef::as_ref).collect();
    let mut members = vec![Vec::new(); k_max];
    for (i, &c) in clustering.assignment.iter().enumerate() {
        members[c].push(i);
    }

    let mut parent: Vec<usize> = (0..k_max).collect();
    for a in 0..k_max {
        for b in a + 1..k_max {
            let (ca, cb) = (clustering.centers[a].as_slice(), clustering.centers[b].as_slice());
            if members[a].is_empty() || members[b].is_empty() {
                continue;
            }
            if separation(&points, &members[a], &members[b], ca, cb) < MERGE_SEPARATION {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[rb.max(ra)] = ra.min(rb);
                }
            }
        }
    }
    let mut group_sizes = vec![0usize; k_max];
    for (c, m) in members.iter().enumerate() {
        let root = find(&mut parent, c);
        group_sizes[root] += m.len();
    }
    let group_sizes: Vec<usize> = group_sizes.into_iter().filter(|&s| s > 0).collect();

    let min_size = threshold_factor * n as f64 / k_max as f64;
    let survivors = group_sizes.iter().filter(|&&s| s as f64 >= min_size).count();
    Ok(KEstimate {
        k: survivors.clamp(1, k_max),
        k_max,
        cluster_sizes: clustering.cluster_sizes(),
        group_sizes,
        min_size,
    })
}

pub fn estimate_k<P: AsRef<[f64]>>(
    embeddings: &[P],
    k_max: usize,
    threshold_factor: f64,
    seed: u64,
    restarts: usize,
) -> Result<usize> {
    Ok(estimate_k_detailed(embeddings, k_max, threshold_factor, seed, restarts)?.k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub seed: u64,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub kmeans_restarts: usize,
    /// Remap known and novel subsets separately instead of one global mapping.
    pub per_subset_mapping: bool,
    /// `Some(k_max)` also estimates K on the embedded unlabeled data.
    pub estimate_k_max: Option<usize>,
    pub threshold_factor: f64,
}

impl EvalOptions {
    pub fn from_config(config: &Config, estimate_k_max: Option<usize>) -> Self {
        EvalOptions {
            seed: config.seed,
            kmeans_max_iter: config.kmeans_max_iter,
            kmeans_tol: config.kmeans_tol,
            kmeans_restarts: config.kmeans_restarts,
            per_subset_mapping: config.per_subset_mapping,
            estimate_k_max,
            threshold_factor: config.threshold_factor,
        }
    }
}

/// Test-set metrics of a trained state.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub all: Tally,
    pub known: Tally,
    pub novel: Tally,
    pub k: usize,
    pub estimated_k: Option<usize>,
    /// Confusion-matrix row labels (ground truth, sorted).
    pub labels: Vec<String>,
    /// Column headers: `cluster<i>-><label>` or `cluster<i>` when unmapped.
    pub columns: Vec<String>,
    /// `labels × columns` counts; columns ordered so mapped clusters line up
    /// with their label's row.
    pub confusion: Vec<Vec<usize>>,
    pub prototype_keys: Vec<String>,
    /// Labeled prototypes (rows) vs aligned unlabeled prototypes (columns).
    pub prototype_distances: Vec<Vec<f64>>,
    /// Known categories whose matched distance exceeds 3× the median.
    pub suspicious_matches: Vec<String>,
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

impl EvalReport {
    pub fn acc_all(&self) -> f64 {
        self.all.accuracy().unwrap_or(0.0)
    }

    pub fn acc_known(&self) -> Option<f64> {
        self.known.accuracy()
    }

    pub fn acc_novel(&self) -> Option<f64> {
        self.novel.accuracy()
    }
}

/// Known and novel tallies. Under the global mapping `global` (the result of
/// [`clustering_accuracy`] on all instances) the two tallies add up to the
/// overall correct count; `per_subset` remaps each subset on its own instead.
pub fn subset_tallies<S: AsRef<str>>(
    truth: &[S],
    predicted: &[usize],
    is_known: &[bool],
    global: &AccuracyResult,
    per_subset: bool,
) -> Result<(Tally, Tally)> {
    if is_known.len() != truth.len() || predicted.len() != truth.len() {
        return Err(Error::Shape(
            "truth, predictions and known flags differ in length".into(),
        ));
    }
    let tally = |want_known: bool| -> Result<Tally> {
        let idx: Vec<usize> = (0..truth.len()).filter(|&i| is_known[i] == want_known).collect();
        if idx.is_empty() {
            return Ok(Tally::default());
        }
        if per_subset {
            let t: Vec<&str> = idx.iter().map(|&i| truth[i].as_ref()).collect();
            let p: Vec<usize> = idx.iter().map(|&i| predicted[i]).collect();
            let r = clustering_accuracy(&t, &p)?;
            return Ok(Tally {
                correct: r.correct,
                total: r.total,
            });
        }
        let correct = idx
            .iter()
            .filter(|&&i| global.mapping.get(predicted[i]).and_then(|m| m.as_deref()) == Some(truth[i].as_ref()))
            .count();
        Ok(Tally {
            correct,
            total: idx.len(),
        })
    };
    Ok((tally(true)?, tally(false)?))
}

fn with_truth(test: &[Instance]) -> Result<Vec<(&Instance, &str)>> {
    test.iter()
        .map(|r| {
            r.truth
                .as_deref()
                .map(|t| (r, t))
                .ok_or_else(|| Error::EvalData(format!("test instance `{}` has no ground truth", r.id)))
        })
        .collect()
}

/// Embeds the test split, clusters it into K groups and scores the
/// clustering against ground truth.
pub fn evaluate(state: &TrainState, dataset: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    let mut rows = with_truth(dataset.test())?;
    if rows.is_empty() {
        return Err(Error::EvalData("test split is empty".into()));
    }
    // Row order of the test file must not matter.
    rows.sort_by(|a, b| a.0.id.cmp(&b.0.id));

    let inputs: Vec<&[f64]> = rows.iter().map(|(r, _)| r.vector.as_slice()).collect();
    let embedded = state.head.embed_all(&inputs)?;
    let k = state.k();
    let clustering = kmeans_on_stream(
        &embedded,
        k,
        opts.seed,
        Stream::EvalClustering,
        opts.kmeans_restarts,
        opts.kmeans_max_iter,
        opts.kmeans_tol,
    )?;
    let truth: Vec<&str> = rows.iter().map(|(_, t)| *t).collect();
    let predicted = &clustering.assignment;
    let global = clustering_accuracy(&truth, predicted)?;

    let space = dataset.label_space();
    let is_known: Vec<bool> = truth.iter().map(|t| space.is_known(t)).collect();
    let (known, novel) = subset_tallies(&truth, predicted, &is_known, &global, opts.per_subset_mapping)?;

    // Confusion matrix with mapped clusters aligned to label rows.
    let mut col_order: Vec<usize> = Vec::new();
    for label in &global.labels {
        if let Some(c) = global.mapping.iter().position(|m| m.as_deref() == Some(label)) {
            col_order.push(c);
        }
    }
    let unmapped: Vec<usize> = (0..global.mapping.len()).filter(|c| !col_order.contains(c)).collect();
    col_order.extend(unmapped);
    let columns = col_order
        .iter()
        .map(|&c| match &global.mapping[c] {
            Some(l) => format!("cluster{c}->{l}"),
            None => format!("cluster{c}"),
        })
        .collect();
    let mut confusion = vec![vec![0usize; col_order.len()]; global.labels.len()];
    for (t, &p) in truth.iter().zip(predicted) {
        let row = global.labels.iter().position(|l| l == t).expect("label present");
        let col = col_order.iter().position(|&c| c == p).expect("cluster present");
        confusion[row][col] += 1;
    }

    let aligned = aligned_unlabeled(&state.unlabeled_prototypes, &state.matching);
    let prototype_distances = prototype_distance_matrix(&state.labeled_prototypes, &aligned)?;
    let suspicious_matches = state
        .matching
        .suspicious_matches(3.0)
        .into_iter()
        .map(|i| state.labeled_prototypes.category_keys[i].clone())
        .collect();

    let estimated_k = match opts.estimate_k_max {
        Some(k_max) => {
            let unl: Vec<&[f64]> = dataset.unlabeled().iter().map(|r| r.vector.as_slice()).collect();
            let z = state.head.embed_all(&unl)?;
            Some(estimate_k(
                &z,
                k_max,
                opts.threshold_factor,
                opts.seed,
                opts.kmeans_restarts,
            )?)
        }
        None => None,
    };

    Ok(EvalReport {
        all: Tally {
            correct: global.correct,
            total: global.total,
        },
        known,
        novel,
        k,
        estimated_k,
        labels: global.labels,
        columns,
        confusion,
        prototype_keys: state.labeled_prototypes.category_keys.clone(),
        prototype_distances,
        suspicious_matches,
        epochs: state.epoch,
        final_loss: state.loss_trace.last().map(|b| b.total),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// `metric\tvalue` lines.
pub fn metrics_tsv(report: &EvalReport) -> String {
    let mut out = String::from("metric\tvalue\n");
    let rows = [
        ("acc_all", report.acc_all().to_string()),
        ("acc_known", fmt_opt(report.acc_known())),
        ("acc_novel", fmt_opt(report.acc_novel())),
        ("n_all", report.all.total.to_string()),
        ("n_known", report.known.total.to_string()),
        ("n_novel", report.novel.total.to_string()),
        ("correct_all", report.all.correct.to_string()),
        ("correct_known", report.known.correct.to_string()),
        ("correct_novel", report.novel.correct.to_string()),
        ("k", report.k.to_string()),
        (
            "estimated_k",
            report.estimated_k.map_or_else(|| "NA".to_string(), |k| k.to_string()),
        ),
        ("epochs", report.epochs.to_string()),
    ];
    for (k, v) in rows {
        let _ = writeln!(out, "{k}\t{v}");
    }
    out
}

pub fn confusion_tsv(report: &EvalReport) -> String {
    let mut out = format!("truth\t{}\n", report.columns.join("\t"));
    for (label, row) in report.labels.iter().zip(&report.confusion) {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "{label}\t{}", cells.join("\t"));
    }
    out
}

/// Distance grid for external plotting; rows are labeled prototypes, columns
/// the unlabeled prototypes aligned to them.
pub fn prototype_distances_tsv(report: &EvalReport) -> String {
    let mut out = format!("labeled\t{}\n", report.prototype_keys.join("\t"));
    for (key, row) in report.prototype_keys.iter().zip(&report.prototype_distances) {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "{key}\t{}", cells.join("\t"));
    }
    out
}

/// Benchmark-scale reference numbers from BERT fine-tuning runs, listed for
/// context only.
pub const REFERENCE_FOOTER: &str = "\
Reference results at benchmark scale (BERT encoder, not reproducible here):
  StackOverflow  All 84.23  Known 85.29  Novel 81.07
  BANKING        All 72.96  Known 80.93  Novel 48.60
  CLINC          All 89.06  Known 92.97  Novel 77.54
  K estimation error: CLINC 8.7% (137/150), BANKING 13.0% (67/77), StackOverflow 10.0% (18/20)
";

pub fn report_text(report: &EvalReport) -> String {
    let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}%", 100.0 * x));
    let mut out = String::new();
    let _ = writeln!(out, "Evaluation report");
    let _ = writeln!(out, "=================");
    let _ = writeln!(
        out,
        "All    {:>8}  ({}/{})",
        pct(report.all.accuracy()),
        report.all.correct,
        report.all.total
    );
    let _ = writeln!(
        out,
        "Known  {:>8}  ({}/{})",
        pct(report.acc_known()),
        report.known.correct,
        report.known.total
    );
    let _ = writeln!(
        out,
        "Novel  {:>8}  ({}/{})",
        pct(report.acc_novel()),
        report.novel.correct,
        report.novel.total
    );
    let _ = writeln!(out, "K      {}", report.k);
    if let Some(k) = report.estimated_k {
        let _ = writeln!(out, "Estimated K  {k}");
    }
    let _ = writeln!(out, "Epochs {}", report.epochs);
    if let Some(loss) = report.final_loss {
        let _ = writeln!(out, "Final loss {loss}");
    }
    if report.suspicious_matches.is_empty() {
        let _ = writeln!(out, "Prototype matching: no outlying matched distances");
    } else {
        let _ = writeln!(
            out,
            "Prototype matching: matched distance > 3x median for {}",
            report.suspicious_matches.join(", ")
        );
    }
    out.push('\n');
    out.push_str(REFERENCE_FOOTER);
    out
}
