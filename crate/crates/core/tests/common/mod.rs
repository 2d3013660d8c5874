//! Independent oracles shared by the integration tests and the acceptance
//! suite: brute-force enumerations and central finite differences.

#![allow(dead_code)]

use std::collections::BTreeSet;

use dpn_core::config::{Activation, Config};
use dpn_core::data_io::{generate_synthetic, SynthSpec};
use dpn_core::learning::{ce_loss, pl_loss, reg_loss, spl_loss, train, Batch, ProjectionHead};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(lo..hi)).collect())
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, 1e-8)` over the flattened values.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn fd_grad(f: impl Fn(&[Vec<f64>]) -> f64, x: &[Vec<f64>]) -> Vec<f64> {
    let mut work = x.to_vec();
    let mut out = Vec::new();
    for i in 0..x.len() {
        for j in 0..x[i].len() {
            let orig = work[i][j];
            work[i][j] = orig + FD_STEP;
            let up = f(&work);
            work[i][j] = orig - FD_STEP;
            let down = f(&work);
            work[i][j] = orig;
            out.push((up - down) / (2.0 * FD_STEP));
        }
    }
    out
}

fn flat(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

/// Largest relative error of one loss over `trials` random cases.
fn worst<F>(trials: u64, seed: u64, mut case: F) -> f64
where
    F: FnMut(&mut ChaCha8Rng) -> f64,
{
    let mut r = rng(seed);
    (0..trials).map(|_| case(&mut r)).fold(0.0, f64::max)
}

pub fn spl_grad_error(trials: u64) -> f64 {
    worst(trials, 11, |r| {
        let n = r.random_range(1..5);
        let k = r.random_range(1..6);
        let dim = r.random_range(2..7);
        let tau = r.random_range(0.07..1.0);
        let z = rand_rows(r, n, dim, -1.0, 1.0);
        let p = rand_rows(r, k, dim, -1.0, 1.0);
        let analytic = flat(&spl_loss(&z, &p, tau).unwrap().grads);
        let numeric = fd_grad(|x| spl_loss(x, &p, tau).unwrap().loss, &z);
        rel_err(&analytic, &numeric)
    })
}

pub fn pl_grad_error(trials: u64) -> f64 {
    worst(trials, 12, |r| {
        let n = r.random_range(1..5);
        let k = r.random_range(2..6);
        let dim = r.random_range(2..7);
        let z = rand_rows(r, n, dim, -2.0, 2.0);
        let p = rand_rows(r, k, dim, -2.0, 2.0);
        let hard: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let analytic = flat(&pl_loss(&z, &hard, &p).unwrap().grads);
        let numeric = fd_grad(|x| pl_loss(x, &hard, &p).unwrap().loss, &z);
        rel_err(&analytic, &numeric)
    })
}

pub fn reg_grad_error(trials: u64) -> f64 {
    worst(trials, 13, |r| {
        let n = r.random_range(1..5);
        let m = r.random_range(1..5);
        let dim = r.random_range(2..7);
        let tau = r.random_range(0.07..1.0);
        let z = rand_rows(r, n, dim, -1.0, 1.0);
        let p = rand_rows(r, m, dim, -1.0, 1.0);
        let analytic = flat(&reg_loss(&z, &p, tau).unwrap().grads);
        let numeric = fd_grad(|x| reg_loss(x, &p, tau).unwrap().loss, &z);
        rel_err(&analytic, &numeric)
    })
}

pub fn ce_grad_error(trials: u64) -> f64 {
    worst(trials, 14, |r| {
        let n = r.random_range(1..5);
        let m = r.random_range(2..5);
        let dim = r.random_range(2..7);
        let tau = r.random_range(0.07..1.0);
        let z = rand_rows(r, n, dim, -1.0, 1.0);
        let p = rand_rows(r, m, dim, -1.0, 1.0);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..m)).collect();
        let analytic = flat(&ce_loss(&z, &labels, &p, tau).unwrap().grads);
        let numeric = fd_grad(|x| ce_loss(x, &labels, &p, tau).unwrap().loss, &z);
        rel_err(&analytic, &numeric)
    })
}

/// Composed objective gradient with respect to the head parameters, on
/// small synthetic batches with randomly perturbed heads and ablations.
pub fn head_grad_error(trials: u64) -> f64 {
    let mut r = rng(15);
    let mut worst_err: f64 = 0.0;
    for t in 0..trials {
        let spec = SynthSpec {
            k_true: 3,
            m: 2,
            dim: 5,
            per_class_count: 4,
            test_per_class: 1,
            cluster_std: 0.5,
            center_separation: 3.0,
            labeled_ratio: 0.5,
            random_known: false,
            seed: t,
        };
        let data = generate_synthetic(&spec).unwrap();
        let view = data.training_view();
        let mut config = Config {
            epochs: 0,
            seed: t,
            gamma: 10.0,
            ..Config::default()
        };
        config.activation = if t % 2 == 0 {
            Activation::Identity
        } else {
            Activation::Tanh
        };
        let names = ["no_ce", "no_decouple", "no_soft_assignment", "no_semantic_weights"];
        if t % 3 == 1 {
            config
                .ablation
                .set(names[r.random_range(0..names.len())], true)
                .unwrap();
        }
        let state = train(&view, &config).unwrap();
        let batch = Batch::from_view(&view).unwrap();
        let head = ProjectionHead::init(5, 5, config.activation, 0.3, 100 + t).unwrap();
        let objective = state.objective();
        let (_, grad) = objective.evaluate(&head, &batch, &config).unwrap();
        let params = vec![head.params()];
        let numeric = fd_grad(
            |p| {
                let mut h = head.clone();
                h.set_params(&p[0]).unwrap();
                objective.evaluate(&h, &batch, &config).unwrap().0.total
            },
            &params,
        );
        worst_err = worst_err.max(rel_err(&grad.to_flat(), &numeric));
    }
    worst_err
}

/// Minimum total cost over all injective row→column maps.
pub fn brute_force_min_cost(cost: &[Vec<f64>]) -> f64 {
    fn go(row: usize, cost: &[Vec<f64>], used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                go(row + 1, cost, used, acc + cost[row][c], best);
                used[c] = false;
            }
        }
    }
    let cols = cost.first().map_or(0, Vec::len);
    let mut best = f64::INFINITY;
    go(0, cost, &mut vec![false; cols], 0.0, &mut best);
    best
}

/// Most instances any injective cluster→label map (clusters may stay
/// unmapped) gets right.
pub fn brute_force_agreement(truth: &[&str], predicted: &[usize]) -> usize {
    let labels: Vec<&str> = truth.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let clusters = predicted.iter().max().map_or(0, |m| m + 1);
    #[allow(clippy::too_many_arguments)]
    fn go(
        c: usize,
        clusters: usize,
        labels: &[&str],
        used: &mut Vec<bool>,
        map: &mut Vec<Option<usize>>,
        truth: &[&str],
        predicted: &[usize],
        best: &mut usize,
    ) {
        if c == clusters {
            let hits = truth
                .iter()
                .zip(predicted)
                .filter(|(t, &p)| map[p].is_some_and(|l| labels[l] == **t))
                .count();
            *best = (*best).max(hits);
            return;
        }
        map[c] = None;
        go(c + 1, clusters, labels, used, map, truth, predicted, best);
        for l in 0..labels.len() {
            if !used[l] {
                used[l] = true;
                map[c] = Some(l);
                go(c + 1, clusters, labels, used, map, truth, predicted, best);
                used[l] = false;
            }
        }
        map[c] = None;
    }
    let mut best = 0;
    go(
        0,
        clusters,
        &labels,
        &mut vec![false; labels.len()],
        &mut vec![None; clusters],
        truth,
        predicted,
        &mut best,
    );
    best
}

/// Calls `f(truth, predicted)` once for every contingency table with at most
/// `max_n` instances and at most `max_clusters` non-empty clusters. Every
/// input of that size is one of these tables up to instance order and
/// relabeling of labels and clusters.
pub fn for_each_small_input(max_n: usize, max_clusters: usize, mut f: impl FnMut(&[String], &[usize])) {
    fn columns(rows: usize, max_sum: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..rows {
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<usize>| {
                    (0..=max_sum).map(move |v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        out.retain(|c| (1..=max_sum).contains(&c.iter().sum::<usize>()));
        out.sort_by(|a, b| b.cmp(a));
        out
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        cols: &[Vec<usize>],
        start: usize,
        remaining: usize,
        rows: usize,
        chosen: &mut Vec<usize>,
        f: &mut dyn FnMut(&[String], &[usize]),
    ) {
        if !chosen.is_empty() && (0..rows).all(|r| chosen.iter().any(|&c| cols[c][r] > 0)) {
            let mut truth = Vec::new();
            let mut predicted = Vec::new();
            for (label, &c) in chosen.iter().enumerate() {
                for (cluster, &count) in cols[c].iter().enumerate() {
                    for _ in 0..count {
                        truth.push(format!("L{label}"));
                        predicted.push(cluster);
                    }
                }
            }
            f(&truth, &predicted);
        }
        for j in start..cols.len() {
            let s: usize = cols[j].iter().sum();
            if s <= remaining {
                chosen.push(j);
                rec(cols, j, remaining - s, rows, chosen, f);
                chosen.pop();
            }
        }
    }
    for rows in 1..=max_clusters {
        let cols = columns(rows, max_n);
        rec(&cols, 0, max_n, rows, &mut Vec::new(), &mut f);
    }
}

/// Outcome of a batch of seeded trials.
#[derive(Debug, Default, Clone, Copy)]
pub struct Trials {
    pub passed: usize,
    pub total: usize,
}

impl Trials {
    pub fn record(&mut self, ok: bool) {
        self.total += 1;
        self.passed += usize::from(ok);
    }

    pub fn all(&self) -> bool {
        self.passed == self.total
    }
}

/// `hungarian_match` total cost against brute force on random rectangular
/// prototype sets with `M <= K <= 7`.
pub fn hungarian_trials(count: u64) -> Trials {
    use dpn_core::alignment::{hungarian_match, PrototypeKind, PrototypeSet};
    use dpn_core::vector::Vector;
    let mut r = rng(21);
    let mut out = Trials::default();
    for _ in 0..count {
        let k = r.random_range(1..=7);
        let m = r.random_range(1..=k);
        let dim = r.random_range(1..=4);
        let make = |rows: Vec<Vec<f64>>| rows.into_iter().map(|v| Vector::new(v).unwrap()).collect::<Vec<_>>();
        // On a line, crossing and nested matchings tie exactly; integer
        // coordinates keep those tied sums exact in floating point too.
        let mut draw = |n: usize| {
            let mut rows = rand_rows(&mut r, n, dim, -5.0, 5.0);
            if dim == 1 {
                rows.iter_mut().for_each(|v| v[0] = v[0].round());
            }
            make(rows)
        };
        let (labeled, unlabeled) = (draw(m), draw(k));
        let pl = PrototypeSet::new(PrototypeKind::Labeled, labeled, (0..m).map(|i| i.to_string()).collect()).unwrap();
        let pu = PrototypeSet::new(PrototypeKind::Unlabeled, unlabeled, vec![]).unwrap();
        let result = hungarian_match(&pl, &pu).unwrap();
        out.record(result.total_cost == brute_force_min_cost(&result.cost_matrix));
    }
    out
}

/// Per-iteration inertia of single-seeding k-means never rises by more than
/// `1e-9` on random datasets.
pub fn inertia_trials(count: u64) -> Trials {
    use dpn_core::clustering::kmeans;
    let mut r = rng(22);
    let mut out = Trials::default();
    for seed in 0..count {
        let n = r.random_range(5..60);
        let dim = r.random_range(1..5);
        let k = r.random_range(1..=5.min(n));
        let points = rand_rows(&mut r, n, dim, -3.0, 3.0);
        let c = kmeans(&points, k, seed, 300, 0.0).unwrap();
        out.record(c.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }
    out
}

/// k-means on Gaussians ten standard deviations apart recovers the
/// generating labels exactly.
pub fn exact_recovery_trials(count: u64) -> Trials {
    use dpn_core::clustering::kmeans_best_of;
    use dpn_core::evaluation::clustering_accuracy;
    let mut out = Trials::default();
    for seed in 0..count {
        let spec = SynthSpec {
            k_true: 3,
            m: 1,
            dim: 4,
            per_class_count: 20,
            test_per_class: 0,
            cluster_std: 1.0,
            center_separation: 10.0,
            labeled_ratio: 0.5,
            random_known: false,
            seed,
        };
        let d = generate_synthetic(&spec).unwrap();
        // All 60 generated points: labeled rows plus unlabeled rows.
        let mut points: Vec<&[f64]> = d.labeled().iter().map(|r| r.vector.as_slice()).collect();
        let mut truth: Vec<&str> = d.labeled().iter().map(|r| r.label.as_str()).collect();
        for r in d.unlabeled() {
            points.push(r.vector.as_slice());
            truth.push(r.truth.as_deref().unwrap());
        }
        let c = kmeans_best_of(&points, 3, seed, 10, 300, 1e-6).unwrap();
        out.record(clustering_accuracy(&truth, &c.assignment).unwrap().accuracy == 1.0);
    }
    out
}

/// Permuted, perturbed copies of a prototype set are matched back to the
/// originals.
pub fn alignment_recovery_trials(count: u64) -> Trials {
    use dpn_core::alignment::{hungarian_match, PrototypeKind, PrototypeSet};
    use dpn_core::vector::Vector;
    use rand::seq::SliceRandom;
    let mut out = Trials::default();
    for seed in 0..count {
        let mut r = rng(1000 + seed);
        let k = r.random_range(2..=8);
        let dim = r.random_range(2..=5);
        let base = rand_rows(&mut r, k, dim, -10.0, 10.0);
        let mut gap = f64::INFINITY;
        for a in 0..k {
            for b in a + 1..k {
                let d: f64 = base[a]
                    .iter()
                    .zip(&base[b])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                gap = gap.min(d);
            }
        }
        // Max-norm noise bound; Euclidean norm stays below gap / 2.
        let bound = 0.49 * gap / (dim as f64).sqrt();
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        // Unlabeled slot perm[i] holds a noisy copy of labeled prototype i.
        let mut shuffled = vec![vec![]; k];
        for (i, &slot) in perm.iter().enumerate() {
            shuffled[slot] = base[i].iter().map(|x| x + r.random_range(-bound..bound)).collect();
        }
        let to_vecs = |rows: &[Vec<f64>]| rows.iter().map(|v| Vector::new(v.clone()).unwrap()).collect::<Vec<_>>();
        let pl = PrototypeSet::new(
            PrototypeKind::Labeled,
            to_vecs(&base),
            (0..k).map(|i| i.to_string()).collect(),
        )
        .unwrap();
        let pu = PrototypeSet::new(PrototypeKind::Unlabeled, to_vecs(&shuffled), vec![]).unwrap();
        out.record(hungarian_match(&pl, &pu).unwrap().permutation == perm);
    }
    out
}

pub fn separated_spec(k_true: usize, m: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        k_true,
        m,
        dim: 16,
        per_class_count: 50,
        test_per_class: 20,
        cluster_std: 0.5,
        center_separation: 8.0,
        labeled_ratio: 0.5,
        random_known: false,
        seed,
    }
}

/// `estimate_k` on the unlabeled split of separated datasets with
/// `K_true` cycling through 3..=8 and `K_max = 2 K_true`.
pub fn estimate_k_trials(count: u64) -> (Trials, Vec<(usize, usize)>) {
    use dpn_core::evaluation::estimate_k;
    let mut out = Trials::default();
    let mut pairs = Vec::new();
    for seed in 0..count {
        let k = 3 + (seed as usize % 6);
        let d = generate_synthetic(&SynthSpec {
            cluster_std: 1.0,
            center_separation: 10.0,
            ..separated_spec(k, (k / 2).max(1), seed)
        })
        .unwrap();
        let points: Vec<&[f64]> = d.unlabeled().iter().map(|r| r.vector.as_slice()).collect();
        let est = estimate_k(&points, 2 * k, 0.5, seed, 10).unwrap();
        out.record(est.abs_diff(k) <= 1);
        pairs.push((k, est));
    }
    (out, pairs)
}
