//! Lloyd's k-means with k-means++ seeding.

use std::collections::HashSet;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::vector::{mean_of, sq_dist, Vector};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub centers: Vec<Vector>,
    /// Cluster index per input point.
    pub assignment: Vec<usize>,
    /// Sum of squared distances from points to their assigned centers.
    pub inertia: f64,
    /// Inertia after every assignment step, first entry from the seeding.
    pub inertia_trace: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

fn check_points<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let dim = points
        .first()
        .map(|p| p.as_ref().len())
        .ok_or(Error::EmptyInput("points"))?;
    for p in points {
        if p.as_ref().len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: p.as_ref().len(),
            });
        }
    }
    Ok(dim)
}

/// Number of distinct points (bitwise, with -0.0 == 0.0).
pub fn distinct_count<P: AsRef<[f64]>>(points: &[P]) -> usize {
    points
        .iter()
        .map(|p| p.as_ref().iter().map(|v| (v + 0.0).to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

/// Index of the nearest center for every point; ties go to the lowest index.
pub fn assign_to_nearest<P: AsRef<[f64]>, C: AsRef<[f64]>>(points: &[P], centers: &[C]) -> Result<Vec<usize>> {
    let first = centers.first().ok_or(Error::EmptyInput("centers"))?;
    let dim = first.as_ref().len();
    for c in centers
        .iter()
        .map(AsRef::as_ref)
        .chain(points.iter().map(AsRef::as_ref))
    {
        if c.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: c.len(),
            });
        }
    }
    Ok(points.iter().map(|p| nearest(p.as_ref(), centers).0).collect())
}

fn nearest<C: AsRef<[f64]>>(point: &[f64], centers: &[C]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c.as_ref());
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[&[f64]], centers: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (label, p) in labels.iter_mut().zip(points) {
        let (j, d) = nearest(p, centers);
        *label = j;
        inertia += d;
    }
    inertia
}

fn plus_plus_init(points: &[&[f64]], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].to_vec());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        // Last point with positive weight is the fallback for rounding at the top end.
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("k <= distinct points");
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            if acc > target {
                pick = i;
                break;
            }
        }
        let center = points[pick].to_vec();
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(sq_dist(p, &center));
        }
        centers.push(center);
    }
    centers
}

/// Moves the point farthest from its center into each empty cluster.
/// Returns true if anything moved.
fn repair_empty(points: &[&[f64]], centers: &mut [Vec<f64>], labels: &mut [usize]) -> bool {
    let k = centers.len();
    let mut repaired = false;
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return repaired;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centers[labels[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("k <= n guarantees a donor cluster");
        labels[i] = empty;
        centers[empty] = points[i].to_vec();
        repaired = true;
    }
}

fn inertia_of(points: &[&[f64]], centers: &[Vec<f64>], labels: &[usize]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum()
}

/// Clusters `points` into `k` groups.
///
/// k-means++ seeding from `seed`, then Lloyd iterations until the largest
/// per-component center movement drops below `tol` or `max_iter` updates
/// have run. Empty clusters are refilled with the point farthest from its
/// center so exactly `k` clusters come back.
pub fn kmeans<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<Clustering> {
    kmeans_on_stream(points, k, seed, Stream::KMeansInit, 1, max_iter, tol)
}

/// Runs `restarts` seedings of [`kmeans`] from one random stream and keeps
/// the lowest final inertia (earliest run on ties).
pub fn kmeans_best_of<P: AsRef<[f64]>>(
    points: &[P],
    k: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering> {
    kmeans_on_stream(points, k, seed, Stream::KMeansInit, restarts, max_iter, tol)
}

pub(crate) fn kmeans_on_stream<P: AsRef<[f64]>>(
    points: &[P],
    k: usize,
    seed: u64,
    stream: Stream,
    restarts: usize,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering> {
    if restarts == 0 {
        return Err(Error::Config("k-means restarts must be positive".into()));
    }
    let dim = check_points(points)?;
    if k == 0 {
        return Err(Error::InfeasibleK { k, distinct: 0 });
    }
    let distinct = distinct_count(points);
    if k > distinct {
        return Err(Error::InfeasibleK { k, distinct });
    }
    let pts: Vec<&[f64]> = points.iter().map(AsRef::as_ref).collect();

    let mut rng = rng::stream(seed, stream);
    let mut best = lloyd(&pts, k, dim, &mut rng, max_iter, tol);
    for _ in 1..restarts {
        let run = lloyd(&pts, k, dim, &mut rng, max_iter, tol);
        if run.inertia < best.inertia {
            best = run;
        }
    }
    Ok(best)
}

fn lloyd(pts: &[&[f64]], k: usize, dim: usize, rng: &mut rng::Rng, max_iter: usize, tol: f64) -> Clustering {
    let mut centers = plus_plus_init(pts, k, rng);
    let mut labels = vec![0; pts.len()];
    let mut inertia_trace = vec![assign(pts, &centers, &mut labels)];

    for _ in 0..max_iter {
        if repair_empty(pts, &mut centers, &mut labels) {
            inertia_trace.push(inertia_of(pts, &centers, &labels));
        }
        let mut updated = Vec::with_capacity(k);
        for j in 0..k {
            let members = pts.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(p, _)| *p);
            updated.push(mean_of(members, dim));
        }
        let shift = centers
            .iter()
            .zip(&updated)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        centers = updated;
        inertia_trace.push(assign(pts, &centers, &mut labels));
        if shift < tol {
            break;
        }
    }
    if repair_empty(pts, &mut centers, &mut labels) {
        inertia_trace.push(inertia_of(pts, &centers, &labels));
    }

    let inertia = *inertia_trace.last().expect("trace is non-empty");
    Clustering {
        centers: centers.into_iter().map(Vector::from_raw).collect(),
        assignment: labels,
        inertia,
        inertia_trace,
    }
}
