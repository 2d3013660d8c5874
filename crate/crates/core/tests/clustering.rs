mod common;

use std::collections::BTreeSet;

use common::{rand_rows, rng};
use dpn_core::clustering::{assign_to_nearest, distinct_count, kmeans, kmeans_best_of};
use dpn_core::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Partition as a set of sets of point ids, independent of cluster numbering.
fn partition(ids: &[usize], assignment: &[usize]) -> BTreeSet<BTreeSet<usize>> {
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![BTreeSet::new(); k];
    for (&id, &c) in ids.iter().zip(assignment) {
        groups[c].insert(id);
    }
    groups.into_iter().filter(|g| !g.is_empty()).collect()
}

#[test]
fn nearest_matches_brute_force_scan() {
    let mut r = rng(41);
    for _ in 0..100 {
        let dim = r.random_range(1..5);
        let points = rand_rows(&mut r, 20, dim, -2.0, 2.0);
        let centers = rand_rows(&mut r, 5, dim, -2.0, 2.0);
        let got = assign_to_nearest(&points, &centers).unwrap();
        for (p, g) in points.iter().zip(got) {
            let mut best = 0;
            for c in 1..centers.len() {
                if sq(p, &centers[c]) < sq(p, &centers[best]) {
                    best = c;
                }
            }
            assert_eq!(g, best);
        }
    }
}

#[test]
fn nearest_examples() {
    let centers = [[1.0, 0.0], [0.0, 1.0]];
    assert_eq!(assign_to_nearest(&[[0.0, 0.0]], &centers).unwrap(), [0]);
    assert_eq!(assign_to_nearest(&[[0.0, 1.0]], &centers).unwrap(), [1]);
    let none: [[f64; 2]; 0] = [];
    assert!(matches!(
        assign_to_nearest(&[[0.0, 0.0]], &none),
        Err(Error::EmptyInput(_))
    ));
}

#[test]
fn k_equal_to_distinct_points_gives_zero_inertia() {
    let mut r = rng(42);
    for seed in 0..20 {
        let base = rand_rows(&mut r, 6, 3, -5.0, 5.0);
        let mut points = base.clone();
        points.extend(base.iter().take(3).cloned());
        assert_eq!(distinct_count(&points), 6);
        let c = kmeans(&points, 6, seed, 300, 1e-6).unwrap();
        assert_eq!(c.inertia, 0.0);
    }
}

#[test]
fn inertia_never_rises() {
    let t = common::inertia_trials(100);
    assert!(t.all(), "{t:?}");
}

#[test]
fn separated_gaussians_recovered_exactly() {
    let t = common::exact_recovery_trials(10);
    assert!(t.all(), "{t:?}");
}

#[test]
fn restarts_never_worse_than_first_seeding() {
    let mut r = rng(43);
    for seed in 0..20 {
        let points = rand_rows(&mut r, 40, 2, -3.0, 3.0);
        let one = kmeans_best_of(&points, 4, seed, 1, 300, 1e-6).unwrap();
        let many = kmeans_best_of(&points, 4, seed, 10, 300, 1e-6).unwrap();
        assert!(many.inertia <= one.inertia);
        assert_eq!(one, kmeans(&points, 4, seed, 300, 1e-6).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn point_order_does_not_change_separated_partition(seed in 0u64..500) {
        // Three tight, far-apart blobs: any seeding converges to the same partition.
        let mut r = rng(seed);
        let mut points = Vec::new();
        for c in 0..3 {
            for _ in 0..8 {
                points.push(vec![c as f64 * 100.0 + r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]);
            }
        }
        let ids: Vec<usize> = (0..points.len()).collect();
        let mut order = ids.clone();
        order.shuffle(&mut r);
        let shuffled: Vec<Vec<f64>> = order.iter().map(|&i| points[i].clone()).collect();
        let a = kmeans_best_of(&points, 3, seed, 10, 300, 1e-6).unwrap();
        let b = kmeans_best_of(&shuffled, 3, seed, 10, 300, 1e-6).unwrap();
        prop_assert_eq!(partition(&ids, &a.assignment), partition(&order, &b.assignment));
    }
}
