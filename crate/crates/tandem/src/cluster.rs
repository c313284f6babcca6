//! k-means++ clustering of plan embeddings and centroid-nearest
//! representative selection.
//!
//! Seeding follows the classical scheme: the first center is uniform over
//! the points, each subsequent center is drawn with probability proportional
//! to the squared distance to its nearest chosen center. Lloyd iterations
//! then run until assignments stabilize. Everything is deterministic given
//! the seed; all ties break toward the lowest plan id.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::plan::Plan;

/// Upper bound on Lloyd iterations; assignments at n=15 stabilize far
/// earlier.
pub const MAX_LLOYD_ITERS: usize = 100;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("plan {0} has no embedding")]
    MissingEmbedding(u32),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no plans to cluster")]
    EmptyInput,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters `plans` into `min(k, distinct embeddings)` groups and returns
/// the member closest to each centroid, ordered by the cluster's first
/// appearance in the input.
pub fn cluster_plans(plans: &[Plan], k: usize, seed: u64) -> Result<Vec<Plan>, ClusterError> {
    if plans.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    debug_assert!(k >= 1);
    let points: Vec<&[f64]> = plans
        .iter()
        .map(|p| {
            p.embedding
                .as_ref()
                .map(|e| e.values.as_slice())
                .ok_or(ClusterError::MissingEmbedding(p.id))
        })
        .collect::<Result<_, _>>()?;
    let dim = points[0].len();
    if let Some(other) = points.iter().find(|p| p.len() != dim) {
        return Err(ClusterError::DimensionMismatch(dim, other.len()));
    }

    let mut distinct: Vec<&[f64]> = Vec::new();
    for point in &points {
        if !distinct.iter().any(|d| d == point) {
            distinct.push(point);
        }
    }
    let effective_k = k.min(distinct.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centers(&points, effective_k, &mut rng);

    let mut assignment: Option<Vec<usize>> = None;
    for _ in 0..MAX_LLOYD_ITERS {
        let next = assign_without_empties(&points, &mut centroids);
        let converged = assignment.as_ref() == Some(&next);
        assignment = Some(next);
        if converged {
            break;
        }
        centroids = cluster_means(&points, assignment.as_ref().expect("just set"), &centroids);
    }
    let assignment = assignment.expect("at least one Lloyd iteration ran");
    // representatives are measured against the final cluster means
    let centroids = cluster_means(&points, &assignment, &centroids);

    // representative per cluster: nearest member, ties to lowest plan id
    let mut representative: Vec<Option<usize>> = vec![None; centroids.len()];
    for (i, point) in points.iter().enumerate() {
        let c = assignment[i];
        let better = match representative[c] {
            None => true,
            Some(current) => {
                squared_distance(point, &centroids[c])
                    < squared_distance(points[current], &centroids[c])
            }
        };
        if better {
            representative[c] = Some(i);
        }
    }

    // order by cluster of first appearance
    let mut seen: Vec<usize> = Vec::new();
    for &c in &assignment {
        if !seen.contains(&c) {
            seen.push(c);
        }
    }
    Ok(seen
        .into_iter()
        .filter_map(|c| representative[c])
        .map(|i| plans[i].clone())
        .collect())
}

fn assign(points: &[&[f64]], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|point| {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let dist = squared_distance(point, centroid);
                if dist < best_dist {
                    best = c;
                    best_dist = dist;
                }
            }
            best
        })
        .collect()
}

/// Assigns points to nearest centroids; any centroid left without members is
/// re-seeded at the point farthest from its current centroid (lowest plan
/// index on ties) and the assignment recomputed, one empty cluster at a
/// time. Guaranteed to terminate: a re-seeded centroid captures its seed
/// point exclusively at distance zero.
fn assign_without_empties(points: &[&[f64]], centroids: &mut [Vec<f64>]) -> Vec<usize> {
    loop {
        let assignment = assign(points, centroids);
        let mut counts = vec![0usize; centroids.len()];
        for &a in &assignment {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return assignment;
        };
        let mut farthest = 0;
        let mut farthest_dist = -1.0;
        for (i, point) in points.iter().enumerate() {
            let dist = squared_distance(point, &centroids[assignment[i]]);
            if dist > farthest_dist {
                farthest = i;
                farthest_dist = dist;
            }
        }
        centroids[empty] = points[farthest].to_vec();
    }
}

/// Means of the clusters under `assignment`; clusters without members keep
/// their previous centroid.
fn cluster_means(points: &[&[f64]], assignment: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; previous.len()];
    let mut counts = vec![0usize; previous.len()];
    for (point, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (d, value) in point.iter().enumerate() {
            sums[c][d] += value;
        }
    }
    sums.iter_mut().enumerate().for_each(|(c, sum)| {
        if counts[c] == 0 {
            sum.clone_from(&previous[c]);
        } else {
            sum.iter_mut().for_each(|v| *v /= counts[c] as f64);
        }
    });
    sums
}

/// k-means++ seeding. Duplicate embeddings carry zero weight once their
/// position is chosen, so with `k <= distinct points` every draw succeeds.
fn seed_centers(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.gen_range(0..points.len());
    centers.push(points[canonical_index(points, first)].to_vec());
    while centers.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|point| {
                centers
                    .iter()
                    .map(|c| squared_distance(point, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0, "k exceeds distinct point count");
        let mut target = rng.gen::<f64>() * total;
        let mut chosen = None;
        for (i, weight) in weights.iter().enumerate() {
            if *weight <= 0.0 {
                continue;
            }
            chosen = Some(i);
            if target < *weight {
                break;
            }
            target -= *weight;
        }
        // rounding may leave target past the last positive weight; `chosen`
        // then already holds that last candidate
        let chosen = chosen.expect("positive total weight");
        centers.push(points[canonical_index(points, chosen)].to_vec());
    }
    centers
}

/// Lowest index holding the same embedding as `index`.
fn canonical_index(points: &[&[f64]], index: usize) -> usize {
    points
        .iter()
        .position(|p| *p == points[index])
        .unwrap_or(index)
}
