use rand::Rng;
use rayon::prelude::*;

use crate::rng::{seeded, streams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Stop once the objective improves by less than this fraction.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iter: 25,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `k x dim`, row-major.
    pub centroids: Vec<f32>,
    pub assignments: Vec<u32>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
}

#[inline]
fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = x as f64 - y as f64;
            t * t
        })
        .sum()
}

/// Nearest centroid per point (ties to the lower index) and the inertia.
/// Points are scored in parallel; the sum is taken in point order.
fn assign(points: &[f32], dim: usize, centroids: &[f32], out: &mut [u32]) -> f64 {
    let dists: Vec<f64> = points
        .par_chunks(dim)
        .zip(out.par_iter_mut())
        .map(|(p, slot)| {
            let mut best = (f64::INFINITY, 0u32);
            for (c, cen) in centroids.chunks_exact(dim).enumerate() {
                let d = sq_dist(p, cen);
                if d < best.0 {
                    best = (d, c as u32);
                }
            }
            *slot = best.1;
            best.0
        })
        .collect();
    dists.iter().sum()
}

/// k-means++ seeding followed by Lloyd iterations. With no points the
/// centroids are all zero.
pub fn kmeans(points: &[f32], dim: usize, k: usize, cfg: &KMeansConfig) -> KMeans {
    assert!(dim > 0 && k > 0 && points.len() % dim == 0);
    let n = points.len() / dim;
    let mut centroids = vec![0.0f32; k * dim];
    if n == 0 {
        return KMeans {
            centroids,
            assignments: Vec::new(),
            inertia: 0.0,
            iterations: 0,
        };
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut rng = seeded(cfg.seed, streams::KMEANS);
    let first = rng.random_range(0..n);
    centroids[..dim].copy_from_slice(point(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids[c * dim..(c + 1) * dim].copy_from_slice(point(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), point(pick)));
        }
    }

    let mut assignments = vec![0u32; n];
    let mut inertia = assign(points, dim, &centroids, &mut assignments);
    let mut iterations = 0;
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    while iterations < cfg.max_iter {
        iterations += 1;
        sums.fill(0.0);
        counts.fill(0);
        for (i, &a) in assignments.iter().enumerate() {
            let a = a as usize;
            counts[a] += 1;
            for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(point(i)) {
                *s += v as f64;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous centroid.
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
                }
            }
        }
        let next = assign(points, dim, &centroids, &mut assignments);
        let done = inertia - next <= cfg.tol * inertia;
        inertia = next;
        if done {
            break;
        }
    }
    KMeans {
        centroids,
        assignments,
        inertia,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_two_clusters() {
        let pts = [0.0, 0.1, 1.0, 1.1];
        let km = kmeans(&pts, 1, 2, &KMeansConfig::default());
        let mut c = km.centroids.clone();
        c.sort_by(f32::total_cmp);
        assert!((c[0] - 0.05).abs() < 1e-6 && (c[1] - 1.05).abs() < 1e-6);
        assert_eq!(km.assignments[0], km.assignments[1]);
        assert_ne!(km.assignments[1], km.assignments[2]);
    }

    #[test]
    fn more_centroids_than_points() {
        let pts = [3.0, 3.0, 5.0, 5.0];
        let km = kmeans(&pts, 2, 4, &KMeansConfig::default());
        assert_eq!(km.inertia, 0.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let pts: Vec<f32> = (0..400).map(|i| ((i * 37) % 101) as f32 / 10.0).collect();
        let cfg = KMeansConfig { seed: 9, ..Default::default() };
        assert_eq!(kmeans(&pts, 4, 8, &cfg), kmeans(&pts, 4, 8, &cfg));
    }
}
