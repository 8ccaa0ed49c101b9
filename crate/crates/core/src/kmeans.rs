//! Lloyd's k-means with k-means++ seeding.
//!
//! Everything is deterministic for a fixed seed: the RNG is ChaCha8, point
//! assignment is parallel but order-preserving, and centroid sums are
//! accumulated sequentially in point order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iter: 300,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances from training points to their centroid.
    pub inertia: f64,
    pub seed: u64,
}

/// A fitted model plus training diagnostics.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: KMeansModel,
    pub labels: Vec<usize>,
    /// Inertia after each assignment step, in iteration order.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lowest index.
pub fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

impl KMeansModel {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn predict(&self, p: &[f64]) -> Result<usize> {
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: p.len(),
            });
        }
        Ok(nearest(&self.centroids, p).0)
    }
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &points[first])).collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // Rounding can leave `target` past the last positive weight.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive total"))
        } else {
            // Remaining points all coincide with a centroid: take any unchosen one.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[pick]));
        }
    }
    centroids
}

fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points.par_iter().map(|p| nearest(centroids, p)).unzip()
}

/// Moves each empty centroid onto the point farthest from its own centroid,
/// taking points only from clusters that keep at least one member.
fn reseed_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], labels: &mut [usize], dists: &mut [f64]) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let donor = (0..points.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
        let Some(i) = donor else { break };
        sizes[labels[i]] -= 1;
        sizes[j] = 1;
        labels[i] = j;
        dists[i] = 0.0;
        centroids[j] = points[i].clone();
    }
}

pub fn fit_kmeans(points: &[Vec<f64>], config: &KMeansConfig) -> Result<KMeansFit> {
    let n = points.len();
    let k = config.k;
    if k == 0 || n < k {
        return Err(Error::TooFewPoints { points: n, k });
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(Error::InvalidInput("points have zero dimensions".into()));
    }
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite coordinate".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut history = Vec::new();
    let mut iterations = 0;

    loop {
        let (mut labels, mut dists) = assign_all(points, &centroids);
        reseed_empty(points, &mut centroids, &mut labels, &mut dists);
        history.push(dists.iter().sum());
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for ((c, s), &cnt) in centroids.iter_mut().zip(sums).zip(&counts) {
            if cnt == 0 {
                continue;
            }
            let updated: Vec<f64> = s.into_iter().map(|v| v / cnt as f64).collect();
            shift = shift.max(squared_distance(c, &updated).sqrt());
            *c = updated;
        }
        if shift < config.tol || iterations >= config.max_iter {
            break;
        }
    }

    let (labels, dists) = assign_all(points, &centroids);
    let inertia = dists.iter().sum();
    Ok(KMeansFit {
        model: KMeansModel {
            k,
            centroids,
            inertia,
            seed: config.seed,
        },
        labels,
        inertia_history: history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![4.0, 6.0]];
        let fit = fit_kmeans(&pts, &KMeansConfig::new(1, 3)).unwrap();
        assert_eq!(fit.model.centroids[0], vec![2.0, 2.0]);
        // Sum of squared deviations: 4+4 + 0+4 + 4+16.
        assert!((fit.model.inertia - 32.0).abs() < 1e-12);
    }

    #[test]
    fn n_equals_k() {
        let pts = vec![vec![0.0], vec![5.0], vec![9.0], vec![-3.0]];
        let fit = fit_kmeans(&pts, &KMeansConfig::new(4, 11)).unwrap();
        assert_eq!(fit.model.inertia, 0.0);
        let mut c: Vec<f64> = fit.model.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![-3.0, 0.0, 5.0, 9.0]);
    }

    #[test]
    fn duplicate_points_still_fill_k() {
        let pts = vec![vec![1.0]; 5];
        let fit = fit_kmeans(&pts, &KMeansConfig::new(3, 0)).unwrap();
        assert_eq!(fit.model.centroids.len(), 3);
        assert_eq!(fit.model.inertia, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            fit_kmeans(&[vec![1.0]], &KMeansConfig::new(2, 0)),
            Err(Error::TooFewPoints { points: 1, k: 2 })
        ));
        assert!(fit_kmeans(&[vec![1.0], vec![1.0, 2.0]], &KMeansConfig::new(1, 0)).is_err());
        assert!(fit_kmeans(&[vec![f64::NAN]], &KMeansConfig::new(1, 0)).is_err());
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let c = vec![vec![0.0], vec![2.0], vec![4.0]];
        assert_eq!(nearest(&c, &[1.0]).0, 0);
        assert_eq!(nearest(&c, &[3.0]).0, 1);
    }

    #[test]
    fn reseeding_keeps_every_cluster_populated() {
        let mut centroids = vec![vec![0.0], vec![100.0]];
        let pts = vec![vec![0.0], vec![1.0], vec![5.0]];
        let (mut labels, mut dists) = assign_all(&pts, &centroids);
        assert_eq!(labels, vec![0, 0, 0]);
        reseed_empty(&pts, &mut centroids, &mut labels, &mut dists);
        assert_eq!(labels, vec![0, 0, 1]);
        assert_eq!(centroids[1], vec![5.0]);
    }
}
