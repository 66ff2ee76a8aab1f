use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

/// Cluster labels produced by k-means over (teacher) features.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperclassAssignment {
    pub assignments: Vec<usize>,
    #[serde(skip)]
    pub centroids: Matrix,
    /// Within-cluster sum of squares after each assignment step.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

impl SuperclassAssignment {
    pub fn num_clusters(&self) -> usize {
        self.centroids.rows()
    }

    pub fn cost(&self) -> f64 {
        self.cost_history.last().copied().unwrap_or(0.0)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// CSV with header `example_index,cluster_index`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("example_index,cluster_index\n");
        for (i, a) in self.assignments.iter().enumerate() {
            s.push_str(&format!("{i},{a}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(x: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.row_iter().enumerate() {
        let d = squared_distance(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(features: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = features.rows();
    let mut centroids = Matrix::zeros(k, features.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(features.row(first));
    let mut d2: Vec<f64> = features
        .row_iter()
        .map(|x| squared_distance(x, centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(features.row(pick));
        for (i, x) in features.row_iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(x, centroids.row(c)));
        }
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeding.
///
/// Stops after `iters` assignment steps or once assignments stop changing.
/// A cluster left empty by the update step is re-seeded at the point farthest
/// from its own centroid.
pub fn kmeans(
    features: &Matrix,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<SuperclassAssignment> {
    let (n, d) = features.shape();
    if k == 0 {
        return Err(Error::param("k-means needs at least one cluster"));
    }
    if n < k {
        return Err(Error::input(format!(
            "k-means with {k} clusters needs at least {k} points, got {n}"
        )));
    }
    if d == 0 || !features.is_finite() {
        return Err(Error::input(
            "k-means features must be finite and non-empty",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(features, k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut cost_history = Vec::new();
    let mut iterations = 0;
    let max_iters = iters.max(1);

    while iterations < max_iters {
        iterations += 1;
        let mut cost = 0.0;
        let mut dists = Vec::with_capacity(n);
        let next: Vec<usize> = features
            .row_iter()
            .map(|x| {
                let (c, dd) = nearest(x, &centroids);
                cost += dd;
                dists.push(dd);
                c
            })
            .collect();
        cost_history.push(cost);
        let converged = next == assignments;
        assignments = next;
        if converged || iterations == max_iters {
            break;
        }

        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (x, &c) in features.row_iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = 1.0 / count as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            } else {
                // farthest point from its assigned centroid, lowest index on ties
                let mut far = None;
                for i in 0..n {
                    if taken[i] {
                        continue;
                    }
                    if far.is_none_or(|f: usize| dists[i] > dists[f]) {
                        far = Some(i);
                    }
                }
                if let Some(i) = far {
                    taken[i] = true;
                    centroids.row_mut(c).copy_from_slice(features.row(i));
                }
            }
        }
    }

    Ok(SuperclassAssignment {
        assignments,
        centroids,
        cost_history,
        iterations,
    })
}
