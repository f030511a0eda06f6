//! Silhouette, Calinski-Harabasz and Davies-Bouldin scores.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub sc: f64,
    pub ch: f64,
    pub dbi: f64,
}

/// Groups row indices by cluster id, in increasing id order.
fn groups(ids: &[usize]) -> Vec<Vec<usize>> {
    let mut keys: Vec<usize> = ids.to_vec();
    keys.sort_unstable();
    keys.dedup();
    keys.iter()
        .map(|&k| (0..ids.len()).filter(|&i| ids[i] == k).collect())
        .collect()
}

fn check(x: ArrayView2<f64>, ids: &[usize]) -> Result<Vec<Vec<usize>>> {
    if x.nrows() != ids.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} cluster ids",
            x.nrows(),
            ids.len()
        )));
    }
    let g = groups(ids);
    if g.len() < 2 {
        return Err(Error::UndefinedMetric(format!("need at least 2 clusters, got {}", g.len())));
    }
    if g.iter().all(|c| c.len() == 1) {
        return Err(Error::UndefinedMetric("every cluster is a singleton".into()));
    }
    Ok(g)
}

/// Euclidean distance matrix via the Gram identity, clamped at zero.
pub fn pairwise_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let gram = x.dot(&x.t());
    let sq: Array1<f64> = gram.diag().to_owned();
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            (sq[i] + sq[j] - 2.0 * gram[[i, j]]).max(0.0).sqrt()
        }
    })
}

fn centroids(x: ArrayView2<f64>, g: &[Vec<usize>]) -> Vec<Array1<f64>> {
    g.iter()
        .map(|c| x.select(Axis(0), c).mean_axis(Axis(0)).expect("nonempty cluster"))
        .collect()
}

fn dist(a: &Array1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean over points of `(b − a) / max(a, b)`; points in singleton clusters
/// and points with `a = b = 0` contribute 0.
pub fn silhouette(x: ArrayView2<f64>, ids: &[usize]) -> Result<f64> {
    let g = check(x, ids)?;
    let d = pairwise_distances(x);
    let mut total = 0.0;
    for (ci, members) in g.iter().enumerate() {
        for &i in members {
            if members.len() == 1 {
                continue;
            }
            let a = members.iter().map(|&j| d[[i, j]]).sum::<f64>() / (members.len() - 1) as f64;
            let b = g
                .iter()
                .enumerate()
                .filter(|(cj, _)| *cj != ci)
                .map(|(_, other)| other.iter().map(|&j| d[[i, j]]).sum::<f64>() / other.len() as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                total += (b - a) / m;
            }
        }
    }
    Ok(total / x.nrows() as f64)
}

/// `[B / (k − 1)] / [W / (n − k)]`. Infinite when the clusters are points
/// (`W = 0`) at distinct locations.
pub fn calinski_harabasz(x: ArrayView2<f64>, ids: &[usize]) -> Result<f64> {
    let g = check(x, ids)?;
    let (n, k) = (x.nrows(), g.len());
    if n <= k {
        return Err(Error::UndefinedMetric(format!("need more points than clusters ({n} <= {k})")));
    }
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let cents = centroids(x, &g);
    let mut between = 0.0;
    let mut within = 0.0;
    for (members, c) in g.iter().zip(&cents) {
        between += members.len() as f64 * dist(c, mean.view()).powi(2);
        for &i in members {
            within += dist(c, x.row(i)).powi(2);
        }
    }
    if within == 0.0 {
        return if between > 0.0 {
            Ok(f64::INFINITY)
        } else {
            Err(Error::UndefinedMetric("all points coincide".into()))
        };
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

/// Mean over clusters of `max_j (σ_i + σ_j) / d(c_i, c_j)`, with `σ` the
/// mean distance of members to their centroid.
pub fn davies_bouldin(x: ArrayView2<f64>, ids: &[usize]) -> Result<f64> {
    let g = check(x, ids)?;
    let cents = centroids(x, &g);
    let sigma: Vec<f64> = g
        .iter()
        .zip(&cents)
        .map(|(m, c)| m.iter().map(|&i| dist(c, x.row(i))).sum::<f64>() / m.len() as f64)
        .collect();
    let mut total = 0.0;
    for i in 0..g.len() {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..g.len() {
            if i == j {
                continue;
            }
            let dij = dist(&cents[i], cents[j].view());
            if dij == 0.0 {
                return Err(Error::UndefinedMetric("two clusters share a centroid".into()));
            }
            worst = worst.max((sigma[i] + sigma[j]) / dij);
        }
        total += worst;
    }
    Ok(total / g.len() as f64)
}

pub fn clustering_metrics(x: ArrayView2<f64>, ids: &[usize]) -> Result<ClusterMetrics> {
    Ok(ClusterMetrics {
        sc: silhouette(x, ids)?,
        ch: calinski_harabasz(x, ids)?,
        dbi: davies_bouldin(x, ids)?,
    })
}
