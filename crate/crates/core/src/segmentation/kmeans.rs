//! Lloyd's k-means with k-means++ seeding, used on spectral embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Convergence threshold on the largest center displacement.
    pub tol: f64,
    pub max_repairs: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions { max_iter: 300, tol: 1e-8, max_repairs: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// Row-major `k x dim`.
    pub centers: Vec<f64>,
    pub iterations: usize,
    pub repairs: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center per point; ties go to the lowest center index.
fn assign(points: &[f64], dim: usize, centers: &[f64]) -> Vec<usize> {
    points
        .chunks(dim)
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.chunks(dim).enumerate() {
                let d = dist2(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn plus_plus_init(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut nearest: Vec<f64> = points.chunks(dim).map(|p| dist2(p, &centers[..dim])).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let new = &points[pick * dim..(pick + 1) * dim];
        centers.extend_from_slice(new);
        for (p, d) in points.chunks(dim).zip(nearest.iter_mut()) {
            *d = d.min(dist2(p, new));
        }
    }
    centers
}

/// Moves each empty cluster's center onto the point farthest from its own
/// center, taken from clusters that can spare it.
fn repair_empty(
    points: &[f64],
    dim: usize,
    centers: &mut [f64],
    labels: &mut Vec<usize>,
    repairs: &mut usize,
    max_repairs: usize,
) -> Result<()> {
    let k = centers.len() / dim;
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return Ok(());
        };
        *repairs += 1;
        if *repairs > max_repairs {
            return Err(Error::degenerate(format!(
                "k-means left cluster {empty} empty after {max_repairs} repairs"
            )));
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.chunks(dim).enumerate() {
            let l = labels[i];
            if counts[l] < 2 {
                continue;
            }
            let d = dist2(p, &centers[l * dim..(l + 1) * dim]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let far = far.ok_or_else(|| Error::degenerate("fewer points than clusters"))?;
        let src = points[far * dim..(far + 1) * dim].to_vec();
        centers[empty * dim..(empty + 1) * dim].copy_from_slice(&src);
        *labels = assign(points, dim, centers);
    }
}

/// Clusters the rows of a row-major `n x dim` matrix.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64, opts: &KMeansOptions) -> Result<KMeansResult> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::arg("k-means input is not a whole number of rows"));
    }
    let n = points.len() / dim;
    if k == 0 || k > n {
        return Err(Error::arg(format!("k = {k} must be in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(points, dim, k, &mut rng);
    let mut labels = assign(points, dim, &centers);
    let mut repairs = 0;
    let mut iterations = 0;
    repair_empty(points, dim, &mut centers, &mut labels, &mut repairs, opts.max_repairs)?;

    while iterations < opts.max_iter {
        iterations += 1;
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.chunks(dim).zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let new: Vec<f64> = sums[c * dim..(c + 1) * dim].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(dist2(&new, &centers[c * dim..(c + 1) * dim]).sqrt());
            centers[c * dim..(c + 1) * dim].copy_from_slice(&new);
        }
        labels = assign(points, dim, &centers);
        repair_empty(points, dim, &mut centers, &mut labels, &mut repairs, opts.max_repairs)?;
        if shift <= opts.tol {
            break;
        }
    }
    Ok(KMeansResult { labels, centers, iterations, repairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_obvious_blobs() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.extend_from_slice(&[0.0 + 0.01 * i as f64, 0.0]);
            pts.extend_from_slice(&[10.0, 10.0 + 0.01 * i as f64]);
        }
        let r = kmeans(&pts, 2, 2, 7, &KMeansOptions::default()).unwrap();
        for i in 0..10 {
            assert_eq!(r.labels[2 * i], r.labels[0]);
            assert_eq!(r.labels[2 * i + 1], r.labels[1]);
        }
        assert_ne!(r.labels[0], r.labels[1]);
    }

    #[test]
    fn same_seed_same_result() {
        let pts: Vec<f64> = (0..60).map(|i| ((i * 37) % 17) as f64).collect();
        let a = kmeans(&pts, 3, 4, 11, &KMeansOptions::default()).unwrap();
        let b = kmeans(&pts, 3, 4, 11, &KMeansOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn k_equal_n_gives_singletons() {
        let pts = vec![0.0, 1.0, 2.0, 3.0];
        let r = kmeans(&pts, 1, 4, 0, &KMeansOptions::default()).unwrap();
        let mut l = r.labels.clone();
        l.sort_unstable();
        assert_eq!(l, vec![0, 1, 2, 3]);
    }

    #[test]
    fn too_few_distinct_points_errors() {
        let pts = vec![1.0, 1.0, 1.0, 1.0];
        assert!(kmeans(&pts, 1, 3, 0, &KMeansOptions::default()).is_err());
        assert!(kmeans(&pts, 1, 5, 0, &KMeansOptions::default()).is_err());
        assert!(kmeans(&pts, 1, 0, 0, &KMeansOptions::default()).is_err());
    }
}
