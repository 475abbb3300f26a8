use nalgebra::{DMatrix, SymmetricEigen};

use super::affinity::{build_affinity, Affinity, AffinityOptions};
use super::kmeans::{kmeans, KMeansOptions};
use super::Partition;
use crate::error::{Error, Result};

/// `I - D^-1/2 A D^-1/2` with self-loops dropped from `A`.
pub fn normalized_laplacian(aff: &Affinity) -> Result<DMatrix<f64>> {
    let n = aff.n();
    let mut inv_sqrt_deg = Vec::with_capacity(n);
    for i in 0..n {
        let deg: f64 = (0..n).filter(|&j| j != i).map(|j| aff.a[(i, j)]).sum();
        if deg <= 0.0 {
            return Err(Error::degenerate(format!("point {i} has no affinity to any other point")));
        }
        inv_sqrt_deg.push(1.0 / deg.sqrt());
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            -aff.a[(i, j)] * inv_sqrt_deg[i] * inv_sqrt_deg[j]
        }
    }))
}

#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    /// Full Laplacian spectrum, ascending.
    pub eigenvalues: Vec<f64>,
    /// Row-major `n x k`, rows scaled to unit length (zero rows stay zero).
    pub rows: Vec<f64>,
    pub k: usize,
}

pub fn spectral_embedding(aff: &Affinity, k: usize) -> Result<SpectralEmbedding> {
    let n = aff.n();
    if k == 0 || k > n {
        return Err(Error::arg(format!("k = {k} must be in 1..={n}")));
    }
    let lap = normalized_laplacian(aff)?;
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut rows = vec![0.0; n * k];
    for (c, &col) in order.iter().take(k).enumerate() {
        for r in 0..n {
            rows[r * k + c] = eig.eigenvectors[(r, col)];
        }
    }
    for row in rows.chunks_mut(k) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(SpectralEmbedding { eigenvalues, rows, k })
}

/// Spectral clustering of the rows of a row-major `n x d` feature matrix.
pub fn spectral_cluster(features: &[f64], d: usize, k: usize, seed: u64, opts: &AffinityOptions) -> Result<Partition> {
    if d == 0 || !features.len().is_multiple_of(d) {
        return Err(Error::arg("feature matrix is not a whole number of rows"));
    }
    let n = features.len() / d;
    if k == 0 || k > n {
        return Err(Error::arg(format!("k = {k} must be in 1..={n}")));
    }
    if k == 1 {
        return Partition::single(n);
    }
    let aff = build_affinity(features, d, opts)?;
    let emb = spectral_embedding(&aff, k)?;
    let km = kmeans(&emb.rows, k, k, seed, &KMeansOptions::default())?;
    Partition::new(km.labels, k)
}
