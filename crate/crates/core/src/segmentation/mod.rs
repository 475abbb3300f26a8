//! Spatial segmentation of ocean points into clusters: spectral clustering of
//! per-point time series, or a fixed rule-based ocean-basin partition.

mod affinity;
mod domain;
mod kmeans;
mod spectral;

use std::path::Path;

pub use affinity::{build_affinity, Affinity, AffinityOptions, SigmaPolicy};
pub use domain::{domain_partition, DomainBoxes, LatLonBox, LowLatitudeCut, DOMAIN_REGION_NAMES};
pub use kmeans::{kmeans, KMeansOptions, KMeansResult};
pub use spectral::{normalized_laplacian, spectral_cluster, spectral_embedding, SpectralEmbedding};

use crate::error::{Error, Result};
use crate::grid::OceanMask;

/// Cluster label of every ocean point; labels are `0..k` and all non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::arg("partition needs at least one cluster"));
        }
        let mut counts = vec![0usize; k];
        for (p, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::arg(format!("point {p} has label {l} >= k = {k}")));
            }
            counts[l] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::arg(format!("cluster {empty} has no points")));
        }
        Ok(Partition { labels, k })
    }

    /// Every point in cluster 0.
    pub fn single(n_points: usize) -> Result<Self> {
        Partition::new(vec![0; n_points], 1)
    }

    /// Renumbers labels `0..` in ascending order of the original ids, dropping unused ones.
    pub fn compacted(labels: &[usize]) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        let mut used: Vec<usize> = labels.to_vec();
        used.sort_unstable();
        used.dedup();
        for (new, old) in used.into_iter().enumerate() {
            map.insert(old, new);
        }
        Partition::new(labels.iter().map(|l| map[l]).collect(), map.len())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_points(&self) -> usize {
        self.labels.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(p, &l)| (l == cluster).then_some(p))
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }

    /// True when both partitions group the points identically, up to relabeling.
    pub fn same_clustering(&self, other: &Partition) -> bool {
        if self.k != other.k || self.labels.len() != other.labels.len() {
            return false;
        }
        let mut forward = vec![usize::MAX; self.k];
        let mut backward = vec![usize::MAX; self.k];
        for (&a, &b) in self.labels.iter().zip(&other.labels) {
            if forward[a] == usize::MAX && backward[b] == usize::MAX {
                forward[a] = b;
                backward[b] = a;
            } else if forward[a] != b || backward[b] != a {
                return false;
            }
        }
        true
    }
}

/// Writes `lat_index,lon_index,label` rows in canonical point order.
pub fn write_partition_csv(path: &Path, mask: &OceanMask, partition: &Partition) -> Result<()> {
    if partition.n_points() != mask.ocean_count() {
        return Err(Error::arg("partition and mask disagree on the number of points"));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lat_index", "lon_index", "label"])?;
    for (p, &label) in partition.labels().iter().enumerate() {
        let (row, col) = mask.point_row_col(p);
        w.write_record([row.to_string(), col.to_string(), label.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_partition_csv(path: &Path, mask: &OceanMask) -> Result<Partition> {
    let grid = mask.grid();
    let mut lookup = vec![usize::MAX; grid.n_cells()];
    for (p, &cell) in mask.points().iter().enumerate() {
        lookup[cell] = p;
    }
    let mut labels = vec![usize::MAX; mask.ocean_count()];
    let mut r = csv::Reader::from_path(path)?;
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<usize> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("bad partition row {:?}", rec)))
        };
        let (row, col, label) = (field(0)?, field(1)?, field(2)?);
        if row >= grid.n_lat || col >= grid.n_lon {
            return Err(Error::Format(format!("partition cell ({row}, {col}) outside grid")));
        }
        let p = lookup[grid.cell(row, col)];
        if p == usize::MAX {
            return Err(Error::Data(format!("partition cell ({row}, {col}) is not ocean")));
        }
        labels[p] = label;
    }
    if labels.contains(&usize::MAX) {
        return Err(Error::Data("partition file does not cover every ocean point".into()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    Partition::new(labels, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn partition_invariants() {
        assert!(Partition::new(vec![0, 1, 1], 2).is_ok());
        assert!(Partition::new(vec![0, 2, 2], 3).is_err());
        assert!(Partition::new(vec![0, 3], 2).is_err());
        let c = Partition::compacted(&[5, 2, 5, 9]).unwrap();
        assert_eq!(c.labels(), &[1, 0, 1, 2]);
        assert_eq!(c.sizes(), vec![1, 2, 1]);
    }

    #[test]
    fn permutation_equivalence() {
        let a = Partition::new(vec![0, 0, 1, 2], 3).unwrap();
        let b = Partition::new(vec![2, 2, 0, 1], 3).unwrap();
        let c = Partition::new(vec![2, 0, 0, 1], 3).unwrap();
        assert!(a.same_clustering(&b));
        assert!(!a.same_clustering(&c));
    }

    #[test]
    fn csv_round_trip() {
        let grid = Grid::global(4, 3).unwrap();
        let mut cells = vec![true; 12];
        cells[2] = false;
        let mask = OceanMask::new(grid, cells).unwrap();
        let labels: Vec<usize> = (0..11).map(|p| p % 3).collect();
        let part = Partition::new(labels, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_partition_csv(&path, &mask, &part).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("lat_index,lon_index,label\n0,0,0\n0,1,1\n0,3,2\n"));
        assert_eq!(read_partition_csv(&path, &mask).unwrap(), part);
    }
}
