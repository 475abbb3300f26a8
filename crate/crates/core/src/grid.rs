//! Regular latitude/longitude lattice, land-sea mask and the latitude-weighted
//! reductions every other module builds on.
//!
//! Ocean points are always addressed in one canonical order: row-major with
//! latitude outer (south to north) and longitude inner (eastward from `lon0`).
//! Every per-point vector in the crate uses that order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n_lon: usize,
    pub n_lat: usize,
    /// Center of the first column, degrees east.
    pub lon0: f64,
    /// Center of the first (southernmost) row, degrees north.
    pub lat0: f64,
    pub d_lon: f64,
    pub d_lat: f64,
}

impl Grid {
    pub fn new(n_lon: usize, n_lat: usize, lon0: f64, lat0: f64, d_lon: f64, d_lat: f64) -> Result<Self> {
        if n_lon == 0 || n_lat == 0 {
            return Err(Error::arg(format!("grid must be non-empty, got {n_lon}x{n_lat}")));
        }
        if !(d_lon > 0.0 && d_lat > 0.0) || !d_lon.is_finite() || !d_lat.is_finite() {
            return Err(Error::arg(format!("grid steps must be positive, got d_lon={d_lon} d_lat={d_lat}")));
        }
        if !lon0.is_finite() || !lat0.is_finite() {
            return Err(Error::arg("grid origin must be finite"));
        }
        let grid = Grid { n_lon, n_lat, lon0, lat0, d_lon, d_lat };
        let (south, north) = (grid.lat(0), grid.lat(n_lat - 1));
        if south <= -90.0 || north >= 90.0 {
            return Err(Error::arg(format!(
                "cell-center latitudes must lie strictly inside (-90, 90), got [{south}, {north}]"
            )));
        }
        Ok(grid)
    }

    /// Global grid with `360/n_lon` by `180/n_lat` degree cells, centers offset by half a cell.
    pub fn global(n_lon: usize, n_lat: usize) -> Result<Self> {
        if n_lon == 0 || n_lat == 0 {
            return Err(Error::arg(format!("grid must be non-empty, got {n_lon}x{n_lat}")));
        }
        let d_lon = 360.0 / n_lon as f64;
        let d_lat = 180.0 / n_lat as f64;
        Grid::new(n_lon, n_lat, 0.5 * d_lon, -90.0 + 0.5 * d_lat, d_lon, d_lat)
    }

    pub fn n_cells(&self) -> usize {
        self.n_lon * self.n_lat
    }

    pub fn lat(&self, row: usize) -> f64 {
        self.lat0 + row as f64 * self.d_lat
    }

    pub fn lon(&self, col: usize) -> f64 {
        self.lon0 + col as f64 * self.d_lon
    }

    pub fn cell(&self, row: usize, col: usize) -> usize {
        row * self.n_lon + col
    }

    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        (cell / self.n_lon, cell % self.n_lon)
    }
}

/// Land-sea mask; `true` marks an ocean (valid) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct OceanMask {
    grid: Grid,
    mask: Vec<bool>,
    points: Vec<usize>,
}

impl OceanMask {
    pub fn new(grid: Grid, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.n_cells() {
            return Err(Error::arg(format!(
                "mask has {} cells, grid has {}",
                mask.len(),
                grid.n_cells()
            )));
        }
        let points = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &ocean)| ocean.then_some(i))
            .collect();
        Ok(OceanMask { grid, mask, points })
    }

    pub fn all_ocean(grid: Grid) -> Self {
        OceanMask::new(grid, vec![true; grid.n_cells()]).expect("mask sized from grid")
    }

    /// Ocean wherever the field is finite.
    pub fn from_field(field: &Field) -> Self {
        let mask = field.values.iter().map(|v| v.is_finite()).collect();
        OceanMask::new(field.grid, mask).expect("mask sized from field")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cells(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_ocean(&self, cell: usize) -> bool {
        self.mask[cell]
    }

    pub fn ocean_count(&self) -> usize {
        self.points.len()
    }

    /// Cell index of every ocean point, canonical order.
    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn point_row_col(&self, point: usize) -> (usize, usize) {
        self.grid.row_col(self.points[point])
    }

    pub fn point_lat(&self, point: usize) -> f64 {
        self.grid.lat(self.point_row_col(point).0)
    }

    pub fn point_lon(&self, point: usize) -> f64 {
        self.grid.lon(self.point_row_col(point).1)
    }

    /// Cells that are ocean in both masks.
    pub fn intersect(&self, other: &OceanMask) -> Result<OceanMask> {
        if self.grid != other.grid {
            return Err(Error::arg("cannot intersect masks on different grids"));
        }
        let mask = self.mask.iter().zip(&other.mask).map(|(a, b)| *a && *b).collect();
        OceanMask::new(self.grid, mask)
    }

    /// For each point of `self`, its index among the points of `superset`.
    pub fn point_indices_in(&self, superset: &OceanMask) -> Result<Vec<usize>> {
        if self.grid != superset.grid {
            return Err(Error::arg("masks are on different grids"));
        }
        let mut lookup = vec![usize::MAX; self.grid.n_cells()];
        for (i, &cell) in superset.points.iter().enumerate() {
            lookup[cell] = i;
        }
        self.points
            .iter()
            .map(|&cell| match lookup[cell] {
                usize::MAX => Err(Error::arg(format!("cell {cell} is not ocean in the superset mask"))),
                i => Ok(i),
            })
            .collect()
    }
}

/// One scalar layer over the whole grid; non-ocean cells hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::arg(format!(
                "field has {} values, grid has {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        Ok(Field { grid, values })
    }

    /// Scatters per-point values into a full field, NaN elsewhere.
    pub fn from_ocean_values(mask: &OceanMask, values: &[f64]) -> Result<Self> {
        if values.len() != mask.ocean_count() {
            return Err(Error::arg(format!(
                "got {} point values for {} ocean points",
                values.len(),
                mask.ocean_count()
            )));
        }
        let mut out = vec![f64::NAN; mask.grid.n_cells()];
        for (&cell, &v) in mask.points.iter().zip(values) {
            out[cell] = v;
        }
        Ok(Field { grid: mask.grid, values: out })
    }

    /// Gathers the values at the mask's ocean points.
    pub fn ocean_values(&self, mask: &OceanMask) -> Result<Vec<f64>> {
        if self.grid != mask.grid {
            return Err(Error::arg("field and mask are on different grids"));
        }
        mask.points
            .iter()
            .map(|&cell| {
                let v = self.values[cell];
                if v.is_finite() {
                    Ok(v)
                } else {
                    let (r, c) = self.grid.row_col(cell);
                    Err(Error::Data(format!("non-finite value at ocean cell (lat {r}, lon {c})")))
                }
            })
            .collect()
    }
}

/// Per-ocean-point area weights `cos(lat)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatWeights(Vec<f64>);

impl LatWeights {
    pub fn from_vec(w: Vec<f64>) -> Result<Self> {
        if let Some(bad) = w.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::arg(format!("weights must be positive and finite, found {bad}")));
        }
        Ok(LatWeights(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Weights of the given points, in the given order.
    pub fn select(&self, points: &[usize]) -> LatWeights {
        LatWeights(points.iter().map(|&i| self.0[i]).collect())
    }
}

pub fn area_weights(mask: &OceanMask) -> LatWeights {
    LatWeights(
        (0..mask.ocean_count())
            .map(|p| mask.point_lat(p).to_radians().cos())
            .collect(),
    )
}

pub fn weighted_mean(x: &[f64], w: &LatWeights) -> Result<f64> {
    if x.len() != w.len() {
        return Err(Error::arg(format!("{} values but {} weights", x.len(), w.len())));
    }
    if x.is_empty() {
        return Err(Error::arg("weighted mean of an empty set"));
    }
    let (num, den) = x
        .iter()
        .zip(w.as_slice())
        .fold((0.0, 0.0), |(n, d), (xi, wi)| (n + wi * xi, d + wi));
    Ok(num / den)
}

/// Subtracts the latitude-weighted mean from per-point values in place.
pub fn demean_in_place(x: &mut [f64], w: &LatWeights) -> Result<f64> {
    let mu = weighted_mean(x, w)?;
    x.iter_mut().for_each(|v| *v -= mu);
    Ok(mu)
}

pub fn remove_global_mean(field: &Field, mask: &OceanMask) -> Result<Field> {
    let mut ocean = field.ocean_values(mask)?;
    demean_in_place(&mut ocean, &area_weights(mask))?;
    let mut out = field.clone();
    for (&cell, v) in mask.points().iter().zip(ocean) {
        out.values[cell] = v;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Output cell is ocean iff at least half of its block is ocean.
    #[default]
    Majority,
}

/// Block-averages `factor x factor` blocks, ignoring non-finite input cells.
pub fn coarsen(field: &Field, factor: usize, policy: MaskPolicy) -> Result<Field> {
    let g = field.grid;
    if factor == 0 || !g.n_lon.is_multiple_of(factor) || !g.n_lat.is_multiple_of(factor) {
        return Err(Error::arg(format!(
            "coarsening factor {factor} must divide grid {}x{}",
            g.n_lon, g.n_lat
        )));
    }
    if factor == 1 {
        return Ok(field.clone());
    }
    let half_cell = (factor as f64 - 1.0) / 2.0;
    let out_grid = Grid::new(
        g.n_lon / factor,
        g.n_lat / factor,
        g.lon0 + half_cell * g.d_lon,
        g.lat0 + half_cell * g.d_lat,
        g.d_lon * factor as f64,
        g.d_lat * factor as f64,
    )?;
    let block = factor * factor;
    let mut out = Vec::with_capacity(out_grid.n_cells());
    for orow in 0..out_grid.n_lat {
        for ocol in 0..out_grid.n_lon {
            let mut sum = 0.0;
            let mut valid = 0usize;
            for r in orow * factor..(orow + 1) * factor {
                for c in ocol * factor..(ocol + 1) * factor {
                    let v = field.values[g.cell(r, c)];
                    if v.is_finite() {
                        sum += v;
                        valid += 1;
                    }
                }
            }
            let ocean = match policy {
                MaskPolicy::Majority => valid > 0 && 2 * valid >= block,
            };
            out.push(if ocean { sum / valid as f64 } else { f64::NAN });
        }
    }
    Field::new(out_grid, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full_mask(n_lon: usize, n_lat: usize) -> OceanMask {
        OceanMask::all_ocean(Grid::global(n_lon, n_lat).unwrap())
    }

    #[test]
    fn grid_rejects_poles_and_empty() {
        assert!(Grid::new(0, 4, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(Grid::new(4, 4, 0.0, -90.0, 1.0, 1.0).is_err());
        assert!(Grid::new(4, 2, 0.0, 80.0, 1.0, 10.0).is_err());
        assert!(Grid::new(4, 4, 0.0, 0.0, -1.0, 1.0).is_err());
        let g = Grid::global(180, 90).unwrap();
        assert_eq!(g.lat(0), -89.0);
        assert_eq!(g.lat(89), 89.0);
    }

    #[test]
    fn weights_at_known_latitudes() {
        let grid = Grid::new(1, 2, 0.0, 0.0, 1.0, 60.0).unwrap();
        let w = area_weights(&OceanMask::all_ocean(grid));
        assert_eq!(w.as_slice()[0], 1.0);
        assert!((w.as_slice()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weights_match_cos_table_on_two_degree_grid() {
        let mask = full_mask(180, 90);
        let w = area_weights(&mask);
        assert_eq!(w.len(), 180 * 90);
        for row in 0..90 {
            let expected = ((-89.0 + 2.0 * row as f64) * std::f64::consts::PI / 180.0).cos();
            for col in 0..180 {
                let got = w.as_slice()[row * 180 + col];
                assert!((got - expected).abs() < 1e-15);
                assert!(got > 0.0 && got <= 1.0);
            }
        }
    }

    #[test]
    fn two_point_weighted_mean() {
        let grid = Grid::new(1, 2, 0.0, 0.0, 1.0, 60.0).unwrap();
        let w = area_weights(&OceanMask::all_ocean(grid));
        let m = weighted_mean(&[1.0, -1.0], &w).unwrap();
        assert!((m - 1.0 / 3.0).abs() < 1e-15);
        assert!(weighted_mean(&[1.0], &w).is_err());
    }

    #[test]
    fn weighted_mean_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..1000).map(|_| rng.random_range(0.01..1.0)).collect();
        let x: Vec<f64> = (0..1000).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..1000 {
            num += w[i] * x[i];
            den += w[i];
        }
        let got = weighted_mean(&x, &LatWeights::from_vec(w).unwrap()).unwrap();
        assert!(((got - num / den) / (num / den)).abs() < 1e-12);
    }

    #[test]
    fn remove_global_mean_constant_and_land() {
        let grid = Grid::global(8, 4).unwrap();
        let mut cells = vec![true; 32];
        cells[5] = false;
        let mask = OceanMask::new(grid, cells).unwrap();
        let mut values = vec![7.5; 32];
        values[5] = f64::NAN;
        let out = remove_global_mean(&Field::new(grid, values).unwrap(), &mask).unwrap();
        assert!(out.values[5].is_nan());
        for &cell in mask.points() {
            assert!(out.values[cell].abs() < 1e-12);
        }
    }

    #[test]
    fn coarsen_identity_and_block_mean() {
        let grid = Grid::global(4, 2).unwrap();
        let f = Field::new(grid, (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(coarsen(&f, 1, MaskPolicy::Majority).unwrap(), f);
        let small = Field::new(Grid::global(2, 2).unwrap(), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = coarsen(&small, 2, MaskPolicy::Majority).unwrap();
        assert_eq!(c.values, vec![2.5]);
        assert!(coarsen(&f, 3, MaskPolicy::Majority).is_err());
    }

    #[test]
    fn coarsen_majority_rule() {
        let grid = Grid::global(2, 2).unwrap();
        let half = Field::new(grid, vec![1.0, f64::NAN, 3.0, f64::NAN]).unwrap();
        assert_eq!(coarsen(&half, 2, MaskPolicy::Majority).unwrap().values, vec![2.0]);
        let minority = Field::new(grid, vec![1.0, f64::NAN, f64::NAN, f64::NAN]).unwrap();
        assert!(coarsen(&minority, 2, MaskPolicy::Majority).unwrap().values[0].is_nan());
    }

    #[test]
    fn coarsen_matches_nested_loop_oracle() {
        let grid = Grid::global(360, 180).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..grid.n_cells())
            .map(|_| if rng.random_bool(0.2) { f64::NAN } else { rng.random_range(-5.0..5.0) })
            .collect();
        let f = Field::new(grid, values.clone()).unwrap();
        let c = coarsen(&f, 4, MaskPolicy::Majority).unwrap();
        assert_eq!((c.grid.n_lon, c.grid.n_lat), (90, 45));
        assert!((c.grid.lat0 - (-88.0)).abs() < 1e-12);
        for orow in 0..45 {
            for ocol in 0..90 {
                let mut vals = Vec::new();
                for dr in 0..4 {
                    for dc in 0..4 {
                        let v = values[(orow * 4 + dr) * 360 + ocol * 4 + dc];
                        if !v.is_nan() {
                            vals.push(v);
                        }
                    }
                }
                let got = c.values[orow * 90 + ocol];
                if vals.len() >= 8 {
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    assert!((got - mean).abs() < 1e-12);
                } else {
                    assert!(got.is_nan());
                }
            }
        }
    }

    #[test]
    fn point_indices_in_superset() {
        let grid = Grid::global(4, 2).unwrap();
        let big = OceanMask::new(grid, vec![true, true, false, true, true, true, true, true]).unwrap();
        let small = OceanMask::new(grid, vec![false, true, false, true, false, false, true, false]).unwrap();
        assert_eq!(small.point_indices_in(&big).unwrap(), vec![1, 2, 5]);
        assert!(big.point_indices_in(&small).is_err());
    }

    proptest! {
        #[test]
        fn demeaned_field_has_zero_weighted_mean(seed in any::<u64>(), n_lon in 1usize..20, n_lat in 1usize..12) {
            let mask = full_mask(n_lon, n_lat);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..mask.ocean_count()).map(|_| rng.random_range(-100.0..100.0)).collect();
            let f = Field::from_ocean_values(&mask, &values).unwrap();
            let out = remove_global_mean(&f, &mask).unwrap();
            let w = area_weights(&mask);
            prop_assert!(weighted_mean(&out.ocean_values(&mask).unwrap(), &w).unwrap().abs() < 1e-10);
        }

        #[test]
        fn weights_permute_with_points_on_a_row(seed in any::<u64>()) {
            let mask = full_mask(12, 6);
            let w = area_weights(&mask);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let row = rng.random_range(0..6);
            let a = rng.random_range(0..12);
            let b = rng.random_range(0..12);
            prop_assert_eq!(w.as_slice()[row * 12 + a], w.as_slice()[row * 12 + b]);
        }

        #[test]
        fn coarsen_commutes_with_constant_shift(seed in any::<u64>(), c in -50.0f64..50.0) {
            let grid = Grid::global(8, 4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
            let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
            let a = coarsen(&Field::new(grid, values).unwrap(), 2, MaskPolicy::Majority).unwrap();
            let b = coarsen(&Field::new(grid, shifted).unwrap(), 2, MaskPolicy::Majority).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x + c - y).abs() < 1e-12);
            }
        }
    }
}
