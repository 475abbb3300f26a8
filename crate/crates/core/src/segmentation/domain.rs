//! Rule-based ocean-basin partition: North Atlantic, North Pacific, the
//! southern band and everything else.

use serde::{Deserialize, Serialize};

use super::Partition;
use crate::error::Result;
use crate::grid::OceanMask;

/// `lat in (lat_min, lat_max]`, `lon in [lon_min, lon_max)` (degrees east, 0..360).
/// The equator itself belongs to neither northern box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLonBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl LatLonBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat > self.lat_min && lat <= self.lat_max && (self.lon_min..self.lon_max).contains(&lon)
    }
}

/// Cells with `lon in [lon_min, lon_max)` and `lat < lat_below`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowLatitudeCut {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_below: f64,
}

impl LowLatitudeCut {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat < self.lat_below && (self.lon_min..self.lon_max).contains(&lon)
    }
}

/// Region boundaries; the defaults approximate the published basin map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainBoxes {
    pub north_atlantic: LatLonBox,
    /// Eastern tropical Pacific carved out of the North Atlantic box; it joins
    /// the North Pacific region when inside that box's latitude range.
    pub north_atlantic_exclude: LowLatitudeCut,
    pub north_pacific: LatLonBox,
    /// Everything at or south of this latitude forms the southern region.
    pub southern_max_lat: f64,
}

impl Default for DomainBoxes {
    fn default() -> Self {
        DomainBoxes {
            north_atlantic: LatLonBox { lat_min: 0.0, lat_max: 70.0, lon_min: 260.0, lon_max: 360.0 },
            north_atlantic_exclude: LowLatitudeCut { lon_min: 260.0, lon_max: 280.0, lat_below: 18.0 },
            north_pacific: LatLonBox { lat_min: 0.0, lat_max: 66.0, lon_min: 100.0, lon_max: 260.0 },
            southern_max_lat: -30.0,
        }
    }
}

pub const DOMAIN_REGION_NAMES: [&str; 4] = ["north_atlantic", "north_pacific", "southern", "remainder"];

impl DomainBoxes {
    /// Region index in priority order (0 North Atlantic, 1 North Pacific, 2 south, 3 rest).
    pub fn region(&self, lat: f64, lon: f64) -> usize {
        let lon = lon.rem_euclid(360.0);
        let np = &self.north_pacific;
        let in_cut = self.north_atlantic_exclude.contains(lat, lon);
        if self.north_atlantic.contains(lat, lon) && !in_cut {
            0
        } else if np.contains(lat, lon) || (in_cut && lat > np.lat_min && lat <= np.lat_max) {
            1
        } else if lat <= self.southern_max_lat {
            2
        } else {
            3
        }
    }
}

/// Regions absent from the mask are dropped and the rest renumbered in
/// priority order, so every label stays non-empty.
pub fn domain_partition(mask: &OceanMask, boxes: &DomainBoxes) -> Result<Partition> {
    let raw: Vec<usize> = (0..mask.ocean_count())
        .map(|p| boxes.region(mask.point_lat(p), mask.point_lon(p)))
        .collect();
    Partition::compacted(&raw)
}
