//! MDL1: a trained regional model with its mask and partition, little-endian.
//!
//! ```text
//! magic "MDL1" | version u16 | n_lon u32 | n_lat u32 | lon0 lat0 d_lon d_lat f64
//! mask u8 per cell | k u32 | label u32 per ocean point
//! per cluster: n_sizes u32 | sizes u32.. | dropout f64 | dropout_layer u32
//!              epochs_run u32 | best_epoch u32 | n_params u64 | params f64..
//!              x_min f64[M] | x_max f64[M] | y_min f64 | y_max f64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, OceanMask};
use crate::neuralnet::{ClusterFit, FittedModel, Mlp, RegionalModel, Scaler};
use crate::segmentation::Partition;

const MAGIC: &[u8; 4] = b"MDL1";
const VERSION: u16 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.b.len() {
            return Err(Error::Format(format!(
                "model file truncated: need {} bytes at offset {}, have {}",
                n,
                self.at,
                self.b.len() - self.at
            )));
        }
        let s = &self.b[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn encode_model(model: &RegionalModel, mask: &OceanMask) -> Result<Vec<u8>> {
    if model.partition.n_points() != mask.ocean_count() {
        return Err(Error::arg("model partition does not match the mask"));
    }
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    let g = mask.grid();
    w.u32(g.n_lon);
    w.u32(g.n_lat);
    for v in [g.lon0, g.lat0, g.d_lon, g.d_lat] {
        w.f64(v);
    }
    w.0.extend(mask.cells().iter().map(|&o| u8::from(o)));
    w.u32(model.partition.k());
    for &l in model.partition.labels() {
        w.u32(l);
    }
    for c in &model.clusters {
        let mlp = &c.model.mlp;
        w.u32(mlp.sizes().len());
        for &s in mlp.sizes() {
            w.u32(s);
        }
        w.f64(mlp.dropout_rate());
        w.u32(mlp.dropout_layer());
        w.u32(c.epochs_run);
        w.u32(c.best_epoch);
        w.0.extend_from_slice(&(mlp.params().len() as u64).to_le_bytes());
        for &p in mlp.params() {
            w.f64(p);
        }
        let s = &c.model.scaler;
        for &v in s.x_min.iter().chain(&s.x_max) {
            w.f64(v);
        }
        w.f64(s.y_min);
        w.f64(s.y_max);
    }
    Ok(w.0)
}

pub fn decode_model(bytes: &[u8]) -> Result<(RegionalModel, OceanMask)> {
    let mut r = Reader { b: bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not an MDL1 model file".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let (n_lon, n_lat) = (r.u32()?, r.u32()?);
    let grid = Grid::new(n_lon, n_lat, r.f64()?, r.f64()?, r.f64()?, r.f64()?)?;
    let cells = r.take(grid.n_cells())?.iter().map(|&b| b != 0).collect();
    let mask = OceanMask::new(grid, cells)?;
    let k = r.u32()?;
    let labels = (0..mask.ocean_count()).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let partition = Partition::new(labels, k)?;
    let sizes_of = partition.sizes();
    let mut clusters = Vec::with_capacity(k);
    for n_points in sizes_of {
        let n_sizes = r.u32()?;
        let sizes = (0..n_sizes).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let dropout = r.f64()?;
        let dropout_layer = r.u32()?;
        let epochs_run = r.u32()?;
        let best_epoch = r.u32()?;
        let n_params = r.u64()?;
        let params = r.f64s(n_params)?;
        let mlp = Mlp::from_parts(&sizes, params, dropout, dropout_layer)?;
        let m = sizes[0];
        let x_min = r.f64s(m)?;
        let x_max = r.f64s(m)?;
        let scaler = Scaler { x_min, x_max, y_min: r.f64()?, y_max: r.f64()? };
        clusters.push(ClusterFit {
            hidden: sizes[1..sizes.len() - 1].to_vec(),
            model: FittedModel { mlp, scaler },
            selection: None,
            n_points,
            epochs_run,
            best_epoch,
        });
    }
    if r.at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after model", bytes.len() - r.at)));
    }
    Ok((RegionalModel { partition, clusters }, mask))
}

pub fn save_model(model: &RegionalModel, mask: &OceanMask, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model, mask)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(RegionalModel, OceanMask)> {
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LatWeights;
    use crate::neuralnet::{fit_regional, ArchitecturePolicy, TrainConfig};

    #[test]
    fn round_trip_preserves_predictions() {
        let grid = Grid::global(5, 4).unwrap();
        let mut cells = vec![true; 20];
        cells[3] = false;
        let mask = OceanMask::new(grid, cells).unwrap();
        let n = mask.ocean_count();
        let x: Vec<f64> = (0..n * 3).map(|i| ((i * 7) % 11) as f64).collect();
        let y: Vec<f64> = x.chunks(3).map(|r| r[0] - r[2]).collect();
        let part = Partition::new((0..n).map(|p| p % 2).collect(), 2).unwrap();
        let policy = ArchitecturePolicy { large_hidden: vec![4, 3], small_hidden: vec![2], ..Default::default() };
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let w = LatWeights::from_vec(vec![1.0; n]).unwrap();
        let model = fit_regional(&x, 3, &y, &w, &part, &policy, &cfg, 1).unwrap();
        let bytes = encode_model(&model, &mask).unwrap();
        let (back, back_mask) = decode_model(&bytes).unwrap();
        assert_eq!(back_mask, mask);
        assert_eq!(back.partition, model.partition);
        assert_eq!(back.models(), model.models());
        assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
        assert!(matches!(decode_model(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    }
}
