//! GRD1: a little-endian gridded raster with a fixed 63-byte header.
//!
//! ```text
//! magic "GRD1" | version u16 | n_lon u32 | n_lat u32 | n_time u32
//! lon0 f64 | lat0 f64 | d_lon f64 | d_lat f64 | fill f64
//! start_year i32 | start_month u8 | payload f64 [time][lat][lon]
//! ```
//! Land cells hold `fill` in every time slice.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, OceanMask};
use crate::trend::TimeSeriesStack;

pub const MAGIC: &[u8; 4] = b"GRD1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 63;
pub const DEFAULT_FILL: f64 = -1e20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grd1Header {
    pub version: u16,
    pub n_lon: u32,
    pub n_lat: u32,
    pub n_time: u32,
    pub lon0: f64,
    pub lat0: f64,
    pub d_lon: f64,
    pub d_lat: f64,
    pub fill: f64,
    pub start_year: i32,
    pub start_month: u8,
}

impl Grd1Header {
    pub fn for_grid(grid: &Grid, n_time: usize, start_year: i32, start_month: u8) -> Self {
        Grd1Header {
            version: VERSION,
            n_lon: grid.n_lon as u32,
            n_lat: grid.n_lat as u32,
            n_time: n_time as u32,
            lon0: grid.lon0,
            lat0: grid.lat0,
            d_lon: grid.d_lon,
            d_lat: grid.d_lat,
            fill: DEFAULT_FILL,
            start_year,
            start_month,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n_lon as usize, self.n_lat as usize, self.lon0, self.lat0, self.d_lon, self.d_lat)
    }

    pub fn cells(&self) -> usize {
        self.n_lon as usize * self.n_lat as usize
    }

    pub fn payload_len(&self) -> usize {
        self.cells() * self.n_time as usize
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        for v in [self.n_lon, self.n_lat, self.n_time] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.lon0, self.lat0, self.d_lon, self.d_lat, self.fill] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.start_year.to_le_bytes());
        out.push(self.start_month);
    }

    fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN {
            return Err(Error::Format(format!("GRD1 header needs {HEADER_LEN} bytes, file has {}", b.len())));
        }
        if &b[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}, expected \"GRD1\"", &b[..4])));
        }
        let u16_at = |o: usize| u16::from_le_bytes(b[o..o + 2].try_into().unwrap());
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let version = u16_at(4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported GRD1 version {version}")));
        }
        Ok(Grd1Header {
            version,
            n_lon: u32_at(6),
            n_lat: u32_at(10),
            n_time: u32_at(14),
            lon0: f64_at(18),
            lat0: f64_at(26),
            d_lon: f64_at(34),
            d_lat: f64_at(42),
            fill: f64_at(50),
            start_year: i32::from_le_bytes(b[58..62].try_into().unwrap()),
            start_month: b[62],
        })
    }
}

/// Header plus the payload exactly as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Grd1Raw {
    pub header: Grd1Header,
    pub payload: Vec<f64>,
}

impl Grd1Raw {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.payload.len() != self.header.payload_len() {
            return Err(Error::arg(format!(
                "payload has {} values, header declares {}",
                self.payload.len(),
                self.header.payload_len()
            )));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.payload.len());
        self.header.encode(&mut out);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let header = Grd1Header::decode(b)?;
        let expected = header.payload_len() * 8;
        let actual = b.len() - HEADER_LEN;
        if actual != expected {
            return Err(Error::Format(format!(
                "GRD1 payload is {actual} bytes, expected {expected} ({} x {} x {} x 8)",
                header.n_time, header.n_lat, header.n_lon
            )));
        }
        let payload = b[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Grd1Raw { header, payload })
    }

    /// Ocean cells are those not equal to `fill` in the first slice; every
    /// other slice must agree.
    pub fn infer_mask(&self) -> Result<OceanMask> {
        let grid = self.header.grid()?;
        let cells = self.header.cells();
        let fill = self.header.fill;
        let is_land = |v: f64| v == fill || v.to_bits() == fill.to_bits();
        let mask: Vec<bool> = self.payload[..cells].iter().map(|&v| !is_land(v)).collect();
        for t in 1..self.header.n_time as usize {
            let slice = &self.payload[t * cells..(t + 1) * cells];
            if let Some(c) = (0..cells).find(|&c| mask[c] == is_land(slice[c])) {
                let (r, col) = grid.row_col(c);
                return Err(Error::Data(format!(
                    "land mask changes at time {t}, cell (lat {r}, lon {col})"
                )));
            }
        }
        OceanMask::new(grid, mask)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Grd1Raw::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grd1Data {
    Field(Field),
    Stack(TimeSeriesStack),
}

fn stack_from_raw(raw: &Grd1Raw) -> Result<TimeSeriesStack> {
    let mask = raw.infer_mask()?;
    let cells = raw.header.cells();
    let n_time = raw.header.n_time as usize;
    let mut values = Vec::with_capacity(mask.ocean_count() * n_time);
    for &cell in mask.points() {
        values.extend((0..n_time).map(|t| raw.payload[t * cells + cell]));
    }
    TimeSeriesStack::new(mask, raw.header.start_year, raw.header.start_month, n_time, values)
}

fn field_from_raw(raw: &Grd1Raw) -> Result<Field> {
    let mask = raw.infer_mask()?;
    let values = raw
        .payload
        .iter()
        .zip(mask.cells())
        .map(|(&v, &ocean)| if ocean { v } else { f64::NAN })
        .collect();
    Field::new(mask.grid().to_owned(), values)
}

/// Reads a file as a field when it has one time slice, else as a stack.
pub fn read_grd1(path: &Path) -> Result<Grd1Data> {
    let raw = Grd1Raw::read(path)?;
    if raw.header.n_time == 1 {
        Ok(Grd1Data::Field(field_from_raw(&raw)?))
    } else {
        Ok(Grd1Data::Stack(stack_from_raw(&raw)?))
    }
}

/// Reads any GRD1 file as a stack, including single-slice files.
pub fn read_stack(path: &Path) -> Result<TimeSeriesStack> {
    stack_from_raw(&Grd1Raw::read(path)?)
}

pub fn read_field(path: &Path) -> Result<Field> {
    let raw = Grd1Raw::read(path)?;
    if raw.header.n_time != 1 {
        return Err(Error::Format(format!(
            "{} has {} time slices, expected a single field",
            path.display(),
            raw.header.n_time
        )));
    }
    field_from_raw(&raw)
}

pub fn stack_to_raw(stack: &TimeSeriesStack) -> Grd1Raw {
    let grid = stack.mask().grid();
    let header = Grd1Header::for_grid(grid, stack.n_months(), stack.start_year(), stack.start_month());
    let cells = grid.n_cells();
    let mut payload = vec![header.fill; header.payload_len()];
    for (p, &cell) in stack.mask().points().iter().enumerate() {
        for (t, &v) in stack.series(p).iter().enumerate() {
            payload[t * cells + cell] = v;
        }
    }
    Grd1Raw { header, payload }
}

/// Non-finite cells are written as land.
pub fn field_to_raw(field: &Field, start_year: i32, start_month: u8) -> Grd1Raw {
    let header = Grd1Header::for_grid(&field.grid, 1, start_year, start_month);
    let payload = field.values.iter().map(|&v| if v.is_finite() { v } else { header.fill }).collect();
    Grd1Raw { header, payload }
}

pub fn write_stack(stack: &TimeSeriesStack, path: &Path) -> Result<()> {
    stack_to_raw(stack).write(path)
}

pub fn write_field(field: &Field, path: &Path, start_year: i32, start_month: u8) -> Result<()> {
    field_to_raw(field, start_year, start_month).write(path)
}

pub fn write_grd1(data: &Grd1Data, path: &Path) -> Result<()> {
    match data {
        Grd1Data::Field(f) => write_field(f, path, 0, 1),
        Grd1Data::Stack(s) => write_stack(s, path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(n_lon: usize, n_lat: usize, n_time: usize, seed: u64) -> TimeSeriesStack {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::global(n_lon, n_lat).unwrap();
        let mut cells: Vec<bool> = (0..grid.n_cells()).map(|_| r.random_bool(0.7)).collect();
        cells[0] = true;
        let mask = OceanMask::new(grid, cells).unwrap();
        let values = (0..mask.ocean_count() * n_time).map(|_| r.random_range(-1e3..1e3)).collect();
        TimeSeriesStack::new(mask, 1993, 3, n_time, values).unwrap()
    }

    #[test]
    fn header_is_63_bytes() {
        let raw = stack_to_raw(&random_stack(3, 2, 2, 1));
        let bytes = raw.to_bytes().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 3 * 2 * 2 * 8);
        assert_eq!(&bytes[..4], b"GRD1");
        assert_eq!(bytes[62], 3);
    }

    #[test]
    fn stack_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        for seed in 0..5 {
            let s = random_stack(7, 4, 5, seed);
            let path = dir.path().join("s.grd1");
            write_stack(&s, &path).unwrap();
            let back = read_stack(&path).unwrap();
            assert_eq!(back.mask(), s.mask());
            let a: Vec<u64> = s.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
            assert!(matches!(read_grd1(&path).unwrap(), Grd1Data::Stack(_)));
        }
    }

    #[test]
    fn single_slice_reads_as_field() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::global(4, 3).unwrap();
        let mut v: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        v[5] = f64::NAN;
        let f = Field::new(grid, v).unwrap();
        let path = dir.path().join("f.grd1");
        write_field(&f, &path, 2023, 1).unwrap();
        match read_grd1(&path).unwrap() {
            Grd1Data::Field(back) => {
                assert!(back.values[5].is_nan());
                assert_eq!(back.values[6], 3.0);
            }
            _ => panic!("expected a field"),
        }
    }

    #[test]
    fn truncated_payload_names_sizes() {
        let bytes = stack_to_raw(&random_stack(3, 2, 2, 2)).to_bytes().unwrap();
        let err = Grd1Raw::from_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format(_)));
        assert!(msg.contains("91") && msg.contains("96"), "{msg}");
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = stack_to_raw(&random_stack(3, 2, 2, 3)).to_bytes().unwrap();
        bytes[4] = 9;
        assert!(matches!(Grd1Raw::from_bytes(&bytes), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(Grd1Raw::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn changing_mask_is_a_data_error() {
        let mut raw = stack_to_raw(&random_stack(3, 2, 2, 4));
        let cells = raw.header.cells();
        raw.payload[cells] = raw.header.fill;
        assert!(matches!(raw.infer_mask(), Err(Error::Data(_))));
    }
}
