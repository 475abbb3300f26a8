//! Per-gridpoint monthly time series: deseasonalization and least-squares
//! linear trends.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{area_weights, Field, OceanMask};

/// Inclusive range of calendar years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendWindow {
    pub start_year: i32,
    pub end_year: i32,
}

impl TrendWindow {
    pub fn new(start_year: i32, end_year: i32) -> Result<Self> {
        if end_year < start_year {
            return Err(Error::arg(format!("empty window {start_year}..={end_year}")));
        }
        Ok(TrendWindow { start_year, end_year })
    }

    pub fn years(&self) -> usize {
        (self.end_year - self.start_year + 1) as usize
    }

    pub fn months(&self) -> usize {
        12 * self.years()
    }

    /// The window of equal length starting the year after this one ends.
    pub fn following(&self) -> TrendWindow {
        let len = self.end_year - self.start_year;
        TrendWindow {
            start_year: self.end_year + 1,
            end_year: self.end_year + 1 + len,
        }
    }
}

/// Monthly values for every ocean point of a mask, stored point-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesStack {
    mask: OceanMask,
    start_year: i32,
    /// 1 = January.
    start_month: u8,
    n_months: usize,
    values: Vec<f64>,
}

impl TimeSeriesStack {
    pub fn new(mask: OceanMask, start_year: i32, start_month: u8, n_months: usize, values: Vec<f64>) -> Result<Self> {
        if !(1..=12).contains(&start_month) {
            return Err(Error::arg(format!("start month {start_month} outside 1..=12")));
        }
        if n_months == 0 {
            return Err(Error::arg("stack has no months"));
        }
        if values.len() != mask.ocean_count() * n_months {
            return Err(Error::arg(format!(
                "stack needs {} x {} values, got {}",
                mask.ocean_count(),
                n_months,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at point {} month {}",
                i / n_months,
                i % n_months
            )));
        }
        Ok(TimeSeriesStack { mask, start_year, start_month, n_months, values })
    }

    /// Builds a stack from a closure `f(point, month)`.
    pub fn from_fn(
        mask: OceanMask,
        start_year: i32,
        start_month: u8,
        n_months: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(mask.ocean_count() * n_months);
        for p in 0..mask.ocean_count() {
            for m in 0..n_months {
                values.push(f(p, m));
            }
        }
        TimeSeriesStack::new(mask, start_year, start_month, n_months, values)
    }

    pub fn mask(&self) -> &OceanMask {
        &self.mask
    }

    pub fn start_year(&self) -> i32 {
        self.start_year
    }

    pub fn start_month(&self) -> u8 {
        self.start_month
    }

    pub fn n_months(&self) -> usize {
        self.n_months
    }

    pub fn n_points(&self) -> usize {
        self.mask.ocean_count()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn series(&self, point: usize) -> &[f64] {
        &self.values[point * self.n_months..(point + 1) * self.n_months]
    }

    /// Month-center time in fractional years.
    pub fn month_time(&self, month: usize) -> f64 {
        self.start_year as f64 + (f64::from(self.start_month - 1) + month as f64 + 0.5) / 12.0
    }

    pub fn calendar_month(&self, month: usize) -> usize {
        (usize::from(self.start_month - 1) + month) % 12
    }

    /// Per-point values at one month, canonical point order.
    pub fn month_slice(&self, month: usize) -> Vec<f64> {
        (0..self.n_points()).map(|p| self.values[p * self.n_months + month]).collect()
    }

    /// Month indices `[first, last)` of the stack that cover `window`.
    pub fn window_range(&self, window: TrendWindow) -> Result<std::ops::Range<usize>> {
        let offset = (window.start_year - self.start_year) as i64 * 12 - i64::from(self.start_month - 1);
        let end = offset + window.months() as i64;
        if offset < 0 || end > self.n_months as i64 {
            return Err(Error::arg(format!(
                "window {}..={} is outside the stack's span starting {}-{:02} with {} months",
                window.start_year, window.end_year, self.start_year, self.start_month, self.n_months
            )));
        }
        Ok(offset as usize..end as usize)
    }

    /// The months covering `window`, starting in January of its first year.
    pub fn slice_window(&self, window: TrendWindow) -> Result<TimeSeriesStack> {
        let range = self.window_range(window)?;
        let values = (0..self.n_points())
            .flat_map(|p| self.series(p)[range.clone()].iter().copied())
            .collect();
        Ok(TimeSeriesStack {
            mask: self.mask.clone(),
            start_year: window.start_year,
            start_month: 1,
            n_months: range.len(),
            values,
        })
    }

    /// The same data restricted to the ocean points of `subset`.
    pub fn restrict(&self, subset: &OceanMask) -> Result<TimeSeriesStack> {
        let idx = subset.point_indices_in(&self.mask)?;
        let mut values = Vec::with_capacity(idx.len() * self.n_months);
        for &p in &idx {
            values.extend_from_slice(self.series(p));
        }
        Ok(TimeSeriesStack {
            mask: subset.clone(),
            start_year: self.start_year,
            start_month: self.start_month,
            n_months: self.n_months,
            values,
        })
    }

    /// Subtracts, month by month, the latitude-weighted mean over all ocean points.
    pub fn remove_global_mean(&self) -> Result<TimeSeriesStack> {
        let w = area_weights(&self.mask);
        let w = w.as_slice();
        let den: f64 = w.iter().sum();
        let mut means = vec![0.0; self.n_months];
        for (p, wi) in w.iter().enumerate() {
            for (m, mean) in means.iter_mut().enumerate() {
                *mean += wi * self.values[p * self.n_months + m];
            }
        }
        means.iter_mut().for_each(|m| *m /= den);
        let mut out = self.clone();
        for p in 0..self.n_points() {
            for (m, mean) in means.iter().enumerate() {
                out.values[p * self.n_months + m] -= mean;
            }
        }
        Ok(out)
    }
}

/// Per-point OLS slopes in mm/year.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendMap {
    pub mask: OceanMask,
    pub slope: Vec<f64>,
    pub window: TrendWindow,
}

impl TrendMap {
    pub fn to_field(&self) -> Field {
        Field::from_ocean_values(&self.mask, &self.slope).expect("slope sized from mask")
    }
}

/// Ordinary least-squares slope of `y` against `t`.
pub fn fit_linear_trend(y: &[f64], t: &[f64]) -> Result<f64> {
    if y.len() != t.len() {
        return Err(Error::arg(format!("{} values but {} times", y.len(), t.len())));
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::arg(format!("need at least 2 samples for a trend, got {n}")));
    }
    let t_mean = t.iter().sum::<f64>() / n as f64;
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (ti, yi) in t.iter().zip(y) {
        let dt = ti - t_mean;
        sxy += dt * (yi - y_mean);
        sxx += dt * dt;
    }
    if sxx == 0.0 {
        return Err(Error::arg("time coordinate is constant"));
    }
    Ok(sxy / sxx)
}

pub fn trend_map(stack: &TimeSeriesStack, window: TrendWindow) -> Result<TrendMap> {
    let range = stack.window_range(window)?;
    let t: Vec<f64> = range.clone().map(|m| stack.month_time(m)).collect();
    let slope = (0..stack.n_points())
        .into_par_iter()
        .map(|p| fit_linear_trend(&stack.series(p)[range.clone()], &t))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrendMap {
        mask: stack.mask.clone(),
        slope,
        window,
    })
}

/// Removes the per-calendar-month climatology of every point.
pub fn deseasonalize(stack: &TimeSeriesStack) -> Result<TimeSeriesStack> {
    if !stack.n_months.is_multiple_of(12) {
        return Err(Error::arg(format!(
            "deseasonalizing needs whole years, got {} months",
            stack.n_months
        )));
    }
    let years = (stack.n_months / 12) as f64;
    let mut out = stack.clone();
    for p in 0..stack.n_points() {
        let series = &mut out.values[p * stack.n_months..(p + 1) * stack.n_months];
        // Whole years, so position modulo 12 is a fixed calendar month.
        let mut clim = [0.0; 12];
        for (m, v) in series.iter().enumerate() {
            clim[m % 12] += v;
        }
        clim.iter_mut().for_each(|c| *c /= years);
        for (m, v) in series.iter_mut().enumerate() {
            *v -= clim[m % 12];
        }
    }
    Ok(out)
}
