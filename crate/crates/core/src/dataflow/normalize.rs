use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dataflow::series::{FlowSeries, Mode};
use crate::error::{Error, Result};

/// Per-mode min–max bounds mapping counts onto `[-1, 1]`.
///
/// Values outside the fitted range map outside `[-1, 1]`; that is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl NormalizationParams {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for m in Mode::ALL {
            let (lo, hi) = (min[m.index()], max[m.index()]);
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Normalization(format!(
                    "{m} range [{lo}, {hi}] is empty or constant"
                )));
            }
        }
        Ok(Self { min, max })
    }

    /// `2 (x - min) / (max - min) - 1`.
    pub fn normalize_value(&self, mode: Mode, x: f64) -> f64 {
        let m = mode.index();
        2.0 * (x - self.min[m]) / (self.max[m] - self.min[m]) - 1.0
    }

    pub fn denormalize_value(&self, mode: Mode, x: f64) -> f64 {
        let m = mode.index();
        (x + 1.0) * (self.max[m] - self.min[m]) / 2.0 + self.min[m]
    }

    pub fn denormalize(&self, values: &[[f64; 3]]) -> Vec<[f64; 3]> {
        values
            .iter()
            .map(|v| Mode::ALL.map(|m| self.denormalize_value(m, v[m.index()])))
            .collect()
    }
}

/// Fits per-mode bounds on the present values of `series[range]`.
pub fn fit_normalization(series: &FlowSeries, range: Range<usize>) -> Result<NormalizationParams> {
    if range.start >= range.end || range.end > series.len() {
        return Err(Error::Normalization(format!(
            "fit range {range:?} invalid for series of length {}",
            series.len()
        )));
    }
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for i in range {
        for m in Mode::ALL {
            if !series.is_missing(i, m) {
                let v = series.value(i, m);
                min[m.index()] = min[m.index()].min(v);
                max[m.index()] = max[m.index()].max(v);
            }
        }
    }
    NormalizationParams::new(min, max)
}

/// Maps every present value through `params`; missing flags are kept.
pub fn normalize(series: &FlowSeries, params: &NormalizationParams) -> FlowSeries {
    let values = series
        .values()
        .iter()
        .map(|v| Mode::ALL.map(|m| params.normalize_value(m, v[m.index()])))
        .collect();
    series.with_values(values, series.missing().to_vec())
}
