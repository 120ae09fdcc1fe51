//! Supervised windows over a cleaned series and the chronological split.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dataflow::normalize::{fit_normalization, normalize, NormalizationParams};
use crate::dataflow::series::{FlowSeries, Mode, SlotKey, SLOTS_PER_DAY};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One supervised pair: `L` past slots of all three modes and the next slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Row-major `3 × L`, rows ordered subway, taxi, bus.
    pub x: Vec<f64>,
    pub y: [f64; 3],
    pub target: SlotKey,
    /// Position of the target slot in the source series.
    pub target_index: usize,
}

impl Sample {
    pub fn window(&self) -> usize {
        self.x.len() / 3
    }

    pub fn x_at(&self, mode: Mode, col: usize) -> f64 {
        self.x[mode.index() * self.window() + col]
    }
}

/// Stacks samples into `[B, 3, L]` inputs and `[B, 3]` targets.
pub fn batch_tensors<T: Scalar>(samples: &[&Sample]) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Usage("cannot batch zero samples".into()))?;
    let l = first.window();
    let mut xs = Vec::with_capacity(samples.len() * 3 * l);
    let mut ys = Vec::with_capacity(samples.len() * 3);
    for s in samples {
        if s.window() != l {
            return Err(Error::dim("batch", format!("window {} vs {l}", s.window())));
        }
        xs.extend(s.x.iter().map(|&v| T::of(v)));
        ys.extend(s.y.iter().map(|&v| T::of(v)));
    }
    Ok((
        Tensor::new(&[samples.len(), 3, l], xs)?,
        Tensor::new(&[samples.len(), 3], ys)?,
    ))
}

/// Validates a window length against the 36-slot day.
pub fn check_window(window: usize) -> Result<()> {
    if window == 0 || window >= SLOTS_PER_DAY {
        return Err(Error::Config(format!(
            "window length {window} outside 1..{SLOTS_PER_DAY}"
        )));
    }
    Ok(())
}

/// Series positions of every valid target slot for window length `window`.
///
/// A target qualifies when the `window` preceding slots are the
/// consecutive slots of the same day; windows never cross midnight.
fn target_positions(series: &FlowSeries, window: usize) -> Vec<usize> {
    let slots = series.slots();
    let mut out = Vec::new();
    for t in window..slots.len() {
        let target = slots[t];
        let start = slots[t - window];
        if start.date == target.date && target.slot() >= window && target.slot() - start.slot() == window {
            out.push(t);
        }
    }
    out
}

/// Cuts a gap-free series into supervised samples.
///
/// Each complete day yields `36 - window` samples.
pub fn sliding_window(series: &FlowSeries, window: usize) -> Result<Vec<Sample>> {
    check_window(window)?;
    if series.has_missing() {
        return Err(Error::Data("series has missing values; impute before windowing".into()));
    }
    let values = series.values();
    Ok(target_positions(series, window)
        .into_iter()
        .map(|t| {
            let mut x = Vec::with_capacity(3 * window);
            for m in Mode::ALL {
                x.extend((t - window..t).map(|i| values[i][m.index()]));
            }
            Sample {
                x,
                y: values[t],
                target: series.slots()[t],
                target_index: t,
            }
        })
        .collect())
}

/// Train / validation / test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.validation, self.test];
        if r.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("split ratios must be positive, got {r:?}")));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {r:?}")));
        }
        Ok(())
    }

    /// Validation and test sizes are floored; the remainder goes to train.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        // The small offset keeps e.g. 0.29 * 100 from flooring to 28.
        let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let val = floor(self.validation);
        let test = floor(self.test);
        let train = n.saturating_sub(val + test);
        if train == 0 || val == 0 || test == 0 {
            return Err(Error::Config(format!(
                "split of {n} samples leaves an empty part ({train}/{val}/{test})"
            )));
        }
        Ok((train, val, test))
    }
}

/// Splits by target time without shuffling.
pub fn chronological_split(
    mut samples: Vec<Sample>,
    ratios: SplitRatios,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    samples.sort_by_key(|s| s.target);
    let (train, val, _) = ratios.counts(samples.len())?;
    let test = samples.split_off(train + val);
    let validation = samples.split_off(train);
    Ok((samples, validation, test))
}

/// Model-ready data: normalized samples split chronologically.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub norm: NormalizationParams,
    pub window: usize,
}

impl DatasetSplit {
    /// Builds a split directly from samples (no normalization fitting).
    pub fn from_parts(
        train: Vec<Sample>,
        validation: Vec<Sample>,
        test: Vec<Sample>,
        norm: NormalizationParams,
    ) -> Result<Self> {
        let window = train
            .first()
            .map(Sample::window)
            .ok_or_else(|| Error::Config("training split is empty".into()))?;
        if train.iter().chain(&validation).chain(&test).any(|s| s.window() != window) {
            return Err(Error::Config("samples disagree on window length".into()));
        }
        Ok(Self {
            train,
            validation,
            test,
            norm,
            window,
        })
    }
}

/// Windows, splits and normalizes a cleaned series.
///
/// Normalization bounds come from the slots feeding the training samples
/// only, so validation and test values never influence them.
pub fn prepare_dataset(series: &FlowSeries, window: usize, ratios: SplitRatios) -> Result<DatasetSplit> {
    let raw = sliding_window(series, window)?;
    let (n_train, _, _) = ratios.counts(raw.len())?;
    let last_train_target = raw[..n_train]
        .iter()
        .map(|s| s.target_index)
        .max()
        .expect("train part is non-empty");
    let norm = fit_normalization(series, 0..last_train_target + 1)?;
    let normalized = normalize(series, &norm);
    let samples = sliding_window(&normalized, window)?;
    let (train, validation, test) = chronological_split(samples, ratios)?;
    Ok(DatasetSplit {
        train,
        validation,
        test,
        norm,
        window,
    })
}

/// Windows and splits `series` under bounds fitted earlier, e.g. the ones
/// saved in a checkpoint. With the bounds `prepare_dataset` would fit, the
/// result is identical to it.
pub fn dataset_with_norm(
    series: &FlowSeries,
    window: usize,
    ratios: SplitRatios,
    norm: NormalizationParams,
) -> Result<DatasetSplit> {
    let samples = sliding_window(&normalize(series, &norm), window)?;
    let (train, validation, test) = chronological_split(samples, ratios)?;
    Ok(DatasetSplit {
        train,
        validation,
        test,
        norm,
        window,
    })
}
