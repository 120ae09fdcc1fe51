//! Ingestion, cleaning, normalization and windowing of three-mode inflow.
//!
//! The usual order is: [`load_csv`] → [`filter_weekdays`] →
//! [`impute_missing`] → [`prepare_dataset`] (which windows, splits
//! chronologically and normalizes on the training range).

mod clean;
mod csv_io;
mod normalize;
mod series;
mod synth;
mod window;

pub use clean::{filter_weekdays, impute_missing};
pub use csv_io::{load_csv, read_csv, write_csv, LoadedSeries, CSV_HEADER};
pub use normalize::{fit_normalization, normalize, NormalizationParams};
pub use series::{FlowSeries, Mode, SlotKey, SERVICE_START_MINUTES, SLOTS_PER_DAY, SLOT_MINUTES};
pub use synth::{synthesize, ModeProfile, SynthConfig};
pub use window::{
    batch_tensors, chronological_split, check_window, dataset_with_norm, prepare_dataset, sliding_window, DatasetSplit, Sample,
    SplitRatios,
};

/// Weekday filter followed by imputation, the cleaning stage of the pipeline.
pub fn clean(series: &FlowSeries) -> crate::Result<FlowSeries> {
    impute_missing(&filter_weekdays(series)?)
}
