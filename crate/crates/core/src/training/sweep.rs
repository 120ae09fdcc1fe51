use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataflow::{prepare_dataset, FlowSeries, SplitRatios};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::training::fit::{evaluate, train, TrainConfig};

/// A swept hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Batch,
    D,
    Heads,
    Window,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Batch => "batch",
            SweepAxis::D => "d",
            SweepAxis::Heads => "heads",
            SweepAxis::Window => "window",
        })
    }
}

/// One point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SweepPoint {
    pub d: usize,
    pub heads: usize,
    pub window: usize,
    pub batch: usize,
}

impl SweepPoint {
    fn with(self, axis: SweepAxis, value: usize) -> Self {
        let mut p = self;
        match axis {
            SweepAxis::Batch => p.batch = value,
            SweepAxis::D => p.d = value,
            SweepAxis::Heads => p.heads = value,
            SweepAxis::Window => p.window = value,
        }
        p
    }
}

/// Ranking used to pick the winner of each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Validation RMSE, ties broken by MAE.
    #[default]
    RmseThenMae,
    /// Validation MAE, ties broken by RMSE.
    MaeThenRmse,
}

/// Grids and the order in which they are searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub d: Vec<usize>,
    pub heads: Vec<usize>,
    pub window: Vec<usize>,
    pub batch: Vec<usize>,
    pub order: Vec<SweepAxis>,
    /// Repeats per point with different seeds; metrics are averaged.
    pub trials_per_point: usize,
    pub selection: Selection,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            d: vec![4, 8, 12, 16, 20, 24, 28, 32],
            heads: (2..=10).collect(),
            window: (5..=15).collect(),
            batch: vec![2, 4, 8, 16, 32, 64, 128],
            order: vec![SweepAxis::Batch, SweepAxis::D, SweepAxis::Heads, SweepAxis::Window],
            trials_per_point: 1,
            selection: Selection::RmseThenMae,
        }
    }
}

impl SweepSpec {
    pub fn grid(&self, axis: SweepAxis) -> &[usize] {
        match axis {
            SweepAxis::Batch => &self.batch,
            SweepAxis::D => &self.d,
            SweepAxis::Heads => &self.heads,
            SweepAxis::Window => &self.window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for axis in [SweepAxis::Batch, SweepAxis::D, SweepAxis::Heads, SweepAxis::Window] {
            let grid = self.grid(axis);
            if grid.is_empty() || grid.contains(&0) {
                return Err(Error::Config(format!("{axis} grid must be non-empty and positive")));
            }
        }
        let mut seen = self.order.clone();
        seen.sort_by_key(|a| *a as u8);
        seen.dedup();
        if seen.len() != self.order.len() {
            return Err(Error::Config("sweep order repeats an axis".into()));
        }
        if self.trials_per_point == 0 {
            return Err(Error::Config("trials_per_point must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of evaluated points: the sum of the searched grid sizes.
    pub fn num_trials(&self) -> usize {
        self.order.iter().map(|&a| self.grid(a).len()).sum()
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrialStatus {
    Ok,
    /// Training diverged or failed; the point ranks last.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub point: SweepPoint,
    pub val_rmse: f64,
    pub val_mae: f64,
    pub status: TrialStatus,
}

impl TrialRecord {
    fn key(&self, selection: Selection) -> (f64, f64) {
        match (&self.status, selection) {
            (TrialStatus::Failed(_), _) => (f64::INFINITY, f64::INFINITY),
            (TrialStatus::Ok, Selection::RmseThenMae) => (self.val_rmse, self.val_mae),
            (TrialStatus::Ok, Selection::MaeThenRmse) => (self.val_mae, self.val_rmse),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub best: SweepPoint,
    pub log: Vec<TrialRecord>,
}

impl SweepOutcome {
    /// `trial,d,heads,L,batch,val_rmse,val_mae,status`
    pub fn log_csv(&self) -> String {
        let mut out = String::from("trial,d,heads,L,batch,val_rmse,val_mae,status\n");
        for r in &self.log {
            let status = match &r.status {
                TrialStatus::Ok => "ok".to_string(),
                TrialStatus::Failed(why) => format!("failed: {}", why.replace([',', '\n'], ";")),
            };
            let p = r.point;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.trial, p.d, p.heads, p.window, p.batch, r.val_rmse, r.val_mae, status
            ));
        }
        out
    }
}

/// A trial to run: its global index (for seeding) and point.
pub type Trial = (usize, SweepPoint);

/// Coordinate descent. Starting from `base`, each axis in `spec.order` is
/// searched over its full grid with the other axes held at their current
/// best, and the winner (by `spec.selection`, first in grid order on exact
/// ties) is kept before moving on.
///
/// `evaluate` receives all trials of one axis at once, so it may run them
/// in parallel, and returns `(val_rmse, val_mae)` per trial in order. An
/// `Err` or a non-finite result marks the trial failed.
pub fn sweep<F>(spec: &SweepSpec, base: SweepPoint, mut evaluate: F) -> Result<SweepOutcome>
where
    F: FnMut(&[Trial]) -> Vec<Result<(f64, f64)>>,
{
    spec.validate()?;
    let mut current = base;
    let mut log = Vec::with_capacity(spec.num_trials());
    for &axis in &spec.order {
        let trials: Vec<Trial> = spec
            .grid(axis)
            .iter()
            .enumerate()
            .map(|(i, &v)| (log.len() + i, current.with(axis, v)))
            .collect();
        let results = evaluate(&trials);
        if results.len() != trials.len() {
            return Err(Error::Usage(format!(
                "sweep evaluator returned {} results for {} trials",
                results.len(),
                trials.len()
            )));
        }
        let start = log.len();
        for ((trial, point), result) in trials.into_iter().zip(results) {
            let record = match result {
                Ok((rmse, mae)) if rmse.is_finite() && mae.is_finite() => TrialRecord {
                    trial,
                    point,
                    val_rmse: rmse,
                    val_mae: mae,
                    status: TrialStatus::Ok,
                },
                Ok((rmse, mae)) => TrialRecord {
                    trial,
                    point,
                    val_rmse: rmse,
                    val_mae: mae,
                    status: TrialStatus::Failed("non-finite metrics".into()),
                },
                Err(e) => TrialRecord {
                    trial,
                    point,
                    val_rmse: f64::INFINITY,
                    val_mae: f64::INFINITY,
                    status: TrialStatus::Failed(e.to_string()),
                },
            };
            log.push(record);
        }
        let winner = log[start..]
            .iter()
            .reduce(|a, b| if b.key(spec.selection) < a.key(spec.selection) { b } else { a })
            .expect("grid is non-empty");
        if winner.key(spec.selection).0.is_finite() {
            current = winner.point;
        }
        log::info!("sweep {axis}: best {current:?}");
    }
    Ok(SweepOutcome { best: current, log })
}

/// [`sweep`] with a one-trial-at-a-time evaluator.
pub fn sweep_sequential<F>(spec: &SweepSpec, base: SweepPoint, mut evaluate: F) -> Result<SweepOutcome>
where
    F: FnMut(usize, &SweepPoint) -> Result<(f64, f64)>,
{
    sweep(spec, base, |trials| trials.iter().map(|(i, p)| evaluate(*i, p)).collect())
}

/// Trains the residual model at `point` on `series` (already cleaned) and
/// returns its validation `(rmse, mae)` on counts, averaged over
/// `repeats` runs. Repeat `r` uses seed `seed + r·2³²`, so sweeps seeding
/// trials `base + trial_index` never reuse a seed.
pub fn train_point(
    series: &FlowSeries,
    ratios: SplitRatios,
    point: &SweepPoint,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    repeats: usize,
) -> Result<(f64, f64)> {
    let split = prepare_dataset(series, point.window, ratios)?;
    let (mut rmse, mut mae) = (0.0, 0.0);
    for r in 0..repeats.max(1) as u64 {
        let seed = seed.wrapping_add(r << 32);
        let cfg = ModelConfig {
            d_model: point.d,
            heads: point.heads,
            window: point.window,
            seed,
            ..model.clone()
        };
        let tc = TrainConfig {
            batch_size: point.batch,
            seed,
            ..train_cfg.clone()
        };
        let (trained, _) = train(Model::<f64>::new(cfg)?, &split, &tc)?;
        let report = evaluate(&trained, &split.validation, &split.norm)?;
        rmse += report.all().rmse;
        mae += report.all().mae;
    }
    let n = repeats.max(1) as f64;
    Ok((rmse / n, mae / n))
}
