//! One function per subcommand. Each returns `Err(Failure)` naming the
//! pipeline stage that failed; `main` maps it to an exit code.

use std::fmt;
use std::path::{Path, PathBuf};

use flowcast::attention::{scores_to_csv, scores_to_json};
use flowcast::dataflow::{
    batch_tensors, clean, dataset_with_norm, load_csv, prepare_dataset, synthesize, write_csv, DatasetSplit,
    FlowSeries, SynthConfig,
};
use flowcast::models::{load_checkpoint, write_checkpoint, Architecture, BaselineKind, Variant};
use flowcast::training::{evaluate, sweep_sequential, train_point, train_with, MetricsReport, SweepPoint};
use flowcast::{Error, Model};

use crate::config::{resolve, Overrides, RunConfig};
use crate::manifest::Recorder;
use crate::report::{mean_report, table_csv, table_text, ModelRow};

/// An error tagged with the stage it came from.
#[derive(Debug)]
pub struct Failure {
    pub stage: &'static str,
    pub error: Error,
}

impl Failure {
    /// 2 for usage and configuration problems, 1 for everything that
    /// went wrong while running.
    pub fn exit_code(&self) -> u8 {
        match self.error {
            Error::Config(_) | Error::Usage(_) | Error::Dimension { .. } => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.error)
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

trait Stage<T> {
    fn stage(self, stage: &'static str) -> CmdResult<T>;
}

impl<T> Stage<T> for flowcast::Result<T> {
    fn stage(self, stage: &'static str) -> CmdResult<T> {
        self.map_err(|error| Failure { stage, error })
    }
}

fn usage(stage: &'static str, msg: String) -> Failure {
    Failure {
        stage,
        error: Error::Usage(msg),
    }
}

/// Settings shared by commands that take a data file and a run config.
pub struct RunArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub percent: bool,
}

impl RunArgs {
    fn resolve(&self) -> CmdResult<RunConfig> {
        resolve(self.config.as_deref(), &self.overrides, self.seed).stage("config")
    }
}

fn create_dir(path: &Path) -> CmdResult {
    std::fs::create_dir_all(path).map_err(|e| Failure {
        stage: "output",
        error: Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })
}

fn sibling_manifest(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Load, weekday filter and imputation.
fn load_clean(path: &Path, rec: &mut Recorder) -> CmdResult<FlowSeries> {
    rec.input(path).stage("load")?;
    let loaded = load_csv(path).stage("load")?;
    if loaded.dropped_outside_service > 0 {
        log::warn!("{} rows outside service hours dropped", loaded.dropped_outside_service);
    }
    rec.stage("load");
    let series = clean(&loaded.series).stage("clean")?;
    rec.stage("clean");
    Ok(series)
}

pub fn synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> CmdResult {
    let seed = seed.unwrap_or(0);
    let mut rec = Recorder::new("synth", seed);
    let cfg = match config {
        Some(p) => {
            rec.input(p).stage("config")?;
            SynthConfig::load(p).map_err(|e| match e {
                Error::Io { path, source } => Error::Config(format!("cannot read {}: {source}", path.display())),
                other => other,
            })
        }
        None => Ok(SynthConfig::default()),
    }
    .stage("config")?;
    let series = synthesize(&cfg, seed).stage("synthesize")?;
    let mut bytes = Vec::new();
    write_csv(&series, &mut bytes).stage("write")?;
    rec.output(out, &bytes).stage("write")?;
    rec.stage("synthesize");
    println!("date,subway,taxi,bus");
    for date in series.dates() {
        let t = series.daily_totals(date);
        println!("{date},{},{},{}", t[0], t[1], t[2]);
    }
    rec.finish(&sibling_manifest(out)).stage("manifest")?;
    Ok(())
}

pub fn train(args: &RunArgs) -> CmdResult {
    let cfg = args.resolve()?;
    create_dir(&args.out)?;
    let mut rec = Recorder::new("train", cfg.model.seed);
    rec.config(&cfg);
    let series = load_clean(&args.data, &mut rec)?;
    let split = prepare_dataset(&series, cfg.model.window, cfg.split).stage("window")?;
    rec.stage("window");
    log::info!(
        "{} train / {} validation / {} test samples",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    let model = Model::new(cfg.model.clone()).stage("build")?;
    log::info!("{} with {} parameters", model.architecture().display_name(), model.num_params());
    let (model, history) = train_with(model, &split, &cfg.train, |epoch, h| {
        log::info!("epoch {epoch}: train {:.6} val {:.6}", h.train_loss[epoch], h.val_loss[epoch]);
    })
    .stage("train")?;
    rec.stage("train");
    rec.output(&args.out.join("model.ckpt"), &write_checkpoint(&model)).stage("write")?;
    rec.output(&args.out.join("history.csv"), history.to_csv(false).as_bytes()).stage("write")?;
    let report = evaluate(&model, &split.validation, &split.norm).stage("evaluate")?;
    rec.stage("evaluate");
    println!(
        "epochs run {}, best epoch {} (validation loss {:.6})",
        history.epochs(),
        history.best_epoch,
        history.val_loss[history.best_epoch]
    );
    println!("validation metrics:");
    print!(
        "{}",
        table_text(
            &[ModelRow {
                name: model.architecture().display_name().to_string(),
                result: Ok(report),
            }],
            args.percent
        )
    );
    rec.finish(&args.out.join("manifest.json")).stage("manifest")?;
    Ok(())
}

pub struct CheckpointArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub window: Option<usize>,
    pub out: PathBuf,
    pub percent: bool,
}

/// Loads the checkpoint and rebuilds the split under its saved bounds.
fn checkpoint_split(args: &CheckpointArgs, rec: &mut Recorder) -> CmdResult<(Model, DatasetSplit)> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p).and_then(|c| c.split.validate().map(|_| c)),
        None => Ok(RunConfig::default()),
    }
    .stage("config")?;
    rec.input(&args.checkpoint).stage("load checkpoint")?;
    let model: Model = load_checkpoint(&args.checkpoint).stage("load checkpoint")?;
    if let Some(w) = args.window.filter(|&w| w != model.window()) {
        return Err(usage(
            "load checkpoint",
            format!("window {w} does not match the checkpoint's window {}", model.window()),
        ));
    }
    let norm = model
        .normalization
        .ok_or_else(|| usage("load checkpoint", "checkpoint carries no normalization bounds".into()))?;
    rec.config(&RunConfig {
        model: model.config().clone(),
        ..cfg.clone()
    });
    let series = load_clean(&args.data, rec)?;
    let split = dataset_with_norm(&series, model.window(), cfg.split, norm).stage("window")?;
    rec.stage("window");
    Ok((model, split))
}

pub fn evaluate_cmd(args: &CheckpointArgs) -> CmdResult {
    let mut rec = Recorder::new("evaluate", 0);
    let (model, split) = checkpoint_split(args, &mut rec)?;
    let report = evaluate(&model, &split.test, &split.norm).stage("evaluate")?;
    rec.stage("evaluate");
    rec.output(&args.out, report.to_json().as_bytes()).stage("write")?;
    print!(
        "{}",
        table_text(
            &[ModelRow {
                name: model.architecture().display_name().to_string(),
                result: Ok(report),
            }],
            args.percent
        )
    );
    rec.finish(&sibling_manifest(&args.out)).stage("manifest")?;
    Ok(())
}

pub fn attention(args: &CheckpointArgs, sample: usize) -> CmdResult {
    let mut rec = Recorder::new("attention", 0);
    let (model, split) = checkpoint_split(args, &mut rec)?;
    if model.attention_shape().is_none() {
        return Err(usage(
            "attention",
            format!("{} has no attention layers", model.architecture().display_name()),
        ));
    }
    let Some(s) = split.test.get(sample) else {
        return Err(usage(
            "attention",
            format!("sample {sample} out of range: the test split has {} samples", split.test.len()),
        ));
    };
    let (x, _) = batch_tensors(&[s]).stage("attention")?;
    let matrices = model.attention_scores(&x).stage("attention")?.swap_remove(0);
    create_dir(&args.out)?;
    rec.output(&args.out.join("scores.csv"), scores_to_csv(&matrices).as_bytes()).stage("write")?;
    rec.output(&args.out.join("scores.json"), scores_to_json(&matrices).as_bytes()).stage("write")?;
    rec.stage("attention");
    println!(
        "exported {} score matrices for test sample {sample} (target {} slot {})",
        matrices.len(),
        s.target.date,
        s.target.slot()
    );
    rec.finish(&args.out.join("manifest.json")).stage("manifest")?;
    Ok(())
}

/// Trains every architecture on one shared split with the same seeds and
/// tabulates test metrics. Failures become rows; the run goes on.
fn run_table(args: &RunArgs, command: &str, archs: &[Architecture], repeats: usize, file: &str) -> CmdResult {
    if repeats == 0 {
        return Err(usage("config", "repeats must be at least 1".into()));
    }
    let cfg = args.resolve()?;
    create_dir(&args.out.join("checkpoints"))?;
    let mut rec = Recorder::new(command, cfg.model.seed);
    rec.config(&cfg);
    let series = load_clean(&args.data, &mut rec)?;
    let split = prepare_dataset(&series, cfg.model.window, cfg.split).stage("window")?;
    rec.stage("window");
    let mut rows = Vec::new();
    for &arch in archs {
        let name = arch.display_name().to_string();
        let mut reports: Vec<MetricsReport> = Vec::new();
        let mut failure = None;
        for r in 0..repeats as u64 {
            let mut model_cfg = cfg.model.clone();
            model_cfg.architecture = arch;
            model_cfg.seed = cfg.model.seed + r;
            let mut train_cfg = cfg.train.clone();
            train_cfg.seed = cfg.train.seed + r;
            let run = Model::new(model_cfg)
                .and_then(|m| train_with(m, &split, &train_cfg, |_, _| {}))
                .and_then(|(m, _)| evaluate(&m, &split.test, &split.norm).map(|rep| (m, rep)));
            match run {
                Ok((model, report)) => {
                    log::info!("{name} seed {}: test RMSE {:.3}", cfg.model.seed + r, report.all().rmse);
                    if r == 0 {
                        let path = args.out.join("checkpoints").join(format!("{}.ckpt", arch.key()));
                        rec.output(&path, &write_checkpoint(&model)).stage("write")?;
                    }
                    reports.push(report);
                }
                Err(e) => {
                    log::error!("{name} failed: {e}");
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        rec.stage(arch.key());
        rows.push(ModelRow {
            name,
            result: match failure {
                Some(why) => Err(why),
                None => Ok(mean_report(&reports)),
            },
        });
    }
    rec.output(&args.out.join(file), table_csv(&rows).as_bytes()).stage("write")?;
    print!("{}", table_text(&rows, args.percent));
    rec.finish(&args.out.join("manifest.json")).stage("manifest")?;
    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    if failed > 0 {
        return Err(Failure {
            stage: "train",
            error: Error::Training {
                epoch: 0,
                detail: format!("{failed} of {} models failed; see {file}", rows.len()),
            },
        });
    }
    Ok(())
}

/// Variants A–E, then the full model.
pub fn ablate(args: &RunArgs, repeats: usize) -> CmdResult {
    let mut archs: Vec<Architecture> = Variant::ABLATIONS.iter().map(|&v| Architecture::ResTransformer(v)).collect();
    archs.push(Architecture::ResTransformer(Variant::Full));
    run_table(args, "ablate", &archs, repeats, "ablation.csv")
}

/// The seven baselines, then the full model.
pub fn compare(args: &RunArgs, repeats: usize) -> CmdResult {
    let mut archs: Vec<Architecture> = BaselineKind::ALL.iter().map(|&k| Architecture::Baseline(k)).collect();
    archs.push(Architecture::ResTransformer(Variant::Full));
    run_table(args, "compare", &archs, repeats, "comparison.csv")
}

pub fn sweep(args: &RunArgs) -> CmdResult {
    let cfg = args.resolve()?;
    create_dir(&args.out)?;
    let mut rec = Recorder::new("sweep", cfg.model.seed);
    rec.config(&cfg);
    let series = load_clean(&args.data, &mut rec)?;
    let base = SweepPoint {
        d: cfg.model.d_model,
        heads: cfg.model.heads,
        window: cfg.model.window,
        batch: cfg.train.batch_size,
    };
    log::info!("sweeping {} trials from {base:?}", cfg.sweep.num_trials());
    let outcome = sweep_sequential(&cfg.sweep, base, |trial, point| {
        let seed = cfg.model.seed + trial as u64;
        let result = train_point(&series, cfg.split, point, &cfg.model, &cfg.train, seed, cfg.sweep.trials_per_point);
        match &result {
            Ok((rmse, mae)) => log::info!("trial {trial} {point:?}: val RMSE {rmse:.3} MAE {mae:.3}"),
            Err(e) => log::warn!("trial {trial} {point:?} failed: {e}"),
        }
        result
    })
    .stage("sweep")?;
    rec.stage("sweep");
    let mut best = cfg.clone();
    best.model.d_model = outcome.best.d;
    best.model.heads = outcome.best.heads;
    best.model.window = outcome.best.window;
    best.train.batch_size = outcome.best.batch;
    rec.output(&args.out.join("sweep_log.csv"), outcome.log_csv().as_bytes()).stage("write")?;
    rec.output(&args.out.join("best_config.toml"), best.to_toml().as_bytes()).stage("write")?;
    let b = outcome.best;
    println!(
        "{} trials; best d={} heads={} L={} batch={}",
        outcome.log.len(),
        b.d,
        b.heads,
        b.window,
        b.batch
    );
    rec.finish(&args.out.join("manifest.json")).stage("manifest")?;
    Ok(())
}
