//! Command-line front end: `train`, `evaluate`, `predict` and `inspect`.
//!
//! Exit codes: 0 success, 1 partial prediction failure, 2 configuration or
//! usage error, 3 numeric abort, 4 checkpoint problem or mismatch, 5 data
//! error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, Fill, Interpolation};
use crate::dataset::{read_manifest, scan_dataset, split, DatasetIndex, Loader, SplitConfig};
use crate::error::{Error, Result};
use crate::metrics::{emit_report, write_history};
use crate::nn::{build_network, count_params, load_checkpoint, Checkpoint, NetworkSpec};
use crate::optim::{OptimizerKind, Schedule, SegmentSpec};
use crate::trainer::{evaluate, fit, predict, CheckpointTarget, ProgressPrinter, TrainConfig};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "MBCLASSIFY_OUT";
pub const CHECKPOINT_FILE: &str = "checkpoint.dsqc";

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;
pub const EXIT_DATA: i32 = 5;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Spec(_) => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Checkpoint(_) | Error::Mismatch(_) => EXIT_CHECKPOINT,
        Error::Data(_)
        | Error::Decode { .. }
        | Error::Io(_)
        | Error::Shape { .. }
        | Error::InvalidShape(_) => EXIT_DATA,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub flip_probability: f64,
    pub rotation_factor: f64,
    pub zoom_factor: f64,
    pub interpolation: Interpolation,
    pub fill: Fill,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let d = AugmentConfig::default();
        AugmentSection {
            flip_probability: d.flip_probability,
            rotation_factor: d.rotation_factor,
            zoom_factor: d.zoom_factor,
            interpolation: d.interpolation,
            fill: d.fill,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
    pub shuffle: bool,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train_fraction: 0.8,
            shuffle: true,
        }
    }
}

fn default_schedule() -> Vec<SegmentSpec> {
    vec![SegmentSpec {
        optimizer: OptimizerKind::Adam,
        epochs: 5,
        learning_rate: None,
        momentum: None,
        beta1: None,
        beta2: None,
        epsilon: None,
    }]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    /// Defaults to the schedule total.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    pub eval_every_epoch: bool,
    /// Keep decoded images in memory after their first load.
    pub cache: bool,
    pub schedule: Vec<SegmentSpec>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 32,
            epochs: None,
            eval_every_epoch: true,
            cache: true,
            schedule: default_schedule(),
        }
    }
}

/// Run configuration file (TOML). One `seed` drives network initialization,
/// the split, the epoch shuffle and augmentation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub augment: AugmentSection,
    pub split: SplitSection,
    pub train: TrainSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read and parse; relative dataset paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.manifest].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        match (&self.preset, &self.network) {
            (Some(_), Some(_)) => Err(Error::Config(
                "set either `preset` or `[network]`, not both".into(),
            )),
            (_, Some(spec)) => {
                spec.validate()?;
                Ok(spec.clone())
            }
            (Some(name), None) => NetworkSpec::preset(name),
            (None, None) => Ok(NetworkSpec::desk()),
        }
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            train_fraction: self.split.train_fraction,
            seed: self.seed,
            shuffle: self.split.shuffle,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            flip_probability: self.augment.flip_probability,
            rotation_factor: self.augment.rotation_factor,
            zoom_factor: self.augment.zoom_factor,
            interpolation: self.augment.interpolation,
            fill: self.augment.fill,
            seed: self.seed,
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::from_specs(&self.train.schedule).map_err(|e| match e {
            Error::Spec(m) => Error::Config(m),
            other => other,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let schedule = self.schedule()?;
        let cfg = TrainConfig {
            epochs: self.train.epochs.unwrap_or_else(|| schedule.total_epochs()),
            batch_size: self.train.batch_size,
            seed: self.seed,
            schedule,
            augment: self.augment_config(),
            eval_every_epoch: self.train.eval_every_epoch,
            checkpoint: None,
        };
        cfg.validate()?;
        self.split_config().validate()?;
        Ok(cfg)
    }

    /// Index the configured dataset root or manifest.
    pub fn dataset_index(&self) -> Result<DatasetIndex> {
        load_index(self.dataset.as_deref(), self.manifest.as_deref())
    }

    fn check_paths(&self) -> Result<()> {
        for p in [&self.dataset, &self.manifest].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

fn load_index(dataset: Option<&Path>, manifest: Option<&Path>) -> Result<DatasetIndex> {
    let idx = match (dataset, manifest) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "set either a dataset root or a manifest, not both".into(),
            ))
        }
        (Some(root), None) => scan_dataset(root)?,
        (None, Some(m)) => read_manifest(m)?,
        (None, None) => return Err(Error::Config("no dataset root or manifest given".into())),
    };
    for w in &idx.warnings {
        eprintln!("warning: {w}");
    }
    if idx.samples.is_empty() {
        return Err(Error::Data("dataset contains no images".into()));
    }
    Ok(idx)
}

#[derive(Parser, Debug)]
#[command(
    name = "mbclassify",
    version,
    about = "Train and run an MBConv image classifier"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Run configuration file (TOML)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed overriding the configuration
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: config `output_dir`, then $MBCLASSIFY_OUT, then ./runs]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Network preset overriding the configuration
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    /// Every sample of the dataset
    All,
    /// The validation part of the split recorded in the checkpoint
    Validation,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train on a dataset and write checkpoint, history and reports
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset root overriding the configuration
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write metric reports
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root (class folders)
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Manifest of `path<TAB>class` lines
        #[arg(long, conflicts_with = "dataset")]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Subset::All)]
        subset: Subset,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Classify image files, one output line each
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Print the layer table and parameter totals
    Inspect {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, conflicts_with = "preset")]
        checkpoint: Option<PathBuf>,
    },
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let mut out = std::io::stdout().lock();
    match dispatch(cli.command, &mut out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Train { common, dataset } => cmd_train(&common, dataset, out),
        Command::Evaluate {
            common,
            checkpoint,
            dataset,
            manifest,
            subset,
            batch_size,
        } => cmd_evaluate(
            &common,
            &checkpoint,
            dataset,
            manifest,
            subset,
            batch_size,
            out,
        ),
        Command::Predict { checkpoint, images } => cmd_predict(&checkpoint, &images, out),
        Command::Inspect { common, checkpoint } => cmd_inspect(&common, checkpoint.as_deref(), out),
    }
}

/// Config file (or defaults) with command-line overrides applied.
fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &common.preset {
        cfg.preset = Some(p.clone());
        cfg.network = None;
    }
    Ok(cfg)
}

fn output_dir(common: &CommonArgs, cfg: &RunConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e)
}

pub fn cmd_train(
    common: &CommonArgs,
    dataset: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<i32> {
    let mut cfg = resolve_config(common)?;
    if let Some(d) = dataset {
        cfg.dataset = Some(d);
        cfg.manifest = None;
    }
    cfg.check_paths()?;
    let spec = cfg.network_spec()?;
    let mut train_cfg = cfg.train_config()?;
    let out_dir = output_dir(common, &cfg);
    let idx = cfg.dataset_index()?;
    if idx.classes.len() != spec.num_classes {
        return Err(Error::Data(format!(
            "dataset has {} classes, network expects {}",
            idx.classes.len(),
            spec.num_classes
        )));
    }
    let split_cfg = cfg.split_config();
    let (train_set, val_set) = split(&idx.samples, &split_cfg)?;
    let [h, w, _] = spec.input_size;
    let mut train = Loader::new(train_set, (h, w), cfg.train.cache);
    let mut val = Loader::new(val_set, (h, w), cfg.train.cache);

    let (network, mut store) = build_network::<f32>(&spec, cfg.seed)?;
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    train_cfg.checkpoint = Some(CheckpointTarget {
        path: ckpt.clone(),
        init_seed: cfg.seed,
        classes: idx.classes.clone(),
        split: Some(split_cfg),
    });
    writeln!(
        out,
        "training {} on {} train / {} validation images, schedule {}",
        spec.input_size.map(|d| d.to_string()).join("x"),
        train.len(),
        val.len(),
        train_cfg.schedule.describe()
    )
    .map_err(io_err)?;
    let outcome = fit(
        &network,
        &mut store,
        &mut train,
        Some(&mut val),
        &train_cfg,
        &mut ProgressPrinter,
    )?;
    write_history(&out_dir, &outcome.history)?;

    let eval = evaluate(&network, &store, &mut val, train_cfg.batch_size)?;
    emit_report(
        &out_dir,
        &idx.classes,
        &eval.report,
        eval.loss,
        &eval.confusion,
        &eval.roc,
        Some(&outcome.history),
    )?;
    writeln!(
        out,
        "validation accuracy {:.4} loss {:.4}\ncheckpoint {}",
        eval.accuracy,
        eval.loss,
        ckpt.display()
    )
    .map_err(io_err)?;
    Ok(EXIT_OK)
}

fn open_checkpoint(path: &Path) -> Result<Checkpoint<f32>> {
    load_checkpoint::<f32>(path)
}

pub fn cmd_evaluate(
    common: &CommonArgs,
    checkpoint: &Path,
    dataset: Option<PathBuf>,
    manifest: Option<PathBuf>,
    subset: Subset,
    batch_size: usize,
    out: &mut dyn Write,
) -> Result<i32> {
    let cfg = resolve_config(common)?;
    let ck = open_checkpoint(checkpoint)?;
    let (dataset, manifest) = match (dataset, manifest) {
        (None, None) => (cfg.dataset.clone(), cfg.manifest.clone()),
        given => given,
    };
    let idx = load_index(dataset.as_deref(), manifest.as_deref())?;
    if idx.classes != ck.header.classes {
        return Err(Error::Mismatch(format!(
            "dataset classes {:?} differ from checkpoint classes {:?}",
            idx.classes, ck.header.classes
        )));
    }
    let samples = match subset {
        Subset::All => idx.samples,
        Subset::Validation => {
            let split_cfg = ck.header.training.split.clone().ok_or_else(|| {
                Error::Checkpoint("checkpoint records no split; use --subset all".into())
            })?;
            split(&idx.samples, &split_cfg)?.1
        }
    };
    let [h, w, _] = ck.network.spec().input_size;
    let mut loader = Loader::new(samples, (h, w), false);
    let eval = evaluate(&ck.network, &ck.store, &mut loader, batch_size)?;
    let out_dir = output_dir(common, &cfg);
    emit_report(
        &out_dir,
        &idx.classes,
        &eval.report,
        eval.loss,
        &eval.confusion,
        &eval.roc,
        None,
    )?;
    writeln!(
        out,
        "accuracy {} loss {} on {} images\nreports in {}",
        eval.accuracy,
        eval.loss,
        loader.len(),
        out_dir.display()
    )
    .map_err(io_err)?;
    Ok(EXIT_OK)
}

pub fn cmd_predict(checkpoint: &Path, images: &[PathBuf], out: &mut dyn Write) -> Result<i32> {
    let ck = open_checkpoint(checkpoint)?;
    let (mut ok, mut total_ms) = (0usize, 0.0f64);
    for path in images {
        match predict(&ck.network, &ck.store, &ck.header.classes, path) {
            Ok(p) => {
                let ms = p.seconds * 1e3;
                let probs: Vec<String> =
                    p.probabilities.iter().map(|v| format!("{v:.6}")).collect();
                writeln!(
                    out,
                    "{} {} {} {ms:.3}",
                    path.display(),
                    p.class_name,
                    probs.join(" ")
                )
                .map_err(io_err)?;
                ok += 1;
                total_ms += ms;
            }
            Err(e) => {
                writeln!(out, "{} error: {e}", path.display()).map_err(io_err)?;
            }
        }
    }
    let mean = if ok > 0 { total_ms / ok as f64 } else { 0.0 };
    writeln!(
        out,
        "summary images={} ok={ok} failed={} mean_ms={mean:.3}",
        images.len(),
        images.len() - ok
    )
    .map_err(io_err)?;
    Ok(if ok == images.len() {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    })
}

/// Bytes of f32 storage in the style `41.17 MB` / `30.02 KB`.
fn storage(params: usize) -> String {
    let bytes = params as f64 * 4.0;
    if bytes >= 1024.0 * 1024.0 {
        format!("{:.2} MB", bytes / (1024.0 * 1024.0))
    } else {
        format!("{:.2} KB", bytes / 1024.0)
    }
}

pub fn cmd_inspect(
    common: &CommonArgs,
    checkpoint: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    let (title, network, store) = match checkpoint {
        Some(p) => {
            let ck = open_checkpoint(p)?;
            (p.display().to_string(), ck.network, ck.store)
        }
        None => {
            let cfg = resolve_config(common)?;
            let spec = cfg.network_spec()?;
            let title = cfg.preset.clone().unwrap_or_else(|| "network".into());
            let (n, s) = build_network::<f32>(&spec, cfg.seed)?;
            (title, n, s)
        }
    };
    let rows = network.layer_table(&store);
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(12) + 2;
    let shape_w = rows
        .iter()
        .map(|r| r.output_shape.len())
        .max()
        .unwrap_or(12)
        .max(12)
        + 2;
    let rule = "=".repeat(name_w + shape_w + 12);
    let mut s = format!("Model: {title}\n{rule}\n");
    s += &format!(
        "{:<name_w$}{:<shape_w$}{:>12}\n{rule}\n",
        "Layer", "Output Shape", "Param #"
    );
    for r in &rows {
        s += &format!(
            "{:<name_w$}{:<shape_w$}{:>12}\n",
            r.name, r.output_shape, r.params
        );
    }
    let c = count_params(&store);
    s += &format!(
        "{rule}\nTotal params: {} ({})\nTrainable params: {} ({})\nNon-trainable params: {} ({})\n",
        c.total,
        storage(c.total),
        c.trainable,
        storage(c.trainable),
        c.frozen,
        storage(c.frozen)
    );
    out.write_all(s.as_bytes()).map_err(io_err)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected_with_line() {
        let err = RunConfig::parse("seed = 1\n\n[train]\nbatch = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4"), "{msg}");
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }

    #[test]
    fn schedule_from_config() {
        let cfg = RunConfig::parse(
            "preset = \"desk\"\n[[train.schedule]]\noptimizer = \"sgd\"\nepochs = 3\n\
             [[train.schedule]]\noptimizer = \"adam\"\nepochs = 2\n",
        )
        .unwrap();
        let t = cfg.train_config().unwrap();
        assert_eq!(t.epochs, 5);
        assert_eq!(t.schedule.describe(), "sgd(3)+adam(2)");
    }

    #[test]
    fn storage_units_match_summary_style() {
        assert_eq!(storage(10_791_213), "41.17 MB");
        assert_eq!(storage(7685), "30.02 KB");
    }
}
