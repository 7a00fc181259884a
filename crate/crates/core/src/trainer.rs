//! Training loop, evaluation and single-image prediction.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::augment::{augment_batch, rescale, AugmentConfig};
use crate::dataset::{decode_image, resize, BatchPlan, Loader, SplitConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    class_report, confusion, predictions, roc_auc, ClassReport, ConfusionMatrix, EpochRecord,
    History, RocReport,
};
use crate::nn::{save_checkpoint, Network, ParameterStore, TrainingMetadata};
use crate::optim::{run_schedule, scce_loss, Optimizer, Schedule};
use crate::tensor::{Element, Tensor};

/// Where and how to write the final checkpoint.
#[derive(Clone, Debug)]
pub struct CheckpointTarget {
    pub path: PathBuf,
    /// Seed the network was built with.
    pub init_seed: u64,
    pub classes: Vec<String>,
    pub split: Option<SplitConfig>,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Number of schedule epochs to run, from the start. Usually the
    /// schedule total; 0 trains nothing.
    pub epochs: usize,
    pub batch_size: usize,
    /// Seed of the per-epoch shuffle.
    pub seed: u64,
    pub schedule: Schedule,
    pub augment: AugmentConfig,
    pub eval_every_epoch: bool,
    pub checkpoint: Option<CheckpointTarget>,
}

impl TrainConfig {
    /// Run the whole schedule with batch size 32 and default augmentation.
    pub fn new(schedule: Schedule, seed: u64) -> Self {
        TrainConfig {
            epochs: schedule.total_epochs(),
            batch_size: 32,
            seed,
            schedule,
            augment: AugmentConfig::default(),
            eval_every_epoch: true,
            checkpoint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs > self.schedule.total_epochs() {
            return Err(Error::Config(format!(
                "epochs = {} exceeds the schedule total of {}",
                self.epochs,
                self.schedule.total_epochs()
            )));
        }
        self.augment.validate()
    }

    pub fn batch_plan(&self) -> BatchPlan {
        BatchPlan {
            batch_size: self.batch_size,
            drop_last: false,
            shuffle: true,
            seed: self.seed,
        }
    }
}

/// Hooks called by [`fit`]. All methods default to no-ops.
pub trait TrainObserver<T> {
    /// A new segment begins at 1-based `epoch` with a freshly created optimizer.
    fn segment_start(
        &mut self,
        _epoch: usize,
        _segment: usize,
        _optimizer: &Optimizer<T>,
        _store: &ParameterStore<T>,
    ) {
    }

    fn epoch_end(&mut self, _record: &EpochRecord, _store: &ParameterStore<T>) {}
}

/// Observer that ignores every event.
pub struct NoObserver;

impl<T> TrainObserver<T> for NoObserver {}

/// Prints one line per epoch to stderr.
pub struct ProgressPrinter;

impl<T> TrainObserver<T> for ProgressPrinter {
    fn epoch_end(&mut self, r: &EpochRecord, _store: &ParameterStore<T>) {
        let val = match (r.val_accuracy, r.val_loss) {
            (Some(a), Some(l)) => format!(" val_acc {a:.4} val_loss {l:.4}"),
            _ => String::new(),
        };
        eprintln!(
            "epoch {} [{}] acc {:.4} loss {:.4}{val} ({:.1}s)",
            r.epoch, r.optimizer, r.train_accuracy, r.train_loss, r.seconds
        );
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub history: History,
    pub metadata: TrainingMetadata,
}

/// Train `store` in place following `cfg.schedule`, validating after every
/// epoch when a validation loader is given.
pub fn fit<T: Element>(
    network: &Network,
    store: &mut ParameterStore<T>,
    train: &mut Loader,
    mut val: Option<&mut Loader>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() && cfg.epochs > 0 {
        return Err(Error::Usage("training set is empty".into()));
    }
    let plan = cfg.batch_plan();
    let mut history = History::default();
    let mut optimizer: Option<Optimizer<T>> = None;

    for slot in run_schedule(&cfg.schedule).into_iter().take(cfg.epochs) {
        let epoch = slot.epoch;
        if slot.starts_segment {
            let seg = &cfg.schedule.segments()[slot.segment];
            let fresh = Optimizer::new(&seg.optimizer);
            observer.segment_start(epoch, slot.segment, &fresh, store);
            optimizer = Some(fresh);
        }
        let opt = optimizer.as_mut().expect("segment started");
        let start = Instant::now();

        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for (b, batch) in train.batches(&plan, epoch).enumerate() {
            let batch = batch?;
            let mut rng = cfg.augment.batch_rng(epoch, b);
            let images =
                rescale(&augment_batch(&batch.images, &cfg.augment, &mut rng)?).cast::<T>();
            let out = network
                .train_step(store, &images, &batch.labels)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("epoch {epoch} batch {b}: {m}")),
                    other => other,
                })?;
            if !out.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {epoch} batch {b}: non-finite loss {}",
                    out.loss
                )));
            }
            opt.step(store)
                .map_err(|e| Error::Numeric(format!("epoch {epoch} batch {b}: {e}")))?;
            let n = batch.labels.len();
            loss_sum += out.loss * n as f64;
            seen += n;
            correct += predictions(&out.probs)?
                .iter()
                .zip(&batch.labels)
                .filter(|(p, y)| p == y)
                .count();
        }
        store.clear_grads();

        let (val_accuracy, val_loss) = match val.as_deref_mut() {
            Some(v) if cfg.eval_every_epoch && !v.is_empty() => {
                let s = score(network, store, v, cfg.batch_size)?;
                (Some(s.accuracy), Some(s.loss))
            }
            _ => (None, None),
        };
        let record = EpochRecord {
            epoch,
            optimizer: slot.optimizer.to_string(),
            train_accuracy: correct as f64 / seen.max(1) as f64,
            train_loss: loss_sum / seen.max(1) as f64,
            val_accuracy,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        observer.epoch_end(&record, store);
        history.push(record);
    }

    let last = history.last();
    let metadata = TrainingMetadata {
        epochs_completed: history.len(),
        optimizers: history
            .records
            .iter()
            .map(|r| r.optimizer.clone())
            .collect(),
        split: cfg.checkpoint.as_ref().and_then(|c| c.split.clone()),
        final_val_accuracy: last.and_then(|r| r.val_accuracy),
        final_val_loss: last.and_then(|r| r.val_loss),
    };
    if let Some(target) = &cfg.checkpoint {
        save_checkpoint(
            &target.path,
            network,
            store,
            target.init_seed,
            &target.classes,
            &metadata,
        )?;
    }
    Ok(FitOutcome { history, metadata })
}

/// Probabilities, labels, loss and accuracy over a whole set.
#[derive(Clone, Debug)]
pub struct Scores<T> {
    pub probs: Tensor<T>,
    pub labels: Vec<usize>,
    pub loss: f64,
    pub accuracy: f64,
}

/// Inference pass over every sample in loader order, no augmentation.
pub fn score<T: Element>(
    network: &Network,
    store: &ParameterStore<T>,
    set: &mut Loader,
    batch_size: usize,
) -> Result<Scores<T>> {
    if set.is_empty() {
        return Err(Error::Usage("evaluation set is empty".into()));
    }
    let k = network.num_classes();
    let plan = BatchPlan {
        batch_size: batch_size.max(1),
        drop_last: false,
        shuffle: false,
        seed: 0,
    };
    let mut probs = Vec::with_capacity(set.len() * k);
    let mut labels = Vec::with_capacity(set.len());
    for batch in set.batches(&plan, 0) {
        let batch = batch?;
        let p = network.forward(store, &rescale(&batch.images).cast::<T>())?;
        probs.extend_from_slice(p.data());
        labels.extend_from_slice(&batch.labels);
    }
    let probs = Tensor::new(vec![labels.len(), k], probs)?;
    let loss = scce_loss(&probs, &labels)?;
    let correct = predictions(&probs)?
        .iter()
        .zip(&labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(Scores {
        accuracy: correct as f64 / labels.len() as f64,
        probs,
        labels,
        loss,
    })
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub report: ClassReport,
    pub confusion: ConfusionMatrix,
    pub roc: RocReport,
    pub top_k: Vec<(usize, f64)>,
}

/// Full metric set over `set`. Parameters are not modified.
pub fn evaluate<T: Element>(
    network: &Network,
    store: &ParameterStore<T>,
    set: &mut Loader,
    batch_size: usize,
) -> Result<Evaluation> {
    let s = score(network, store, set, batch_size)?;
    let k = network.num_classes();
    if let Some(&y) = s.labels.iter().find(|&&y| y >= k) {
        return Err(Error::Mismatch(format!(
            "label {y} does not fit a network with {k} classes"
        )));
    }
    let preds = predictions(&s.probs)?;
    let cm = confusion(&s.labels, &preds, k)?;
    let top_k = (1..=k)
        .map(|j| Ok((j, crate::metrics::top_k_accuracy(&s.probs, &s.labels, j)?)))
        .collect::<Result<_>>()?;
    Ok(Evaluation {
        loss: s.loss,
        accuracy: s.accuracy,
        report: class_report(&cm),
        roc: roc_auc(&s.probs, &s.labels)?,
        confusion: cm,
        top_k,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class_index: usize,
    pub class_name: String,
    pub probabilities: Vec<f64>,
    /// Wall-clock decode plus inference time.
    pub seconds: f64,
}

/// Classify one image file: decode, resize, rescale, forward.
pub fn predict<T: Element>(
    network: &Network,
    store: &ParameterStore<T>,
    classes: &[String],
    path: &Path,
) -> Result<Prediction> {
    let start = Instant::now();
    let [h, w, _] = network.spec().input_size;
    let img = resize(&decode_image(path)?, (h, w))?;
    let x = rescale(&img).cast::<T>().reshape(vec![1, h, w, 3])?;
    let p = network.forward(store, &x)?;
    let probabilities: Vec<f64> = p.data().iter().map(|v| v.widen()).collect();
    let class_index = crate::metrics::argmax(&probabilities);
    Ok(Prediction {
        class_index,
        class_name: classes
            .get(class_index)
            .cloned()
            .unwrap_or_else(|| class_index.to_string()),
        probabilities,
        seconds: start.elapsed().as_secs_f64(),
    })
}
