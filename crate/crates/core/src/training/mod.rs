//! Optimization loops, the two-stage schedule and multi-run experiments.

mod config;
mod experiment;
mod pipeline;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, Span};
use crate::encoder::EncoderFactory;
use crate::error::{Error, Result};
use crate::model::{AteModel, Phase, StageTwoInstance, StageTwoModel};
use crate::nn::{Adam, AdamConfig, TensorStore};
use crate::scalar::Scalar;

pub use config::{EncoderRegime, EncoderSettings, Family, ModelVariant, Selection, TrainConfig};
pub use experiment::{
    average_metrics, read_manifest, run_experiment, write_manifest, ExperimentData, ManifestRecord, RunManifest,
    RunMetrics, RunRecord,
};
pub use pipeline::{evaluate_subtasks, saved_variant, SubtaskScores, TrainedPipeline};

/// Sentence with its gold aspect spans.
#[derive(Debug, Clone, PartialEq)]
pub struct AteExample {
    pub id: String,
    pub tokens: Vec<String>,
    pub aspects: Vec<Span>,
}

pub fn ate_examples(split: &DatasetSplit) -> Vec<AteExample> {
    split
        .sentences
        .iter()
        .map(|s| AteExample {
            id: s.id.clone(),
            tokens: s.tokens.clone(),
            aspects: s.aspect_spans(),
        })
        .collect()
}

/// One instance per gold aspect with a sentiment label; conflict aspects are
/// skipped.
pub fn stage_two_instances(split: &DatasetSplit) -> Result<Vec<StageTwoInstance>> {
    let mut out = Vec::new();
    for s in &split.sentences {
        for a in &s.aspects {
            if let Some(sentiment) = a.polarity.sentiment() {
                out.push(StageTwoInstance::new(&s.id, &s.tokens, a.span, &a.opinions, sentiment)?);
            }
        }
    }
    Ok(out)
}

/// Which loop produced an epoch record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ate,
    Towe,
    Atsa,
    Joint,
}

impl From<Phase> for Stage {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Towe => Stage::Towe,
            Phase::Atsa => Stage::Atsa,
            Phase::Joint => Stage::Joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    /// Mean per-sentence training loss.
    pub train_loss: f64,
    pub dev_metric: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    /// Stages in the order they ran.
    pub fn stages(&self) -> Vec<Stage> {
        let mut out: Vec<Stage> = Vec::new();
        for e in &self.epochs {
            if out.last() != Some(&e.stage) {
                out.push(e.stage);
            }
        }
        out
    }

    /// Epoch whose parameters were kept for `stage`.
    pub fn best_epoch(&self, stage: Stage) -> Option<usize> {
        self.epochs
            .iter()
            .filter(|e| e.stage == stage && e.improved)
            .map(|e| e.epoch)
            .last()
    }
}

/// Stops once the dev metric has failed to improve for `patience`
/// consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Returns whether `metric` is a new best.
    pub fn observe(&mut self, metric: f64) -> bool {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

/// What one early-stopped loop optimizes.
trait Task<T: Scalar> {
    fn len(&self) -> usize;
    /// Accumulates, steps the optimizer and returns the summed loss.
    fn train_batch(&mut self, batch: &[usize], opt: &mut Adam<T>, rng: &mut ChaCha8Rng) -> Result<f64>;
    fn dev_score(&self) -> Result<f64>;
    fn snapshot(&self) -> TensorStore<T>;
    fn restore(&mut self, store: &TensorStore<T>) -> Result<()>;
}

#[derive(Debug, Clone, Copy)]
struct Schedule {
    batch_size: usize,
    patience: usize,
    max_epochs: usize,
}

impl From<&TrainConfig> for Schedule {
    fn from(c: &TrainConfig) -> Self {
        Schedule {
            batch_size: c.batch_size,
            patience: c.patience,
            max_epochs: c.max_epochs,
        }
    }
}

/// Runs epochs until early stopping, then restores the best parameters.
/// Returns the best dev score.
fn fit<T: Scalar>(
    stage: Stage,
    task: &mut dyn Task<T>,
    schedule: Schedule,
    opt: &mut Adam<T>,
    rng: &mut ChaCha8Rng,
    log: &mut TrainingLog,
) -> Result<f64> {
    let n = task.len();
    if n == 0 {
        return Err(Error::Config(format!("no training examples for the {stage:?} stage")));
    }
    let mut stopper = EarlyStopping::new(schedule.patience);
    let mut best = None;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=schedule.max_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(schedule.batch_size) {
            total += task.train_batch(batch, opt, rng)?;
        }
        let dev = task.dev_score()?;
        let improved = stopper.observe(dev);
        if improved {
            best = Some(task.snapshot());
        }
        let train_loss = total / n as f64;
        log::info!("{stage:?} epoch {epoch}: loss {train_loss:.4}, dev {dev:.4}{}", if improved { " *" } else { "" });
        log.epochs.push(EpochRecord {
            stage,
            epoch,
            train_loss,
            dev_metric: dev,
            improved,
        });
        if stopper.should_stop() {
            log::info!("{stage:?}: no improvement for {} epochs, stopping", schedule.patience);
            break;
        }
    }
    if let Some(b) = best {
        task.restore(&b)?;
    }
    Ok(stopper.best().unwrap_or(0.0))
}

struct AteTask<'a, T: Scalar> {
    model: &'a mut AteModel<T>,
    train: &'a [AteExample],
    dev: &'a [AteExample],
}

impl<T: Scalar> Task<T> for AteTask<'_, T> {
    fn len(&self) -> usize {
        self.train.len()
    }

    fn train_batch(&mut self, batch: &[usize], opt: &mut Adam<T>, _rng: &mut ChaCha8Rng) -> Result<f64> {
        let mut total = 0.0;
        for &i in batch {
            let ex = &self.train[i];
            total += self.model.accumulate(&ex.id, &ex.tokens, &ex.aspects)?.as_f64();
        }
        opt.begin_step(T::lit(1.0 / batch.len() as f64));
        self.model.update(opt);
        Ok(total)
    }

    fn dev_score(&self) -> Result<f64> {
        pipeline::ate_span_f1(self.model, self.dev).map(|r| r.f1)
    }

    fn snapshot(&self) -> TensorStore<T> {
        self.model.to_store()
    }

    fn restore(&mut self, store: &TensorStore<T>) -> Result<()> {
        self.model.restore_params(store)
    }
}

struct StageTwoTask<'a, T: Scalar> {
    model: &'a mut StageTwoModel<T>,
    phase: Phase,
    selection: Selection,
    train: &'a [StageTwoInstance],
    dev: &'a DatasetSplit,
}

impl<T: Scalar> Task<T> for StageTwoTask<'_, T> {
    fn len(&self) -> usize {
        self.train.len()
    }

    fn train_batch(&mut self, batch: &[usize], opt: &mut Adam<T>, rng: &mut ChaCha8Rng) -> Result<f64> {
        let mut total = 0.0;
        for &i in batch {
            let loss = self.model.accumulate(&self.train[i], self.phase, Some(&mut *rng))?;
            total += loss.total().as_f64();
        }
        opt.begin_step(T::lit(1.0 / batch.len() as f64));
        self.model.update(opt, self.phase);
        Ok(total)
    }

    fn dev_score(&self) -> Result<f64> {
        let s = evaluate_subtasks(self.model, None, self.dev)?;
        Ok(match (self.phase, self.selection) {
            (Phase::Towe, _) => s.towe.f1,
            (Phase::Atsa, _) => s.atsa_accuracy,
            (Phase::Joint, Selection::AccuracyPlusF1) => s.atsa_accuracy + s.towe.f1,
            (Phase::Joint, Selection::Accuracy) => s.atsa_accuracy,
            (Phase::Joint, Selection::F1) => s.towe.f1,
        })
    }

    fn snapshot(&self) -> TensorStore<T> {
        self.model.to_store()
    }

    fn restore(&mut self, store: &TensorStore<T>) -> Result<()> {
        self.model.restore_params(store)
    }
}

fn optimizer<T: Scalar>(config: &TrainConfig) -> Adam<T> {
    Adam::new(AdamConfig {
        lr: config.learning_rate(),
        ..AdamConfig::default()
    })
}

/// Trains the aspect tagger on gold aspects, selecting the epoch with the
/// best dev span F1.
pub fn train_stage_one<T: Scalar>(
    train: &DatasetSplit,
    dev: &DatasetSplit,
    config: &TrainConfig,
    factory: &dyn EncoderFactory<T>,
    rng: &mut ChaCha8Rng,
) -> Result<(AteModel<T>, TrainingLog)> {
    let mut model = AteModel::build(factory, rng)?;
    let train = ate_examples(train);
    let dev = ate_examples(dev);
    let mut log = TrainingLog::default();
    let mut opt = optimizer(config);
    let mut task = AteTask {
        model: &mut model,
        train: &train,
        dev: &dev,
    };
    fit(Stage::Ate, &mut task, config.into(), &mut opt, rng, &mut log)?;
    Ok((model, log))
}

/// Result of the second stage.
pub struct StageTwoOutcome<T: Scalar> {
    pub model: StageTwoModel<T>,
    /// Parameters at the end of the tagger-only phase (the separately
    /// trained tagger), absent for the pipeline family.
    pub tagger: Option<TensorStore<T>>,
    pub log: TrainingLog,
}

/// Trains opinion tagger and sentiment classifier on gold aspects.
///
/// Joint families run a tagger-only phase to its early stop, then optimize
/// the summed loss. The pipeline family trains the tagger and the classifier
/// one after the other, each to its own early stop.
pub fn train_stage_two<T: Scalar>(
    train: &DatasetSplit,
    dev: &DatasetSplit,
    config: &TrainConfig,
    factory: &dyn EncoderFactory<T>,
    rng: &mut ChaCha8Rng,
) -> Result<StageTwoOutcome<T>> {
    let variant = config.variant;
    let mut model = StageTwoModel::build(
        variant.stage_two_config(config.dropout, config.detach_attention),
        factory,
        rng,
    )?;
    let instances = stage_two_instances(train)?;
    let mut log = TrainingLog::default();
    let mut opt = optimizer(config);
    let phases: &[Phase] = match variant.family {
        Family::Pipeline => &[Phase::Towe, Phase::Atsa],
        Family::Joint | Family::SeparateTagger => &[Phase::Towe, Phase::Joint],
    };
    let mut tagger = None;
    for &phase in phases {
        let mut task = StageTwoTask {
            model: &mut model,
            phase,
            selection: config.selection,
            train: &instances,
            dev,
        };
        fit(phase.into(), &mut task, config.into(), &mut opt, rng, &mut log)?;
        if phase == Phase::Towe && variant.family != Family::Pipeline {
            log::info!("tagger warm-up finished; starting joint phase");
            tagger = Some(model.to_store());
        }
    }
    Ok(StageTwoOutcome { model, tagger, log })
}
