use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train_stage_one, train_stage_two, Family, TrainConfig, TrainedPipeline, TrainingLog};
use crate::corpus::{read_jsonl, remove_conflict, write_jsonl, write_triplets, DatasetSplit};
use crate::encoder::EncoderFactory;
use crate::error::{Error, Result};
use crate::model::StageTwoModel;
use crate::scalar::Scalar;

/// Train, dev and test splits of one dataset.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub name: String,
    pub train: DatasetSplit,
    pub dev: DatasetSplit,
    pub test: DatasetSplit,
}

/// Test metrics of one run, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub triplet_precision: f64,
    pub triplet_recall: f64,
    pub triplet_f1: f64,
    pub atsa_accuracy: f64,
    pub towe_f1: f64,
    pub ate_f1: f64,
}

pub fn average_metrics(runs: &[RunMetrics]) -> RunMetrics {
    if runs.is_empty() {
        return RunMetrics::default();
    }
    let n = runs.len() as f64;
    let mean = |f: fn(&RunMetrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
    RunMetrics {
        triplet_precision: mean(|m| m.triplet_precision),
        triplet_recall: mean(|m| m.triplet_recall),
        triplet_f1: mean(|m| m.triplet_f1),
        atsa_accuracy: mean(|m| m.atsa_accuracy),
        towe_f1: mean(|m| m.towe_f1),
        ate_f1: mean(|m| m.ate_f1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub metrics: RunMetrics,
    pub ate_log: TrainingLog,
    pub stage_two_log: TrainingLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub dataset: String,
    pub config: TrainConfig,
    pub runs: Vec<RunRecord>,
    pub average: RunMetrics,
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum ManifestRecord {
    Config { dataset: String, config: TrainConfig },
    Run(RunRecord),
    Average { runs: usize, metrics: RunMetrics },
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut records = vec![ManifestRecord::Config {
        dataset: manifest.dataset.clone(),
        config: manifest.config.clone(),
    }];
    records.extend(manifest.runs.iter().cloned().map(ManifestRecord::Run));
    records.push(ManifestRecord::Average {
        runs: manifest.runs.len(),
        metrics: manifest.average,
    });
    write_jsonl(path, &records)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let records: Vec<ManifestRecord> = read_jsonl(path)?;
    let mut head = None;
    let mut runs = Vec::new();
    let mut average = None;
    for r in records {
        match r {
            ManifestRecord::Config { dataset, config } => head = Some((dataset, config)),
            ManifestRecord::Run(run) => runs.push(run),
            ManifestRecord::Average { metrics, .. } => average = Some(metrics),
        }
    }
    let (dataset, config) = head.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: "manifest has no config record".into(),
    })?;
    let average = average.unwrap_or_else(|| average_metrics(&runs.iter().map(|r| r.metrics).collect::<Vec<_>>()));
    Ok(RunManifest {
        dataset,
        config,
        runs,
        average,
    })
}

/// Trains and evaluates every configured run, averaging test metrics.
///
/// Conflict aspects are removed from all splits first. With `run_dir`, each
/// run's checkpoints and test predictions go to `run_dir/run-<k>` and the
/// manifest is rewritten after every run.
pub fn run_experiment<T: Scalar>(
    config: &TrainConfig,
    data: &ExperimentData,
    factory: &dyn EncoderFactory<T>,
    run_dir: Option<&Path>,
) -> Result<RunManifest> {
    config.validate()?;
    let train = remove_conflict(&data.train);
    let dev = remove_conflict(&data.dev);
    let test = remove_conflict(&data.test);
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Config(format!("dataset {} has an empty train or dev split", data.name)));
    }
    let mut manifest = RunManifest {
        dataset: data.name.clone(),
        config: config.clone(),
        runs: Vec::new(),
        average: RunMetrics::default(),
    };
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, config.to_toml()).map_err(|e| Error::io(&path, e))?;
    }
    for (k, seed) in config.run_seeds().into_iter().enumerate() {
        log::info!("{}: run {} of {} (seed {seed})", data.name, k + 1, config.runs);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ate, ate_log) = train_stage_one(&train, &dev, config, factory, &mut rng)?;
        let outcome = train_stage_two(&train, &dev, config, factory, &mut rng)?;
        let tagger = match (config.variant.family, &outcome.tagger) {
            (Family::SeparateTagger, Some(store)) => Some(StageTwoModel::from_store(store, factory)?),
            _ => None,
        };
        let pipeline = TrainedPipeline {
            variant: config.variant,
            ate,
            stage_two: outcome.model,
            tagger,
        };
        let (metrics, predictions) = pipeline.evaluate(&test)?;
        log::info!(
            "run {}: triplet F1 {:.4}, sentiment accuracy {:.4}, opinion F1 {:.4}",
            k + 1,
            metrics.triplet_f1,
            metrics.atsa_accuracy,
            metrics.towe_f1
        );
        manifest.runs.push(RunRecord {
            run: k + 1,
            seed,
            metrics,
            ate_log,
            stage_two_log: outcome.log,
        });
        manifest.average = average_metrics(&manifest.runs.iter().map(|r| r.metrics).collect::<Vec<_>>());
        if let Some(dir) = run_dir {
            let sub = dir.join(format!("run-{}", k + 1));
            pipeline.save(&sub)?;
            write_triplets(&sub.join("test_predictions.jsonl"), &predictions)?;
            write_manifest(&dir.join("manifest.jsonl"), &manifest)?;
        }
    }
    Ok(manifest)
}
