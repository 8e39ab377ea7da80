use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AteExample, Family, ModelVariant, RunMetrics};
use crate::corpus::{gold_triplets, AsmoteTriplet, DatasetSplit, SentenceTriplet, Span};
use crate::encoder::EncoderFactory;
use crate::error::{Error, Result};
use crate::evaluation::{atsa_accuracy, export_attention, span_f1, towe_f1, triplet_prf, AttentionRecord, MetricReport};
use crate::model::{AteModel, StageTwoModel};
use crate::scalar::Scalar;
use crate::tagging::mark_aspect;

pub(crate) fn ate_span_f1<T: Scalar>(model: &AteModel<T>, examples: &[AteExample]) -> Result<MetricReport> {
    let mut gold = BTreeMap::new();
    let mut pred = BTreeMap::new();
    for ex in examples {
        gold.insert(ex.id.clone(), ex.aspects.iter().copied().collect::<BTreeSet<_>>());
        pred.insert(ex.id.clone(), model.predict(&ex.id, &ex.tokens)?.spans);
    }
    Ok(span_f1(&gold, &pred))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SubtaskScores {
    pub atsa_accuracy: f64,
    pub towe: MetricReport,
}

/// Sentiment accuracy and opinion F1 on gold aspects that form triplets.
/// Opinions come from `tagger` when given.
pub fn evaluate_subtasks<T: Scalar>(
    model: &StageTwoModel<T>,
    tagger: Option<&StageTwoModel<T>>,
    split: &DatasetSplit,
) -> Result<SubtaskScores> {
    let tokens: BTreeMap<&str, &[String]> = split
        .sentences
        .iter()
        .map(|s| (s.id.as_str(), s.tokens.as_slice()))
        .collect();
    let mut gold_s = BTreeMap::new();
    let mut pred_s = BTreeMap::new();
    let mut gold_o = BTreeMap::new();
    let mut pred_o = BTreeMap::new();
    for t in gold_triplets(split) {
        let key = (t.id.clone(), t.triplet.aspect);
        let marked = mark_aspect(tokens[t.id.as_str()], t.triplet.aspect);
        let out = model.predict(&t.id, &marked)?;
        let opinions = match tagger {
            Some(tg) => tg.predict_opinions(&t.id, &marked)?.spans,
            None => out.towe.spans,
        };
        gold_s.insert(key.clone(), t.triplet.sentiment);
        pred_s.insert(key.clone(), out.sentiment);
        gold_o.insert(key.clone(), t.triplet.opinions);
        pred_o.insert(key, opinions);
    }
    Ok(SubtaskScores {
        atsa_accuracy: atsa_accuracy(&gold_s, &pred_s),
        towe: towe_f1(&gold_o, &pred_o),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct PipelineInfo {
    variant: ModelVariant,
    separate_tagger: bool,
}

fn read_info(dir: &Path) -> Result<(std::path::PathBuf, PipelineInfo)> {
    let path = dir.join(INFO_FILE);
    let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let info = serde_json::from_str(&raw)?;
    Ok((path, info))
}

/// Variant of the pipeline saved in `dir`, read without loading weights.
pub fn saved_variant(dir: &Path) -> Result<ModelVariant> {
    Ok(read_info(dir)?.1.variant)
}

const ATE_FILE: &str = "ate.safetensors";
const STAGE_TWO_FILE: &str = "stage_two.safetensors";
const TAGGER_FILE: &str = "tagger.safetensors";
const INFO_FILE: &str = "pipeline.json";

/// Aspect tagger, second-stage model and, for the separate-tagger family,
/// the tagger whose opinions replace the joint model's.
pub struct TrainedPipeline<T: Scalar> {
    pub variant: ModelVariant,
    pub ate: AteModel<T>,
    pub stage_two: StageTwoModel<T>,
    pub tagger: Option<StageTwoModel<T>>,
}

impl<T: Scalar> TrainedPipeline<T> {
    /// Triplets for every aspect the tagger finds, including those without
    /// opinions.
    pub fn predict_sentence(&self, id: &str, tokens: &[String]) -> Result<Vec<AsmoteTriplet>> {
        let aspects = self.ate.predict(id, tokens)?.spans;
        aspects
            .into_iter()
            .map(|aspect| self.predict_aspect(id, tokens, aspect))
            .collect()
    }

    pub fn predict_aspect(&self, id: &str, tokens: &[String], aspect: Span) -> Result<AsmoteTriplet> {
        aspect.check_bounds(tokens.len())?;
        let marked = mark_aspect(tokens, aspect);
        let out = self.stage_two.predict(id, &marked)?;
        let opinions = match &self.tagger {
            Some(t) => t.predict_opinions(id, &marked)?.spans,
            None => out.towe.spans,
        };
        Ok(AsmoteTriplet {
            aspect,
            sentiment: out.sentiment,
            opinions,
        })
    }

    /// Predicted triplets with at least one opinion.
    pub fn predict_split(&self, split: &DatasetSplit) -> Result<Vec<SentenceTriplet>> {
        let mut out = Vec::new();
        for s in &split.sentences {
            for triplet in self.predict_sentence(&s.id, &s.tokens)? {
                if !triplet.opinions.is_empty() {
                    out.push(SentenceTriplet {
                        id: s.id.clone(),
                        triplet,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn evaluate(&self, split: &DatasetSplit) -> Result<(RunMetrics, Vec<SentenceTriplet>)> {
        let pred = self.predict_split(split)?;
        let triplet = triplet_prf(&gold_triplets(split), &pred)?;
        let ate = ate_span_f1(&self.ate, &super::ate_examples(split))?;
        let sub = evaluate_subtasks(&self.stage_two, self.tagger.as_ref(), split)?;
        let metrics = RunMetrics {
            triplet_precision: triplet.precision,
            triplet_recall: triplet.recall,
            triplet_f1: triplet.f1,
            atsa_accuracy: sub.atsa_accuracy,
            towe_f1: sub.towe.f1,
            ate_f1: ate.f1,
        };
        Ok((metrics, pred))
    }

    pub fn attention(&self, id: &str, tokens: &[String], aspect: Span) -> Result<Option<AttentionRecord>> {
        export_attention(&self.stage_two, id, tokens, aspect)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.ate.save(&dir.join(ATE_FILE))?;
        self.stage_two.save(&dir.join(STAGE_TWO_FILE))?;
        if let Some(t) = &self.tagger {
            t.save(&dir.join(TAGGER_FILE))?;
        }
        let info = PipelineInfo {
            variant: self.variant,
            separate_tagger: self.tagger.is_some(),
        };
        let path = dir.join(INFO_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&info)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, factory: &dyn EncoderFactory<T>) -> Result<Self> {
        let (path, info) = read_info(dir)?;
        if info.separate_tagger != (info.variant.family == Family::SeparateTagger) {
            return Err(Error::Checkpoint(format!("{} does not match the saved variant", path.display())));
        }
        Ok(TrainedPipeline {
            variant: info.variant,
            ate: AteModel::load(&dir.join(ATE_FILE), factory)?,
            stage_two: StageTwoModel::load(&dir.join(STAGE_TWO_FILE), factory)?,
            tagger: if info.separate_tagger {
                Some(StageTwoModel::load(&dir.join(TAGGER_FILE), factory)?)
            } else {
                None
            },
        })
    }
}
