//! Encoders and heads wired into the two trainable stages, plus checkpoints.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{s, Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ate::{ate_predict, sequence_nll_from_logits, AteHead, AtePrediction};
use crate::atsa::{aspect_repr, aspect_repr_backward, atsa_loss_from_logits, concat_repr, opinion_repr, AtsaHead};
use crate::corpus::{Sentiment, Span};
use crate::encoder::{Encoder, EncoderFactory, EncoderRole};
use crate::error::{Error, Result};
use crate::nn::{Adam, Module, TensorStore};
use crate::scalar::Scalar;
use crate::tagging::{encode_bio, MarkedSentence, TagSequence};
use crate::towe_sla::{
    prediction_from_logits, sla_attention, sla_backward, softmax_rows_backward, AttentionVector, SlaMode,
    TowePrediction,
};

const META_KEY: &str = "asmote.model";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    stage: String,
    #[serde(default)]
    stage_two: Option<StageTwoConfig>,
    encoders: Vec<(EncoderRole, serde_json::Value)>,
}

fn read_meta<T: Scalar>(store: &TensorStore<T>, stage: &str) -> Result<CheckpointMeta> {
    let raw = store
        .metadata
        .get(META_KEY)
        .ok_or_else(|| Error::Checkpoint("missing model metadata".into()))?;
    let meta: CheckpointMeta = serde_json::from_str(raw)?;
    if meta.stage != stage {
        return Err(Error::Checkpoint(format!("expected a {stage} checkpoint, found {}", meta.stage)));
    }
    Ok(meta)
}

fn encoder_state(meta: &CheckpointMeta, role: EncoderRole) -> Result<&serde_json::Value> {
    meta.encoders
        .iter()
        .find(|(r, _)| *r == role)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::Checkpoint(format!("no {role:?} encoder in checkpoint")))
}

/// Stage one: encoder plus tagging head over the unmarked sentence.
pub struct AteModel<T: Scalar> {
    pub encoder: Box<dyn Encoder<T>>,
    pub head: AteHead<T>,
}

impl<T: Scalar> AteModel<T> {
    pub fn new(encoder: Box<dyn Encoder<T>>, rng: &mut ChaCha8Rng) -> Self {
        let head = AteHead::new(encoder.hidden_size(), rng);
        AteModel { encoder, head }
    }

    pub fn build(factory: &dyn EncoderFactory<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let encoder = factory.build(EncoderRole::Ate, rng)?;
        Ok(Self::new(encoder, rng))
    }

    pub fn predict(&self, id: &str, tokens: &[String]) -> Result<AtePrediction<T>> {
        let h = self.encoder.encode(id, tokens)?;
        Ok(ate_predict(&self.head, &h))
    }

    /// Forward and backward for one sentence; gradients accumulate until
    /// [`AteModel::update`]. Returns the summed tag loss.
    pub fn accumulate(&mut self, id: &str, tokens: &[String], gold: &[Span]) -> Result<T> {
        let gold = encode_bio(gold, tokens.len())?;
        let (h, tape) = self.encoder.forward(id, tokens)?;
        let (loss, dlogits) = sequence_nll_from_logits(&self.head.logits(&h), &gold)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("tagging loss is {loss} on sentence {id}")));
        }
        let dh = self.head.backward(&h, &dlogits);
        self.encoder.backward(tape, &dh)?;
        Ok(loss)
    }

    pub fn update(&mut self, opt: &Adam<T>) {
        self.encoder.update(opt);
        self.head.visit_params_mut("", &mut |_, p| opt.update(p));
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        Module::zero_grad(&mut self.head);
    }

    pub fn to_store(&self) -> TensorStore<T> {
        let mut store = TensorStore::new();
        self.encoder.save("encoder", &mut store);
        store.export(&self.head, "head");
        let meta = CheckpointMeta {
            stage: "ate".into(),
            stage_two: None,
            encoders: vec![(EncoderRole::Ate, self.encoder.state())],
        };
        store
            .metadata
            .insert(META_KEY.into(), serde_json::to_string(&meta).expect("metadata serializes"));
        store
    }

    pub fn from_store(store: &TensorStore<T>, factory: &dyn EncoderFactory<T>) -> Result<Self> {
        let meta = read_meta(store, "ate")?;
        let mut encoder = factory.restore(EncoderRole::Ate, encoder_state(&meta, EncoderRole::Ate)?)?;
        encoder.load("encoder", store)?;
        let mut head = AteHead::zeros(encoder.hidden_size());
        store.import(&mut head, "head")?;
        Ok(AteModel { encoder, head })
    }

    /// Overwrites parameter values from a store made by [`AteModel::to_store`].
    pub fn restore_params(&mut self, store: &TensorStore<T>) -> Result<()> {
        self.encoder.load("encoder", store)?;
        store.import(&mut self.head, "head")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_store().save(path)
    }

    pub fn load(path: &Path, factory: &dyn EncoderFactory<T>) -> Result<Self> {
        Self::from_store(&TensorStore::load(path)?, factory)
    }
}

/// Wiring of the second stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTwoConfig {
    /// Attention input, or `None` to classify from the aspect alone.
    pub sla: Option<SlaMode>,
    /// Treat attention weights as constants when backpropagating the
    /// sentiment loss.
    pub detach: bool,
    pub dropout: f64,
}

impl Default for StageTwoConfig {
    fn default() -> Self {
        StageTwoConfig {
            sla: Some(SlaMode::Logits),
            detach: false,
            dropout: 0.5,
        }
    }
}

/// Which losses a training step optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Towe,
    Atsa,
    Joint,
}

impl Phase {
    fn trains_towe(self) -> bool {
        matches!(self, Phase::Towe | Phase::Joint)
    }

    fn trains_atsa(self) -> bool {
        matches!(self, Phase::Atsa | Phase::Joint)
    }
}

/// One training example for the second stage.
#[derive(Debug, Clone)]
pub struct StageTwoInstance {
    pub id: String,
    pub marked: MarkedSentence,
    /// Gold opinion tags over the marked sentence.
    pub opinions: TagSequence,
    pub sentiment: Sentiment,
}

impl StageTwoInstance {
    pub fn new(id: &str, tokens: &[String], aspect: Span, opinions: &BTreeSet<Span>, sentiment: Sentiment) -> Result<Self> {
        aspect.check_bounds(tokens.len())?;
        let marked = crate::tagging::mark_aspect(tokens, aspect);
        let opinions = marked.encode_original(opinions)?;
        Ok(StageTwoInstance {
            id: id.to_string(),
            marked,
            opinions,
            sentiment,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTwoLoss<T> {
    pub towe: T,
    pub atsa: T,
}

impl<T: Scalar> StageTwoLoss<T> {
    pub fn total(&self) -> T {
        crate::atsa::stage_two_loss(self.towe, self.atsa)
    }
}

#[derive(Debug, Clone)]
pub struct StageTwoOutput<T> {
    pub towe: TowePrediction<T>,
    pub attention: Option<AttentionVector<T>>,
    pub sentiment_probs: Array1<T>,
    pub sentiment: Sentiment,
}

/// Opinion tagger and sentiment classifier over the marked sentence, each
/// with its own encoder.
pub struct StageTwoModel<T: Scalar> {
    pub config: StageTwoConfig,
    pub towe_encoder: Box<dyn Encoder<T>>,
    pub towe_head: crate::towe_sla::ToweHead<T>,
    pub atsa_encoder: Box<dyn Encoder<T>>,
    pub atsa_head: AtsaHead<T>,
}

fn atsa_head_shape(config: &StageTwoConfig, hidden: usize) -> (usize, usize) {
    let inputs = if config.sla.is_some() { 2 * hidden } else { hidden };
    (inputs, hidden)
}

impl<T: Scalar> StageTwoModel<T> {
    pub fn new(
        config: StageTwoConfig,
        towe_encoder: Box<dyn Encoder<T>>,
        atsa_encoder: Box<dyn Encoder<T>>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let towe_head = crate::towe_sla::ToweHead::new(towe_encoder.hidden_size(), rng);
        let (inputs, hidden) = atsa_head_shape(&config, atsa_encoder.hidden_size());
        let atsa_head = AtsaHead::new(inputs, hidden, config.dropout, rng);
        StageTwoModel {
            config,
            towe_encoder,
            towe_head,
            atsa_encoder,
            atsa_head,
        }
    }

    pub fn build(config: StageTwoConfig, factory: &dyn EncoderFactory<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let towe = factory.build(EncoderRole::Towe, rng)?;
        let atsa = factory.build(EncoderRole::Atsa, rng)?;
        Ok(Self::new(config, towe, atsa, rng))
    }

    /// Opinion tagging only.
    pub fn predict_opinions(&self, id: &str, marked: &MarkedSentence) -> Result<TowePrediction<T>> {
        let h_o = self.towe_encoder.encode(id, &marked.tokens)?;
        Ok(prediction_from_logits(self.towe_head.logits(&h_o), marked))
    }

    pub fn predict(&self, id: &str, marked: &MarkedSentence) -> Result<StageTwoOutput<T>> {
        let h_o = self.towe_encoder.encode(id, &marked.tokens)?;
        let towe = prediction_from_logits(self.towe_head.logits(&h_o), marked);
        let h_s = self.atsa_encoder.encode(id, &marked.tokens)?;
        let r_a = aspect_repr(&h_s, marked.aspect)?;
        let (attention, r_o) = match self.config.sla {
            Some(mode) => {
                let att = sla_attention(towe.sla_input(mode));
                let r_o = opinion_repr(&h_s, &att.alpha)?;
                (Some(att), Some(r_o))
            }
            None => (None, None),
        };
        let fwd = self
            .atsa_head
            .forward::<ChaCha8Rng>(concat_repr(&r_a, r_o.as_ref()), None);
        Ok(StageTwoOutput {
            sentiment: fwd.sentiment(),
            sentiment_probs: fwd.probs,
            towe,
            attention,
        })
    }

    /// Evaluation-mode losses. With `fixed_alpha`, the attention weights are
    /// replaced by the given vector.
    pub fn losses(&self, inst: &StageTwoInstance, fixed_alpha: Option<&Array1<T>>) -> Result<StageTwoLoss<T>> {
        let h_o = self.towe_encoder.encode(&inst.id, &inst.marked.tokens)?;
        let logits = self.towe_head.logits(&h_o);
        let (towe, _) = sequence_nll_from_logits(&logits, &inst.opinions)?;
        let h_s = self.atsa_encoder.encode(&inst.id, &inst.marked.tokens)?;
        let r_a = aspect_repr(&h_s, inst.marked.aspect)?;
        let r_o = match (self.config.sla, fixed_alpha) {
            (None, _) => None,
            (Some(_), Some(a)) => Some(opinion_repr(&h_s, a)?),
            (Some(mode), None) => {
                let probs = crate::nn::ops::softmax_rows(&logits);
                let input = if mode == SlaMode::Logits { &logits } else { &probs };
                Some(opinion_repr(&h_s, &sla_attention(input).alpha)?)
            }
        };
        let fwd = self
            .atsa_head
            .forward::<ChaCha8Rng>(concat_repr(&r_a, r_o.as_ref()), None);
        let (atsa, _) = atsa_loss_from_logits(&fwd.logits, inst.sentiment);
        Ok(StageTwoLoss { towe, atsa })
    }

    /// Forward and backward for one instance under `phase`. Dropout is used
    /// only when `rng` is given. Losses outside the phase are reported as 0.
    pub fn accumulate(
        &mut self,
        inst: &StageTwoInstance,
        phase: Phase,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<StageTwoLoss<T>> {
        let tokens = &inst.marked.tokens;
        let needs_towe = phase.trains_towe() || self.config.sla.is_some();
        let mut loss = StageTwoLoss {
            towe: T::zero(),
            atsa: T::zero(),
        };

        let mut towe_state = None;
        if needs_towe {
            let (h_o, tape) = self.towe_encoder.forward(&inst.id, tokens)?;
            let logits = self.towe_head.logits(&h_o);
            let (l, dlogits) = sequence_nll_from_logits(&logits, &inst.opinions)?;
            let dlogits = if phase.trains_towe() {
                loss.towe = l;
                dlogits
            } else {
                Array2::zeros(logits.raw_dim())
            };
            towe_state = Some((h_o, tape, logits, dlogits));
        }

        if phase.trains_atsa() {
            let (h_s, tape_s) = self.atsa_encoder.forward(&inst.id, tokens)?;
            let aspect = inst.marked.aspect;
            let r_a = aspect_repr(&h_s, aspect)?;
            let mut attention = None;
            if let (Some(mode), Some((_, _, logits, _))) = (self.config.sla, towe_state.as_ref()) {
                let probs = crate::nn::ops::softmax_rows(logits);
                let att = sla_attention(if mode == SlaMode::Logits { logits } else { &probs });
                attention = Some((att, probs));
            }
            let r_o = match &attention {
                Some((att, _)) => Some(opinion_repr(&h_s, &att.alpha)?),
                None => None,
            };
            let fwd = self.atsa_head.forward(concat_repr(&r_a, r_o.as_ref()), rng);
            let (l, dlogits) = atsa_loss_from_logits(&fwd.logits, inst.sentiment);
            loss.atsa = l;
            let dr = self.atsa_head.backward(&fwd, &dlogits);
            let hidden = h_s.ncols();
            let dr_a = dr.slice(s![..hidden]);
            let mut dh_s = aspect_repr_backward(h_s.nrows(), aspect, dr_a);
            if let Some((att, probs)) = &attention {
                let dr_o = dr.slice(s![hidden..]);
                for (i, &a) in att.alpha.iter().enumerate() {
                    dh_s.row_mut(i).scaled_add(a, &dr_o);
                }
                if !self.config.detach && phase.trains_towe() {
                    let dalpha: Array1<T> = h_s.dot(&dr_o);
                    let dinput = sla_backward(att, &dalpha);
                    let dlogits_sla = match self.config.sla {
                        Some(SlaMode::Probabilities) => softmax_rows_backward(probs, &dinput),
                        _ => dinput,
                    };
                    let (_, _, _, dl) = towe_state.as_mut().expect("attention implies tagger state");
                    *dl += &dlogits_sla;
                }
            }
            self.atsa_encoder.backward(tape_s, &dh_s)?;
        }

        if let Some((h_o, tape, _, dlogits)) = towe_state {
            if phase.trains_towe() {
                let dh = self.towe_head.backward(&h_o, &dlogits);
                self.towe_encoder.backward(tape, &dh)?;
            }
        }

        if !loss.total().is_finite() {
            return Err(Error::Diverged(format!(
                "second-stage loss is {} (tagging {}, sentiment {}) on sentence {}",
                loss.total(),
                loss.towe,
                loss.atsa,
                inst.id
            )));
        }
        Ok(loss)
    }

    /// Optimizer step on the parts trained in `phase`; other gradients are
    /// cleared.
    pub fn update(&mut self, opt: &Adam<T>, phase: Phase) {
        if phase.trains_towe() {
            self.towe_encoder.update(opt);
            self.towe_head.visit_params_mut("", &mut |_, p| opt.update(p));
        } else {
            self.towe_encoder.zero_grad();
            Module::zero_grad(&mut self.towe_head);
        }
        if phase.trains_atsa() {
            self.atsa_encoder.update(opt);
            self.atsa_head.visit_params_mut("", &mut |_, p| opt.update(p));
        } else {
            self.atsa_encoder.zero_grad();
            Module::zero_grad(&mut self.atsa_head);
        }
    }

    pub fn zero_grad(&mut self) {
        self.towe_encoder.zero_grad();
        self.atsa_encoder.zero_grad();
        Module::zero_grad(&mut self.towe_head);
        Module::zero_grad(&mut self.atsa_head);
    }

    pub fn to_store(&self) -> TensorStore<T> {
        let mut store = TensorStore::new();
        self.towe_encoder.save("towe.encoder", &mut store);
        store.export(&self.towe_head, "towe.head");
        self.atsa_encoder.save("atsa.encoder", &mut store);
        store.export(&self.atsa_head, "atsa.head");
        let meta = CheckpointMeta {
            stage: "stage_two".into(),
            stage_two: Some(self.config),
            encoders: vec![
                (EncoderRole::Towe, self.towe_encoder.state()),
                (EncoderRole::Atsa, self.atsa_encoder.state()),
            ],
        };
        store
            .metadata
            .insert(META_KEY.into(), serde_json::to_string(&meta).expect("metadata serializes"));
        store
    }

    pub fn from_store(store: &TensorStore<T>, factory: &dyn EncoderFactory<T>) -> Result<Self> {
        let meta = read_meta(store, "stage_two")?;
        let config = meta
            .stage_two
            .ok_or_else(|| Error::Checkpoint("missing second-stage config".into()))?;
        let mut towe_encoder = factory.restore(EncoderRole::Towe, encoder_state(&meta, EncoderRole::Towe)?)?;
        towe_encoder.load("towe.encoder", store)?;
        let mut atsa_encoder = factory.restore(EncoderRole::Atsa, encoder_state(&meta, EncoderRole::Atsa)?)?;
        atsa_encoder.load("atsa.encoder", store)?;
        let mut towe_head = crate::towe_sla::ToweHead::zeros(towe_encoder.hidden_size());
        store.import(&mut towe_head, "towe.head")?;
        let (inputs, hidden) = atsa_head_shape(&config, atsa_encoder.hidden_size());
        let mut atsa_head = AtsaHead::zeros(inputs, hidden, config.dropout);
        store.import(&mut atsa_head, "atsa.head")?;
        Ok(StageTwoModel {
            config,
            towe_encoder,
            towe_head,
            atsa_encoder,
            atsa_head,
        })
    }

    /// Overwrites parameter values from a store made by
    /// [`StageTwoModel::to_store`].
    pub fn restore_params(&mut self, store: &TensorStore<T>) -> Result<()> {
        self.towe_encoder.load("towe.encoder", store)?;
        store.import(&mut self.towe_head, "towe.head")?;
        self.atsa_encoder.load("atsa.encoder", store)?;
        store.import(&mut self.atsa_head, "atsa.head")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_store().save(path)
    }

    pub fn load(path: &Path, factory: &dyn EncoderFactory<T>) -> Result<Self> {
        Self::from_store(&TensorStore::load(path)?, factory)
    }
}
