//! Transformer encoders for asmote.
//!
//! Both encoder kinds run a BERT-style checkpoint on CPU in `f32` and emit one
//! row per word, taken from the word's first subword. The combined kind adds a
//! trainable BiLSTM on top. When finetuning, the transformer weights are
//! updated with the same Adam rule as the rest of the model.

mod backbone;
mod encoders;
mod model;
mod pieces;

use std::sync::Arc;

use asmote::encoder::{Encoder, EncoderConfig, EncoderFactory, EncoderKind, EncoderRole};
use asmote::training::TrainConfig;
use asmote::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use backbone::{Backbone, Pretrained};
pub use encoders::{BertEncoder, BertState, BiLstmBertEncoder};
pub use model::{Bert, BertConfig, HiddenAct};
pub use pieces::{PieceTokenizer, WordPieces};

pub(crate) fn backend(e: impl std::fmt::Display) -> Error {
    Error::Backend(e.to_string())
}

/// Builds transformer encoders for every role from one loaded checkpoint.
pub struct BertEncoderFactory {
    pretrained: Arc<Pretrained>,
    configs: [EncoderConfig; 3],
}

fn role_index(role: EncoderRole) -> usize {
    match role {
        EncoderRole::Ate => 0,
        EncoderRole::Towe => 1,
        EncoderRole::Atsa => 2,
    }
}

impl BertEncoderFactory {
    /// Loads the checkpoint named by the config's `pretrained_dir`.
    pub fn from_train_config(config: &TrainConfig) -> Result<Self> {
        let dir = config
            .encoder
            .pretrained_dir
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} needs encoder.pretrained_dir", config.variant)))?;
        let pretrained = Arc::new(Pretrained::load(dir)?);
        Self::new(pretrained, config)
    }

    pub fn new(pretrained: Arc<Pretrained>, config: &TrainConfig) -> Result<Self> {
        let configs = [EncoderRole::Ate, EncoderRole::Towe, EncoderRole::Atsa].map(|r| config.encoder_config(r));
        for c in &configs {
            c.validate()?;
            if !c.kind.uses_transformer() {
                return Err(Error::Config(format!("variant {} does not use a transformer", config.variant)));
            }
        }
        Ok(BertEncoderFactory { pretrained, configs })
    }

    pub fn pretrained(&self) -> &Arc<Pretrained> {
        &self.pretrained
    }

    pub fn config(&self, role: EncoderRole) -> &EncoderConfig {
        &self.configs[role_index(role)]
    }

    fn make(
        &self,
        kind: EncoderKind,
        finetune: bool,
        hidden: usize,
        max_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Box<dyn Encoder<f32>>> {
        let bert = BertEncoder::new(self.pretrained.clone(), finetune, max_len)?;
        match kind {
            EncoderKind::Bert => Ok(Box::new(bert)),
            EncoderKind::BilstmBert => Ok(Box::new(BiLstmBertEncoder::new(bert, hidden, rng))),
            EncoderKind::BilstmEmb => Err(Error::Config("word-vector encoders are built by the core factory".into())),
        }
    }
}

impl EncoderFactory<f32> for BertEncoderFactory {
    fn build(&self, role: EncoderRole, rng: &mut ChaCha8Rng) -> Result<Box<dyn Encoder<f32>>> {
        let c = self.config(role);
        self.make(c.kind, c.finetune_pretrained, c.hidden_size, c.max_len, rng)
    }

    fn restore(&self, _role: EncoderRole, state: &serde_json::Value) -> Result<Box<dyn Encoder<f32>>> {
        let s: BertState = serde_json::from_value(state.clone())?;
        if s.pretrained_dir != self.pretrained.dir {
            log::warn!(
                "checkpoint was built from {}, restoring with {}",
                s.pretrained_dir.display(),
                self.pretrained.dir.display()
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.make(s.kind, s.finetune, s.hidden_size.max(1), s.max_len, &mut rng)
    }
}
