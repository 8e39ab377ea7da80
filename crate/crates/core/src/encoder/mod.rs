//! Sentence encoders producing one hidden state per token.
//!
//! The word-embedding BiLSTM lives here; transformer-backed encoders are
//! provided by a separate crate through the same [`Encoder`] trait.

mod bilstm;

use std::any::Any;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, TensorStore};
use crate::scalar::Scalar;

pub use bilstm::{EmbeddingEncoderFactory, WordBiLstmEncoder};

/// Longest sentence (in words, markers included) an encoder accepts by default.
pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    BilstmEmb,
    Bert,
    BilstmBert,
}

impl EncoderKind {
    pub fn uses_transformer(self) -> bool {
        !matches!(self, EncoderKind::BilstmEmb)
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::BilstmEmb => "bilstm_emb",
            EncoderKind::Bert => "bert",
            EncoderKind::BilstmBert => "bilstm_bert",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bilstm_emb" => Ok(EncoderKind::BilstmEmb),
            "bert" => Ok(EncoderKind::Bert),
            "bilstm_bert" => Ok(EncoderKind::BilstmBert),
            other => Err(format!("unknown encoder kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// LSTM units per direction; the hidden state is twice as wide.
    pub hidden_size: usize,
    pub finetune_pretrained: bool,
    /// Word-vector text file (`bilstm_emb`).
    pub embedding_path: Option<PathBuf>,
    /// Directory holding a pretrained transformer (`bert`, `bilstm_bert`).
    pub pretrained_dir: Option<PathBuf>,
    pub finetune_embeddings: bool,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::BilstmEmb,
            hidden_size: 256,
            finetune_pretrained: false,
            embedding_path: None,
            pretrained_dir: None,
            finetune_embeddings: true,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            EncoderKind::BilstmEmb if self.embedding_path.is_none() => {
                Err(Error::Config("bilstm_emb needs an embedding file".into()))
            }
            EncoderKind::BilstmEmb if self.finetune_pretrained => Err(Error::Config(
                "finetune_pretrained only applies to transformer encoders".into(),
            )),
            k if k.uses_transformer() && self.pretrained_dir.is_none() => {
                Err(Error::Config(format!("{k} needs a pretrained model directory")))
            }
            _ if self.hidden_size == 0 || self.max_len == 0 => {
                Err(Error::Config("hidden_size and max_len must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Which sub-model an encoder serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderRole {
    Ate,
    Towe,
    Atsa,
}

/// Opaque forward state handed back to [`Encoder::backward`].
pub struct EncoderTape(Box<dyn Any + Send>);

impl EncoderTape {
    pub fn new<X: Any + Send>(x: X) -> Self {
        EncoderTape(Box::new(x))
    }

    pub fn downcast<X: Any>(self) -> Result<X> {
        self.0
            .downcast::<X>()
            .map(|b| *b)
            .map_err(|_| Error::Backend("tape from a different encoder".into()))
    }
}

pub trait Encoder<T: Scalar>: Send + Sync {
    fn kind(&self) -> EncoderKind;

    /// Width of each output row.
    fn hidden_size(&self) -> usize;

    fn max_len(&self) -> usize;

    /// Hidden states for `tokens` plus the state needed for backpropagation.
    fn forward(&self, id: &str, tokens: &[String]) -> Result<(Array2<T>, EncoderTape)>;

    fn encode(&self, id: &str, tokens: &[String]) -> Result<Array2<T>> {
        Ok(self.forward(id, tokens)?.0)
    }

    /// Accumulates parameter gradients given `dL/dH`.
    fn backward(&mut self, tape: EncoderTape, grad: &Array2<T>) -> Result<()>;

    /// Applies one optimizer step and clears gradients.
    fn update(&mut self, opt: &Adam<T>);

    fn zero_grad(&mut self);

    fn save(&self, prefix: &str, store: &mut TensorStore<T>);

    fn load(&mut self, prefix: &str, store: &TensorStore<T>) -> Result<()>;

    /// Everything besides parameter values needed to rebuild this encoder.
    fn state(&self) -> serde_json::Value;
}

/// Errors if `tokens` is longer than `max`.
pub fn check_length(id: &str, len: usize, max: usize) -> Result<()> {
    if len > max {
        return Err(Error::TooLong {
            id: id.to_string(),
            len,
            max,
        });
    }
    if len == 0 {
        return Err(Error::data(id, "cannot encode an empty sentence"));
    }
    Ok(())
}

/// Creates fresh encoders and restores saved ones.
pub trait EncoderFactory<T: Scalar>: Send + Sync {
    fn build(&self, role: EncoderRole, rng: &mut ChaCha8Rng) -> Result<Box<dyn Encoder<T>>>;

    fn restore(&self, role: EncoderRole, state: &serde_json::Value) -> Result<Box<dyn Encoder<T>>>;
}
