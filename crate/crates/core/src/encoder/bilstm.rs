use std::collections::{BTreeSet, HashSet};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_length, Encoder, EncoderConfig, EncoderFactory, EncoderKind, EncoderRole, EncoderTape};
use crate::error::{Error, Result};
use crate::nn::{Adam, BiLstm, BiLstmTape, Embedding, EmbeddingTape, Module, TensorStore, Vocabulary};
use crate::scalar::Scalar;

/// Word embeddings followed by a BiLSTM.
#[derive(Debug, Clone)]
pub struct WordBiLstmEncoder<T> {
    pub embedding: Embedding<T>,
    pub lstm: BiLstm<T>,
    max_len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct State {
    kind: EncoderKind,
    vocab: Vocabulary,
    embedding_dim: usize,
    hidden_size: usize,
    max_len: usize,
    finetune_embeddings: bool,
}

impl<T: Scalar> WordBiLstmEncoder<T> {
    pub fn new(embedding: Embedding<T>, hidden: usize, max_len: usize, rng: &mut ChaCha8Rng) -> Self {
        let lstm = BiLstm::new(embedding.dim(), hidden, rng);
        WordBiLstmEncoder {
            embedding,
            lstm,
            max_len,
        }
    }

    fn from_state(state: &serde_json::Value) -> Result<Self> {
        let s: State = serde_json::from_value(state.clone())?;
        if s.kind != EncoderKind::BilstmEmb {
            return Err(Error::Checkpoint(format!("expected a bilstm_emb encoder, found {}", s.kind)));
        }
        let mut embedding = Embedding::empty(s.vocab, s.embedding_dim);
        embedding.table.frozen = !s.finetune_embeddings;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(WordBiLstmEncoder::new(embedding, s.hidden_size, s.max_len, &mut rng))
    }
}

impl<T: Scalar> Module<T> for WordBiLstmEncoder<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &crate::nn::Param<T>)) {
        self.embedding.visit_params(&crate::nn::param_join(prefix, "embedding"), f);
        self.lstm.visit_params(&crate::nn::param_join(prefix, "lstm"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut crate::nn::Param<T>)) {
        self.embedding.visit_params_mut(&crate::nn::param_join(prefix, "embedding"), f);
        self.lstm.visit_params_mut(&crate::nn::param_join(prefix, "lstm"), f);
    }
}

impl<T: Scalar> Encoder<T> for WordBiLstmEncoder<T> {
    fn kind(&self) -> EncoderKind {
        EncoderKind::BilstmEmb
    }

    fn hidden_size(&self) -> usize {
        self.lstm.output_size()
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn forward(&self, id: &str, tokens: &[String]) -> Result<(Array2<T>, EncoderTape)> {
        check_length(id, tokens.len(), self.max_len)?;
        let (x, emb_tape) = self.embedding.forward(tokens);
        let (h, lstm_tape) = self.lstm.run(&x);
        Ok((h, EncoderTape::new((emb_tape, lstm_tape))))
    }

    fn backward(&mut self, tape: EncoderTape, grad: &Array2<T>) -> Result<()> {
        let (emb_tape, lstm_tape): (EmbeddingTape, BiLstmTape<T>) = tape.downcast()?;
        let dx = self.lstm.backprop(&lstm_tape, grad);
        self.embedding.backward(&emb_tape, &dx);
        Ok(())
    }

    fn update(&mut self, opt: &Adam<T>) {
        self.visit_params_mut("", &mut |_, p| opt.update(p));
    }

    fn zero_grad(&mut self) {
        Module::zero_grad(self);
    }

    fn save(&self, prefix: &str, store: &mut TensorStore<T>) {
        store.export(self, prefix);
    }

    fn load(&mut self, prefix: &str, store: &TensorStore<T>) -> Result<()> {
        store.import(self, prefix)
    }

    fn state(&self) -> serde_json::Value {
        serde_json::to_value(State {
            kind: EncoderKind::BilstmEmb,
            vocab: self.embedding.vocab().clone(),
            embedding_dim: self.embedding.dim(),
            hidden_size: self.lstm.forward.hidden_size(),
            max_len: self.max_len,
            finetune_embeddings: !self.embedding.table.frozen,
        })
        .expect("encoder state serializes")
    }
}

/// Builds [`WordBiLstmEncoder`]s sharing one loaded embedding table.
pub struct EmbeddingEncoderFactory<T> {
    config: EncoderConfig,
    base: Embedding<T>,
}

impl<T: Scalar> EmbeddingEncoderFactory<T> {
    /// Loads vectors for `words` from the configured embedding file.
    /// `train_words` missing from the file get their own trainable rows.
    pub fn load(config: EncoderConfig, words: &BTreeSet<String>, train_words: &HashSet<String>) -> Result<Self> {
        config.validate()?;
        if config.kind != EncoderKind::BilstmEmb {
            return Err(Error::Config(format!(
                "{} encoders are provided by the transformer backend",
                config.kind
            )));
        }
        let path = config.embedding_path.as_ref().expect("validated");
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let base = Embedding::from_text_file(path, words, train_words, &mut rng)?;
        Ok(EmbeddingEncoderFactory { config, base })
    }

    /// Uses an in-memory table instead of a file.
    pub fn from_embedding(config: EncoderConfig, base: Embedding<T>) -> Self {
        EmbeddingEncoderFactory { config, base }
    }

    /// A factory that can only restore saved encoders, which carry their own
    /// vocabulary and weights.
    pub fn restore_only() -> Self {
        EmbeddingEncoderFactory {
            config: EncoderConfig::default(),
            base: Embedding::empty(Vec::<String>::new().into(), 1),
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }
}

impl<T: Scalar> EncoderFactory<T> for EmbeddingEncoderFactory<T> {
    fn build(&self, _role: EncoderRole, rng: &mut ChaCha8Rng) -> Result<Box<dyn Encoder<T>>> {
        let mut embedding = self.base.clone();
        embedding.table.frozen = !self.config.finetune_embeddings;
        Ok(Box::new(WordBiLstmEncoder::new(
            embedding,
            self.config.hidden_size,
            self.config.max_len,
            rng,
        )))
    }

    fn restore(&self, _role: EncoderRole, state: &serde_json::Value) -> Result<Box<dyn Encoder<T>>> {
        Ok(Box::new(WordBiLstmEncoder::<T>::from_state(state)?))
    }
}
