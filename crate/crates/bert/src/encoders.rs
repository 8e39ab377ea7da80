use std::sync::Arc;

use asmote::encoder::{check_length, Encoder, EncoderKind, EncoderTape};
use asmote::nn::{param_join, Adam, BiLstm, BiLstmTape, Module, TensorStore};
use asmote::Result;
use candle_core::Tensor;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, Pretrained};

/// Rebuild information stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BertState {
    pub kind: EncoderKind,
    pub pretrained_dir: std::path::PathBuf,
    pub finetune: bool,
    /// Per-direction LSTM width; unused by the plain transformer kind.
    pub hidden_size: usize,
    pub max_len: usize,
}

/// Transformer hidden states, one row per word (its first subword).
pub struct BertEncoder {
    backbone: Backbone,
    max_len: usize,
}

impl BertEncoder {
    pub fn new(pretrained: Arc<Pretrained>, finetune: bool, max_len: usize) -> Result<Self> {
        Ok(BertEncoder {
            backbone: Backbone::new(pretrained, finetune)?,
            max_len,
        })
    }

    pub fn finetuned(&self) -> bool {
        self.backbone.finetuned()
    }

    fn state_with(&self, kind: EncoderKind, hidden_size: usize) -> serde_json::Value {
        serde_json::to_value(BertState {
            kind,
            pretrained_dir: self.backbone.pretrained().dir.clone(),
            finetune: self.finetuned(),
            hidden_size,
            max_len: self.max_len,
        })
        .expect("encoder state serializes")
    }
}

impl Encoder<f32> for BertEncoder {
    fn kind(&self) -> EncoderKind {
        EncoderKind::Bert
    }

    fn hidden_size(&self) -> usize {
        self.backbone.hidden_size()
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn forward(&self, id: &str, tokens: &[String]) -> Result<(Array2<f32>, EncoderTape)> {
        check_length(id, tokens.len(), self.max_len)?;
        let pieces = self.backbone.pretrained().pieces(id, tokens)?;
        let (h, rows) = self.backbone.run(&pieces)?;
        Ok((h, EncoderTape::new(rows)))
    }

    fn backward(&mut self, tape: EncoderTape, grad: &Array2<f32>) -> Result<()> {
        let rows: Tensor = tape.downcast()?;
        self.backbone.backward(&rows, grad)
    }

    fn update(&mut self, opt: &Adam<f32>) {
        if let Err(e) = self.backbone.update(opt) {
            panic!("transformer update failed: {e}");
        }
    }

    fn zero_grad(&mut self) {
        self.backbone.zero_grad();
    }

    fn save(&self, prefix: &str, store: &mut TensorStore<f32>) {
        self.backbone
            .save(&param_join(prefix, "bert"), store)
            .expect("transformer weights export");
    }

    fn load(&mut self, prefix: &str, store: &TensorStore<f32>) -> Result<()> {
        self.backbone.load(&param_join(prefix, "bert"), store)
    }

    fn state(&self) -> serde_json::Value {
        self.state_with(EncoderKind::Bert, 0)
    }
}

/// Transformer features fed through a word-level BiLSTM.
pub struct BiLstmBertEncoder {
    bert: BertEncoder,
    pub lstm: BiLstm<f32>,
}

impl BiLstmBertEncoder {
    pub fn new(bert: BertEncoder, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let inputs = bert.hidden_size();
        BiLstmBertEncoder {
            bert,
            lstm: BiLstm::new(inputs, hidden, rng),
        }
    }
}

impl Encoder<f32> for BiLstmBertEncoder {
    fn kind(&self) -> EncoderKind {
        EncoderKind::BilstmBert
    }

    fn hidden_size(&self) -> usize {
        self.lstm.output_size()
    }

    fn max_len(&self) -> usize {
        self.bert.max_len
    }

    fn forward(&self, id: &str, tokens: &[String]) -> Result<(Array2<f32>, EncoderTape)> {
        let (x, bert_tape) = self.bert.forward(id, tokens)?;
        let (h, lstm_tape) = self.lstm.run(&x);
        Ok((h, EncoderTape::new((bert_tape, lstm_tape))))
    }

    fn backward(&mut self, tape: EncoderTape, grad: &Array2<f32>) -> Result<()> {
        let (bert_tape, lstm_tape): (EncoderTape, BiLstmTape<f32>) = tape.downcast()?;
        let dx = self.lstm.backprop(&lstm_tape, grad);
        if self.bert.finetuned() {
            self.bert.backward(bert_tape, &dx)?;
        }
        Ok(())
    }

    fn update(&mut self, opt: &Adam<f32>) {
        self.lstm.visit_params_mut("", &mut |_, p| opt.update(p));
        self.bert.update(opt);
    }

    fn zero_grad(&mut self) {
        Module::zero_grad(&mut self.lstm);
        self.bert.zero_grad();
    }

    fn save(&self, prefix: &str, store: &mut TensorStore<f32>) {
        store.export(&self.lstm, &param_join(prefix, "lstm"));
        self.bert.save(prefix, store);
    }

    fn load(&mut self, prefix: &str, store: &TensorStore<f32>) -> Result<()> {
        store.import(&mut self.lstm, &param_join(prefix, "lstm"))?;
        self.bert.load(prefix, store)
    }

    fn state(&self) -> serde_json::Value {
        self.bert
            .state_with(EncoderKind::BilstmBert, self.lstm.forward.hidden_size())
    }
}
