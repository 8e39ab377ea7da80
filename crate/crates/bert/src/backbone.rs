use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use asmote::nn::{Adam, TensorStore};
use asmote::{Error, Result};
use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{VarBuilder, VarMap};
use ndarray::Array2;

use crate::backend;
use crate::model::{Bert, BertConfig};
use crate::pieces::{PieceTokenizer, WordPieces};

/// A pretrained checkpoint directory loaded once and shared by every encoder.
pub struct Pretrained {
    pub dir: PathBuf,
    pub config: BertConfig,
    pub tokenizer: PieceTokenizer,
    weights: HashMap<String, Tensor>,
}

impl Pretrained {
    /// Reads `config.json`, `model.safetensors` and the tokenizer from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join("config.json");
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config: BertConfig = serde_json::from_str(&text)?;
        let weights_path = dir.join("model.safetensors");
        if !weights_path.exists() {
            return Err(Error::Config(format!("{} not found", weights_path.display())));
        }
        let raw = candle_core::safetensors::load(&weights_path, &Device::Cpu).map_err(backend)?;
        let mut weights = HashMap::with_capacity(raw.len());
        for (name, t) in raw {
            let name = normalize_name(&name);
            if name.starts_with("embeddings.") || name.starts_with("encoder.") {
                weights.insert(name, t.to_dtype(DType::F32).map_err(backend)?);
            }
        }
        Ok(Pretrained {
            dir: dir.to_path_buf(),
            config,
            tokenizer: PieceTokenizer::load(dir)?,
            weights,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    pub fn pieces(&self, id: &str, words: &[String]) -> Result<WordPieces> {
        self.tokenizer.split(id, words, self.config.max_position_embeddings)
    }
}

fn normalize_name(name: &str) -> String {
    let name = name.strip_prefix("bert.").unwrap_or(name);
    if let Some(stem) = name.strip_suffix(".gamma") {
        format!("{stem}.weight")
    } else if let Some(stem) = name.strip_suffix(".beta") {
        format!("{stem}.bias")
    } else {
        name.to_string()
    }
}

struct TrainVar {
    name: String,
    var: Var,
    grad: Option<Tensor>,
    moments: Option<(Tensor, Tensor)>,
    steps: u64,
}

/// One copy of the transformer. Finetuned copies own their weights as
/// variables; frozen copies share the pretrained tensors.
pub struct Backbone {
    pretrained: Arc<Pretrained>,
    model: Bert,
    vars: Vec<TrainVar>,
}

impl Backbone {
    pub fn new(pretrained: Arc<Pretrained>, finetune: bool) -> Result<Self> {
        let dev = Device::Cpu;
        let (model, vars) = if finetune {
            let map = VarMap::new();
            {
                let mut data = map.data().lock().expect("var map lock");
                for (name, t) in &pretrained.weights {
                    data.insert(name.clone(), Var::from_tensor(t).map_err(backend)?);
                }
            }
            let known = pretrained.weights.len();
            let model = Bert::load(VarBuilder::from_varmap(&map, DType::F32, &dev), &pretrained.config)
                .map_err(backend)?;
            let data = map.data().lock().expect("var map lock");
            if data.len() != known {
                let missing: Vec<&String> = data.keys().filter(|k| !pretrained.weights.contains_key(*k)).collect();
                return Err(Error::Config(format!("pretrained weights lack {missing:?}")));
            }
            let mut vars: Vec<TrainVar> = data
                .iter()
                .map(|(name, var)| TrainVar {
                    name: name.clone(),
                    var: var.clone(),
                    grad: None,
                    moments: None,
                    steps: 0,
                })
                .collect();
            vars.sort_by(|a, b| a.name.cmp(&b.name));
            (model, vars)
        } else {
            let vb = VarBuilder::from_tensors(pretrained.weights.clone(), DType::F32, &dev);
            (Bert::load(vb, &pretrained.config).map_err(backend)?, Vec::new())
        };
        Ok(Backbone {
            pretrained,
            model,
            vars,
        })
    }

    pub fn pretrained(&self) -> &Arc<Pretrained> {
        &self.pretrained
    }

    pub fn finetuned(&self) -> bool {
        !self.vars.is_empty()
    }

    pub fn hidden_size(&self) -> usize {
        self.pretrained.hidden_size()
    }

    /// First-subword hidden states, one row per word. The returned tensor
    /// keeps its graph when finetuning.
    pub fn run(&self, pieces: &WordPieces) -> Result<(Array2<f32>, Tensor)> {
        let dev = Device::Cpu;
        let input = Tensor::new(pieces.ids.as_slice(), &dev).map_err(backend)?;
        let out = self.model.forward(&input).map_err(backend)?;
        let idx = Tensor::new(pieces.first.as_slice(), &dev).map_err(backend)?;
        let mut rows = out.index_select(&idx, 0).map_err(backend)?;
        if !self.finetuned() {
            rows = rows.detach();
        }
        let data: Vec<f32> = rows.flatten_all().and_then(|t| t.to_vec1()).map_err(backend)?;
        let h = Array2::from_shape_vec((pieces.first.len(), self.hidden_size()), data)
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok((h, rows))
    }

    /// Accumulates weight gradients given `dL/drows`.
    pub fn backward(&mut self, rows: &Tensor, grad: &Array2<f32>) -> Result<()> {
        if !self.finetuned() {
            return Ok(());
        }
        let g: Vec<f32> = grad.iter().copied().collect();
        let g = Tensor::from_vec(g, grad.dim(), &Device::Cpu).map_err(backend)?;
        let objective = rows.mul(&g).and_then(|t| t.sum_all()).map_err(backend)?;
        let grads = objective.backward().map_err(backend)?;
        for tv in &mut self.vars {
            if let Some(gr) = grads.get(tv.var.as_tensor()) {
                tv.grad = Some(match tv.grad.take() {
                    Some(acc) => acc.add(gr).map_err(backend)?,
                    None => gr.clone(),
                });
            }
        }
        Ok(())
    }

    /// Same update rule as the core optimizer, applied to every weight that
    /// received a gradient.
    pub fn update(&mut self, opt: &Adam<f32>) -> Result<()> {
        let c = opt.config;
        let scale = opt.grad_scale() as f64;
        for tv in &mut self.vars {
            let Some(g) = tv.grad.take() else { continue };
            tv.steps += 1;
            let alpha = opt.step_size(tv.steps);
            let eps_hat = c.eps * (1.0 - c.beta2.powi(tv.steps as i32)).sqrt();
            let step = || -> candle_core::Result<(Tensor, Tensor, Tensor)> {
                let g = g.affine(scale, 0.0)?;
                let (m, v) = match &tv.moments {
                    Some((m, v)) => (m.clone(), v.clone()),
                    None => (g.zeros_like()?, g.zeros_like()?),
                };
                let m = (m.affine(c.beta1, 0.0)? + g.affine(1.0 - c.beta1, 0.0)?)?;
                let v = (v.affine(c.beta2, 0.0)? + g.sqr()?.affine(1.0 - c.beta2, 0.0)?)?;
                let delta = m.div(&v.sqrt()?.affine(1.0, eps_hat)?)?.affine(alpha, 0.0)?;
                let w = tv.var.as_tensor().sub(&delta)?;
                Ok((w, m, v))
            };
            let (w, m, v) = step().map_err(backend)?;
            tv.var.set(&w).map_err(backend)?;
            tv.moments = Some((m, v));
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for tv in &mut self.vars {
            tv.grad = None;
        }
    }

    /// Finetuned weights only; frozen copies are rebuilt from the pretrained
    /// directory.
    pub fn save(&self, prefix: &str, store: &mut TensorStore<f32>) -> Result<()> {
        for tv in &self.vars {
            let t = tv.var.as_tensor();
            let dims = t.dims();
            let rows = if dims.len() >= 2 { dims[0] } else { 1 };
            let data: Vec<f32> = t.flatten_all().and_then(|t| t.to_vec1()).map_err(backend)?;
            let cols = data.len() / rows.max(1);
            let a = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Backend(e.to_string()))?;
            store.insert(asmote::nn::param_join(prefix, &tv.name), a);
        }
        Ok(())
    }

    pub fn load(&mut self, prefix: &str, store: &TensorStore<f32>) -> Result<()> {
        for tv in &mut self.vars {
            let a = store.get(&asmote::nn::param_join(prefix, &tv.name))?;
            let shape = tv.var.as_tensor().shape().clone();
            if a.len() != shape.elem_count() {
                return Err(Error::Checkpoint(format!("{} has {} values, expected {shape:?}", tv.name, a.len())));
            }
            let t = Tensor::from_iter(a.iter().copied(), &Device::Cpu)
                .and_then(|t| t.reshape(shape))
                .map_err(backend)?;
            tv.var.set(&t).map_err(backend)?;
        }
        Ok(())
    }
}
