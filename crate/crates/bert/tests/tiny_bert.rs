#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::sync::Arc;

use asmote::corpus::{SplitName, Span};
use asmote::encoder::{Encoder, EncoderFactory, EncoderRole};
use asmote::model::AteModel;
use asmote::nn::{Adam, AdamConfig};
use asmote::training::{train_stage_two, Stage, TrainConfig};
use asmote::Error;
use asmote_bert::{Bert, BertConfig, BertEncoder, BertEncoderFactory, Pretrained};
use candle_core::{DType, Device};
use candle_nn::{VarBuilder, VarMap};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HIDDEN: usize = 16;
const POSITIONS: usize = 40;

/// Writes a randomly initialized two-layer checkpoint with a WordPiece
/// vocabulary covering the fixture.
fn tiny_checkpoint(dir: &Path) {
    let split = common::fixture(SplitName::Train);
    let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "#", "$", "##s", "'"]
        .map(String::from)
        .to_vec();
    let words: Vec<String> = common::vocabulary(&split).0.into_iter().filter(|w| !vocab.contains(w)).collect();
    vocab.extend(words);
    std::fs::write(dir.join("vocab.txt"), vocab.join("\n")).unwrap();
    let config = serde_json::json!({
        "vocab_size": vocab.len(),
        "hidden_size": HIDDEN,
        "num_hidden_layers": 2,
        "num_attention_heads": 2,
        "intermediate_size": 32,
        "hidden_act": "gelu",
        "hidden_dropout_prob": 0.1,
        "max_position_embeddings": POSITIONS,
        "type_vocab_size": 2,
        "initializer_range": 0.02,
        "layer_norm_eps": 1e-12,
        "pad_token_id": 0,
        "classifier_dropout": null,
        "model_type": "bert"
    });
    std::fs::write(dir.join("config.json"), config.to_string()).unwrap();
    let parsed: BertConfig = serde_json::from_value(config).unwrap();
    let map = VarMap::new();
    Bert::load(VarBuilder::from_varmap(&map, DType::F32, &Device::Cpu), &parsed).unwrap();
    map.save(dir.join("model.safetensors")).unwrap();
}

fn pretrained(dir: &Path) -> Arc<Pretrained> {
    tiny_checkpoint(dir);
    Arc::new(Pretrained::load(dir).unwrap())
}

fn train_config(dir: &Path, variant: &str) -> TrainConfig {
    TrainConfig::from_toml_str(&format!(
        "variant = \"{variant}\"\nbatch_size = 4\nlearning_rate = 0.01\nmax_epochs = 2\nruns = 1\n\
         [encoder]\nhidden_size = 8\npretrained_dir = \"{}\"\n",
        dir.display()
    ))
    .unwrap()
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn objective(h: &Array2<f32>, g: &Array2<f32>) -> f32 {
    (h * g).sum()
}

#[test]
fn first_subword_pooling_and_markers() {
    let dir = tempfile::tempdir().unwrap();
    let p = pretrained(dir.path());
    let pieces = p.pieces("s", &words("the # lobsters $ were zzqx")).unwrap();
    let tok = &p.tokenizer;
    let id = |w: &str| tok.word_ids(w).unwrap();
    assert_eq!(id("lobsters").len(), 2);
    assert_eq!(pieces.first, vec![1, 2, 3, 5, 6, 7]);
    assert_eq!(pieces.ids.len(), 9);
    assert_eq!(pieces.ids[3], id("lobster")[0]);
    assert_eq!(pieces.ids[2], id("#")[0]);
    assert_eq!(id("zzqx"), vec![1]);
    assert_eq!(tok.markers(), ("#", "$"));

    let long: Vec<String> = (0..POSITIONS).map(|_| "lobsters".to_string()).collect();
    assert!(matches!(p.pieces("long", &long), Err(Error::TooLong { .. })));
}

#[test]
fn shapes_follow_the_kind() {
    let dir = tempfile::tempdir().unwrap();
    let p = pretrained(dir.path());
    let f = BertEncoderFactory::new(p, &train_config(dir.path(), "AGF^B")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = words("the # bread $ is top notch");
    let towe = f.build(EncoderRole::Towe, &mut rng).unwrap();
    let atsa = f.build(EncoderRole::Atsa, &mut rng).unwrap();
    assert_eq!(towe.encode("s", &t).unwrap().dim(), (7, 16));
    assert_eq!(atsa.encode("s", &t).unwrap().dim(), (7, HIDDEN));
    assert_eq!(towe.encode("s", &t).unwrap(), towe.encode("s", &t).unwrap());
}

#[test]
fn frozen_weights_do_not_move_and_finetuned_ones_descend() {
    let dir = tempfile::tempdir().unwrap();
    let p = pretrained(dir.path());
    let t = words("service was slow but the food was delicious .");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Array2::from_shape_fn((t.len(), HIDDEN), |_| rng.random_range(-1.0f32..1.0));
    let opt = {
        let mut o = Adam::new(AdamConfig { lr: 1e-3, ..AdamConfig::default() });
        o.begin_step(1.0);
        o
    };

    let mut frozen = BertEncoder::new(p.clone(), false, 64).unwrap();
    let (h0, tape) = frozen.forward("s", &t).unwrap();
    frozen.backward(tape, &g).unwrap();
    frozen.update(&opt);
    assert_eq!(frozen.encode("s", &t).unwrap(), h0);

    let mut tuned = BertEncoder::new(p, true, 64).unwrap();
    let (h0, tape) = tuned.forward("s", &t).unwrap();
    tuned.backward(tape, &g).unwrap();
    tuned.update(&opt);
    let h1 = tuned.encode("s", &t).unwrap();
    assert!(objective(&h1, &g) < objective(&h0, &g), "{} !< {}", objective(&h1, &g), objective(&h0, &g));
}

#[test]
fn finetuned_checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let p = pretrained(dir.path());
    let f = BertEncoderFactory::new(p, &train_config(dir.path(), "AGF^BF")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ate = AteModel::build(&f, &mut rng).unwrap();
    let t = words("great pizza and friendly staff .");
    let mut opt = Adam::new(AdamConfig { lr: 0.01, ..AdamConfig::default() });
    ate.accumulate("s", &t, &[Span::new(1, 2), Span::new(4, 5)]).unwrap();
    opt.begin_step(1.0);
    ate.update(&opt);

    let path = dir.path().join("ate.safetensors");
    ate.save(&path).unwrap();
    let back = AteModel::load(&path, &f as &dyn EncoderFactory<f32>).unwrap();
    assert_eq!(back.predict("s", &t).unwrap().probs, ate.predict("s", &t).unwrap().probs);
    let fresh = AteModel::build(&f, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_ne!(fresh.encoder.encode("s", &t).unwrap(), ate.encoder.encode("s", &t).unwrap());
}

#[test]
fn joint_training_runs_on_a_frozen_transformer() {
    let dir = tempfile::tempdir().unwrap();
    let p = pretrained(dir.path());
    let config = train_config(dir.path(), "AGF_S^B");
    let f = BertEncoderFactory::new(p, &config).unwrap();
    let data = common::fixture(SplitName::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let out = train_stage_two(&data, &data, &config, &f, &mut rng).unwrap();
    assert_eq!(out.log.stages(), vec![Stage::Towe, Stage::Joint]);
    assert!(out.log.epochs.iter().all(|e| e.train_loss.is_finite()));
}

#[test]
fn word_vector_variants_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = pretrained(dir.path());
    let mut config = train_config(dir.path(), "AGF^B");
    config.variant = "AGF".parse().unwrap();
    config.encoder.embedding_path = Some("vectors.txt".into());
    assert!(BertEncoderFactory::new(p, &config).is_err());
}
