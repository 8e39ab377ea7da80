mod common;

use asmote::corpus::SplitName;
use asmote::encoder::{EmbeddingEncoderFactory, EncoderFactory, EncoderRole};
use asmote::model::{StageTwoConfig, StageTwoModel};
use asmote::nn::{Adam, AdamConfig};
use asmote::tagging::mark_aspect;
use asmote::training::{ate_examples, train_stage_one, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Largest deviation of any attention weight from `1/n` on the fixture for an
/// untrained joint model; measured at 0.0073 (seed 9).
const UNTRAINED_ATTENTION_SPREAD: f64 = 0.02;

fn factory(dir: &std::path::Path, extra: &str) -> (TrainConfig, EmbeddingEncoderFactory<f64>) {
    let split = common::fixture(SplitName::Train);
    let emb = dir.join("vectors.txt");
    common::write_embeddings(&emb, &split, 8, 5);
    let toml = format!(
        "batch_size = 4\nmax_epochs = 1\nruns = 1\n{extra}\n[encoder]\nhidden_size = 6\nembedding_path = \"{}\"\n",
        emb.display()
    );
    let config = TrainConfig::from_toml_str(&toml).unwrap();
    let (words, train) = common::vocabulary(&split);
    let f = EmbeddingEncoderFactory::load(config.encoder_config(EncoderRole::Ate), &words, &train).unwrap();
    (config, f)
}

#[test]
fn each_direction_sees_only_its_side() {
    let dir = tempfile::tempdir().unwrap();
    let (config, f) = factory(dir.path(), "");
    let data = common::fixture(SplitName::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (ate, _) = train_stage_one(&data, &data, &config, &f, &mut rng).unwrap();

    let tokens = data.sentences[1].tokens.clone();
    let j = 3;
    let mut changed = tokens.clone();
    changed[j] = "pizza".into();
    let a = ate.encoder.encode("x", &tokens).unwrap();
    let b = ate.encoder.encode("x", &changed).unwrap();
    let half = a.ncols() / 2;
    for i in 0..tokens.len() {
        let fwd = (0..half).map(|c| (a[[i, c]] - b[[i, c]]).abs()).fold(0.0, f64::max);
        let bwd = (half..a.ncols()).map(|c| (a[[i, c]] - b[[i, c]]).abs()).fold(0.0, f64::max);
        if i < j {
            assert_eq!(fwd, 0.0, "forward state at {i} saw token {j}");
            assert!(bwd > 0.0, "backward state at {i} missed token {j}");
        } else if i > j {
            assert!(fwd > 0.0, "forward state at {i} missed token {j}");
            assert_eq!(bwd, 0.0, "backward state at {i} saw token {j}");
        }
    }
}

#[test]
fn frozen_vectors_stay_put() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = factory(dir.path(), "");
    let split = common::fixture(SplitName::Train);
    let mut enc_config = config.encoder_config(EncoderRole::Ate);
    enc_config.finetune_embeddings = false;
    let (words, train) = common::vocabulary(&split);
    let f = EmbeddingEncoderFactory::<f64>::load(enc_config, &words, &train).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ate = asmote::model::AteModel::build(&f, &mut rng).unwrap();
    let before = ate.to_store();

    let mut opt = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() });
    for ex in ate_examples(&split).iter().take(4) {
        ate.accumulate(&ex.id, &ex.tokens, &ex.aspects).unwrap();
    }
    opt.begin_step(0.25);
    ate.update(&opt);
    let after = ate.to_store();

    let table = "encoder.embedding.table";
    assert_eq!(before.get(table).unwrap(), after.get(table).unwrap());
    let moved = ["encoder.lstm.fwd.w_ih", "head.proj.weight"];
    for name in moved {
        assert_ne!(before.get(name).unwrap(), after.get(name).unwrap(), "{name} did not train");
    }
}

#[test]
fn untrained_attention_is_near_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let (_, f) = factory(dir.path(), "");
    let split = common::fixture(SplitName::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = StageTwoModel::build(StageTwoConfig::default(), &f as &dyn EncoderFactory<f64>, &mut rng).unwrap();
    let mut spread: f64 = 0.0;
    for s in &split.sentences {
        for a in &s.aspects {
            let marked = mark_aspect(&s.tokens, a.span);
            let out = model.predict(&s.id, &marked).unwrap();
            let alpha = out.attention.unwrap().alpha;
            let n = alpha.len() as f64;
            spread = alpha.iter().fold(spread, |m, w| m.max((w - 1.0 / n).abs()));
        }
    }
    assert!(spread < UNTRAINED_ATTENTION_SPREAD, "spread {spread}");
}
