use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderKind, EncoderRole, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::model::StageTwoConfig;
use crate::towe_sla::SlaMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Tagger warm-up, then joint training with attention.
    Joint,
    /// Tagger and classifier trained independently, no attention.
    Pipeline,
    /// Joint classifier with opinions from the separately trained tagger.
    SeparateTagger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderRegime {
    BilstmEmb,
    BertFrozen,
    BertFinetune,
}

/// One row of the variant matrix, written like `AGF`, `AGF_S`, `AGF-p`,
/// `AGF-t`, optionally followed by `^B` or `^BF`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelVariant {
    pub family: Family,
    pub sla: SlaMode,
    pub regime: EncoderRegime,
}

impl ModelVariant {
    pub const AGF: ModelVariant = ModelVariant {
        family: Family::Joint,
        sla: SlaMode::Logits,
        regime: EncoderRegime::BilstmEmb,
    };

    pub fn stage_two_config(&self, dropout: f64, detach: bool) -> StageTwoConfig {
        StageTwoConfig {
            sla: (self.family != Family::Pipeline).then_some(self.sla),
            detach,
            dropout,
        }
    }

    pub fn encoder_kind(&self, role: EncoderRole) -> EncoderKind {
        match (self.regime, role) {
            (EncoderRegime::BilstmEmb, _) => EncoderKind::BilstmEmb,
            (_, EncoderRole::Atsa) => EncoderKind::Bert,
            _ => EncoderKind::BilstmBert,
        }
    }

    pub fn finetunes_pretrained(&self) -> bool {
        self.regime == EncoderRegime::BertFinetune
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AGF")?;
        if self.sla == SlaMode::Probabilities && self.family != Family::Pipeline {
            f.write_str("_S")?;
        }
        match self.family {
            Family::Joint => {}
            Family::Pipeline => f.write_str("-p")?,
            Family::SeparateTagger => f.write_str("-t")?,
        }
        match self.regime {
            EncoderRegime::BilstmEmb => Ok(()),
            EncoderRegime::BertFrozen => f.write_str("^B"),
            EncoderRegime::BertFinetune => f.write_str("^BF"),
        }
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown model variant {s:?}"));
        let (base, regime) = match s.split_once('^') {
            None => (s, EncoderRegime::BilstmEmb),
            Some((b, "B")) => (b, EncoderRegime::BertFrozen),
            Some((b, "BF")) => (b, EncoderRegime::BertFinetune),
            Some(_) => return Err(bad()),
        };
        let rest = base.strip_prefix("AGF").ok_or_else(bad)?;
        let (sla, rest) = match rest.strip_prefix("_S") {
            Some(r) => (SlaMode::Probabilities, r),
            None => (SlaMode::Logits, rest),
        };
        let family = match rest {
            "" => Family::Joint,
            "-p" if sla == SlaMode::Logits => Family::Pipeline,
            "-t" => Family::SeparateTagger,
            _ => return Err(bad()),
        };
        Ok(ModelVariant { family, sla, regime })
    }
}

impl Serialize for ModelVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dev criterion for choosing the best joint-phase epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    AccuracyPlusF1,
    Accuracy,
    F1,
}

/// Encoder settings shared by every sub-model; the kind follows from the
/// variant and role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub hidden_size: usize,
    pub embedding_path: Option<PathBuf>,
    pub pretrained_dir: Option<PathBuf>,
    pub finetune_embeddings: bool,
    pub max_len: usize,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            hidden_size: 256,
            embedding_path: None,
            pretrained_dir: None,
            finetune_embeddings: true,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: ModelVariant,
    pub batch_size: usize,
    /// Defaults to 0.001, or 0.00002 when the pretrained encoder is finetuned.
    pub learning_rate: Option<f64>,
    pub patience: usize,
    pub max_epochs: usize,
    pub runs: usize,
    /// One seed per run; when empty, runs use seeds `1..=runs`.
    pub seeds: Vec<u64>,
    pub dropout: f64,
    pub detach_attention: bool,
    pub selection: Selection,
    pub encoder: EncoderSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: ModelVariant::AGF,
            batch_size: 32,
            learning_rate: None,
            patience: 10,
            max_epochs: 100,
            runs: 5,
            seeds: Vec::new(),
            dropout: 0.5,
            detach_attention: false,
            selection: Selection::default(),
            encoder: EncoderSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config = Self::parse_toml(s)?;
        config.validate()?;
        Ok(config)
    }

    /// Parses without [`TrainConfig::validate`], for callers that apply
    /// overrides first.
    pub fn parse_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(if self.variant.finetunes_pretrained() {
            2e-5
        } else {
            1e-3
        })
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (1..=self.runs as u64).collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn encoder_config(&self, role: EncoderRole) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            kind: self.variant.encoder_kind(role),
            hidden_size: e.hidden_size,
            finetune_pretrained: self.variant.finetunes_pretrained(),
            embedding_path: e.embedding_path.clone(),
            pretrained_dir: e.pretrained_dir.clone(),
            finetune_embeddings: e.finetune_embeddings,
            max_len: e.max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.runs == 0 {
            return Err(Error::Config("batch_size, max_epochs and runs must be positive".into()));
        }
        if !self.seeds.is_empty() && self.seeds.len() != self.runs {
            return Err(Error::Config(format!(
                "{} seeds given for {} runs",
                self.seeds.len(),
                self.runs
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.learning_rate.is_some_and(|lr| lr <= 0.0 || !lr.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for role in [EncoderRole::Ate, EncoderRole::Towe, EncoderRole::Atsa] {
            self.encoder_config(role).validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_roundtrip() {
        for name in ["AGF", "AGF_S", "AGF-p", "AGF-t", "AGF_S-t", "AGF^B", "AGF_S^B", "AGF-p^BF", "AGF-t^BF"] {
            let v: ModelVariant = name.parse().unwrap();
            assert_eq!(v.to_string(), name);
        }
        for bad in ["agf", "AGF-x", "AGF^C", "AGF_S-p", "AGF-t^"] {
            assert!(bad.parse::<ModelVariant>().is_err(), "{bad}");
        }
    }

    #[test]
    fn variant_wiring() {
        let p: ModelVariant = "AGF-p".parse().unwrap();
        assert_eq!(p.stage_two_config(0.5, false).sla, None);
        let s: ModelVariant = "AGF_S^B".parse().unwrap();
        assert_eq!(s.stage_two_config(0.5, false).sla, Some(SlaMode::Probabilities));
        assert_eq!(s.encoder_kind(EncoderRole::Atsa), EncoderKind::Bert);
        assert_eq!(s.encoder_kind(EncoderRole::Towe), EncoderKind::BilstmBert);
        assert!(!s.finetunes_pretrained());
    }

    #[test]
    fn toml_defaults_and_learning_rates() {
        let c = TrainConfig::from_toml_str("variant = \"AGF-t\"\n[encoder]\nembedding_path = \"glove.txt\"\n").unwrap();
        assert_eq!((c.batch_size, c.patience, c.max_epochs, c.runs), (32, 10, 100, 5));
        assert_eq!(c.learning_rate(), 1e-3);
        assert_eq!(c.run_seeds(), vec![1, 2, 3, 4, 5]);
        let back = TrainConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);

        let bf = TrainConfig::from_toml_str("variant = \"AGF^BF\"\n[encoder]\npretrained_dir = \"bert\"\n").unwrap();
        assert_eq!(bf.learning_rate(), 2e-5);
        assert!(TrainConfig::from_toml_str("variant = \"AGF\"\n").is_err());
        assert!(TrainConfig::from_toml_str("bogus = 1\n").is_err());
        assert!(TrainConfig::from_toml_str("runs = 2\nseeds = [1]\n[encoder]\nembedding_path = \"g\"\n").is_err());
    }
}
