use std::path::Path;

use asmote::tagging::{ASPECT_CLOSE, ASPECT_OPEN};
use asmote::{Error, Result};
use tokenizers::models::wordpiece::WordPiece;
use tokenizers::normalizers::BertNormalizer;
use tokenizers::pre_tokenizers::bert::BertPreTokenizer;
use tokenizers::Tokenizer;

use crate::backend;

/// Subword ids for one sentence, wrapped in the classification and separator
/// tokens, plus the position of each word's first subword.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPieces {
    pub ids: Vec<u32>,
    pub first: Vec<u32>,
}

/// Word-to-subword splitter. Words are tokenized one by one so that the
/// sentence's own word boundaries are kept.
pub struct PieceTokenizer {
    tokenizer: Tokenizer,
    cls: u32,
    sep: u32,
    unk: u32,
    /// Vocabulary tokens standing in for the aspect markers.
    markers: (String, String),
}

impl PieceTokenizer {
    /// Reads `tokenizer.json` from `dir`, falling back to an uncased
    /// WordPiece tokenizer over `vocab.txt`.
    pub fn load(dir: &Path) -> Result<Self> {
        let json = dir.join("tokenizer.json");
        let tokenizer = if json.exists() {
            Tokenizer::from_file(&json).map_err(backend)?
        } else {
            let vocab = dir.join("vocab.txt");
            if !vocab.exists() {
                return Err(Error::Config(format!(
                    "{} has neither tokenizer.json nor vocab.txt",
                    dir.display()
                )));
            }
            let model = WordPiece::from_file(&vocab.to_string_lossy())
                .unk_token("[UNK]".into())
                .build()
                .map_err(backend)?;
            let mut t = Tokenizer::new(model);
            t.with_normalizer(Some(BertNormalizer::default()));
            t.with_pre_tokenizer(Some(BertPreTokenizer));
            t
        };
        let special = |s: &str| {
            tokenizer
                .token_to_id(s)
                .ok_or_else(|| Error::Config(format!("tokenizer vocabulary lacks {s}")))
        };
        let (cls, sep, unk) = (special("[CLS]")?, special("[SEP]")?, special("[UNK]")?);
        let mut pieces = PieceTokenizer {
            tokenizer,
            cls,
            sep,
            unk,
            markers: (String::new(), String::new()),
        };
        pieces.set_markers(ASPECT_OPEN, ASPECT_CLOSE);
        Ok(pieces)
    }

    /// Chooses the vocabulary tokens fed in place of the aspect markers.
    pub fn set_markers(&mut self, open: &str, close: &str) {
        for m in [open, close] {
            if self.tokenizer.token_to_id(m).is_none() {
                log::warn!("marker {m:?} is not a single vocabulary token");
            }
        }
        self.markers = (open.to_string(), close.to_string());
    }

    pub fn markers(&self) -> (&str, &str) {
        (&self.markers.0, &self.markers.1)
    }

    pub fn word_ids(&self, word: &str) -> Result<Vec<u32>> {
        let word = match word {
            ASPECT_OPEN => self.markers.0.as_str(),
            ASPECT_CLOSE => self.markers.1.as_str(),
            w => w,
        };
        if let Some(id) = self.tokenizer.token_to_id(word) {
            if word == self.markers.0 || word == self.markers.1 {
                return Ok(vec![id]);
            }
        }
        let ids = self.tokenizer.encode(word, false).map_err(backend)?.get_ids().to_vec();
        Ok(if ids.is_empty() { vec![self.unk] } else { ids })
    }

    /// Errors with [`Error::TooLong`] when the subwords exceed `max_positions`.
    pub fn split(&self, id: &str, words: &[String], max_positions: usize) -> Result<WordPieces> {
        let mut ids = vec![self.cls];
        let mut first = Vec::with_capacity(words.len());
        for w in words {
            first.push(ids.len() as u32);
            ids.extend(self.word_ids(w)?);
        }
        ids.push(self.sep);
        if ids.len() > max_positions {
            return Err(Error::TooLong {
                id: id.to_string(),
                len: ids.len(),
                max: max_positions,
            });
        }
        Ok(WordPieces { ids, first })
    }
}
