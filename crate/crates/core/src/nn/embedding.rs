use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::param::{join, Module, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tagging::{ASPECT_CLOSE, ASPECT_OPEN};

const UNK_ROW: usize = 0;
const OPEN_ROW: usize = 1;
const CLOSE_ROW: usize = 2;

/// Word list backing an embedding table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        Vocabulary::new(words)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Exact match first, then the lowercased form.
    pub fn get(&self, word: &str) -> Option<usize> {
        self.index
            .get(word)
            .or_else(|| self.index.get(&word.to_lowercase()))
            .copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Row {
    Special(usize),
    Word(usize),
}

/// Word vectors plus three always-trainable rows: unknown word and the two
/// aspect markers.
#[derive(Debug, Clone)]
pub struct Embedding<T> {
    vocab: Vocabulary,
    pub table: Param<T>,
    pub special: Param<T>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTape {
    rows: Vec<Row>,
}

impl<T: Scalar> Embedding<T> {
    /// Zero-initialized table over `vocab`; used when restoring a checkpoint.
    pub fn empty(vocab: Vocabulary, dim: usize) -> Self {
        let n = vocab.len();
        Embedding {
            vocab,
            table: Param::zeros(n, dim),
            special: Param::zeros(3, dim),
        }
    }

    /// Random table; words are ordered as given.
    pub fn random(words: Vec<String>, dim: usize, rng: &mut impl Rng) -> Self {
        let n = words.len();
        Embedding {
            vocab: Vocabulary::new(words),
            table: Param::uniform(n, dim, 0.25, rng),
            special: Param::uniform(3, dim, 0.25, rng),
        }
    }

    /// Reads vectors for `needed` words from a word-vector text file (one
    /// `token v1 .. vd` per line). Words missing from the file keep a random
    /// row if listed in `trainable_unknowns`, otherwise they map to the unknown
    /// row.
    pub fn from_text_file(
        path: &Path,
        needed: &BTreeSet<String>,
        trainable_unknowns: &HashSet<String>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let lowered: HashSet<String> = needed.iter().map(|w| w.to_lowercase()).collect();
        let mut dim: Option<usize> = None;
        let mut found: HashMap<String, Vec<f64>> = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
            if fields.len() < 2 {
                continue;
            }
            let d = *dim.get_or_insert(fields.len() - 1);
            if fields.len() < d + 1 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected {d} values"),
                });
            }
            let word = fields[..fields.len() - d].join(" ");
            if !(needed.contains(&word) || lowered.contains(&word)) || found.contains_key(&word) {
                continue;
            }
            let values = fields[fields.len() - d..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            found.insert(word, values);
        }
        let dim = dim.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "no vectors in embedding file".into(),
        })?;

        let mut words = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for w in needed {
            let vec = found.get(w).or_else(|| found.get(&w.to_lowercase()));
            match vec {
                Some(v) => {
                    words.push(w.clone());
                    rows.push(v.clone());
                }
                None if trainable_unknowns.contains(w) => {
                    words.push(w.clone());
                    rows.push((0..dim).map(|_| rng.random_range(-0.25..=0.25)).collect());
                }
                None => {}
            }
        }
        let table = Array2::from_shape_fn((rows.len(), dim), |(r, c)| T::lit(rows[r][c]));
        log::info!(
            "embeddings: {} of {} words found in {}",
            found.len(),
            needed.len(),
            path.display()
        );
        Ok(Embedding {
            vocab: Vocabulary::new(words),
            table: Param::new(table),
            special: Param::uniform(3, dim, 0.25, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.special.value.ncols()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn row(&self, token: &str) -> Row {
        match token {
            ASPECT_OPEN => Row::Special(OPEN_ROW),
            ASPECT_CLOSE => Row::Special(CLOSE_ROW),
            w => self.vocab.get(w).map_or(Row::Special(UNK_ROW), Row::Word),
        }
    }

    pub fn forward(&self, tokens: &[String]) -> (Array2<T>, EmbeddingTape) {
        let rows: Vec<Row> = tokens.iter().map(|t| self.row(t)).collect();
        let out = Array2::from_shape_fn((rows.len(), self.dim()), |(i, j)| match rows[i] {
            Row::Special(k) => self.special.value[[k, j]],
            Row::Word(k) => self.table.value[[k, j]],
        });
        (out, EmbeddingTape { rows })
    }

    pub fn backward(&mut self, tape: &EmbeddingTape, grad: &Array2<T>) {
        for (i, row) in tape.rows.iter().enumerate() {
            let (param, k) = match *row {
                Row::Special(k) => (&mut self.special, k),
                Row::Word(k) => (&mut self.table, k),
            };
            if param.frozen {
                continue;
            }
            param.grad.row_mut(k).scaled_add(T::one(), &grad.row(i));
        }
    }
}

impl<T: Scalar> Module<T> for Embedding<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "table"), &self.table);
        f(&join(prefix, "special"), &self.special);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "table"), &mut self.table);
        f(&join(prefix, "special"), &mut self.special);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    #[test]
    fn loads_needed_words_and_maps_unknowns() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "the 0.1 0.2").unwrap();
        writeln!(f, "bread 1.0 -1.0").unwrap();
        writeln!(f, "unused 5 5").unwrap();
        let needed: BTreeSet<String> = ["The", "bread", "zzz", "qqq"].iter().map(|s| s.to_string()).collect();
        let trainable: HashSet<String> = ["zzz".to_string()].into();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb: Embedding<f64> = Embedding::from_text_file(f.path(), &needed, &trainable, &mut rng).unwrap();
        assert_eq!(emb.dim(), 2);
        assert_eq!(emb.vocab().len(), 3);
        let toks: Vec<String> = ["The", "bread", "#", "qqq"].iter().map(|s| s.to_string()).collect();
        let (x, tape) = emb.forward(&toks);
        assert_eq!(x.row(0).to_vec(), vec![0.1, 0.2]);
        assert_eq!(x.row(1).to_vec(), vec![1.0, -1.0]);
        assert_eq!(x.row(2), emb.special.value.row(OPEN_ROW));
        assert_eq!(x.row(3), emb.special.value.row(UNK_ROW));

        let mut emb = emb;
        emb.table.frozen = true;
        emb.backward(&tape, &Array2::ones((4, 2)));
        assert!(emb.table.grad.iter().all(|g| *g == 0.0));
        assert_eq!(emb.special.grad.row(OPEN_ROW).to_vec(), vec![1.0, 1.0]);
        assert_eq!(emb.special.grad.row(UNK_ROW).to_vec(), vec![1.0, 1.0]);
    }
}
