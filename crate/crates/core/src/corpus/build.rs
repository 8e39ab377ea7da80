//! Aligns SemEval aspect annotations with TOWE opinion annotations.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{parse_semeval_xml, parse_towe_tsv, AspectAnnotation, DatasetSplit, Sentence, Span, SplitName};
use crate::error::{Error, Result};

/// Character ranges (in `char` units) of tokens inside their source text.
#[derive(Debug, Clone)]
pub struct TokenAligner {
    ranges: Vec<(usize, usize)>,
}

impl TokenAligner {
    /// Locates each token in `text`, tolerating tokens whose characters were
    /// normalized by the upstream tokenizer (those consume as many characters as
    /// they contain).
    pub fn new(text: &str, tokens: &[String]) -> Self {
        let chars: Vec<char> = text.chars().collect();
        let mut cursor = 0;
        let mut ranges = Vec::with_capacity(tokens.len());
        for tok in tokens {
            while cursor < chars.len() && chars[cursor].is_whitespace() {
                cursor += 1;
            }
            let tchars: Vec<char> = tok.chars().collect();
            let start = if chars[cursor.min(chars.len())..].starts_with(&tchars) {
                cursor
            } else {
                // search a short window ahead for the literal token
                let window = (cursor..chars.len().min(cursor + 16))
                    .find(|&p| chars[p..].starts_with(&tchars));
                window.unwrap_or(cursor)
            };
            let end = (start + tchars.len()).min(chars.len());
            ranges.push((start, end));
            cursor = end;
        }
        TokenAligner { ranges }
    }

    /// Smallest token span covering the character range `[from, to)`.
    pub fn span_for(&self, from: usize, to: usize) -> Option<Span> {
        let hits: Vec<usize> = self
            .ranges
            .iter()
            .enumerate()
            .filter(|(_, &(s, e))| s < to && from < e)
            .map(|(i, _)| i)
            .collect();
        Some(Span::new(*hits.first()?, *hits.last()? + 1))
    }
}

fn is_word_joiner(c: char) -> bool {
    c == '\'' || c == '-'
}

/// Whitespace and punctuation tokenization, additionally breaking at the given
/// character offsets. Returns tokens with their character ranges.
pub fn tokenize_text(text: &str, breaks: &[usize]) -> Vec<(String, (usize, usize))> {
    let chars: Vec<char> = text.chars().collect();
    let breaks: HashSet<usize> = breaks.iter().copied().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut cur_start = 0;
    let flush = |cur: &mut String, start: usize, end: usize, out: &mut Vec<(String, (usize, usize))>| {
        if !cur.is_empty() {
            out.push((std::mem::take(cur), (start, end)));
        }
    };
    for (i, &c) in chars.iter().enumerate() {
        if breaks.contains(&i) {
            flush(&mut cur, cur_start, i, &mut out);
        }
        if c.is_whitespace() {
            flush(&mut cur, cur_start, i, &mut out);
            continue;
        }
        let inner_joiner = is_word_joiner(c)
            && i > 0
            && chars[i - 1].is_alphanumeric()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_ascii_punctuation() && !inner_joiner {
            flush(&mut cur, cur_start, i, &mut out);
            out.push((c.to_string(), (i, i + 1)));
            continue;
        }
        if cur.is_empty() {
            cur_start = i;
        }
        cur.push(c);
    }
    flush(&mut cur, cur_start, chars.len(), &mut out);
    out
}

/// Builds one split from a SemEval file and the matching TOWE file.
///
/// Every SemEval sentence with at least one aspect term is kept, whether or not
/// any of its aspects has opinions. Sentences that appear in the TOWE file use
/// its tokens; the rest are tokenized locally, breaking at aspect boundaries.
pub fn build_dataset(semeval_file: &Path, towe_file: &Path, name: SplitName) -> Result<DatasetSplit> {
    let semeval = parse_semeval_xml(semeval_file)?;
    let towe = parse_towe_tsv(towe_file)?;

    let known: HashSet<&str> = semeval.iter().map(|s| s.id.as_str()).collect();
    let mut towe_by_id: HashMap<&str, Vec<_>> = HashMap::new();
    for rec in &towe {
        if !known.contains(rec.id.as_str()) {
            return Err(Error::data(&rec.id, "TOWE record has no SemEval sentence"));
        }
        towe_by_id.entry(rec.id.as_str()).or_default().push(rec);
    }

    let mut sentences = Vec::new();
    for sem in &semeval {
        let records = towe_by_id.get(sem.id.as_str());
        if sem.aspects.is_empty() {
            if records.is_some() {
                return Err(Error::data(&sem.id, "TOWE record for a sentence without aspect terms"));
            }
            continue;
        }
        let (tokens, aligner) = match records {
            Some(recs) => {
                let tokens = recs[0].tokens.clone();
                if recs.iter().any(|r| r.tokens != tokens) {
                    return Err(Error::data(&sem.id, "TOWE records disagree on tokens"));
                }
                let aligner = TokenAligner::new(&sem.text, &tokens);
                (tokens, aligner)
            }
            None => {
                let breaks: Vec<usize> = sem.aspects.iter().flat_map(|a| [a.from, a.to]).collect();
                let toks = tokenize_text(&sem.text, &breaks);
                let aligner = TokenAligner {
                    ranges: toks.iter().map(|t| t.1).collect(),
                };
                (toks.into_iter().map(|t| t.0).collect(), aligner)
            }
        };

        let mut aspects = Vec::with_capacity(sem.aspects.len());
        for a in &sem.aspects {
            let span = aligner.span_for(a.from, a.to).ok_or_else(|| {
                Error::data(&sem.id, format!("aspect {:?} does not align with any token", a.term))
            })?;
            aspects.push(AspectAnnotation {
                span,
                polarity: a.polarity,
                opinions: BTreeSet::new(),
            });
        }

        for rec in records.into_iter().flatten() {
            let target = aspects
                .iter_mut()
                .find(|a| a.span == rec.target)
                .ok_or_else(|| {
                    Error::data(
                        &sem.id,
                        format!(
                            "TOWE target {} ({:?}) matches no SemEval aspect",
                            rec.target,
                            rec.target.text(&rec.tokens).join(" ")
                        ),
                    )
                })?;
            target.opinions.extend(rec.opinions.iter().copied());
        }

        let sentence = Sentence {
            id: sem.id.clone(),
            tokens,
            aspects,
        };
        sentence.validate()?;
        sentences.push(sentence);
    }
    DatasetSplit::new(name, sentences)
}

/// Splits a training split into train and dev parts.
///
/// With `dev_ids`, exactly those sentences go to dev. Otherwise a seeded
/// shuffle assigns `round(fraction * n)` sentences to dev; both parts keep the
/// original sentence order.
pub fn partition_dev(
    train: &DatasetSplit,
    dev_ids: Option<&HashSet<String>>,
    fraction: f64,
    seed: u64,
) -> Result<(DatasetSplit, DatasetSplit)> {
    let chosen: HashSet<usize> = match dev_ids {
        Some(ids) => {
            let idx: HashSet<usize> = train
                .sentences
                .iter()
                .enumerate()
                .filter(|(_, s)| ids.contains(&s.id))
                .map(|(i, _)| i)
                .collect();
            if idx.len() != ids.len() {
                let present: HashSet<&str> = train.sentences.iter().map(|s| s.id.as_str()).collect();
                let missing = ids.iter().find(|id| !present.contains(id.as_str())).cloned().unwrap_or_default();
                return Err(Error::data(missing, "dev id not found in the training split"));
            }
            idx
        }
        None => {
            if !(0.0..1.0).contains(&fraction) {
                return Err(Error::Config(format!("dev fraction {fraction} not in [0, 1)")));
            }
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let k = (fraction * train.len() as f64).round() as usize;
            order.into_iter().take(k).collect()
        }
    };
    let (mut tr, mut dv) = (Vec::new(), Vec::new());
    for (i, s) in train.sentences.iter().enumerate() {
        if chosen.contains(&i) {
            dv.push(s.clone());
        } else {
            tr.push(s.clone());
        }
    }
    Ok((
        DatasetSplit::new(SplitName::Train, tr)?,
        DatasetSplit::new(SplitName::Dev, dv)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Polarity;
    use std::io::Write;

    const SEMEVAL: &str = r#"<?xml version="1.0"?>
<sentences>
  <sentence id="s1">
    <text>The lobster knuckles were ok but tasteless, the sashimi wasn't fresh.</text>
    <aspectTerms>
      <aspectTerm term="lobster knuckles" polarity="negative" from="4" to="20"/>
      <aspectTerm term="sashimi" polarity="negative" from="48" to="55"/>
    </aspectTerms>
  </sentence>
  <sentence id="s2">
    <text>Service was fine, the decor(!) mixed.</text>
    <aspectTerms>
      <aspectTerm term="Service" polarity="neutral" from="0" to="7"/>
      <aspectTerm term="decor" polarity="conflict" from="22" to="27"/>
    </aspectTerms>
  </sentence>
  <sentence id="s3"><text>No aspects at all.</text></sentence>
</sentences>"#;

    const TOWE: &str = "s_id\tsentence\ttarget_tags\topinion_words_tags\n\
s1\tThe lobster knuckles were ok but tasteless , the sashimi was n't fresh .\tThe\\O lobster\\B knuckles\\I were\\O ok\\O but\\O tasteless\\O ,\\O the\\O sashimi\\O was\\O n't\\O fresh\\O .\\O\tThe\\O lobster\\O knuckles\\O were\\O ok\\B but\\O tasteless\\B ,\\O the\\O sashimi\\O was\\O n't\\O fresh\\O .\\O\n\
s1\tThe lobster knuckles were ok but tasteless , the sashimi was n't fresh .\tThe\\O lobster\\O knuckles\\O were\\O ok\\O but\\O tasteless\\O ,\\O the\\O sashimi\\B was\\O n't\\O fresh\\O .\\O\tThe\\O lobster\\O knuckles\\O were\\O ok\\O but\\O tasteless\\O ,\\O the\\O sashimi\\O was\\B n't\\I fresh\\I .\\O\n";

    fn files(towe: &str) -> (tempfile::NamedTempFile, tempfile::NamedTempFile) {
        let mut s = tempfile::NamedTempFile::new().unwrap();
        s.write_all(SEMEVAL.as_bytes()).unwrap();
        let mut t = tempfile::NamedTempFile::new().unwrap();
        t.write_all(towe.as_bytes()).unwrap();
        (s, t)
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn toy_fixture_builds_expected_sentences() {
        let (s, t) = files(TOWE);
        let split = build_dataset(s.path(), t.path(), SplitName::Train).unwrap();
        let expected = vec![
            Sentence {
                id: "s1".into(),
                tokens: toks("The lobster knuckles were ok but tasteless , the sashimi was n't fresh ."),
                aspects: vec![
                    AspectAnnotation {
                        span: Span::new(1, 3),
                        polarity: Polarity::Negative,
                        opinions: [Span::new(4, 5), Span::new(6, 7)].into_iter().collect(),
                    },
                    AspectAnnotation {
                        span: Span::new(9, 10),
                        polarity: Polarity::Negative,
                        opinions: [Span::new(10, 13)].into_iter().collect(),
                    },
                ],
            },
            Sentence {
                id: "s2".into(),
                tokens: toks("Service was fine , the decor ( ! ) mixed ."),
                aspects: vec![
                    AspectAnnotation {
                        span: Span::new(0, 1),
                        polarity: Polarity::Neutral,
                        opinions: BTreeSet::new(),
                    },
                    AspectAnnotation {
                        span: Span::new(5, 6),
                        polarity: Polarity::Conflict,
                        opinions: BTreeSet::new(),
                    },
                ],
            },
        ];
        assert_eq!(split.sentences, expected);
    }

    #[test]
    fn empty_towe_file_gives_opinionless_aspects() {
        let (s, t) = files("");
        let split = build_dataset(s.path(), t.path(), SplitName::Test).unwrap();
        assert_eq!(split.len(), 2);
        assert!(split.sentences.iter().flat_map(|s| &s.aspects).all(|a| a.opinions.is_empty()));
        assert!(crate::corpus::gold_triplets(&split).is_empty());
    }

    #[test]
    fn unmatched_towe_record_names_sentence() {
        let bad = "s9\ta b\ta\\B b\\O\ta\\O b\\B\n";
        let (s, t) = files(bad);
        let err = build_dataset(s.path(), t.path(), SplitName::Train).unwrap_err();
        assert!(err.to_string().contains("s9"), "{err}");

        let wrong_target = "s2\tService was fine , the decor ( ! ) mixed .\tService\\O was\\B fine\\O ,\\O the\\O decor\\O (\\O !\\O )\\O mixed\\O .\\O\t[[2, 3]]\n";
        let (s, t) = files(wrong_target);
        let err = build_dataset(s.path(), t.path(), SplitName::Train).unwrap_err();
        assert!(err.to_string().contains("s2"), "{err}");
    }

    #[test]
    fn tokenizer_breaks_punctuation_and_offsets() {
        let toks: Vec<String> = tokenize_text("isn't it well-done?", &[]).into_iter().map(|t| t.0).collect();
        assert_eq!(toks, ["isn't", "it", "well-done", "?"]);
        let toks: Vec<String> = tokenize_text("hotdogs", &[3]).into_iter().map(|t| t.0).collect();
        assert_eq!(toks, ["hot", "dogs"]);
    }

    #[test]
    fn dev_partition_is_seeded_and_exhaustive() {
        let sentences: Vec<Sentence> = (0..10)
            .map(|i| Sentence {
                id: format!("{i}"),
                tokens: toks("x"),
                aspects: vec![],
            })
            .collect();
        let split = DatasetSplit::new(SplitName::Train, sentences).unwrap();
        let (a, b) = partition_dev(&split, None, 0.2, 7).unwrap();
        let (a2, b2) = partition_dev(&split, None, 0.2, 7).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert_eq!((a, b), (a2, b2));
        let ids: HashSet<String> = ["3".to_string()].into();
        let (_, dev) = partition_dev(&split, Some(&ids), 0.0, 0).unwrap();
        assert_eq!(dev.sentences[0].id, "3");
        let missing: HashSet<String> = ["nope".to_string()].into();
        assert!(partition_dev(&split, Some(&missing), 0.0, 0).is_err());
    }
}
