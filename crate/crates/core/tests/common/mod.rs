//! Small hand-annotated corpus shared by integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use asmote::corpus::{AspectAnnotation, DatasetSplit, Polarity, Sentence, SplitName, Span};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `word#k` marks aspect `k`, `word@k` an opinion of aspect `k`; adjacent
/// opinion words with the same `k` form one span.
const FIXTURE: [(&str, &str); 20] = [
    ("the lobster#1 knuckles#1 were ok@1 but tasteless@1 and the sashimi#2 was n't@2 fresh@2 .", "negative negative"),
    ("the bread#1 is top@1 notch@1 as well .", "positive"),
    ("service#1 was slow@1 but the food#2 was delicious@2 .", "negative positive"),
    ("great@1 pizza#1 and friendly@2 staff#2 .", "positive positive"),
    ("the decor#1 is plain@1 .", "neutral"),
    ("our waiter#1 was rude@1 and inattentive@1 .", "negative"),
    ("the wine#1 list#1 is extensive@1 and reasonably@1 priced@1 .", "positive"),
    ("prices#1 are average@1 for the area .", "neutral"),
    ("the sushi#1 was fresh@1 and the rolls#2 were creative@2 .", "positive positive"),
    ("dessert#1 was too@1 sweet@1 for me .", "negative"),
    ("the atmosphere#1 is cozy@1 and romantic@1 .", "positive"),
    ("the portions#1 were small@1 .", "negative"),
    ("the menu#1 is standard@1 .", "neutral"),
    ("the pasta#1 was bland@1 but the sauce#2 was rich@2 .", "negative positive"),
    ("music#1 was loud@1 .", "negative"),
    ("the coffee#1 is excellent@1 .", "positive"),
    ("the room#1 was noisy@1 but the view#2 was stunning@2 .", "negative positive"),
    ("delivery#1 was fast@1 .", "positive"),
    ("the steak#1 was overcooked@1 and dry@1 .", "negative"),
    ("the salad#1 was fine@1 .", "neutral"),
];

fn parse(id: usize, text: &str, polarities: &str) -> Sentence {
    let mut tokens = Vec::new();
    let mut aspect_pos: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut opinion_pos: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, raw) in text.split_whitespace().enumerate() {
        let (word, target) = if let Some((w, k)) = raw.rsplit_once('#') {
            (w, Some((&mut aspect_pos, k)))
        } else if let Some((w, k)) = raw.rsplit_once('@') {
            (w, Some((&mut opinion_pos, k)))
        } else {
            (raw, None)
        };
        if let Some((map, k)) = target {
            map.entry(k.parse().unwrap()).or_default().push(i);
        }
        tokens.push(word.to_string());
    }
    let runs = |pos: &[usize]| -> BTreeSet<Span> {
        let mut out = BTreeSet::new();
        let mut start = pos[0];
        for w in pos.windows(2) {
            if w[1] != w[0] + 1 {
                out.insert(Span::new(start, w[0] + 1));
                start = w[1];
            }
        }
        out.insert(Span::new(start, pos[pos.len() - 1] + 1));
        out
    };
    let polarities: Vec<Polarity> = polarities.split_whitespace().map(|p| p.parse().unwrap()).collect();
    let aspects = aspect_pos
        .iter()
        .map(|(k, pos)| {
            let span = runs(pos);
            assert_eq!(span.len(), 1, "aspect {k} must be contiguous");
            AspectAnnotation {
                span: *span.iter().next().unwrap(),
                polarity: polarities[k - 1],
                opinions: opinion_pos.get(k).map(|p| runs(p)).unwrap_or_default(),
            }
        })
        .collect();
    Sentence {
        id: format!("fx{id:02}"),
        tokens,
        aspects,
    }
}

pub fn fixture(name: SplitName) -> DatasetSplit {
    let sentences = FIXTURE.iter().enumerate().map(|(i, (t, p))| parse(i, t, p)).collect();
    DatasetSplit::new(name, sentences).unwrap()
}

pub fn vocabulary(split: &DatasetSplit) -> (BTreeSet<String>, HashSet<String>) {
    let words: BTreeSet<String> = split.sentences.iter().flat_map(|s| s.tokens.iter().cloned()).collect();
    let train = words.iter().cloned().collect();
    (words, train)
}

/// Writes random `dim`-dimensional vectors for every word of `split`.
pub fn write_embeddings(path: &Path, split: &DatasetSplit, dim: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = std::fs::File::create(path).unwrap();
    for w in vocabulary(split).0 {
        let v: Vec<String> = (0..dim).map(|_| format!("{:.5}", rng.random_range(-0.5..0.5))).collect();
        writeln!(f, "{w} {}", v.join(" ")).unwrap();
    }
}
