use std::collections::BTreeSet;

use asmote::ate::{ate_loss, AteHead};
use asmote::atsa::{aspect_repr, atsa_loss, atsa_predict, opinion_repr, AtsaHead};
use asmote::corpus::{AsmoteTriplet, SentenceTriplet, Sentiment, Span};
use asmote::evaluation::triplet_prf;
use asmote::nn::ops::{argmax, softmax};
use asmote::tagging::{decode_bio, encode_bio, mark_aspect, TagSequence};
use asmote::towe_sla::{sla_attention, towe_loss};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn prob_rows(rows: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec((0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0), rows).prop_map(|v| {
        let mut m = Array2::zeros((v.len(), 3));
        for (i, (a, b, c)) in v.into_iter().enumerate() {
            let z = a + b + c;
            m[[i, 0]] = a / z;
            m[[i, 1]] = b / z;
            m[[i, 2]] = c / z;
        }
        m
    })
}

fn tags(len: usize) -> impl Strategy<Value = TagSequence> {
    prop::collection::vec(0usize..3, len).prop_map(|v| TagSequence(v.into_iter().map(|i| asmote::tagging::Tag::from_index(i).unwrap()).collect()))
}

proptest! {
    #[test]
    fn attention_is_a_distribution_and_shift_invariant(x in (1usize..12).prop_flat_map(|n| matrix(n, 3)), c in -10.0f64..10.0) {
        let att = sla_attention(&x);
        prop_assert_eq!(att.alpha.len(), x.nrows());
        prop_assert!((att.alpha.sum() - 1.0).abs() < 1e-9);
        prop_assert!(att.alpha.iter().all(|a| *a >= 0.0));
        let shifted = softmax((&att.beta + c).view());
        for (a, b) in att.alpha.iter().zip(shifted.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scores_ignore_the_outside_channel(x in (1usize..8).prop_flat_map(|n| matrix(n, 3)), c in -5.0f64..5.0, pos in 0usize..8) {
        let pos = pos % x.nrows();
        let base = sla_attention(&x).beta;
        let mut all = x.clone();
        all.row_mut(pos).mapv_inplace(|v| v + c);
        let moved = sla_attention(&all).beta;
        prop_assert!((moved[pos] - base[pos] - 2.0 * c).abs() < 1e-9);
        let mut o_only = x.clone();
        o_only[[pos, 2]] += c;
        prop_assert_eq!(sla_attention(&o_only).beta, base);
    }

    #[test]
    fn tag_losses_match_scalar_loop(p in (1usize..10).prop_flat_map(|n| (prob_rows(n), tags(n)))) {
        let (probs, gold) = p;
        let mut oracle = 0.0;
        for i in 0..gold.len() {
            oracle += -(probs[[i, gold.0[i].index()]]).ln();
        }
        prop_assert!((ate_loss(&probs, &gold).unwrap() - oracle).abs() < 1e-6);
        prop_assert!((towe_loss(&probs, &gold).unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn sentiment_loss_matches_scalar(p in prob_rows(1), g in 0usize..3) {
        let row = p.row(0).to_owned();
        let gold = Sentiment::from_index(g).unwrap();
        prop_assert!((atsa_loss(&row, gold) + row[g].ln()).abs() < 1e-12);
    }

    #[test]
    fn representations_match_loops(h in (3usize..9).prop_flat_map(|n| matrix(n, 4)), start in 0usize..6, w in prop::collection::vec(0.0f64..1.0, 9)) {
        let n = h.nrows();
        let start = start % (n - 2);
        let span = Span::new(start, start + 3);
        let r = aspect_repr(&h, span).unwrap();
        for j in 0..4 {
            let mut s = 0.0;
            for i in span.start..span.end {
                s += h[[i, j]];
            }
            prop_assert!((r[j] - s / 3.0).abs() < 1e-6);
        }
        let z: f64 = w[..n].iter().sum::<f64>() + 1e-9;
        let alpha: Array1<f64> = w[..n].iter().map(|v| v / z).collect();
        let ro = opinion_repr(&h, &alpha).unwrap();
        for j in 0..4 {
            let mut s = 0.0;
            for i in 0..n {
                s += alpha[i] * h[[i, j]];
            }
            prop_assert!((ro[j] - s).abs() < 1e-6);
        }
    }

    #[test]
    fn classifier_matches_hand_rolled_forward(seed in 0u64..1000, ra in prop::collection::vec(-1.0f64..1.0, 3), ro in prop::collection::vec(-1.0f64..1.0, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = AtsaHead::<f64>::new(6, 3, 0.5, &mut rng);
        let (p, s) = atsa_predict(&head, &Array1::from(ra.clone()), Some(&Array1::from(ro.clone())));
        let r: Vec<f64> = ra.iter().chain(ro.iter()).copied().collect();
        let w1 = &head.hidden_layer.weight.value;
        let b1 = &head.hidden_layer.bias.value;
        let w2 = &head.output.weight.value;
        let b2 = &head.output.bias.value;
        let mut hidden = [0.0; 3];
        for k in 0..3 {
            let mut acc = b1[[0, k]];
            for (j, rj) in r.iter().enumerate() {
                acc += w1[[k, j]] * rj;
            }
            hidden[k] = acc.max(0.0);
        }
        let mut logits = [0.0; 3];
        for c in 0..3 {
            logits[c] = b2[[0, c]] + (0..3).map(|k| w2[[c, k]] * hidden[k]).sum::<f64>();
        }
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for c in 0..3 {
            prop_assert!((p[c] - logits[c].exp() / z).abs() < 1e-6);
        }
        prop_assert!((p.sum() - 1.0).abs() < 1e-9);
        prop_assert_eq!(s.index(), argmax(p.view()));
    }

    #[test]
    fn argmax_ignores_common_shift(x in prop::collection::vec(-5.0f64..5.0, 3), c in -50.0f64..50.0) {
        let a = Array1::from(x);
        prop_assert_eq!(argmax(softmax(a.view()).view()), argmax(softmax((&a + c).view()).view()));
    }

    #[test]
    fn bio_roundtrip(len in 1usize..30, cuts in prop::collection::vec(0usize..30, 0..12)) {
        let spans = random_disjoint_spans(len, &cuts);
        let tags = encode_bio(&spans, len).unwrap();
        prop_assert_eq!(decode_bio(&tags), spans.iter().copied().collect::<BTreeSet<_>>());
    }

    #[test]
    fn marking_laws(len in 1usize..20, a in 0usize..20, b in 1usize..4) {
        let tokens: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
        let start = a % len;
        let span = Span::new(start, (start + b).min(len));
        let m = mark_aspect(&tokens, span);
        prop_assert_eq!(m.len(), len + 2);
        prop_assert_eq!(m.unmark(), tokens.clone());
        for i in 0..len {
            prop_assert_eq!(m.to_original(m.to_marked(i)), Some(i));
            prop_assert_eq!(&m.tokens[m.to_marked(i)], &tokens[i]);
        }
        prop_assert!(m.to_original(m.open_marker()).is_none());
        prop_assert!(m.to_original(m.close_marker()).is_none());
    }

    #[test]
    fn zero_head_is_uniform(h in (1usize..6).prop_flat_map(|n| matrix(n, 4))) {
        let p = asmote::ate::ate_predict(&AteHead::<f64>::zeros(4), &h);
        prop_assert!(p.probs.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn triplet_scores_match_brute_force(inst in instance()) {
        let (gold, pred) = inst;
        let r = triplet_prf(&gold, &pred).unwrap();
        let kept: Vec<&SentenceTriplet> = pred.iter().filter(|t| !t.triplet.opinions.is_empty()).collect();
        let mut matched = 0;
        for p in &kept {
            if gold.iter().any(|g| g.id == p.id && g.triplet.aspect == p.triplet.aspect && g.triplet.sentiment == p.triplet.sentiment && g.triplet.opinions == p.triplet.opinions) {
                matched += 1;
            }
        }
        prop_assert_eq!((r.gold, r.predicted, r.matched), (gold.len(), kept.len(), matched));

        let nonempty_gold: Vec<SentenceTriplet> = gold.iter().filter(|t| !t.triplet.opinions.is_empty()).cloned().collect();
        let swapped = triplet_prf(&kept.iter().map(|t| (*t).clone()).collect::<Vec<_>>(), &nonempty_gold).unwrap();
        let forward = triplet_prf(&nonempty_gold, &kept.iter().map(|t| (*t).clone()).collect::<Vec<_>>()).unwrap();
        prop_assert!((swapped.precision - forward.recall).abs() < 1e-12);
        prop_assert!((swapped.recall - forward.precision).abs() < 1e-12);
    }

    #[test]
    fn spurious_prediction_lowers_precision_only(inst in instance()) {
        let gold: Vec<SentenceTriplet> = inst.0.into_iter().filter(|t| !t.triplet.opinions.is_empty()).collect();
        prop_assume!(!gold.is_empty());
        let same = triplet_prf(&gold, &gold).unwrap();
        prop_assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        let mut pred = gold.clone();
        pred.push(SentenceTriplet { id: "spurious".into(), triplet: AsmoteTriplet::new(Span::new(0, 1), Sentiment::Neutral, [Span::new(1, 2)]) });
        let r = triplet_prf(&gold, &pred).unwrap();
        prop_assert!(r.precision < 1.0);
        prop_assert_eq!(r.recall, 1.0);
    }
}

fn random_disjoint_spans(len: usize, cuts: &[usize]) -> Vec<Span> {
    let mut points: Vec<usize> = cuts.iter().map(|c| c % (len + 1)).collect();
    points.sort_unstable();
    points.dedup();
    points
        .chunks(2)
        .filter(|c| c.len() == 2)
        .map(|c| Span::new(c[0], c[1]))
        .collect()
}

fn triplet() -> impl Strategy<Value = SentenceTriplet> {
    (0u8..3, 0usize..3, 0usize..3, prop::collection::btree_set(3usize..6, 0..3)).prop_map(|(id, a, s, ops)| SentenceTriplet {
        id: format!("s{id}"),
        triplet: AsmoteTriplet::new(
            Span::new(a, a + 1),
            Sentiment::from_index(s).unwrap(),
            ops.into_iter().map(|o| Span::new(o, o + 1)),
        ),
    })
}

fn instance() -> impl Strategy<Value = (Vec<SentenceTriplet>, Vec<SentenceTriplet>)> {
    let side = || prop::collection::btree_set(triplet(), 0..8).prop_map(|s| s.into_iter().collect::<Vec<_>>());
    (side(), side())
}
