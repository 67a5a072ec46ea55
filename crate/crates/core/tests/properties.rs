use std::collections::BTreeSet;
use std::sync::Arc;

use gecforge::align::{align_tokens, alignment_cost, extract_edits};
use gecforge::corpus::{apply_edits, read_m2, tokenize, write_m2, AnnotatedPair, Edit, Sentence};
use gecforge::evalstats::{f_half, score};
use gecforge::lexicon::MorphLexicon;
use gecforge::lm::{count_ngrams, train_lm, Lambdas, NGramLm};
use gecforge::noise::{EditDictionary, Noiser, NoisingConfig, RandomNoiser, RealisticNoiser};
use gecforge::postprocess::{
    category_filter_search, select_with, ExhaustiveSelector, GreedySelector, PostprocessConfig,
};
use gecforge::rng::substream;
use gecforge::subword::bpe_learn;
use proptest::prelude::*;

fn sentence(alphabet: &'static [&'static str], max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(alphabet), 0..=max)
        .prop_map(|v| v.into_iter().map(str::to_owned).collect())
}

fn sent(tokens: Vec<String>) -> Sentence {
    Sentence::new(tokens).unwrap()
}

/// Top-down memoized minimum alignment cost, in half units.
fn reference_cost(s: &[String], t: &[String]) -> u32 {
    fn go(s: &[String], t: &[String], memo: &mut Vec<Vec<Option<u32>>>) -> u32 {
        if let Some(c) = memo[s.len()][t.len()] {
            return c;
        }
        let c = if s.is_empty() {
            2 * t.len() as u32
        } else if t.is_empty() {
            2 * s.len() as u32
        } else {
            let sub = if s[0] == t[0] {
                0
            } else if s[0].to_lowercase() == t[0].to_lowercase() {
                1
            } else {
                2
            };
            let mut best = (sub + go(&s[1..], &t[1..], memo))
                .min(2 + go(&s[1..], t, memo))
                .min(2 + go(s, &t[1..], memo));
            if s.len() >= 2 && t.len() >= 2 && s[0] == t[1] && s[1] == t[0] && s[0] != s[1] {
                best = best.min(3 + go(&s[2..], &t[2..], memo));
            }
            best
        };
        memo[s.len()][t.len()] = Some(c);
        c
    }
    let mut memo = vec![vec![None; t.len() + 1]; s.len() + 1];
    go(s, t, &mut memo)
}

fn toy_lm(lines: &[Vec<String>]) -> NGramLm {
    train_lm(
        lines.iter().map(|l| Sentence::new(l.clone())),
        Lambdas::default(),
        0.5,
    )
    .unwrap()
}

const WORDS: &[&str] = &[
    "the", "a", "cat", "cats", "sat", "on", "mat", "The", "in", ".", ",",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn extracted_edits_reproduce_target(s in sentence(WORDS, 14), t in sentence(WORDS, 14)) {
        let (src, tgt) = (sent(s), sent(t));
        let edits = extract_edits(&src, &tgt);
        prop_assert_eq!(apply_edits(&src, &edits).unwrap(), tgt);
    }

    #[test]
    fn alignment_is_optimal(s in sentence(&["x", "X", "y", "z"], 12), t in sentence(&["x", "X", "y", "z"], 12)) {
        let ops = align_tokens(&s, &t);
        let cost = alignment_cost(&ops, &s, &t);
        prop_assert_eq!((cost * 2.0) as u32, reference_cost(&s, &t));
    }

    #[test]
    fn tokenizer_yields_valid_tokens(text in "[ a-zA-Z0-9.,!?'\"()-]{0,60}") {
        let toks = tokenize(&text);
        prop_assert!(Sentence::new(toks.tokens().to_vec()).is_ok());
        let joined: String = toks.iter().map(String::as_str).collect();
        let squeezed: String = text.split_whitespace().collect();
        prop_assert_eq!(joined, squeezed);
    }

    #[test]
    fn m2_round_trips(s in sentence(WORDS, 10), t in sentence(WORDS, 10), u in sentence(WORDS, 10)) {
        let src = sent(s);
        let mut pair = AnnotatedPair::single(src.clone(), extract_edits(&src, &sent(t)));
        pair.annotations.push(gecforge::corpus::Annotation { annotator: 1, edits: extract_edits(&src, &sent(u)) });
        if src.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        write_m2(std::slice::from_ref(&pair), &mut buf).unwrap();
        let back = read_m2(&buf[..]).unwrap();
        prop_assert_eq!(back, vec![pair]);
    }

    #[test]
    fn lm_distributions_normalize(
        corpus in prop::collection::vec(sentence(WORDS, 8), 1..6),
        ctx in prop::collection::vec(prop::sample::select(WORDS), 2),
    ) {
        let lm = toy_lm(&corpus);
        for (u, v) in [("<s>", "<s>"), ("<s>", ctx[0]), (ctx[0], ctx[1]), ("zebra", ctx[1])] {
            let total: f64 = lm.predicted_vocab().iter().map(|w| lm.prob(u, v, w)).sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "{} {}: {}", u, v, total);
        }
    }

    #[test]
    fn trigram_count_is_monotone(corpus in prop::collection::vec(sentence(WORDS, 8), 1..6), pick in any::<prop::sample::Index>()) {
        let counts = count_ngrams(corpus.iter().map(|l| Sentence::new(l.clone()))).unwrap();
        let trigrams: Vec<&Vec<String>> = counts.keys().filter(|g| g.len() == 3).collect();
        let gram = pick.get(&trigrams).to_vec();
        let before = NGramLm::from_counts(&counts, Lambdas::default(), 0.5).unwrap();
        let mut more = counts.clone();
        *more.get_mut(&gram).unwrap() += 3;
        let after = NGramLm::from_counts(&more, Lambdas::default(), 0.5).unwrap();
        prop_assert!(after.prob(&gram[0], &gram[1], &gram[2]) >= before.prob(&gram[0], &gram[1], &gram[2]));
    }

    #[test]
    fn score_decreases_under_concatenation(corpus in prop::collection::vec(sentence(WORDS, 8), 1..4), a in sentence(WORDS, 6), b in sentence(WORDS, 6)) {
        let lm = toy_lm(&corpus);
        let joined: Vec<String> = a.iter().chain(&b).cloned().collect();
        // Extending a sentence only multiplies in more probabilities, so it can
        // never score above the prefix's own token terms.
        prop_assert!(lm.score(&joined) <= lm.prefix_score(&a) + 1e-12);
        prop_assert!(lm.score(&a) <= lm.prefix_score(&a));
    }

    #[test]
    fn bpe_round_trips(corpus in prop::collection::vec("[a-e]{1,7}( [a-e]{1,7}){0,5}", 1..8), budget in 0usize..30, probe in "[a-e]{1,9}( [a-e]{1,9}){0,4}") {
        let lines: Vec<String> = corpus;
        let alphabet: BTreeSet<char> = lines.iter().flat_map(|l| l.chars()).filter(|c| *c != ' ').collect();
        let model = bpe_learn(&lines, alphabet.len() + budget).unwrap();
        prop_assert!(model.vocab_size() <= alphabet.len() + budget);
        let probe: Vec<String> = probe.split(' ').filter(|w| w.chars().all(|c| alphabet.contains(&c))).map(str::to_owned).collect();
        let pieces = model.apply(&probe);
        let back = model.revert(&pieces).unwrap();
        prop_assert_eq!(back.tokens(), &probe[..]);
        for w in &probe {
            prop_assert!(model.segment(w).len() <= w.chars().count());
        }
    }

    #[test]
    fn f_half_equals_precision_when_recall_does(p in 0.0f64..=1.0) {
        prop_assert!((f_half(p, p) - p).abs() < 1e-12);
    }

    #[test]
    fn self_scoring_is_perfect(s in sentence(WORDS, 10), t in sentence(WORDS, 10)) {
        let src = sent(s);
        let edits = extract_edits(&src, &sent(t));
        let gold = AnnotatedPair::single(src, edits.clone());
        let r = score(&[edits], &[gold]).unwrap();
        prop_assert_eq!((r.precision, r.recall, r.f_half), (1.0, 1.0, 1.0));
    }

    #[test]
    fn noisers_are_seed_deterministic(s in sentence(WORDS, 12), seed in any::<u64>()) {
        let src = sent(s);
        let lex = Arc::new(MorphLexicon::english());
        let cfg = NoisingConfig { type_error_prob: 0.5, ..Default::default() };
        let real = RealisticNoiser::new(&EditDictionary::default(), lex, &cfg).unwrap();
        prop_assert_eq!(real.noise(&src, &mut substream(seed, 0, 0)), real.noise(&src, &mut substream(seed, 0, 0)));
        let vocab: Arc<[String]> = WORDS.iter().map(|w| w.to_string()).collect();
        let rand = RandomNoiser::new(vocab, &NoisingConfig { random_op_prob: 0.5, ..Default::default() }).unwrap();
        let out = rand.noise(&src, &mut substream(seed, 1, 2));
        prop_assert_eq!(&out, &rand.noise(&src, &mut substream(seed, 1, 2)));
        prop_assert!(src.is_empty() || !out.is_empty());
    }
}

fn edit_lists() -> impl Strategy<Value = (Vec<String>, Vec<Edit>)> {
    (sentence(WORDS, 14), sentence(WORDS, 14)).prop_map(|(s, t)| {
        let src = sent(s.clone());
        let edits = extract_edits(&src, &sent(t));
        (s, edits)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn greedy_never_beats_exhaustive(corpus in prop::collection::vec(sentence(WORDS, 8), 1..6), (s, edits) in edit_lists()) {
        let lm = toy_lm(&corpus);
        let src = sent(s);
        let n = edits.len();
        let ex = select_with(&ExhaustiveSelector { max_removed: n }, &src, &edits, &lm).unwrap();
        let gr = select_with(&GreedySelector { max_removed: n }, &src, &edits, &lm).unwrap();
        let sc = |kept: &[Edit]| lm.score(&apply_edits(&src, kept).unwrap());
        let base = sc(&edits);
        prop_assert!(sc(&gr) <= sc(&ex) + 1e-12);
        prop_assert!(sc(&gr) >= base && sc(&ex) >= base);
        // Survivors keep their relative order.
        for kept in [&ex, &gr] {
            let pos: Vec<usize> = kept.iter().map(|k| edits.iter().position(|e| e == k).unwrap()).collect();
            prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn category_search_never_loses_to_baseline(
        rows in prop::collection::vec((edit_lists(), edit_lists(), 0u8..4), 1..6),
        seed in any::<u64>(),
    ) {
        let cats = ["PUNCT", "OTHER", "SPELL", "PREP"];
        let mut hyp = Vec::new();
        let mut gold = Vec::new();
        for ((s, h), (_, _), c) in rows {
            let src = sent(s.clone());
            let labelled: Vec<Edit> = h.iter().enumerate().map(|(i, e)| e.clone().with_category(cats[(i + c as usize) % 4])).collect();
            let half: Vec<Edit> = labelled.iter().step_by(2).cloned().collect();
            gold.push(AnnotatedPair::single(src, half));
            hyp.push(labelled);
        }
        let cfg = PostprocessConfig { seed, search_rounds: 30, ..Default::default() };
        let r = category_filter_search(&hyp, &gold, None, &cfg).unwrap();
        prop_assert!(r.report.f_half >= r.baseline.f_half);
        prop_assert_eq!(r, category_filter_search(&hyp, &gold, None, &cfg).unwrap());
    }
}
