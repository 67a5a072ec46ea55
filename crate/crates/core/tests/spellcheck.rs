use std::fs::File;
use std::io::BufReader;
use std::sync::Arc;

use gecforge::corpus::{apply_edits, for_each_line, Sentence};
use gecforge::lm::{
    extract_capital_words, train_lm, CapitalOptions, CapitalWordList, Lambdas, NGramLm,
};
use gecforge::spellcheck::{candidates, SpellChecker, SpellConfig, Vocabulary};

const CORPUS: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/fixtures/spell_corpus.txt"
);

fn sentences() -> Vec<gecforge::Result<Sentence>> {
    let mut out = Vec::new();
    for_each_line(BufReader::new(File::open(CORPUS).unwrap()), |_, line| {
        out.push(Sentence::from_spaced(line));
        Ok(())
    })
    .unwrap();
    out
}

struct Fixture {
    vocab: Arc<Vocabulary>,
    caps: Arc<CapitalWordList>,
    lm: Arc<NGramLm>,
}

fn fixture() -> Fixture {
    Fixture {
        vocab: Arc::new(Vocabulary::build(sentences(), None).unwrap()),
        caps: Arc::new(extract_capital_words(sentences(), &CapitalOptions::default()).unwrap()),
        lm: Arc::new(train_lm(sentences(), Lambdas::default(), 0.5).unwrap()),
    }
}

fn checker(f: &Fixture, ranker: &str) -> SpellChecker {
    let cfg = SpellConfig {
        ranker: ranker.into(),
        ..Default::default()
    };
    SpellChecker::new(f.vocab.clone(), f.caps.clone(), Some(f.lm.clone()), cfg).unwrap()
}

fn s(text: &str) -> Sentence {
    Sentence::from_spaced(text).unwrap()
}

#[test]
fn esay_candidates_include_both_readings() {
    let f = fixture();
    let c = candidates("esay", &f.vocab, &SpellConfig::default());
    let toks: Vec<&str> = c.iter().map(|c| c.token.as_str()).collect();
    assert_eq!(&toks[..2], ["easy", "essay"]);
    assert_eq!(toks.last(), Some(&"esay"));
}

#[test]
fn context_picks_essay_frequency_picks_easy() {
    let f = fixture();
    let src = s("This is an esay about my favorite sport .");
    let (lm_out, _) = checker(&f, "lm").correct(&src);
    let (freq_out, _) = checker(&f, "frequency").correct(&src);
    assert_eq!(lm_out, s("This is an essay about my favorite sport ."));
    assert_eq!(freq_out, s("This is an easy about my favorite sport ."));
}

#[test]
fn capital_list_promotes_city_name() {
    let f = fixture();
    assert!(f.caps.contains("paris"));
    assert!(!f.caps.contains("the"));
    let src = s("we flew to paris last year .");
    let (out, edits) = checker(&f, "lm").correct(&src);
    assert_eq!(out, s("we flew to Paris last year ."));
    assert_eq!(edits.len(), 1);
    assert_eq!(edits[0].category.as_deref(), Some("ORTH"));
}

#[test]
fn lm_checker_never_lowers_the_score_and_is_idempotent() {
    let f = fixture();
    let lm_checker = checker(&f, "lm");
    let inputs = [
        "This is an esay about my favorite sport .",
        "we flew to paris last year .",
        "The tset was eazy .",
        "It is esy to lern a new sprot .",
        "My sistr lives in paris .",
        "nothing here is wrong .",
        "qqqqqq zzzzz",
    ];
    for text in inputs {
        let src = s(text);
        let (out, edits) = lm_checker.correct(&src);
        assert!(f.lm.score(&out) >= f.lm.score(&src), "{text}");
        assert_eq!(apply_edits(&src, &edits).unwrap(), out, "{text}");
        let (again, more) = lm_checker.correct(&out);
        assert_eq!(again, out, "{text}");
        assert!(more.is_empty(), "{text}");
    }
}
