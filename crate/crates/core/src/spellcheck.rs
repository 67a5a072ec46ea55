//! Context-aware spellchecking.
//!
//! Out-of-vocabulary words get edit-distance candidates from the
//! vocabulary; a ranker then picks one. The `frequency` ranker takes the
//! generator's top suggestion, as a stand-alone checker would. The `lm`
//! ranker substitutes each candidate into the sentence and keeps the one the
//! language model scores highest. Words on the capital list also get their
//! capitalized form as a candidate.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::align::{CAT_ORTH as ORTH, CAT_SPELL as SPELL};
use crate::corpus::{Edit, Sentence};
use crate::distance::osa_bounded;
use crate::error::{Error, Result};
use crate::lexicon::{capitalize, restore_case, MorphLexicon};
use crate::lm::{CapitalWordList, NGramLm};
use crate::registry::Registry;

fn default_max_edit_distance() -> usize {
    2
}
fn default_max_candidates() -> usize {
    10
}
fn default_lm_weight() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_ranker() -> String {
    "lm".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpellConfig {
    #[serde(default = "default_max_edit_distance")]
    pub max_edit_distance: usize,
    #[serde(default = "default_max_candidates")]
    pub max_candidates: usize,
    /// Positive multiplier on LM log-scores.
    #[serde(default = "default_lm_weight")]
    pub lm_weight: f64,
    /// Order equal-distance candidates by corpus frequency before spelling.
    #[serde(default = "default_true")]
    pub frequency_tiebreak: bool,
    #[serde(default = "default_ranker")]
    pub ranker: String,
}

impl Default for SpellConfig {
    fn default() -> Self {
        SpellConfig {
            max_edit_distance: default_max_edit_distance(),
            max_candidates: default_max_candidates(),
            lm_weight: default_lm_weight(),
            frequency_tiebreak: true,
            ranker: default_ranker(),
        }
    }
}

impl SpellConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.max_edit_distance) {
            return Err(Error::validation(format!(
                "max_edit_distance must be 1 or 2 (got {})",
                self.max_edit_distance
            )));
        }
        if self.max_candidates == 0 {
            return Err(Error::validation("max_candidates must be at least 1"));
        }
        if !(self.lm_weight.is_finite() && self.lm_weight > 0.0) {
            return Err(Error::validation("lm_weight must be positive"));
        }
        Ok(())
    }
}

/// Known words (lowercased) with corpus frequencies, indexed by length.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    freq: HashMap<String, u64>,
    by_len: Vec<Vec<(Vec<char>, String)>>,
}

fn is_word(token: &str) -> bool {
    !token.is_empty() && token.chars().all(char::is_alphabetic)
}

impl Vocabulary {
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut merged: BTreeMap<String, u64> = BTreeMap::new();
        for (w, c) in counts {
            if is_word(&w) {
                *merged.entry(w.to_lowercase()).or_default() += c;
            }
        }
        let mut by_len: Vec<Vec<(Vec<char>, String)>> = Vec::new();
        for w in merged.keys() {
            let chars: Vec<char> = w.chars().collect();
            if by_len.len() <= chars.len() {
                by_len.resize_with(chars.len() + 1, Vec::new);
            }
            by_len[chars.len()].push((chars, w.clone()));
        }
        Vocabulary {
            freq: merged.into_iter().collect(),
            by_len,
        }
    }

    /// Counts alphabetic tokens of clean sentences; lexicon words are added
    /// with frequency zero so they are never flagged.
    pub fn build<I>(sentences: I, lexicon: Option<&MorphLexicon>) -> Result<Self>
    where
        I: IntoIterator<Item = Result<Sentence>>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for s in sentences {
            for t in s?.iter() {
                if is_word(t) {
                    *counts.entry(t.to_lowercase()).or_default() += 1;
                }
            }
        }
        if let Some(lex) = lexicon {
            let words = lex
                .noun_pairs()
                .flat_map(|(a, b)| [a, b])
                .chain(lex.paradigms().flat_map(|p| p.distinct_forms()))
                .chain(lex.prepositions().iter().map(String::as_str));
            for w in words {
                counts.entry(w.to_lowercase()).or_default();
            }
        }
        Ok(Self::from_counts(counts))
    }

    pub fn len(&self) -> usize {
        self.freq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.freq.contains_key(&token.to_lowercase())
    }

    pub fn frequency(&self, token: &str) -> u64 {
        self.freq.get(&token.to_lowercase()).copied().unwrap_or(0)
    }

    /// All words, sorted.
    pub fn words(&self) -> Vec<&str> {
        let mut w: Vec<&str> = self.freq.keys().map(String::as_str).collect();
        w.sort_unstable();
        w
    }

    /// `word<TAB>count` rows sorted by word.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let sorted: BTreeMap<&String, &u64> = self.freq.iter().collect();
        for (word, c) in sorted {
            writeln!(w, "{word}\t{c}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|source| Error::IoAtLine { line: n, source })?;
            if line.is_empty() {
                continue;
            }
            let (word, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(n, "expected `word<TAB>count`"))?;
            let count = count
                .parse()
                .map_err(|e| Error::parse(n, format!("bad count {count:?}: {e}")))?;
            if !is_word(word) {
                return Err(Error::parse(
                    n,
                    format!("{word:?} is not an alphabetic word"),
                ));
            }
            rows.push((word.to_owned(), count));
        }
        Ok(Self::from_counts(rows))
    }
}

/// Indices of alphabetic tokens missing from the vocabulary.
pub fn detect(sentence: &[String], vocab: &Vocabulary) -> Vec<usize> {
    sentence
        .iter()
        .enumerate()
        .filter(|(_, t)| is_word(t) && !vocab.contains(t))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub token: String,
    pub distance: usize,
    pub frequency: u64,
    pub is_original: bool,
}

/// Vocabulary words within the edit-distance bound, best first, followed by
/// the original token as a keep option (unless it already appears).
pub fn candidates(token: &str, vocab: &Vocabulary, config: &SpellConfig) -> Vec<Candidate> {
    let lower = token.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let max = config.max_edit_distance;
    let lo = chars.len().saturating_sub(max);
    let hi = (chars.len() + max).min(vocab.by_len.len().saturating_sub(1));
    let mut found: Vec<Candidate> = Vec::new();
    if lo <= hi {
        for bucket in &vocab.by_len[lo..=hi] {
            for (wc, w) in bucket {
                if let Some(d) = osa_bounded(&chars, wc, max) {
                    found.push(Candidate {
                        token: restore_case(token, w),
                        distance: d,
                        frequency: vocab.freq[w],
                        is_original: false,
                    });
                }
            }
        }
    }
    found.sort_by(|a, b| {
        let by_freq = if config.frequency_tiebreak {
            b.frequency.cmp(&a.frequency)
        } else {
            std::cmp::Ordering::Equal
        };
        a.distance
            .cmp(&b.distance)
            .then(by_freq)
            .then_with(|| a.token.to_lowercase().cmp(&b.token.to_lowercase()))
    });
    found.truncate(config.max_candidates);
    match found.iter_mut().find(|c| c.token == token) {
        Some(c) => c.is_original = true,
        None => found.push(Candidate {
            token: token.to_owned(),
            distance: 0,
            frequency: vocab.frequency(token),
            is_original: true,
        }),
    }
    found
}

// ---------------------------------------------------------------------------
// Rankers

/// One correction decision: the sentence as corrected so far, the position,
/// and the options (the original is among them).
pub struct RankInput<'a> {
    pub tokens: &'a [String],
    pub position: usize,
    pub candidates: &'a [Candidate],
}

pub trait CandidateRanker: Send + Sync {
    fn name(&self) -> &'static str;

    /// Index into `input.candidates` of the chosen option.
    fn choose(&self, input: &RankInput<'_>) -> usize;
}

/// Takes the generator's first suggestion, ignoring context.
pub struct FrequencyRanker;

impl CandidateRanker for FrequencyRanker {
    fn name(&self) -> &'static str {
        "frequency"
    }

    fn choose(&self, _input: &RankInput<'_>) -> usize {
        0
    }
}

/// Picks the candidate giving the highest sentence score. Ties go to the
/// smaller edit distance, then to the original token.
pub struct LmRanker {
    lm: Arc<NGramLm>,
    weight: f64,
}

impl LmRanker {
    pub fn new(lm: Arc<NGramLm>, weight: f64) -> Self {
        LmRanker { lm, weight }
    }
}

impl CandidateRanker for LmRanker {
    fn name(&self) -> &'static str {
        "lm"
    }

    fn choose(&self, input: &RankInput<'_>) -> usize {
        let mut ids = self.lm.ids(input.tokens);
        let i = input.position;
        let mut best: Option<(f64, usize, bool, usize)> = None;
        for (k, c) in input.candidates.iter().enumerate() {
            ids[i] = self.lm.id(&c.token);
            let score = self.weight * self.lm.local_score(&ids, i);
            let better = match best {
                None => true,
                Some((s, d, orig, _)) => {
                    score > s
                        || (score == s
                            && (c.distance < d || (c.distance == d && c.is_original && !orig)))
                }
            };
            if better {
                best = Some((score, c.distance, c.is_original, k));
            }
        }
        best.map_or(0, |b| b.3)
    }
}

#[derive(Clone)]
pub struct RankerContext {
    pub lm: Option<Arc<NGramLm>>,
    pub config: SpellConfig,
}

pub type RankerRegistry = Registry<dyn CandidateRanker, RankerContext>;

/// The built-in rankers: `lm` and `frequency`.
pub fn rankers() -> RankerRegistry {
    let mut reg = RankerRegistry::new("candidate ranker");
    reg.register("frequency", |_| Ok(Box::new(FrequencyRanker)));
    reg.register("lm", |ctx| {
        let lm = ctx
            .lm
            .clone()
            .ok_or_else(|| Error::validation("the lm ranker needs a language model"))?;
        Ok(Box::new(LmRanker::new(lm, ctx.config.lm_weight)))
    });
    reg
}

pub struct SpellChecker {
    vocab: Arc<Vocabulary>,
    capitals: Arc<CapitalWordList>,
    ranker: Box<dyn CandidateRanker>,
    config: SpellConfig,
}

impl SpellChecker {
    pub fn new(
        vocab: Arc<Vocabulary>,
        capitals: Arc<CapitalWordList>,
        lm: Option<Arc<NGramLm>>,
        config: SpellConfig,
    ) -> Result<Self> {
        config.validate()?;
        let ctx = RankerContext {
            lm,
            config: config.clone(),
        };
        let ranker = rankers().build(&config.ranker, &ctx)?;
        Ok(SpellChecker {
            vocab,
            capitals,
            ranker,
            config,
        })
    }

    pub fn ranker_name(&self) -> &'static str {
        self.ranker.name()
    }

    /// Options for position `i`, or `None` when the token is left alone.
    fn options(&self, token: &str) -> Option<Vec<Candidate>> {
        let capital = capitalize(&token.to_lowercase());
        let promote = self.capitals.contains(&token.to_lowercase()) && capital != token;
        let flagged = is_word(token) && !self.vocab.contains(token);
        if !flagged && !promote {
            return None;
        }
        let mut opts = if flagged {
            candidates(token, &self.vocab, &self.config)
        } else {
            vec![Candidate {
                token: token.to_owned(),
                distance: 0,
                frequency: self.vocab.frequency(token),
                is_original: true,
            }]
        };
        if promote {
            let cap = Candidate {
                token: capital,
                distance: 0,
                frequency: self.vocab.frequency(token),
                is_original: false,
            };
            let at = opts
                .iter()
                .position(|c| c.is_original)
                .unwrap_or(opts.len());
            opts.insert(at, cap);
        }
        Some(opts)
    }

    /// Corrects left to right; each decision sees earlier corrections.
    pub fn correct(&self, sentence: &Sentence) -> (Sentence, Vec<Edit>) {
        let mut tokens = sentence.tokens().to_vec();
        let mut edits = Vec::new();
        for i in 0..tokens.len() {
            let Some(opts) = self.options(&tokens[i]) else {
                continue;
            };
            let k = self.ranker.choose(&RankInput {
                tokens: &tokens,
                position: i,
                candidates: &opts,
            });
            let chosen = &opts[k];
            if chosen.is_original {
                continue;
            }
            let category = if chosen.token.to_lowercase() == tokens[i].to_lowercase() {
                ORTH
            } else {
                SPELL
            };
            edits.push(Edit::new(i, i + 1, &[chosen.token.as_str()]).with_category(category));
            tokens[i] = chosen.token.clone();
        }
        (Sentence::from_vec_unchecked(tokens), edits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::apply_edits;

    fn vocab(rows: &[(&str, u64)]) -> Vocabulary {
        Vocabulary::from_counts(rows.iter().map(|(w, c)| (w.to_string(), *c)))
    }

    fn s(text: &str) -> Sentence {
        Sentence::from_spaced(text).unwrap()
    }

    #[test]
    fn detection() {
        let v = vocab(&[("this", 1), ("is", 1), ("an", 1)]);
        assert_eq!(detect(s("This is an esay").tokens(), &v), [3]);
        assert_eq!(detect(s("This is an").tokens(), &v), Vec::<usize>::new());
        assert_eq!(
            detect(s("U.S. 1984 , n't").tokens(), &v),
            Vec::<usize>::new()
        );
    }

    #[test]
    fn candidate_order() {
        let v = vocab(&[
            ("easy", 9),
            ("essay", 3),
            ("say", 5),
            ("ease", 2),
            ("xylophone", 1),
        ]);
        let c = candidates("esay", &v, &SpellConfig::default());
        let toks: Vec<&str> = c.iter().map(|c| c.token.as_str()).collect();
        assert_eq!(toks, ["easy", "say", "essay", "ease", "esay"]);
        assert!(c.last().unwrap().is_original);

        let c = candidates(
            "Esay",
            &v,
            &SpellConfig {
                max_candidates: 1,
                ..Default::default()
            },
        );
        assert_eq!(
            c.iter().map(|c| c.token.as_str()).collect::<Vec<_>>(),
            ["Easy", "Esay"]
        );

        let c = candidates("say", &v, &SpellConfig::default());
        assert_eq!(c[0].token, "say");
        assert!(c[0].is_original);

        let c = candidates("zzzzzz", &v, &SpellConfig::default());
        assert_eq!(c.len(), 1);
        assert!(c[0].is_original);
    }

    #[test]
    fn no_frequency_tiebreak_is_lexicographic() {
        let v = vocab(&[("easy", 9), ("essay", 3), ("say", 5), ("ease", 2)]);
        let cfg = SpellConfig {
            frequency_tiebreak: false,
            ..Default::default()
        };
        let c = candidates("esay", &v, &cfg);
        let toks: Vec<&str> = c.iter().map(|c| c.token.as_str()).collect();
        assert_eq!(toks, ["easy", "essay", "say", "ease", "esay"]);
    }

    #[test]
    fn config_validation() {
        assert!(SpellConfig::default().validate().is_ok());
        assert!(SpellConfig {
            max_edit_distance: 3,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SpellConfig {
            max_candidates: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SpellConfig {
            lm_weight: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn frequency_checker_edits_apply() {
        let v = Arc::new(vocab(&[("the", 5), ("cat", 3), ("sat", 2)]));
        let checker = SpellChecker::new(
            v,
            Arc::new(CapitalWordList::default()),
            None,
            SpellConfig {
                ranker: "frequency".into(),
                ..Default::default()
            },
        )
        .unwrap();
        let src = s("teh cat sat");
        let (out, edits) = checker.correct(&src);
        assert_eq!(out, s("the cat sat"));
        assert_eq!(edits[0].category.as_deref(), Some(SPELL));
        assert_eq!(apply_edits(&src, &edits).unwrap(), out);
        let (same, none) = checker.correct(&out);
        assert_eq!(same, out);
        assert!(none.is_empty());
    }

    #[test]
    fn lm_ranker_requires_model() {
        let err = SpellChecker::new(
            Arc::new(Vocabulary::default()),
            Arc::new(CapitalWordList::default()),
            None,
            SpellConfig::default(),
        );
        assert!(err.is_err());
        assert_eq!(rankers().names().collect::<Vec<_>>(), ["frequency", "lm"]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = vocab(&[("Beta", 2), ("alpha", 1), ("beta", 1), ("x1", 4)]);
        let mut buf = Vec::new();
        v.save(&mut buf).unwrap();
        assert_eq!(buf, b"alpha\t1\nbeta\t3\n");
        let back = Vocabulary::load(&buf[..]).unwrap();
        assert_eq!(back.frequency("BETA"), 3);
        assert!(Vocabulary::load(&b"alpha 1\n"[..]).is_err());
    }
}
