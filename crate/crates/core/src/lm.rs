//! Interpolated trigram language model and the common-capital-word list.
//!
//! Probabilities are Jelinek–Mercer mixtures of maximum-likelihood trigram
//! and bigram estimates with an add-α unigram. A history that was never
//! observed borrows the next lower order's estimate, so every conditional
//! distribution sums to one over the predicted vocabulary (all tokens plus
//! end-of-sentence and unknown).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

const MODEL_HEADER: &str = "#gecforge-ngram-lm 1";

/// Interpolation weights `(λ1, λ2, λ3)` for unigram, bigram and trigram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub unigram: f64,
    pub bigram: f64,
    pub trigram: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas {
            unigram: 0.1,
            bigram: 0.3,
            trigram: 0.6,
        }
    }
}

impl Lambdas {
    pub fn new(unigram: f64, bigram: f64, trigram: f64) -> Result<Self> {
        let l = Lambdas {
            unigram,
            bigram,
            trigram,
        };
        l.validate()?;
        Ok(l)
    }

    /// The unigram weight must be positive: it is what keeps every
    /// probability strictly above zero.
    pub fn validate(&self) -> Result<()> {
        let all = [self.unigram, self.bigram, self.trigram];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::validation(format!(
                "lambdas must be non-negative: {all:?}"
            )));
        }
        if self.unigram <= 0.0 {
            return Err(Error::validation("the unigram lambda must be positive"));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "lambdas must sum to 1 (got {sum})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramLm {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    unigrams: Vec<u64>,
    total: u64,
    bigrams: HashMap<(u32, u32), u64>,
    bigram_ctx: HashMap<u32, u64>,
    trigrams: HashMap<(u32, u32, u32), u64>,
    trigram_ctx: HashMap<(u32, u32), u64>,
    lambdas: Lambdas,
    alpha: f64,
}

/// Raw n-gram counts keyed by space-joined token strings. Histories are
/// padded with two `<s>`, and every sentence ends with `</s>`.
pub type NGramCounts = BTreeMap<Vec<String>, u64>;

/// Counts unigrams, bigrams and trigrams over padded sentences.
pub fn count_ngrams<I>(sentences: I) -> Result<NGramCounts>
where
    I: IntoIterator<Item = Result<Sentence>>,
{
    let mut counts: HashMap<Vec<String>, u64> = HashMap::new();
    let mut any = false;
    for s in sentences {
        let s = s?;
        any = true;
        let mut padded: Vec<&str> = Vec::with_capacity(s.len() + 3);
        padded.extend([BOS, BOS]);
        padded.extend(s.iter().map(String::as_str));
        padded.push(EOS);
        for i in 2..padded.len() {
            for order in 1..=3 {
                let gram = padded[i + 1 - order..=i]
                    .iter()
                    .map(|t| t.to_string())
                    .collect();
                *counts.entry(gram).or_default() += 1;
            }
        }
    }
    if !any {
        return Err(Error::validation(
            "cannot train a language model on an empty corpus",
        ));
    }
    Ok(counts.into_iter().collect())
}

/// Trains on a stream of sentences.
pub fn train_lm<I>(sentences: I, lambdas: Lambdas, alpha: f64) -> Result<NGramLm>
where
    I: IntoIterator<Item = Result<Sentence>>,
{
    NGramLm::from_counts(&count_ngrams(sentences)?, lambdas, alpha)
}

impl NGramLm {
    /// Builds a model from an n-gram table. Context totals are recomputed
    /// from the higher-order rows, so the table is the whole model.
    pub fn from_counts(counts: &NGramCounts, lambdas: Lambdas, alpha: f64) -> Result<Self> {
        lambdas.validate()?;
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::validation(format!(
                "alpha must be positive (got {alpha})"
            )));
        }
        let mut words = BTreeSet::new();
        for gram in counts.keys() {
            if gram.is_empty() || gram.len() > 3 {
                return Err(Error::validation(format!(
                    "n-gram of order {} in count table",
                    gram.len()
                )));
            }
            for t in gram {
                if t != BOS && t != EOS && t != UNK {
                    words.insert(t.as_str());
                }
            }
        }
        let mut tokens: Vec<String> = vec![BOS.into(), EOS.into(), UNK.into()];
        tokens.extend(words.into_iter().map(str::to_owned));
        let index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();

        let mut lm = NGramLm {
            unigrams: vec![0; tokens.len()],
            tokens,
            index,
            total: 0,
            bigrams: HashMap::new(),
            bigram_ctx: HashMap::new(),
            trigrams: HashMap::new(),
            trigram_ctx: HashMap::new(),
            lambdas,
            alpha,
        };
        for (gram, &c) in counts {
            let ids: Vec<u32> = gram.iter().map(|t| lm.index[t.as_str()]).collect();
            if ids[ids.len() - 1] == BOS_ID {
                return Err(Error::validation("<s> cannot be a predicted token"));
            }
            match ids[..] {
                [w] => {
                    lm.unigrams[w as usize] += c;
                    lm.total += c;
                }
                [v, w] => {
                    *lm.bigrams.entry((v, w)).or_default() += c;
                    *lm.bigram_ctx.entry(v).or_default() += c;
                }
                [u, v, w] => {
                    *lm.trigrams.entry((u, v, w)).or_default() += c;
                    *lm.trigram_ctx.entry((u, v)).or_default() += c;
                }
                _ => unreachable!(),
            }
        }
        if lm.total == 0 {
            return Err(Error::validation("count table has no unigrams"));
        }
        Ok(lm)
    }

    pub fn lambdas(&self) -> Lambdas {
        self.lambdas
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Size of the predicted vocabulary: every token plus `</s>` and `<unk>`.
    pub fn predicted_vocab_size(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Predicted vocabulary in id order (`</s>`, `<unk>`, then tokens).
    pub fn predicted_vocab(&self) -> &[String] {
        &self.tokens[1..]
    }

    pub fn id(&self, token: &str) -> u32 {
        match self.index.get(token) {
            Some(&id) if id != BOS_ID => id,
            _ => UNK_ID,
        }
    }

    pub fn ids(&self, sentence: &[String]) -> Vec<u32> {
        sentence.iter().map(|t| self.id(t)).collect()
    }

    fn p_unigram(&self, w: u32) -> f64 {
        let v = self.predicted_vocab_size() as f64;
        (self.unigrams[w as usize] as f64 + self.alpha) / (self.total as f64 + self.alpha * v)
    }

    fn p_bigram_ml(&self, v: u32, w: u32) -> f64 {
        match self.bigram_ctx.get(&v) {
            Some(&n) => self.bigrams.get(&(v, w)).copied().unwrap_or(0) as f64 / n as f64,
            None => self.p_unigram(w),
        }
    }

    fn p_trigram_ml(&self, u: u32, v: u32, w: u32) -> f64 {
        match self.trigram_ctx.get(&(u, v)) {
            Some(&n) => self.trigrams.get(&(u, v, w)).copied().unwrap_or(0) as f64 / n as f64,
            None => self.p_bigram_ml(v, w),
        }
    }

    /// `p(w | u, v)` over ids.
    pub fn prob_ids(&self, u: u32, v: u32, w: u32) -> f64 {
        let l = &self.lambdas;
        l.trigram * self.p_trigram_ml(u, v, w)
            + l.bigram * self.p_bigram_ml(v, w)
            + l.unigram * self.p_unigram(w)
    }

    /// `p(word | history)`, where history is the two preceding tokens
    /// (use `<s>` for padding). Unknown strings map to `<unk>`.
    pub fn prob(&self, u: &str, v: &str, w: &str) -> f64 {
        let ctx = |t: &str| if t == BOS { BOS_ID } else { self.id(t) };
        self.prob_ids(ctx(u), ctx(v), self.id(w))
    }

    fn history(ids: &[u32], i: usize) -> (u32, u32) {
        let at = |k: usize| if k < 2 { BOS_ID } else { ids[k - 2] };
        // Padded position of token i is i + 2.
        (at(i), at(i + 1))
    }

    fn token_logprob(&self, ids: &[u32], i: usize) -> f64 {
        let (u, v) = Self::history(ids, i);
        let w = if i == ids.len() { EOS_ID } else { ids[i] };
        self.prob_ids(u, v, w).ln()
    }

    /// Natural-log probability of the whole sentence, including `</s>`.
    pub fn score_ids(&self, ids: &[u32]) -> f64 {
        (0..=ids.len()).map(|i| self.token_logprob(ids, i)).sum()
    }

    pub fn score(&self, sentence: &[String]) -> f64 {
        self.score_ids(&self.ids(sentence))
    }

    /// Log-probability of the tokens without the closing `</s>` term: the
    /// score of `sentence` as a prefix of a longer one.
    pub fn prefix_score(&self, sentence: &[String]) -> f64 {
        let ids = self.ids(sentence);
        (0..ids.len()).map(|i| self.token_logprob(&ids, i)).sum()
    }

    /// Sum of the terms whose history or target includes position `i`. Two
    /// sentences differing only at `i` differ in score by exactly the
    /// difference of their local scores.
    pub fn local_score(&self, ids: &[u32], i: usize) -> f64 {
        (i..=(i + 2).min(ids.len()))
            .map(|k| self.token_logprob(ids, k))
            .sum()
    }

    pub fn counts(&self) -> NGramCounts {
        let s = |id: u32| self.tokens[id as usize].clone();
        let mut out = NGramCounts::new();
        for (w, &c) in self.unigrams.iter().enumerate() {
            if c > 0 {
                out.insert(vec![s(w as u32)], c);
            }
        }
        for (&(v, w), &c) in &self.bigrams {
            out.insert(vec![s(v), s(w)], c);
        }
        for (&(u, v, w), &c) in &self.trigrams {
            out.insert(vec![s(u), s(v), s(w)], c);
        }
        out
    }

    /// Writes the sorted-text model: a header, the parameters, then one
    /// `ngram<TAB>count` row per n-gram in lexicographic order.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = String::new();
        let l = self.lambdas;
        writeln!(buf, "{MODEL_HEADER}").unwrap();
        writeln!(buf, "lambdas\t{}\t{}\t{}", l.unigram, l.bigram, l.trigram).unwrap();
        writeln!(buf, "alpha\t{}", self.alpha).unwrap();
        for (gram, c) in self.counts() {
            writeln!(buf, "{}\t{c}", gram.join(" ")).unwrap();
        }
        w.write_all(buf.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let mut lambdas = None;
        let mut alpha = None;
        let mut counts = NGramCounts::new();
        let mut header = false;
        for (i, line) in reader.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|source| Error::IoAtLine { line: n, source })?;
            if n == 1 {
                if line != MODEL_HEADER {
                    return Err(Error::parse(n, format!("expected header {MODEL_HEADER:?}")));
                }
                header = true;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::parse(n, format!("bad number {s:?}: {e}")))
            };
            match fields[..] {
                ["lambdas", a, b, c] => lambdas = Some(Lambdas::new(num(a)?, num(b)?, num(c)?)?),
                ["alpha", a] => alpha = Some(num(a)?),
                [gram, c] => {
                    let c = c
                        .parse()
                        .map_err(|e| Error::parse(n, format!("bad count {c:?}: {e}")))?;
                    counts.insert(gram.split(' ').map(str::to_owned).collect(), c);
                }
                _ => return Err(Error::parse(n, "expected `ngram<TAB>count`")),
            }
        }
        if !header {
            return Err(Error::validation("empty language model file"));
        }
        let lambdas = lambdas.ok_or_else(|| Error::validation("model file has no lambdas row"))?;
        let alpha = alpha.ok_or_else(|| Error::validation("model file has no alpha row"))?;
        Self::from_counts(&counts, lambdas, alpha)
    }
}

// ---------------------------------------------------------------------------
// Capital words

/// How dominant the capitalized form must be.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "value")]
pub enum CapitalRule {
    /// Capitalized count exceeds `value ×` lowercase count.
    Ratio(f64),
    /// Capitalized count exceeds lowercase count by more than `value`.
    Margin(u64),
}

impl Default for CapitalRule {
    fn default() -> Self {
        CapitalRule::Ratio(99.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapitalOptions {
    pub rule: CapitalRule,
    pub min_capital_count: u64,
}

impl Default for CapitalOptions {
    fn default() -> Self {
        CapitalOptions {
            rule: CapitalRule::default(),
            min_capital_count: 10,
        }
    }
}

/// Lowercase forms of words usually written capitalized.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CapitalWordList(BTreeSet<String>);

impl CapitalWordList {
    pub fn contains(&self, lowercase: &str) -> bool {
        self.0.contains(lowercase)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        for word in &self.0 {
            writeln!(w, "{word}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| Error::IoAtLine {
                line: i + 1,
                source,
            })?;
            let word = line.trim();
            if word.is_empty() {
                continue;
            }
            if word.chars().any(char::is_whitespace) || word.to_lowercase() != word {
                return Err(Error::parse(
                    i + 1,
                    format!("expected one lowercase word, got {word:?}"),
                ));
            }
            set.insert(word.to_owned());
        }
        Ok(CapitalWordList(set))
    }
}

impl FromIterator<String> for CapitalWordList {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        CapitalWordList(iter.into_iter().map(|w| w.to_lowercase()).collect())
    }
}

fn is_title_case(token: &str) -> bool {
    let mut chars = token.chars();
    match chars.next() {
        Some(c) if c.is_uppercase() => chars.all(|c| c.is_alphabetic() && c.is_lowercase()),
        _ => false,
    }
}

fn is_lower_word(token: &str) -> bool {
    token.chars().all(|c| c.is_alphabetic() && c.is_lowercase())
}

/// Collects words whose title-case form dominates their lowercase form.
/// The first alphabetic token of each sentence is not counted as a
/// capitalized occurrence.
pub fn extract_capital_words<I>(sentences: I, opts: &CapitalOptions) -> Result<CapitalWordList>
where
    I: IntoIterator<Item = Result<Sentence>>,
{
    let mut counts: HashMap<String, (u64, u64)> = HashMap::new();
    for s in sentences {
        let s = s?;
        let mut seen_word = false;
        for tok in s.iter() {
            let initial = !seen_word && tok.chars().any(char::is_alphabetic);
            if initial {
                seen_word = true;
            }
            if is_lower_word(tok) {
                counts.entry(tok.clone()).or_default().1 += 1;
            } else if !initial && is_title_case(tok) {
                counts.entry(tok.to_lowercase()).or_default().0 += 1;
            }
        }
    }
    let words = counts
        .into_iter()
        .filter(|&(_, (cap, low))| {
            cap >= opts.min_capital_count
                && match opts.rule {
                    CapitalRule::Ratio(r) => cap as f64 > r * low as f64,
                    CapitalRule::Margin(m) => cap > low.saturating_add(m),
                }
        })
        .map(|(w, _)| w)
        .collect();
    Ok(CapitalWordList(words))
}
