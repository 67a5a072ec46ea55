//! Synthetic error generation.
//!
//! The realistic noiser replays human edits harvested from annotated data
//! (in reverse: correct token -> observed erroneous token), and falls back to
//! type-based corruption of prepositions, nouns, and verbs. The random
//! noiser is the uniform insert/delete/substitute/swap baseline.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, AnnotatedPair, Sentence};
use crate::error::{Error, Result};
use crate::lexicon::{restore_case, MorphLexicon, TokenType};
use crate::registry::Registry;
use crate::rng::{substream, StreamRng};

pub const DICTIONARY_FORMAT_VERSION: u32 = 1;

/// Map from a correct token to the erroneous variants observed for it, with
/// counts. Variants are kept sorted by descending count, then token.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditDictionary {
    format_version: u32,
    min_count: u64,
    entries: BTreeMap<String, Vec<(String, u64)>>,
}

fn sort_variants(v: &mut [(String, u64)]) {
    v.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
}

impl EditDictionary {
    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[(String, u64)]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, u64)])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Builds from raw `(correct, original)` counts and prunes: variants seen
    /// fewer than `min_count` times go, then entries left empty or holding
    /// only their own noop variant go.
    pub fn from_counts(
        counts: HashMap<String, HashMap<String, u64>>,
        min_count: u64,
    ) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::validation("min_count must be at least 1"));
        }
        let mut entries = BTreeMap::new();
        for (correct, originals) in counts {
            let mut variants: Vec<(String, u64)> = originals
                .into_iter()
                .filter(|(_, c)| *c >= min_count)
                .collect();
            let noop_only = variants.len() == 1 && variants[0].0 == correct;
            if variants.is_empty() || noop_only {
                continue;
            }
            sort_variants(&mut variants);
            entries.insert(correct, variants);
        }
        Ok(EditDictionary {
            format_version: DICTIONARY_FORMAT_VERSION,
            min_count,
            entries,
        })
    }

    fn check(&self) -> Result<()> {
        if self.format_version != DICTIONARY_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "dictionary format_version {} (expected {DICTIONARY_FORMAT_VERSION})",
                self.format_version
            )));
        }
        for (k, variants) in &self.entries {
            if variants.is_empty() || (variants.len() == 1 && variants[0].0 == *k) {
                return Err(Error::validation(format!(
                    "entry {k:?} has no error variants"
                )));
            }
            if let Some((t, c)) = variants
                .iter()
                .find(|(t, c)| *c < self.min_count || t.is_empty())
            {
                return Err(Error::validation(format!(
                    "entry {k:?}: variant {t:?} has count {c} below min_count {}",
                    self.min_count
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut dict: EditDictionary = serde_json::from_str(text)?;
        dict.check()?;
        for v in dict.entries.values_mut() {
            sort_variants(v);
        }
        Ok(dict)
    }
}

/// Counts `(correct, original)` token pairs over every annotator of every
/// pair and prunes the result. Unedited tokens count as noop pairs; only
/// one-token-to-one-token edits contribute error variants.
pub fn build_dictionary(pairs: &[AnnotatedPair], min_count: u64) -> Result<EditDictionary> {
    let mut counts: HashMap<String, HashMap<String, u64>> = HashMap::new();
    let mut bump = |correct: &str, original: &str| {
        *counts
            .entry(correct.to_owned())
            .or_default()
            .entry(original.to_owned())
            .or_default() += 1;
    };
    for pair in pairs {
        let src = &pair.source;
        for ann in &pair.annotations {
            let mut pos = 0;
            for e in &ann.edits {
                for t in &src[pos..e.start] {
                    bump(t, t);
                }
                if e.end - e.start == 1 && e.replacement.len() == 1 {
                    bump(&e.replacement[0], &src[e.start]);
                }
                pos = e.end;
            }
            for t in &src[pos..] {
                bump(t, t);
            }
        }
    }
    EditDictionary::from_counts(counts, min_count)
}

// ---------------------------------------------------------------------------
// Configuration

fn default_min_count() -> u64 {
    4
}
fn default_token_error_prob() -> f64 {
    0.9
}
fn default_type_error_prob() -> f64 {
    0.1
}
fn default_random_op_prob() -> f64 {
    0.1
}
fn default_mode() -> String {
    "realistic".to_owned()
}
fn default_prepositions() -> Vec<String> {
    MorphLexicon::english().prepositions().to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisingConfig {
    #[serde(default = "default_min_count")]
    pub min_count: u64,
    /// Chance that a dictionary token is replaced by one of its variants.
    #[serde(default = "default_token_error_prob")]
    pub token_error_prob: f64,
    /// Chance that the type scenario fires for a PREP/NOUN/VERB token.
    #[serde(default = "default_type_error_prob")]
    pub type_error_prob: f64,
    #[serde(default)]
    pub seed: u64,
    /// Candidate prepositions; the empty string stands for deletion.
    #[serde(default = "default_prepositions")]
    pub preposition_set: Vec<String>,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_random_op_prob")]
    pub random_op_prob: f64,
}

impl Default for NoisingConfig {
    fn default() -> Self {
        NoisingConfig {
            min_count: default_min_count(),
            token_error_prob: default_token_error_prob(),
            type_error_prob: default_type_error_prob(),
            seed: 0,
            preposition_set: default_prepositions(),
            mode: default_mode(),
            random_op_prob: default_random_op_prob(),
        }
    }
}

impl NoisingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("token_error_prob", self.token_error_prob),
            ("type_error_prob", self.type_error_prob),
            ("random_op_prob", self.random_op_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("{name} = {p} is not in [0, 1]")));
            }
        }
        if !self.preposition_set.iter().any(String::is_empty) {
            return Err(Error::validation(
                "preposition_set must contain the empty token",
            ));
        }
        if self.min_count == 0 {
            return Err(Error::validation("min_count must be at least 1"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Noisers

pub trait Noiser: Send + Sync {
    fn name(&self) -> &'static str;

    /// Corrupts one sentence, drawing all randomness from `rng`.
    fn noise(&self, sentence: &Sentence, rng: &mut StreamRng) -> Sentence;
}

/// What happened to one input token under the realistic noiser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenNoise {
    Copied,
    /// A dictionary variant was drawn (possibly the noop variant).
    TokenBased {
        variant: String,
    },
    /// The type scenario fired; `None` means the token was deleted.
    TypeBased {
        token_type: TokenType,
        output: Option<String>,
    },
}

struct VariantSampler {
    variants: Vec<String>,
    cumulative: Vec<u64>,
}

impl VariantSampler {
    fn sample(&self, rng: &mut StreamRng) -> &str {
        let total = *self.cumulative.last().expect("non-empty entry");
        let r = rng.gen_range(0..total);
        let idx = self.cumulative.partition_point(|c| *c <= r);
        &self.variants[idx]
    }
}

pub struct RealisticNoiser {
    samplers: HashMap<String, VariantSampler>,
    lexicon: Arc<MorphLexicon>,
    prepositions: Vec<String>,
    token_error_prob: f64,
    type_error_prob: f64,
}

impl RealisticNoiser {
    pub fn new(
        dict: &EditDictionary,
        lexicon: Arc<MorphLexicon>,
        config: &NoisingConfig,
    ) -> Result<Self> {
        config.validate()?;
        let samplers = dict
            .iter()
            .map(|(k, variants)| {
                let mut acc = 0;
                let cumulative = variants
                    .iter()
                    .map(|(_, c)| {
                        acc += c;
                        acc
                    })
                    .collect();
                let variants = variants.iter().map(|(t, _)| t.clone()).collect();
                (
                    k.to_owned(),
                    VariantSampler {
                        variants,
                        cumulative,
                    },
                )
            })
            .collect();
        Ok(RealisticNoiser {
            samplers,
            lexicon,
            prepositions: config.preposition_set.clone(),
            token_error_prob: config.token_error_prob,
            type_error_prob: config.type_error_prob,
        })
    }

    fn token_type(&self, token: &str) -> TokenType {
        match self.lexicon.token_type(token) {
            TokenType::Other
                if self
                    .prepositions
                    .iter()
                    .any(|p| !p.is_empty() && p.eq_ignore_ascii_case(token)) =>
            {
                TokenType::Prep
            }
            t => t,
        }
    }

    fn noise_token(&self, token: &str, rng: &mut StreamRng) -> TokenNoise {
        if let Some(sampler) = self.samplers.get(token) {
            if rng.gen::<f64>() < self.token_error_prob {
                return TokenNoise::TokenBased {
                    variant: sampler.sample(rng).to_owned(),
                };
            }
        }
        let token_type = self.token_type(token);
        if token_type == TokenType::Other || rng.gen::<f64>() >= self.type_error_prob {
            return TokenNoise::Copied;
        }
        let output = match token_type {
            TokenType::Prep => {
                let p = &self.prepositions[rng.gen_range(0..self.prepositions.len())];
                (!p.is_empty()).then(|| restore_case(token, p))
            }
            TokenType::Noun => Some(
                self.lexicon
                    .inflect_noun(token)
                    .unwrap_or_else(|| token.to_owned()),
            ),
            TokenType::Verb => {
                let alts = self.lexicon.verb_alternatives(token);
                if alts.is_empty() {
                    Some(token.to_owned())
                } else {
                    Some(alts[rng.gen_range(0..alts.len())].clone())
                }
            }
            TokenType::Other => unreachable!(),
        };
        TokenNoise::TypeBased { token_type, output }
    }

    /// Noises a sentence and reports, per input token, which scenario fired.
    pub fn noise_traced(
        &self,
        sentence: &Sentence,
        rng: &mut StreamRng,
    ) -> (Sentence, Vec<TokenNoise>) {
        let mut out = Vec::with_capacity(sentence.len());
        let mut trace = Vec::with_capacity(sentence.len());
        for tok in sentence.iter() {
            let t = self.noise_token(tok, rng);
            match &t {
                TokenNoise::Copied => out.push(tok.clone()),
                TokenNoise::TokenBased { variant } => out.push(variant.clone()),
                TokenNoise::TypeBased { output, .. } => out.extend(output.iter().cloned()),
            }
            trace.push(t);
        }
        (Sentence::from_vec_unchecked(out), trace)
    }
}

impl Noiser for RealisticNoiser {
    fn name(&self) -> &'static str {
        "realistic"
    }

    fn noise(&self, sentence: &Sentence, rng: &mut StreamRng) -> Sentence {
        self.noise_traced(sentence, rng).0
    }
}

/// Tallies of the random noiser's decisions for one sentence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RandomTrace {
    pub positions: usize,
    pub inserts: usize,
    pub deletes: usize,
    /// Deletions that fired but were dropped to keep the sentence non-empty.
    pub suppressed_deletes: usize,
    pub substitutes: usize,
    pub swap_slots: usize,
    pub swaps: usize,
}

impl std::ops::AddAssign for RandomTrace {
    fn add_assign(&mut self, o: Self) {
        self.positions += o.positions;
        self.inserts += o.inserts;
        self.deletes += o.deletes;
        self.suppressed_deletes += o.suppressed_deletes;
        self.substitutes += o.substitutes;
        self.swap_slots += o.swap_slots;
        self.swaps += o.swaps;
    }
}

pub struct RandomNoiser {
    vocab: Arc<[String]>,
    prob: f64,
}

impl RandomNoiser {
    pub fn new(vocab: Arc<[String]>, config: &NoisingConfig) -> Result<Self> {
        config.validate()?;
        if config.random_op_prob > 0.5 {
            // Deletion and substitution share one draw.
            return Err(Error::validation(
                "random_op_prob above 0.5 is not supported",
            ));
        }
        if vocab.is_empty() {
            return Err(Error::validation(
                "random noising needs a non-empty vocabulary",
            ));
        }
        if vocab
            .iter()
            .any(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::validation(
                "vocabulary entries must be single tokens",
            ));
        }
        Ok(RandomNoiser {
            vocab,
            prob: config.random_op_prob,
        })
    }

    fn pick(&self, rng: &mut StreamRng) -> String {
        self.vocab[rng.gen_range(0..self.vocab.len())].clone()
    }

    /// Per position: insert before with the configured probability, and
    /// independently delete or substitute (mutually exclusive, each with the
    /// configured probability); then swap adjacent pairs with the same
    /// probability (a swapped pair is not considered again).
    pub fn noise_traced(
        &self,
        sentence: &Sentence,
        rng: &mut StreamRng,
    ) -> (Sentence, RandomTrace) {
        let n = sentence.len();
        let mut trace = RandomTrace {
            positions: n,
            ..Default::default()
        };
        let mut out = Vec::with_capacity(n + 2);
        for (i, tok) in sentence.iter().enumerate() {
            let insert = rng.gen::<f64>() < self.prob;
            let u = rng.gen::<f64>();
            let delete = u < self.prob;
            let substitute = !delete && u < 2.0 * self.prob;
            if insert {
                trace.inserts += 1;
                out.push(self.pick(rng));
            }
            if delete {
                trace.deletes += 1;
                if !(out.is_empty() && i + 1 == n) {
                    continue;
                }
                trace.suppressed_deletes += 1;
            }
            if substitute {
                trace.substitutes += 1;
                out.push(self.pick(rng));
            } else {
                out.push(tok.clone());
            }
        }
        let mut i = 0;
        while i + 1 < out.len() {
            trace.swap_slots += 1;
            if rng.gen::<f64>() < self.prob {
                trace.swaps += 1;
                out.swap(i, i + 1);
                i += 2;
            } else {
                i += 1;
            }
        }
        (Sentence::from_vec_unchecked(out), trace)
    }
}

impl Noiser for RandomNoiser {
    fn name(&self) -> &'static str {
        "random"
    }

    fn noise(&self, sentence: &Sentence, rng: &mut StreamRng) -> Sentence {
        self.noise_traced(sentence, rng).0
    }
}

/// Convenience wrapper: one realistic noising pass.
pub fn noise_sentence(
    sentence: &Sentence,
    dict: &EditDictionary,
    lexicon: Arc<MorphLexicon>,
    config: &NoisingConfig,
    rng: &mut StreamRng,
) -> Result<Sentence> {
    Ok(RealisticNoiser::new(dict, lexicon, config)?.noise(sentence, rng))
}

/// Convenience wrapper: one random-baseline noising pass.
pub fn noise_random(
    sentence: &Sentence,
    vocab: Arc<[String]>,
    config: &NoisingConfig,
    rng: &mut StreamRng,
) -> Result<Sentence> {
    Ok(RandomNoiser::new(vocab, config)?.noise(sentence, rng))
}

/// Artifacts a noiser may be built from.
#[derive(Clone)]
pub struct NoiserContext {
    pub config: NoisingConfig,
    pub dictionary: Option<Arc<EditDictionary>>,
    pub lexicon: Arc<MorphLexicon>,
    pub vocab: Option<Arc<[String]>>,
}

pub type NoiserRegistry = Registry<dyn Noiser, NoiserContext>;

/// The built-in noisers: `realistic` and `random`.
pub fn noisers() -> NoiserRegistry {
    let mut reg = NoiserRegistry::new("noising mode");
    reg.register("realistic", |ctx| {
        let dict = ctx
            .dictionary
            .as_deref()
            .ok_or_else(|| Error::validation("realistic noising needs an edit dictionary"))?;
        Ok(Box::new(RealisticNoiser::new(
            dict,
            ctx.lexicon.clone(),
            &ctx.config,
        )?))
    });
    reg.register("random", |ctx| {
        let vocab = ctx
            .vocab
            .clone()
            .ok_or_else(|| Error::validation("random noising needs a vocabulary"))?;
        Ok(Box::new(RandomNoiser::new(vocab, &ctx.config)?))
    });
    reg
}

// ---------------------------------------------------------------------------
// Corpus generation

#[derive(Debug, Clone, Copy)]
pub struct GenerateOptions {
    pub repetitions: usize,
    pub seed: u64,
    pub workers: usize,
    /// Lines processed per parallel batch.
    pub batch_lines: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            repetitions: 1,
            seed: 0,
            workers: 1,
            batch_lines: 16_384,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenerateStats {
    pub lines: u64,
    pub pairs: u64,
}

fn noise_line(
    noiser: &dyn Noiser,
    line: &str,
    index: u64,
    opts: &GenerateOptions,
    buf: &mut String,
) {
    let sentence = tokenize(line);
    for rep in 0..opts.repetitions {
        let mut rng = substream(opts.seed, index, rep as u64);
        let noised = noiser.noise(&sentence, &mut rng);
        for (k, tok) in noised.iter().enumerate() {
            if k > 0 {
                buf.push(' ');
            }
            buf.push_str(tok);
        }
        buf.push('\t');
        for (k, tok) in sentence.iter().enumerate() {
            if k > 0 {
                buf.push(' ');
            }
            buf.push_str(tok);
        }
        buf.push('\n');
    }
}

/// Streams `noised<TAB>clean` pairs: each input line is emitted
/// `repetitions` times, in input order. Line `i`, repetition `r` draws from
/// the stream `(seed, i, r)`, so the bytes do not depend on `workers`.
pub fn generate_corpus<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    noiser: &dyn Noiser,
    opts: &GenerateOptions,
) -> Result<GenerateStats> {
    if opts.repetitions == 0 {
        return Err(Error::validation("repetitions must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::validation(format!("cannot start worker pool: {e}")))?;
    let batch_size = opts.batch_lines.max(1);
    let mut stats = GenerateStats::default();
    let mut lines = input.lines();
    let mut batch: Vec<String> = Vec::with_capacity(batch_size);
    loop {
        batch.clear();
        for line in lines.by_ref().take(batch_size) {
            let n = stats.lines as usize + batch.len() + 1;
            let mut line = line.map_err(|source| Error::IoAtLine { line: n, source })?;
            if line.ends_with('\r') {
                line.pop();
            }
            if line.contains('\t') {
                return Err(Error::parse(n, "input line contains a tab"));
            }
            batch.push(line);
        }
        if batch.is_empty() {
            break;
        }
        let base = stats.lines;
        let chunks: Vec<String> = pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .with_min_len(256)
                .map(|(k, line)| {
                    let mut buf = String::with_capacity(line.len() * 2 * opts.repetitions + 8);
                    noise_line(noiser, line, base + k as u64, opts, &mut buf);
                    buf
                })
                .collect()
        });
        for chunk in &chunks {
            output.write_all(chunk.as_bytes())?;
        }
        stats.lines += batch.len() as u64;
        stats.pairs += (batch.len() * opts.repetitions) as u64;
    }
    output.flush()?;
    Ok(stats)
}
