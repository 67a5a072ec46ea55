//! Span-based correction scoring and corpus statistics.
//!
//! An edit matches when `(start, end, replacement)` agree exactly. For each
//! sentence the gold annotator giving the best sentence-level F0.5 is used
//! (lowest annotator id on ties), and counts accumulate over the corpus.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedPair, Edit};
use crate::error::{Error, Result};
use crate::rng::substream;

/// Category label for edits that carry none.
pub const UNKNOWN_CATEGORY: &str = "UNK";

/// Zero-denominator conventions, repeated in every written report.
pub const CONVENTIONS: &str =
    "precision = 1 when tp+fp = 0; recall = 1 when tp+fn = 0; F0.5 = 0 when its denominator is 0";

pub fn precision(tp: u64, fp: u64) -> f64 {
    if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    }
}

pub fn recall(tp: u64, fn_: u64) -> f64 {
    if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    }
}

pub fn f_beta(p: f64, r: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * p + r;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / denom
    }
}

pub fn f_half(p: f64, r: f64) -> f64 {
    f_beta(p, r, 0.5)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Counts { tp, fp, fn_ }
    }

    pub fn precision(&self) -> f64 {
        precision(self.tp, self.fp)
    }

    pub fn recall(&self) -> f64 {
        recall(self.tp, self.fn_)
    }

    pub fn f_half(&self) -> f64 {
        f_half(self.precision(), self.recall())
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_half: f64,
}

impl From<Counts> for CategoryScore {
    fn from(c: Counts) -> Self {
        CategoryScore {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: c.precision(),
            recall: c.recall(),
            f_half: c.f_half(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_half: f64,
    pub per_category: BTreeMap<String, CategoryScore>,
}

impl ScoreReport {
    pub fn counts(&self) -> Counts {
        Counts::new(self.tp, self.fp, self.fn_)
    }

    fn from_counts(total: Counts, per_category: BTreeMap<String, Counts>) -> Self {
        ScoreReport {
            tp: total.tp,
            fp: total.fp,
            fn_: total.fn_,
            precision: total.precision(),
            recall: total.recall(),
            f_half: total.f_half(),
            per_category: per_category
                .into_iter()
                .map(|(k, c)| (k, c.into()))
                .collect(),
        }
    }
}

fn category(e: &Edit) -> &str {
    e.category.as_deref().unwrap_or(UNKNOWN_CATEGORY)
}

type Key<'a> = (usize, usize, &'a [String]);

#[derive(Default)]
struct SentenceTally {
    total: Counts,
    per_category: BTreeMap<String, Counts>,
}

fn unique<'a>(edits: &'a [Edit]) -> Vec<&'a Edit> {
    let mut seen: HashSet<Key<'a>> = HashSet::new();
    edits.iter().filter(|e| seen.insert(e.key())).collect()
}

fn tally(hyp: &[&Edit], gold: &[&Edit]) -> SentenceTally {
    let gold_keys: HashSet<Key> = gold.iter().map(|e| e.key()).collect();
    let hyp_keys: HashSet<Key> = hyp.iter().map(|e| e.key()).collect();
    let mut t = SentenceTally::default();
    // Matches are credited to the gold edit's category, false positives to
    // the hypothesis edit's.
    for e in hyp {
        if !gold_keys.contains(&e.key()) {
            t.total.fp += 1;
            t.per_category.entry(category(e).to_owned()).or_default().fp += 1;
        }
    }
    for g in gold {
        let c = t.per_category.entry(category(g).to_owned()).or_default();
        if hyp_keys.contains(&g.key()) {
            t.total.tp += 1;
            c.tp += 1;
        } else {
            t.total.fn_ += 1;
            c.fn_ += 1;
        }
    }
    t
}

fn score_sentence(hyp: &[Edit], gold: &AnnotatedPair) -> SentenceTally {
    let hyp = unique(hyp);
    let mut annotations: Vec<(u32, Vec<&Edit>)> = gold
        .annotations
        .iter()
        .map(|a| (a.annotator, unique(&a.edits)))
        .collect();
    if annotations.is_empty() {
        annotations.push((0, Vec::new()));
    }
    annotations.sort_by_key(|(id, _)| *id);
    let mut best: Option<(f64, SentenceTally)> = None;
    for (_, edits) in &annotations {
        let t = tally(&hyp, edits);
        let f = t.total.f_half();
        if best.as_ref().is_none_or(|(bf, _)| f > *bf) {
            best = Some((f, t));
        }
    }
    best.expect("at least one annotation").1
}

/// Scores hypothesis edits (one list per sentence) against gold pairs.
pub fn score(hypothesis: &[Vec<Edit>], gold: &[AnnotatedPair]) -> Result<ScoreReport> {
    if hypothesis.len() != gold.len() {
        return Err(Error::validation(format!(
            "hypothesis has {} sentences but gold has {}",
            hypothesis.len(),
            gold.len()
        )));
    }
    let tallies: Vec<SentenceTally> = hypothesis
        .par_iter()
        .zip(gold.par_iter())
        .map(|(h, g)| score_sentence(h, g))
        .collect();
    let mut total = Counts::default();
    let mut per_category: BTreeMap<String, Counts> = BTreeMap::new();
    for t in tallies {
        total += t.total;
        for (k, c) in t.per_category {
            *per_category.entry(k).or_default() += c;
        }
    }
    Ok(ScoreReport::from_counts(total, per_category))
}

/// Scores a hypothesis M2 corpus (first annotator of each pair) against gold.
pub fn score_pairs(hypothesis: &[AnnotatedPair], gold: &[AnnotatedPair]) -> Result<ScoreReport> {
    for (i, (h, g)) in hypothesis.iter().zip(gold).enumerate() {
        if h.source != g.source {
            return Err(Error::validation(format!(
                "sentence {} differs between hypothesis and gold",
                i + 1
            )));
        }
    }
    let hyp: Vec<Vec<Edit>> = hypothesis
        .iter()
        .map(|p| {
            p.annotations
                .first()
                .map(|a| a.edits.clone())
                .unwrap_or_default()
        })
        .collect();
    score(&hyp, gold)
}

// ---------------------------------------------------------------------------
// Corpus statistics

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityMode {
    /// Edits of the first annotator only.
    #[default]
    FirstAnnotator,
    /// Mean edit count over all annotators of the sentence.
    AllAnnotators,
}

/// Per-sentence edit counts divided by sentence length.
pub fn sentence_densities(pairs: &[AnnotatedPair], mode: DensityMode) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::validation("edit density of an empty corpus"));
    }
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.source.is_empty() {
                return Err(Error::validation(format!("sentence {} is empty", i + 1)));
            }
            let edits = match mode {
                DensityMode::FirstAnnotator => {
                    p.annotations.first().map_or(0, |a| a.edits.len()) as f64
                }
                DensityMode::AllAnnotators if p.annotations.is_empty() => 0.0,
                DensityMode::AllAnnotators => {
                    p.annotations.iter().map(|a| a.edits.len()).sum::<usize>() as f64
                        / p.annotations.len() as f64
                }
            };
            Ok(edits / p.source.len() as f64)
        })
        .collect()
}

pub fn edit_density(pairs: &[AnnotatedPair], mode: DensityMode) -> Result<f64> {
    let d = sentence_densities(pairs, mode)?;
    Ok(mean(&d))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Permutations whose statistic is within this of the observed one count as
/// "at least as extreme", absorbing summation-order rounding.
const STAT_TOLERANCE: f64 = 1e-12;

fn check_groups(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation(
            "permutation test needs two non-empty groups",
        ));
    }
    Ok(())
}

fn mean_gap(a_sum: f64, na: usize, total: f64, nb: usize) -> f64 {
    (a_sum / na as f64 - (total - a_sum) / nb as f64).abs()
}

/// Approximate permutation test on the difference of means:
/// `p = (1 + #{rounds with stat ≥ observed}) / (rounds + 1)`. Round `r`
/// shuffles with stream `(seed, r, 0)`.
pub fn permutation_test(a: &[f64], b: &[f64], rounds: u64, seed: u64) -> Result<f64> {
    check_groups(a, b)?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let total: f64 = pooled.iter().sum();
    let observed = mean_gap(a.iter().sum(), a.len(), total, b.len());
    let hits: u64 = (0..rounds as usize)
        .into_par_iter()
        .with_min_len(64)
        .map_init(
            || pooled.clone(),
            |buf, r| {
                buf.copy_from_slice(&pooled);
                buf.shuffle(&mut substream(seed, r as u64, 0));
                let s: f64 = buf[..a.len()].iter().sum();
                u64::from(mean_gap(s, a.len(), total, b.len()) >= observed - STAT_TOLERANCE)
            },
        )
        .sum();
    Ok((1 + hits) as f64 / (rounds + 1) as f64)
}

/// Exact permutation p-value: the fraction of all ways to choose group A
/// from the pooled values whose statistic reaches the observed one.
pub fn exact_permutation_p(a: &[f64], b: &[f64]) -> Result<f64> {
    check_groups(a, b)?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    if n > 24 {
        return Err(Error::validation(
            "exact permutation test is limited to 24 values",
        ));
    }
    let total: f64 = pooled.iter().sum();
    let observed = mean_gap(a.iter().sum(), a.len(), total, b.len());
    let (mut hits, mut all) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let s: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| pooled[i])
            .sum();
        all += 1;
        hits += u64::from(mean_gap(s, a.len(), total, b.len()) >= observed - STAT_TOLERANCE);
    }
    Ok(hits as f64 / all as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Annotation, Sentence};

    fn e(s: usize, t: usize, r: &str) -> Edit {
        Edit::new(s, t, &[r])
    }

    fn pair(n: usize, annotations: Vec<Vec<Edit>>) -> AnnotatedPair {
        let toks: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        AnnotatedPair {
            source: Sentence::new(toks).unwrap(),
            annotations: annotations
                .into_iter()
                .enumerate()
                .map(|(i, edits)| Annotation {
                    annotator: i as u32,
                    edits,
                })
                .collect(),
        }
    }

    #[test]
    fn f_half_formula() {
        let c = Counts::new(2, 1, 2);
        assert!((c.precision() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.recall(), 0.5);
        assert!((c.f_half() - 0.625).abs() < 1e-12);
        assert_eq!(Counts::new(0, 0, 0).f_half(), 1.0);
        assert_eq!(Counts::new(0, 3, 0).f_half(), 0.0);
        assert_eq!(Counts::new(0, 0, 4).precision(), 1.0);
        assert_eq!(Counts::new(0, 0, 4).f_half(), 0.0);
    }

    #[test]
    fn best_annotator_is_selected() {
        let hyp = vec![e(0, 1, "a"), e(1, 2, "b"), e(2, 3, "c"), e(3, 4, "d")];
        // Annotator 0: tp 1, fp 3, fn 0 -> F0.5 = 0.294; annotator 1: tp 4, fp 0, fn 1.
        let gold = pair(
            6,
            vec![
                vec![e(0, 1, "a")],
                vec![
                    e(0, 1, "a"),
                    e(1, 2, "b"),
                    e(2, 3, "c"),
                    e(3, 4, "d"),
                    e(5, 6, "f"),
                ],
            ],
        );
        let r = score(&[hyp], &[gold]).unwrap();
        assert_eq!(r.counts(), Counts::new(4, 0, 1));
    }

    #[test]
    fn ties_go_to_lower_annotator() {
        let hyp = vec![e(0, 1, "a")];
        let gold = pair(
            3,
            vec![
                vec![e(1, 2, "x").with_category("B")],
                vec![e(2, 3, "y").with_category("C")],
            ],
        );
        let r = score(&[hyp], &[gold]).unwrap();
        assert_eq!(r.counts(), Counts::new(0, 1, 1));
        assert!(r.per_category.contains_key("B"));
        assert!(!r.per_category.contains_key("C"));
        assert_eq!(r.per_category["UNK"].fp, 1);
    }

    #[test]
    fn per_category_uses_gold_for_matches() {
        let hyp = vec![
            e(0, 1, "a").with_category("HYP"),
            e(1, 2, "z").with_category("HYP"),
        ];
        let gold = pair(3, vec![vec![e(0, 1, "a").with_category("GOLD")]]);
        let r = score(&[hyp], &[gold]).unwrap();
        assert_eq!(r.per_category["GOLD"].tp, 1);
        assert_eq!(r.per_category["HYP"].fp, 1);
        assert_eq!(r.per_category["HYP"].tp, 0);
    }

    #[test]
    fn noop_and_empty_contribute_nothing() {
        let r = score(&[vec![]], &[pair(3, vec![vec![]])]).unwrap();
        assert_eq!(r.counts(), Counts::default());
        assert_eq!(r.f_half, 1.0);
        assert!(score(&[vec![], vec![]], &[pair(3, vec![vec![]])]).is_err());
    }

    #[test]
    fn density() {
        let p = pair(
            10,
            vec![
                vec![e(0, 1, "x")],
                vec![e(0, 1, "x"), e(2, 3, "y"), e(4, 5, "z")],
            ],
        );
        assert!(
            (edit_density(std::slice::from_ref(&p), DensityMode::FirstAnnotator).unwrap() - 0.1)
                .abs()
                < 1e-15
        );
        assert!((edit_density(&[p], DensityMode::AllAnnotators).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(
            edit_density(&[pair(4, vec![vec![]])], DensityMode::FirstAnnotator).unwrap(),
            0.0
        );
        assert!(edit_density(&[], DensityMode::FirstAnnotator).is_err());
    }

    #[test]
    fn exact_permutation_of_separated_groups() {
        let a = [0.0; 4];
        let b = [10.0; 4];
        let exact = exact_permutation_p(&a, &b).unwrap();
        assert!((exact - 2.0 / 70.0).abs() < 1e-15);
        let mc = permutation_test(&a, &b, 10_000, 1).unwrap();
        assert!((mc - exact).abs() < 0.02);
        assert_eq!(mc, permutation_test(&a, &b, 10_000, 1).unwrap());
    }

    #[test]
    fn identical_groups_are_not_significant() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!(permutation_test(&a, &a, 2_000, 3).unwrap() > 0.9);
        assert!(permutation_test(&a, &[], 10, 3).is_err());
    }
}
