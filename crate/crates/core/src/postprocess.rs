//! Post-processing of a corrector's edits: dropping edits that touch unknown
//! tokens, LM-guided removal of edit combinations, and a search for error
//! categories whose edits are better left out.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{apply_edits_unchecked, validate_edits, AnnotatedPair, Edit, Sentence};
use crate::error::{Error, Result};
use crate::evalstats::{score, ScoreReport, UNKNOWN_CATEGORY};
use crate::lm::{NGramLm, UNK};
use crate::registry::Registry;
use crate::rng::substream;

fn default_max_removed() -> usize {
    7
}
fn default_max_categories() -> usize {
    3
}
fn default_rounds() -> usize {
    200
}
fn default_exhaustive_limit() -> usize {
    12
}
fn default_selector() -> String {
    "auto".to_owned()
}
fn default_unk_marker() -> String {
    UNK.to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    #[serde(default = "default_max_removed")]
    pub max_removed_edits: usize,
    #[serde(default = "default_max_categories")]
    pub max_categories_removed: usize,
    #[serde(default = "default_rounds")]
    pub search_rounds: usize,
    #[serde(default = "default_exhaustive_limit")]
    pub exhaustive_edit_limit: usize,
    #[serde(default)]
    pub seed: u64,
    /// Edit-selection strategy: `auto`, `exhaustive` or `greedy`.
    #[serde(default = "default_selector")]
    pub selector: String,
    #[serde(default = "default_unk_marker")]
    pub unk_marker: String,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            max_removed_edits: default_max_removed(),
            max_categories_removed: default_max_categories(),
            search_rounds: default_rounds(),
            exhaustive_edit_limit: default_exhaustive_limit(),
            seed: 0,
            selector: default_selector(),
            unk_marker: default_unk_marker(),
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.exhaustive_edit_limit < self.max_removed_edits {
            return Err(Error::validation(format!(
                "exhaustive_edit_limit ({}) must be at least max_removed_edits ({})",
                self.exhaustive_edit_limit, self.max_removed_edits
            )));
        }
        if self.exhaustive_edit_limit > 24 {
            return Err(Error::validation(
                "exhaustive_edit_limit above 24 is not supported",
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Unknown-token edits

/// Drops every edit whose source span covers an unknown token or whose
/// replacement contains one. Insertions cover nothing, so an insertion next
/// to an unknown token survives.
pub fn strip_unk_edits_by(
    source: &[String],
    edits: &[Edit],
    is_unk: impl Fn(&str) -> bool,
) -> Vec<Edit> {
    edits
        .iter()
        .filter(|e| {
            let covers = source[e.start..e.end].iter().any(|t| is_unk(t));
            let emits = e.replacement.iter().any(|t| is_unk(t));
            !covers && !emits
        })
        .cloned()
        .collect()
}

pub fn strip_unk_edits(source: &[String], edits: &[Edit], marker: &str) -> Vec<Edit> {
    strip_unk_edits_by(source, edits, |t| t == marker)
}

// ---------------------------------------------------------------------------
// LM-guided edit selection

/// Chooses which of a sentence's edits to keep.
pub trait EditSelector: Send + Sync {
    fn name(&self) -> &'static str;

    /// Indices of the kept edits, ascending.
    fn select(&self, source: &Sentence, edits: &[Edit], lm: &NGramLm) -> Vec<usize>;
}

fn score_kept(source: &Sentence, edits: &[Edit], keep: &[usize], lm: &NGramLm) -> f64 {
    lm.score(&apply_edits_unchecked(
        source,
        keep.iter().map(|&i| &edits[i]),
    ))
}

/// Calls `f` with every subset of `0..n` of size at most `k`, by size, then
/// in lexicographic order within a size.
pub fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = Vec::with_capacity(k);
    for size in 0..=k.min(n) {
        idx.clear();
        idx.extend(0..size);
        loop {
            f(&idx);
            // Advance to the next combination of this size.
            let Some(pos) = (0..size).rev().find(|&p| idx[p] != p + n - size) else {
                break;
            };
            idx[pos] += 1;
            for q in pos + 1..size {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
}

fn complement(n: usize, removed: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| !removed.contains(i)).collect()
}

/// Tries every removal set of at most `max_removed` edits. A later set only
/// wins with a strictly higher score, so ties go to fewer removals and then
/// to the lexicographically earliest set.
pub struct ExhaustiveSelector {
    pub max_removed: usize,
}

impl EditSelector for ExhaustiveSelector {
    fn name(&self) -> &'static str {
        "exhaustive"
    }

    fn select(&self, source: &Sentence, edits: &[Edit], lm: &NGramLm) -> Vec<usize> {
        let n = edits.len();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for_each_subset(n, self.max_removed, |removed| {
            let keep = complement(n, removed);
            let s = score_kept(source, edits, &keep, lm);
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, keep));
            }
        });
        best.map(|b| b.1).unwrap_or_default()
    }
}

/// Backward elimination: repeatedly drop the single edit whose removal
/// raises the score most, while that strictly improves it.
pub struct GreedySelector {
    pub max_removed: usize,
}

impl EditSelector for GreedySelector {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn select(&self, source: &Sentence, edits: &[Edit], lm: &NGramLm) -> Vec<usize> {
        let mut keep: Vec<usize> = (0..edits.len()).collect();
        let mut current = score_kept(source, edits, &keep, lm);
        for _ in 0..self.max_removed {
            let mut best: Option<(f64, usize)> = None;
            for pos in 0..keep.len() {
                let mut trial = keep.clone();
                trial.remove(pos);
                let s = score_kept(source, edits, &trial, lm);
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, pos));
                }
            }
            match best {
                Some((s, pos)) if s > current => {
                    keep.remove(pos);
                    current = s;
                }
                _ => break,
            }
        }
        keep
    }
}

/// Exhaustive up to a size limit, greedy beyond it.
pub struct AutoSelector {
    pub exhaustive: ExhaustiveSelector,
    pub greedy: GreedySelector,
    pub exhaustive_limit: usize,
}

impl EditSelector for AutoSelector {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn select(&self, source: &Sentence, edits: &[Edit], lm: &NGramLm) -> Vec<usize> {
        if edits.len() <= self.exhaustive_limit {
            self.exhaustive.select(source, edits, lm)
        } else {
            self.greedy.select(source, edits, lm)
        }
    }
}

pub type SelectorRegistry = Registry<dyn EditSelector, PostprocessConfig>;

/// The built-in selectors: `auto`, `exhaustive` and `greedy`.
pub fn selectors() -> SelectorRegistry {
    let mut reg = SelectorRegistry::new("edit selector");
    reg.register("exhaustive", |c| {
        Ok(Box::new(ExhaustiveSelector {
            max_removed: c.max_removed_edits,
        }))
    });
    reg.register("greedy", |c| {
        Ok(Box::new(GreedySelector {
            max_removed: c.max_removed_edits,
        }))
    });
    reg.register("auto", |c| {
        c.validate()?;
        Ok(Box::new(AutoSelector {
            exhaustive: ExhaustiveSelector {
                max_removed: c.max_removed_edits,
            },
            greedy: GreedySelector {
                max_removed: c.max_removed_edits,
            },
            exhaustive_limit: c.exhaustive_edit_limit,
        }))
    });
    reg
}

/// Keeps the combination of edits the LM prefers, using the configured
/// selector. Surviving edits keep their relative order.
pub fn lm_select_edits(
    source: &Sentence,
    edits: &[Edit],
    lm: &NGramLm,
    config: &PostprocessConfig,
) -> Result<Vec<Edit>> {
    let selector = selectors().build(&config.selector, config)?;
    select_with(selector.as_ref(), source, edits, lm)
}

pub fn select_with(
    selector: &dyn EditSelector,
    source: &Sentence,
    edits: &[Edit],
    lm: &NGramLm,
) -> Result<Vec<Edit>> {
    validate_edits(source.len(), edits)?;
    Ok(selector
        .select(source, edits, lm)
        .into_iter()
        .map(|i| edits[i].clone())
        .collect())
}

// ---------------------------------------------------------------------------
// Category filtering

/// Removes every hypothesis edit whose category is in `drop`.
pub fn drop_categories(hypothesis: &[Vec<Edit>], drop: &[String]) -> Vec<Vec<Edit>> {
    hypothesis
        .iter()
        .map(|edits| {
            edits
                .iter()
                .filter(|e| {
                    !drop
                        .iter()
                        .any(|d| d == e.category.as_deref().unwrap_or(UNKNOWN_CATEGORY))
                })
                .cloned()
                .collect()
        })
        .collect()
}

pub fn hypothesis_categories(hypothesis: &[Vec<Edit>]) -> BTreeSet<String> {
    hypothesis
        .iter()
        .flatten()
        .map(|e| {
            e.category
                .clone()
                .unwrap_or_else(|| UNKNOWN_CATEGORY.to_owned())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySearchResult {
    /// Categories to drop, sorted.
    pub dropped: Vec<String>,
    pub report: ScoreReport,
    pub baseline: ScoreReport,
    pub evaluated: usize,
}

/// The subsets tried: the empty set, then every subset of size one and two,
/// then seeded random subsets of size three up to the limit, until
/// `search_rounds` non-empty subsets have been drawn.
pub fn candidate_subsets(categories: &[String], config: &PostprocessConfig) -> Vec<Vec<String>> {
    let n = categories.len();
    let max = config.max_categories_removed.min(n);
    let rounds = config.search_rounds;
    let mut out = vec![Vec::new()];
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut drawn = 0;
    for_each_subset(n, max.min(2), |idx| {
        if !idx.is_empty() && drawn < rounds {
            drawn += 1;
            seen.insert(idx.to_vec());
            out.push(idx.iter().map(|&i| categories[i].clone()).collect());
        }
    });
    let mut round = 0u64;
    while drawn < rounds && max >= 3 {
        let mut rng = substream(config.seed, round, 0);
        round += 1;
        drawn += 1;
        let k = rng.gen_range(3..=max);
        let mut idx = sample(&mut rng, n, k).into_vec();
        idx.sort_unstable();
        if seen.insert(idx.clone()) {
            out.push(idx.iter().map(|&i| categories[i].clone()).collect());
        }
    }
    out
}

fn better(a: &(f64, &Vec<String>), b: &(f64, &Vec<String>)) -> Ordering {
    // Greater is better: higher F0.5, then fewer categories, then earlier.
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.1.len().cmp(&a.1.len()))
        .then_with(|| b.1.cmp(a.1))
}

/// Searches for the set of categories whose removal maximizes dev F0.5.
/// The empty set is always a candidate, so the result never scores below
/// leaving the hypothesis untouched.
pub fn category_filter_search(
    hypothesis: &[Vec<Edit>],
    gold: &[AnnotatedPair],
    categories: Option<&BTreeSet<String>>,
    config: &PostprocessConfig,
) -> Result<CategorySearchResult> {
    if gold.is_empty() {
        return Err(Error::validation(
            "category search needs a non-empty development set",
        ));
    }
    let cats: Vec<String> = match categories {
        Some(c) => c.iter().cloned().collect(),
        None => hypothesis_categories(hypothesis).into_iter().collect(),
    };
    let subsets = candidate_subsets(&cats, config);
    let reports: Vec<ScoreReport> = subsets
        .par_iter()
        .map(|drop| score(&drop_categories(hypothesis, drop), gold))
        .collect::<Result<_>>()?;
    let best = (0..subsets.len())
        .max_by(|&i, &j| {
            better(
                &(reports[i].f_half, &subsets[i]),
                &(reports[j].f_half, &subsets[j]),
            )
        })
        .expect("the empty subset is always present");
    Ok(CategorySearchResult {
        dropped: subsets[best].clone(),
        report: reports[best].clone(),
        baseline: reports[0].clone(),
        evaluated: subsets.len(),
    })
}
