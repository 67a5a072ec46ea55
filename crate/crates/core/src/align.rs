//! Token alignment and edit extraction between a source sentence and its
//! correction, plus a coarse rule-based edit classifier.

use std::collections::HashSet;

use serde::Serialize;

use crate::corpus::{Edit, Sentence};
use crate::distance::osa_distance;
use crate::lexicon::{MorphLexicon, TokenType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Match,
    Substitute,
    Insert,
    Delete,
    Transpose,
}

/// One step of an alignment. Spans are half-open token ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct AlignOp {
    pub kind: OpKind,
    pub src: (usize, usize),
    pub tgt: (usize, usize),
}

// Costs in half units so the case-only substitution (0.5) stays integral.
const HALF_MATCH: u32 = 0;
const HALF_CASE_SUB: u32 = 1;
const HALF_SUB: u32 = 2;
const HALF_INDEL: u32 = 2;
const HALF_TRANSPOSE: u32 = 3;

fn sub_cost(a: &str, b: &str) -> u32 {
    if a == b {
        HALF_MATCH
    } else if a.to_lowercase() == b.to_lowercase() {
        HALF_CASE_SUB
    } else {
        HALF_SUB
    }
}

impl AlignOp {
    /// Cost under match 0, substitute 1 (0.5 case-only), insert/delete 1,
    /// transpose 1.5.
    pub fn cost(&self, source: &[String], target: &[String]) -> f64 {
        let half = match self.kind {
            OpKind::Match => HALF_MATCH,
            OpKind::Substitute => sub_cost(&source[self.src.0], &target[self.tgt.0]),
            OpKind::Insert | OpKind::Delete => HALF_INDEL,
            OpKind::Transpose => HALF_TRANSPOSE,
        };
        f64::from(half) / 2.0
    }
}

pub fn alignment_cost(ops: &[AlignOp], source: &[String], target: &[String]) -> f64 {
    ops.iter().map(|op| op.cost(source, target)).sum()
}

/// Minimum-cost alignment. When several operations reach a cell at the same
/// cost the backtrace prefers match, substitute, delete, insert, transpose in
/// that order.
pub fn align(source: &Sentence, target: &Sentence) -> Vec<AlignOp> {
    align_tokens(source, target)
}

pub fn align_tokens(s: &[String], t: &[String]) -> Vec<AlignOp> {
    let (n, m) = (s.len(), t.len());
    let w = m + 1;
    let mut cost = vec![0u32; (n + 1) * w];
    let at = |i: usize, j: usize| i * w + j;
    let lower_s: Vec<String> = s.iter().map(|x| x.to_lowercase()).collect();
    let lower_t: Vec<String> = t.iter().map(|x| x.to_lowercase()).collect();
    let pair_cost = |i: usize, j: usize| {
        if s[i] == t[j] {
            HALF_MATCH
        } else if lower_s[i] == lower_t[j] {
            HALF_CASE_SUB
        } else {
            HALF_SUB
        }
    };
    let transposable = |i: usize, j: usize| {
        i >= 2 && j >= 2 && s[i - 1] == t[j - 2] && s[i - 2] == t[j - 1] && s[i - 1] != s[i - 2]
    };

    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            let mut best = u32::MAX;
            if i > 0 && j > 0 {
                best = best.min(cost[at(i - 1, j - 1)] + pair_cost(i - 1, j - 1));
            }
            if i > 0 {
                best = best.min(cost[at(i - 1, j)] + HALF_INDEL);
            }
            if j > 0 {
                best = best.min(cost[at(i, j - 1)] + HALF_INDEL);
            }
            if transposable(i, j) {
                best = best.min(cost[at(i - 2, j - 2)] + HALF_TRANSPOSE);
            }
            cost[at(i, j)] = best;
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[at(i, j)];
        let diag = (i > 0 && j > 0)
            .then(|| pair_cost(i - 1, j - 1))
            .filter(|p| cost[at(i - 1, j - 1)] + p == here);
        let op = if diag == Some(HALF_MATCH) {
            OpKind::Match
        } else if diag.is_some() {
            OpKind::Substitute
        } else if i > 0 && cost[at(i - 1, j)] + HALF_INDEL == here {
            OpKind::Delete
        } else if j > 0 && cost[at(i, j - 1)] + HALF_INDEL == here {
            OpKind::Insert
        } else {
            debug_assert!(transposable(i, j) && cost[at(i - 2, j - 2)] + HALF_TRANSPOSE == here);
            OpKind::Transpose
        };
        let (di, dj) = match op {
            OpKind::Match | OpKind::Substitute => (1, 1),
            OpKind::Delete => (1, 0),
            OpKind::Insert => (0, 1),
            OpKind::Transpose => (2, 2),
        };
        ops.push(AlignOp {
            kind: op,
            src: (i - di, i),
            tgt: (j - dj, j),
        });
        i -= di;
        j -= dj;
    }
    ops.reverse();
    ops
}

/// Edits turning `source` into `target`: each maximal run of adjacent
/// non-match operations becomes one edit.
pub fn extract_edits(source: &Sentence, target: &Sentence) -> Vec<Edit> {
    let ops = align(source, target);
    let mut edits = Vec::new();
    let mut run: Option<(AlignOp, AlignOp)> = None;
    let flush = |run: &mut Option<(AlignOp, AlignOp)>, edits: &mut Vec<Edit>| {
        if let Some((first, last)) = run.take() {
            edits.push(Edit {
                start: first.src.0,
                end: last.src.1,
                replacement: target[first.tgt.0..last.tgt.1].to_vec(),
                category: None,
            });
        }
    };
    for op in ops {
        if op.kind == OpKind::Match {
            flush(&mut run, &mut edits);
        } else {
            run = Some(match run {
                Some((first, _)) => (first, op),
                None => (op, op),
            });
        }
    }
    flush(&mut run, &mut edits);
    edits
}

// ---------------------------------------------------------------------------
// Classification

pub const CAT_PUNCT: &str = "PUNCT";
pub const CAT_PREP: &str = "PREP";
pub const CAT_NOUN_NUM: &str = "NOUN:NUM";
pub const CAT_VERB_FORM: &str = "VERB:FORM";
pub const CAT_SPELL: &str = "SPELL";
pub const CAT_ORTH: &str = "ORTH";
pub const CAT_OTHER: &str = "OTHER";

fn is_punct_token(tok: &str) -> bool {
    !tok.is_empty() && tok.chars().all(|c| !c.is_alphanumeric())
}

/// Assigns one of PUNCT, PREP, NOUN:NUM, VERB:FORM, ORTH, SPELL, OTHER.
///
/// `vocab` decides which source tokens count as out-of-vocabulary for the
/// SPELL rule (compared lowercase); without it, tokens unknown to the
/// lexicon are treated as out-of-vocabulary.
pub fn classify_edit(
    source: &Sentence,
    edit: &Edit,
    lexicon: &MorphLexicon,
    vocab: Option<&HashSet<String>>,
) -> &'static str {
    let orig = &source[edit.start..edit.end];
    let repl = &edit.replacement;
    let all: Vec<&String> = orig.iter().chain(repl.iter()).collect();
    if !all.is_empty() && all.iter().all(|t| is_punct_token(t)) {
        return CAT_PUNCT;
    }

    let prep_side = |side: &[String]| match side {
        [] => true,
        [t] => lexicon.is_preposition(t),
        _ => false,
    };
    if orig.len() + repl.len() > 0 && prep_side(orig) && prep_side(repl) {
        return CAT_PREP;
    }

    if let ([o], [r]) = (orig, repl.as_slice()) {
        if lexicon
            .inflect_noun(o)
            .is_some_and(|t| t.to_lowercase() == r.to_lowercase())
        {
            return CAT_NOUN_NUM;
        }
        if o.to_lowercase() != r.to_lowercase()
            && lexicon.token_type(o) == TokenType::Verb
            && lexicon.lemma(o).is_some()
            && lexicon.lemma(o) == lexicon.lemma(r)
        {
            return CAT_VERB_FORM;
        }
    }

    let lower = |side: &[String]| side.iter().map(|t| t.to_lowercase()).collect::<Vec<_>>();
    if !orig.is_empty() && orig != repl.as_slice() && lower(orig) == lower(repl) {
        return CAT_ORTH;
    }

    if let ([o], [r]) = (orig, repl.as_slice()) {
        let oov = match vocab {
            Some(v) => !v.contains(&o.to_lowercase()),
            None => !lexicon.knows(o),
        };
        if oov
            && o.chars().all(char::is_alphabetic)
            && osa_distance(&o.to_lowercase(), &r.to_lowercase()) <= 2
        {
            return CAT_SPELL;
        }
    }
    CAT_OTHER
}
