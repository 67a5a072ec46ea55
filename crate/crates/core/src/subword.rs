//! Byte-pair encoding with an end-of-word marker.
//!
//! A word starts as its characters, with `</w>` fused onto the last one, so
//! `low` is `l o w</w>`. Learning repeatedly merges the most frequent
//! adjacent pair (ties go to the lexicographically smallest pair) until the
//! symbol budget is spent. The budget counts the distinct characters plus
//! one symbol per merge.
//!
//! Words containing the literal text `</w>` are not supported.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const UNKNOWN_SYMBOL: &str = "<unk>";
const MODEL_HEADER: &str = "#gecforge-bpe 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    alphabet: BTreeSet<char>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    target_vocab_size: usize,
}

/// Word frequencies over whitespace-separated tokens, counted in parallel.
pub fn count_words(lines: &[String]) -> HashMap<String, u64> {
    lines
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<String, u64>, line| {
            for w in line.split_whitespace() {
                *acc.entry(w.to_owned()).or_default() += 1;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (w, c) in b {
                *a.entry(w).or_default() += c;
            }
            a
        })
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = syms.last_mut() {
        last.push_str(END_OF_WORD);
    }
    syms
}

/// Heap entry; the max is the highest count, then the smallest pair.
#[derive(PartialEq, Eq)]
struct Ranked {
    count: u64,
    pair: Reverse<(String, String)>,
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| self.pair.cmp(&other.pair))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

type Pair = (String, String);

fn pairs_of(word: &[String]) -> impl Iterator<Item = Pair> + '_ {
    word.windows(2).map(|w| (w[0].clone(), w[1].clone()))
}

fn merge_word(word: &[String], pair: &Pair) -> Vec<String> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == pair.0 && word[i + 1] == pair.1 {
            out.push(format!("{}{}", pair.0, pair.1));
            i += 2;
        } else {
            out.push(word[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns merges from word counts.
pub fn bpe_learn_counts(
    words: &HashMap<String, u64>,
    target_vocab_size: usize,
) -> Result<BpeModel> {
    let alphabet: BTreeSet<char> = words.keys().flat_map(|w| w.chars()).collect();
    if alphabet.is_empty() {
        return Err(Error::validation("cannot learn BPE from an empty corpus"));
    }
    if target_vocab_size < alphabet.len() {
        return Err(Error::validation(format!(
            "target vocabulary size {target_vocab_size} is below the {} distinct characters",
            alphabet.len()
        )));
    }
    if words.keys().any(|w| w.contains(END_OF_WORD)) {
        return Err(Error::validation(format!(
            "corpus words may not contain {END_OF_WORD:?}"
        )));
    }
    // Sorted for a deterministic word order.
    let mut sorted: Vec<(&String, u64)> = words.iter().map(|(w, c)| (w, *c)).collect();
    sorted.sort();
    let mut segs: Vec<Vec<String>> = sorted.iter().map(|(w, _)| initial_symbols(w)).collect();
    let freqs: Vec<u64> = sorted.iter().map(|(_, c)| *c).collect();

    let mut counts: HashMap<Pair, u64> = HashMap::new();
    let mut where_: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (i, seg) in segs.iter().enumerate() {
        for p in pairs_of(seg) {
            *counts.entry(p.clone()).or_default() += freqs[i];
            where_.entry(p).or_default().insert(i);
        }
    }
    let mut heap: BinaryHeap<Ranked> = counts
        .iter()
        .map(|(p, c)| Ranked {
            count: *c,
            pair: Reverse(p.clone()),
        })
        .collect();

    let budget = target_vocab_size - alphabet.len();
    let mut merges = Vec::with_capacity(budget);
    while merges.len() < budget {
        let Some(top) = heap.pop() else { break };
        let pair = top.pair.0;
        match counts.get(&pair) {
            Some(&c) if c == top.count && c > 0 => {}
            _ => continue,
        }
        let mut touched: HashSet<Pair> = HashSet::new();
        let mut affected: Vec<usize> = where_
            .remove(&pair)
            .unwrap_or_default()
            .into_iter()
            .collect();
        affected.sort_unstable();
        for i in affected {
            let f = freqs[i];
            for p in pairs_of(&segs[i]) {
                let c = counts.get_mut(&p).expect("counted pair");
                *c -= f;
                touched.insert(p);
            }
            for p in pairs_of(&segs[i]).collect::<Vec<_>>() {
                if let Some(set) = where_.get_mut(&p) {
                    set.remove(&i);
                }
            }
            segs[i] = merge_word(&segs[i], &pair);
            for p in pairs_of(&segs[i]) {
                *counts.entry(p.clone()).or_default() += f;
                where_.entry(p.clone()).or_default().insert(i);
                touched.insert(p);
            }
        }
        counts.remove(&pair);
        for p in touched {
            if let Some(&c) = counts.get(&p) {
                if c > 0 {
                    heap.push(Ranked {
                        count: c,
                        pair: Reverse(p),
                    });
                }
            }
        }
        merges.push(pair);
    }
    Ok(BpeModel::new(alphabet, merges, target_vocab_size))
}

/// Learns from raw lines (whitespace-separated words).
pub fn bpe_learn(lines: &[String], target_vocab_size: usize) -> Result<BpeModel> {
    bpe_learn_counts(&count_words(lines), target_vocab_size)
}

impl BpeModel {
    fn new(alphabet: BTreeSet<char>, merges: Vec<Pair>, target_vocab_size: usize) -> Self {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        BpeModel {
            alphabet,
            merges,
            ranks,
            target_vocab_size,
        }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn alphabet(&self) -> impl Iterator<Item = char> + '_ {
        self.alphabet.iter().copied()
    }

    pub fn target_vocab_size(&self) -> usize {
        self.target_vocab_size
    }

    /// Distinct characters plus one symbol per merge.
    pub fn vocab_size(&self) -> usize {
        self.alphabet.len() + self.merges.len()
    }

    /// Segments one word: repeatedly merge the adjacent pair with the
    /// earliest-learned merge.
    pub fn segment(&self, word: &str) -> Vec<String> {
        let mut syms: Vec<String> = word
            .chars()
            .map(|c| {
                if self.alphabet.contains(&c) {
                    c.to_string()
                } else {
                    UNKNOWN_SYMBOL.to_owned()
                }
            })
            .collect();
        if let Some(last) = syms.last_mut() {
            last.push_str(END_OF_WORD);
        }
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|r| (*r, w))
                })
                .min_by_key(|(r, _)| *r);
            let Some((rank, _)) = best else { break };
            syms = merge_word(&syms, &self.merges[rank]);
        }
        syms
    }

    pub fn apply(&self, sentence: &[String]) -> Vec<String> {
        sentence.iter().flat_map(|w| self.segment(w)).collect()
    }

    /// Applies to a line of whitespace-separated words, with a per-call
    /// cache so repeated words segment once.
    pub fn apply_line(&self, line: &str, cache: &mut HashMap<String, Vec<String>>) -> String {
        let mut out = String::with_capacity(line.len() * 2);
        for w in line.split_whitespace() {
            if !cache.contains_key(w) {
                cache.insert(w.to_owned(), self.segment(w));
            }
            for sym in &cache[w] {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(sym);
            }
        }
        out
    }

    /// Joins subwords back into words at each end-of-word marker.
    pub fn revert(&self, subwords: &[String]) -> Result<Sentence> {
        let mut words = Vec::new();
        let mut cur = String::new();
        for s in subwords {
            match s.strip_suffix(END_OF_WORD) {
                Some(stem) => {
                    cur.push_str(stem);
                    words.push(std::mem::take(&mut cur));
                }
                None => cur.push_str(s),
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
        Sentence::new(words)
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = String::new();
        writeln!(buf, "{MODEL_HEADER}").unwrap();
        writeln!(buf, "target_vocab_size\t{}", self.target_vocab_size).unwrap();
        let alphabet: Vec<String> = self.alphabet.iter().map(|c| c.to_string()).collect();
        writeln!(buf, "alphabet\t{}", alphabet.join(" ")).unwrap();
        for (a, b) in &self.merges {
            writeln!(buf, "{a} {b}").unwrap();
        }
        w.write_all(buf.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let mut next = |n: usize| -> Result<String> {
            match lines.next() {
                Some(l) => l.map_err(|source| Error::IoAtLine { line: n, source }),
                None => Err(Error::parse(n, "unexpected end of BPE model")),
            }
        };
        if next(1)? != MODEL_HEADER {
            return Err(Error::parse(1, format!("expected header {MODEL_HEADER:?}")));
        }
        let target = next(2)?;
        let target_vocab_size = target
            .strip_prefix("target_vocab_size\t")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(2, "expected `target_vocab_size<TAB>N`"))?;
        let alpha = next(3)?;
        let alpha = alpha
            .strip_prefix("alphabet\t")
            .ok_or_else(|| Error::parse(3, "expected `alphabet<TAB>chars`"))?;
        let mut alphabet = BTreeSet::new();
        for c in alpha.split(' ') {
            let mut it = c.chars();
            match (it.next(), it.next()) {
                (Some(ch), None) => {
                    alphabet.insert(ch);
                }
                _ => {
                    return Err(Error::parse(
                        3,
                        format!("alphabet entry {c:?} is not one character"),
                    ))
                }
            }
        }
        let mut merges = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in lines.enumerate() {
            let n = i + 4;
            let line = line.map_err(|source| Error::IoAtLine { line: n, source })?;
            let (a, b) = line
                .split_once(' ')
                .filter(|(a, b)| !a.is_empty() && !b.is_empty() && !b.contains(' '))
                .ok_or_else(|| Error::parse(n, "expected `left right`"))?;
            let pair = (a.to_owned(), b.to_owned());
            if !seen.insert(pair.clone()) {
                return Err(Error::parse(n, format!("duplicate merge {a} {b}")));
            }
            merges.push(pair);
        }
        Ok(Self::new(alphabet, merges, target_vocab_size))
    }
}
