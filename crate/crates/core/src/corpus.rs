//! Token-level corpus types and the on-disk formats they travel in: raw
//! one-sentence-per-line text, `source<TAB>target` TSV, and M2 annotation
//! files.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A tokenized sentence. Tokens are non-empty and contain no whitespace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Sentence(Vec<String>);

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        for (i, tok) in tokens.iter().enumerate() {
            check_token(tok).map_err(|m| Error::validation(format!("token {i}: {m}")))?;
        }
        Ok(Sentence(tokens))
    }

    /// Splits on single ASCII spaces; used for already-tokenized text.
    pub fn from_spaced(line: &str) -> Result<Self> {
        if line.is_empty() {
            return Ok(Sentence::default());
        }
        Sentence::new(line.split(' ').map(str::to_owned).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    pub(crate) fn from_vec_unchecked(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.iter().all(|t| check_token(t).is_ok()));
        Sentence(tokens)
    }
}

impl Deref for Sentence {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

impl TryFrom<Vec<String>> for Sentence {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Sentence::new(tokens)
    }
}

impl From<Sentence> for Vec<String> {
    fn from(s: Sentence) -> Vec<String> {
        s.0
    }
}

fn check_token(tok: &str) -> std::result::Result<(), &'static str> {
    if tok.is_empty() {
        Err("empty token")
    } else if tok.chars().any(char::is_whitespace) {
        Err("token contains whitespace")
    } else {
        Ok(())
    }
}

/// A replacement of the token span `[start, end)` of a source sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edit {
    pub start: usize,
    pub end: usize,
    pub replacement: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl Edit {
    pub fn new(start: usize, end: usize, replacement: &[&str]) -> Self {
        Edit {
            start,
            end,
            replacement: replacement.iter().map(|s| (*s).to_owned()).collect(),
            category: None,
        }
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }

    pub fn is_insertion(&self) -> bool {
        self.start == self.end
    }

    /// The identity used for scoring: span plus replacement, ignoring category.
    pub fn key(&self) -> (usize, usize, &[String]) {
        (self.start, self.end, &self.replacement)
    }
}

/// One annotator's edit list for a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator: u32,
    pub edits: Vec<Edit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedPair {
    pub source: Sentence,
    pub annotations: Vec<Annotation>,
}

impl AnnotatedPair {
    /// A pair with a single annotator (id 0).
    pub fn single(source: Sentence, edits: Vec<Edit>) -> Self {
        AnnotatedPair {
            source,
            annotations: vec![Annotation {
                annotator: 0,
                edits,
            }],
        }
    }

    pub fn target(&self, annotation: usize) -> Result<Sentence> {
        let ann = self
            .annotations
            .get(annotation)
            .ok_or_else(|| Error::validation(format!("no annotation #{annotation}")))?;
        apply_edits(&self.source, &ann.edits)
    }

    pub fn validate(&self) -> Result<()> {
        if self.annotations.is_empty() {
            return Err(Error::validation("annotated pair has no annotators"));
        }
        for ann in &self.annotations {
            validate_edits(self.source.len(), &ann.edits)?;
        }
        Ok(())
    }
}

/// Checks that `edits` are in range, sorted by `(start, end)`, and pairwise
/// non-overlapping. Two insertions at the same index count as overlapping.
pub fn validate_edits(len: usize, edits: &[Edit]) -> Result<()> {
    for e in edits {
        if e.start > e.end || e.end > len {
            return Err(Error::validation(format!(
                "edit span {}..{} out of range for {len} tokens",
                e.start, e.end
            )));
        }
        if e.is_insertion() && e.replacement.is_empty() {
            return Err(Error::validation(format!("empty insertion at {}", e.start)));
        }
        for tok in &e.replacement {
            check_token(tok).map_err(|m| {
                Error::validation(format!("edit {}..{} replacement: {m}", e.start, e.end))
            })?;
        }
    }
    for w in edits.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if (a.start, a.end) > (b.start, b.end) {
            return Err(Error::validation(format!(
                "edits not sorted: {}..{} before {}..{}",
                a.start, a.end, b.start, b.end
            )));
        }
        let same_point_insertions = a.is_insertion() && b.is_insertion() && a.start == b.start;
        if a.end > b.start || same_point_insertions {
            return Err(Error::validation(format!(
                "overlapping edits {}..{} and {}..{}",
                a.start, a.end, b.start, b.end
            )));
        }
    }
    Ok(())
}

/// Applies sorted, non-overlapping edits to `source`.
pub fn apply_edits(source: &Sentence, edits: &[Edit]) -> Result<Sentence> {
    validate_edits(source.len(), edits)?;
    Ok(apply_edits_unchecked(source, edits.iter()))
}

/// Applies edits already known to be valid for `source`. Accepts any
/// iterator so callers can apply a filtered subset without cloning.
pub(crate) fn apply_edits_unchecked<'a>(
    source: &Sentence,
    edits: impl IntoIterator<Item = &'a Edit>,
) -> Sentence {
    let mut out = Vec::with_capacity(source.len());
    let mut pos = 0;
    for e in edits {
        out.extend_from_slice(&source[pos..e.start]);
        out.extend(e.replacement.iter().cloned());
        pos = e.end;
    }
    out.extend_from_slice(&source[pos..]);
    Sentence(out)
}

// ---------------------------------------------------------------------------
// Tokenizer

/// Clitics split off the end of a word. Matched case-insensitively.
const CLITICS: [&str; 7] = ["n't", "'s", "'re", "'ve", "'ll", "'d", "'m"];

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

fn clitic_suffix(word: &str) -> Option<usize> {
    let lower = word.to_lowercase();
    if lower.len() != word.len() {
        // Case folding changed byte offsets; such words never end in an ASCII clitic
        // we could split safely.
        return None;
    }
    CLITICS
        .iter()
        .find(|c| lower.ends_with(*c) && lower.len() > c.len())
        .map(|c| word.len() - c.len())
}

fn is_clitic(chunk: &str) -> bool {
    CLITICS.iter().any(|c| chunk.eq_ignore_ascii_case(c))
}

/// Word with letters and internal periods, e.g. `U.S` (the caller has already
/// removed the final period).
fn is_abbreviation_stem(stem: &str) -> bool {
    stem.contains('.')
        && !stem.starts_with('.')
        && !stem.ends_with('.')
        && stem.chars().all(|c| c.is_alphabetic() || c == '.')
}

fn tokenize_chunk(chunk: &str, out: &mut Vec<String>) {
    if chunk.is_empty() {
        return;
    }
    if is_clitic(chunk) {
        out.push(chunk.to_owned());
        return;
    }

    // Leading punctuation, one run of identical characters at a time.
    let mut rest = chunk;
    while let Some(c) = rest.chars().next().filter(|c| is_punct(*c)) {
        let run = rest.len() - rest.trim_start_matches(c).len();
        out.push(rest[..run].to_owned());
        rest = &rest[run..];
    }

    // Trailing punctuation, collected back to front.
    let mut trailing = Vec::new();
    while let Some(c) = rest.chars().next_back().filter(|c| is_punct(*c)) {
        if c == '.' && is_abbreviation_stem(&rest[..rest.len() - 1]) {
            break;
        }
        let keep = rest.trim_end_matches(c).len();
        trailing.push(&rest[keep..]);
        rest = &rest[..keep];
    }

    if !rest.is_empty() {
        match clitic_suffix(rest) {
            Some(split) => {
                tokenize_chunk(&rest[..split], out);
                out.push(rest[split..].to_owned());
            }
            None => out.push(rest.to_owned()),
        }
    }
    out.extend(trailing.into_iter().rev().map(str::to_owned));
}

/// Rule-based tokenizer: whitespace split, punctuation detachment, and
/// clitic splitting (`don't` -> `do n't`). Idempotent on its own output.
pub fn tokenize(text: &str) -> Sentence {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        tokenize_chunk(chunk, &mut out);
    }
    Sentence(out)
}

// ---------------------------------------------------------------------------
// Line-oriented formats

/// Calls `f` for each line with its 1-based line number.
pub fn for_each_line<R: BufRead>(
    reader: R,
    mut f: impl FnMut(usize, &str) -> Result<()>,
) -> Result<()> {
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::IoAtLine {
            line: i + 1,
            source,
        })?;
        f(i + 1, line.strip_suffix('\r').unwrap_or(&line))?;
    }
    Ok(())
}

pub fn read_lines<R: BufRead>(reader: R) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    for_each_line(reader, |_, l| {
        lines.push(l.to_owned());
        Ok(())
    })?;
    Ok(lines)
}

pub fn read_tsv<R: BufRead>(reader: R) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for_each_line(reader, |n, line| {
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(n, "expected source<TAB>target"))?;
        if tgt.contains('\t') {
            return Err(Error::parse(n, "more than one tab"));
        }
        pairs.push((src.to_owned(), tgt.to_owned()));
        Ok(())
    })?;
    Ok(pairs)
}

pub fn write_tsv<W: Write>(pairs: &[(String, String)], mut w: W) -> Result<()> {
    for (s, t) in pairs {
        writeln!(w, "{s}\t{t}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// M2

const NOOP_LINE_BODY: &str = "-1 -1|||noop|||-NONE-|||REQUIRED|||-NONE-|||";
const NONE: &str = "-NONE-";

#[derive(Default)]
struct Block {
    line: usize,
    source: Sentence,
    annotators: Vec<(u32, Vec<(usize, Edit)>)>,
}

impl Block {
    fn annotator(&mut self, id: u32) -> &mut Vec<(usize, Edit)> {
        let idx = match self.annotators.iter().position(|(a, _)| *a == id) {
            Some(i) => i,
            None => {
                self.annotators.push((id, Vec::new()));
                self.annotators.len() - 1
            }
        };
        &mut self.annotators[idx].1
    }

    fn finish(self) -> Result<AnnotatedPair> {
        let mut annotations = Vec::with_capacity(self.annotators.len().max(1));
        for (annotator, mut edits) in self.annotators {
            edits.sort_by_key(|(_, e)| (e.start, e.end));
            let edits: Vec<Edit> = edits.into_iter().map(|(_, e)| e).collect();
            validate_edits(self.source.len(), &edits).map_err(|e| {
                Error::validation(format!(
                    "sentence at line {}, annotator {annotator}: {e}",
                    self.line
                ))
            })?;
            annotations.push(Annotation { annotator, edits });
        }
        if annotations.is_empty() {
            annotations.push(Annotation {
                annotator: 0,
                edits: Vec::new(),
            });
        }
        Ok(AnnotatedPair {
            source: self.source,
            annotations,
        })
    }
}

fn parse_a_line(n: usize, body: &str, src_len: usize) -> Result<(u32, Option<Edit>)> {
    let fields: Vec<&str> = body.split("|||").collect();
    if fields.len() != 6 {
        return Err(Error::parse(
            n,
            format!("expected 6 '|||' fields, got {}", fields.len()),
        ));
    }
    let annotator: u32 = fields[5]
        .trim()
        .parse()
        .map_err(|_| Error::parse(n, format!("bad annotator id {:?}", fields[5])))?;
    let mut span = fields[0].split(' ');
    let (Some(s), Some(e), None) = (span.next(), span.next(), span.next()) else {
        return Err(Error::parse(n, format!("bad span {:?}", fields[0])));
    };
    if s == "-1" && e == "-1" {
        return Ok((annotator, None));
    }
    let parse_idx = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| Error::parse(n, format!("bad span index {v:?}")))
    };
    let (start, end) = (parse_idx(s)?, parse_idx(e)?);
    if start > end || end > src_len {
        return Err(Error::parse(
            n,
            format!("span {start}..{end} out of range for {src_len} tokens"),
        ));
    }
    let replacement = match fields[2] {
        "" | NONE => Vec::new(),
        r => {
            let toks: Vec<String> = r.split(' ').map(str::to_owned).collect();
            if toks.iter().any(String::is_empty) {
                return Err(Error::parse(n, "empty token in replacement"));
            }
            toks
        }
    };
    let category = match fields[1] {
        "" | NONE => None,
        c => Some(c.to_owned()),
    };
    Ok((
        annotator,
        Some(Edit {
            start,
            end,
            replacement,
            category,
        }),
    ))
}

/// Parses an M2 file. Noop lines (`-1 -1|||noop|||...`) register their
/// annotator with no edits.
pub fn read_m2<R: BufRead>(reader: R) -> Result<Vec<AnnotatedPair>> {
    let mut pairs = Vec::new();
    let mut block: Option<Block> = None;
    for_each_line(reader, |n, line| {
        if line.is_empty() {
            if let Some(b) = block.take() {
                pairs.push(b.finish()?);
            }
        } else if let Some(rest) = line
            .strip_prefix('S')
            .filter(|r| r.is_empty() || r.starts_with(' '))
        {
            if let Some(b) = block.take() {
                pairs.push(b.finish()?);
            }
            let source = Sentence::from_spaced(rest.strip_prefix(' ').unwrap_or(rest))
                .map_err(|e| Error::parse(n, e.to_string()))?;
            block = Some(Block {
                line: n,
                source,
                annotators: Vec::new(),
            });
        } else if let Some(body) = line.strip_prefix("A ") {
            let b = block
                .as_mut()
                .ok_or_else(|| Error::parse(n, "annotation line outside a sentence block"))?;
            let (annotator, edit) = parse_a_line(n, body, b.source.len())?;
            let list = b.annotator(annotator);
            if let Some(e) = edit {
                list.push((n, e));
            }
        } else {
            return Err(Error::parse(n, format!("unrecognized line {line:?}")));
        }
        Ok(())
    })?;
    if let Some(b) = block.take() {
        pairs.push(b.finish()?);
    }
    Ok(pairs)
}

/// Writes pairs in M2 format and returns the number of bytes written.
pub fn write_m2<W: Write>(pairs: &[AnnotatedPair], mut w: W) -> Result<u64> {
    let mut buf = String::new();
    let mut total = 0u64;
    for pair in pairs {
        pair.validate()?;
        buf.clear();
        format_m2_block(pair, &mut buf);
        w.write_all(buf.as_bytes())?;
        total += buf.len() as u64;
    }
    Ok(total)
}

pub(crate) fn format_m2_block(pair: &AnnotatedPair, buf: &mut String) {
    use std::fmt::Write as _;
    buf.push_str("S ");
    buf.push_str(&pair.source.join(" "));
    buf.push('\n');
    for ann in &pair.annotations {
        if ann.edits.is_empty() {
            let _ = writeln!(buf, "A {NOOP_LINE_BODY}{}", ann.annotator);
        }
        for e in &ann.edits {
            let _ = writeln!(
                buf,
                "A {} {}|||{}|||{}|||REQUIRED|||{NONE}|||{}",
                e.start,
                e.end,
                e.category.as_deref().unwrap_or(NONE),
                e.replacement.join(" "),
                ann.annotator
            );
        }
    }
    buf.push('\n');
}
