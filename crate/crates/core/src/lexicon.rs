//! Morphology lexicon: noun number pairs, verb paradigms, and the
//! preposition set that drive type-based noising and edit classification.
//!
//! A lexicon is compiled once from plain-text sources (exception rows win
//! over the regular inflection rules) and then served read-only.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEXICON_FORMAT_VERSION: u32 = 1;

const DEFAULT_NOUNS: &str = include_str!("../data/nouns.tsv");
const DEFAULT_VERBS: &str = include_str!("../data/verbs.tsv");
const DEFAULT_PREPOSITIONS: &str = include_str!("../data/prepositions.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TokenType {
    Prep,
    Noun,
    Verb,
    Other,
}

impl fmt::Display for TokenType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenType::Prep => "PREP",
            TokenType::Noun => "NOUN",
            TokenType::Verb => "VERB",
            TokenType::Other => "OTHER",
        })
    }
}

impl FromStr for TokenType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PREP" => Ok(TokenType::Prep),
            "NOUN" => Ok(TokenType::Noun),
            "VERB" => Ok(TokenType::Verb),
            "OTHER" => Ok(TokenType::Other),
            _ => Err(Error::validation(format!("unknown token type {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VerbForm {
    Base,
    ThirdSingular,
    Past,
    PastParticiple,
    Gerund,
}

impl VerbForm {
    pub const ALL: [VerbForm; 5] = [
        VerbForm::Base,
        VerbForm::ThirdSingular,
        VerbForm::Past,
        VerbForm::PastParticiple,
        VerbForm::Gerund,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbParadigm {
    pub base: String,
    pub third_singular: String,
    pub past: String,
    pub past_participle: String,
    pub gerund: String,
}

impl VerbParadigm {
    pub fn form(&self, form: VerbForm) -> &str {
        match form {
            VerbForm::Base => &self.base,
            VerbForm::ThirdSingular => &self.third_singular,
            VerbForm::Past => &self.past,
            VerbForm::PastParticiple => &self.past_participle,
            VerbForm::Gerund => &self.gerund,
        }
    }

    /// Distinct surface forms in paradigm order.
    pub fn distinct_forms(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::with_capacity(5);
        for f in VerbForm::ALL {
            let s = self.form(f);
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    /// Paradigm derived from the lemma by the regular rules.
    pub fn regular(lemma: &str) -> Self {
        VerbParadigm {
            base: lemma.to_owned(),
            third_singular: add_s(lemma),
            past: add_ed(lemma),
            past_participle: add_ed(lemma),
            gerund: add_ing(lemma),
        }
    }
}

// ---------------------------------------------------------------------------
// Regular inflection rules

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

fn ends_consonant_y(w: &str) -> bool {
    let mut it = w.chars().rev();
    matches!((it.next(), it.next()), (Some('y'), Some(c)) if !is_vowel(c))
}

fn vowel_groups(w: &str) -> usize {
    let mut groups = 0;
    let mut prev = false;
    for c in w.chars() {
        let v = is_vowel(c);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    groups
}

/// Single-syllable consonant-vowel-consonant ending, e.g. `stop`, `plan`.
fn doubles_final(w: &str) -> bool {
    let cs: Vec<char> = w.chars().collect();
    let n = cs.len();
    n >= 3
        && !is_vowel(cs[n - 3])
        && is_vowel(cs[n - 2])
        && !is_vowel(cs[n - 1])
        && !matches!(cs[n - 1], 'w' | 'x' | 'y')
        && vowel_groups(w) == 1
}

/// Plural noun / third-person singular verb.
pub fn add_s(w: &str) -> String {
    if ["s", "x", "z", "ch", "sh"].iter().any(|s| w.ends_with(s)) {
        format!("{w}es")
    } else if ends_consonant_y(w) {
        format!("{}ies", &w[..w.len() - 1])
    } else {
        format!("{w}s")
    }
}

pub fn add_ed(w: &str) -> String {
    if w.ends_with('e') {
        format!("{w}d")
    } else if ends_consonant_y(w) {
        format!("{}ied", &w[..w.len() - 1])
    } else if doubles_final(w) {
        format!("{w}{}ed", w.chars().last().unwrap())
    } else {
        format!("{w}ed")
    }
}

pub fn add_ing(w: &str) -> String {
    if let Some(stem) = w.strip_suffix("ie") {
        format!("{stem}ying")
    } else if w.ends_with('e') && !["ee", "ye", "oe"].iter().any(|s| w.ends_with(s)) && w.len() > 2
    {
        format!("{}ing", &w[..w.len() - 1])
    } else if doubles_final(w) {
        format!("{w}{}ing", w.chars().last().unwrap())
    } else {
        format!("{w}ing")
    }
}

/// Copies the capitalization pattern of `original` onto `word`.
pub fn restore_case(original: &str, word: &str) -> String {
    let mut chars = original.chars();
    let first_upper = chars.next().is_some_and(char::is_uppercase);
    let all_upper = first_upper
        && original.chars().count() > 1
        && original
            .chars()
            .filter(|c| c.is_alphabetic())
            .all(char::is_uppercase);
    if all_upper {
        word.to_uppercase()
    } else if first_upper {
        capitalize(word)
    } else {
        word.to_owned()
    }
}

pub fn capitalize(word: &str) -> String {
    let mut cs = word.chars();
    match cs.next() {
        Some(c) => c.to_uppercase().chain(cs).collect(),
        None => String::new(),
    }
}

// ---------------------------------------------------------------------------
// Sources and compilation

/// Plain-text inputs to lexicon compilation.
#[derive(Debug, Clone, Default)]
pub struct LexiconSource {
    /// Rows of `singular` or `singular<TAB>plural`.
    pub nouns: String,
    /// Rows of `lemma` or `lemma<TAB>3sg<TAB>past<TAB>pp<TAB>gerund`.
    pub verbs: String,
    /// One preposition per line.
    pub prepositions: String,
}

impl LexiconSource {
    pub fn english() -> Self {
        LexiconSource {
            nouns: DEFAULT_NOUNS.to_owned(),
            verbs: DEFAULT_VERBS.to_owned(),
            prepositions: DEFAULT_PREPOSITIONS.to_owned(),
        }
    }
}

fn data_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, l)| (n, l.split('\t').map(str::trim).collect()))
}

/// Resolution order when a token belongs to several classes.
pub const DEFAULT_TYPE_PRIORITY: [TokenType; 3] =
    [TokenType::Verb, TokenType::Noun, TokenType::Prep];

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LexiconFile {
    format_version: u32,
    nouns: Vec<(String, String)>,
    verbs: BTreeMap<String, VerbParadigm>,
    prepositions: Vec<String>,
    type_priority: Vec<TokenType>,
}

/// Compiled, immutable lexicon. All lookups are on lowercase forms.
#[derive(Debug, Clone)]
pub struct MorphLexicon {
    singular_to_plural: BTreeMap<String, String>,
    plural_to_singular: HashMap<String, String>,
    verbs: BTreeMap<String, VerbParadigm>,
    form_to_lemma: HashMap<String, String>,
    prepositions: Vec<String>,
    preposition_set: HashSet<String>,
    priority: Vec<TokenType>,
}

impl MorphLexicon {
    pub fn compile(source: &LexiconSource) -> Result<Self> {
        let mut noun_exceptions = Vec::new();
        let mut noun_regular = Vec::new();
        for (n, row) in data_rows(&source.nouns) {
            let sing = row[0].to_lowercase();
            match row.len() {
                1 => noun_regular.push((sing.clone(), add_s(&sing))),
                2 => noun_exceptions.push((sing, row[1].to_lowercase())),
                _ => return Err(Error::parse(n, "noun rows take 1 or 2 columns")),
            }
        }
        let mut verb_exceptions = Vec::new();
        let mut verb_regular = Vec::new();
        for (n, row) in data_rows(&source.verbs) {
            let lemma = row[0].to_lowercase();
            match row.len() {
                1 => verb_regular.push(VerbParadigm::regular(&lemma)),
                5 => verb_exceptions.push(VerbParadigm {
                    base: lemma,
                    third_singular: row[1].to_lowercase(),
                    past: row[2].to_lowercase(),
                    past_participle: row[3].to_lowercase(),
                    gerund: row[4].to_lowercase(),
                }),
                _ => return Err(Error::parse(n, "verb rows take 1 or 5 columns")),
            }
        }
        let mut prepositions = vec![String::new()];
        for (_, row) in data_rows(&source.prepositions) {
            let p = row[0].to_lowercase();
            if !prepositions.contains(&p) {
                prepositions.push(p);
            }
        }

        let mut lex = MorphLexicon::empty(prepositions);
        for (s, p) in noun_exceptions {
            if !lex.add_noun(&s, &p) {
                return Err(Error::validation(format!(
                    "conflicting noun exception {s} -> {p}"
                )));
            }
        }
        for (s, p) in noun_regular {
            lex.add_noun(&s, &p);
        }
        for par in verb_exceptions {
            let lemma = par.base.clone();
            if !lex.add_verb(par) {
                return Err(Error::validation(format!(
                    "conflicting verb exception {lemma}"
                )));
            }
        }
        for par in verb_regular {
            lex.add_verb(par);
        }
        Ok(lex)
    }

    /// The English lexicon shipped with the crate.
    pub fn english() -> Self {
        MorphLexicon::compile(&LexiconSource::english()).expect("bundled lexicon is consistent")
    }

    fn empty(prepositions: Vec<String>) -> Self {
        MorphLexicon {
            singular_to_plural: BTreeMap::new(),
            plural_to_singular: HashMap::new(),
            verbs: BTreeMap::new(),
            form_to_lemma: HashMap::new(),
            preposition_set: prepositions
                .iter()
                .filter(|p| !p.is_empty())
                .cloned()
                .collect(),
            prepositions,
            priority: DEFAULT_TYPE_PRIORITY.to_vec(),
        }
    }

    /// Adds a number pair unless it would break the bijection.
    fn add_noun(&mut self, sing: &str, plural: &str) -> bool {
        if sing == plural
            || self.singular_to_plural.contains_key(sing)
            || self.plural_to_singular.contains_key(plural)
            || self.plural_to_singular.contains_key(sing)
            || self.singular_to_plural.contains_key(plural)
        {
            return false;
        }
        self.singular_to_plural
            .insert(sing.to_owned(), plural.to_owned());
        self.plural_to_singular
            .insert(plural.to_owned(), sing.to_owned());
        true
    }

    /// Adds a paradigm unless a form already belongs to another lemma.
    fn add_verb(&mut self, par: VerbParadigm) -> bool {
        if self.verbs.contains_key(&par.base) {
            return false;
        }
        let forms = par.distinct_forms();
        if forms
            .iter()
            .any(|f| self.form_to_lemma.get(*f).is_some_and(|l| *l != par.base))
        {
            return false;
        }
        for f in forms {
            self.form_to_lemma.insert(f.to_owned(), par.base.clone());
        }
        self.verbs.insert(par.base.clone(), par);
        true
    }

    pub fn with_priority(mut self, priority: &[TokenType]) -> Result<Self> {
        let mut seen = HashSet::new();
        if priority
            .iter()
            .any(|t| *t == TokenType::Other || !seen.insert(*t))
        {
            return Err(Error::validation(
                "type priority must list distinct PREP/NOUN/VERB",
            ));
        }
        self.priority = priority.to_vec();
        Ok(self)
    }

    pub fn priority(&self) -> &[TokenType] {
        &self.priority
    }

    /// The preposition set, led by the empty token.
    pub fn prepositions(&self) -> &[String] {
        &self.prepositions
    }

    pub fn is_noun(&self, token: &str) -> bool {
        let t = token.to_lowercase();
        self.singular_to_plural.contains_key(&t) || self.plural_to_singular.contains_key(&t)
    }

    pub fn is_verb(&self, token: &str) -> bool {
        self.form_to_lemma.contains_key(&token.to_lowercase())
    }

    pub fn is_preposition(&self, token: &str) -> bool {
        self.preposition_set.contains(&token.to_lowercase())
    }

    /// True when the token is known in any class.
    pub fn knows(&self, token: &str) -> bool {
        self.token_type(token) != TokenType::Other
    }

    pub fn token_type(&self, token: &str) -> TokenType {
        let t = token.to_lowercase();
        for ty in &self.priority {
            let hit = match ty {
                TokenType::Verb => self.form_to_lemma.contains_key(&t),
                TokenType::Noun => {
                    self.singular_to_plural.contains_key(&t)
                        || self.plural_to_singular.contains_key(&t)
                }
                TokenType::Prep => self.preposition_set.contains(&t),
                TokenType::Other => false,
            };
            if hit {
                return *ty;
            }
        }
        TokenType::Other
    }

    /// Toggles grammatical number. `None` if the token is not a known noun.
    pub fn inflect_noun(&self, token: &str) -> Option<String> {
        let t = token.to_lowercase();
        self.singular_to_plural
            .get(&t)
            .or_else(|| self.plural_to_singular.get(&t))
            .map(|w| restore_case(token, w))
    }

    pub fn lemma(&self, token: &str) -> Option<&str> {
        self.form_to_lemma
            .get(&token.to_lowercase())
            .map(String::as_str)
    }

    pub fn paradigm(&self, token: &str) -> Option<&VerbParadigm> {
        self.lemma(token).and_then(|l| self.verbs.get(l))
    }

    /// Re-inflects a verb. `None` if the token is not a known verb form.
    pub fn inflect_verb(&self, token: &str, form: VerbForm) -> Option<String> {
        self.paradigm(token)
            .map(|p| restore_case(token, p.form(form)))
    }

    /// The other distinct forms of the token's lemma, in paradigm order.
    pub fn verb_alternatives(&self, token: &str) -> Vec<String> {
        let lower = token.to_lowercase();
        match self.paradigm(token) {
            Some(p) => p
                .distinct_forms()
                .into_iter()
                .filter(|f| *f != lower)
                .map(|f| restore_case(token, f))
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn noun_pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.singular_to_plural
            .iter()
            .map(|(s, p)| (s.as_str(), p.as_str()))
    }

    pub fn paradigms(&self) -> impl Iterator<Item = &VerbParadigm> {
        self.verbs.values()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = LexiconFile {
            format_version: LEXICON_FORMAT_VERSION,
            nouns: self
                .singular_to_plural
                .iter()
                .map(|(s, p)| (s.clone(), p.clone()))
                .collect(),
            verbs: self.verbs.clone(),
            prepositions: self.prepositions.clone(),
            type_priority: self.priority.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LexiconFile = serde_json::from_str(text)?;
        if file.format_version != LEXICON_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "lexicon format_version {} (expected {LEXICON_FORMAT_VERSION})",
                file.format_version
            )));
        }
        let mut preps = file.prepositions;
        if !preps.iter().any(String::is_empty) {
            preps.insert(0, String::new());
        }
        let mut lex = MorphLexicon::empty(preps);
        for (s, p) in file.nouns {
            if !lex.add_noun(&s, &p) {
                return Err(Error::validation(format!(
                    "noun pair {s} -> {p} breaks the bijection"
                )));
            }
        }
        for par in file.verbs.into_values() {
            let lemma = par.base.clone();
            if !lex.add_verb(par) {
                return Err(Error::validation(format!(
                    "verb {lemma} shares forms with another lemma"
                )));
            }
        }
        lex.with_priority(&file.type_priority)
    }
}
