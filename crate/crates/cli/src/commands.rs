use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::Instant;

use gecforge::align::{classify_edit, extract_edits as align_edits};
use gecforge::copymix::{grad_check, loss, output_distribution, selftest, InstanceJson};
use gecforge::corpus::{apply_edits, read_m2, tokenize, write_m2, AnnotatedPair, Edit, Sentence};
use gecforge::evalstats::{
    edit_density, permutation_test, score_pairs, sentence_densities, DensityMode, ScoreReport,
    CONVENTIONS,
};
use gecforge::lexicon::{LexiconSource, MorphLexicon, TokenType};
use gecforge::lm::{
    extract_capital_words, train_lm as fit_lm, CapitalOptions, CapitalRule, CapitalWordList,
    Lambdas, NGramLm,
};
use gecforge::noise::{
    build_dictionary, generate_corpus, noisers, EditDictionary, GenerateOptions, NoiserContext,
    NoisingConfig,
};
use gecforge::postprocess::{
    category_filter_search, drop_categories, select_with, selectors, strip_unk_edits, EditSelector,
    PostprocessConfig,
};
use gecforge::spellcheck::{SpellChecker, SpellConfig, Vocabulary};
use gecforge::subword::{bpe_learn as fit_bpe, BpeModel};
use rayon::prelude::*;
use serde::Serialize;

use crate::io::{load, open, read_string, write_text, write_with, CliError, CliResult, Output};
use crate::*;

// ---------------------------------------------------------------------------
// Shared helpers

fn init_pool(w: &Workers) {
    let n = w.workers.unwrap_or(0);
    // A second initialization only happens in-process (tests); ignore it.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
}

fn read_raw_lines(path: &Path) -> CliResult<Vec<String>> {
    load(path, gecforge::corpus::read_lines)
}

fn read_sentences(path: &Path) -> CliResult<Vec<Sentence>> {
    let lines = read_raw_lines(path)?;
    Ok(lines.par_iter().map(|l| tokenize(l)).collect())
}

/// Streams tokenized lines for single-pass trainers.
fn sentence_stream(reader: Box<dyn BufRead>) -> impl Iterator<Item = gecforge::Result<Sentence>> {
    reader.lines().enumerate().map(|(i, l)| {
        l.map(|l| tokenize(&l))
            .map_err(|source| gecforge::Error::IoAtLine {
                line: i + 1,
                source,
            })
    })
}

fn read_pairs(path: &Path) -> CliResult<Vec<AnnotatedPair>> {
    load(path, read_m2)
}

fn load_lexicon(path: Option<&Path>) -> CliResult<MorphLexicon> {
    match path {
        Some(p) => MorphLexicon::from_json(&read_string(p)?).map_err(|e| CliError::at(p, e)),
        None => Ok(MorphLexicon::english()),
    }
}

fn load_lm(path: &Path) -> CliResult<NGramLm> {
    let started = Instant::now();
    let lm = load(path, NGramLm::load)?;
    log::info!("loaded LM {} in {:.2?}", path.display(), started.elapsed());
    Ok(lm)
}

fn write_sentences<'a>(
    out: &mut Output,
    sentences: impl IntoIterator<Item = &'a Sentence>,
) -> gecforge::Result<()> {
    let mut line = String::new();
    for s in sentences {
        line.clear();
        line.push_str(&s.join(" "));
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::validation(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn ensure_same_len(what: &str, a: usize, b: usize) -> CliResult<()> {
    if a != b {
        return Err(CliError::validation(format!("{what}: {a} vs {b} lines")));
    }
    Ok(())
}

fn label(
    source: &Sentence,
    edits: Vec<Edit>,
    lex: &MorphLexicon,
    known: Option<&HashSet<String>>,
) -> Vec<Edit> {
    edits
        .into_iter()
        .map(|e| {
            if e.category.is_some() {
                e
            } else {
                let c = classify_edit(source, &e, lex, known);
                e.with_category(c)
            }
        })
        .collect()
}

fn first_annotation(p: &AnnotatedPair) -> Vec<Edit> {
    p.annotations
        .first()
        .map(|a| a.edits.clone())
        .unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Corpus preparation

pub fn extract_edits(a: ExtractEdits) -> CliResult<()> {
    init_pool(&a.workers);
    let pairs: Vec<(String, String)> = match (&a.tsv, &a.src, &a.tgt) {
        (Some(t), _, _) => load(t, gecforge::corpus::read_tsv)?,
        (None, Some(s), Some(t)) => {
            let src = read_raw_lines(s)?;
            let tgt = read_raw_lines(t)?;
            ensure_same_len("--src and --tgt differ in length", src.len(), tgt.len())?;
            src.into_iter().zip(tgt).collect()
        }
        _ => return Err(CliError::validation("give --tsv or both --src and --tgt")),
    };
    let lex = load_lexicon(a.lexicon.as_deref())?;
    let annotated: Vec<AnnotatedPair> = pairs
        .par_iter()
        .map(|(s, t)| {
            let (src, tgt) = (tokenize(s), tokenize(t));
            let mut edits = align_edits(&src, &tgt);
            if !a.no_classify {
                edits = label(&src, edits, &lex, None);
            }
            AnnotatedPair::single(src, edits)
        })
        .collect();
    write_with(&a.out, |w| write_m2(&annotated, w).map(drop))
}

pub fn build_dict(a: BuildDict) -> CliResult<()> {
    let mut pairs = Vec::new();
    for p in &a.m2 {
        pairs.extend(read_pairs(p)?);
    }
    let dict = build_dictionary(&pairs, a.min_count)?;
    log::info!(
        "dictionary: {} entries from {} sentences",
        dict.len(),
        pairs.len()
    );
    let mut json = dict.to_json()?;
    json.push('\n');
    write_text(&a.out, &json)
}

pub fn noise(a: Noise) -> CliResult<()> {
    if a.mode == "realistic" && a.dict.is_none() {
        return Err(CliError::validation(
            "missing required flag --dict (needed by --mode realistic)",
        ));
    }
    let config = NoisingConfig {
        token_error_prob: a.token_error_prob,
        type_error_prob: a.type_error_prob,
        seed: a.seed,
        mode: a.mode.clone(),
        random_op_prob: a.random_op_prob,
        ..Default::default()
    };
    config.validate()?;
    let lexicon = Arc::new(load_lexicon(a.lexicon.as_deref())?);
    let dictionary = match &a.dict {
        Some(p) => Some(Arc::new(
            EditDictionary::from_json(&read_string(p)?).map_err(|e| CliError::at(p, e))?,
        )),
        None => None,
    };
    let vocab: Option<Arc<[String]>> = match &a.vocab {
        Some(p) => {
            let v = load(p, Vocabulary::load)?;
            Some(v.words().into_iter().map(str::to_owned).collect())
        }
        None => None,
    };
    if a.mode == "random" && vocab.is_none() {
        return Err(CliError::validation(
            "missing required flag --vocab (needed by --mode random)",
        ));
    }
    let ctx = NoiserContext {
        config,
        dictionary,
        lexicon,
        vocab,
    };
    let noiser = noisers().build(&a.mode, &ctx)?;
    let opts = GenerateOptions {
        repetitions: a.repetitions,
        seed: a.seed,
        workers: a.workers.workers.unwrap_or_else(default_workers),
        batch_lines: a.batch_lines,
    };
    let started = Instant::now();
    let input = open(&a.input)?;
    let mut out = Output::create(&a.out)?;
    let stats = generate_corpus(input, &mut out, noiser.as_ref(), &opts)
        .map_err(|e| CliError::at(&a.input, e))?;
    out.commit()?;
    let secs = started.elapsed().as_secs_f64();
    log::info!(
        "noised {} lines into {} pairs in {secs:.2}s ({:.0} lines/s)",
        stats.lines,
        stats.pairs,
        stats.lines as f64 / secs.max(1e-9)
    );
    Ok(())
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn lexicon_build(a: LexiconBuild) -> CliResult<()> {
    let base = LexiconSource::english();
    let part = |p: &Option<PathBuf>, dflt: String| p.as_deref().map_or(Ok(dflt), read_string);
    let source = LexiconSource {
        nouns: part(&a.nouns, base.nouns)?,
        verbs: part(&a.verbs, base.verbs)?,
        prepositions: part(&a.prepositions, base.prepositions)?,
    };
    let mut lex = MorphLexicon::compile(&source)?;
    if let Some(p) = &a.priority {
        let order: Vec<TokenType> = p
            .split(',')
            .map(|t| t.trim().parse())
            .collect::<gecforge::Result<_>>()?;
        lex = lex.with_priority(&order)?;
    }
    let mut json = lex.to_json()?;
    json.push('\n');
    write_text(&a.out, &json)
}

pub fn build_vocab(a: BuildVocab) -> CliResult<()> {
    let lex = if a.with_lexicon || a.lexicon.is_some() {
        Some(load_lexicon(a.lexicon.as_deref())?)
    } else {
        None
    };
    let vocab = load(&a.corpus, |r| {
        Vocabulary::build(sentence_stream(r), lex.as_ref())
    })?;
    write_with(&a.out, |w| vocab.save(w))
}

pub fn capitals(a: Capitals) -> CliResult<()> {
    let rule = match (a.ratio, a.margin) {
        (Some(r), _) => CapitalRule::Ratio(r),
        (None, Some(m)) => CapitalRule::Margin(m),
        (None, None) => CapitalRule::default(),
    };
    let opts = CapitalOptions {
        rule,
        min_capital_count: a.min_count,
    };
    let list = load(&a.corpus, |r| {
        extract_capital_words(sentence_stream(r), &opts)
    })?;
    write_with(&a.out, |w| list.save(w))
}

// ---------------------------------------------------------------------------
// Language model

fn parse_lambdas(text: &str) -> CliResult<Lambdas> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::validation(format!("--lambdas {text:?}: {e}")))?;
    match parts[..] {
        [u, b, t] => Ok(Lambdas::new(u, b, t)?),
        _ => Err(CliError::validation(format!(
            "--lambdas needs three weights, got {text:?}"
        ))),
    }
}

pub fn train_lm(a: TrainLm) -> CliResult<()> {
    let lambdas = parse_lambdas(&a.lambdas)?;
    let lm = load(&a.corpus, |r| fit_lm(sentence_stream(r), lambdas, a.alpha))?;
    log::info!("LM over {} predicted types", lm.predicted_vocab_size());
    write_with(&a.out, |w| lm.save(w))
}

pub fn score(a: Score) -> CliResult<()> {
    init_pool(&a.workers);
    let lm = load_lm(&a.lm)?;
    let sentences = read_sentences(&a.input)?;
    let scores: Vec<f64> = sentences.par_iter().map(|s| lm.score(s)).collect();
    write_with(&a.out, |w| {
        for s in scores {
            writeln!(w, "{s}")?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Spellcheck

fn spell_checker(
    a: &SpellArgs,
    vocab: Arc<Vocabulary>,
    lm: Option<Arc<NGramLm>>,
) -> CliResult<SpellChecker> {
    let config = SpellConfig {
        max_edit_distance: a.max_edit_distance,
        max_candidates: a.max_candidates,
        lm_weight: a.lm_weight,
        frequency_tiebreak: !a.no_frequency_tiebreak,
        ranker: a.ranker.clone(),
    };
    config.validate()?;
    if config.ranker == "lm" && lm.is_none() {
        return Err(CliError::validation(
            "missing required flag --lm (needed by --ranker lm)",
        ));
    }
    let capitals = match &a.capitals {
        Some(p) => load(p, CapitalWordList::load)?,
        None => CapitalWordList::default(),
    };
    Ok(SpellChecker::new(vocab, Arc::new(capitals), lm, config)?)
}

fn write_m2_file(path: &Path, pairs: &[AnnotatedPair]) -> CliResult<()> {
    write_with(path, |w| write_m2(pairs, w).map(drop))
}

pub fn spellcheck(a: Spellcheck) -> CliResult<()> {
    init_pool(&a.workers);
    let lm = a.lm.as_deref().map(load_lm).transpose()?.map(Arc::new);
    let vocab = Arc::new(load(&a.spell.vocab, Vocabulary::load)?);
    let checker = spell_checker(&a.spell, vocab, lm)?;
    let sentences = read_sentences(&a.input)?;
    let fixed: Vec<(Sentence, Vec<Edit>)> =
        sentences.par_iter().map(|s| checker.correct(s)).collect();
    if let Some(m2) = &a.emit_m2 {
        let pairs: Vec<AnnotatedPair> = sentences
            .iter()
            .zip(&fixed)
            .map(|(s, (_, e))| AnnotatedPair::single(s.clone(), e.clone()))
            .collect();
        write_m2_file(m2, &pairs)?;
    }
    let edits: usize = fixed.iter().map(|(_, e)| e.len()).sum();
    log::info!(
        "spellcheck: {edits} corrections over {} sentences",
        sentences.len()
    );
    write_with(&a.out, |w| write_sentences(w, fixed.iter().map(|(s, _)| s)))
}

// ---------------------------------------------------------------------------
// Subwords

pub fn bpe_learn(a: BpeLearn) -> CliResult<()> {
    init_pool(&a.workers);
    let lines = read_raw_lines(&a.corpus)?;
    let started = Instant::now();
    let model = fit_bpe(&lines, a.vocab_size)?;
    log::info!(
        "learned {} merges in {:.2?}",
        model.merges().len(),
        started.elapsed()
    );
    write_with(&a.out, |w| model.save(w))
}

pub fn bpe_apply(a: BpeApply) -> CliResult<()> {
    init_pool(&a.workers);
    let model = load(&a.model, BpeModel::load)?;
    let lines = read_raw_lines(&a.input)?;
    let out: Vec<String> = if a.revert {
        lines
            .par_iter()
            .enumerate()
            .map(|(i, l)| {
                let pieces: Vec<String> = l.split_whitespace().map(str::to_owned).collect();
                model.revert(&pieces).map(|s| s.join(" ")).map_err(|e| {
                    CliError::at(&a.input, gecforge::Error::parse(i + 1, e.to_string()))
                })
            })
            .collect::<CliResult<_>>()?
    } else {
        lines
            .par_iter()
            .map_init(HashMap::new, |cache, l| model.apply_line(l, cache))
            .collect()
    };
    write_with(&a.out, |w| {
        for l in &out {
            w.write_all(l.as_bytes())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Serialize)]
struct ScoreFile<'a> {
    conventions: &'static str,
    #[serde(flatten)]
    report: &'a ScoreReport,
}

fn summary(r: &ScoreReport) -> String {
    let mut s = format!(
        "TP {}  FP {}  FN {}\nP {:.4}  R {:.4}  F0.5 {:.4}\n",
        r.tp, r.fp, r.fn_, r.precision, r.recall, r.f_half
    );
    for (cat, c) in &r.per_category {
        s.push_str(&format!(
            "  {cat:<10} TP {:>5} FP {:>5} FN {:>5}  P {:.4} R {:.4} F0.5 {:.4}\n",
            c.tp, c.fp, c.fn_, c.precision, c.recall, c.f_half
        ));
    }
    s.push_str(&format!("note: {CONVENTIONS}\n"));
    s
}

pub fn score_m2(a: ScoreM2) -> CliResult<()> {
    init_pool(&a.workers);
    let hyp = read_pairs(&a.hyp)?;
    let gold = read_pairs(&a.reference)?;
    ensure_same_len(
        "--hyp and --ref differ in sentence count",
        hyp.len(),
        gold.len(),
    )?;
    let report = score_pairs(&hyp, &gold)?;
    if let Some(j) = &a.json {
        write_json(
            j,
            &ScoreFile {
                conventions: CONVENTIONS,
                report: &report,
            },
        )?;
    }
    print!("{}", summary(&report));
    Ok(())
}

#[derive(Serialize)]
struct CorpusStats {
    path: String,
    sentences: usize,
    edit_density: f64,
}

#[derive(Serialize)]
struct StatsFile {
    mode: DensityMode,
    corpora: Vec<CorpusStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    permutation_p: Option<f64>,
    rounds: u64,
    seed: u64,
}

pub fn stats(a: Stats) -> CliResult<()> {
    init_pool(&a.workers);
    let mode = if a.all_annotators {
        DensityMode::AllAnnotators
    } else {
        DensityMode::FirstAnnotator
    };
    let mut corpora = Vec::new();
    let mut densities = Vec::new();
    for p in &a.m2 {
        let pairs = read_pairs(p)?;
        let d = sentence_densities(&pairs, mode).map_err(|e| CliError::at(p, e))?;
        corpora.push(CorpusStats {
            path: p.display().to_string(),
            sentences: pairs.len(),
            edit_density: edit_density(&pairs, mode)?,
        });
        densities.push(d);
    }
    let permutation_p = match &densities[..] {
        [x, y, ..] => Some(permutation_test(x, y, a.perm_rounds, a.seed)?),
        _ => None,
    };
    for c in &corpora {
        println!(
            "{}\tsentences {}\tedits/token {:.6}",
            c.path, c.sentences, c.edit_density
        );
    }
    if let Some(p) = permutation_p {
        println!(
            "permutation p ({} rounds, seed {}): {p:.6}",
            a.perm_rounds, a.seed
        );
    }
    if let Some(j) = &a.json {
        write_json(
            j,
            &StatsFile {
                mode,
                corpora,
                permutation_p,
                rounds: a.perm_rounds,
                seed: a.seed,
            },
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Post-processing

struct PostProcessor {
    lm: Arc<NGramLm>,
    config: PostprocessConfig,
    selector: Box<dyn EditSelector>,
    drop: Vec<String>,
    lexicon: MorphLexicon,
    known: Option<HashSet<String>>,
}

fn read_drop_list(path: &Path) -> CliResult<Vec<String>> {
    let value: serde_json::Value = serde_json::from_str(&read_string(path)?)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let list = match &value {
        serde_json::Value::Array(_) => &value,
        _ => value.get("dropped").unwrap_or(&serde_json::Value::Null),
    };
    serde_json::from_value(list.clone()).map_err(|_| {
        CliError::validation(format!(
            "{}: expected a category list or a tune-categories result",
            path.display()
        ))
    })
}

impl PostProcessor {
    fn new(a: &PostArgs, lm: Arc<NGramLm>, vocab: Option<&Vocabulary>) -> CliResult<Self> {
        let config = PostprocessConfig {
            max_removed_edits: a.max_remove,
            exhaustive_edit_limit: a.exhaustive_limit,
            selector: a.selector.clone(),
            unk_marker: a.unk_marker.clone(),
            ..Default::default()
        };
        config.validate()?;
        let selector = selectors().build(&config.selector, &config)?;
        let drop = a
            .drop
            .as_deref()
            .map(read_drop_list)
            .transpose()?
            .unwrap_or_default();
        Ok(PostProcessor {
            lm,
            selector,
            drop,
            lexicon: load_lexicon(a.lexicon.as_deref())?,
            known: vocab.map(|v| v.words().into_iter().map(str::to_owned).collect()),
            config,
        })
    }

    fn label(&self, source: &Sentence, edits: Vec<Edit>) -> Vec<Edit> {
        label(source, edits, &self.lexicon, self.known.as_ref())
    }

    /// Edits from `source` to `hypothesis` that survive filtering and LM
    /// selection, plus the resulting sentence.
    fn run(
        &self,
        source: &Sentence,
        hypothesis: &Sentence,
    ) -> gecforge::Result<(Sentence, Vec<Edit>)> {
        let edits = self.label(source, align_edits(source, hypothesis));
        let edits = strip_unk_edits(source, &edits, &self.config.unk_marker);
        let edits = drop_categories(&[edits], &self.drop)
            .pop()
            .unwrap_or_default();
        let kept = select_with(self.selector.as_ref(), source, &edits, &self.lm)?;
        Ok((apply_edits(source, &kept)?, kept))
    }

    fn run_all(
        &self,
        sources: &[Sentence],
        hyps: &[Sentence],
    ) -> CliResult<Vec<(Sentence, Vec<Edit>)>> {
        Ok(sources
            .par_iter()
            .zip(hyps.par_iter())
            .map(|(s, h)| self.run(s, h))
            .collect::<gecforge::Result<_>>()?)
    }
}

pub fn postprocess(a: Postprocess) -> CliResult<()> {
    init_pool(&a.workers);
    let vocab = a
        .vocab
        .as_deref()
        .map(|p| load(p, Vocabulary::load))
        .transpose()?;
    let post = PostProcessor::new(&a.post, Arc::new(load_lm(&a.lm)?), vocab.as_ref())?;
    let src = read_sentences(&a.src)?;
    let hyp = read_sentences(&a.hyp)?;
    ensure_same_len("--src and --hyp differ in length", src.len(), hyp.len())?;
    let done = post.run_all(&src, &hyp)?;
    if let Some(m2) = &a.emit_m2 {
        let pairs: Vec<AnnotatedPair> = src
            .iter()
            .zip(&done)
            .map(|(s, (_, e))| AnnotatedPair::single(s.clone(), e.clone()))
            .collect();
        write_m2_file(m2, &pairs)?;
    }
    write_with(&a.out, |w| write_sentences(w, done.iter().map(|(s, _)| s)))
}

pub fn tune_categories(a: TuneCategories) -> CliResult<()> {
    init_pool(&a.workers);
    let hyp_pairs = read_pairs(&a.hyp)?;
    let gold = read_pairs(&a.reference)?;
    ensure_same_len(
        "--hyp and --ref differ in sentence count",
        hyp_pairs.len(),
        gold.len(),
    )?;
    let lex = if a.classify {
        Some(load_lexicon(a.lexicon.as_deref())?)
    } else {
        None
    };
    let hyp: Vec<Vec<Edit>> = hyp_pairs
        .iter()
        .map(|p| match &lex {
            Some(l) => label(&p.source, first_annotation(p), l, None),
            None => first_annotation(p),
        })
        .collect();
    let config = PostprocessConfig {
        max_categories_removed: a.max_cats,
        search_rounds: a.rounds,
        seed: a.seed,
        ..Default::default()
    };
    let result = category_filter_search(&hyp, &gold, None, &config)?;
    log::info!(
        "dropping {:?}: F0.5 {:.4} -> {:.4} over {} subsets",
        result.dropped,
        result.baseline.f_half,
        result.report.f_half,
        result.evaluated
    );
    write_json(&a.out, &result)
}

// ---------------------------------------------------------------------------
// Copy-mixture kernel

#[derive(Serialize)]
struct InstanceReport {
    p: Vec<f64>,
    p_gen: Vec<f64>,
    p_copy: Vec<f64>,
    alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_max_rel_error: Option<f64>,
}

pub fn copymix_selftest(a: CopymixSelftest) -> CliResult<()> {
    if let Some(path) = &a.instance {
        let inst: InstanceJson = serde_json::from_str(&read_string(path)?)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let inputs = inst.to_inputs()?;
        let out = output_distribution(&inputs)?;
        let report = InstanceReport {
            p: out.p.iter().copied().collect(),
            p_gen: out.p_gen.iter().copied().collect(),
            p_copy: out.p_copy.iter().copied().collect(),
            alpha: out.alpha,
            loss: inst.target.map(|t| loss(&inputs, t)).transpose()?,
            grad_max_rel_error: inst
                .target
                .map(|t| grad_check(&inputs, t, 1e-6))
                .transpose()?,
        };
        return write_json(&a.out, &report);
    }
    let started = Instant::now();
    let report = selftest(a.seed, a.trials)?;
    log::info!(
        "copymix selftest: {} trials in {:.2?}",
        report.trials,
        started.elapsed()
    );
    write_json(&a.out, &report)?;
    if !report.passed() {
        return Err(CliError::validation("copy-mixture self-test failed"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pipeline

fn run_corrector(cmd: &str, input: &[Sentence]) -> CliResult<Vec<Sentence>> {
    let fail = |e: &dyn std::fmt::Display| CliError {
        code: crate::io::EXIT_IO,
        message: format!("corrector {cmd:?}: {e}"),
    };
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| fail(&e))?;
    let mut text = String::new();
    for s in input {
        text.push_str(&s.join(" "));
        text.push('\n');
    }
    let mut stdin = child.stdin.take().expect("piped stdin");
    // Feed stdin from a thread so a corrector that streams output cannot
    // deadlock against a full pipe.
    let feeder = std::thread::spawn(move || stdin.write_all(text.as_bytes()));
    let mut output = String::new();
    child
        .stdout
        .take()
        .expect("piped stdout")
        .read_to_string(&mut output)
        .map_err(|e| fail(&e))?;
    let status = child.wait().map_err(|e| fail(&e))?;
    match feeder.join() {
        Ok(Ok(())) => {}
        Ok(Err(e)) if e.kind() == std::io::ErrorKind::BrokenPipe && !status.success() => {}
        Ok(Err(e)) => return Err(fail(&e)),
        Err(_) => return Err(fail(&"stdin writer panicked")),
    }
    if !status.success() {
        return Err(fail(&status));
    }
    let out: Vec<Sentence> = output.lines().map(tokenize).collect();
    if out.len() != input.len() {
        return Err(fail(&format!(
            "returned {} lines for {} inputs",
            out.len(),
            input.len()
        )));
    }
    Ok(out)
}

pub fn pipeline(a: Pipeline) -> CliResult<()> {
    init_pool(&a.workers);
    let lm = Arc::new(load_lm(&a.lm)?);
    let vocab = Arc::new(load(&a.spell.vocab, Vocabulary::load)?);
    let checker = spell_checker(&a.spell, vocab.clone(), Some(lm.clone()))?;
    let post = PostProcessor::new(&a.post, lm, Some(&vocab))?;
    let original = read_sentences(&a.input)?;

    let spelled: Vec<Sentence> = original.par_iter().map(|s| checker.correct(s).0).collect();
    let corrected = match &a.corrector {
        Some(cmd) => run_corrector(cmd, &spelled)?,
        None => spelled.clone(),
    };
    let done = post.run_all(&spelled, &corrected)?;

    if let Some(m2) = &a.emit_m2 {
        let pairs: Vec<AnnotatedPair> = original
            .iter()
            .zip(&done)
            .map(|(s, (out, _))| {
                AnnotatedPair::single(s.clone(), post.label(s, align_edits(s, out)))
            })
            .collect();
        write_m2_file(m2, &pairs)?;
    }
    let changed = original
        .iter()
        .zip(&done)
        .filter(|(s, (o, _))| s != &o)
        .count();
    log::info!(
        "pipeline: {changed} of {} sentences changed",
        original.len()
    );
    let by_stage: BTreeMap<&str, usize> = [
        (
            "spellcheck",
            original
                .iter()
                .zip(&spelled)
                .filter(|(a, b)| a != b)
                .count(),
        ),
        (
            "corrector",
            spelled
                .iter()
                .zip(&corrected)
                .filter(|(a, b)| a != b)
                .count(),
        ),
    ]
    .into_iter()
    .collect();
    log::debug!("sentences changed per stage: {by_stage:?}");
    write_with(&a.out, |w| write_sentences(w, done.iter().map(|(s, _)| s)))
}
