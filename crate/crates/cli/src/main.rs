//! `gecforge`: every pipeline stage as a subcommand.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on I/O
//! errors. Outputs are written to a temp file and renamed into place, so a
//! failed run never leaves a partial file behind.

mod commands;
mod config;
mod io;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::io::{CliError, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(
    name = "gecforge",
    version,
    about = "Synthetic GEC data, spellchecking, post-processing and scoring"
)]
struct Cli {
    /// TOML config file (also GECFORGE_CONFIG)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// One of error, warn, info, debug, trace (also GECFORGE_LOG_LEVEL)
    #[arg(long, value_name = "LEVEL")]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Args)]
pub struct Workers {
    /// Worker threads; defaults to the available cores
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractEdits {
    /// Source sentences, one per line
    #[arg(long, required_unless_present = "tsv", requires = "tgt")]
    pub src: Option<PathBuf>,
    /// Target sentences aligned line by line with --src
    #[arg(long)]
    pub tgt: Option<PathBuf>,
    /// `source<TAB>target` pairs instead of --src/--tgt
    #[arg(long, conflicts_with_all = ["src", "tgt"])]
    pub tsv: Option<PathBuf>,
    /// Compiled lexicon JSON used to label edit categories
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Leave edits unlabelled
    #[arg(long)]
    pub no_classify: bool,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Clone, Args)]
pub struct BuildDict {
    /// Annotated M2 corpus; repeat for several
    #[arg(long, required = true)]
    pub m2: Vec<PathBuf>,
    /// Variants seen fewer times are pruned
    #[arg(long, default_value_t = 4)]
    pub min_count: u64,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct Noise {
    /// Edit dictionary JSON (required for realistic mode)
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// Clean text, one sentence per line
    #[arg(long = "in", default_value = "-")]
    pub input: PathBuf,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    /// Noiser name: realistic or random
    #[arg(long, default_value = "realistic")]
    pub mode: String,
    /// Compiled lexicon JSON; the built-in English lexicon otherwise
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Vocabulary file (`word<TAB>count`) for random-mode insertions
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.9)]
    pub token_error_prob: f64,
    #[arg(long, default_value_t = 0.1)]
    pub type_error_prob: f64,
    /// Per-operation probability in random mode, at most 0.5.
    #[arg(long, default_value_t = 0.1)]
    pub random_op_prob: f64,
    #[arg(long, default_value_t = 16_384)]
    pub batch_lines: usize,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Clone, Args)]
pub struct TrainLm {
    /// Training text, one sentence per line
    #[arg(long)]
    pub corpus: PathBuf,
    /// Interpolation weights for unigram, bigram and trigram
    #[arg(long, default_value = "0.1,0.3,0.6")]
    pub lambdas: String,
    /// Additive smoothing for the unigram estimate
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct Score {
    #[arg(long)]
    pub lm: PathBuf,
    #[arg(long = "in", default_value = "-")]
    pub input: PathBuf,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Clone, Args)]
pub struct SpellArgs {
    /// Vocabulary file (`word<TAB>count`)
    #[arg(long)]
    pub vocab: PathBuf,
    /// Capital-word list, one lowercase word per line
    #[arg(long)]
    pub capitals: Option<PathBuf>,
    /// Candidate ranker: lm or frequency
    #[arg(long, default_value = "lm")]
    pub ranker: String,
    #[arg(long, default_value_t = 2)]
    pub max_edit_distance: usize,
    #[arg(long, default_value_t = 10)]
    pub max_candidates: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lm_weight: f64,
    /// Order equal-distance candidates lexicographically only
    #[arg(long)]
    pub no_frequency_tiebreak: bool,
}

#[derive(Debug, Clone, Args)]
pub struct Spellcheck {
    /// Language model for the lm ranker
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[command(flatten)]
    pub spell: SpellArgs,
    #[arg(long = "in", default_value = "-")]
    pub input: PathBuf,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    /// Also write the corrections as M2
    #[arg(long)]
    pub emit_m2: Option<PathBuf>,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Clone, Args)]
pub struct BpeLearn {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Alphabet plus merges
    #[arg(long, default_value_t = 32_000)]
    pub vocab_size: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Clone, Args)]
pub struct BpeApply {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in", default_value = "-")]
    pub input: PathBuf,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    /// Join subwords back into words
    #[arg(long)]
    pub revert: bool,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreM2 {
    /// System edits as M2 (first annotator of each sentence)
    #[arg(long)]
    pub hyp: PathBuf,
    /// Gold M2
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Write the full report as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Clone, Args)]
pub struct Stats {
    /// M2 corpus; repeat for several. The first two are compared.
    #[arg(long, required = true)]
    pub m2: Vec<PathBuf>,
    /// Monte Carlo permutation rounds
    #[arg(long, default_value_t = 10_000)]
    pub perm_rounds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Average edit counts over all annotators
    #[arg(long)]
    pub all_annotators: bool,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Clone, Args)]
pub struct PostArgs {
    /// Most edits removed per sentence
    #[arg(long, default_value_t = 7)]
    pub max_remove: usize,
    /// Edit selector: auto, exhaustive or greedy
    #[arg(long, default_value = "auto")]
    pub selector: String,
    /// Largest edit count searched exhaustively under `auto`
    #[arg(long, default_value_t = 12)]
    pub exhaustive_limit: usize,
    #[arg(long, default_value = "<unk>")]
    pub unk_marker: String,
    /// Category list from tune-categories; matching edits are dropped
    #[arg(long)]
    pub drop: Option<PathBuf>,
    /// Compiled lexicon JSON used to label edit categories
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Postprocess {
    /// Corrector input, one sentence per line
    #[arg(long)]
    pub src: PathBuf,
    /// Corrector output aligned with --src
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long)]
    pub lm: PathBuf,
    /// Known words for edit labelling; lexicon membership otherwise
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[command(flatten)]
    pub post: PostArgs,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    /// Also write the kept edits as M2
    #[arg(long)]
    pub emit_m2: Option<PathBuf>,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Clone, Args)]
pub struct TuneCategories {
    /// Development-set system edits as M2
    #[arg(long)]
    pub hyp: PathBuf,
    /// Development-set gold M2
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Largest number of categories dropped together
    #[arg(long, default_value_t = 3)]
    pub max_cats: usize,
    /// Non-empty subsets evaluated
    #[arg(long, default_value_t = 200)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Label unlabelled hypothesis edits with the rule classifier
    #[arg(long)]
    pub classify: bool,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Clone, Args)]
pub struct CopymixSelftest {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    /// Evaluate one JSON instance instead of the random suite
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct Pipeline {
    #[arg(long = "in", default_value = "-")]
    pub input: PathBuf,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    /// Language model shared by spellcheck ranking and post-processing
    #[arg(long)]
    pub lm: PathBuf,
    #[command(flatten)]
    pub spell: SpellArgs,
    /// Shell command mapping stdin to stdout, one sentence per line
    #[arg(long)]
    pub corrector: Option<String>,
    #[command(flatten)]
    pub post: PostArgs,
    /// Also write source-to-output edits as M2
    #[arg(long)]
    pub emit_m2: Option<PathBuf>,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Clone, Args)]
pub struct LexiconBuild {
    /// Rows of `singular` or `singular<TAB>plural`
    #[arg(long)]
    pub nouns: Option<PathBuf>,
    /// Rows of `lemma` or `lemma<TAB>3sg<TAB>past<TAB>pp<TAB>gerund`
    #[arg(long)]
    pub verbs: Option<PathBuf>,
    /// One preposition per line
    #[arg(long)]
    pub prepositions: Option<PathBuf>,
    /// Type resolution order, e.g. VERB,NOUN,PREP
    #[arg(long)]
    pub priority: Option<String>,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BuildVocab {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Add lexicon words with count 0 (built-in lexicon unless --lexicon)
    #[arg(long)]
    pub with_lexicon: bool,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct Capitals {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Capitalized count must exceed this multiple of the lowercase count
    #[arg(long, conflicts_with = "margin")]
    pub ratio: Option<f64>,
    /// Capitalized count must exceed the lowercase count by this much
    #[arg(long)]
    pub margin: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub min_count: u64,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Align source/target sentences and write their edits as M2
    ExtractEdits(ExtractEdits),
    /// Harvest the noising dictionary from annotated M2 corpora
    BuildDict(BuildDict),
    /// Corrupt clean text into `noised<TAB>clean` training pairs
    Noise(Noise),
    /// Train the interpolated trigram language model
    TrainLm(TrainLm),
    /// Print the natural-log LM score of each line
    Score(Score),
    /// Context-aware spelling and casing correction
    Spellcheck(Spellcheck),
    /// Learn BPE merges
    BpeLearn(BpeLearn),
    /// Segment text with learned merges, or revert segmentation
    BpeApply(BpeApply),
    /// Span-based P/R/F0.5 of system M2 against gold M2
    ScoreM2(ScoreM2),
    /// Edit densities and a permutation test between two corpora
    Stats(Stats),
    /// Drop corrector edits the language model dislikes
    Postprocess(Postprocess),
    /// Find edit categories whose removal maximizes dev F0.5
    TuneCategories(TuneCategories),
    /// Numerical checks of the copy-mixture output kernel
    CopymixSelftest(CopymixSelftest),
    /// Spellcheck, optional external corrector, then post-processing
    Pipeline(Pipeline),
    /// Compile a morphology lexicon to JSON
    LexiconBuild(LexiconBuild),
    /// Count corpus words into a spellcheck vocabulary
    BuildVocab(BuildVocab),
    /// Extract the capital-word list
    Capitals(Capitals),
}

fn init_logging(level: Option<String>) {
    let level = level.unwrap_or_else(|| "warn".to_owned());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn run(raw: Vec<OsString>) -> Result<(), CliError> {
    let cmd = Cli::command();
    let argv = config::layered_args(raw.clone(), &cmd)?;
    let matches = cmd.try_get_matches_from(argv).map_err(|e| {
        let _ = e.print();
        CliError {
            code: if e.use_stderr() { EXIT_VALIDATION } else { 0 },
            message: String::new(),
        }
    })?;
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::validation(e.to_string()))?;
    let level = match cli
        .log_level
        .or_else(|| std::env::var("GECFORGE_LOG_LEVEL").ok())
    {
        Some(l) => Some(l),
        None => config::file_log_level(&raw, &Cli::command())?,
    };
    init_logging(level);

    use commands as c;
    match cli.command {
        Cmd::ExtractEdits(a) => c::extract_edits(a),
        Cmd::BuildDict(a) => c::build_dict(a),
        Cmd::Noise(a) => c::noise(a),
        Cmd::TrainLm(a) => c::train_lm(a),
        Cmd::Score(a) => c::score(a),
        Cmd::Spellcheck(a) => c::spellcheck(a),
        Cmd::BpeLearn(a) => c::bpe_learn(a),
        Cmd::BpeApply(a) => c::bpe_apply(a),
        Cmd::ScoreM2(a) => c::score_m2(a),
        Cmd::Stats(a) => c::stats(a),
        Cmd::Postprocess(a) => c::postprocess(a),
        Cmd::TuneCategories(a) => c::tune_categories(a),
        Cmd::CopymixSelftest(a) => c::copymix_selftest(a),
        Cmd::Pipeline(a) => c::pipeline(a),
        Cmd::LexiconBuild(a) => c::lexicon_build(a),
        Cmd::BuildVocab(a) => c::build_vocab(a),
        Cmd::Capitals(a) => c::capitals(a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.code)
        }
    }
}
