use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn fixture(name: &str) -> PathBuf {
    Path::new(FIXTURES).join(name)
}

/// The binary with no inherited GECFORGE_* settings.
fn gf() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gecforge"));
    for (k, _) in std::env::vars() {
        if k.starts_with("GECFORGE_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    gf().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CLEAN: &str = "I went for a walk with the children .\n\
She has two cats in the house .\n\
We talked about the book at school .\n\
They walk to school for the children .\n\
He reads a book about cats in the morning .\n";

const NOISY: &str = "I went four a walk with the child .\n\
She have two cat in the house .\n\
We talk about the book at school .\n\
They walk to school four the child .\n\
He read a book about cat in the morning .\n";

/// Clean text plus a dictionary harvested from a small parallel fixture.
fn noise_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let (clean, noisy, m2, dict) = (
        dir.join("clean.txt"),
        dir.join("noisy.txt"),
        dir.join("e.m2"),
        dir.join("dict.json"),
    );
    fs::write(&clean, CLEAN.repeat(20)).unwrap();
    fs::write(&noisy, NOISY).unwrap();
    fs::write(dir.join("src5.txt"), CLEAN).unwrap();
    ok(&[
        "extract-edits",
        "--src",
        p(&noisy),
        "--tgt",
        p(&dir.join("src5.txt")),
        "--out",
        p(&m2),
    ]);
    ok(&[
        "build-dict",
        "--m2",
        p(&m2),
        "--min-count",
        "1",
        "--out",
        p(&dict),
    ]);
    (clean, dict)
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"));
    for sub in ["noise", "pipeline", "copymix-selftest", "tune-categories"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    assert_eq!(run(&["noise", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["noise", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn noise_without_dict_names_the_flag() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in.txt");
    fs::write(&input, "a b c\n").unwrap();
    let out = run(&["noise", "--in", p(&input)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--dict"), "{}", stderr(&out));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let (_, dict) = noise_inputs(dir.path());
    let out = run(&[
        "noise",
        "--in",
        p(&dir.path().join("absent.txt")),
        "--dict",
        p(&dict),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.txt"));
}

#[test]
fn failed_runs_leave_no_partial_output() {
    let dir = TempDir::new().unwrap();
    let tsv = dir.path().join("pairs.tsv");
    fs::write(&tsv, "a b\ta c\nd e\td e\nno tab here\n").unwrap();
    let out_path = dir.path().join("out.m2");
    let out = run(&["extract-edits", "--tsv", p(&tsv), "--out", p(&out_path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
    assert!(!out_path.exists());

    // A failure mid-stream keeps the previous file intact.
    let (_, dict) = noise_inputs(dir.path());
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "fine line\nline with\ta tab\n").unwrap();
    let target = dir.path().join("pairs-out.tsv");
    fs::write(&target, "previous\n").unwrap();
    let out = run(&[
        "noise",
        "--in",
        p(&bad),
        "--dict",
        p(&dict),
        "--out",
        p(&target),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(fs::read_to_string(&target).unwrap(), "previous\n");
    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".gecforge-"))
        .collect();
    assert!(leftovers.is_empty());
}

#[cfg(unix)]
#[test]
fn writing_through_a_symlink_keeps_the_link() {
    let dir = TempDir::new().unwrap();
    let real = dir.path().join("real.json");
    let link = dir.path().join("link.json");
    fs::write(&real, "old").unwrap();
    std::os::unix::fs::symlink(&real, &link).unwrap();
    ok(&["lexicon-build", "--out", p(&link)]);
    assert!(fs::symlink_metadata(&link)
        .unwrap()
        .file_type()
        .is_symlink());
    assert!(fs::read_to_string(&real)
        .unwrap()
        .contains("format_version"));
}

#[test]
fn noise_is_identical_across_worker_counts() {
    let dir = TempDir::new().unwrap();
    let (clean, dict) = noise_inputs(dir.path());
    let mut outputs = Vec::new();
    for w in ["1", "3", "8"] {
        let out = dir.path().join(format!("n{w}.tsv"));
        ok(&[
            "noise",
            "--in",
            p(&clean),
            "--dict",
            p(&dict),
            "--seed",
            "11",
            "--repetitions",
            "2",
            "--type-error-prob",
            "0.3",
            "--batch-lines",
            "7",
            "--workers",
            w,
            "--out",
            p(&out),
        ]);
        outputs.push(fs::read(&out).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let text = String::from_utf8(outputs.remove(0)).unwrap();
    assert_eq!(text.lines().count(), 200);
    assert!(text.lines().all(|l| l.split('\t').count() == 2));
    assert!(text.lines().any(|l| l.contains("four")));
}

#[test]
fn random_mode_needs_a_vocabulary() {
    let dir = TempDir::new().unwrap();
    let (clean, _) = noise_inputs(dir.path());
    let out = run(&["noise", "--mode", "random", "--in", p(&clean)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--vocab"));
    let vocab = dir.path().join("vocab.txt");
    ok(&["build-vocab", "--corpus", p(&clean), "--out", p(&vocab)]);
    let a = ok(&[
        "noise",
        "--mode",
        "random",
        "--in",
        p(&clean),
        "--vocab",
        p(&vocab),
        "--seed",
        "4",
        "--workers",
        "1",
    ]);
    let b = ok(&[
        "noise",
        "--mode",
        "random",
        "--in",
        p(&clean),
        "--vocab",
        p(&vocab),
        "--seed",
        "4",
        "--workers",
        "4",
    ]);
    assert_eq!(a.stdout, b.stdout);
    let unknown = run(&[
        "noise",
        "--mode",
        "scramble",
        "--in",
        p(&clean),
        "--vocab",
        p(&vocab),
    ]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(
        stderr(&unknown).contains("available: random, realistic"),
        "{}",
        stderr(&unknown)
    );
}

#[test]
fn flags_beat_env_beat_config_file() {
    let dir = TempDir::new().unwrap();
    let (clean, dict) = noise_inputs(dir.path());
    let base = [
        "noise",
        "--in",
        p(&clean),
        "--dict",
        p(&dict),
        "--type-error-prob",
        "0.5",
    ];
    let with_seed = |s: &str| {
        let mut a = base.to_vec();
        a.extend(["--seed", s]);
        ok(&a).stdout
    };
    let (s1, s2, s3) = (with_seed("1"), with_seed("2"), with_seed("3"));
    assert!(s1 != s2 && s2 != s3);

    let config = dir.path().join("gecforge.toml");
    fs::write(&config, "seed = 9\n\n[noise]\nseed = 1\n").unwrap();
    let from_file = gf()
        .arg("--config")
        .arg(&config)
        .args(base)
        .output()
        .unwrap();
    assert_eq!(from_file.stdout, s1);
    let from_env = gf()
        .arg("--config")
        .arg(&config)
        .args(base)
        .env("GECFORGE_SEED", "2")
        .output()
        .unwrap();
    assert_eq!(from_env.stdout, s2);
    let from_flag = gf()
        .env("GECFORGE_CONFIG", &config)
        .env("GECFORGE_SEED", "2")
        .args(base)
        .args(["--seed", "3"])
        .output()
        .unwrap();
    assert_eq!(from_flag.stdout, s3);

    // Top-level keys fill in for subcommands without their own table.
    let shared = dir.path().join("shared.toml");
    fs::write(&shared, "seed = 2\ndict = \"ignored-by-flag.json\"\n").unwrap();
    let out = gf()
        .arg("--config")
        .arg(&shared)
        .args(base)
        .output()
        .unwrap();
    assert_eq!(out.stdout, s2);
}

#[test]
fn config_errors_are_validation_errors() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(&config, "[noise]\nsede = 1\n").unwrap();
    let out = run(&["--config", p(&config), "noise", "--in", "-", "--dict", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sede"));
    fs::write(&config, "[noise\n").unwrap();
    assert_eq!(
        run(&["--config", p(&config), "noise"]).status.code(),
        Some(1)
    );
}

#[test]
fn golden_pipeline() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let corpus = fixture("pipeline/corpus.txt");
    let (lm, vocab, caps) = (d.join("lm.txt"), d.join("vocab.txt"), d.join("caps.txt"));
    ok(&["train-lm", "--corpus", p(&corpus), "--out", p(&lm)]);
    ok(&[
        "build-vocab",
        "--corpus",
        p(&corpus),
        "--with-lexicon",
        "--out",
        p(&vocab),
    ]);
    ok(&["capitals", "--corpus", p(&corpus), "--out", p(&caps)]);
    assert_eq!(fs::read_to_string(&caps).unwrap(), "paris\n");

    let corrector = format!("sed -f {}", p(&fixture("pipeline/corrector.sed")));
    for workers in ["1", "4"] {
        let (out, m2) = (d.join("out.txt"), d.join("out.m2"));
        ok(&[
            "pipeline",
            "--in",
            p(&fixture("pipeline/input.txt")),
            "--lm",
            p(&lm),
            "--vocab",
            p(&vocab),
            "--capitals",
            p(&caps),
            "--corrector",
            &corrector,
            "--emit-m2",
            p(&m2),
            "--out",
            p(&out),
            "--workers",
            workers,
        ]);
        assert_eq!(
            fs::read_to_string(&out).unwrap(),
            fs::read_to_string(fixture("pipeline/expected.txt")).unwrap()
        );
        assert_eq!(
            fs::read_to_string(&m2).unwrap(),
            fs::read_to_string(fixture("pipeline/expected.m2")).unwrap()
        );
    }
}

#[test]
fn failing_corrector_is_reported() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let corpus = fixture("pipeline/corpus.txt");
    let (lm, vocab) = (d.join("lm.txt"), d.join("vocab.txt"));
    ok(&["train-lm", "--corpus", p(&corpus), "--out", p(&lm)]);
    ok(&["build-vocab", "--corpus", p(&corpus), "--out", p(&vocab)]);
    let input = p(&fixture("pipeline/input.txt")).to_owned();
    let common = [
        "pipeline",
        "--in",
        &input,
        "--lm",
        p(&lm),
        "--vocab",
        p(&vocab),
    ];
    let out = gf()
        .args(common)
        .args(["--corrector", "exit 3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = gf()
        .args(common)
        .args(["--corrector", "head -n 1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("1 lines for 5 inputs"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn spellcheck_rankers_and_m2() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let corpus = fixture("pipeline/corpus.txt");
    let (lm, vocab, input, m2) = (
        d.join("lm.txt"),
        d.join("vocab.txt"),
        d.join("in.txt"),
        d.join("sp.m2"),
    );
    ok(&["train-lm", "--corpus", p(&corpus), "--out", p(&lm)]);
    ok(&["build-vocab", "--corpus", p(&corpus), "--out", p(&vocab)]);
    fs::write(&input, "This is an esay about my favorite sport .\n").unwrap();
    let with_lm = ok(&[
        "spellcheck",
        "--lm",
        p(&lm),
        "--vocab",
        p(&vocab),
        "--in",
        p(&input),
        "--emit-m2",
        p(&m2),
    ]);
    assert_eq!(
        String::from_utf8_lossy(&with_lm.stdout),
        "This is an essay about my favorite sport .\n"
    );
    assert!(fs::read_to_string(&m2)
        .unwrap()
        .contains("A 3 4|||SPELL|||essay|||"));
    let freq = ok(&[
        "spellcheck",
        "--ranker",
        "frequency",
        "--vocab",
        p(&vocab),
        "--in",
        p(&input),
    ]);
    assert_eq!(
        String::from_utf8_lossy(&freq.stdout),
        "This is an easy about my favorite sport .\n"
    );
    let no_lm = run(&["spellcheck", "--vocab", p(&vocab), "--in", p(&input)]);
    assert_eq!(no_lm.status.code(), Some(1));
    assert!(stderr(&no_lm).contains("--lm"));
}

#[test]
fn score_m2_reports_conventions() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let gold = "S a b c d e\nA 0 1|||X|||A|||REQUIRED|||-NONE-|||0\nA 1 2|||X|||B|||REQUIRED|||-NONE-|||0\n\
A 2 3|||X|||C|||REQUIRED|||-NONE-|||0\nA 3 4|||X|||D|||REQUIRED|||-NONE-|||0\n\n";
    let hyp = "S a b c d e\nA 0 1|||X|||A|||REQUIRED|||-NONE-|||0\nA 1 2|||X|||B|||REQUIRED|||-NONE-|||0\n\
A 4 5|||X|||Z|||REQUIRED|||-NONE-|||0\n\n";
    fs::write(d.join("gold.m2"), gold).unwrap();
    fs::write(d.join("hyp.m2"), hyp).unwrap();
    let json = d.join("r.json");
    let out = ok(&[
        "score-m2",
        "--hyp",
        p(&d.join("hyp.m2")),
        "--ref",
        p(&d.join("gold.m2")),
        "--json",
        p(&json),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("F0.5 0.6250"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert!((v["f_half"].as_f64().unwrap() - 0.625).abs() < 1e-12);
    assert_eq!(
        (v["tp"].as_u64(), v["fp"].as_u64(), v["fn"].as_u64()),
        (Some(2), Some(1), Some(2))
    );
    assert!(v["conventions"].as_str().unwrap().contains("precision = 1"));
    let self_score = ok(&[
        "score-m2",
        "--hyp",
        p(&d.join("gold.m2")),
        "--ref",
        p(&d.join("gold.m2")),
    ]);
    assert!(String::from_utf8_lossy(&self_score.stdout).contains("F0.5 1.0000"));
}

#[test]
fn stats_and_category_tuning() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mut dense = String::new();
    let mut sparse = String::new();
    for i in 0..6 {
        dense.push_str(&format!("S w x y z\nA 0 1|||OTHER|||v{i}|||REQUIRED|||-NONE-|||0\nA 2 3|||PUNCT|||.|||REQUIRED|||-NONE-|||0\n\n"));
        sparse.push_str("S w x y z\nA -1 -1|||noop|||-NONE-|||REQUIRED|||-NONE-|||0\n\n");
    }
    fs::write(d.join("dense.m2"), &dense).unwrap();
    fs::write(d.join("sparse.m2"), &sparse).unwrap();
    let (dense_m2, sparse_m2) = (d.join("dense.m2"), d.join("sparse.m2"));
    let args = [
        "stats",
        "--m2",
        p(&dense_m2),
        "--m2",
        p(&sparse_m2),
        "--perm-rounds",
        "2000",
        "--seed",
        "5",
    ];
    let a = ok(&args);
    let text = String::from_utf8_lossy(&a.stdout).into_owned();
    assert!(
        text.contains("edits/token 0.500000") && text.contains("edits/token 0.000000"),
        "{text}"
    );
    assert_eq!(
        a.stdout,
        ok(&[&args[..], &["--workers", "1"]].concat()).stdout
    );

    // Hypothesis: the PUNCT edits are right, the OTHER edits are not.
    let mut gold = String::new();
    for _ in 0..6 {
        gold.push_str("S w x y z\nA 2 3|||PUNCT|||.|||REQUIRED|||-NONE-|||0\n\n");
    }
    fs::write(d.join("gold.m2"), &gold).unwrap();
    let drop = d.join("drop.json");
    ok(&[
        "tune-categories",
        "--hyp",
        p(&d.join("dense.m2")),
        "--ref",
        p(&d.join("gold.m2")),
        "--out",
        p(&drop),
    ]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&drop).unwrap()).unwrap();
    assert_eq!(v["dropped"], serde_json::json!(["OTHER"]));
    assert_eq!(v["report"]["f_half"].as_f64(), Some(1.0));
}

#[test]
fn bpe_round_trip_through_files() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let corpus = fixture("pipeline/corpus.txt");
    let (model, seg, back) = (d.join("bpe.txt"), d.join("seg.txt"), d.join("back.txt"));
    ok(&[
        "bpe-learn",
        "--corpus",
        p(&corpus),
        "--vocab-size",
        "120",
        "--out",
        p(&model),
    ]);
    ok(&[
        "bpe-apply",
        "--model",
        p(&model),
        "--in",
        p(&corpus),
        "--out",
        p(&seg),
    ]);
    ok(&[
        "bpe-apply",
        "--model",
        p(&model),
        "--in",
        p(&seg),
        "--out",
        p(&back),
        "--revert",
    ]);
    assert_eq!(
        fs::read_to_string(&back).unwrap(),
        fs::read_to_string(&corpus).unwrap()
    );
    assert_ne!(
        fs::read_to_string(&seg).unwrap(),
        fs::read_to_string(&corpus).unwrap()
    );
}

#[test]
fn postprocess_keeps_lm_preferred_edits() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let corpus = fixture("pipeline/corpus.txt");
    let lm = d.join("lm.txt");
    ok(&["train-lm", "--corpus", p(&corpus), "--out", p(&lm)]);
    fs::write(
        d.join("src.txt"),
        "The test were easy .\nIt is easy to learn an new sport .\n",
    )
    .unwrap();
    fs::write(
        d.join("hyp.txt"),
        "The test was easy .\nIt is easy to learn a new <unk> .\n",
    )
    .unwrap();
    fs::write(d.join("drop.json"), "[\"OTHER\"]").unwrap();
    let vocab = d.join("vocab.txt");
    ok(&[
        "build-vocab",
        "--corpus",
        p(&corpus),
        "--with-lexicon",
        "--out",
        p(&vocab),
    ]);
    let (src, hyp) = (d.join("src.txt"), d.join("hyp.txt"));
    // The vocabulary keeps "an" from being labelled a misspelling.
    let base = [
        "postprocess",
        "--src",
        p(&src),
        "--hyp",
        p(&hyp),
        "--lm",
        p(&lm),
        "--vocab",
        p(&vocab),
    ];
    let out = ok(&base);
    assert_eq!(
        String::from_utf8_lossy(&out.stdout),
        "The test was easy .\nIt is easy to learn a new sport .\n"
    );
    let dropped = ok(&[&base[..], &["--drop", p(&d.join("drop.json"))]].concat());
    assert_eq!(
        String::from_utf8_lossy(&dropped.stdout),
        "The test were easy .\nIt is easy to learn an new sport .\n"
    );
}

#[test]
fn copymix_selftest_and_instance() {
    let out = ok(&["copymix-selftest", "--seed", "3", "--trials", "50"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["trials"].as_u64(), Some(50));
    assert_eq!(v["convexity_violations"].as_u64(), Some(0));

    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("inst.json");
    fs::write(
        &inst,
        r#"{"h_enc": [[0.5, 2.0], [-1.0, 0.25]], "h_dec": [0.75, -0.5],
            "w_gen": [[0.1, 0.2], [-0.3, 0.4], [0.5, -0.6]], "w_alpha": [0.3, -0.7],
            "source_ids": [2, 0], "target": 1}"#,
    )
    .unwrap();
    let out = ok(&["copymix-selftest", "--instance", p(&inst)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["alpha"].as_f64().unwrap() - 0.289_737_028_900_274_2).abs() < 1e-15);
    assert!((v["loss"].as_f64().unwrap() - 2.046_138_862_397_373).abs() < 1e-13);
    assert!(v["grad_max_rel_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn lexicon_build_respects_priority() {
    let dir = TempDir::new().unwrap();
    let nouns = dir.path().join("nouns.tsv");
    fs::write(&nouns, "walk\nchild\tchildren\n").unwrap();
    let out = ok(&[
        "lexicon-build",
        "--nouns",
        p(&nouns),
        "--priority",
        "NOUN,VERB,PREP",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        v["type_priority"],
        serde_json::json!(["NOUN", "VERB", "PREP"])
    );
    let bad = run(&["lexicon-build", "--priority", "NOUN,NOUN"]);
    assert_eq!(bad.status.code(), Some(1));
}
