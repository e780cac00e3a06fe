//! End-to-end contract tests for the `hammer` binary: every command is
//! driven through its real CLI surface in scratch directories.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use tempfile::TempDir;

struct CmdOut {
    code: i32,
    stdout: String,
    stderr: String,
}

fn hammer(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> CmdOut {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hammer"));
    cmd.current_dir(dir).args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    CmdOut {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> CmdOut {
    let out = hammer(dir, args, &[]);
    assert_eq!(
        out.code, 0,
        "expected success for {args:?}\nstdout: {}\nstderr: {}",
        out.stdout, out.stderr
    );
    out
}

fn fails(dir: &Path, args: &[&str]) -> CmdOut {
    let out = hammer(dir, args, &[]);
    assert_ne!(out.code, 0, "expected failure for {args:?}\nstdout: {}", out.stdout);
    assert!(
        out.stderr.lines().any(|l| l.starts_with("error: ")),
        "stderr must carry a single-line `error: ` reason, got: {}",
        out.stderr
    );
    out
}

/// Corpus small enough that every test stays fast on one core.
const MICRO_DATA: &[&str] = &[
    "--set", "num_videos=6",
    "--set", "frames_per_video=16",
    "--set", "segments_per_video=2",
    "--set", "queries_per_video=2",
    "--set", "vocab_size=32",
    "--set", "d_visual=8",
];

/// Model sized to train in a couple of seconds.
const MICRO_MODEL: &[&str] = &[
    "--set", "d_model=16",
    "--set", "heads=2",
    "--set", "text_layers=1",
    "--set", "visual_layers=1",
    "--set", "cross_modal_layers=1",
    "--set", "clip_length=8",
    "--set", "n_max=16",
    "--set", "batch_size=4",
];

fn gen_micro(dir: &Path, out: &str, seed: &str) {
    let mut args = vec!["gen-data", "--seed", seed, "--out", out];
    args.extend_from_slice(MICRO_DATA);
    ok(dir, &args);
}

fn train_micro(dir: &Path, data: &str, out: &str, epochs: &str, extra: &[&str]) -> CmdOut {
    let mut args = vec![
        "train", "--seed", "7", "--data", data, "--out", out, "--epochs", epochs,
    ];
    args.extend_from_slice(MICRO_MODEL);
    args.extend_from_slice(extra);
    ok(dir, &args)
}

/// One shared corpus + checkpoint reused by the read-only tests.
struct Fixture {
    _dir: TempDir,
    root: PathBuf,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let root = dir.path().to_path_buf();
        gen_micro(&root, "data", "7");
        train_micro(&root, "data", "run", "2", &[]);
        Fixture { _dir: dir, root }
    })
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

fn metric_lines(path: &Path) -> Vec<serde_json::Value> {
    String::from_utf8(read(path))
        .expect("utf8 jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).expect("every metrics line is JSON"))
        .collect()
}

fn metric_value(lines: &[serde_json::Value], metric: &str, slice: &str) -> f64 {
    lines
        .iter()
        .find(|v| v["metric"] == metric && v["slice"] == slice)
        .unwrap_or_else(|| panic!("metric {metric}/{slice} missing"))["value"]
        .as_f64()
        .expect("metric value is a number")
}

#[test]
fn out_dir_refusal_requires_force() {
    let dir = tempfile::tempdir().unwrap();
    gen_micro(dir.path(), "d", "1");
    let mut args = vec!["gen-data", "--seed", "1", "--out", "d"];
    args.extend_from_slice(MICRO_DATA);
    let out = hammer(dir.path(), &args, &[]);
    assert_ne!(out.code, 0);
    assert!(out.stderr.contains("--force"), "stderr: {}", out.stderr);

    args.push("--force");
    ok(dir.path(), &args);
}

#[test]
fn same_seed_gen_data_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    gen_micro(dir.path(), "a", "99");
    gen_micro(dir.path(), "b", "99");
    gen_micro(dir.path(), "c", "100");
    for f in ["manifest.txt", "features.bin", "vocab.txt", "checksum.txt"] {
        assert_eq!(
            read(&dir.path().join("a").join(f)),
            read(&dir.path().join("b").join(f)),
            "{f} differs between same-seed runs"
        );
    }
    assert_ne!(
        read(&dir.path().join("a").join("features.bin")),
        read(&dir.path().join("c").join("features.bin")),
        "different seeds should produce different corpora"
    );
}

#[test]
fn infeasible_corpus_is_refused_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = fails(
        dir.path(),
        &[
            "gen-data", "--seed", "1", "--out", "d",
            "--set", "num_videos=4",
            "--set", "frames_per_video=8",
            "--set", "segments_per_video=40",
        ],
    );
    assert!(
        out.stderr.contains("cannot hold"),
        "error must name the violated feasibility invariant, got: {}",
        out.stderr
    );
    assert!(!dir.path().join("d").join("features.bin").exists());
}

#[test]
fn corrupted_dataset_aborts_train_before_any_training() {
    let dir = tempfile::tempdir().unwrap();
    gen_micro(dir.path(), "data", "7");
    let feats = dir.path().join("data").join("features.bin");
    let mut bytes = read(&feats);
    let last = bytes.len() - 1;
    bytes[last] ^= 0x01;
    std::fs::write(&feats, bytes).unwrap();

    let mut args = vec!["train", "--seed", "7", "--data", "data", "--out", "run"];
    args.extend_from_slice(MICRO_MODEL);
    let out = fails(dir.path(), &args);
    assert!(
        out.stderr.to_lowercase().contains("checksum"),
        "stderr: {}",
        out.stderr
    );
    assert!(
        !dir.path().join("run").exists(),
        "train must abort before creating any output"
    );
}

#[test]
fn oracle_eval_reports_perfect_metrics() {
    let fx = fixture();
    ok(
        &fx.root,
        &[
            "eval", "--oracle", "--data", "data", "--out", "oracle",
            "--k-list", "1,3,5", "--tau-list", "0.5,0.7",
        ],
    );
    let lines = metric_lines(&fx.root.join("oracle").join("metrics.jsonl"));
    for k in [1, 3, 5] {
        assert_eq!(metric_value(&lines, "vr_recall", &format!("k={k}")), 1.0);
    }
    assert_eq!(metric_value(&lines, "vr_median_rank", "all"), 1.0);
    assert_eq!(metric_value(&lines, "tl_miou", "all"), 1.0);
    for tau in ["0.5", "0.7"] {
        for k in [1, 3, 5] {
            assert_eq!(
                metric_value(&lines, "mlvc_recall", &format!("k={k},tau={tau}")),
                1.0
            );
        }
    }
    // 3 k-values x 2 taus = 6 grid cells exactly.
    assert_eq!(
        lines.iter().filter(|v| v["metric"] == "mlvc_recall").count(),
        6
    );
}

#[test]
fn eval_writes_reports_and_respects_threads() {
    let fx = fixture();
    let eval_args = |out: &str, threads: &str| {
        vec![
            "eval".to_string(), "--checkpoint".into(), "run".into(),
            "--data".into(), "data".into(), "--out".into(), out.into(),
            "--k-list".into(), "1,3".into(), "--tau-list".into(), "0.5".into(),
            "--threads".into(), threads.into(),
        ]
    };
    let a1: Vec<String> = eval_args("e1", "1");
    let a2: Vec<String> = eval_args("e2", "2");
    ok(&fx.root, &a1.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    ok(&fx.root, &a2.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    for f in ["metrics.jsonl", "predictions.jsonl", "report.txt"] {
        assert_eq!(
            read(&fx.root.join("e1").join(f)),
            read(&fx.root.join("e2").join(f)),
            "{f} must be identical regardless of --threads"
        );
    }
    let lines = metric_lines(&fx.root.join("e1").join("metrics.jsonl"));
    assert_eq!(metric_value(&lines, "queries", "all"), 2.0);
    assert_eq!(metric_value(&lines, "encoder_passes", "per_query"), 6.0 + 3.0);
    let preds = String::from_utf8(read(&fx.root.join("e1").join("predictions.jsonl"))).unwrap();
    assert_eq!(preds.lines().count(), 2, "one prediction row per query");
}

#[test]
fn empty_split_is_an_error_not_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "gen-data", "--seed", "3", "--out", "d",
        "--set", "heldout_fraction=0",
    ];
    args.extend_from_slice(MICRO_DATA);
    ok(dir.path(), &args);
    let out = fails(
        dir.path(),
        &["eval", "--oracle", "--data", "d", "--out", "e", "--split", "heldout"],
    );
    assert!(out.stderr.contains("no queries"), "stderr: {}", out.stderr);
}

#[test]
fn localize_prints_exactly_k_candidates() {
    let fx = fixture();
    let out = ok(
        &fx.root,
        &["localize", "--checkpoint", "run", "--data", "data", "--query-id", "q00003", "--k", "3"],
    );
    let rows = out
        .stdout
        .lines()
        .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .count();
    assert_eq!(rows, 3);
    assert!(out.stdout.contains("annotated: "));

    let bad = fails(
        &fx.root,
        &["localize", "--checkpoint", "run", "--data", "data", "--tokens", "1", "--k", "2"],
    );
    assert!(
        bad.stderr.contains("content ids are") && bad.stderr.contains("filler ids are"),
        "unknown-token error must list the usable ranges, got: {}",
        bad.stderr
    );

    let missing = fails(
        &fx.root,
        &["localize", "--checkpoint", "run", "--data", "data", "--query-id", "q99999"],
    );
    assert!(missing.stderr.contains("unknown query id"));
}

#[test]
fn localize_on_a_corpus_of_one_returns_one_candidate() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "gen-data", "--seed", "7", "--out", "d1",
            "--set", "num_videos=1",
            "--set", "frames_per_video=16",
            "--set", "segments_per_video=2",
            "--set", "queries_per_video=2",
            "--set", "vocab_size=32",
            "--set", "d_visual=8",
            "--set", "heldout_fraction=0",
        ],
    );
    train_micro(dir.path(), "d1", "r1", "2", &[]);
    let out = ok(
        dir.path(),
        &["localize", "--checkpoint", "r1", "--data", "d1", "--tokens", "5", "--k", "4"],
    );
    let rows = out
        .stdout
        .lines()
        .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .count();
    assert_eq!(rows, 1, "a single-video corpus has a single candidate");
}

#[test]
fn ablate_refuses_unknown_keys_before_any_run() {
    let fx = fixture();
    let out = fails(
        &fx.root,
        &["ablate", "--data", "data", "--out", "abl-bad", "--vary", "no_such_knob=1,2"],
    );
    assert!(out.stderr.contains("no_such_knob"));
    assert!(
        !fx.root.join("abl-bad").exists(),
        "refusal must happen before any arm output is created"
    );
}

#[test]
fn ablate_runs_the_grid_and_is_thread_invariant() {
    let fx = fixture();
    let ablate_args = |out: &str, threads: &str| -> Vec<String> {
        let mut a: Vec<String> = vec![
            "ablate".into(), "--seed".into(), "7".into(),
            "--data".into(), "data".into(), "--out".into(), out.into(),
            "--epochs".into(), "1".into(),
            "--vary".into(), "mlm_fm=true,false".into(),
            "--threads".into(), threads.into(),
            "--set".into(), "k_list=1,3".into(),
            "--set".into(), "tau_list=0.5".into(),
        ];
        for s in MICRO_MODEL {
            a.push((*s).into());
        }
        a
    };
    let a1 = ablate_args("ab1", "1");
    let a2 = ablate_args("ab2", "2");
    let out = ok(&fx.root, &a1.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    ok(&fx.root, &a2.iter().map(|s| s.as_str()).collect::<Vec<_>>());

    assert!(out.stdout.contains("mlm_fm=true"));
    assert!(out.stdout.contains("mlm_fm=false"));
    for f in ["ablation.txt", "ablation.jsonl"] {
        assert_eq!(
            read(&fx.root.join("ab1").join(f)),
            read(&fx.root.join("ab2").join(f)),
            "{f} must not depend on --threads"
        );
    }
    for arm in ["arm-00", "arm-01"] {
        assert_eq!(
            read(&fx.root.join("ab1").join(arm).join("checkpoint.bin")),
            read(&fx.root.join("ab2").join(arm).join("checkpoint.bin")),
            "{arm} checkpoint must not depend on --threads"
        );
    }
}

#[test]
fn diverged_training_keeps_last_good_checkpoint_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    gen_micro(dir.path(), "data", "7");
    let mut args = vec![
        "train", "--seed", "7", "--data", "data", "--out", "run", "--epochs", "3",
        "--set", "max_lr=1e6",
    ];
    args.extend_from_slice(MICRO_MODEL);
    let out = fails(dir.path(), &args);
    assert!(out.stderr.contains("diverged"), "stderr: {}", out.stderr);
    assert!(
        dir.path().join("run").join("checkpoint.bin").exists(),
        "the last good checkpoint must be retained"
    );
    assert!(dir.path().join("run").join("history.jsonl").exists());
}

#[test]
fn unknown_set_key_and_malformed_config_file_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = fails(dir.path(), &["gen-data", "--out", "d", "--set", "nonsense=1"]);
    assert!(out.stderr.contains("nonsense"));

    std::fs::write(dir.path().join("cfg.txt"), "epochs=3\njust a stray line\n").unwrap();
    let out = fails(dir.path(), &["gen-data", "--out", "d", "--config", "cfg.txt"]);
    assert!(
        out.stderr.contains("expected key=value") && out.stderr.contains("2"),
        "config parse error must name the line, got: {}",
        out.stderr
    );
}

#[test]
fn resolved_config_is_reloadable_and_flags_beat_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.txt"),
        "# comment\nnum_videos=6\nframes_per_video=16\nsegments_per_video=2\nqueries_per_video=2\nvocab_size=32\nd_visual=8\nnoise_sigma=0.5\n",
    )
    .unwrap();
    ok(
        dir.path(),
        &[
            "gen-data", "--config", "cfg.txt", "--seed", "11", "--out", "a",
            "--set", "noise_sigma=0.4",
        ],
    );
    let resolved = String::from_utf8(read(&dir.path().join("a").join("config.resolved"))).unwrap();
    assert!(resolved.contains("noise_sigma=0.4"), "--set must beat the file");
    assert!(resolved.contains("seed=11"));

    // The echoed config alone reproduces the dataset byte for byte.
    ok(
        dir.path(),
        &["gen-data", "--config", "a/config.resolved", "--out", "b"],
    );
    for f in ["manifest.txt", "features.bin", "vocab.txt", "checksum.txt"] {
        assert_eq!(
            read(&dir.path().join("a").join(f)),
            read(&dir.path().join("b").join(f)),
            "{f} differs when regenerated from config.resolved"
        );
    }
}

#[test]
fn log_level_env_var_controls_stderr_chatter() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["gen-data", "--seed", "1", "--out", "d"];
    args.extend_from_slice(MICRO_DATA);
    let quiet = hammer(dir.path(), &args, &[("HAMMER_LOG", "error")]);
    assert_eq!(quiet.code, 0);
    assert!(
        !quiet.stderr.contains("[INFO]"),
        "HAMMER_LOG=error must silence info logs, got: {}",
        quiet.stderr
    );

    let mut args2 = vec!["gen-data", "--seed", "1", "--out", "d2"];
    args2.extend_from_slice(MICRO_DATA);
    let chatty = hammer(dir.path(), &args2, &[("HAMMER_LOG", "info")]);
    assert_eq!(chatty.code, 0);
    assert!(chatty.stderr.contains("[INFO]"));
}

#[test]
fn no_cross_modal_flag_zeroes_the_cross_modal_stack() {
    let fx = fixture();
    train_micro(&fx.root, "data", "ncm", "1", &["--no-cross-modal"]);
    let meta = String::from_utf8(read(&fx.root.join("ncm").join("model.meta"))).unwrap();
    assert!(
        meta.contains("cross_modal_layers=0"),
        "model.meta should record the abated stack, got:\n{meta}"
    );
    let resolved =
        String::from_utf8(read(&fx.root.join("ncm").join("config.resolved"))).unwrap();
    assert!(resolved.contains("cross_modal_layers=0"));
}
