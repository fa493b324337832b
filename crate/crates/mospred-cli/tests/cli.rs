//! End-to-end runs of the actual binary: artifact layout, exit codes,
//! and byte-identical reruns, all through the public command line.

use std::path::Path;
use std::process::{Command, Output};

use mospred_core::corpus::{Corpus, FeatureSequence, FeatureStore, Rating, SplitTag, UtteranceRecord};

fn mospred(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mospred"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, expected: i32) {
    let code = out.status.code().expect("no signal");
    assert_eq!(
        code,
        expected,
        "expected exit {expected}, got {code}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(
        &path,
        "# miniature experiment\n\
         sim.n_systems = 10\n\
         sim.utts_per_system = 5\n\
         sim.n_judges = 6\n\
         sim.ratings_per_utterance = 4\n\
         sim.feature_dim = 6\n\
         sim.frame_min = 8\n\
         sim.frame_max = 16\n\
         sim.shifted_profile = 1\n\
         sim.unlabeled_systems = 3\n\
         dapt.epochs = 2\n\
         train.total_steps = 100\n\
         train.warmup_steps = 10\n\
         train.validation_every = 25\n\
         train.batch_size = 8\n\
         transfer.epochs = 4\n",
    )
    .unwrap();
    path
}

#[test]
fn pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let config = config.to_str().unwrap();

    for command in ["simulate", "dapt", "train", "refine", "evaluate"] {
        let out = mospred(&[command, "--config", config, "--out", "run", "--seed", "1"], dir.path());
        assert_code(&out, 0);
    }
    let out = mospred(
        &["transfer", "--mode", "zero_shot", "--config", config, "--out", "run", "--seed", "1"],
        dir.path(),
    );
    assert_code(&out, 0);

    let run = dir.path().join("run");
    for artifact in [
        "encoder.ddck",
        "model.ddck",
        "train_log.csv",
        "report.txt",
        "predictions.csv",
        "transfer_zero_shot.report.txt",
        "manifest.simulate.txt",
        "manifest.train.txt",
        "manifest.transfer_zero_shot.txt",
    ] {
        assert!(run.join(artifact).is_file(), "missing {artifact}");
    }

    // Same config and seed in a fresh directory: identical artifacts.
    for command in ["simulate", "dapt", "train", "refine", "evaluate"] {
        let out =
            mospred(&[command, "--config", config, "--out", "rerun", "--seed", "1"], dir.path());
        assert_code(&out, 0);
    }
    for artifact in ["model.ddck", "report.txt", "predictions.csv", "train_log.csv"] {
        let a = std::fs::read(run.join(artifact)).unwrap();
        let b = std::fs::read(dir.path().join("rerun").join(artifact)).unwrap();
        assert_eq!(a, b, "{artifact} differs between identical runs");
    }

    // A different seed changes the checkpoint.
    for command in ["simulate", "train"] {
        let out =
            mospred(&[command, "--config", config, "--out", "other", "--seed", "2"], dir.path());
        assert_code(&out, 0);
    }
    let a = std::fs::read(run.join("model.ddck")).unwrap();
    let b = std::fs::read(dir.path().join("other").join("model.ddck")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn usage_and_validation_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let config = config.to_str().unwrap();

    // Unknown subcommand / bad flag: usage errors.
    assert_code(&mospred(&["sideways"], dir.path()), 1);
    assert_code(&mospred(&["train", "--what"], dir.path()), 1);

    // Bad transfer mode string.
    assert_code(&mospred(&["transfer", "--mode", "sideways"], dir.path()), 1);

    // Unknown config key.
    std::fs::write(dir.path().join("bad.cfg"), "train.steps = 5\n").unwrap();
    let out = mospred(&["simulate", "--config", "bad.cfg"], dir.path());
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config keys"));

    // Stage order: refine with no checkpoint.
    assert_code(&mospred(&["simulate", "--config", config, "--out", "run"], dir.path()), 0);
    let out = mospred(&["refine", "--config", config, "--out", "run"], dir.path());
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("run train first"));

    // Evaluate against a corpus directory that does not exist.
    let out = mospred(&["dapt", "--config", config, "--out", "empty_run"], dir.path());
    assert_code(&out, 1);

    // --help is not an error.
    assert_code(&mospred(&["--help"], dir.path()), 0);
}

/// Builds a corpus whose every rating is the same score, so true MOS is
/// constant and correlations are undefined.
fn write_constant_corpus(root: &Path) {
    let mut store = FeatureStore::new();
    let mut records = Vec::new();
    let mut state = 11u64;
    let mut next = move || {
        // Small xorshift keeps the features varied without pulling in a
        // full RNG; determinism is all that matters here.
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state % 1000) as f32 / 1000.0 - 0.5
    };
    for sys in 0..4u32 {
        for utt in 0..3u32 {
            let utterance_id = format!("s{sys}_u{utt}");
            let system_id = format!("s{sys}");
            let data: Vec<f32> = (0..10 * 4).map(|_| next()).collect();
            store.insert(utterance_id.clone(), FeatureSequence::new(10, 4, data).unwrap()).unwrap();
            let ratings: Vec<Rating> = (1..=3u32)
                .map(|j| Rating::new(utterance_id.clone(), system_id.clone(), j, 3).unwrap())
                .collect();
            records
                .push(UtteranceRecord::new(utterance_id, system_id, "", ratings).unwrap());
        }
    }
    // Feature refs mirror utterance ids on disk.
    for r in &mut records {
        r.feature_ref = r.utterance_id.clone();
    }
    let corpus = Corpus::new(SplitTag::Train, 3, records).unwrap();
    mospred_cli::io::corpus_dir::save_corpus(root, &corpus, &store, None).unwrap();
}

#[test]
fn undefined_correlation_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    write_constant_corpus(&dir.path().join("flat"));
    std::fs::write(
        dir.path().join("flat.cfg"),
        "corpus.dir = flat\n\
         train.total_steps = 30\n\
         train.warmup_steps = 5\n\
         train.validation_every = 10\n\
         train.batch_size = 4\n",
    )
    .unwrap();

    let out = mospred(&["train", "--config", "flat.cfg", "--out", "run"], dir.path());
    assert_code(&out, 0);
    let out = mospred(&["evaluate", "--config", "flat.cfg", "--out", "run"], dir.path());
    assert_code(&out, 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("constant"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}
