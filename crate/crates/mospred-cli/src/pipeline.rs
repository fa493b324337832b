//! The seven pipeline commands. Each one reads its inputs, runs the
//! corresponding core operations, writes its artifacts under the output
//! directory, and records a manifest. Failures while reading or checking
//! inputs are validation errors (exit 1); failures during compute or
//! while writing artifacts are runtime errors (exit 2).

use std::path::{Path, PathBuf};

use mospred_core::augment::augment_corpus;
use mospred_core::corpus::{split_corpus, Corpus, FeatureStore, SplitTag, UtteranceRecord};
use mospred_core::dapt::run_dapt;
use mospred_core::metrics::{evaluate, MetricsReport, PredictionRow};
use mospred_core::model::{HeadMode, ModelConfig, MosPredictor};
use mospred_core::refine::{fit_refinement, RefinementLayer};
use mospred_core::rng::{substream, tag};
use mospred_core::simulate::{shift_domain, simulate_corpus, strip_ratings, SimulatorConfig};
use mospred_core::train::{fine_tune, train_stage2, FineTuneConfig, TrainConfig};
use mospred_core::adam::LrSchedule;

use crate::config::{PipelineConfig, TransferMode};
use crate::io::report::{write_predictions, write_report, write_train_log, Report};
use crate::io::{checkpoint, corpus_dir};
use crate::manifest::ManifestBuilder;
use crate::{runtime, validation, CliResult};

pub const ENCODER_FILE: &str = "encoder.ddck";
pub const MODEL_FILE: &str = "model.ddck";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

fn ensure_out_dir(config: &PipelineConfig) -> CliResult<()> {
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| runtime(format!("creating {}: {e}", config.out_dir.display())))
}

fn load_rated(dir: &Path, min_judge_count: u32) -> CliResult<(Corpus, FeatureStore)> {
    let (corpus, store) = corpus_dir::load_corpus(dir, min_judge_count)?;
    if corpus.split_tag() == SplitTag::Unlabeled {
        return Err(validation(format!(
            "{} holds a rating-free corpus; this command needs ratings",
            dir.display()
        )));
    }
    Ok((corpus, store))
}

fn split(
    config: &PipelineConfig,
    corpus: &Corpus,
) -> CliResult<(Corpus, Corpus, Corpus)> {
    let (a, b, c) = config.split;
    split_corpus(corpus, [a, b, c], config.seed).map_err(validation)
}

/// Generates the source corpus, and optionally a shifted-domain twin and
/// a rating-free corpus, each in its own directory with features and the
/// ground-truth sidecar.
pub fn cmd_simulate(config: &PipelineConfig) -> CliResult<()> {
    ensure_out_dir(config)?;

    let (corpus, store, latent) = simulate_corpus(&config.sim).map_err(runtime)?;
    corpus_dir::save_corpus(&config.corpus_dir, &corpus, &store, Some(&latent))?;
    log::info!(
        "simulated {} utterances across {} systems into {}",
        corpus.len(),
        config.sim.n_systems,
        config.corpus_dir.display()
    );

    if config.shifted_profile != 0 {
        let shifted_config = shift_domain(&config.sim, config.shifted_profile);
        let (shifted, shifted_store, shifted_latent) =
            simulate_corpus(&shifted_config).map_err(runtime)?;
        // The "tg-" namespace lets target features share a store with the
        // source corpus during pre-training.
        let (shifted, shifted_store) = prefix_ids(&shifted, &shifted_store, "tg-")?;
        let shifted_latent: Vec<_> = shifted_latent
            .into_iter()
            .map(|mut entry| {
                entry.utterance_id = format!("tg-{}", entry.utterance_id);
                entry.system_id = format!("tg-{}", entry.system_id);
                entry
            })
            .collect();
        corpus_dir::save_corpus(
            &config.target_dir,
            &shifted,
            &shifted_store,
            Some(&shifted_latent),
        )?;
        log::info!(
            "simulated shifted-domain corpus (profile {}) into {}",
            config.shifted_profile,
            config.target_dir.display()
        );
    }

    if config.unlabeled_systems != 0 {
        // Golden-ratio offset keeps these systems off the rated
        // corpus's random streams without a second seed knob. The pool
        // lives in the transfer domain (when one is configured), mirroring
        // how extra rating-free audio comes from the corpus being adapted to.
        let unlabeled_config = SimulatorConfig {
            n_systems: config.unlabeled_systems,
            seed: config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
            domain_profile_id: config.shifted_profile,
            ..config.sim.clone()
        };
        let (rated, raw_store, _) = simulate_corpus(&unlabeled_config).map_err(runtime)?;
        let stripped = strip_ratings(&rated).map_err(runtime)?;
        // Namespace the ids so this corpus can share a feature store
        // with the rated one during pre-training.
        let (unlabeled, unlabeled_store) = prefix_ids(&stripped, &raw_store, "bg-")?;
        corpus_dir::save_corpus(&config.unlabeled_dir, &unlabeled, &unlabeled_store, None)?;
        log::info!(
            "simulated {} rating-free systems into {}",
            config.unlabeled_systems,
            config.unlabeled_dir.display()
        );
    }

    ManifestBuilder::new("simulate", config).write(&config.out_dir)
}

/// Rewrites every utterance, system, and feature id with a prefix,
/// yielding a corpus that can coexist with the original in one store.
fn prefix_ids(
    corpus: &Corpus,
    store: &FeatureStore,
    prefix: &str,
) -> CliResult<(Corpus, FeatureStore)> {
    let mut new_store = FeatureStore::new();
    let mut records = Vec::with_capacity(corpus.len());
    for utt in corpus.utterances() {
        let new_ref = format!("{prefix}{}", utt.feature_ref);
        let seq = store.get(&utt.feature_ref).map_err(runtime)?;
        new_store.insert(new_ref.clone(), seq.clone()).map_err(runtime)?;
        let mut renamed = utt.clone();
        renamed.utterance_id = format!("{prefix}{}", utt.utterance_id);
        renamed.system_id = format!("{prefix}{}", utt.system_id);
        renamed.feature_ref = new_ref;
        for rating in &mut renamed.ratings {
            rating.utterance_id = renamed.utterance_id.clone();
            rating.system_id = renamed.system_id.clone();
        }
        records.push(renamed);
    }
    let corpus =
        Corpus::new(corpus.split_tag(), corpus.judge_count(), records).map_err(runtime)?;
    Ok((corpus, new_store))
}

/// Stage 1: masked-frame reconstruction over every training corpus we can
/// find — the source train split, the transfer-domain train split, and the
/// rating-free pool — saving the encoder checkpoint. Ratings are never
/// consulted, so transfer-domain features are fair game even for zero-shot.
pub fn cmd_dapt(config: &PipelineConfig) -> CliResult<()> {
    ensure_out_dir(config)?;

    let (source, source_store) = corpus_dir::load_corpus(&config.corpus_dir, 1)?;
    let (source_train, _, _) = split(config, &source)?;
    let mut manifest = ManifestBuilder::new("dapt", config);
    manifest.input("corpus", &config.corpus_dir)?;

    let mut target: Option<Corpus> = None;
    let mut unlabeled: Option<Corpus> = None;

    // One store holding every feature sequence involved; the extra corpora
    // carry "tg-"/"bg-" id namespaces so keys cannot collide.
    let mut store = source_store;
    let absorb = |dir: &std::path::Path, store: &mut FeatureStore| -> CliResult<Corpus> {
        let (corpus, extra_store) = corpus_dir::load_corpus(dir, 1)?;
        for key in extra_store.keys() {
            let seq = extra_store.get(key).map_err(runtime)?;
            store.insert(key, seq.clone()).map_err(validation)?;
        }
        Ok(corpus)
    };
    if config.target_dir.is_dir() {
        let corpus = absorb(&config.target_dir, &mut store)?;
        let (train, _, _) = split(config, &corpus)?;
        target = Some(train);
        manifest.input("target", &config.target_dir)?;
    }
    if config.unlabeled_dir.is_dir() {
        unlabeled = Some(absorb(&config.unlabeled_dir, &mut store)?);
        manifest.input("unlabeled", &config.unlabeled_dir)?;
    }

    let mut corpora: Vec<&Corpus> = vec![&source_train];
    corpora.extend(target.as_ref());
    corpora.extend(unlabeled.as_ref());

    let feature_dim = feature_dim_of(&source_train, &store)?;
    let mut encoder = mospred_core::model::Encoder::new(
        feature_dim,
        config.hidden,
        &mut substream(config.seed, tag::INIT, 0),
    );
    let losses = run_dapt(&mut encoder, &corpora, &store, &config.dapt).map_err(runtime)?;
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        log::info!("reconstruction loss over {} epochs: {first:.6} -> {last:.6}", losses.len());
    }

    checkpoint::save_encoder(&config.out_dir.join(ENCODER_FILE), &encoder)?;
    manifest.write(&config.out_dir)
}

fn feature_dim_of(corpus: &Corpus, store: &FeatureStore) -> CliResult<usize> {
    let first = corpus
        .utterances()
        .first()
        .ok_or_else(|| validation("corpus has no utterances"))?;
    Ok(store.get(&first.feature_ref).map_err(validation)?.dim())
}

/// Stage 2: supervised training on the (augmented) train split, saving
/// the best-on-dev model and the validation log.
pub fn cmd_train(config: &PipelineConfig) -> CliResult<()> {
    ensure_out_dir(config)?;

    let (corpus, mut store) = load_rated(&config.corpus_dir, 1)?;
    let mut manifest = ManifestBuilder::new("train", config);
    manifest.input("corpus", &config.corpus_dir)?;

    let (train_split, dev_split, _) = split(config, &corpus)?;
    let train_split = if config.ablations.no_aug {
        train_split
    } else {
        augment_corpus(&train_split, &mut store, &config.aug_specs).map_err(validation)?
    };

    let mut model_config =
        ModelConfig::new(feature_dim_of(&corpus, &store)?, corpus.judge_count());
    model_config.hidden = config.hidden;
    model_config.use_regression_head = !config.ablations.no_reg_head;
    model_config.use_distribution_head = !config.ablations.no_dist_head;
    if config.ablations.linear_heads {
        model_config.head_mode = HeadMode::Linear;
    }
    let mut model = MosPredictor::new(model_config, config.seed).map_err(validation)?;

    let encoder_path = config.out_dir.join(ENCODER_FILE);
    if config.ablations.no_dapt {
        log::info!("skipping the pre-trained encoder (no_dapt)");
    } else if encoder_path.is_file() {
        let encoder = checkpoint::load_encoder(&encoder_path)?;
        model.adopt_encoder(&encoder).map_err(validation)?;
        manifest.input("encoder", &encoder_path)?;
        log::info!("warm-started the encoder from {}", encoder_path.display());
    } else {
        log::warn!(
            "no encoder checkpoint at {}; training the encoder from scratch",
            encoder_path.display()
        );
    }

    let schedule_total = config.train.total_steps.max(config.train.warmup_steps + 1);
    let train_config = TrainConfig {
        total_steps: config.train.total_steps,
        batch_size: config.train.batch_size,
        schedule: LrSchedule::new(config.train.peak_lr, config.train.warmup_steps, schedule_total)
            .map_err(validation)?,
        validation_every: config.train.validation_every,
        loss_weight: config.train.loss_weight,
        seed: config.seed,
    };
    let (model, log) =
        train_stage2(model, &train_split, &dev_split, &store, &train_config).map_err(runtime)?;
    if let Some(best) = log.iter().map(|r| r.dev_loss).min_by(|a, b| a.total_cmp(b)) {
        log::info!("best dev loss {best:.6} over {} validation points", log.len());
    }

    checkpoint::save_model(&config.out_dir.join(MODEL_FILE), &model, None)?;
    write_train_log(&config.out_dir.join(TRAIN_LOG_FILE), &log)?;
    manifest.write(&config.out_dir)
}

fn require_model(config: &PipelineConfig) -> CliResult<PathBuf> {
    let path = config.out_dir.join(MODEL_FILE);
    if !path.is_file() {
        return Err(validation(format!(
            "no model checkpoint at {}; run train first",
            path.display()
        )));
    }
    Ok(path)
}

fn refit_refinement(
    model: &MosPredictor,
    corpus: &Corpus,
    store: &FeatureStore,
) -> CliResult<RefinementLayer> {
    let mut preds = Vec::with_capacity(corpus.len());
    let mut targets = Vec::with_capacity(corpus.len());
    for utt in corpus.utterances() {
        let features = store.get(&utt.feature_ref).map_err(validation)?;
        preds.push(model.predict_mos(features).map_err(runtime)?);
        targets.push(utt.mos.ok_or_else(|| {
            validation(format!("utterance '{}' has no MOS to fit against", utt.utterance_id))
        })?);
    }
    let layer = fit_refinement(&preds, &targets).map_err(runtime)?;
    if !layer.preserves_order() {
        log::warn!("refinement slope a = {} is not positive; rank order may flip", layer.a);
    }
    Ok(layer)
}

/// Stage 3: closed-form first-order refinement fit on the unaugmented
/// train split's predictions, appended to the model checkpoint.
pub fn cmd_refine(config: &PipelineConfig) -> CliResult<()> {
    ensure_out_dir(config)?;
    let model_path = require_model(config)?;

    let mut manifest = ManifestBuilder::new("refine", config);
    manifest.input("model", &model_path)?;
    manifest.input("corpus", &config.corpus_dir)?;

    let (model, _) = checkpoint::load_model(&model_path)?;
    let (corpus, store) = load_rated(&config.corpus_dir, 1)?;
    let (train_split, _, _) = split(config, &corpus)?;

    let layer = refit_refinement(&model, &train_split, &store)?;
    log::info!("fitted refinement s = {} * s_hat + {}", layer.a, layer.b);
    checkpoint::save_model(&model_path, &model, Some(&layer))?;
    manifest.write(&config.out_dir)
}

fn predict_corpus(
    model: &MosPredictor,
    refinement: Option<&RefinementLayer>,
    corpus: &Corpus,
    store: &FeatureStore,
) -> CliResult<(MetricsReport, Vec<PredictionRow>)> {
    evaluate(corpus, |utt: &UtteranceRecord| {
        let features = store.get(&utt.feature_ref)?;
        let s_hat = model.predict_mos(features)?;
        Ok(match refinement {
            Some(layer) => layer.apply(s_hat),
            None => s_hat,
        })
    })
    .map_err(runtime)
}

fn assemble_report(
    metrics: &MetricsReport,
    refinement: Option<&RefinementLayer>,
    extras: &[(&str, String)],
) -> Report {
    let mut report = Report::from_metrics(metrics);
    if let Some(layer) = refinement {
        report.set_f64("refine.a", layer.a);
        report.set_f64("refine.b", layer.b);
    }
    for (key, value) in extras {
        report.set(key, value.clone());
    }
    report
}

/// Scores the held-out test split, applying the stored refinement unless
/// ablated away, and writes the report plus the prediction dump.
pub fn cmd_evaluate(config: &PipelineConfig) -> CliResult<()> {
    ensure_out_dir(config)?;
    let model_path = require_model(config)?;

    let mut manifest = ManifestBuilder::new("evaluate", config);
    manifest.input("model", &model_path)?;
    manifest.input("corpus", &config.corpus_dir)?;

    let (model, stored_refinement) = checkpoint::load_model(&model_path)?;
    let refinement = if config.ablations.no_refine { None } else { stored_refinement };
    let (corpus, store) = load_rated(&config.corpus_dir, 1)?;
    let (_, _, test_split) = split(config, &corpus)?;

    let (metrics, rows) = predict_corpus(&model, refinement.as_ref(), &test_split, &store)?;
    let report = assemble_report(&metrics, refinement.as_ref(), &[]);
    write_report(&config.out_dir.join(REPORT_FILE), &report)?;
    write_predictions(&config.out_dir.join(PREDICTIONS_FILE), &rows)?;
    log::info!(
        "evaluated {} utterances / {} systems: system SRCC {}",
        metrics.n_utt,
        metrics.n_sys,
        metrics.sys.srcc
    );
    manifest.write(&config.out_dir)
}

/// Deterministic without-replacement sample of `n` utterances.
fn sample_utterances(corpus: &Corpus, n: usize, seed: u64) -> CliResult<Corpus> {
    if corpus.len() < n {
        return Err(validation(format!(
            "few-shot transfer needs at least {n} target training utterances, found {}",
            corpus.len()
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut substream(seed, tag::TRANSFER, 0));
    let picked: Vec<UtteranceRecord> =
        order[..n].iter().map(|&i| corpus.utterances()[i].clone()).collect();
    Corpus::new(SplitTag::Train, corpus.judge_count(), picked).map_err(runtime)
}

/// Cross-domain evaluation of a source-trained model on the shifted
/// corpus: zero-shot (no refinement), few-shot (fine-tune + refit on a
/// small sample), or full (fine-tune + refit on the whole train split).
pub fn cmd_transfer(config: &PipelineConfig, mode: TransferMode) -> CliResult<()> {
    ensure_out_dir(config)?;
    let model_path = require_model(config)?;
    if !config.target_dir.is_dir() {
        return Err(validation(format!(
            "no target corpus at {}; simulate with sim.shifted_profile set",
            config.target_dir.display()
        )));
    }

    let command = format!("transfer_{}", mode.as_str());
    let mut manifest = ManifestBuilder::new(&command, config);
    manifest.input("model", &model_path)?;
    manifest.input("target", &config.target_dir)?;

    let (model, _) = checkpoint::load_model(&model_path)?;
    let (target, store) = load_rated(&config.target_dir, model.config().judge_count)?;
    if target.judge_count() > model.config().judge_count {
        return Err(validation(format!(
            "target corpus has {} judges but the model was trained with {}",
            target.judge_count(),
            model.config().judge_count
        )));
    }
    let (train_split, _, test_split) = split(config, &target)?;

    let fine_tune_config = FineTuneConfig {
        epochs: config.transfer.epochs,
        batch_size: config.transfer.batch_size,
        lr: config.transfer.lr,
        loss_weight: config.train.loss_weight,
        seed: config.seed,
    };

    let mode_extra = ("transfer.mode", mode.as_str().to_string());
    let (metrics, rows, report) = match mode {
        TransferMode::ZeroShot => {
            let (metrics, rows) = predict_corpus(&model, None, &test_split, &store)?;
            let report = assemble_report(&metrics, None, &[mode_extra]);
            (metrics, rows, report)
        }
        TransferMode::FewShot => {
            let few =
                sample_utterances(&train_split, config.transfer.few_shot_n, config.seed)?;
            let tuned = fine_tune(model, &few, &store, &fine_tune_config).map_err(runtime)?;
            let layer = refit_refinement(&tuned, &few, &store)?;
            let (metrics, rows) = predict_corpus(&tuned, Some(&layer), &test_split, &store)?;
            let warning = (
                "warning.small_refit",
                format!("refinement refit on only {} utterances", few.len()),
            );
            let report = assemble_report(&metrics, Some(&layer), &[mode_extra, warning]);
            checkpoint::save_model(
                &config.out_dir.join(format!("{command}.model.ddck")),
                &tuned,
                Some(&layer),
            )?;
            (metrics, rows, report)
        }
        TransferMode::Full => {
            let tuned =
                fine_tune(model, &train_split, &store, &fine_tune_config).map_err(runtime)?;
            let layer = refit_refinement(&tuned, &train_split, &store)?;
            let (metrics, rows) = predict_corpus(&tuned, Some(&layer), &test_split, &store)?;
            let report = assemble_report(&metrics, Some(&layer), &[mode_extra]);
            checkpoint::save_model(
                &config.out_dir.join(format!("{command}.model.ddck")),
                &tuned,
                Some(&layer),
            )?;
            (metrics, rows, report)
        }
    };

    write_report(&config.out_dir.join(format!("{command}.report.txt")), &report)?;
    write_predictions(&config.out_dir.join(format!("{command}.predictions.csv")), &rows)?;
    log::info!(
        "{} transfer: {} test utterances, system SRCC {}",
        mode.as_str(),
        metrics.n_utt,
        metrics.sys.srcc
    );
    manifest.write(&config.out_dir)
}

/// Convenience composite: train, refine (unless ablated), evaluate —
/// with whatever ablation flags are set shaping each stage.
pub fn cmd_ablate(config: &PipelineConfig) -> CliResult<()> {
    cmd_train(config)?;
    if config.ablations.no_refine {
        log::info!("skipping refinement (no_refine)");
    } else {
        cmd_refine(config)?;
    }
    cmd_evaluate(config)
}
