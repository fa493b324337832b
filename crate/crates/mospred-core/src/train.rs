//! Supervised training: the stepped stage-2 loop with dev-loss checkpoint
//! selection, plus the constant-rate fine-tuning used for small transfers.

use alloc::format;
use alloc::vec::Vec;

use crate::adam::{Adam, LrSchedule};
use crate::corpus::{Corpus, FeatureStore};
use crate::model::{build_batch, BatchItem, MosPredictor};
use crate::rng::{substream, tag};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    /// Dev loss is measured at every multiple of this step count.
    pub validation_every: u64,
    /// Weight on the regression loss; the distribution loss gets 1 - this.
    pub loss_weight: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.validation_every == 0 {
            return Err(Error::invalid("validation_every must be positive"));
        }
        if !(0.0..=1.0).contains(&self.loss_weight) {
            return Err(Error::invalid(format!(
                "loss_weight {} outside [0, 1]",
                self.loss_weight
            )));
        }
        if self.total_steps > self.schedule.total_steps {
            return Err(Error::invalid(format!(
                "schedule covers {} steps but training asks for {}",
                self.schedule.total_steps, self.total_steps
            )));
        }
        Ok(())
    }
}

/// One validation event; serialized as `step,lr,train_loss,dev_loss`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRecord {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
}

/// The judge-0 view of every rated utterance: MOS target plus empirical
/// distribution target. This is both the dev-loss batch and the
/// evaluation-time view.
pub fn judge_zero_items(corpus: &Corpus, store: &FeatureStore) -> Result<Vec<BatchItem>> {
    let mut items = Vec::with_capacity(corpus.len());
    for utt in corpus.utterances() {
        let mos = utt.mos.ok_or_else(|| {
            Error::invalid(format!("utterance '{}' has no ratings", utt.utterance_id))
        })?;
        items.push(BatchItem {
            features: store.get(&utt.feature_ref)?.clone(),
            judge_id: 0,
            target_score: mos,
            target_dist: utt.distribution()?,
        });
    }
    Ok(items)
}

/// Mean judge-0 loss over a whole corpus (forward only).
pub fn dev_loss(model: &MosPredictor, dev: &Corpus, store: &FeatureStore, lambda: f64) -> Result<f64> {
    let items = judge_zero_items(dev, store)?;
    Ok(model.batch_loss(&items, lambda)?.total)
}

/// Tags numeric blow-ups with the training step they occurred at.
fn at_step(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite(msg) => Error::non_finite(format!("{msg} at step {step}")),
        other => other,
    }
}

/// Trains with Adam under the config's warmup/decay schedule and returns
/// the parameters at the *lowest measured* dev loss (the earliest, on
/// ties), together with the validation log. With zero steps, or when no
/// validation point is ever reached, the in-hand parameters are returned.
pub fn train_stage2(
    model: MosPredictor,
    train: &Corpus,
    dev: &Corpus,
    store: &FeatureStore,
    config: &TrainConfig,
) -> Result<(MosPredictor, Vec<TrainLogRecord>)> {
    config.validate()?;
    let mut model = model;
    let mut log = Vec::new();
    if config.total_steps == 0 {
        return Ok((model, log));
    }

    let dev_items = judge_zero_items(dev, store)?;
    let mut rng = substream(config.seed, tag::BATCH, 0);
    let mut opt = Adam::new();
    let mut best: Option<(f64, MosPredictor)> = None;

    for step in 1..=config.total_steps {
        let lr = config.schedule.lr_at(step)?;
        let batch = build_batch(train, store, config.batch_size, &mut rng)?;
        model.zero_grads();
        let losses = model
            .batch_loss_and_grad(&batch, config.loss_weight)
            .map_err(|e| at_step(e, step))?;
        if !losses.total.is_finite() {
            return Err(Error::non_finite(format!("training loss at step {step}")));
        }
        opt.step(lr, model.params_mut()).map_err(|e| at_step(e, step))?;

        if step % config.validation_every == 0 {
            let dev = model
                .batch_loss(&dev_items, config.loss_weight)
                .map_err(|e| at_step(e, step))?
                .total;
            if !dev.is_finite() {
                return Err(Error::non_finite(format!("dev loss at step {step}")));
            }
            log.push(TrainLogRecord { step, lr, train_loss: losses.total, dev_loss: dev });
            if best.as_ref().map_or(true, |(b, _)| dev < *b) {
                best = Some((dev, model.clone()));
            }
        }
    }

    let chosen = best.map(|(_, m)| m).unwrap_or(model);
    Ok((chosen, log))
}

/// Constant-rate fine-tuning for transfer: `epochs` passes, each of
/// ceil(n / batch_size) sampled batches. No dev selection; the final
/// parameters are returned (small target sets have nothing to spare for
/// a dev split).
#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub loss_weight: f64,
    pub seed: u64,
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("fine-tune lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.loss_weight) {
            return Err(Error::invalid(format!(
                "loss_weight {} outside [0, 1]",
                self.loss_weight
            )));
        }
        Ok(())
    }
}

pub fn fine_tune(
    model: MosPredictor,
    corpus: &Corpus,
    store: &FeatureStore,
    config: &FineTuneConfig,
) -> Result<MosPredictor> {
    config.validate()?;
    let mut model = model;
    if config.epochs == 0 || corpus.is_empty() {
        return Ok(model);
    }
    let steps_per_epoch = corpus.len().div_ceil(config.batch_size) as u64;
    let mut rng = substream(config.seed, tag::BATCH, 1);
    let mut opt = Adam::new();
    let mut global_step = 0u64;
    for epoch in 0..config.epochs {
        for _ in 0..steps_per_epoch {
            global_step += 1;
            let batch = build_batch(corpus, store, config.batch_size, &mut rng)?;
            model.zero_grads();
            let losses = model
                .batch_loss_and_grad(&batch, config.loss_weight)
                .map_err(|e| at_step(e, global_step))?;
            if !losses.total.is_finite() {
                return Err(Error::non_finite(format!(
                    "fine-tune loss at epoch {epoch}, step {global_step}"
                )));
            }
            opt.step(config.lr, model.params_mut())
                .map_err(|e| at_step(e, global_step))?;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::simulate::{simulate_corpus, SimulatorConfig};
    use crate::tensor::Tensor;
    use alloc::string::String;
    use alloc::vec;

    fn sim_config(n_systems: usize, utts: usize, seed: u64) -> SimulatorConfig {
        SimulatorConfig {
            n_systems,
            utts_per_system: utts,
            n_judges: 6,
            ratings_per_utterance: 4,
            feature_dim: 8,
            frame_range: (8, 16),
            judge_bias_sd: 0.3,
            judge_noise_range: (0.3, 0.8),
            utterance_jitter_sd: 0.3,
            domain_profile_id: 0,
            seed,
        }
    }

    fn small_setup(seed: u64) -> (Corpus, Corpus, FeatureStore) {
        let (corpus, store, _) = simulate_corpus(&sim_config(6, 5, seed)).unwrap();
        let parts = crate::corpus::split_corpus(&corpus, [0.7, 0.3, 0.0], seed).unwrap();
        let (train, dev, _) = parts;
        (train, dev, store)
    }

    fn params_of(model: &MosPredictor) -> Vec<(String, Tensor)> {
        let mut v = Vec::new();
        model.visit_params(&mut |p| v.push((p.name.clone(), p.value.clone())));
        v
    }

    fn config(total_steps: u64, validation_every: u64, seed: u64) -> TrainConfig {
        let total = total_steps.max(2);
        TrainConfig {
            total_steps,
            batch_size: 8,
            schedule: LrSchedule::new(3e-3, (total / 4).max(1), total).unwrap(),
            validation_every,
            loss_weight: 0.5,
            seed,
        }
    }

    #[test]
    fn zero_steps_returns_the_initial_model() {
        let (train, dev, store) = small_setup(1);
        let model = MosPredictor::new(ModelConfig::new(8, 6), 1).unwrap();
        let before = params_of(&model);
        let (out, log) = train_stage2(model, &train, &dev, &store, &config(0, 10, 1)).unwrap();
        assert!(log.is_empty());
        assert_eq!(params_of(&out), before);
    }

    #[test]
    fn log_is_the_record_checkpoint_selection_minimized() {
        let (train, dev, store) = small_setup(2);
        let model = MosPredictor::new(ModelConfig::new(8, 6), 2).unwrap();
        let cfg = config(60, 20, 2);
        let (best, log) = train_stage2(model, &train, &dev, &store, &cfg).unwrap();

        assert_eq!(log.len(), 3);
        for (i, rec) in log.iter().enumerate() {
            assert_eq!(rec.step, (i as u64 + 1) * 20);
            assert_eq!(rec.lr, cfg.schedule.lr_at(rec.step).unwrap());
            assert!(rec.train_loss.is_finite() && rec.dev_loss.is_finite());
        }
        // Replay: the returned model's dev loss is the log's minimum.
        let min_logged = log.iter().map(|r| r.dev_loss).fold(f64::INFINITY, f64::min);
        let replayed = dev_loss(&best, &dev, &store, cfg.loss_weight).unwrap();
        assert_eq!(replayed, min_logged);
    }

    #[test]
    fn training_reduces_dev_loss_on_a_simulated_corpus() {
        for seed in [11u64, 12, 13] {
            // 20 systems x 10 utterances = 200, per the progress check.
            let (corpus, store, _) = simulate_corpus(&sim_config(20, 10, seed)).unwrap();
            let parts = crate::corpus::split_corpus(&corpus, [0.8, 0.2, 0.0], seed).unwrap();
            let (train, dev, _) = parts;
            let model = MosPredictor::new(ModelConfig::new(8, 6), seed).unwrap();
            let initial = dev_loss(&model, &dev, &store, 0.5).unwrap();
            let cfg = config(200, 50, seed);
            let (_, log) = train_stage2(model, &train, &dev, &store, &cfg).unwrap();
            let final_dev = log.last().unwrap().dev_loss;
            assert!(
                final_dev < initial,
                "seed {seed}: dev loss went {initial} -> {final_dev}"
            );
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (train, dev, store) = small_setup(3);
        let run = || {
            let model = MosPredictor::new(ModelConfig::new(8, 6), 3).unwrap();
            train_stage2(model, &train, &dev, &store, &config(30, 10, 3)).unwrap()
        };
        let (m1, log1) = run();
        let (m2, log2) = run();
        assert_eq!(log1, log2);
        assert_eq!(params_of(&m1), params_of(&m2));
    }

    #[test]
    fn dapt_warm_start_reaches_lower_dev_loss_early() {
        // Warm-starting from masked-frame pre-training should put the
        // first validation point below a random init's, judged by the
        // median over three seeds on a shifted-domain corpus.
        let mut diffs = Vec::new();
        for seed in [31u64, 32, 33] {
            let mut sim = sim_config(10, 8, seed);
            sim.domain_profile_id = 2;
            let (corpus, store, _) = simulate_corpus(&sim).unwrap();
            let (train, dev, _) =
                crate::corpus::split_corpus(&corpus, [0.7, 0.3, 0.0], seed).unwrap();

            let dev_at_first_checkpoint = |warm: bool| {
                let mut model = MosPredictor::new(ModelConfig::new(8, 6), seed).unwrap();
                if warm {
                    let mut encoder = crate::model::Encoder::new(
                        8,
                        32,
                        &mut substream(seed, tag::INIT, 7),
                    );
                    let dapt_cfg = crate::dapt::DaptConfig {
                        epochs: 6,
                        seed,
                        ..Default::default()
                    };
                    crate::dapt::run_dapt(&mut encoder, &[&train], &store, &dapt_cfg).unwrap();
                    model.adopt_encoder(&encoder).unwrap();
                }
                let (_, log) =
                    train_stage2(model, &train, &dev, &store, &config(50, 50, seed)).unwrap();
                log.first().unwrap().dev_loss
            };

            diffs.push(dev_at_first_checkpoint(false) - dev_at_first_checkpoint(true));
        }
        diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(
            diffs[1] > 0.0,
            "random-init minus warm-start dev losses: {diffs:?}"
        );
    }

    #[test]
    fn non_finite_loss_aborts_with_the_step_index() {
        let (train, dev, store) = small_setup(4);
        let mut model = MosPredictor::new(ModelConfig::new(8, 6), 4).unwrap();
        // Poison a kernel so the very first forward pass overflows f32.
        let huge = Tensor::from_vec(
            &[3, 8, 32],
            vec![f32::MAX / 2.0; 3 * 8 * 32],
        )
        .unwrap();
        model.set_param("encoder.conv1.weight", &huge).unwrap();
        let err = train_stage2(model, &train, &dev, &store, &config(10, 5, 4)).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("step 1"), "unexpected error: {msg}");
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let schedule = LrSchedule::new(1e-3, 5, 50).unwrap();
        let base = TrainConfig {
            total_steps: 50,
            batch_size: 4,
            schedule,
            validation_every: 10,
            loss_weight: 0.5,
            seed: 0,
        };
        assert!(base.validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { validation_every: 0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { loss_weight: 1.5, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { total_steps: 51, ..base }.validate().is_err());
    }

    #[test]
    fn dev_loss_matches_manual_judge_zero_batch() {
        let (_, dev, store) = small_setup(5);
        let model = MosPredictor::new(ModelConfig::new(8, 6), 5).unwrap();
        let items = judge_zero_items(&dev, &store).unwrap();
        assert_eq!(items.len(), dev.len());
        assert!(items.iter().all(|i| i.judge_id == 0));
        let manual = model.batch_loss(&items, 0.5).unwrap().total;
        assert_eq!(dev_loss(&model, &dev, &store, 0.5).unwrap(), manual);
    }

    #[test]
    fn fine_tune_zero_epochs_is_identity_and_training_helps() {
        let (train, _, store) = small_setup(6);
        let model = MosPredictor::new(ModelConfig::new(8, 6), 6).unwrap();
        let before = params_of(&model);

        let idle = FineTuneConfig { epochs: 0, batch_size: 4, lr: 1e-3, loss_weight: 0.5, seed: 6 };
        let out = fine_tune(model.clone(), &train, &store, &idle).unwrap();
        assert_eq!(params_of(&out), before);

        let initial = dev_loss(&model, &train, &store, 0.5).unwrap();
        let cfg = FineTuneConfig { epochs: 20, batch_size: 4, lr: 2e-3, loss_weight: 0.5, seed: 6 };
        let tuned = fine_tune(model, &train, &store, &cfg).unwrap();
        let after = dev_loss(&tuned, &train, &store, 0.5).unwrap();
        assert!(after < initial, "fine-tune went {initial} -> {after}");
    }
}
