//! Stage 1: label-free encoder pre-training by masked-frame
//! reconstruction on all available in-domain features (rated corpora and
//! unlabeled ones alike — ratings are never consulted).

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::adam::Adam;
use crate::corpus::{Corpus, FeatureSequence, FeatureStore};
use crate::model::Encoder;
use crate::nn::Linear;
use crate::rng::{substream, tag};
use crate::tensor::{Parameter, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DaptConfig {
    /// Independent per-frame masking probability.
    pub mask_ratio: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DaptConfig {
    fn default() -> Self {
        DaptConfig { mask_ratio: 0.15, epochs: 40, batch_size: 8, lr: 1e-3, seed: 0 }
    }
}

impl DaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::invalid(format!(
                "mask_ratio {} outside [0, 1]",
                self.mask_ratio
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Independently masks each frame with probability `mask_ratio`,
/// substituting the learned `mask_vector`; returns the masked sequence
/// and the sorted masked-frame indices.
pub fn mask_frames(
    features: &FeatureSequence,
    mask_vector: &Tensor,
    mask_ratio: f64,
    rng: &mut impl Rng,
) -> Result<(FeatureSequence, Vec<usize>)> {
    if !(0.0..=1.0).contains(&mask_ratio) {
        return Err(Error::invalid(format!("mask_ratio {mask_ratio} outside [0, 1]")));
    }
    let dim = features.dim();
    if mask_vector.shape() != [dim] {
        return Err(Error::shape(format!(
            "mask vector has shape {:?}, features have dim {dim}",
            mask_vector.shape()
        )));
    }
    let mut data = features.frames().data().to_vec();
    let mut masked = Vec::new();
    for t in 0..features.t_len() {
        if rng.gen_bool(mask_ratio) {
            data[t * dim..(t + 1) * dim].copy_from_slice(mask_vector.data());
            masked.push(t);
        }
    }
    let seq = FeatureSequence::from_tensor(Tensor::from_vec(&[features.t_len(), dim], data)?)?;
    Ok((seq, masked))
}

/// Mean squared reconstruction error on the masked frames only. An empty
/// mask set contributes nothing to learn from, so the loss is 0 (with a
/// warning, since a caller looping on this probably mis-set the ratio).
pub fn dapt_step_loss(
    encoder: &Encoder,
    reconstruction_head: &Linear,
    original: &FeatureSequence,
    masked: &FeatureSequence,
    mask_set: &[usize],
) -> Result<f64> {
    if mask_set.is_empty() {
        log::warn!("dapt loss over an empty mask set is vacuously 0");
        return Ok(0.0);
    }
    let (h, _) = encoder.forward(masked.frames())?;
    let rec = reconstruction_head.forward(&h)?;
    Ok(masked_mse(&rec, original, mask_set))
}

fn masked_mse(rec: &Tensor, original: &FeatureSequence, mask_set: &[usize]) -> f64 {
    let dim = original.dim();
    let mut acc = 0.0f64;
    for &t in mask_set {
        for i in 0..dim {
            let d = rec.data()[t * dim + i] as f64 - original.frames().data()[t * dim + i] as f64;
            acc += d * d;
        }
    }
    acc / (mask_set.len() * dim) as f64
}

/// Pre-trains `encoder` in place by masked-frame reconstruction over the
/// union of all corpora's features. The reconstruction head and mask
/// vector live only inside this call. Returns per-epoch mean losses.
pub fn run_dapt(
    encoder: &mut Encoder,
    corpora: &[&Corpus],
    store: &FeatureStore,
    config: &DaptConfig,
) -> Result<Vec<f64>> {
    config.validate()?;

    // Union of feature refs; ratings are never touched.
    let mut refs: Vec<&str> = Vec::new();
    for corpus in corpora {
        for utt in corpus.utterances() {
            refs.push(&utt.feature_ref);
        }
    }
    if refs.is_empty() {
        return Err(Error::invalid("no features to pre-train on"));
    }
    let dim = encoder.feature_dim();
    for r in &refs {
        let seq = store.get(r)?;
        if seq.dim() != dim {
            return Err(Error::shape(format!(
                "feature '{r}' has dim {}, encoder expects {dim}",
                seq.dim()
            )));
        }
    }
    if config.epochs == 0 {
        return Ok(Vec::new());
    }

    let mut rng = substream(config.seed, tag::MASK, 0);
    let mut head = Linear::new("dapt.recon", encoder.hidden(), dim, &mut rng);
    let mut mask_vector = Parameter::new("dapt.mask", Tensor::zeros(&[dim]));
    let mut opt = Adam::new();
    let mut epoch_losses = Vec::with_capacity(config.epochs as usize);

    for epoch in 0..config.epochs {
        refs.shuffle(&mut rng);
        let mut step_losses = Vec::new();
        for chunk in refs.chunks(config.batch_size) {
            let mut batch_loss = 0.0f64;
            let scale = 1.0 / chunk.len() as f64;
            encoder.visit_params_mut(&mut |p| p.zero_grad());
            head.weight.zero_grad();
            head.bias.zero_grad();
            mask_vector.zero_grad();

            for r in chunk {
                let original = store.get(r)?;
                let (masked, mask_set) =
                    mask_frames(original, &mask_vector.value, config.mask_ratio, &mut rng)?;
                if mask_set.is_empty() {
                    continue;
                }
                let (h, trace) = encoder.forward(masked.frames())?;
                let rec = head.forward(&h)?;
                batch_loss += scale * masked_mse(&rec, original, &mask_set);

                // dL/drec is nonzero only on masked rows.
                let norm = scale * 2.0 / (mask_set.len() * dim) as f64;
                let mut drec = Tensor::zeros(rec.shape());
                for &t in &mask_set {
                    for i in 0..dim {
                        let d = rec.data()[t * dim + i] as f64
                            - original.frames().data()[t * dim + i] as f64;
                        drec.data_mut()[t * dim + i] = (norm * d) as f32;
                    }
                }
                let dh = head.backward(&h, &drec)?;
                let dx = encoder.backward(masked.frames(), &trace, &dh)?;
                // Masked input rows were the mask vector; their input
                // gradients are its gradient.
                for &t in &mask_set {
                    for i in 0..dim {
                        mask_vector.grad.data_mut()[i] += dx.data()[t * dim + i];
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::non_finite(format!("dapt loss in epoch {epoch}")));
            }
            let mut params = encoder.params_mut();
            params.push(&mut head.weight);
            params.push(&mut head.bias);
            params.push(&mut mask_vector);
            opt.step(config.lr, params)
                .map_err(|e| match e {
                    Error::NonFinite(msg) => Error::non_finite(format!("{msg} in epoch {epoch}")),
                    other => other,
                })?;
            step_losses.push(batch_loss);
        }
        let mean = step_losses.iter().sum::<f64>() / step_losses.len().max(1) as f64;
        epoch_losses.push(mean);
    }
    Ok(epoch_losses)
}
