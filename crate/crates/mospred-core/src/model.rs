//! The dual-head MOS predictor: conv encoder, judge-embedding addition,
//! regression + score-distribution heads, and their losses.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::corpus::{self, Corpus, Dist5, FeatureSequence, FeatureStore};
use crate::math;
use crate::nn::{
    relu, relu_backward, softmax_backward_slice, softmax_slice, AttentivePool, Conv1d, Embedding,
    Linear, PoolTrace,
};
use crate::rng::{substream, tag};
use crate::tensor::{Parameter, Tensor};
use crate::{Error, Result};

/// Head body: a 3-layer MLP per the reference design, or a single linear
/// map for the "linear heads" ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    Mlp,
    Linear,
}

/// Architecture switches. `hidden` is the width used everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    /// Judge pool size N; the embedding table has N+1 rows (row 0 = MOS).
    pub judge_count: u32,
    pub head_mode: HeadMode,
    pub use_regression_head: bool,
    pub use_distribution_head: bool,
}

impl ModelConfig {
    pub fn new(feature_dim: usize, judge_count: u32) -> Self {
        ModelConfig {
            feature_dim,
            hidden: 32,
            judge_count,
            head_mode: HeadMode::Mlp,
            use_regression_head: true,
            use_distribution_head: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 {
            return Err(Error::invalid("feature_dim and hidden must be positive"));
        }
        if !self.use_regression_head && !self.use_distribution_head {
            return Err(Error::invalid("at least one prediction head must be enabled"));
        }
        Ok(())
    }
}

/// Two same-padded conv1d layers with ReLU: D -> hidden -> hidden.
#[derive(Debug, Clone)]
pub struct Encoder {
    conv1: Conv1d,
    conv2: Conv1d,
}

/// Intermediates needed to backpropagate through the encoder.
pub struct EncoderTrace {
    a1: Tensor,
    r1: Tensor,
    a2: Tensor,
}

impl Encoder {
    pub fn new(feature_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Encoder {
            conv1: Conv1d::new("encoder.conv1", feature_dim, hidden, 3, rng),
            conv2: Conv1d::new("encoder.conv2", hidden, hidden, 3, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.conv1.in_dim()
    }

    pub fn hidden(&self) -> usize {
        self.conv2.out_dim()
    }

    /// `x` is `[T, D]`; returns `[T, hidden]` and the backward trace.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, EncoderTrace)> {
        let a1 = self.conv1.forward(x)?;
        let r1 = relu(&a1);
        let a2 = self.conv2.forward(&r1)?;
        let h = relu(&a2);
        Ok((h, EncoderTrace { a1, r1, a2 }))
    }

    /// Accumulates conv grads and returns dx.
    pub fn backward(&mut self, x: &Tensor, trace: &EncoderTrace, dh: &Tensor) -> Result<Tensor> {
        let da2 = relu_backward(&trace.a2, dh)?;
        let dr1 = self.conv2.backward(&trace.r1, &da2)?;
        let da1 = relu_backward(&trace.a1, &dr1)?;
        self.conv1.backward(x, &da1)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.conv1.kernel);
        f(&self.conv1.bias);
        f(&self.conv2.kernel);
        f(&self.conv2.bias);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for p in self.params_mut() {
            f(p);
        }
    }

    /// Mutable borrows of every parameter, in visit order (optimizer food).
    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        alloc::vec![
            &mut self.conv1.kernel,
            &mut self.conv1.bias,
            &mut self.conv2.kernel,
            &mut self.conv2.bias,
        ]
    }
}

/// Attentive pooling followed by the head body.
#[derive(Debug, Clone)]
struct Head {
    pool: AttentivePool,
    /// MLP mode: hidden->hidden, hidden->hidden, hidden->out.
    /// Linear mode: a single hidden->out map.
    layers: Vec<Linear>,
}

struct HeadTrace {
    pool: PoolTrace,
    z: Tensor,
    /// Pre-activation output of every layer but the last.
    pre: Vec<Tensor>,
    /// ReLU outputs feeding the next layer.
    act: Vec<Tensor>,
}

impl Head {
    fn new(prefix: &str, hidden: usize, out: usize, mode: HeadMode, rng: &mut ChaCha8Rng) -> Self {
        let pool = AttentivePool::new(&format!("{prefix}.pool"), hidden, rng);
        let layers = match mode {
            HeadMode::Mlp => alloc::vec![
                Linear::new(&format!("{prefix}.mlp1"), hidden, hidden, rng),
                Linear::new(&format!("{prefix}.mlp2"), hidden, hidden, rng),
                Linear::new(&format!("{prefix}.out"), hidden, out, rng),
            ],
            HeadMode::Linear => alloc::vec![Linear::new(&format!("{prefix}.out"), hidden, out, rng)],
        };
        Head { pool, layers }
    }

    fn forward(&self, h: &Tensor) -> Result<(Tensor, HeadTrace)> {
        let (z, pool_trace) = self.pool.forward(h)?;
        let mut pre = Vec::new();
        let mut act = Vec::new();
        let mut current = z.clone();
        for layer in &self.layers[..self.layers.len() - 1] {
            let a = layer.forward(&current)?;
            current = relu(&a);
            pre.push(a);
            act.push(current.clone());
        }
        let out = self.layers[self.layers.len() - 1].forward(&current)?;
        Ok((out, HeadTrace { pool: pool_trace, z, pre, act }))
    }

    fn backward(&mut self, h: &Tensor, trace: &HeadTrace, dout: &Tensor) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        let last_input = if last == 0 { &trace.z } else { &trace.act[last - 1] };
        let mut grad = self.layers[last].backward(last_input, dout)?;
        for i in (0..last).rev() {
            let da = relu_backward(&trace.pre[i], &grad)?;
            let input = if i == 0 { &trace.z } else { &trace.act[i - 1] };
            grad = self.layers[i].backward(input, &da)?;
        }
        self.pool.backward(h, &trace.pool, &grad)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.pool.proj);
        f(&self.pool.proj_bias);
        f(&self.pool.query);
        for layer in &self.layers {
            f(&layer.weight);
            f(&layer.bias);
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = alloc::vec![
            &mut self.pool.proj,
            &mut self.pool.proj_bias,
            &mut self.pool.query,
        ];
        for layer in &mut self.layers {
            v.push(&mut layer.weight);
            v.push(&mut layer.bias);
        }
        v
    }
}

/// One forward pass's observable outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOut {
    /// Regression-head score (None when that head is disabled).
    pub r: Option<f64>,
    /// Distribution-head probabilities (None when disabled).
    pub p: Option<Dist5>,
    /// Final score: mean of the active heads' scores.
    pub s_hat: f64,
}

/// Mean of a five-bin distribution, rejecting non-normalized inputs.
pub fn expectation(p: &Dist5) -> Result<f64> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-4 {
        return Err(Error::invalid(format!(
            "distribution sums to {sum}, not a probability vector"
        )));
    }
    if p.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("distribution has negative components"));
    }
    Ok(corpus::expectation(p))
}

/// Squared error of the regression head on one item.
pub fn regression_loss(r: f64, target_score: f64) -> f64 {
    (r - target_score) * (r - target_score)
}

const LOG_FLOOR: f64 = 1e-12;

/// Cross entropy with a clamped log; zero predicted mass never explodes.
pub fn distribution_loss(p: &Dist5, target: &Dist5) -> f64 {
    let mut loss = 0.0f64;
    for c in 0..5 {
        if target[c] != 0.0 {
            loss -= target[c] * math::ln(p[c].max(LOG_FLOOR));
        }
    }
    loss
}

/// One training example: an utterance viewed through one judge.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub features: FeatureSequence,
    /// 0 asks for the MOS view; 1..=N ask for that judge's view.
    pub judge_id: u32,
    pub target_score: f64,
    pub target_dist: Dist5,
}

/// Samples `batch_size` items with replacement: each picks an utterance,
/// then with probability 1/2 the judge-0 (MOS + empirical distribution)
/// view, otherwise one of its raters' (score + one-hot) views.
pub fn build_batch(
    corpus: &Corpus,
    store: &FeatureStore,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BatchItem>> {
    use rand::Rng;
    if corpus.is_empty() {
        return Err(Error::invalid("cannot sample a batch from an empty corpus"));
    }
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let utt = &corpus.utterances()[rng.gen_range(0..corpus.len())];
        if utt.ratings.is_empty() {
            return Err(Error::invalid(format!(
                "utterance '{}' has no ratings to train on",
                utt.utterance_id
            )));
        }
        let features = store.get(&utt.feature_ref)?.clone();
        let mos_view = rng.gen_bool(0.5);
        if mos_view {
            batch.push(BatchItem {
                features,
                judge_id: 0,
                target_score: utt.mos.expect("rated utterance has mos"),
                target_dist: utt.distribution()?,
            });
        } else {
            let rating = &utt.ratings[rng.gen_range(0..utt.ratings.len())];
            let mut one_hot = [0.0f64; 5];
            one_hot[(rating.score - 1) as usize] = 1.0;
            batch.push(BatchItem {
                features,
                judge_id: rating.judge_id,
                target_score: rating.score as f64,
                target_dist: one_hot,
            });
        }
    }
    Ok(batch)
}

/// Batch-mean losses from one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// lambda * regression + (1 - lambda) * distribution.
    pub total: f64,
    pub regression: f64,
    pub distribution: f64,
}

/// The predictor itself. Construction order (hence RNG draw order and
/// parameter visit order) is: encoder, judge table, regression head,
/// distribution head.
#[derive(Debug, Clone)]
pub struct MosPredictor {
    config: ModelConfig,
    encoder: Encoder,
    judges: Embedding,
    reg_head: Option<Head>,
    dist_head: Option<Head>,
}

impl MosPredictor {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, tag::INIT, 0);
        let encoder = Encoder::new(config.feature_dim, config.hidden, &mut rng);
        let judges = Embedding::new("judge.table", config.judge_count as usize + 1, config.hidden);
        let reg_head = config
            .use_regression_head
            .then(|| Head::new("reg_head", config.hidden, 1, config.head_mode, &mut rng));
        let dist_head = config
            .use_distribution_head
            .then(|| Head::new("dist_head", config.hidden, 5, config.head_mode, &mut rng));
        Ok(MosPredictor { config, encoder, judges, reg_head, dist_head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Copies a (typically pre-trained) encoder's parameter values in.
    pub fn adopt_encoder(&mut self, source: &Encoder) -> Result<()> {
        if source.feature_dim() != self.config.feature_dim
            || source.hidden() != self.config.hidden
        {
            return Err(Error::shape(format!(
                "encoder is {}x{} but the model needs {}x{}",
                source.feature_dim(),
                source.hidden(),
                self.config.feature_dim,
                self.config.hidden
            )));
        }
        let mut values: Vec<Tensor> = Vec::new();
        source.visit_params(&mut |p| values.push(p.value.clone()));
        let mut idx = 0;
        self.encoder.visit_params_mut(&mut |p| {
            p.value = values[idx].clone();
            idx += 1;
        });
        Ok(())
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.encoder.visit_params(f);
        f(&self.judges.table);
        if let Some(head) = &self.reg_head {
            head.visit_params(f);
        }
        if let Some(head) = &self.dist_head {
            head.visit_params(f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for p in self.params_mut() {
            f(p);
        }
    }

    /// Mutable borrows of every parameter, in visit order (optimizer food).
    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.encoder.params_mut();
        v.push(&mut self.judges.table);
        if let Some(head) = &mut self.reg_head {
            v.extend(head.params_mut());
        }
        if let Some(head) = &mut self.dist_head {
            v.extend(head.params_mut());
        }
        v
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    /// Total learnable coordinate count.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    /// Overwrites the named parameter's values (checkpoint restore).
    pub fn set_param(&mut self, name: &str, value: &Tensor) -> Result<()> {
        let mut outcome: Result<()> = Err(Error::invalid(format!("no parameter named '{name}'")));
        self.visit_params_mut(&mut |p| {
            if p.name == name {
                outcome = if p.value.shape() == value.shape() {
                    p.value = value.clone();
                    Ok(())
                } else {
                    Err(Error::shape(format!(
                        "parameter '{name}' has shape {:?}, checkpoint holds {:?}",
                        p.value.shape(),
                        value.shape()
                    )))
                };
            }
        });
        outcome
    }

    fn check_judge(&self, judge_id: u32) -> Result<()> {
        if judge_id > self.config.judge_count {
            return Err(Error::invalid(format!(
                "judge_id {judge_id} exceeds pool size {}",
                self.config.judge_count
            )));
        }
        Ok(())
    }

    fn run_forward(
        &self,
        features: &FeatureSequence,
        judge_id: u32,
    ) -> Result<(PredictionOut, ForwardTrace)> {
        self.check_judge(judge_id)?;
        if features.dim() != self.config.feature_dim {
            return Err(Error::shape(format!(
                "features have dim {}, model expects {}",
                features.dim(),
                self.config.feature_dim
            )));
        }
        let x = features.frames();
        let (enc_out, enc_trace) = self.encoder.forward(x)?;

        // Judge conditioning: the embedding row is added to every frame.
        let emb = self.judges.lookup(judge_id as usize)?;
        let t_len = features.t_len();
        let hidden = self.config.hidden;
        let mut h_data = enc_out.data().to_vec();
        for t in 0..t_len {
            for i in 0..hidden {
                h_data[t * hidden + i] += emb.data()[i];
            }
        }
        let h = Tensor::from_vec(&[t_len, hidden], h_data)?;

        let mut r = None;
        let mut reg_trace = None;
        if let Some(head) = &self.reg_head {
            let (out, trace) = head.forward(&h)?;
            r = Some(out.data()[0] as f64);
            reg_trace = Some(trace);
        }
        let mut p = None;
        let mut dist_trace = None;
        let mut logits_probs = None;
        if let Some(head) = &self.dist_head {
            let (logits, trace) = head.forward(&h)?;
            let probs = softmax_slice(logits.data());
            let mut dist = [0.0f64; 5];
            for c in 0..5 {
                dist[c] = probs[c] as f64;
            }
            p = Some(dist);
            dist_trace = Some(trace);
            logits_probs = Some(probs);
        }

        let s_hat = match (r, &p) {
            (Some(r), Some(p)) => (r + expectation(p)?) / 2.0,
            (Some(r), None) => r,
            (None, Some(p)) => expectation(p)?,
            (None, None) => unreachable!("config guarantees a head"),
        };
        let pred = PredictionOut { r, p, s_hat };
        let trace = ForwardTrace {
            judge_id,
            x: x.clone(),
            enc: enc_trace,
            h,
            reg: reg_trace,
            dist: dist_trace,
            probs: logits_probs,
        };
        Ok((pred, trace))
    }

    /// Inference for one utterance under one judge view.
    pub fn forward(&self, features: &FeatureSequence, judge_id: u32) -> Result<PredictionOut> {
        Ok(self.run_forward(features, judge_id)?.0)
    }

    /// The deployed predictor: always the virtual MOS judge.
    pub fn predict_mos(&self, features: &FeatureSequence) -> Result<f64> {
        Ok(self.forward(features, 0)?.s_hat)
    }

    fn item_loss(pred: &PredictionOut, item: &BatchItem) -> (f64, f64) {
        let reg = pred.r.map(|r| regression_loss(r, item.target_score)).unwrap_or(0.0);
        let dist = pred
            .p
            .as_ref()
            .map(|p| distribution_loss(p, &item.target_dist))
            .unwrap_or(0.0);
        (reg, dist)
    }

    /// Forward-only batch-mean losses.
    pub fn batch_loss(&self, batch: &[BatchItem], lambda: f64) -> Result<LossBreakdown> {
        check_lambda(lambda)?;
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut reg_sum = 0.0f64;
        let mut dist_sum = 0.0f64;
        for item in batch {
            let pred = self.forward(&item.features, item.judge_id)?;
            let (reg, dist) = Self::item_loss(&pred, item);
            reg_sum += reg;
            dist_sum += dist;
        }
        let n = batch.len() as f64;
        Ok(LossBreakdown {
            total: lambda * reg_sum / n + (1.0 - lambda) * dist_sum / n,
            regression: reg_sum / n,
            distribution: dist_sum / n,
        })
    }

    /// Forward + backward over a batch; gradients of the batch-mean loss
    /// accumulate into the parameters.
    pub fn batch_loss_and_grad(&mut self, batch: &[BatchItem], lambda: f64) -> Result<LossBreakdown> {
        check_lambda(lambda)?;
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let n = batch.len() as f64;
        let mut reg_sum = 0.0f64;
        let mut dist_sum = 0.0f64;
        for item in batch {
            let (pred, trace) = self.run_forward(&item.features, item.judge_id)?;
            let (reg, dist) = Self::item_loss(&pred, item);
            reg_sum += reg;
            dist_sum += dist;
            self.backward_item(&pred, &trace, item, lambda, 1.0 / n)?;
        }
        Ok(LossBreakdown {
            total: lambda * reg_sum / n + (1.0 - lambda) * dist_sum / n,
            regression: reg_sum / n,
            distribution: dist_sum / n,
        })
    }

    /// Backward for one item; `scale` is the batch-mean factor 1/B.
    fn backward_item(
        &mut self,
        pred: &PredictionOut,
        trace: &ForwardTrace,
        item: &BatchItem,
        lambda: f64,
        scale: f64,
    ) -> Result<()> {
        let t_len = trace.h.shape()[0];
        let hidden = self.config.hidden;
        let mut dh = Tensor::zeros(&[t_len, hidden]);

        if let (Some(head), Some(head_trace), Some(r)) =
            (self.reg_head.as_mut(), trace.reg.as_ref(), pred.r)
        {
            // d/dr of lambda * (r - t)^2, scaled by 1/B.
            let dr = scale * lambda * 2.0 * (r - item.target_score);
            let dout = Tensor::from_vec(&[1], alloc::vec![dr as f32])?;
            let dh_head = head.backward(&trace.h, head_trace, &dout)?;
            for (a, &b) in dh.data_mut().iter_mut().zip(dh_head.data()) {
                *a += b;
            }
        }
        if let (Some(head), Some(head_trace), Some(probs)) =
            (self.dist_head.as_mut(), trace.dist.as_ref(), trace.probs.as_ref())
        {
            // dL/dp_c = -(1-lambda) t_c / p_c (zero where the log clamp is
            // active), then through the softmax.
            let mut dp = [0.0f32; 5];
            for c in 0..5 {
                let p_c = probs[c] as f64;
                if item.target_dist[c] != 0.0 && p_c > LOG_FLOOR {
                    dp[c] = (-(1.0 - lambda) * scale * item.target_dist[c] / p_c) as f32;
                }
            }
            let dlogits = softmax_backward_slice(probs, &dp);
            let dout = Tensor::from_vec(&[5], dlogits)?;
            let dh_head = head.backward(&trace.h, head_trace, &dout)?;
            for (a, &b) in dh.data_mut().iter_mut().zip(dh_head.data()) {
                *a += b;
            }
        }

        // Judge embedding sees the sum of frame gradients.
        let mut demb = alloc::vec![0.0f32; hidden];
        for t in 0..t_len {
            for i in 0..hidden {
                demb[i] += dh.data()[t * hidden + i];
            }
        }
        self.judges
            .backward(trace.judge_id as usize, &Tensor::from_vec(&[hidden], demb)?)?;

        self.encoder.backward(&trace.x, &trace.enc, &dh)?;
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("loss weight {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// Everything captured by one traced forward pass.
struct ForwardTrace {
    judge_id: u32,
    x: Tensor,
    enc: EncoderTrace,
    h: Tensor,
    reg: Option<HeadTrace>,
    dist: Option<HeadTrace>,
    probs: Option<Vec<f32>>,
}
