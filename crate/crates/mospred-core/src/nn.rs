//! Neural layers with hand-derived reverse-mode gradients.
//!
//! Every layer follows the same contract: `forward` is pure, `backward`
//! takes the forward input (plus any cached activations), accumulates
//! parameter gradients into the layer, and returns the gradient with
//! respect to the input. Reductions accumulate in f64 and are truncated to
//! f32 on write-out.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::math;
use crate::tensor::{Parameter, Tensor};
use crate::{Error, Result};

/// Uniform init scaled by fan-in: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn uniform_fan_in(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    use rand::Rng;
    let scale = 1.0 / math::sqrt(fan_in as f64);
    let len: usize = shape.iter().product();
    let data: Vec<f32> = (0..len)
        .map(|_| ((2.0 * rng.gen::<f64>() - 1.0) * scale) as f32)
        .collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

/// Rectified linear unit. Finiteness is the producing op's concern, so
/// this stays infallible.
pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_vec(x.shape(), data).expect("relu shape")
}

/// Gradient of [`relu`]: passes `dy` where the forward input was positive.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.shape() != dy.shape() {
        return Err(Error::shape(format!(
            "relu backward: input {:?} vs grad {:?}",
            x.shape(),
            dy.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Numerically stable softmax over a 1-D tensor.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.is_empty() {
        return Err(Error::shape("softmax over empty tensor"));
    }
    let data = softmax_slice(x.data());
    Tensor::from_vec(x.shape(), data)
}

pub(crate) fn softmax_slice(x: &[f32]) -> Vec<f32> {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = x.iter().map(|&v| math::exp((v - max) as f64)).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| (e / sum) as f32).collect()
}

/// Gradient of [`softmax`] given its output `y` and upstream `dy`.
pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if y.shape() != dy.shape() {
        return Err(Error::shape(format!(
            "softmax backward: output {:?} vs grad {:?}",
            y.shape(),
            dy.shape()
        )));
    }
    let data = softmax_backward_slice(y.data(), dy.data());
    Tensor::from_vec(y.shape(), data)
}

pub(crate) fn softmax_backward_slice(y: &[f32], dy: &[f32]) -> Vec<f32> {
    let dot: f64 = y
        .iter()
        .zip(dy)
        .map(|(&yi, &gi)| yi as f64 * gi as f64)
        .sum();
    y.iter()
        .zip(dy)
        .map(|(&yi, &gi)| (yi as f64 * (gi as f64 - dot)) as f32)
        .collect()
}

/// Fully connected layer; weight is `[in, out]`, bias `[out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Parameter::new(
                format!("{prefix}.weight"),
                uniform_fan_in(rng, &[in_dim, out_dim], in_dim),
            ),
            bias: Parameter::new(format!("{prefix}.bias"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `x` is `[.., in]`; the output replaces the last dim with `out`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let rows = x.rows_for(self.in_dim)?;
        let (ind, outd) = (self.in_dim, self.out_dim);
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        let xd = x.data();
        let mut y = vec![0.0f32; rows * outd];
        for r in 0..rows {
            for o in 0..outd {
                let mut acc = b[o] as f64;
                for i in 0..ind {
                    acc += xd[r * ind + i] as f64 * w[i * outd + o] as f64;
                }
                y[r * outd + o] = acc as f32;
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("non-scalar") = outd;
        let out = Tensor::from_vec(&shape, y)?;
        out.check_finite("linear")?;
        Ok(out)
    }

    /// Accumulates dW/db and returns dx. `x` must be the forward input.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let rows = x.rows_for(self.in_dim)?;
        if dy.rows_for(self.out_dim)? != rows {
            return Err(Error::shape(format!(
                "linear backward: {} rows in, {} rows of grad",
                rows,
                dy.len() / self.out_dim
            )));
        }
        let (ind, outd) = (self.in_dim, self.out_dim);
        let w = self.weight.value.data();
        let xd = x.data();
        let dyd = dy.data();

        let dw = self.weight.grad.data_mut();
        for i in 0..ind {
            for o in 0..outd {
                let mut acc = 0.0f64;
                for r in 0..rows {
                    acc += xd[r * ind + i] as f64 * dyd[r * outd + o] as f64;
                }
                dw[i * outd + o] += acc as f32;
            }
        }
        let db = self.bias.grad.data_mut();
        for o in 0..outd {
            let mut acc = 0.0f64;
            for r in 0..rows {
                acc += dyd[r * outd + o] as f64;
            }
            db[o] += acc as f32;
        }

        let mut dx = vec![0.0f32; rows * ind];
        for r in 0..rows {
            for i in 0..ind {
                let mut acc = 0.0f64;
                for o in 0..outd {
                    acc += dyd[r * outd + o] as f64 * w[i * outd + o] as f64;
                }
                dx[r * ind + i] = acc as f32;
            }
        }
        Tensor::from_vec(x.shape(), dx)
    }
}

/// 1-D convolution over time with same-padding; kernel is `[k, in, out]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: Parameter,
    pub bias: Parameter,
    kernel_size: usize,
    in_dim: usize,
    out_dim: usize,
}

impl Conv1d {
    pub fn new(
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        kernel_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel_size % 2 == 1, "same-padding needs an odd kernel");
        Conv1d {
            kernel: Parameter::new(
                format!("{prefix}.weight"),
                uniform_fan_in(rng, &[kernel_size, in_dim, out_dim], kernel_size * in_dim),
            ),
            bias: Parameter::new(format!("{prefix}.bias"), Tensor::zeros(&[out_dim])),
            kernel_size,
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `x` is `[T, in]`; returns `[T, out]` (zero-padded borders).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let t_len = x.rows_for(self.in_dim)?;
        let (k, ind, outd) = (self.kernel_size, self.in_dim, self.out_dim);
        let pad = k / 2;
        let kern = self.kernel.value.data();
        let b = self.bias.value.data();
        let xd = x.data();
        let mut y = vec![0.0f32; t_len * outd];
        for t in 0..t_len {
            for o in 0..outd {
                let mut acc = b[o] as f64;
                for dk in 0..k {
                    let s = t as isize + dk as isize - pad as isize;
                    if s < 0 || s >= t_len as isize {
                        continue;
                    }
                    let s = s as usize;
                    for i in 0..ind {
                        acc += xd[s * ind + i] as f64 * kern[(dk * ind + i) * outd + o] as f64;
                    }
                }
                y[t * outd + o] = acc as f32;
            }
        }
        let out = Tensor::from_vec(&[t_len, outd], y)?;
        out.check_finite("conv1d")?;
        Ok(out)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let t_len = x.rows_for(self.in_dim)?;
        if dy.rows_for(self.out_dim)? != t_len {
            return Err(Error::shape("conv1d backward: frame count mismatch"));
        }
        let (k, ind, outd) = (self.kernel_size, self.in_dim, self.out_dim);
        let pad = k / 2;
        let kern = self.kernel.value.data();
        let xd = x.data();
        let dyd = dy.data();

        let dk_buf = self.kernel.grad.data_mut();
        for dk in 0..k {
            for i in 0..ind {
                for o in 0..outd {
                    let mut acc = 0.0f64;
                    for t in 0..t_len {
                        let s = t as isize + dk as isize - pad as isize;
                        if s < 0 || s >= t_len as isize {
                            continue;
                        }
                        acc += xd[s as usize * ind + i] as f64 * dyd[t * outd + o] as f64;
                    }
                    dk_buf[(dk * ind + i) * outd + o] += acc as f32;
                }
            }
        }
        let db = self.bias.grad.data_mut();
        for o in 0..outd {
            let mut acc = 0.0f64;
            for t in 0..t_len {
                acc += dyd[t * outd + o] as f64;
            }
            db[o] += acc as f32;
        }

        let mut dx = vec![0.0f32; t_len * ind];
        for s in 0..t_len {
            for i in 0..ind {
                let mut acc = 0.0f64;
                for dk in 0..k {
                    let t = s as isize - dk as isize + pad as isize;
                    if t < 0 || t >= t_len as isize {
                        continue;
                    }
                    let t = t as usize;
                    for o in 0..outd {
                        acc += kern[(dk * ind + i) * outd + o] as f64 * dyd[t * outd + o] as f64;
                    }
                }
                dx[s * ind + i] = acc as f32;
            }
        }
        Tensor::from_vec(&[t_len, ind], dx)
    }
}

/// Embedding table of shape `[rows, dim]` with scatter-add gradients.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Parameter,
    rows: usize,
    dim: usize,
}

impl Embedding {
    /// Zero-initialized table: additive embeddings start neutral.
    pub fn new(name: &str, rows: usize, dim: usize) -> Self {
        Embedding {
            table: Parameter::new(name, Tensor::zeros(&[rows, dim])),
            rows,
            dim,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lookup(&self, id: usize) -> Result<Tensor> {
        if id >= self.rows {
            return Err(Error::invalid(format!(
                "embedding id {id} out of range (table has {} rows)",
                self.rows
            )));
        }
        let row = &self.table.value.data()[id * self.dim..(id + 1) * self.dim];
        Tensor::from_vec(&[self.dim], row.to_vec())
    }

    /// Scatter the gradient into the looked-up row.
    pub fn backward(&mut self, id: usize, dz: &Tensor) -> Result<()> {
        if id >= self.rows {
            return Err(Error::invalid(format!("embedding id {id} out of range")));
        }
        if dz.len() != self.dim {
            return Err(Error::shape("embedding grad dim mismatch"));
        }
        let grad = &mut self.table.grad.data_mut()[id * self.dim..(id + 1) * self.dim];
        for (g, &d) in grad.iter_mut().zip(dz.data()) {
            *g += d;
        }
        Ok(())
    }
}

/// Cached activations from an attentive-pool forward pass.
#[derive(Debug, Clone)]
pub struct PoolTrace {
    /// tanh(V h_t + c) per frame, `[T, d]`.
    pub gates: Vec<f32>,
    /// Softmax attention weights over frames, `[T]`.
    pub alpha: Vec<f32>,
}

/// Attentive pooling: alpha_t = softmax_t(u . tanh(V h_t + c)),
/// z = sum_t alpha_t h_t.
#[derive(Debug, Clone)]
pub struct AttentivePool {
    pub proj: Parameter,
    pub proj_bias: Parameter,
    pub query: Parameter,
    dim: usize,
}

impl AttentivePool {
    pub fn new(prefix: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        AttentivePool {
            proj: Parameter::new(format!("{prefix}.proj"), uniform_fan_in(rng, &[dim, dim], dim)),
            proj_bias: Parameter::new(format!("{prefix}.proj_bias"), Tensor::zeros(&[dim])),
            query: Parameter::new(format!("{prefix}.query"), uniform_fan_in(rng, &[dim], dim)),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `h` is `[T, d]` with `T >= 1`; returns the pooled `[d]` vector.
    pub fn forward(&self, h: &Tensor) -> Result<(Tensor, PoolTrace)> {
        let t_len = h.rows_for(self.dim)?;
        if t_len == 0 {
            return Err(Error::shape("attentive pool over zero frames"));
        }
        let d = self.dim;
        let v = self.proj.value.data();
        let c = self.proj_bias.value.data();
        let u = self.query.value.data();
        let hd = h.data();

        let mut gates = vec![0.0f32; t_len * d];
        let mut scores = vec![0.0f32; t_len];
        for t in 0..t_len {
            let mut e = 0.0f64;
            for j in 0..d {
                let mut a = c[j] as f64;
                for i in 0..d {
                    a += v[j * d + i] as f64 * hd[t * d + i] as f64;
                }
                let g = math::tanhf(a as f32);
                gates[t * d + j] = g;
                e += u[j] as f64 * g as f64;
            }
            scores[t] = e as f32;
        }
        let alpha = softmax_slice(&scores);

        let mut z = vec![0.0f32; d];
        for i in 0..d {
            let mut acc = 0.0f64;
            for t in 0..t_len {
                acc += alpha[t] as f64 * hd[t * d + i] as f64;
            }
            z[i] = acc as f32;
        }
        let out = Tensor::from_vec(&[d], z)?;
        out.check_finite("attentive_pool")?;
        Ok((out, PoolTrace { gates, alpha }))
    }

    /// Accumulates grads for proj/proj_bias/query and returns dH `[T, d]`.
    pub fn backward(&mut self, h: &Tensor, trace: &PoolTrace, dz: &Tensor) -> Result<Tensor> {
        let t_len = h.rows_for(self.dim)?;
        let d = self.dim;
        if dz.len() != d || trace.alpha.len() != t_len || trace.gates.len() != t_len * d {
            return Err(Error::shape("attentive pool backward: trace mismatch"));
        }
        let v = self.proj.value.data();
        let u = self.query.value.data();
        let hd = h.data();
        let dzd = dz.data();

        // d alpha_t = dz . h_t; dh gets the convex-combination term.
        let mut dalpha = vec![0.0f32; t_len];
        let mut dh = vec![0.0f32; t_len * d];
        for t in 0..t_len {
            let mut acc = 0.0f64;
            for i in 0..d {
                acc += dzd[i] as f64 * hd[t * d + i] as f64;
                dh[t * d + i] += trace.alpha[t] * dzd[i];
            }
            dalpha[t] = acc as f32;
        }
        let de = softmax_backward_slice(&trace.alpha, &dalpha);

        let dv = self.proj.grad.data_mut();
        let dc = self.proj_bias.grad.data_mut();
        let du = self.query.grad.data_mut();
        for t in 0..t_len {
            let det = de[t] as f64;
            for j in 0..d {
                let g = trace.gates[t * d + j] as f64;
                du[j] += (det * g) as f32;
                let da = det * u[j] as f64 * (1.0 - g * g);
                dc[j] += da as f32;
                for i in 0..d {
                    dv[j * d + i] += (da * hd[t * d + i] as f64) as f32;
                }
            }
        }
        // dh += V^T da, recomputing da from the cached gates.
        for t in 0..t_len {
            let det = de[t] as f64;
            for i in 0..d {
                let mut acc = 0.0f64;
                for j in 0..d {
                    let g = trace.gates[t * d + j] as f64;
                    let da = det * u[j] as f64 * (1.0 - g * g);
                    acc += v[j * d + i] as f64 * da;
                }
                dh[t * d + i] += acc as f32;
            }
        }
        Tensor::from_vec(&[t_len, d], dh)
    }
}
