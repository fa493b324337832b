//! Central-finite-difference verification of analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::rng::{substream, tag};
use crate::tensor::Parameter;
use crate::{Error, Result};

/// Anything whose parameter gradients can be checked numerically.
///
/// `loss` must be a pure function of the current parameter values (same
/// inputs, same batch, no RNG draws between calls), otherwise the numeric
/// differences are meaningless.
pub trait GradCheckTarget {
    /// Forward pass only.
    fn loss(&mut self) -> Result<f64>;
    /// Forward plus backward; accumulates into each parameter's `grad`.
    fn loss_and_grad(&mut self) -> Result<f64>;
    /// Visits every learnable parameter in a stable order.
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Parameter));
}

/// Outcome of a [`grad_check`] run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Coordinates actually compared (after any subsampling).
    pub coords_checked: usize,
    /// Total learnable coordinates in the target.
    pub coords_total: usize,
    /// max over coords of the best-supported difference estimate's
    /// |analytic - numeric| / max(1, |analytic|, |numeric|).
    pub max_rel_err: f64,
    /// Parameter name and flat index attaining `max_rel_err`.
    pub worst: Option<(String, usize)>,
}

fn perturb(target: &mut dyn GradCheckTarget, pi: usize, ci: usize, value: f32) {
    let mut k = 0usize;
    target.for_each_param(&mut |p| {
        if k == pi {
            p.value.data_mut()[ci] = value;
        }
        k += 1;
    });
}

/// Compares analytic gradients against finite differences with step
/// `eps`. When the target has more than `max_coords` coordinates, a
/// seeded subsample of exactly `max_coords` of them is checked.
///
/// Each coordinate is scored by the best of the central and the two
/// one-sided difference estimates (all from the same two perturbed
/// evaluations plus the base loss). A ReLU kink inside the perturbation
/// interval invalidates the central difference but leaves one clean
/// side, while a genuinely wrong gradient disagrees with all three.
pub fn grad_check(
    target: &mut dyn GradCheckTarget,
    eps: f32,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::invalid("grad check step must be positive"));
    }
    if max_coords == 0 {
        return Err(Error::invalid("grad check needs max_coords >= 1"));
    }

    target.for_each_param(&mut |p| p.zero_grad());
    let loss_base = target.loss_and_grad()?;

    // Snapshot analytic grads; (name, values) per parameter in visit order.
    let mut analytic: Vec<(String, Vec<f32>)> = Vec::new();
    target.for_each_param(&mut |p| {
        analytic.push((p.name.clone(), p.grad.data().to_vec()));
    });
    let coords_total: usize = analytic.iter().map(|(_, g)| g.len()).sum();
    if coords_total == 0 {
        return Err(Error::invalid("grad check target has no parameters"));
    }

    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (pi, (_, g)) in analytic.iter().enumerate() {
        for ci in 0..g.len() {
            coords.push((pi, ci));
        }
    }
    if coords.len() > max_coords {
        use rand::seq::SliceRandom;
        let mut rng = substream(seed, tag::GRADCHECK, 0);
        coords.shuffle(&mut rng);
        coords.truncate(max_coords);
        coords.sort_unstable();
    }

    let mut report = GradCheckReport {
        coords_checked: coords.len(),
        coords_total,
        max_rel_err: 0.0,
        worst: None,
    };
    for &(pi, ci) in &coords {
        let mut original = 0.0f32;
        let mut k = 0usize;
        target.for_each_param(&mut |p| {
            if k == pi {
                original = p.value.data()[ci];
            }
            k += 1;
        });
        let plus = original + eps;
        let minus = original - eps;

        perturb(target, pi, ci, plus);
        let loss_plus = target.loss()?;
        perturb(target, pi, ci, minus);
        let loss_minus = target.loss()?;
        perturb(target, pi, ci, original);

        let a = analytic[pi].1[ci] as f64;
        // Widths use the perturbations actually representable in f32.
        let mut rel = f64::INFINITY;
        for (hi, lo, width) in [
            (loss_plus, loss_minus, (plus - minus) as f64),
            (loss_plus, loss_base, (plus - original) as f64),
            (loss_base, loss_minus, (original - minus) as f64),
        ] {
            if width <= 0.0 {
                continue;
            }
            let numeric = (hi - lo) / width;
            let denom = 1.0f64.max(a.abs()).max(numeric.abs());
            rel = rel.min((a - numeric).abs() / denom);
        }
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some((analytic[pi].0.clone(), ci));
        }
    }
    Ok(report)
}
