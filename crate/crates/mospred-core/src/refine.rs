//! Closed-form affine refinement fitted on whole-training-set predictions.

use alloc::format;

use crate::{Error, Result};

/// A single affine map `s' = a*s + b`.
///
/// A healthy model yields `a > 0`; a non-positive slope is returned anyway
/// (the caller should warn) because correlation invariance, not fitting,
/// is what breaks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementLayer {
    pub a: f64,
    pub b: f64,
}

impl RefinementLayer {
    pub fn identity() -> Self {
        RefinementLayer { a: 1.0, b: 0.0 }
    }

    pub fn apply(&self, s_hat: f64) -> f64 {
        self.a * s_hat + self.b
    }

    /// Positive slope keeps rank order, hence all correlation metrics.
    pub fn preserves_order(&self) -> bool {
        self.a > 0.0
    }
}

/// Ordinary least squares on all pairs at once (normal equations in f64).
pub fn fit_refinement(preds: &[f64], targets: &[f64]) -> Result<RefinementLayer> {
    if preds.len() != targets.len() {
        return Err(Error::shape(format!(
            "refinement fit: {} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.len() < 2 {
        return Err(Error::invalid("refinement fit needs at least 2 pairs"));
    }
    for &v in preds.iter().chain(targets) {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("refinement fit saw {v}")));
        }
    }
    let n = preds.len() as f64;
    let mean_p: f64 = preds.iter().sum::<f64>() / n;
    let mean_t: f64 = targets.iter().sum::<f64>() / n;
    let mut cov = 0.0f64;
    let mut var_p = 0.0f64;
    for (&p, &t) in preds.iter().zip(targets) {
        cov += (p - mean_p) * (t - mean_t);
        var_p += (p - mean_p) * (p - mean_p);
    }
    if var_p / n < 1e-12 {
        return Err(Error::invalid(
            "degenerate predictor: predictions are (nearly) constant, refinement is ill-posed",
        ));
    }
    let a = cov / var_p;
    let b = mean_t - a * mean_p;
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite(format!("refinement solution a={a} b={b}")));
    }
    Ok(RefinementLayer { a, b })
}

/// Free-function form of [`RefinementLayer::apply`].
pub fn apply_refinement(layer: &RefinementLayer, s_hat: f64) -> f64 {
    layer.apply(s_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{kendall_tau, mse, pearson, spearman};
    use crate::rng::{substream, tag};
    use alloc::vec::Vec;
    use rand::Rng;

    #[test]
    fn exact_affine_relations_are_recovered() {
        let layer = fit_refinement(&[2.0, 3.0, 4.0], &[3.0, 4.0, 5.0]).unwrap();
        assert_eq!((layer.a, layer.b), (1.0, 1.0));
        let layer = fit_refinement(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!((layer.a, layer.b), (2.0, 0.0));
    }

    #[test]
    fn apply_matches_definition() {
        assert_eq!(RefinementLayer::identity().apply(3.25), 3.25);
        let layer = RefinementLayer { a: 1.0, b: 1.0 };
        assert_eq!(apply_refinement(&layer, 3.0), 4.0);
    }

    #[test]
    fn constant_predictions_are_rejected() {
        let err = fit_refinement(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(alloc::string::ToString::to_string(&err).contains("degenerate predictor"));
        assert!(fit_refinement(&[1.0], &[1.0]).is_err());
        assert!(fit_refinement(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn negative_slope_is_returned_not_rejected() {
        let layer = fit_refinement(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap();
        assert!(layer.a < 0.0);
        assert!(!layer.preserves_order());
    }

    fn random_pairs(seed_idx: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = substream(12, tag::GRADCHECK, 200 + seed_idx);
        let preds: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..5.0)).collect();
        let targets: Vec<f64> = preds
            .iter()
            .map(|&p| 0.6 * p + 1.2 + rng.gen_range(-0.8..0.8))
            .collect();
        (preds, targets)
    }

    fn mse_of(layer: &RefinementLayer, preds: &[f64], targets: &[f64]) -> f64 {
        let refined: Vec<f64> = preds.iter().map(|&p| layer.apply(p)).collect();
        mse(&refined, targets).unwrap()
    }

    #[test]
    fn ols_beats_a_grid_around_the_solution() {
        let (preds, targets) = random_pairs(0, 100);
        let layer = fit_refinement(&preds, &targets).unwrap();
        let best = mse_of(&layer, &preds, &targets);
        for i in 0..201 {
            for j in 0..201 {
                let cand = RefinementLayer {
                    a: layer.a + (i as f64 - 100.0) * 0.005,
                    b: layer.b + (j as f64 - 100.0) * 0.005,
                };
                assert!(
                    best <= mse_of(&cand, &preds, &targets) + 1e-12,
                    "grid point ({}, {}) beats the closed form",
                    cand.a,
                    cand.b
                );
            }
        }
    }

    #[test]
    fn refinement_never_increases_training_mse_and_centers_residuals() {
        for trial in 0..20 {
            let (preds, targets) = random_pairs(trial + 1, 60);
            let layer = fit_refinement(&preds, &targets).unwrap();
            let before = mse(&preds, &targets).unwrap();
            let after = mse_of(&layer, &preds, &targets);
            assert!(after <= before + 1e-12, "refined {after} > raw {before}");
            let refined: Vec<f64> = preds.iter().map(|&p| layer.apply(p)).collect();
            let mean_resid: f64 = refined
                .iter()
                .zip(&targets)
                .map(|(&r, &t)| r - t)
                .sum::<f64>()
                / refined.len() as f64;
            assert!(mean_resid.abs() < 1e-9, "{mean_resid}");
        }
    }

    #[test]
    fn positive_slope_leaves_correlations_unchanged() {
        for trial in 0..20 {
            let (preds, targets) = random_pairs(trial + 40, 50);
            let layer = fit_refinement(&preds, &targets).unwrap();
            assert!(layer.a > 0.0, "positively correlated construction");
            let refined: Vec<f64> = preds.iter().map(|&p| layer.apply(p)).collect();
            let lcc = pearson(&preds, &targets).unwrap();
            let srcc = spearman(&preds, &targets).unwrap();
            let ktau = kendall_tau(&preds, &targets).unwrap();
            assert!((pearson(&refined, &targets).unwrap() - lcc).abs() < 1e-9);
            assert!((spearman(&refined, &targets).unwrap() - srcc).abs() < 1e-9);
            assert!((kendall_tau(&refined, &targets).unwrap() - ktau).abs() < 1e-9);
        }
    }
}
