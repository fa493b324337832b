//! Evaluation metrics: MSE, Pearson (LCC), Spearman (SRCC), Kendall tau-b
//! (KTAU), at utterance and system level.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{Corpus, UtteranceRecord};
use crate::math;
use crate::{Error, Result};

fn check_pair(name: &str, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "{name}: lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::invalid(format!("{name}: empty input")));
    }
    for &v in x.iter().chain(y) {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name}: input contains {v}")));
        }
    }
    Ok(())
}

/// Mean squared difference.
pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("mse", x, y)?;
    let sum: f64 = x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sum / x.len() as f64)
}

/// Pearson correlation; errors when either side has (near-)zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("pearson", x, y)?;
    let n = x.len() as f64;
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least 2 points".into()));
    }
    let mean_x: f64 = x.iter().sum::<f64>() / n;
    let mean_y: f64 = y.iter().sum::<f64>() / n;
    let mut cov = 0.0f64;
    let mut var_x = 0.0f64;
    let mut var_y = 0.0f64;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x < 1e-24 || var_y < 1e-24 {
        return Err(Error::UndefinedCorrelation(
            "an input is constant, so Pearson correlation does not exist".into(),
        ));
    }
    Ok(cov / math::sqrt(var_x * var_y))
}

/// Fractional (tie-averaged) ranks, 1-based: tied values share the mean of
/// the positions they occupy.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite values"));
    let mut out = alloc::vec![0.0f64; n];
    let mut i = 0usize;
    while i < n {
        let mut j = i + 1;
        while j < n && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        // positions i+1 ..= j (1-based); average = (i+1 + j)/2
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            out[k] = rank;
        }
        i = j;
    }
    out
}

/// Spearman correlation: Pearson on fractional ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("spearman", x, y)?;
    pearson(&ranks(x), &ranks(y))
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut i = 0usize;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        total += t * (t - 1) / 2;
        i = j;
    }
    total
}

/// Counts strict inversions (i < j with v[i] > v[j]) by merge sort.
fn count_inversions(values: &mut [f64], scratch: &mut [f64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = values.split_at_mut(mid);
    let mut inv = count_inversions(left, scratch) + count_inversions(right, scratch);
    let (mut i, mut j, mut k) = (0usize, 0usize, 0usize);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            scratch[k] = left[i];
            i += 1;
        } else {
            inv += (left.len() - i) as u64;
            scratch[k] = right[j];
            j += 1;
        }
        k += 1;
    }
    while i < left.len() {
        scratch[k] = left[i];
        i += 1;
        k += 1;
    }
    while j < right.len() {
        scratch[k] = right[j];
        j += 1;
        k += 1;
    }
    values.copy_from_slice(&scratch[..n]);
    inv
}

/// Kendall tau-b (tie-corrected), O(n log n): sort by (x, y), count
/// discordant pairs as strict inversions of the y sequence, and correct
/// the denominator by the tie-pair counts.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("kendall_tau", x, y)?;
    let n = x.len();
    if n < 2 {
        return Err(Error::UndefinedCorrelation("need at least 2 points".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .expect("finite")
            .then(y[a].partial_cmp(&y[b]).expect("finite"))
    });

    let x_sorted: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let ties_x = tie_pairs(&x_sorted);
    // Joint ties: groups where both coordinates repeat.
    let mut ties_xy = 0u64;
    {
        let mut i = 0usize;
        while i < n {
            let mut j = i + 1;
            while j < n && x[idx[j]] == x[idx[i]] && y[idx[j]] == y[idx[i]] {
                j += 1;
            }
            let t = (j - i) as u64;
            ties_xy += t * (t - 1) / 2;
            i = j;
        }
    }
    let mut y_in_x_order: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut scratch = alloc::vec![0.0f64; n];
    let discordant = count_inversions(&mut y_in_x_order, &mut scratch);
    // y_in_x_order is now sorted, giving the y tie count for free.
    let ties_y = tie_pairs(&y_in_x_order);

    let total = (n as u64) * (n as u64 - 1) / 2;
    if ties_x == total || ties_y == total {
        return Err(Error::UndefinedCorrelation(
            "an input is constant, so Kendall tau does not exist".into(),
        ));
    }
    let con_minus_dis =
        total as i128 - ties_x as i128 - ties_y as i128 + ties_xy as i128 - 2 * discordant as i128;
    let denom = math::sqrt((total - ties_x) as f64 * (total - ties_y) as f64);
    Ok(con_minus_dis as f64 / denom)
}

/// Per-system means of predictions and targets, ordered by system_id.
pub fn system_aggregate<S: AsRef<str>>(
    preds: &[f64],
    targets: &[f64],
    system_ids: &[S],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair("system_aggregate", preds, targets)?;
    if system_ids.len() != preds.len() {
        return Err(Error::shape(format!(
            "system_aggregate: {} system ids for {} pairs",
            system_ids.len(),
            preds.len()
        )));
    }
    let mut groups: BTreeMap<&str, (f64, f64, u64)> = BTreeMap::new();
    for i in 0..preds.len() {
        let entry = groups.entry(system_ids[i].as_ref()).or_insert((0.0, 0.0, 0));
        entry.0 += preds[i];
        entry.1 += targets[i];
        entry.2 += 1;
    }
    let mut pred_means = Vec::with_capacity(groups.len());
    let mut target_means = Vec::with_capacity(groups.len());
    for (_, (ps, ts, count)) in groups {
        pred_means.push(ps / count as f64);
        target_means.push(ts / count as f64);
    }
    Ok((pred_means, target_means))
}

/// The four metrics at one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelMetrics {
    pub mse: f64,
    pub lcc: f64,
    pub srcc: f64,
    pub ktau: f64,
}

fn level_metrics(preds: &[f64], targets: &[f64]) -> Result<LevelMetrics> {
    Ok(LevelMetrics {
        mse: mse(preds, targets)?,
        lcc: pearson(preds, targets)?,
        srcc: spearman(preds, targets)?,
        ktau: kendall_tau(preds, targets)?,
    })
}

/// Utterance-level and system-level metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub utt: LevelMetrics,
    pub sys: LevelMetrics,
    pub n_utt: usize,
    pub n_sys: usize,
}

/// Row of the prediction dump that accompanies a report.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub utterance_id: String,
    pub system_id: String,
    pub true_mos: f64,
    pub pred_mos: f64,
}

/// Runs `predictor` over every utterance and scores against stored MOS.
/// A constant predictor surfaces the undefined-correlation error.
pub fn evaluate<F>(corpus: &Corpus, mut predictor: F) -> Result<(MetricsReport, Vec<PredictionRow>)>
where
    F: FnMut(&UtteranceRecord) -> Result<f64>,
{
    if corpus.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty corpus"));
    }
    let mut preds = Vec::with_capacity(corpus.len());
    let mut targets = Vec::with_capacity(corpus.len());
    let mut system_ids = Vec::with_capacity(corpus.len());
    let mut rows = Vec::with_capacity(corpus.len());
    for utt in corpus.utterances() {
        let target = utt.mos.ok_or_else(|| {
            Error::invalid(format!("utterance '{}' has no MOS to evaluate against", utt.utterance_id))
        })?;
        let pred = predictor(utt)?;
        if !pred.is_finite() {
            return Err(Error::NonFinite(format!(
                "prediction for '{}' is {pred}",
                utt.utterance_id
            )));
        }
        preds.push(pred);
        targets.push(target);
        system_ids.push(utt.system_id.clone());
        rows.push(PredictionRow {
            utterance_id: utt.utterance_id.clone(),
            system_id: utt.system_id.clone(),
            true_mos: target,
            pred_mos: pred,
        });
    }
    let utt = level_metrics(&preds, &targets)?;
    let (sys_preds, sys_targets) = system_aggregate(&preds, &targets, &system_ids)?;
    let sys = level_metrics(&sys_preds, &sys_targets)?;
    Ok((
        MetricsReport {
            utt,
            sys,
            n_utt: preds.len(),
            n_sys: sys_preds.len(),
        },
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Rating, SplitTag, UtteranceRecord};
    use crate::rng::{substream, tag};
    use alloc::vec;
    use rand::Rng;

    #[test]
    fn mse_matches_hand_cases_and_naive_oracle() {
        assert_eq!(mse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5);
        let mut rng = substream(1, tag::GRADCHECK, 100);
        for _ in 0..100 {
            let n = rng.gen_range(1..40);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut acc = 0.0;
            for i in 0..n {
                acc += (x[i] - y[i]).powi(2);
            }
            assert!((mse(&x, &y).unwrap() - acc / n as f64).abs() < 1e-12);
        }
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn pearson_hand_cases_and_affine_invariance() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        let mut rng = substream(2, tag::GRADCHECK, 101);
        for _ in 0..200 {
            let n = rng.gen_range(3..30);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let a = rng.gen_range(0.1..4.0);
            let b = rng.gen_range(-10.0..10.0);
            let xs: Vec<f64> = x.iter().map(|&v| a * v + b).collect();
            let base = pearson(&x, &y).unwrap();
            assert!((pearson(&xs, &y).unwrap() - base).abs() < 1e-12);
            assert!((pearson(&y, &x).unwrap() - base).abs() < 1e-15);
        }
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 30.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        assert_eq!(ranks(&[5.0, 5.0, 5.0, 1.0]), vec![3.0, 3.0, 3.0, 1.0]);
    }

    #[test]
    fn spearman_hand_cases() {
        let s = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((s - 0.8).abs() < 1e-12, "{s}");
        assert!((spearman(&[1.0, 4.0, 2.0], &[1.0, 4.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        let tied = spearman(&[1.0, 1.0, 2.0], &[3.0, 3.0, 4.0]).unwrap();
        assert!((tied - 1.0).abs() < 1e-12, "{tied}");
    }

    #[test]
    fn spearman_is_pearson_of_ranks_with_strictly_increasing_invariance() {
        let mut rng = substream(3, tag::GRADCHECK, 102);
        for _ in 0..200 {
            let n = rng.gen_range(3..40);
            // Small integer support forces ties.
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=5) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=5) as f64).collect();
            let (s, p) = match (spearman(&x, &y), pearson(&ranks(&x), &ranks(&y))) {
                (Ok(s), Ok(p)) => (s, p),
                (Err(_), Err(_)) => continue,
                other => panic!("definitions disagree on definedness: {other:?}"),
            };
            assert_eq!(s.to_bits(), p.to_bits());
            // cube is strictly increasing on positives
            let xc: Vec<f64> = x.iter().map(|&v| v * v * v).collect();
            assert!((spearman(&xc, &y).unwrap() - s).abs() < 1e-12);
        }
    }

    /// Direct pair enumeration using the tie-corrected formula.
    fn kendall_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len();
        let mut concordant = 0i64;
        let mut discordant = 0i64;
        let mut ties_x = 0i64;
        let mut ties_y = 0i64;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = x[i] - x[j];
                let dy = y[i] - y[j];
                if dx == 0.0 {
                    ties_x += 1;
                }
                if dy == 0.0 {
                    ties_y += 1;
                }
                if dx != 0.0 && dy != 0.0 {
                    if dx * dy > 0.0 {
                        concordant += 1;
                    } else {
                        discordant += 1;
                    }
                }
            }
        }
        let total = (n * (n - 1) / 2) as i64;
        if ties_x == total || ties_y == total {
            return None;
        }
        let denom = (((total - ties_x) as f64) * ((total - ties_y) as f64)).sqrt();
        Some((concordant - discordant) as f64 / denom)
    }

    #[test]
    fn kendall_hand_cases() {
        let t = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-12, "{t}");
        let rev = kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((rev + 1.0).abs() < 1e-12);
        assert!(matches!(
            kendall_tau(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn kendall_matches_pair_enumeration_on_tied_vectors() {
        let mut rng = substream(4, tag::GRADCHECK, 103);
        let mut checked = 0;
        while checked < 200 {
            let n = rng.gen_range(2..60);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=6) as f64 / 2.0).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=6) as f64 / 2.0).collect();
            match (kendall_tau(&x, &y), kendall_oracle(&x, &y)) {
                (Ok(fast), Some(slow)) => {
                    assert!((fast - slow).abs() < 1e-12, "fast {fast} slow {slow}");
                    checked += 1;
                }
                (Err(_), None) => {}
                other => panic!("fast and oracle disagree on definedness: {other:?}"),
            }
        }
    }

    #[test]
    fn system_aggregate_matches_group_by_oracle() {
        // One system: the means are the global means.
        let (p, t) = system_aggregate(&[1.0, 2.0], &[3.0, 5.0], &["s1", "s1"]).unwrap();
        assert_eq!((p, t), (vec![1.5], vec![4.0]));
        // Two equal-size systems with swapped values swap their means.
        let (p, t) =
            system_aggregate(&[1.0, 2.0, 2.0, 1.0], &[0.0, 0.0, 0.0, 0.0], &["a", "b", "a", "b"])
                .unwrap();
        assert_eq!(p, vec![1.5, 1.5]);
        assert_eq!(t, vec![0.0, 0.0]);

        let mut rng = substream(5, tag::GRADCHECK, 104);
        for _ in 0..50 {
            let n = rng.gen_range(1..50);
            let ids: Vec<String> =
                (0..n).map(|_| format!("sys{}", rng.gen_range(0..6))).collect();
            let preds: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..5.0)).collect();
            let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..5.0)).collect();
            let (p, t) = system_aggregate(&preds, &targets, &ids).unwrap();
            // Oracle: sorted unique ids, then a filtering mean per id.
            let mut unique: Vec<&String> = ids.iter().collect();
            unique.sort();
            unique.dedup();
            assert_eq!(p.len(), unique.len());
            for (k, id) in unique.iter().enumerate() {
                let members: Vec<usize> =
                    (0..n).filter(|&i| ids[i] == **id).collect();
                let pm: f64 =
                    members.iter().map(|&i| preds[i]).sum::<f64>() / members.len() as f64;
                let tm: f64 =
                    members.iter().map(|&i| targets[i]).sum::<f64>() / members.len() as f64;
                assert!((p[k] - pm).abs() < 1e-12);
                assert!((t[k] - tm).abs() < 1e-12);
            }
        }
    }

    fn tiny_corpus() -> Corpus {
        // Two systems, four utterances, distinct MOS values.
        let mut utts = Vec::new();
        for (i, scores) in [[1u8, 2], [2, 3], [3, 4], [4, 5]].iter().enumerate() {
            let id = format!("u{i}");
            let sys = if i < 2 { "sysA" } else { "sysB" };
            let ratings: Vec<Rating> = scores
                .iter()
                .enumerate()
                .map(|(j, &s)| Rating::new(id.clone(), sys, j as u32 + 1, s).unwrap())
                .collect();
            utts.push(UtteranceRecord::new(id, sys, format!("u{i}.feat"), ratings).unwrap());
        }
        Corpus::new(SplitTag::Test, 2, utts).unwrap()
    }

    #[test]
    fn evaluate_perfect_and_constant_predictors() {
        let corpus = tiny_corpus();
        let (report, rows) = evaluate(&corpus, |u| Ok(u.mos.unwrap())).unwrap();
        assert_eq!(report.utt.mse, 0.0);
        assert!((report.utt.lcc - 1.0).abs() < 1e-12);
        assert!((report.utt.srcc - 1.0).abs() < 1e-12);
        assert!((report.utt.ktau - 1.0).abs() < 1e-12);
        assert!((report.sys.lcc - 1.0).abs() < 1e-12);
        assert_eq!(report.n_utt, 4);
        assert_eq!(report.n_sys, 2);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].true_mos, rows[0].pred_mos);

        let err = evaluate(&corpus, |_| Ok(3.0)).unwrap_err();
        assert!(matches!(err, Error::UndefinedCorrelation(_)), "{err}");
    }

    #[test]
    fn single_utterance_systems_collapse_levels() {
        // When every system has exactly one utterance the two levels see
        // the same pairs, so all metrics agree.
        let mut utts = Vec::new();
        for (i, scores) in [[1u8, 3], [2, 3], [5, 4], [4, 5]].iter().enumerate() {
            let id = format!("u{i}");
            let sys = format!("sys{i}");
            let ratings: Vec<Rating> = scores
                .iter()
                .enumerate()
                .map(|(j, &s)| Rating::new(id.clone(), sys.clone(), j as u32 + 1, s).unwrap())
                .collect();
            utts.push(UtteranceRecord::new(id, sys, format!("u{i}.feat"), ratings).unwrap());
        }
        let corpus = Corpus::new(SplitTag::Test, 2, utts).unwrap();
        let (report, _) = evaluate(&corpus, |u| Ok(5.5 - u.mos.unwrap())).unwrap();
        assert!((report.utt.mse - report.sys.mse).abs() < 1e-12);
        assert!((report.utt.lcc - report.sys.lcc).abs() < 1e-12);
        assert!((report.utt.srcc - report.sys.srcc).abs() < 1e-12);
        assert!((report.utt.ktau - report.sys.ktau).abs() < 1e-12);
    }
}
