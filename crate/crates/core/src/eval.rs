//! Cross-validation, chance levels, per-task aggregation, the permutation
//! significance test and the first/last-quarter comparison.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::model::{
    context_penalties, fit_prepared, prepare_use_session, FittedPipeline, Normalization,
    PipelineConfig, PreparedEpochs, WorkloadIndexSeries,
};
use crate::sigio::{EpochSet, Recording, TaskIntervals};
use crate::spatial::{PenaltyMatrix, Regularization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Held-out windows per fold as `[class 0, class 1]`.
    pub fold_counts: Vec<[usize; 2]>,
    pub k: usize,
    pub seed: u64,
}

/// Stratified test folds from a seeded shuffle of each class.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::data(format!(
                "class {class} has {} windows, fewer than the {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            folds[j % k].push(i);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Runs `predict(train, test)` over stratified folds and scores the predicted labels.
pub fn cross_validate_with<F>(labels: &[u8], k: usize, seed: u64, mut predict: F) -> Result<CvResult>
where
    F: FnMut(&[usize], &[usize]) -> Result<Vec<u8>>,
{
    let folds = stratified_folds(labels, k, seed)?;
    let mut fold_accuracies = Vec::with_capacity(k);
    let mut fold_counts = Vec::with_capacity(k);
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let pred = predict(&train, test)?;
        if pred.len() != test.len() {
            return Err(Error::data("one prediction per held-out window is required"));
        }
        let correct = test.iter().zip(&pred).filter(|(&i, &p)| labels[i] == p).count();
        fold_accuracies.push(correct as f64 / test.len() as f64);
        let ones = test.iter().filter(|&&i| labels[i] == 1).count();
        fold_counts.push([test.len() - ones, ones]);
    }
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / k as f64;
    Ok(CvResult {
        fold_accuracies,
        mean_accuracy,
        fold_counts,
        k,
        seed,
    })
}

/// Full-pipeline k-fold CV: CSP, features and sLDA are fit inside each
/// training fold only.
pub fn cross_validate(
    epochs: &EpochSet,
    k: usize,
    cfg: &PipelineConfig,
    seed: u64,
    use_recording: Option<&Recording>,
) -> Result<CvResult> {
    let labels = epochs
        .labels()
        .ok_or_else(|| Error::data("cross-validation needs labeled epochs"))?
        .to_vec();
    let prep = PreparedEpochs::new(epochs, cfg, None)?;
    let use_prep = match (cfg.regularization, use_recording) {
        (Regularization::None, _) => None,
        (Regularization::Invariant { .. }, Some(rec)) => {
            Some(prepare_use_session(rec, cfg, prep.eeg_labels())?)
        }
        (Regularization::Invariant { .. }, None) => {
            return Err(Error::invalid("invariant CSP requires a use-context recording"));
        }
    };
    cross_validate_prepared(&prep, &labels, k, cfg, seed, use_prep.as_ref())
}

pub fn cross_validate_prepared(
    prep: &PreparedEpochs,
    labels: &[u8],
    k: usize,
    cfg: &PipelineConfig,
    seed: u64,
    use_prep: Option<&PreparedEpochs>,
) -> Result<CvResult> {
    cross_validate_with(labels, k, seed, |train, test| {
        let penalties = fold_penalties(prep, train, cfg, use_prep)?;
        let fitted = fit_prepared(prep, train, labels, cfg, penalties.as_deref())?;
        Ok(fitted
            .scores(prep, test, cfg.power_scale)?
            .into_iter()
            .map(|s| u8::from(s > 0.0))
            .collect())
    })
}

fn fold_penalties(
    prep: &PreparedEpochs,
    train: &[usize],
    cfg: &PipelineConfig,
    use_prep: Option<&PreparedEpochs>,
) -> Result<Option<Vec<PenaltyMatrix>>> {
    match (cfg.regularization, use_prep) {
        (Regularization::None, _) => Ok(None),
        (Regularization::Invariant { k, .. }, Some(u)) => Ok(Some(context_penalties(prep, train, u, k)?)),
        (Regularization::Invariant { .. }, None) => {
            Err(Error::invalid("invariant CSP requires use-context data"))
        }
    }
}

/// Smallest accuracy `k/n` with `P(X ≥ k) ≤ alpha` for `X ~ Binomial(n, 1/2)`.
///
/// Errors when even a perfect score is not significant at this `n`.
pub fn chance_level(n_trials: u64, alpha: f64) -> Result<f64> {
    if n_trials == 0 {
        return Err(Error::invalid("chance level needs at least one trial"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let ln_half_n = n_trials as f64 * std::f64::consts::LN_2;
    let mut tail = 0.0;
    let mut threshold = None;
    for k in (0..=n_trials).rev() {
        tail += (ln_binomial(n_trials, k) - ln_half_n).exp();
        if tail > alpha {
            break;
        }
        threshold = Some(k);
    }
    threshold
        .map(|k| k as f64 / n_trials as f64)
        .ok_or_else(|| {
            Error::invalid(format!(
                "no accuracy is significant at alpha = {alpha} with {n_trials} trials"
            ))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: u32,
    /// Mean normalized index; absent for excluded tasks.
    pub mean: Option<f64>,
    pub n_windows: usize,
    pub included: bool,
}

/// Windows of `series` whose start time lies in the task interval.
fn task_windows(series: &WorkloadIndexSeries, start_s: f64, end_s: f64) -> Vec<usize> {
    let eps = 1e-9;
    (0..series.len())
        .filter(|&i| series.t_start[i] >= start_s - eps && series.t_start[i] < end_s - eps)
        .collect()
}

fn series_end(series: &WorkloadIndexSeries) -> f64 {
    series.t_start.last().map_or(0.0, |t| t + series.window_seconds)
}

/// Mean workload index per task. Tasks marked excluded, out of the series'
/// range, or without any window are reported without a mean.
pub fn task_average(series: &WorkloadIndexSeries, tasks: &TaskIntervals, rate_hz: f64) -> Vec<TaskSummary> {
    let end = series_end(series);
    tasks
        .tasks()
        .iter()
        .map(|t| {
            let (s, e) = (t.start as f64 / rate_hz, t.end as f64 / rate_hz);
            let idx = task_windows(series, s, e);
            let in_range = e <= end + 1e-9;
            if t.included && !in_range {
                log::warn!("task {} ends at {e:.2} s, beyond the series end {end:.2} s; excluded", t.task_id);
            }
            let included = t.included && in_range && !idx.is_empty();
            let mean = included.then(|| idx.iter().map(|&i| series.index[i]).sum::<f64>() / idx.len() as f64);
            TaskSummary {
                task_id: t.task_id,
                mean,
                n_windows: idx.len(),
                included,
            }
        })
        .collect()
}

pub fn task_summaries_csv(summaries: &[TaskSummary]) -> String {
    let mut out = String::from("task_id,included,n_windows,mean_index\n");
    for s in summaries {
        let mean = s.mean.map(|m| format!("{m:?}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", s.task_id, u8::from(s.included), s.n_windows, mean);
    }
    out
}

/// Distance of one vector from a multivariate normal fitted to samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvnFit {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub mahalanobis_sq: f64,
    /// Chi-squared upper tail with one degree of freedom per coordinate.
    pub p_value: f64,
    /// `(1 + #{samples at least as far}) / (1 + n)`.
    pub p_empirical: f64,
}

/// Fits the sample mean and covariance (plus a `1e-9·trace/d` ridge) to
/// `samples` and scores `x` against it.
pub fn mvn_distance(x: &[f64], samples: &[Vec<f64>]) -> Result<MvnFit> {
    let d = x.len();
    let n = samples.len();
    if d == 0 || n < 2 {
        return Err(Error::invalid("need a non-empty vector and at least two samples"));
    }
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::data("sample vectors differ in length"));
    }
    let s = DMatrix::from_fn(n, d, |i, j| samples[i][j]);
    let mean: DVector<f64> = s.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| s[(i, j)] - mean[j]);
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    let ridge = 1e-9 * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    let chol = cov.clone().cholesky().ok_or_else(|| {
        Error::numerical("permutation covariance is singular; run more permutations")
    })?;
    let dist = |v: &DVector<f64>| {
        let r = v - &mean;
        r.dot(&chol.solve(&r))
    };
    let real = DVector::from_column_slice(x);
    let mahalanobis_sq = dist(&real).max(0.0);
    if !mahalanobis_sq.is_finite() {
        return Err(Error::numerical("permutation covariance is singular; run more permutations"));
    }
    let chi = ChiSquared::new(d as f64).map_err(|e| Error::numerical(e.to_string()))?;
    let p_value = if mahalanobis_sq == 0.0 { 1.0 } else { chi.sf(mahalanobis_sq) };
    let beyond = (0..n)
        .filter(|&i| dist(&s.row(i).transpose()) >= mahalanobis_sq)
        .count();
    Ok(MvnFit {
        mean: mean.iter().copied().collect(),
        covariance: (0..d).map(|i| cov.row(i).iter().copied().collect()).collect(),
        mahalanobis_sq,
        p_value,
        p_empirical: (1 + beyond) as f64 / (1 + n) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    /// Ids of the included tasks, the coordinates of every vector below.
    pub task_ids: Vec<u32>,
    pub real: Vec<f64>,
    pub permutation_vectors: Vec<Vec<f64>>,
    pub fit: MvnFit,
    pub n_permutations: usize,
    pub seed: u64,
}

impl PermutationResult {
    pub fn p_value(&self) -> f64 {
        self.fit.p_value
    }

    /// One row per permutation, then the real vector with `iteration = real`.
    pub fn vectors_csv(&self) -> String {
        let mut out = String::from("iteration");
        for id in &self.task_ids {
            let _ = write!(out, ",task_{id}");
        }
        out.push('\n');
        let rows = self
            .permutation_vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i.to_string(), v))
            .chain(std::iter::once(("real".to_string(), &self.real)));
        for (tag, v) in rows {
            out.push_str(&tag);
            for x in v {
                let _ = write!(out, ",{x:?}");
            }
            out.push('\n');
        }
        out
    }
}

pub const MIN_PERMUTATIONS: usize = 100;

/// Per-task mean index of a fitted pipeline over the prepared use session.
fn task_vector(
    fitted: &FittedPipeline,
    use_prep: &PreparedEpochs,
    cfg: &PipelineConfig,
    tasks: &TaskIntervals,
    rate_hz: f64,
    how: Normalization,
    task_ids: Option<&[u32]>,
) -> Result<(Vec<u32>, Vec<f64>)> {
    let all: Vec<usize> = (0..use_prep.n_windows()).collect();
    let raw = fitted.scores(use_prep, &all, cfg.power_scale)?;
    let series = WorkloadIndexSeries::new(use_prep.t_start().to_vec(), raw, cfg.window_seconds, how)?;
    let summaries = task_average(&series, tasks, rate_hz);
    let picked: Vec<&TaskSummary> = match task_ids {
        None => summaries.iter().filter(|s| s.included).collect(),
        Some(ids) => ids
            .iter()
            .map(|id| summaries.iter().find(|s| s.task_id == *id).expect("task ids come from the same intervals"))
            .collect(),
    };
    Ok((
        picked.iter().map(|s| s.task_id).collect(),
        picked.iter().map(|s| s.mean.unwrap_or(0.0)).collect(),
    ))
}

/// Retrains the whole pipeline on label-shuffled calibration data `n_perm`
/// times and compares the real per-task mean vector with the fitted null.
///
/// Iteration `i` shuffles with a generator seeded by `seed ^ i`; iterations
/// run in parallel and are assembled by index.
#[allow(clippy::too_many_arguments)]
pub fn permutation_test(
    calib: &EpochSet,
    use_recording: &Recording,
    tasks: &TaskIntervals,
    cfg: &PipelineConfig,
    n_perm: usize,
    seed: u64,
    how: Normalization,
) -> Result<PermutationResult> {
    if n_perm < MIN_PERMUTATIONS {
        return Err(Error::invalid(format!(
            "{n_perm} permutations are too few; use at least {MIN_PERMUTATIONS}"
        )));
    }
    let labels = calib
        .labels()
        .ok_or_else(|| Error::data("permutation test needs labeled calibration epochs"))?
        .to_vec();
    let prep = PreparedEpochs::new(calib, cfg, None)?;
    let use_prep = prepare_use_session(use_recording, cfg, prep.eeg_labels())?;
    let all: Vec<usize> = (0..prep.n_windows()).collect();
    let penalties = fold_penalties(&prep, &all, cfg, Some(&use_prep))?;
    let rate = use_recording.rate_hz();

    let real_fit = fit_prepared(&prep, &all, &labels, cfg, penalties.as_deref())?;
    let (task_ids, real) = task_vector(&real_fit, &use_prep, cfg, tasks, rate, how, None)?;
    if task_ids.len() < 2 {
        return Err(Error::data(format!(
            "permutation test needs at least 2 included tasks, found {}",
            task_ids.len()
        )));
    }

    let permutation_vectors = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
            let mut shuffled = labels.clone();
            shuffled.shuffle(&mut rng);
            let fit = fit_prepared(&prep, &all, &shuffled, cfg, penalties.as_deref())?;
            Ok(task_vector(&fit, &use_prep, cfg, tasks, rate, how, Some(&task_ids))?.1)
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = mvn_distance(&real, &permutation_vectors)?;
    Ok(PermutationResult {
        task_ids,
        real,
        permutation_vectors,
        fit,
        n_permutations: n_perm,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W−)` over the non-zero differences.
    pub statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    pub n_pairs: usize,
    pub exact: bool,
    /// Every difference was zero.
    pub degenerate: bool,
}

pub const WILCOXON_EXACT_MAX: usize = 12;

/// Two-sided Wilcoxon signed-rank test on paired differences.
///
/// Zero differences are dropped and tied magnitudes get mid-ranks. Up to
/// 12 pairs the p-value enumerates all sign assignments; above that the
/// normal approximation with tie and continuity corrections is used.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> WilcoxonResult {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n_pairs: 0,
            exact: true,
            degenerate: true,
        };
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| nz[a].abs().total_cmp(&nz[b].abs()));
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[order[j + 1]].abs() == nz[order[i]].abs() {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let w_plus: f64 = (0..n).filter(|&k| nz[k] > 0.0).map(|k| ranks[k]).sum();
    let total = n as f64 * (n as f64 + 1.0) / 2.0;
    let w = w_plus.min(total - w_plus);

    if n <= WILCOXON_EXACT_MAX {
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let wp: f64 = (0..n).filter(|&k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
            if wp.min(total - wp) <= w + 1e-9 {
                hits += 1;
            }
        }
        return WilcoxonResult {
            statistic: w,
            p_value: hits as f64 / (1u64 << n) as f64,
            n_pairs: n,
            exact: true,
            degenerate: false,
        };
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((mean - w).abs() - 0.5).max(0.0) / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    WilcoxonResult {
        statistic: w,
        p_value: (2.0 * std_normal.sf(z)).min(1.0),
        n_pairs: n,
        exact: false,
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterMeans {
    pub task_id: u32,
    pub first: f64,
    pub last: f64,
    pub windows_per_quarter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterResult {
    pub tasks: Vec<QuarterMeans>,
    pub test: WilcoxonResult,
}

impl QuarterResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_id,first_quarter,last_quarter,windows_per_quarter\n");
        for t in &self.tasks {
            let _ = writeln!(out, "{},{:?},{:?},{}", t.task_id, t.first, t.last, t.windows_per_quarter);
        }
        out
    }
}

/// First-quarter and last-quarter mean index of every included task with at
/// least 4 windows.
pub fn quarter_means(series: &WorkloadIndexSeries, tasks: &TaskIntervals, rate_hz: f64) -> Vec<QuarterMeans> {
    let summaries = task_average(series, tasks, rate_hz);
    tasks
        .tasks()
        .iter()
        .zip(&summaries)
        .filter(|(_, s)| s.included)
        .filter_map(|(t, _)| {
            let idx = task_windows(series, t.start as f64 / rate_hz, t.end as f64 / rate_hz);
            let q = idx.len() / 4;
            (q >= 1).then(|| {
                let mean = |w: &[usize]| w.iter().map(|&i| series.index[i]).sum::<f64>() / w.len() as f64;
                QuarterMeans {
                    task_id: t.task_id,
                    first: mean(&idx[..q]),
                    last: mean(&idx[idx.len() - q..]),
                    windows_per_quarter: q,
                }
            })
        })
        .collect()
}

/// Quarter means of one session, tested across its tasks.
pub fn quarter_compare(series: &WorkloadIndexSeries, tasks: &TaskIntervals, rate_hz: f64) -> Result<QuarterResult> {
    let means = quarter_means(series, tasks, rate_hz);
    quarter_test(means)
}

/// Pools quarter means from several sessions (e.g. participants) into one test.
pub fn quarter_test(means: Vec<QuarterMeans>) -> Result<QuarterResult> {
    if means.is_empty() {
        return Err(Error::data("quarter comparison needs an included task with at least 4 windows"));
    }
    let diffs: Vec<f64> = means.iter().map(|m| m.last - m.first).collect();
    Ok(QuarterResult {
        test: wilcoxon_signed_rank(&diffs),
        tasks: means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigio::TaskInterval;
    use approx::assert_relative_eq;

    #[test]
    fn chance_levels() {
        let c = chance_level(360, 0.01).unwrap();
        assert!((0.56..=0.58).contains(&c), "{c}");
        assert_eq!(c, 203.0 / 360.0);
        assert_eq!(chance_level(10, 0.01).unwrap(), 1.0);
        assert!(chance_level(10_000, 0.01).unwrap() < 0.52);
        assert!(chance_level(1, 0.01).is_err());
        assert!(chance_level(0, 0.01).is_err());
        assert!(chance_level(10, 1.5).is_err());
        let half = chance_level(360, 0.5).unwrap();
        assert!(half > 0.5 && half < 0.51, "{half}");
        // Exact values from an independent big-integer enumeration.
        assert_eq!(chance_level(320, 0.01).unwrap(), 182.0 / 320.0);
        assert_eq!(chance_level(160, 0.01).unwrap(), 96.0 / 160.0);
    }

    #[test]
    fn chance_level_monotone() {
        let mut prev = 1.0;
        for n in (20..400).step_by(7) {
            let c = chance_level(n, 0.01).unwrap();
            assert!(c <= prev + 0.03, "n = {n}");
            prev = prev.min(c);
            assert!(chance_level(n, 0.001).unwrap() >= c);
        }
        assert!(chance_level(4000, 0.01).unwrap() < chance_level(400, 0.01).unwrap());
    }

    #[test]
    fn fold_sizes_balanced() {
        let labels: Vec<u8> = (0..360).map(|i| u8::from(i >= 180)).collect();
        let folds = stratified_folds(&labels, 2, 7).unwrap();
        for f in &folds {
            let ones = f.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!((f.len() - ones, ones), (90, 90));
        }
        let labels: Vec<u8> = (0..23).map(|i| u8::from(i % 3 == 0)).collect();
        let folds = stratified_folds(&labels, 3, 1).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 2);
        assert!(stratified_folds(&[0, 0, 1], 2, 0).is_err());
    }

    #[test]
    fn constant_classifier_scores_majority_fraction() {
        let labels: Vec<u8> = (0..30).map(|i| u8::from(i < 20)).collect();
        let r = cross_validate_with(&labels, 2, 3, |_, test| Ok(vec![1; test.len()])).unwrap();
        let total: f64 = r
            .fold_accuracies
            .iter()
            .zip(&r.fold_counts)
            .map(|(a, c)| a * (c[0] + c[1]) as f64)
            .sum();
        assert_relative_eq!(total / 30.0, 20.0 / 30.0, epsilon = 1e-12);
    }

    #[test]
    fn perfect_predictor_scores_one() {
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let r = cross_validate_with(&labels, 4, 0, |_, test| Ok(test.iter().map(|&i| labels[i]).collect())).unwrap();
        assert_eq!(r.mean_accuracy, 1.0);
    }

    fn series(index: Vec<f64>) -> WorkloadIndexSeries {
        WorkloadIndexSeries {
            t_start: (0..index.len()).map(|i| i as f64).collect(),
            raw: index.clone(),
            index,
            window_seconds: 2.0,
        }
    }

    fn tasks(spec: &[(u32, usize, usize, bool)]) -> TaskIntervals {
        TaskIntervals::new(
            spec.iter()
                .map(|&(task_id, start, end, included)| TaskInterval { task_id, start, end, included })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn task_average_rules() {
        let s = series(vec![0.5; 20]);
        let t = tasks(&[(1, 0, 10, true), (2, 10, 20, false), (3, 30, 40, true)]);
        let out = task_average(&s, &t, 1.0);
        assert_eq!(out[0].mean, Some(0.5));
        assert_eq!(out[0].n_windows, 10);
        assert_eq!(out[1].mean, None);
        assert!(!out[1].included);
        assert!(!out[2].included && out[2].mean.is_none());
    }

    #[test]
    fn mvn_at_mean_is_not_significant() {
        let samples = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0], vec![-1.0, 1.0]];
        let fit = mvn_distance(&[0.5, 1.0], &samples).unwrap();
        assert!(fit.mahalanobis_sq < 1e-20);
        assert_eq!(fit.p_value, 1.0);
        let far = mvn_distance(&[50.0, -50.0], &samples).unwrap();
        assert!(far.p_value < 1e-6);
        assert_eq!(far.p_empirical, 1.0 / 5.0);
    }

    #[test]
    fn mvn_p_invariant_under_coordinate_permutation() {
        let samples: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let x = i as f64;
                vec![(x * 0.7).sin(), (x * 1.3).cos(), (x * 0.37).sin() * 2.0]
            })
            .collect();
        let real = [0.4, -0.2, 1.5];
        let a = mvn_distance(&real, &samples).unwrap();
        let perm = |v: &[f64]| vec![v[2], v[0], v[1]];
        let b = mvn_distance(&perm(&real), &samples.iter().map(|v| perm(v)).collect::<Vec<_>>()).unwrap();
        assert_relative_eq!(a.mahalanobis_sq, b.mahalanobis_sq, max_relative = 1e-10);
        assert_relative_eq!(a.p_value, b.p_value, max_relative = 1e-10);
    }

    #[test]
    fn wilcoxon_exact_six_positive() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 0.03125);
        assert!(r.exact);
    }

    #[test]
    fn wilcoxon_symmetric_and_degenerate() {
        let r = wilcoxon_signed_rank(&[1.0, -1.0, 1.0, -1.0, 2.0, -2.0]);
        assert_eq!(r.p_value, 1.0);
        let z = wilcoxon_signed_rank(&[0.0; 5]);
        assert!(z.degenerate);
        assert_eq!(z.p_value, 1.0);
    }

    // scipy.stats.wilcoxon(d, correction=True, method="approx") on
    // d = 0.5·i − 3.2, i = 1..=20; frozen.
    #[test]
    fn wilcoxon_normal_approximation() {
        let d: Vec<f64> = (1..=20).map(|i| i as f64 * 0.5 - 3.2).collect();
        let r = wilcoxon_signed_rank(&d);
        assert!(!r.exact);
        assert_eq!(r.statistic, WILCOXON_REF.0);
        assert_relative_eq!(r.p_value, WILCOXON_REF.1, max_relative = 1e-9);
    }

    const WILCOXON_REF: (f64, f64) = (36.0, 0.010549187712342279);

    #[test]
    fn quarters_of_rising_task() {
        let s = series((0..40).map(|i| i as f64 / 40.0).collect());
        let t = tasks(&[(1, 0, 20, true), (2, 20, 40, true), (3, 40, 42, true)]);
        let q = quarter_compare(&s, &t, 1.0).unwrap();
        assert_eq!(q.tasks.len(), 2);
        assert_eq!(q.tasks[0].windows_per_quarter, 5);
        assert_relative_eq!(q.tasks[0].first, 2.0 / 40.0, epsilon = 1e-12);
        assert_relative_eq!(q.tasks[0].last, 17.0 / 40.0, epsilon = 1e-12);
        let none = tasks(&[(1, 0, 3, true)]);
        assert!(quarter_compare(&s, &none, 1.0).is_err());
    }
}
