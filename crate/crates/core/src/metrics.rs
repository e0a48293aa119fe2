//! Discrimination, calibration, resampling and dispersion metrics.
//!
//! Conventions: AUROC counts ties as one half; ECE uses equal-width bins with
//! the top edge folded into the last bin; standard deviations divide by the
//! count (population convention).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_from;
use crate::types::{Graded, StopReason, Trajectory};

pub const DEFAULT_ECE_BINS: usize = 10;
pub const DEFAULT_BOOTSTRAP_B: usize = 5000;
/// Fraction of items in each of the Low and High bands.
pub const BAND_FRACTION: f64 = 0.3;
pub const MIN_BAND_ITEMS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no observations")]
    Empty,
    #[error("AUROC needs at least one positive and one negative label")]
    DegenerateLabels,
    #[error("score at position {0} is not in [0, 1]")]
    ScoreOutOfRange(usize),
    #[error("bin count must be at least 1")]
    InvalidBins,
    #[error("resample count must be at least 1")]
    InvalidResamples,
    #[error("band split needs at least {min} items, got {n}")]
    TooFew { n: usize, min: usize },
    #[error("no trajectory has two or more attempts")]
    NoMultiAttempt,
    #[error("problem {0} has no gold answer")]
    MissingGold(String),
}

fn check_pair(scores: &[f64], labels: &[bool]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// 1-based ranks with tied values sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Area under the ROC curve as the Mann–Whitney statistic.
///
/// Scores may be any finite reals; only their order matters.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_pair(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::DegenerateLabels);
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Bin index for a unit-interval score.
pub fn bin_index(score: f64, n_bins: usize) -> usize {
    ((score * n_bins as f64).floor() as usize).min(n_bins - 1)
}

/// Expected calibration error over `n_bins` equal-width bins on `[0, 1]`.
pub fn ece(scores: &[f64], labels: &[bool], n_bins: usize) -> Result<f64, MetricError> {
    check_pair(scores, labels)?;
    if n_bins == 0 {
        return Err(MetricError::InvalidBins);
    }
    let mut count = vec![0usize; n_bins];
    let mut score_sum = vec![0.0; n_bins];
    let mut label_sum = vec![0.0; n_bins];
    for (i, (&s, &y)) in scores.iter().zip(labels).enumerate() {
        if !(0.0..=1.0).contains(&s) {
            return Err(MetricError::ScoreOutOfRange(i));
        }
        let b = bin_index(s, n_bins);
        count[b] += 1;
        score_sum[b] += s;
        label_sum[b] += f64::from(u8::from(y));
    }
    let n = scores.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let c = count[b] as f64;
            (c / n) * (score_sum[b] / c - label_sum[b] / c).abs()
        })
        .sum())
}

/// Percentile with linear interpolation between order statistics of a
/// sorted sample (`q` in `[0, 1]`).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile bootstrap 95% interval of the mean, in percent.
pub fn bootstrap_ci(correct: &[bool], b: usize, seed: u64) -> Result<(f64, f64), MetricError> {
    if correct.is_empty() {
        return Err(MetricError::Empty);
    }
    if b == 0 {
        return Err(MetricError::InvalidResamples);
    }
    let n = correct.len();
    let mut rng = rng_from(seed);
    let mut means: Vec<f64> = (0..b)
        .map(|_| {
            let hits = (0..n).filter(|_| correct[rng.random_range(0..n)]).count();
            hits as f64 / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    Ok((100.0 * percentile_sorted(&means, 0.025), 100.0 * percentile_sorted(&means, 0.975)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    Low,
    Medium,
    High,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Low, Band::Medium, Band::High];
}

/// Assign the lowest ⌊0.3n⌋ scores to Low, the highest ⌊0.3n⌋ to High and
/// the rest to Medium. Ties are ordered by original index.
pub fn band_split(scores: &[f64]) -> Result<Vec<Band>, MetricError> {
    let n = scores.len();
    if n < MIN_BAND_ITEMS {
        return Err(MetricError::TooFew { n, min: MIN_BAND_ITEMS });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let edge = (BAND_FRACTION * n as f64).floor() as usize;
    let mut bands = vec![Band::Medium; n];
    for (rank, &idx) in order.iter().enumerate() {
        if rank < edge {
            bands[idx] = Band::Low;
        } else if rank >= n - edge {
            bands[idx] = Band::High;
        }
    }
    Ok(bands)
}

pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len().is_multiple_of(2) { (sorted[mid - 1] + sorted[mid]) / 2.0 } else { sorted[mid] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JolDispersion {
    /// Median over multi-attempt trajectories of the within-trajectory JOL std.
    pub median_within_std: f64,
    /// Std of first-attempt JOL across all trajectories.
    pub across_std: f64,
    pub n_multi_attempt: usize,
    pub n_trajectories: usize,
}

impl JolDispersion {
    /// `across / within`, absent when the within value is zero.
    pub fn ratio(&self) -> Option<f64> {
        (self.median_within_std > 0.0).then(|| self.across_std / self.median_within_std)
    }
}

pub fn jol_dispersion<'a, I>(trajectories: I) -> Result<JolDispersion, MetricError>
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    let mut within = Vec::new();
    let mut first = Vec::new();
    for t in trajectories {
        let jols: Vec<f64> = t.attempts.iter().map(|a| a.jol.jol_score.get()).collect();
        if let Some(&j1) = jols.first() {
            first.push(j1);
        }
        if jols.len() >= 2 {
            within.push(population_std(&jols));
        }
    }
    let median_within_std = median(&within).ok_or(MetricError::NoMultiAttempt)?;
    Ok(JolDispersion {
        median_within_std,
        across_std: population_std(&first),
        n_multi_attempt: within.len(),
        n_trajectories: first.len(),
    })
}

/// Among trajectories trusted at `K = 1`, the fraction whose first attempt is
/// correct. `None` when no trajectory stopped that way.
pub fn early_stop_hit_rate(records: &[Graded]) -> Result<Option<f64>, MetricError> {
    let mut stopped = 0usize;
    let mut hits = 0usize;
    for r in records {
        let t = &r.trajectory;
        if t.k() == 1 && t.stop_reason == StopReason::Trusted {
            let grading = r.grading.as_ref().ok_or_else(|| MetricError::MissingGold(t.problem_id.clone()))?;
            stopped += 1;
            if grading.attempts.first().copied().unwrap_or(false) {
                hits += 1;
            }
        }
    }
    Ok((stopped > 0).then(|| hits as f64 / stopped as f64))
}

/// Fraction of problems where at least one attempt is correct.
pub fn oracle_at_k(records: &[Graded]) -> Result<f64, MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut hits = 0usize;
    for r in records {
        let grading = r.grading.as_ref().ok_or_else(|| MetricError::MissingGold(r.trajectory.problem_id.clone()))?;
        if grading.attempts.iter().any(|&c| c) {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}
