//! Measurements on finished runs: Cauchy tails of noise partial sums,
//! maximal-inequality ratios, decay fits and cross-seed summaries.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::DiagnosticsError;
use crate::noise::NoiseModel;
use crate::rng::replication_seed;
use crate::sa::Trajectory;
use crate::schedule::StepSchedule;
use crate::series::{dyadic_checkpoints, ols_slope, CompensatedSum};
use crate::space::{GridFunction, SpaceDescriptor};

/// Replications below this are rejected by the Monte Carlo estimators.
pub const MIN_REPLICATIONS: usize = 1000;

/// `max_{j <= m <= n <= j + window} ||S_{n+1} - S_m||` where
/// `partial_sums[i] = S_i`.
pub fn tail_sup(
    partial_sums: &[GridFunction],
    j: usize,
    window: usize,
    space: &SpaceDescriptor,
) -> Result<f64, DiagnosticsError> {
    let end = j + window + 1;
    if end >= partial_sums.len() {
        return Err(DiagnosticsError::WindowOutOfRange {
            start: j,
            end,
            available: partial_sums.len(),
        });
    }
    let mut best = 0.0f64;
    for m in j..=j + window {
        for n in m..=j + window {
            best = best.max(space.distance(&partial_sums[n + 1], &partial_sums[m]));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TailVerdict {
    Cauchy,
    NotCauchy,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailSupReport {
    /// `window = window_factor * j`.
    pub window_factor: usize,
    /// `(j, tail sup from j)`.
    pub checkpoints: Vec<(usize, f64)>,
    pub verdict: TailVerdict,
}

/// Tail sups at `j = 1, 2, 4, ...` with window `2 j`, as far as the data
/// reaches. Small final sups mean Cauchy; sups that fail to halve from
/// the first to the last `j` mean not Cauchy.
pub fn tail_sup_report(
    partial_sums: &[GridFunction],
    space: &SpaceDescriptor,
    tolerance: f64,
) -> Result<TailSupReport, DiagnosticsError> {
    let factor = 2;
    let mut checkpoints = Vec::new();
    let mut j = 1;
    while j + factor * j + 1 < partial_sums.len() {
        checkpoints.push((j, tail_sup(partial_sums, j, factor * j, space)?));
        j *= 2;
    }
    if checkpoints.len() < 2 {
        return Err(DiagnosticsError::TooFewPoints {
            needed: 2,
            found: checkpoints.len(),
        });
    }
    let first = checkpoints[0].1;
    let last = checkpoints[checkpoints.len() - 1].1;
    let verdict = if last < tolerance {
        TailVerdict::Cauchy
    } else if last >= 0.5 * first {
        TailVerdict::NotCauchy
    } else {
        TailVerdict::Inconclusive
    };
    Ok(TailSupReport {
        window_factor: factor,
        checkpoints,
        verdict,
    })
}

/// Mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub standard_error: f64,
    pub replications: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().copied().collect::<CompensatedSum>().value() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            mean,
            standard_error: (var / n).sqrt(),
            replications: xs.len(),
        }
    }
}

/// `E ||sum_{k=m}^{n} alpha_k Z_k||^2` by Monte Carlo, replication `r`
/// using seed `replication_seed(seed, r)`.
pub fn mean_square_increment(
    noise: &NoiseModel,
    schedule: &StepSchedule,
    m: usize,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<Estimate, DiagnosticsError> {
    if replications < MIN_REPLICATIONS {
        return Err(DiagnosticsError::TooFewReplications {
            needed: MIN_REPLICATIONS,
            found: replications,
        });
    }
    let space = noise.space();
    let xs: Vec<f64> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let s = replication_seed(seed, r);
            let mut acc = space.zeros();
            for k in m..=n {
                acc.axpy(schedule.alpha(k), &noise.sample(k, s));
            }
            space.norm(&acc).powi(2)
        })
        .collect();
    Ok(Estimate::from_samples(&xs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoobEstimate {
    /// `E[max_t |M_t|^2] / E[|M_1|^2]`.
    pub ratio: f64,
    /// Delta-method standard error of the ratio.
    pub standard_error: f64,
    pub replications: usize,
}

/// Empirical maximal-inequality ratio for the sample paths of `model`,
/// read as martingales in `t`. Doob's inequality bounds it by 4.
pub fn doob_ratio(
    model: &NoiseModel,
    replications: usize,
    seed: u64,
) -> Result<DoobEstimate, DiagnosticsError> {
    if replications < MIN_REPLICATIONS {
        return Err(DiagnosticsError::TooFewReplications {
            needed: MIN_REPLICATIONS,
            found: replications,
        });
    }
    let pairs: Vec<(f64, f64)> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let path = model.sample(0, replication_seed(seed, r));
            let sq: Vec<f64> = path.magnitudes().map(|v| v * v).collect();
            (
                sq.iter().copied().fold(0.0, f64::max),
                *sq.last().unwrap_or(&0.0),
            )
        })
        .collect();
    let n = replications as f64;
    let sup = Estimate::from_samples(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let end = Estimate::from_samples(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    if end.mean == 0.0 {
        return Ok(DoobEstimate {
            ratio: 0.0,
            standard_error: 0.0,
            replications,
        });
    }
    let ratio = sup.mean / end.mean;
    let cov = pairs
        .iter()
        .map(|(a, b)| (a - sup.mean) * (b - end.mean))
        .sum::<f64>()
        / (n - 1.0);
    let var_a = sup.standard_error.powi(2) * n;
    let var_b = end.standard_error.powi(2) * n;
    let var_ratio = (var_a - 2.0 * ratio * cov + ratio * ratio * var_b) / (end.mean * end.mean * n);
    Ok(DoobEstimate {
        ratio,
        standard_error: var_ratio.max(0.0).sqrt(),
        replications,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// Slope of `ln error` against `ln n`.
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least squares of `ln error_n` on `ln n` over `n >= max(from_index, 1)`,
/// skipping non-positive errors.
pub fn decay_fit(error_curve: &[f64], from_index: usize) -> Result<DecayFit, DiagnosticsError> {
    let pts: Vec<(f64, f64)> = error_curve
        .iter()
        .enumerate()
        .skip(from_index.max(1))
        .filter(|(_, e)| **e > 0.0 && e.is_finite())
        .map(|(n, e)| ((n as f64).ln(), e.ln()))
        .collect();
    if pts.len() < 10 {
        return Err(DiagnosticsError::TooFewPoints {
            needed: 10,
            found: pts.len(),
        });
    }
    let rate = ols_slope(&pts);
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let intercept = my - rate * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - rate * p.0).powi(2))
        .sum();
    let r_squared = if ss_tot <= 1e-300 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(DecayFit {
        rate,
        intercept,
        r_squared,
        points: pts.len(),
    })
}

/// Linearly interpolated sample quantile, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckpointSummary {
    pub n: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Error quartiles across runs at the dyadic checkpoints of the shortest run.
pub fn checkpoint_summary(runs: &[Trajectory]) -> Vec<CheckpointSummary> {
    let Some(len) = runs.iter().map(|t| t.error_curve.len()).min() else {
        return Vec::new();
    };
    dyadic_checkpoints(len - 1)
        .into_iter()
        .map(|n| {
            let errs: Vec<f64> = runs.iter().map(|t| t.error_curve[n]).collect();
            CheckpointSummary {
                n,
                q25: quantile(&errs, 0.25),
                median: median(&errs),
                q75: quantile(&errs, 0.75),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[CheckpointSummary]) -> String {
    let mut out = String::from("n,q25,median,q75\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.n,
            crate::fmt_f64(r.q25),
            crate::fmt_f64(r.median),
            crate::fmt_f64(r.q75)
        );
    }
    out
}

/// Two-column plot data.
pub fn two_column_csv(header: (&str, &str), rows: impl IntoIterator<Item = (f64, f64)>) -> String {
    let mut out = format!("{},{}\n", header.0, header.1);
    for (x, y) in rows {
        let _ = writeln!(out, "{},{}", crate::fmt_f64(x), crate::fmt_f64(y));
    }
    out
}
