//! Finite-horizon heuristics for the summability of non-negative series.
//!
//! No finite computation decides convergence of a series. The verdicts here
//! combine three signals computed from compensated partial sums at dyadic
//! checkpoints `n = 1, 2, 4, ...`:
//!
//! * growth of the partial sum past a divergence threshold,
//! * the dyadic block sums `B_k = S(2^{k+1}) - S(2^k)`, which by Cauchy
//!   condensation decide summability of monotone terms; their decay
//!   exponent `s` in `B_k ~ k^{-s}` is fitted over the last blocks and
//!   compared against `1`,
//! * a Cauchy tail estimate (the extrapolated remainder of the series).

use serde::Serialize;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        iter.into_iter().for_each(|x| s.add(x));
        s
    }
}

/// Dyadic indices `0, 1, 2, 4, ...` up to `n`, always ending at `n`.
pub fn dyadic_checkpoints(n: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut c = 1;
    while c < n {
        out.push(c);
        c *= 2;
    }
    if n > 0 {
        out.push(n);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Converges,
    Diverges,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesThresholds {
    /// Partial sums beyond this count as divergent growth.
    pub divergence: f64,
    /// Cauchy tails below this count as converged.
    pub tail_tolerance: f64,
    /// Condensation exponents at or above this count as summable.
    pub converge_exponent: f64,
    /// Condensation exponents at or below this count as non-summable.
    pub diverge_exponent: f64,
    /// Number of trailing dyadic blocks used in the exponent fit.
    pub fit_blocks: usize,
}

impl Default for SeriesThresholds {
    fn default() -> Self {
        Self {
            divergence: 1e3,
            tail_tolerance: 1e-6,
            converge_exponent: 1.5,
            diverge_exponent: 1.1,
            fit_blocks: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesCheckpoint {
    /// Number of summed terms.
    pub n: usize,
    pub partial_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesReport {
    pub checkpoints: Vec<SeriesCheckpoint>,
    /// Sum of the last dyadic block.
    pub last_block: f64,
    /// Fitted `s` in `B_k ~ k^{-s}`, when enough positive blocks exist.
    pub condensation_exponent: Option<f64>,
    /// Extrapolated remainder beyond the last checkpoint (`inf` when the
    /// fit indicates divergence).
    pub tail_estimate: f64,
    pub verdict: Verdict,
}

impl SeriesReport {
    pub fn total(&self) -> f64 {
        self.checkpoints.last().map_or(0.0, |c| c.partial_sum)
    }
}

/// Analyzes `sum_{k < n_max} a_k` for non-negative terms `a_k = term(k)`.
pub fn analyze_series(
    term: impl Fn(usize) -> f64,
    n_max: usize,
    thresholds: &SeriesThresholds,
) -> SeriesReport {
    let marks = dyadic_checkpoints(n_max);
    let mut acc = CompensatedSum::new();
    let mut checkpoints = Vec::with_capacity(marks.len());
    let mut next = 0;
    for k in 0..=n_max {
        while next < marks.len() && marks[next] == k {
            checkpoints.push(SeriesCheckpoint {
                n: k,
                partial_sum: acc.value(),
            });
            next += 1;
        }
        if k < n_max {
            acc.add(term(k));
        }
    }

    // Full dyadic blocks [2^k, 2^{k+1}) for k >= 0.
    let dyadic: Vec<&SeriesCheckpoint> = checkpoints
        .iter()
        .filter(|c| c.n >= 1 && c.n.is_power_of_two())
        .collect();
    let blocks: Vec<(usize, f64)> = dyadic
        .windows(2)
        .enumerate()
        .map(|(k, w)| (k, w[1].partial_sum - w[0].partial_sum))
        .collect();
    let total = checkpoints.last().map_or(0.0, |c| c.partial_sum);
    let last_block = blocks.last().map_or(0.0, |b| b.1);

    let fit: Vec<(usize, f64)> = blocks
        .iter()
        .copied()
        .filter(|&(k, _)| k >= 2)
        .rev()
        .take(thresholds.fit_blocks)
        .collect();
    let exponent = if fit.len() >= 3 && fit.iter().all(|&(_, b)| b > 0.0) {
        let pts: Vec<(f64, f64)> = fit
            .iter()
            .map(|&(k, b)| ((k as f64).ln(), b.ln()))
            .collect();
        Some(-ols_slope(&pts))
    } else {
        None
    };
    let tail_estimate = match (exponent, blocks.last()) {
        (Some(s), Some(&(k, b))) if s > 1.0 => {
            // sum_{j > k} b (j/k)^{-s} ~ b k^s (k + 1/2)^{1-s} / (s - 1)
            let k = k as f64;
            b * k.powf(s) * (k + 0.5).powf(1.0 - s) / (s - 1.0)
        }
        (Some(_), _) => f64::INFINITY,
        (None, _) => last_block,
    };

    let verdict = if total > thresholds.divergence && last_block > 0.0 {
        Verdict::Diverges
    } else if blocks.len() >= 2 && last_block == 0.0 {
        Verdict::Converges
    } else {
        match exponent {
            Some(s) if s <= thresholds.diverge_exponent => Verdict::Diverges,
            Some(s) if s >= thresholds.converge_exponent => Verdict::Converges,
            _ if tail_estimate < thresholds.tail_tolerance => Verdict::Converges,
            _ => Verdict::Inconclusive,
        }
    };

    SeriesReport {
        checkpoints,
        last_block,
        condensation_exponent: exponent,
        tail_estimate,
        verdict,
    }
}

/// Least-squares slope of `y` on `x`.
pub(crate) fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}
