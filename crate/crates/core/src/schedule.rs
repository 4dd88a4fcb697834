//! Step-size sequences `alpha_n` and their Robbins-Monro checks.

use serde::{Deserialize, Serialize};

use crate::error::ScheduleError;
use crate::series::{analyze_series, SeriesReport, SeriesThresholds, Verdict};

/// A deterministic `(0, 1)`-valued step-size sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `alpha_n = a / (n + b)^q`.
    PowerLaw {
        a: f64,
        b: f64,
        q: f64,
    },
    /// `alpha_n = 1 / ((n + 2) ln(n + 2))`.
    LogHarmonic,
    Constant {
        a: f64,
    },
    Custom {
        values: Vec<f64>,
    },
}

impl StepSchedule {
    pub fn power_law(a: f64, b: f64, q: f64) -> Result<Self, ScheduleError> {
        Self::PowerLaw { a, b, q }.validated()
    }

    pub fn log_harmonic() -> Self {
        Self::LogHarmonic
    }

    pub fn constant(a: f64) -> Result<Self, ScheduleError> {
        Self::Constant { a }.validated()
    }

    pub fn custom(values: Vec<f64>) -> Result<Self, ScheduleError> {
        Self::Custom { values }.validated()
    }

    /// Checks that every `alpha_n` lies in `(0, 1)`.
    pub fn validated(self) -> Result<Self, ScheduleError> {
        match &self {
            Self::PowerLaw { a, b, q } => {
                if !(*a > 0.0 && *b > 0.0 && *q >= 0.0) || ![a, b, q].iter().all(|v| v.is_finite())
                {
                    return Err(ScheduleError::InvalidParameter(format!(
                        "power law needs a > 0, b > 0, q >= 0 (got a={a}, b={b}, q={q})"
                    )));
                }
                // Nonincreasing, so alpha_0 is the maximum.
                let a0 = self.alpha(0);
                if !(a0 < 1.0) {
                    return Err(ScheduleError::OutOfRange { n: 0, value: a0 });
                }
            }
            Self::LogHarmonic => {}
            Self::Constant { a } => {
                if !(*a > 0.0 && *a < 1.0) {
                    return Err(ScheduleError::OutOfRange { n: 0, value: *a });
                }
            }
            Self::Custom { values } => {
                if values.is_empty() {
                    return Err(ScheduleError::InvalidParameter(
                        "empty custom schedule".into(),
                    ));
                }
                if let Some((n, &value)) = values
                    .iter()
                    .enumerate()
                    .find(|(_, &v)| !(v > 0.0 && v < 1.0))
                {
                    return Err(ScheduleError::OutOfRange { n, value });
                }
            }
        }
        Ok(self)
    }

    /// `alpha_n`.
    ///
    /// # Panics
    /// For a custom schedule indexed past its end; see [`Self::checked_alpha`].
    pub fn alpha(&self, n: usize) -> f64 {
        match self {
            Self::PowerLaw { a, b, q } => {
                let base = n as f64 + b;
                if *q == 1.0 {
                    a / base
                } else {
                    a / base.powf(*q)
                }
            }
            Self::LogHarmonic => {
                let x = n as f64 + 2.0;
                1.0 / (x * x.ln())
            }
            Self::Constant { a } => *a,
            Self::Custom { values } => values[n],
        }
    }

    pub fn checked_alpha(&self, n: usize) -> Result<f64, ScheduleError> {
        match self {
            Self::Custom { values } if n >= values.len() => Err(ScheduleError::Exhausted {
                n,
                len: values.len(),
            }),
            _ => Ok(self.alpha(n)),
        }
    }

    /// Number of defined terms; `None` for infinite sequences.
    pub fn len_limit(&self) -> Option<usize> {
        match self {
            Self::Custom { values } => Some(values.len()),
            _ => None,
        }
    }

    /// `beta_n = theta alpha_n`.
    pub fn beta(&self, theta: f64, n: usize) -> f64 {
        theta * self.alpha(n)
    }

    /// Smallest `n < limit` with `theta alpha_n < 1`.
    pub fn start_index(&self, theta: f64, limit: usize) -> Option<usize> {
        let limit = self.len_limit().map_or(limit, |l| l.min(limit));
        (0..limit).find(|&n| self.beta(theta, n) < 1.0)
    }

    /// Whether `alpha_n -> 0`, decided from the closed form.
    pub fn vanishes(&self) -> bool {
        match self {
            Self::PowerLaw { q, .. } => *q > 0.0,
            Self::LogHarmonic => true,
            Self::Constant { .. } => false,
            Self::Custom { values } => values.last().is_some_and(|&v| v <= 1e-3 * values[0]),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::PowerLaw { a, b, q } => format!("power_law(a={a},b={b},q={q})"),
            Self::LogHarmonic => "log_harmonic".into(),
            Self::Constant { a } => format!("constant({a})"),
            Self::Custom { values } => format!("custom(len={})", values.len()),
        }
    }
}

/// Minimum horizon accepted by [`robbins_monro_report`].
pub const MIN_REPORT_HORIZON: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobbinsMonroReport {
    pub schedule: String,
    pub n_max: usize,
    /// `sum alpha_n`; must diverge.
    pub sum_alpha: SeriesReport,
    /// `sum alpha_n^2`; must converge.
    pub sum_alpha_sq: SeriesReport,
    /// `alpha_n -> 0`.
    pub vanishing: bool,
}

impl RobbinsMonroReport {
    pub fn divergent_sum_holds(&self) -> bool {
        self.sum_alpha.verdict == Verdict::Diverges
    }

    pub fn square_summable_holds(&self) -> bool {
        self.sum_alpha_sq.verdict == Verdict::Converges
    }

    /// Human-readable list of the conditions the schedule fails.
    pub fn violations(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if !self.vanishing {
            v.push("alpha_n does not tend to 0");
        }
        if self.sum_alpha.verdict == Verdict::Converges {
            v.push("sum alpha_n converges");
        }
        if self.sum_alpha_sq.verdict == Verdict::Diverges {
            v.push("sum alpha_n^2 diverges");
        }
        v
    }

    /// One JSON record per dyadic checkpoint, then a verdict record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (a, b) in self
            .sum_alpha
            .checkpoints
            .iter()
            .zip(&self.sum_alpha_sq.checkpoints)
        {
            let rec = serde_json::json!({
                "checkpoint": a.n,
                "partial_sum_alpha": a.partial_sum,
                "partial_sum_alpha_sq": b.partial_sum,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        let rec = serde_json::json!({
            "schedule": self.schedule,
            "n_max": self.n_max,
            "verdict_sum_alpha": self.sum_alpha.verdict,
            "verdict_sum_alpha_sq": self.sum_alpha_sq.verdict,
            "vanishing": self.vanishing,
        });
        out.push_str(&rec.to_string());
        out.push('\n');
        out
    }
}

/// Partial sums of `alpha_n` and `alpha_n^2` with heuristic verdicts.
pub fn robbins_monro_report(
    s: &StepSchedule,
    n_max: usize,
) -> Result<RobbinsMonroReport, ScheduleError> {
    robbins_monro_report_with(s, n_max, &SeriesThresholds::default())
}

pub fn robbins_monro_report_with(
    s: &StepSchedule,
    n_max: usize,
    thresholds: &SeriesThresholds,
) -> Result<RobbinsMonroReport, ScheduleError> {
    if n_max < MIN_REPORT_HORIZON {
        return Err(ScheduleError::InvalidParameter(format!(
            "report horizon must be at least {MIN_REPORT_HORIZON}, got {n_max}"
        )));
    }
    if let Some(len) = s.len_limit() {
        if len < n_max {
            return Err(ScheduleError::Exhausted { n: n_max - 1, len });
        }
    }
    Ok(RobbinsMonroReport {
        schedule: s.label(),
        n_max,
        sum_alpha: analyze_series(|n| s.alpha(n), n_max, thresholds),
        sum_alpha_sq: analyze_series(
            |n| {
                let a = s.alpha(n);
                a * a
            },
            n_max,
            thresholds,
        ),
        vanishing: s.vanishes(),
    })
}
