//! Noise models for the four convergence regimes, the truncation split
//! `Z = Z_hat + Z_bar + Z_tilde`, and three-series certificates.
//!
//! Every sampler is a pure function of `(model, n, seed)`: draw `n` (the
//! noise entering step `n`) uses the generator `rng::stream_rng(seed, n)`.
//! All shipped models are symmetric (`Z` and `-Z` have the same law) and
//! independent across `n`, so the conditional truncated means vanish.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::NoiseError;
use crate::rng::stream_rng;
use crate::schedule::StepSchedule;
use crate::series::{analyze_series, SeriesReport, SeriesThresholds, Verdict};
use crate::space::{GridFunction, NormKind, SpaceDescriptor};

/// How the scale `s_n` of a heavy-tailed model evolves with `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScaleRule {
    /// `s_n = scale * (n + 1)^growth`.
    Fixed { scale: f64, growth: f64 },
    /// `s_n` chosen so that the second moment of the part below the
    /// threshold `1 / alpha_n` equals `n` exactly.
    Calibrated { schedule: StepSchedule },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    /// Brownian paths `sigma * B_t`, i.i.d. across `n`.
    GaussianIid { sigma: f64 },
    /// Random walks with `+-1` increments, `E|Z_1|^2 = sigma^2`.
    IndependentMartingale { sigma: f64 },
    /// `Z = R V / ||V||` with `V` a Brownian path and `R` Pareto with
    /// index `tail`; heavy tails in the norm of the whole sample.
    HeavyTailedGlobal { tail: f64, scale: ScaleRule },
    /// Independent Pareto magnitudes in uniformly random directions at
    /// every node; heavy tails node by node.
    HeavyTailedPointwise { tail: f64, scale: ScaleRule },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    space: SpaceDescriptor,
    /// Precomputed `s_n` for `n < len`; calibrated scales cost a root solve.
    scales: Option<Arc<[f64]>>,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, space: SpaceDescriptor) -> Result<Self, NoiseError> {
        let check = |name: &'static str, value: f64| {
            if value >= 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(NoiseError::InvalidParameter { name, value })
            }
        };
        match &kind {
            NoiseKind::GaussianIid { sigma } | NoiseKind::IndependentMartingale { sigma } => {
                check("sigma", *sigma)?
            }
            NoiseKind::HeavyTailedGlobal { tail, scale }
            | NoiseKind::HeavyTailedPointwise { tail, scale } => {
                if !(*tail > 1.0) || !tail.is_finite() {
                    return Err(NoiseError::InvalidTailExponent(*tail));
                }
                if let ScaleRule::Fixed { scale, growth } = scale {
                    check("scale", *scale)?;
                    check("growth", *growth)?;
                }
            }
        }
        Ok(Self {
            kind,
            space,
            scales: None,
        })
    }

    pub fn gaussian(sigma: f64, space: SpaceDescriptor) -> Result<Self, NoiseError> {
        Self::new(NoiseKind::GaussianIid { sigma }, space)
    }

    pub fn martingale(sigma: f64, space: SpaceDescriptor) -> Result<Self, NoiseError> {
        Self::new(NoiseKind::IndependentMartingale { sigma }, space)
    }

    pub fn heavy_tailed_global(
        tail: f64,
        scale: ScaleRule,
        space: SpaceDescriptor,
    ) -> Result<Self, NoiseError> {
        Self::new(NoiseKind::HeavyTailedGlobal { tail, scale }, space)
    }

    pub fn heavy_tailed_pointwise(
        tail: f64,
        scale: ScaleRule,
        space: SpaceDescriptor,
    ) -> Result<Self, NoiseError> {
        Self::new(NoiseKind::HeavyTailedPointwise { tail, scale }, space)
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    pub fn space(&self) -> &SpaceDescriptor {
        &self.space
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            NoiseKind::GaussianIid { .. } => "gaussian_iid",
            NoiseKind::IndependentMartingale { .. } => "independent_martingale",
            NoiseKind::HeavyTailedGlobal { .. } => "heavy_tailed_global",
            NoiseKind::HeavyTailedPointwise { .. } => "heavy_tailed_pointwise",
        }
    }

    /// Caches `s_n` for `n < n_max`. Sampling is unchanged.
    pub fn with_scale_table(mut self, n_max: usize) -> Self {
        self.scales = None;
        if self.scale_at(0).is_some() {
            let table: Vec<f64> = (0..n_max)
                .map(|n| self.scale_at(n).unwrap_or(0.0))
                .collect();
            self.scales = Some(table.into());
        }
        self
    }

    /// Scale `s_n` of a heavy-tailed model; `None` for the path models.
    pub fn scale_at(&self, n: usize) -> Option<f64> {
        if let Some(s) = self.scales.as_ref().and_then(|t| t.get(n)) {
            return Some(*s);
        }
        match &self.kind {
            NoiseKind::HeavyTailedGlobal { tail, scale }
            | NoiseKind::HeavyTailedPointwise { tail, scale } => Some(match scale {
                ScaleRule::Fixed { scale, growth } => scale * (n as f64 + 1.0).powf(*growth),
                ScaleRule::Calibrated { schedule } => {
                    calibrated_scale(*tail, 1.0 / schedule.alpha(n), n as f64)
                }
            }),
            _ => None,
        }
    }

    /// The noise sample entering step `n`.
    pub fn sample(&self, n: usize, seed: u64) -> GridFunction {
        let mut rng = stream_rng(seed, n as u64);
        let (m, d) = (self.space.m(), self.space.d());
        match &self.kind {
            NoiseKind::GaussianIid { sigma } => brownian_path(&mut rng, m, d, *sigma),
            NoiseKind::IndependentMartingale { sigma } => {
                let step = sigma * (1.0 / ((m - 1) as f64 * d as f64)).sqrt();
                let mut v = vec![0.0; m * d];
                for i in 1..m {
                    for k in 0..d {
                        let sign = if rng.random::<bool>() { step } else { -step };
                        v[i * d + k] = v[(i - 1) * d + k] + sign;
                    }
                }
                GridFunction::from_raw(m, d, v)
            }
            NoiseKind::HeavyTailedGlobal { tail, .. } => {
                let s = self.scale_at(n).unwrap_or(0.0);
                if s == 0.0 {
                    return GridFunction::from_raw(m, d, vec![0.0; m * d]);
                }
                let r = pareto(&mut rng, *tail, s);
                let v = brownian_path(&mut rng, m, d, 1.0);
                let nv = self.space.norm(&v);
                if nv == 0.0 {
                    return GridFunction::from_raw(m, d, vec![0.0; m * d]);
                }
                v.scale(r / nv)
            }
            NoiseKind::HeavyTailedPointwise { tail, .. } => {
                let s = self.scale_at(n).unwrap_or(0.0);
                let mut v = vec![0.0; m * d];
                if s == 0.0 {
                    return GridFunction::from_raw(m, d, v);
                }
                for node in v.chunks_exact_mut(d) {
                    let r = pareto(&mut rng, *tail, s);
                    random_unit(&mut rng, node);
                    node.iter_mut().for_each(|x| *x *= r);
                }
                GridFunction::from_raw(m, d, v)
            }
        }
    }

    /// `E[Z 1{below threshold}]`: zero for every shipped model by symmetry.
    pub fn truncated_mean(&self) -> GridFunction {
        self.space.zeros()
    }

    /// Analytic certificate sequences of a heavy-tailed model under the
    /// thresholds `1 / alpha_n`, for `n < n_max`.
    ///
    /// Global models yield `delta_n = P(alpha_n ||Z|| >= 1)`; pointwise
    /// models yield the (Jensen-bounded) `L^p` mean of the over-threshold
    /// part. `mu_n = 0` by symmetry and `sigma2_n` is the second moment
    /// of the part below the threshold. Path models return `None`.
    pub fn certificate_bounds(
        &self,
        schedule: &StepSchedule,
        n_max: usize,
    ) -> Option<CertificateBounds> {
        let (tail, pointwise) = match &self.kind {
            NoiseKind::HeavyTailedGlobal { tail, .. } => (*tail, false),
            NoiseKind::HeavyTailedPointwise { tail, .. } => (*tail, true),
            _ => return None,
        };
        let p = match self.space.norm_kind() {
            NormKind::Lp(p) => p,
            NormKind::Sup => 1.0,
        };
        let mut delta = Vec::with_capacity(n_max);
        let mut sigma2 = Vec::with_capacity(n_max);
        for n in 0..n_max {
            let s = self.scale_at(n).unwrap_or(0.0);
            let threshold = 1.0 / schedule.alpha(n);
            delta.push(if pointwise {
                pareto_upper_moment(tail, s, threshold, p).powf(1.0 / p)
            } else {
                pareto_tail_probability(tail, s, threshold)
            });
            sigma2.push(pareto_truncated_second_moment(tail, s, threshold));
        }
        Some(CertificateBounds {
            delta,
            mu: vec![0.0; n_max],
            sigma2,
        })
    }
}

fn brownian_path(rng: &mut impl Rng, m: usize, d: usize, sigma: f64) -> GridFunction {
    let step = sigma * (1.0 / (m - 1) as f64).sqrt();
    let mut v = vec![0.0; m * d];
    if step != 0.0 {
        for i in 1..m {
            for k in 0..d {
                let xi: f64 = rng.sample(StandardNormal);
                v[i * d + k] = v[(i - 1) * d + k] + step * xi;
            }
        }
    }
    GridFunction::from_raw(m, d, v)
}

/// `s U^{-1/a}` with `U` uniform on `(0, 1]`.
fn pareto(rng: &mut impl Rng, tail: f64, scale: f64) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    scale * u.powf(-1.0 / tail)
}

fn random_unit(rng: &mut impl Rng, out: &mut [f64]) {
    if out.len() == 1 {
        out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        return;
    }
    loop {
        out.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
        let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            out.iter_mut().for_each(|x| *x /= n);
            return;
        }
    }
}

/// `P(R >= T)` for a Pareto magnitude with index `a` and scale `s`.
pub fn pareto_tail_probability(a: f64, s: f64, threshold: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else if threshold <= s {
        1.0
    } else {
        (s / threshold).powf(a)
    }
}

/// `E[R^2 1{R < T}]`.
pub fn pareto_truncated_second_moment(a: f64, s: f64, threshold: f64) -> f64 {
    if s == 0.0 || threshold <= s {
        return 0.0;
    }
    if (a - 2.0).abs() < 1e-12 {
        2.0 * s * s * (threshold / s).ln()
    } else {
        a * s.powf(a) * (threshold.powf(2.0 - a) - s.powf(2.0 - a)) / (2.0 - a)
    }
}

/// `E[R^p 1{R >= T}]`, infinite when `p >= a`.
pub fn pareto_upper_moment(a: f64, s: f64, threshold: f64, p: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    if p >= a {
        return f64::INFINITY;
    }
    let t = threshold.max(s);
    a * s.powf(a) * t.powf(p - a) / (a - p)
}

/// Scale `s` with `E[R^2 1{R < T}] = target`, capped at the maximizing
/// scale when the target is unreachable.
pub fn calibrated_scale(a: f64, threshold: f64, target: f64) -> f64 {
    if !(target > 0.0) || !(threshold > 0.0) {
        return 0.0;
    }
    let peak = if (a - 2.0).abs() < 1e-12 {
        threshold * (-0.5f64).exp()
    } else {
        (a / 2.0).powf(1.0 / (2.0 - a)) * threshold
    };
    let moment = |s: f64| pareto_truncated_second_moment(a, s, threshold);
    if moment(peak) <= target {
        return peak;
    }
    let (mut lo, mut hi) = (0.0, peak);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if moment(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    lo
}

/// Where the threshold indicator is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationScheme {
    /// On the norm of the whole sample.
    Global,
    /// On the magnitude at each node.
    Pointwise,
}

/// `z = hat + truncated`, `truncated = bar + tilde`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationTriple {
    /// Over-threshold part.
    pub hat: GridFunction,
    /// Conditional mean of the under-threshold part.
    pub bar: GridFunction,
    /// Centered under-threshold part.
    pub tilde: GridFunction,
    /// `z` restricted to the under-threshold event.
    pub truncated: GridFunction,
}

impl TruncationTriple {
    /// `hat + bar + tilde`.
    pub fn reassemble(&self) -> GridFunction {
        self.hat.add(&self.bar.add(&self.tilde))
    }
}

fn split(z: &GridFunction, over: impl Fn(usize) -> bool, bar: &GridFunction) -> TruncationTriple {
    let (m, d) = z.shape();
    let mut hat = vec![0.0; m * d];
    let mut truncated = vec![0.0; m * d];
    for (i, node) in z.nodes().enumerate() {
        let target = if over(i) { &mut hat } else { &mut truncated };
        target[i * d..(i + 1) * d].copy_from_slice(node);
    }
    let truncated = GridFunction::from_raw(m, d, truncated);
    TruncationTriple {
        hat: GridFunction::from_raw(m, d, hat),
        tilde: truncated.sub(bar),
        bar: bar.clone(),
        truncated,
    }
}

fn check_truncation_inputs(
    z: &GridFunction,
    alpha: f64,
    bar: &GridFunction,
) -> Result<(), NoiseError> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(NoiseError::InvalidAlpha(alpha));
    }
    if !z.same_shape(bar) {
        return Err(NoiseError::Space(crate::error::SpaceError::ShapeMismatch {
            expected: z.shape(),
            found: bar.values().len(),
        }));
    }
    Ok(())
}

/// Splits on the event `alpha ||z|| >= 1`.
pub fn truncate_global(
    z: &GridFunction,
    alpha: f64,
    bar_estimate: &GridFunction,
    space: &SpaceDescriptor,
) -> Result<TruncationTriple, NoiseError> {
    check_truncation_inputs(z, alpha, bar_estimate)?;
    let over = alpha * space.norm(z) >= 1.0;
    Ok(split(z, |_| over, bar_estimate))
}

/// Splits node by node on the events `alpha |z(t)| >= 1`.
pub fn truncate_pointwise(
    z: &GridFunction,
    alpha: f64,
    bar_estimate: &GridFunction,
) -> Result<TruncationTriple, NoiseError> {
    check_truncation_inputs(z, alpha, bar_estimate)?;
    let mags: Vec<f64> = z.magnitudes().collect();
    Ok(split(z, |i| alpha * mags[i] >= 1.0, bar_estimate))
}

/// Monte Carlo estimate of `E[Z 1{below threshold}]` with the largest
/// per-entry standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanEstimate {
    pub mean: GridFunction,
    pub max_standard_error: f64,
    pub draws: usize,
}

/// Estimates the truncated mean of `sampler(draw_seed)` by averaging the
/// under-threshold part over `draws` independent draws.
pub fn estimate_truncated_mean(
    sampler: impl Fn(u64) -> GridFunction + Sync,
    alpha: f64,
    scheme: TruncationScheme,
    space: &SpaceDescriptor,
    draws: usize,
    seed: u64,
) -> Result<MeanEstimate, NoiseError> {
    if !(alpha > 0.0) {
        return Err(NoiseError::InvalidAlpha(alpha));
    }
    let zero = space.zeros();
    let len = zero.values().len();
    let (sum, sum_sq) = (0..draws as u64)
        .into_par_iter()
        .map(|k| {
            let z = sampler(crate::rng::replication_seed(seed, k));
            let part = match scheme {
                TruncationScheme::Global => truncate_global(&z, alpha, &zero, space),
                TruncationScheme::Pointwise => truncate_pointwise(&z, alpha, &zero),
            }
            .map(|t| t.truncated)
            .unwrap_or_else(|_| zero.clone());
            let v = part.into_values();
            let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
            (v, sq)
        })
        .reduce(
            || (vec![0.0; len], vec![0.0; len]),
            |(mut a, mut b), (c, e)| {
                a.iter_mut().zip(&c).for_each(|(x, y)| *x += y);
                b.iter_mut().zip(&e).for_each(|(x, y)| *x += y);
                (a, b)
            },
        );
    let nd = draws.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nd).collect();
    let max_se = mean
        .iter()
        .zip(&sum_sq)
        .map(|(mu, sq)| ((sq / nd - mu * mu).max(0.0) / (nd - 1.0).max(1.0)).sqrt())
        .fold(0.0, f64::max);
    Ok(MeanEstimate {
        mean: GridFunction::from_raw(space.m(), space.d(), mean),
        max_standard_error: max_se,
        draws,
    })
}

/// Bound sequences `delta_n`, `mu_n`, `sigma_n^2` for the three-series checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateBounds {
    pub delta: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl CertificateBounds {
    pub fn new(delta: Vec<f64>, mu: Vec<f64>, sigma2: Vec<f64>) -> Result<Self, NoiseError> {
        for (name, v) in [("delta", &delta), ("mu", &mu), ("sigma2", &sigma2)] {
            if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(NoiseError::InvalidBounds(name));
            }
        }
        Ok(Self { delta, mu, sigma2 })
    }

    pub fn from_fn(n_max: usize, f: impl Fn(usize) -> (f64, f64, f64)) -> Result<Self, NoiseError> {
        let (mut d, mut m, mut s) = (vec![], vec![], vec![]);
        for n in 0..n_max {
            let (a, b, c) = f(n);
            d.push(a);
            m.push(b);
            s.push(c);
        }
        Self::new(d, m, s)
    }

    /// `delta_n = mu_n = 1 / ln(n + 2)` and `sigma_n^2 = n`, matched to the
    /// `1 / ((n + 2) ln(n + 2))` step sizes.
    pub fn logarithmic(n_max: usize) -> Self {
        Self::from_fn(n_max, |n| {
            let l = 1.0 / (n as f64 + 2.0).ln();
            (l, l, n as f64)
        })
        .expect("finite non-negative by construction")
    }

    pub fn len(&self) -> usize {
        self.delta.len().min(self.mu.len()).min(self.sigma2.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which set of summability conditions to check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum SeriesRegime {
    /// Global truncation in a `p`-uniformly smooth space: `delta_n` holds
    /// the tail probabilities `P(alpha_n ||Z_{n+1}|| >= 1)`.
    UniformlySmooth { p: f64 },
    /// Pointwise truncation in `L^p`, `1 <= p <= 2`.
    Lebesgue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertificateStatus {
    Pass,
    Fail,
    Inconclusive,
}

impl From<Verdict> for CertificateStatus {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Converges => Self::Pass,
            Verdict::Diverges => Self::Fail,
            Verdict::Inconclusive => Self::Inconclusive,
        }
    }
}

impl std::fmt::Display for CertificateStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pass => "PASS",
            Self::Fail => "FAIL",
            Self::Inconclusive => "INCONCLUSIVE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesCertificate {
    /// Human-readable series, e.g. `sum alpha_n mu_n`.
    pub series: &'static str,
    pub status: CertificateStatus,
    pub report: SeriesReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThreeSeriesReport {
    pub regime: SeriesRegime,
    pub n_max: usize,
    pub certificates: Vec<SeriesCertificate>,
    /// Whether `sum alpha_n` diverges; reported separately from the
    /// noise series.
    pub steps_diverge: Verdict,
}

impl ThreeSeriesReport {
    pub fn all_pass(&self) -> bool {
        self.certificates
            .iter()
            .all(|c| c.status == CertificateStatus::Pass)
    }

    pub fn any_fail(&self) -> bool {
        self.certificates
            .iter()
            .any(|c| c.status == CertificateStatus::Fail)
    }
}

/// Checks the summability conditions of `regime` for `bounds` and
/// `schedule` over the first `n_max` terms.
pub fn three_series_certificate(
    bounds: &CertificateBounds,
    schedule: &StepSchedule,
    regime: SeriesRegime,
    n_max: usize,
) -> Result<ThreeSeriesReport, NoiseError> {
    if bounds.len() < n_max {
        return Err(NoiseError::InvalidBounds("length shorter than n_max"));
    }
    if schedule.len_limit().is_some_and(|l| l < n_max) {
        return Err(NoiseError::InvalidParameter {
            name: "n_max",
            value: n_max as f64,
        });
    }
    let th = SeriesThresholds::default();
    let a = |n: usize| schedule.alpha(n);
    let run = |series: &'static str, term: &dyn Fn(usize) -> f64| {
        let report = analyze_series(term, n_max, &th);
        SeriesCertificate {
            series,
            status: report.verdict.into(),
            report,
        }
    };
    let certificates = match regime {
        SeriesRegime::UniformlySmooth { p } => vec![
            run("sum P(alpha_n ||Z_{n+1}|| >= 1)", &|n| bounds.delta[n]),
            run("sum alpha_n mu_n", &|n| a(n) * bounds.mu[n]),
            run("sum alpha_n^p sigma_n^p", &|n| {
                (a(n) * a(n) * bounds.sigma2[n]).powf(0.5 * p)
            }),
        ],
        SeriesRegime::Lebesgue => vec![
            run("sum alpha_n delta_n", &|n| a(n) * bounds.delta[n]),
            run("sum alpha_n mu_n", &|n| a(n) * bounds.mu[n]),
            run("sum alpha_n^2 sigma_n^2", &|n| {
                a(n) * a(n) * bounds.sigma2[n]
            }),
        ],
    };
    Ok(ThreeSeriesReport {
        regime,
        n_max,
        certificates,
        steps_diverge: analyze_series(a, n_max, &th).verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sup(m: usize) -> SpaceDescriptor {
        SpaceDescriptor::sup(m, 1).unwrap()
    }

    #[test]
    fn zero_scale_gives_zero_paths() {
        let s = sup(11);
        assert!(NoiseModel::gaussian(0.0, s).unwrap().sample(3, 1).is_zero());
        assert!(NoiseModel::martingale(0.0, s)
            .unwrap()
            .sample(3, 1)
            .is_zero());
        let fixed = ScaleRule::Fixed {
            scale: 0.0,
            growth: 0.0,
        };
        assert!(NoiseModel::heavy_tailed_pointwise(1.5, fixed.clone(), s)
            .unwrap()
            .sample(3, 1)
            .is_zero());
        assert!(NoiseModel::heavy_tailed_global(1.5, fixed, s)
            .unwrap()
            .sample(3, 1)
            .is_zero());
    }

    #[test]
    fn samplers_are_deterministic_and_start_at_zero() {
        let s = SpaceDescriptor::sup(33, 2).unwrap();
        for model in [
            NoiseModel::gaussian(1.3, s).unwrap(),
            NoiseModel::martingale(0.7, s).unwrap(),
        ] {
            let a = model.sample(17, 99);
            assert_eq!(a, model.sample(17, 99));
            assert_ne!(a, model.sample(18, 99));
            assert_ne!(a, model.sample(17, 98));
            assert_eq!(a.node(0), &[0.0, 0.0]);
        }
    }

    #[test]
    fn martingale_increments_are_symmetric_signs() {
        // The construction: every increment is exactly +-sigma sqrt(dt / d),
        // a centered variable independent of the past.
        let s = SpaceDescriptor::sup(9, 2).unwrap();
        let sigma = 0.8;
        let z = NoiseModel::martingale(sigma, s).unwrap().sample(4, 5);
        let step = sigma * (1.0 / 16.0f64).sqrt();
        for i in 1..9 {
            for k in 0..2 {
                let inc = z.node(i)[k] - z.node(i - 1)[k];
                assert!((inc.abs() - step).abs() < 1e-15);
            }
        }
        let end: f64 = z.node(8).iter().map(|x| x * x).sum();
        assert!((end.sqrt() - 0.0).abs() <= sigma * 2.0_f64.sqrt() * 2.0 + 1e-12);
    }

    #[test]
    fn rejects_light_tail_exponent() {
        let fixed = ScaleRule::Fixed {
            scale: 1.0,
            growth: 0.0,
        };
        assert!(matches!(
            NoiseModel::heavy_tailed_pointwise(1.0, fixed.clone(), sup(5)),
            Err(NoiseError::InvalidTailExponent(_))
        ));
        assert!(NoiseModel::heavy_tailed_global(0.5, fixed, sup(5)).is_err());
        assert!(NoiseModel::gaussian(-1.0, sup(5)).is_err());
    }

    #[test]
    fn pareto_moment_formulas_match_quadrature() {
        // Midpoint quadrature of the density a s^a x^{-a-1} on [s, T].
        let (a, s, t) = (1.5, 0.7, 40.0);
        let k = 400_000;
        let (mut m2, mut m1_upper) = (0.0, 0.0);
        let h = (t - s) / k as f64;
        for i in 0..k {
            let x = s + (i as f64 + 0.5) * h;
            m2 += x * x * a * s.powf(a) * x.powf(-a - 1.0) * h;
        }
        assert!((pareto_truncated_second_moment(a, s, t) - m2).abs() < 1e-6 * m2);
        // Upper first moment via a log-spaced quadrature on [T, T e^40].
        let k = 400_000;
        let (lo, hi) = (t.ln(), t.ln() + 40.0);
        let h = (hi - lo) / k as f64;
        for i in 0..k {
            let x = (lo + (i as f64 + 0.5) * h).exp();
            m1_upper += x * a * s.powf(a) * x.powf(-a - 1.0) * x * h;
        }
        let exact = pareto_upper_moment(a, s, t, 1.0);
        assert!((exact - m1_upper).abs() < 1e-6 * exact);
        assert_eq!(pareto_tail_probability(a, s, s * 0.5), 1.0);
        assert!((pareto_tail_probability(a, s, 4.0 * s) - 0.125).abs() < 1e-15);
        assert!(pareto_upper_moment(1.5, 1.0, 2.0, 2.0).is_infinite());
    }

    #[test]
    fn calibration_hits_target() {
        for (a, t, target) in [
            (1.5, 30.0, 10.0),
            (1.5, 600.0, 100.0),
            (2.5, 50.0, 3.0),
            (2.0, 80.0, 7.0),
        ] {
            let s = calibrated_scale(a, t, target);
            let m = pareto_truncated_second_moment(a, s, t);
            assert!(
                (m - target).abs() < 1e-9 * target,
                "{a} {t} {target} -> {m}"
            );
        }
        assert_eq!(calibrated_scale(1.5, 10.0, 0.0), 0.0);
        // Unreachable target: capped at the peak, bound still holds.
        let s = calibrated_scale(1.5, 2.0, 1e6);
        assert!(pareto_truncated_second_moment(1.5, s, 2.0) < 1e6);
    }

    #[test]
    fn global_truncation_cases() {
        let space = sup(5);
        let z = GridFunction::from_scalar_fn(5, 1, |t| 4.0 * t - 2.0).unwrap();
        let zero = space.zeros();
        let t = truncate_global(&z, 1.0, &zero, &space).unwrap();
        assert_eq!(t.hat, z);
        assert!(t.truncated.is_zero() && t.tilde.is_zero());
        let t = truncate_global(&z, 0.1, &zero, &space).unwrap();
        assert!(t.hat.is_zero());
        assert_eq!(t.tilde, z);
        // Ties belong to the over-threshold part.
        let t = truncate_global(&z, 0.5, &zero, &space).unwrap();
        assert_eq!(t.hat, z);
        let bar = GridFunction::from_scalar_fn(5, 1, |_| 0.25).unwrap();
        let t = truncate_global(&z, 1.0, &bar, &space).unwrap();
        assert_eq!(t.tilde, bar.scale(-1.0));
        assert!(truncate_global(&z, 0.0, &zero, &space).is_err());
    }

    #[test]
    fn pointwise_truncation_cases() {
        let z = GridFunction::new(4, 1, vec![-3.0, 0.5, 2.0, 0.0]).unwrap();
        let zero = GridFunction::zeros(4, 1).unwrap();
        let t = truncate_pointwise(&z, 0.5, &zero).unwrap();
        assert_eq!(t.hat.values(), &[-3.0, 0.0, 2.0, 0.0]);
        assert_eq!(t.truncated.values(), &[0.0, 0.5, 0.0, 0.0]);
        assert_eq!(t.hat.add(&t.truncated), z);
        let t = truncate_pointwise(&z, 1e-3, &zero).unwrap();
        assert!(t.hat.is_zero());
    }

    /// Exhaustive oracle for a finitely supported law.
    fn enumerate_truncated_mean(outcomes: &[(f64, f64)], alpha: f64) -> f64 {
        outcomes
            .iter()
            .filter(|(v, _)| (alpha * v).abs() < 1.0)
            .map(|(v, p)| v * p)
            .sum()
    }

    #[test]
    fn asymmetric_two_point_mean_matches_enumeration() {
        let space = sup(3);
        let outcomes = [(3.0, 1.0 / 3.0), (-1.0, 2.0 / 3.0)];
        let sampler = |seed: u64| {
            let mut rng = stream_rng(seed, 0);
            let v = if rng.random::<f64>() < 1.0 / 3.0 {
                3.0
            } else {
                -1.0
            };
            GridFunction::from_scalar_fn(3, 1, |_| v).unwrap()
        };
        for (alpha, expect_exact) in [(0.01, 1.0 / 3.0), (0.5, -2.0 / 3.0)] {
            let oracle = enumerate_truncated_mean(&outcomes, alpha);
            assert!((oracle - expect_exact).abs() < 1e-15);
            for scheme in [TruncationScheme::Global, TruncationScheme::Pointwise] {
                let est =
                    estimate_truncated_mean(sampler, alpha, scheme, &space, 100_000, 7).unwrap();
                for &v in est.mean.values() {
                    assert!(
                        (v - oracle).abs() < 4.0 * est.max_standard_error,
                        "{v} vs {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn heavy_tailed_nodes_are_symmetric() {
        let space = sup(5);
        let model = NoiseModel::heavy_tailed_pointwise(
            1.5,
            ScaleRule::Fixed {
                scale: 1.0,
                growth: 0.0,
            },
            space,
        )
        .unwrap();
        let draws = 4000;
        let mut positive = vec![0usize; 5];
        for k in 0..draws {
            let z = model.sample(k, 11);
            for (i, &v) in z.values().iter().enumerate() {
                assert!(v.abs() >= 1.0);
                positive[i] += (v > 0.0) as usize;
            }
        }
        // Binomial(4000, 1/2) has sd ~ 31.6.
        for p in positive {
            assert!((p as f64 - 2000.0).abs() < 4.0 * 31.7);
        }
    }

    #[test]
    fn certificate_rejects_short_bounds() {
        let b = CertificateBounds::logarithmic(10);
        assert!(three_series_certificate(
            &b,
            &StepSchedule::log_harmonic(),
            SeriesRegime::Lebesgue,
            100
        )
        .is_err());
        assert!(CertificateBounds::new(vec![-1.0], vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn logarithmic_bounds_pass_lebesgue_regime() {
        let n = 1 << 22;
        let r = three_series_certificate(
            &CertificateBounds::logarithmic(n),
            &StepSchedule::log_harmonic(),
            SeriesRegime::Lebesgue,
            n,
        )
        .unwrap();
        assert!(
            r.all_pass(),
            "{:?}",
            r.certificates.iter().map(|c| c.status).collect::<Vec<_>>()
        );
        assert_eq!(r.steps_diverge, Verdict::Diverges);
    }

    #[test]
    fn inverse_sqrt_steps_fail_smooth_regime() {
        let n = 1 << 20;
        let schedule = StepSchedule::power_law(1.0, 2.0, 0.5).unwrap();
        let bounds = CertificateBounds::from_fn(n, |_| (0.0, 0.0, 1.0)).unwrap();
        let r = three_series_certificate(
            &bounds,
            &schedule,
            SeriesRegime::UniformlySmooth { p: 2.0 },
            n,
        )
        .unwrap();
        let sq = &r.certificates[2];
        assert_eq!(sq.status, CertificateStatus::Fail);
        // Harmonic oracle: sum 1/(k+2) for k < n is H_{n+1} - 1.
        let h = ((n + 1) as f64).ln() + 0.577_215_664_901_532_9 + 0.5 / (n + 1) as f64 - 1.0;
        assert!((sq.report.total() - h).abs() < 1e-8);
    }

    #[test]
    fn geometric_steps_pass_everything_but_divergence() {
        let n = 1000;
        let schedule =
            StepSchedule::custom((0..n).map(|k| 0.5f64.powi(k as i32 + 1)).collect()).unwrap();
        let bounds = CertificateBounds::from_fn(n, |k| (0.5f64.powi(k as i32), 1.0, 1.0)).unwrap();
        for regime in [
            SeriesRegime::Lebesgue,
            SeriesRegime::UniformlySmooth { p: 1.5 },
        ] {
            let r = three_series_certificate(&bounds, &schedule, regime, n).unwrap();
            assert!(r.all_pass());
            assert_eq!(r.steps_diverge, Verdict::Converges);
        }
    }
}
