//! The three recursions and the weighted sums that govern them.
//!
//! All engines use one update,
//!
//! ```text
//! x_{n+1} = x_n - alpha_{n0+n} (G(x_n) + lambda_n z_{n0+n}),
//! ```
//!
//! and differ only in how the noise gain `lambda_n` is chosen:
//!
//! * [`run_stochastic`]: `lambda_n = 1`, `z` drawn from a [`NoiseModel`];
//! * [`run_controlled`]: `lambda_n` from a [`NoiseGain`], checked against
//!   `psi_n = C (1 + max_{k<=n} ||x_k||)` at every step;
//! * [`run_deterministic`]: `lambda_n = psi_n` (or `1`), `z` a given sequence.
//!
//! `n0` is the first index with `theta alpha_n < 1`; the schedule and the
//! noise are both read from index `n0` on.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::EngineError;
use crate::noise::NoiseModel;
use crate::operators::RootProblem;
use crate::schedule::StepSchedule;
use crate::series::{dyadic_checkpoints, CompensatedSum};
use crate::space::GridFunction;

/// Errors above this count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e150;

/// What a gain may look at: the history enters only through running
/// statistics of `||x_k||`.
#[derive(Debug, Clone, Copy)]
pub struct GainContext<'a> {
    pub n: usize,
    pub iterate: &'a GridFunction,
    /// `||x_n||`.
    pub norm: f64,
    /// `max_{k<=n} ||x_k||`.
    pub max_norm: f64,
    /// `(1/(n+1)) sum_{k<=n} ||x_k||`.
    pub mean_norm: f64,
}

/// A history-dependent noise gain `lambda_n(x_0, ..., x_n)`.
pub trait NoiseGain: Send {
    fn gain(&mut self, ctx: &GainContext<'_>) -> f64;
    fn label(&self) -> String;
}

/// `lambda_n = value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantGain(pub f64);

impl NoiseGain for ConstantGain {
    fn gain(&mut self, _: &GainContext<'_>) -> f64 {
        self.0
    }

    fn label(&self) -> String {
        format!("constant({})", self.0)
    }
}

/// `lambda_n = min(1, ||x_n||)`; depends on the current iterate only.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClippedNormGain;

impl NoiseGain for ClippedNormGain {
    fn gain(&mut self, ctx: &GainContext<'_>) -> f64 {
        ctx.norm.min(1.0)
    }

    fn label(&self) -> String {
        "clipped_norm".into()
    }
}

/// `lambda_n = min(1, mean_{k<=n} ||x_k||)`; depends on the whole history.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanNormGain;

impl NoiseGain for MeanNormGain {
    fn gain(&mut self, ctx: &GainContext<'_>) -> f64 {
        ctx.mean_norm.min(1.0)
    }

    fn label(&self) -> String {
        "mean_norm".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub engine: &'static str,
    pub problem: String,
    pub noise: String,
    pub schedule: String,
    pub gain: String,
    pub seed: Option<u64>,
    pub n_steps: usize,
    /// First schedule index used.
    pub start_index: usize,
    pub c_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub n: usize,
    pub iterate: GridFunction,
}

/// Statistics of `S_n = sum_{k<n} alpha_k z_k` at a checkpoint `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseTail {
    pub n: usize,
    /// `||S_n||`.
    pub sum_norm: f64,
    /// `||S_N - S_n||`.
    pub tail_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub metadata: RunMetadata,
    /// Iterates at `0, 1, 2, 4, ..., N`.
    pub checkpoints: Vec<Checkpoint>,
    /// `||x_n - x*||` for `n = 0..=N`.
    pub error_curve: Vec<f64>,
    /// `psi_n` for `n = 0..N`; nondecreasing.
    pub psi_curve: Vec<f64>,
    /// Applied gains `lambda_n` for `n = 0..N`.
    pub gain_curve: Vec<f64>,
    pub noise_tails: Vec<NoiseTail>,
}

impl Trajectory {
    pub fn final_error(&self) -> f64 {
        *self.error_curve.last().expect("error curve is never empty")
    }

    pub fn final_iterate(&self) -> &GridFunction {
        &self
            .checkpoints
            .last()
            .expect("checkpoints are never empty")
            .iterate
    }

    pub fn checkpoint(&self, n: usize) -> Option<&GridFunction> {
        self.checkpoints
            .iter()
            .find(|c| c.n == n)
            .map(|c| &c.iterate)
    }

    /// `n,error` rows for every step.
    pub fn error_csv(&self) -> String {
        let mut out = String::with_capacity(32 * self.error_curve.len());
        out.push_str("n,error\n");
        for (n, e) in self.error_curve.iter().enumerate() {
            let _ = writeln!(out, "{n},{}", crate::fmt_f64(*e));
        }
        out
    }

    /// One JSON object with the metadata and the checkpoint summaries.
    pub fn metadata_json(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            #[serde(flatten)]
            metadata: &'a RunMetadata,
            final_error: f64,
            checkpoints: Vec<usize>,
            noise_tails: &'a [NoiseTail],
        }
        serde_json::to_string(&Record {
            metadata: &self.metadata,
            final_error: self.final_error(),
            checkpoints: self.checkpoints.iter().map(|c| c.n).collect(),
            noise_tails: &self.noise_tails,
        })
        .expect("plain data serializes")
    }

    /// Writes `errors{tag}.csv` and `checkpoint{tag}_n{n}.csv` files into `dir`.
    pub fn write_files(&self, dir: &Path, tag: &str) -> std::io::Result<()> {
        std::fs::write(dir.join(format!("errors{tag}.csv")), self.error_csv())?;
        for c in &self.checkpoints {
            c.iterate
                .write_csv(dir.join(format!("checkpoint{tag}_n{}.csv", c.n)))?;
        }
        Ok(())
    }
}

/// Running node-wise compensated sum.
#[derive(Debug, Clone)]
struct CompensatedVec {
    sum: Vec<f64>,
    carry: Vec<f64>,
}

impl CompensatedVec {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            carry: vec![0.0; len],
        }
    }

    fn add_scaled(&mut self, a: f64, x: &[f64]) {
        for ((s, c), &xi) in self.sum.iter_mut().zip(&mut self.carry).zip(x) {
            let v = a * xi;
            let t = *s + v;
            if s.abs() >= v.abs() {
                *c += (*s - t) + v;
            } else {
                *c += (v - t) + *s;
            }
            *s = t;
        }
    }

    fn value(&self, m: usize, d: usize) -> GridFunction {
        let v = self
            .sum
            .iter()
            .zip(&self.carry)
            .map(|(s, c)| s + c)
            .collect();
        GridFunction::from_raw(m, d, v)
    }
}

enum GainMode<'a> {
    /// `lambda_n = psi_n`.
    Psi,
    /// `lambda_n` from a gain, checked against `psi_n` when `enforce`.
    Gain {
        gain: &'a mut dyn NoiseGain,
        enforce: bool,
    },
}

struct EngineSpec<'a> {
    engine: &'static str,
    noise_label: String,
    seed: Option<u64>,
    c_bound: f64,
    mode: GainMode<'a>,
}

fn run_engine(
    problem: &RootProblem,
    noise: &mut dyn FnMut(usize) -> GridFunction,
    schedule: &StepSchedule,
    x0: &GridFunction,
    n_steps: usize,
    spec: EngineSpec<'_>,
) -> Result<Trajectory, EngineError> {
    if n_steps == 0 {
        return Err(EngineError::NoSteps);
    }
    let space = problem.space();
    space.check(x0)?;
    if !(spec.c_bound > 0.0) || !spec.c_bound.is_finite() {
        return Err(EngineError::InvalidInput(format!(
            "gain bound C must be positive, got {}",
            spec.c_bound
        )));
    }
    // Requiring n0 within the first n_steps keeps the search bounded.
    let limit = n_steps.max(1_000_000);
    let n0 = schedule
        .start_index(problem.theta(), limit)
        .ok_or(EngineError::NoStartIndex { limit })?;
    if let Some(len) = schedule.len_limit() {
        if n0 + n_steps > len {
            return Err(EngineError::Schedule(
                crate::error::ScheduleError::Exhausted {
                    n: n0 + n_steps - 1,
                    len,
                },
            ));
        }
    }

    let (m, d) = (space.m(), space.d());
    let marks = dyadic_checkpoints(n_steps);
    let mut next_mark = 0;
    let mut checkpoints = Vec::with_capacity(marks.len());
    let mut sum_marks = Vec::with_capacity(marks.len());
    let mut error_curve = Vec::with_capacity(n_steps + 1);
    let mut psi_curve = Vec::with_capacity(n_steps);
    let mut gain_curve = Vec::with_capacity(n_steps);
    let mut noise_sum = CompensatedVec::new(m * d);

    let mut x = x0.clone();
    let mut norm = space.norm(&x);
    let mut max_norm = norm;
    let mut norm_total = CompensatedSum::new();
    norm_total.add(norm);
    error_curve.push(problem.error(&x));

    let mut mode = spec.mode;
    let gain_label = match &mode {
        GainMode::Psi => "psi".to_string(),
        GainMode::Gain { gain, .. } => gain.label(),
    };

    for n in 0..=n_steps {
        if next_mark < marks.len() && marks[next_mark] == n {
            checkpoints.push(Checkpoint {
                n,
                iterate: x.clone(),
            });
            sum_marks.push((n, noise_sum.value(m, d)));
            next_mark += 1;
        }
        if n == n_steps {
            break;
        }
        let k = n0 + n;
        let alpha = schedule.checked_alpha(k)?;
        let psi = spec.c_bound * (1.0 + max_norm);
        let lambda = match &mut mode {
            GainMode::Psi => psi,
            GainMode::Gain { gain, enforce } => {
                let ctx = GainContext {
                    n,
                    iterate: &x,
                    norm,
                    max_norm,
                    mean_norm: norm_total.value() / (n + 1) as f64,
                };
                let lambda = gain.gain(&ctx);
                if *enforce && !(lambda.abs() <= psi) {
                    return Err(EngineError::GainContract {
                        step: n,
                        lambda,
                        bound: psi,
                    });
                }
                lambda
            }
        };
        psi_curve.push(psi);
        gain_curve.push(lambda);

        let z = noise(k);
        let gx = problem.apply(&x);
        for ((xi, gi), zi) in x.values_mut().iter_mut().zip(gx.values()).zip(z.values()) {
            *xi -= alpha * (gi + lambda * zi);
        }
        noise_sum.add_scaled(alpha, z.values());

        let err = problem.error(&x);
        if !err.is_finite() || err > DIVERGENCE_LIMIT {
            return Err(EngineError::Divergence {
                step: n + 1,
                error: err,
            });
        }
        error_curve.push(err);
        norm = space.norm(&x);
        max_norm = max_norm.max(norm);
        norm_total.add(norm);
    }

    let total = noise_sum.value(m, d);
    let noise_tails = sum_marks
        .iter()
        .map(|(n, s)| NoiseTail {
            n: *n,
            sum_norm: space.norm(s),
            tail_norm: space.distance(&total, s),
        })
        .collect();

    Ok(Trajectory {
        metadata: RunMetadata {
            engine: spec.engine,
            problem: problem.name().to_string(),
            noise: spec.noise_label,
            schedule: schedule.label(),
            gain: gain_label,
            seed: spec.seed,
            n_steps,
            start_index: n0,
            c_bound: spec.c_bound,
        },
        checkpoints,
        error_curve,
        psi_curve,
        gain_curve,
        noise_tails,
    })
}

fn check_noise_space(problem: &RootProblem, noise: &NoiseModel) -> Result<(), EngineError> {
    if (noise.space().m(), noise.space().d()) != (problem.space().m(), problem.space().d()) {
        return Err(EngineError::InvalidInput(format!(
            "noise grid {:?} does not match problem grid {:?}",
            (noise.space().m(), noise.space().d()),
            (problem.space().m(), problem.space().d())
        )));
    }
    Ok(())
}

/// `X_{n+1} = X_n - alpha_n (G(X_n) + Z_{n+1})`.
pub fn run_stochastic(
    problem: &RootProblem,
    noise: &NoiseModel,
    schedule: &StepSchedule,
    x0: &GridFunction,
    n_steps: usize,
    seed: u64,
) -> Result<Trajectory, EngineError> {
    let mut gain = ConstantGain(1.0);
    let mut traj = run_controlled(problem, noise, schedule, &mut gain, 1.0, x0, n_steps, seed)?;
    traj.metadata.engine = "stochastic";
    Ok(traj)
}

/// `Y_{n+1} = Y_n - alpha_n (G(Y_n) + lambda_n Z_{n+1})` with
/// `|lambda_n| <= C (1 + max_{k<=n} ||Y_k||)` enforced at every step.
#[allow(clippy::too_many_arguments)]
pub fn run_controlled(
    problem: &RootProblem,
    noise: &NoiseModel,
    schedule: &StepSchedule,
    gain: &mut dyn NoiseGain,
    c_bound: f64,
    x0: &GridFunction,
    n_steps: usize,
    seed: u64,
) -> Result<Trajectory, EngineError> {
    check_noise_space(problem, noise)?;
    run_engine(
        problem,
        &mut |k| noise.sample(k, seed),
        schedule,
        x0,
        n_steps,
        EngineSpec {
            engine: "controlled",
            noise_label: noise.label().to_string(),
            seed: Some(seed),
            c_bound,
            mode: GainMode::Gain {
                gain,
                enforce: true,
            },
        },
    )
}

/// `x_{n+1} = x_n - alpha_n (G(x_n) + psi_n z_{n+1})` with
/// `psi_n = 1 + max_{k<=n} ||x_k||`, or `psi_n = 1` when `psi_enabled` is
/// false. `z(k)` is the term paired with schedule index `k`.
pub fn run_deterministic(
    problem: &RootProblem,
    z: &dyn Fn(usize) -> GridFunction,
    schedule: &StepSchedule,
    psi_enabled: bool,
    x0: &GridFunction,
    n_steps: usize,
) -> Result<Trajectory, EngineError> {
    let mut unit = ConstantGain(1.0);
    let mode = if psi_enabled {
        GainMode::Psi
    } else {
        GainMode::Gain {
            gain: &mut unit,
            enforce: false,
        }
    };
    run_engine(
        problem,
        &mut |k| z(k),
        schedule,
        x0,
        n_steps,
        EngineSpec {
            engine: "deterministic",
            noise_label: "sequence".into(),
            seed: None,
            c_bound: 1.0,
            mode,
        },
    )
}

/// `z_k = ((-1)^k / alpha_k) h / (k + 1)^2`, so that `sum alpha_k z_k`
/// converges absolutely.
pub fn summable_sequence(
    h: GridFunction,
    schedule: StepSchedule,
) -> impl Fn(usize) -> GridFunction + Send + Sync {
    move |k| {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let kk = (k + 1) as f64;
        h.scale(sign / (schedule.alpha(k) * kk * kk))
    }
}

/// `z_k = h` for all `k`.
pub fn constant_sequence(h: GridFunction) -> impl Fn(usize) -> GridFunction + Send + Sync {
    move |_| h.clone()
}

/// `prod_{j=m}^{n} (1 - beta_j) + sum_{k=m}^{n} prod_{k<j<=n} (1 - beta_j) beta_k`,
/// which equals 1 for any `beta`.
pub fn partition_identity(beta: &[f64], m: usize, n: usize) -> f64 {
    assert!(m <= n && n < beta.len(), "need m <= n < beta.len()");
    let mut suffix = 1.0;
    let mut acc = CompensatedSum::new();
    for k in (m..=n).rev() {
        acc.add(suffix * beta[k]);
        suffix *= 1.0 - beta[k];
    }
    acc.add(suffix);
    acc.value()
}

/// Discounted sums over `k = m..=n` of the terms `alpha_k z_k`, each
/// computed directly and through partial sums.
///
/// `discount(k) = prod_{k<j<=n} (1 - beta_j)`; an empty product is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSums {
    pub m: usize,
    pub n: usize,
    /// `sum_{k=m}^{n} alpha_k z_k`.
    pub noise_sum: GridFunction,
    /// `sum_k discount(k) alpha_k z_k`.
    pub discounted: GridFunction,
    /// The same, by summation by parts through the tails
    /// `sum_{k=t}^{n} alpha_k z_k`.
    pub discounted_by_parts: GridFunction,
    /// `sum_k phi_k discount(k) alpha_k z_k`.
    pub gained: GridFunction,
    /// The same, as `phi_m D_m + sum_{t>m} (phi_t - phi_{t-1}) D_t` with
    /// `D_t` the discounted sum started at `t`.
    pub gained_by_parts: GridFunction,
    /// `discount(k)` for `k = m..=n`.
    pub discounts: Vec<f64>,
    /// `prod_{j=m}^{n} (1 - beta_j)`.
    pub full_product: f64,
}

fn discounts(beta: &[f64], m: usize, n: usize) -> (Vec<f64>, f64) {
    let mut out = vec![1.0; n - m + 1];
    for k in (m..n).rev() {
        out[k - m] = out[k + 1 - m] * (1.0 - beta[k + 1]);
    }
    let full = out[0] * (1.0 - beta[m]);
    (out, full)
}

fn check_range(len: usize, m: usize, n: usize, what: &str) -> Result<(), EngineError> {
    if m > n || n >= len {
        return Err(EngineError::InvalidInput(format!(
            "{what}: need m <= n < {len}, got m={m}, n={n}"
        )));
    }
    Ok(())
}

/// `z[k]` is the term paired with `alpha[k]`; all slices share global indices.
pub fn weighted_tail_sums(
    z: &[GridFunction],
    alpha: &[f64],
    beta: &[f64],
    phi: &[f64],
    m: usize,
    n: usize,
) -> Result<WeightedSums, EngineError> {
    let len = z.len().min(alpha.len()).min(beta.len()).min(phi.len());
    check_range(len, m, n, "weighted sums")?;
    if phi[m..=n].windows(2).any(|w| w[1] < w[0]) {
        return Err(EngineError::InvalidInput(
            "gain sequence phi must be nondecreasing".into(),
        ));
    }
    let (rows, dims) = z[m].shape();
    if z[m..=n].iter().any(|zk| zk.shape() != (rows, dims)) {
        return Err(EngineError::InvalidInput("terms differ in shape".into()));
    }
    let (disc, full_product) = discounts(beta, m, n);
    let width = rows * dims;

    // Tails a_t = sum_{k=t}^{n} alpha_k z_k and D_t = sum_{k=t}^{n} disc(k) alpha_k z_k
    // for t = m..=n+1, accumulated from the right.
    let mut tail_a = vec![vec![0.0; width]; n - m + 2];
    let mut tail_d = vec![vec![0.0; width]; n - m + 2];
    let mut gained = vec![0.0; width];
    for k in (m..=n).rev() {
        let i = k - m;
        let (lo, hi) = tail_a.split_at_mut(i + 1);
        let (dlo, dhi) = tail_d.split_at_mut(i + 1);
        for (r, &zv) in z[k].values().iter().enumerate() {
            let term = alpha[k] * zv;
            lo[i][r] = hi[0][r] + term;
            dlo[i][r] = dhi[0][r] + disc[i] * term;
            gained[r] += phi[k] * disc[i] * term;
        }
    }

    // Summation by parts: disc(k) (a_k - a_{k+1}) regrouped onto a_t.
    let mut by_parts = vec![0.0; width];
    for t in m + 1..=n {
        let w = disc[t - m] - disc[t - 1 - m];
        for (b, a) in by_parts.iter_mut().zip(&tail_a[t - m]) {
            *b += w * a;
        }
    }
    for (b, a) in by_parts.iter_mut().zip(&tail_a[0]) {
        *b += disc[0] * a;
    }

    let mut gained_parts: Vec<f64> = tail_d[0].iter().map(|v| phi[m] * v).collect();
    for t in m + 1..=n {
        let w = phi[t] - phi[t - 1];
        for (g, dv) in gained_parts.iter_mut().zip(&tail_d[t - m]) {
            *g += w * dv;
        }
    }

    let f = |v: Vec<f64>| GridFunction::from_raw(rows, dims, v);
    Ok(WeightedSums {
        m,
        n,
        noise_sum: f(tail_a.swap_remove(0)),
        discounted: f(tail_d.swap_remove(0)),
        discounted_by_parts: f(by_parts),
        gained: f(gained),
        gained_by_parts: f(gained_parts),
        discounts: disc,
        full_product,
    })
}

/// `prod_{j=m}^{n} (1 - beta_j) e_m`: the discounted starting error.
pub fn discounted_start(
    start_error: &GridFunction,
    beta: &[f64],
    m: usize,
    n: usize,
) -> Result<GridFunction, EngineError> {
    check_range(beta.len(), m, n, "discounted start")?;
    Ok(start_error.scale(discounts(beta, m, n).1))
}

/// `sum_{k=m}^{n} prod_{k<j<=n} (1 - beta_j) beta_k r_k` for residuals
/// `r_k = G(x_k)/theta - (x_k - x*)`.
pub fn discounted_residuals(
    residuals: &[GridFunction],
    beta: &[f64],
    m: usize,
    n: usize,
) -> Result<GridFunction, EngineError> {
    check_range(
        residuals.len().min(beta.len()),
        m,
        n,
        "discounted residuals",
    )?;
    let (disc, _) = discounts(beta, m, n);
    let mut out = residuals[m].scale(0.0);
    for k in m..=n {
        out.axpy(disc[k - m] * beta[k], &residuals[k]);
    }
    Ok(out)
}

/// `S_{up_to+1} = sum_{k=0}^{up_to} alpha_k z_k`.
pub fn partial_noise_sum(
    samples: &[GridFunction],
    schedule: &StepSchedule,
    up_to: usize,
) -> Result<GridFunction, EngineError> {
    if up_to >= samples.len() {
        return Err(EngineError::InvalidInput(format!(
            "need {} samples, have {}",
            up_to + 1,
            samples.len()
        )));
    }
    let (m, d) = samples[0].shape();
    let mut acc = CompensatedVec::new(m * d);
    for (k, z) in samples[..=up_to].iter().enumerate() {
        acc.add_scaled(schedule.checked_alpha(k)?, z.values());
    }
    Ok(acc.value(m, d))
}

/// `S_0 = 0, S_1, ..., S_len` with `S_i = sum_{k<i} alpha_k z_k`.
pub fn noise_partial_sums(
    samples: &[GridFunction],
    schedule: &StepSchedule,
) -> Result<Vec<GridFunction>, EngineError> {
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let (m, d) = first.shape();
    let mut acc = CompensatedVec::new(m * d);
    let mut out = Vec::with_capacity(samples.len() + 1);
    out.push(acc.value(m, d));
    for (k, z) in samples.iter().enumerate() {
        acc.add_scaled(schedule.checked_alpha(k)?, z.values());
        out.push(acc.value(m, d));
    }
    Ok(out)
}
