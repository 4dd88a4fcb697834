//! Root-finding problems `G(x) = 0` satisfying the unified condition
//!
//! ```text
//! || G(x)/theta - (x - x*) || <= rho || x - x* ||     for all x,
//! ```
//!
//! built from contractions, Hilbert-space gradients and pointwise monotone
//! maps, together with a Monte Carlo certificate for that condition.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::OperatorError;
use crate::rng::stream_rng;
use crate::space::{GridFunction, SpaceDescriptor};

/// Tolerance on `||G(x*)||` accepted for a constructed problem.
pub const ROOT_TOL: f64 = 1e-9;

/// Tolerance used when locating roots by bisection or Picard iteration.
pub const SOLVE_TOL: f64 = 1e-12;

pub type Operator = Arc<dyn Fn(&GridFunction) -> GridFunction + Send + Sync>;

/// `G` together with its root and the constants `(theta, rho)`.
#[derive(Clone)]
pub struct RootProblem {
    name: String,
    g: Operator,
    x_star: GridFunction,
    theta: f64,
    rho: f64,
    space: SpaceDescriptor,
}

impl fmt::Debug for RootProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RootProblem")
            .field("name", &self.name)
            .field("theta", &self.theta)
            .field("rho", &self.rho)
            .field("space", &self.space)
            .finish_non_exhaustive()
    }
}

impl RootProblem {
    pub fn new(
        name: impl Into<String>,
        g: Operator,
        x_star: GridFunction,
        theta: f64,
        rho: f64,
        space: SpaceDescriptor,
    ) -> Result<Self, OperatorError> {
        if !(theta >= 1.0 && theta.is_finite()) || !(0.0..1.0).contains(&rho) {
            return Err(OperatorError::InvalidConstants { theta, rho });
        }
        space.check(&x_star)?;
        let residual = space.norm(&g(&x_star));
        if !(residual <= ROOT_TOL) {
            return Err(OperatorError::NotARoot(residual));
        }
        Ok(Self {
            name: name.into(),
            g,
            x_star,
            theta,
            rho,
            space,
        })
    }

    pub fn apply(&self, x: &GridFunction) -> GridFunction {
        (self.g)(x)
    }

    pub fn operator(&self) -> &Operator {
        &self.g
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn x_star(&self) -> &GridFunction {
        &self.x_star
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn space(&self) -> &SpaceDescriptor {
        &self.space
    }

    /// `||x - x*||` in the problem's norm.
    pub fn error(&self, x: &GridFunction) -> f64 {
        self.space.distance(x, &self.x_star)
    }

    /// `||G(x)/theta - (x - x*)|| / ||x - x*||`, or `None` at `x = x*`.
    pub fn r2_ratio(&self, x: &GridFunction) -> Option<f64> {
        let diff = x.sub(&self.x_star);
        let denom = self.space.norm(&diff);
        if denom == 0.0 {
            return None;
        }
        let mut lhs = self.apply(x).scale(1.0 / self.theta);
        lhs.axpy(-1.0, &diff);
        Some(self.space.norm(&lhs) / denom)
    }
}

/// `0 < c1 <= c2 < inf`: lower and upper slopes of a monotone map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotoneBounds {
    c1: f64,
    c2: f64,
}

impl MonotoneBounds {
    pub fn new(c1: f64, c2: f64) -> Result<Self, OperatorError> {
        if !(c1 > 0.0 && c1 <= c2 && c2.is_finite()) {
            return Err(OperatorError::InvalidBounds { c1, c2 });
        }
        Ok(Self { c1, c2 })
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }
}

/// `theta = 1 + c1 + c2`, `rho = 1 - c1 / theta`.
pub fn theta_rho_from_bounds(b: MonotoneBounds) -> (f64, f64) {
    let theta = 1.0 + b.c1 + b.c2;
    (theta, 1.0 - b.c1 / theta)
}

/// `G(x) = x - F(x)` for a `gamma`-contraction `F` with fixed point `x_star`.
pub fn from_contraction(
    f: impl Fn(&GridFunction) -> GridFunction + Send + Sync + 'static,
    gamma: f64,
    x_star: GridFunction,
    space: SpaceDescriptor,
) -> Result<RootProblem, OperatorError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(OperatorError::InvalidGamma(gamma));
    }
    space.check(&x_star)?;
    let gap = space.distance(&f(&x_star), &x_star);
    if !(gap <= ROOT_TOL) {
        return Err(OperatorError::NotAFixedPoint(gap));
    }
    let g: Operator = Arc::new(move |x: &GridFunction| x.sub(&f(x)));
    RootProblem::new("contraction", g, x_star, 1.0, gamma, space)
}

/// `F(x) = gamma x + b`, whose fixed point is `b / (1 - gamma)`.
pub fn linear_contraction(
    gamma: f64,
    offset: GridFunction,
    space: SpaceDescriptor,
) -> Result<RootProblem, OperatorError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(OperatorError::InvalidGamma(gamma));
    }
    space.check(&offset)?;
    let x_star = offset.scale(1.0 / (1.0 - gamma));
    let f = move |x: &GridFunction| {
        let mut out = offset.clone();
        out.axpy(gamma, x);
        out
    };
    let mut p = from_contraction(f, gamma, x_star, space)?;
    p.name = "linear_contraction".into();
    Ok(p)
}

/// Row-stochastic Gaussian smoothing kernel on the grid,
/// `K_ij = w_j k(t_i, t_j) / sum_l w_l k(t_i, t_l)` with trapezoidal `w`.
#[derive(Debug, Clone)]
pub struct SmoothingKernel {
    m: usize,
    rows: Vec<f64>,
}

impl SmoothingKernel {
    pub fn gaussian(m: usize, bandwidth: f64) -> Result<Self, OperatorError> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(OperatorError::InvalidBounds {
                c1: bandwidth,
                c2: bandwidth,
            });
        }
        let w = crate::space::trapezoid_weights(m);
        let t: Vec<f64> = (0..m).map(|i| crate::space::grid_point(i, m)).collect();
        let mut rows = vec![0.0; m * m];
        for i in 0..m {
            let row = &mut rows[i * m..(i + 1) * m];
            for j in 0..m {
                let z = (t[i] - t[j]) / bandwidth;
                row[j] = w[j] * (-0.5 * z * z).exp();
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
        Ok(Self { m, rows })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.m..(i + 1) * self.m]
    }

    /// `(K x)(t_i) = sum_j K_ij x(t_j)`, coordinate-wise.
    pub fn apply(&self, x: &GridFunction) -> GridFunction {
        let d = x.d();
        let mut out = vec![0.0; self.m * d];
        for i in 0..self.m {
            let acc = &mut out[i * d..(i + 1) * d];
            for (j, &k) in self.row(i).iter().enumerate() {
                for (a, &v) in acc.iter_mut().zip(x.node(j)) {
                    *a += k * v;
                }
            }
        }
        GridFunction::from_raw(self.m, d, out)
    }
}

/// Iterates `x <- F(x)` until successive iterates are `tol` apart.
pub fn picard_fixed_point(
    f: impl Fn(&GridFunction) -> GridFunction,
    x0: GridFunction,
    space: &SpaceDescriptor,
    tol: f64,
    max_iter: usize,
) -> Result<GridFunction, OperatorError> {
    let mut x = x0;
    for _ in 0..max_iter {
        let next = f(&x);
        let step = space.distance(&next, &x);
        x = next;
        if step <= tol {
            return Ok(x);
        }
    }
    Err(OperatorError::NoFixedPoint {
        tol,
        iterations: max_iter,
    })
}

/// `F(x) = gamma K x + b` with a Gaussian smoothing kernel `K`; `x*` is
/// located by Picard iteration.
pub fn kernel_contraction(
    gamma: f64,
    bandwidth: f64,
    offset: GridFunction,
    space: SpaceDescriptor,
) -> Result<RootProblem, OperatorError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(OperatorError::InvalidGamma(gamma));
    }
    space.check(&offset)?;
    let kernel = Arc::new(SmoothingKernel::gaussian(space.m(), bandwidth)?);
    let f = {
        let kernel = kernel.clone();
        move |x: &GridFunction| {
            let mut out = kernel.apply(x).scale(gamma);
            out.axpy(1.0, &offset);
            out
        }
    };
    let x_star = picard_fixed_point(&f, space.zeros(), &space, SOLVE_TOL, 10_000)?;
    let mut p = from_contraction(f, gamma, x_star, space)?;
    p.name = "kernel_contraction".into();
    Ok(p)
}

/// Pointwise map `(G x)(t) = g(t, x(t))`, applied to every coordinate,
/// with `c1 <= dg/dv <= c2`. The root curve is found node by node.
pub fn pointwise_monotone(
    g_scalar: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    bounds: MonotoneBounds,
    space: SpaceDescriptor,
) -> Result<RootProblem, OperatorError> {
    let (theta, rho) = theta_rho_from_bounds(bounds);
    let (m, d) = (space.m(), space.d());
    let mut roots = Vec::with_capacity(m * d);
    for i in 0..m {
        let t = crate::space::grid_point(i, m);
        let r = bisect_increasing(|v| g_scalar(t, v), SOLVE_TOL)
            .ok_or(OperatorError::NoBracket { node: i, t })?;
        roots.extend(std::iter::repeat_n(r, d));
    }
    let x_star = GridFunction::new(m, d, roots)?;
    let g: Operator = Arc::new(move |x: &GridFunction| {
        let mut out = x.clone();
        let d = x.d();
        for (k, v) in out.values_mut().iter_mut().enumerate() {
            *v = g_scalar(crate::space::grid_point(k / d, x.m()), *v);
        }
        out
    });
    RootProblem::new("pointwise_monotone", g, x_star, theta, rho, space)
}

/// `G(x) = c(t) (x - s)`, the `L^2` gradient of `x -> 1/2 int c(t)|x(t) - s(t)|^2 dt`,
/// with curvature `c(t)` inside `[c1, c2]`.
pub fn quadratic_gradient(
    curvature: impl Fn(f64) -> f64 + Send + Sync + 'static,
    target: GridFunction,
    bounds: MonotoneBounds,
    space: SpaceDescriptor,
) -> Result<RootProblem, OperatorError> {
    space.check(&target)?;
    let (theta, rho) = theta_rho_from_bounds(bounds);
    let m = space.m();
    let c: Vec<f64> = (0..m)
        .map(|i| curvature(crate::space::grid_point(i, m)))
        .collect();
    if c.iter()
        .any(|&ci| !(ci >= bounds.c1() && ci <= bounds.c2()))
    {
        return Err(OperatorError::InvalidBounds {
            c1: bounds.c1(),
            c2: bounds.c2(),
        });
    }
    let s = target.clone();
    let g: Operator = Arc::new(move |x: &GridFunction| {
        let mut out = x.sub(&s);
        let d = x.d();
        for (k, v) in out.values_mut().iter_mut().enumerate() {
            *v *= c[k / d];
        }
        out
    });
    RootProblem::new("quadratic_gradient", g, target, theta, rho, space)
}

/// Root of an increasing scalar function: bracket by doubling out from
/// `[-1, 1]`, then bisect down to width `tol`.
pub fn bisect_increasing(f: impl Fn(f64) -> f64, tol: f64) -> Option<f64> {
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let mut expansions = 0;
    while f(lo) > 0.0 || f(hi) < 0.0 {
        if expansions == 1100 {
            return None;
        }
        if f(lo) > 0.0 {
            lo *= 2.0;
        }
        if f(hi) < 0.0 {
            hi *= 2.0;
        }
        expansions += 1;
        if !lo.is_finite() || !hi.is_finite() {
            return None;
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= tol * 1f64.max(mid.abs()) {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    Some(if f(lo).abs() < f(mid).abs() { lo } else { mid })
}

/// Search radius covering the region a run started at `x0` visits.
pub fn default_radius(problem: &RootProblem, x0: &GridFunction) -> f64 {
    let r = 10.0 * problem.error(x0);
    if r > 0.0 {
        r
    } else {
        10.0
    }
}

fn random_direction(rng: &mut impl Rng, space: &SpaceDescriptor, family: usize) -> GridFunction {
    let (m, d) = (space.m(), space.d());
    let mut v = vec![0.0; m * d];
    match family % 3 {
        0 => v.iter_mut().for_each(|x| *x = rng.sample(StandardNormal)),
        1 => {
            // Low-frequency random Fourier profile.
            for k in 0..d {
                let coeffs: Vec<(f64, f64)> = (0..4)
                    .map(|_| (rng.sample(StandardNormal), rng.random_range(0.0..1.0)))
                    .collect();
                for i in 0..m {
                    let t = crate::space::grid_point(i, m);
                    v[i * d + k] = coeffs
                        .iter()
                        .enumerate()
                        .map(|(f, &(a, ph))| {
                            a * (2.0 * std::f64::consts::PI * (f as f64 * t + ph)).sin()
                        })
                        .sum();
                }
            }
        }
        _ => {
            // A spike on one node over small background noise.
            v.iter_mut()
                .for_each(|x| *x = 0.05 * rng.sample::<f64, _>(StandardNormal));
            let node = rng.random_range(0..m);
            for k in 0..d {
                v[node * d + k] += rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    GridFunction::from_raw(m, d, v)
}

/// Largest sampled value of `||G(x)/theta - (x - x*)|| / ||x - x*||` over
/// `x = x* + r u`, `r` uniform on `(0, radius]`, `u` a unit direction.
///
/// The certificate passes when the result is at most `rho + 1e-9`.
pub fn verify_r2(problem: &RootProblem, n_samples: usize, radius: f64, seed: u64) -> f64 {
    let space = *problem.space();
    (0..n_samples.max(1) as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            loop {
                let u = random_direction(&mut rng, &space, i as usize);
                let nu = space.norm(&u);
                if nu == 0.0 {
                    continue;
                }
                let r = radius * (1.0 - rng.random::<f64>());
                let mut x = problem.x_star().clone();
                x.axpy(r / nu, &u);
                if space.distance(&x, problem.x_star()) < 1e-14 {
                    continue;
                }
                if let Some(ratio) = problem.r2_ratio(&x) {
                    return ratio;
                }
            }
        })
        .reduce(|| 0.0, f64::max)
}

/// Certificate tolerance added to `rho`.
pub const R2_SLACK: f64 = 1e-9;
