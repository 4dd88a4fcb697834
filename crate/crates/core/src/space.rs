//! Grid-discretized function spaces.
//!
//! Every element of `C([0,1], R^d)`, `D([0,1], R^d)` or `L^p([0,1], R^d)` is
//! represented by its values on the uniform grid `t_i = i / (M - 1)`. The
//! fiber norm on `R^d` is Euclidean.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SpaceError;
use crate::fmt_f64;

/// A `d`-vector valued function sampled on `m` uniform nodes of `[0, 1]`.
///
/// Values are stored node-major: node `i` occupies `values[i*d .. (i+1)*d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
    m: usize,
    d: usize,
}

impl GridFunction {
    pub fn new(m: usize, d: usize, values: Vec<f64>) -> Result<Self, SpaceError> {
        check_shape(m, d)?;
        if values.len() != m * d {
            return Err(SpaceError::ShapeMismatch {
                expected: (m, d),
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(SpaceError::NonFinite { index });
        }
        Ok(Self { values, m, d })
    }

    pub fn zeros(m: usize, d: usize) -> Result<Self, SpaceError> {
        check_shape(m, d)?;
        Ok(Self {
            values: vec![0.0; m * d],
            m,
            d,
        })
    }

    /// Samples `f(t, out)` at every node; `out` has length `d`.
    pub fn from_fn(
        m: usize,
        d: usize,
        mut f: impl FnMut(f64, &mut [f64]),
    ) -> Result<Self, SpaceError> {
        check_shape(m, d)?;
        let mut values = vec![0.0; m * d];
        for (i, chunk) in values.chunks_exact_mut(d).enumerate() {
            f(grid_point(i, m), chunk);
        }
        Self::new(m, d, values)
    }

    /// Samples a scalar profile, replicated across all `d` coordinates.
    pub fn from_scalar_fn(m: usize, d: usize, f: impl Fn(f64) -> f64) -> Result<Self, SpaceError> {
        Self::from_fn(m, d, |t, out| out.fill(f(t)))
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.d)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// The `d`-vector carried by node `i`.
    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn t(&self, i: usize) -> f64 {
        grid_point(i, self.m)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    /// Euclidean magnitude `|f(t_i)|` at every node.
    pub fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes().map(euclid)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.m == other.m && self.d == other.d
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, SpaceError> {
        self.zip_checked(other, |a, b| a + b)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, SpaceError> {
        self.zip_checked(other, |a, b| a - b)
    }

    /// # Panics
    /// If the shapes differ.
    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    /// # Panics
    /// If the shapes differ.
    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            m: self.m,
            d: self.d,
        }
    }

    /// `self += a * x`.
    ///
    /// # Panics
    /// If the shapes differ.
    pub fn axpy(&mut self, a: f64, x: &Self) {
        self.assert_same_shape(x);
        for (y, &xv) in self.values.iter_mut().zip(&x.values) {
            *y += a * xv;
        }
    }

    pub fn fill_zero(&mut self) {
        self.values.fill(0.0);
    }

    pub fn copy_from(&mut self, other: &Self) {
        self.assert_same_shape(other);
        self.values.copy_from_slice(&other.values);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Builds without the finiteness scan; callers guarantee the shape.
    pub(crate) fn from_raw(m: usize, d: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), m * d);
        Self { values, m, d }
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        self.assert_same_shape(other);
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            m: self.m,
            d: self.d,
        }
    }

    fn zip_checked(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, SpaceError> {
        if !self.same_shape(other) {
            return Err(SpaceError::ShapeMismatch {
                expected: self.shape(),
                found: other.values.len(),
            });
        }
        Ok(self.zip(other, f))
    }

    fn assert_same_shape(&self, other: &Self) {
        assert!(
            self.same_shape(other),
            "grid function shape mismatch: {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
    }

    /// CSV with header `t,v0,...,v{d-1}` and 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.m * (self.d + 1) * 24);
        out.push('t');
        for k in 0..self.d {
            let _ = write!(out, ",v{k}");
        }
        out.push('\n');
        for (i, node) in self.nodes().enumerate() {
            out.push_str(&fmt_f64(self.t(i)));
            for &v in node {
                out.push(',');
                out.push_str(&fmt_f64(v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, SpaceError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| SpaceError::Csv("empty input".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(SpaceError::Csv(format!("bad header `{header}`")));
        }
        for (k, c) in cols[1..].iter().enumerate() {
            if *c != format!("v{k}") {
                return Err(SpaceError::Csv(format!("bad column `{c}`")));
            }
        }
        let d = cols.len() - 1;
        let mut values = Vec::new();
        let mut m = 0;
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 {
                return Err(SpaceError::Csv(format!(
                    "row {row}: expected {} fields",
                    d + 1
                )));
            }
            for f in &fields[1..] {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|e| SpaceError::Csv(format!("row {row}: {e}")))?;
                values.push(v);
            }
            m += 1;
        }
        Self::new(m, d, values)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

fn check_shape(m: usize, d: usize) -> Result<(), SpaceError> {
    if m < 2 || d < 1 {
        return Err(SpaceError::InvalidGrid { m, d });
    }
    Ok(())
}

/// Node `i` of the uniform grid with `m` points, endpoints included.
pub fn grid_point(i: usize, m: usize) -> f64 {
    i as f64 / (m - 1) as f64
}

fn euclid(v: &[f64]) -> f64 {
    match v {
        [x] => x.abs(),
        _ => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

/// Trapezoidal weights on the uniform grid; they sum to one.
pub fn trapezoid_weights(m: usize) -> Vec<f64> {
    let h = 1.0 / (m - 1) as f64;
    let mut w = vec![h; m];
    w[0] = 0.5 * h;
    w[m - 1] = 0.5 * h;
    w
}

/// `max_i |f(t_i)|`.
pub fn sup_norm(f: &GridFunction) -> f64 {
    f.magnitudes().fold(0.0, f64::max)
}

/// Trapezoidal `(sum_i w_i |f(t_i)|^p)^(1/p)`.
pub fn lp_norm(f: &GridFunction, p: f64) -> Result<f64, SpaceError> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(SpaceError::InvalidExponent(p));
    }
    Ok(lp_norm_unchecked(f, p))
}

fn lp_norm_unchecked(f: &GridFunction, p: f64) -> f64 {
    let m = f.m();
    let h = 1.0 / (m - 1) as f64;
    let last = m - 1;
    let weight = |i: usize| if i == 0 || i == last { 0.5 * h } else { h };
    if p == 1.0 {
        f.magnitudes().enumerate().map(|(i, a)| weight(i) * a).sum()
    } else if p == 2.0 {
        f.nodes()
            .enumerate()
            .map(|(i, v)| weight(i) * v.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    } else {
        f.magnitudes()
            .enumerate()
            .map(|(i, a)| weight(i) * a.powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormKind {
    Sup,
    Lp(f64),
}

/// Constants of the inequality
/// `||x+y||^p + ||x-y||^p <= 2 ||x||^p + D ||y||^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub p: f64,
    pub constant: f64,
}

/// Which discretized Banach space an element lives in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceDescriptor {
    norm: NormKind,
    m: usize,
    d: usize,
    smoothness: Option<Smoothness>,
}

impl SpaceDescriptor {
    pub fn sup(m: usize, d: usize) -> Result<Self, SpaceError> {
        check_shape(m, d)?;
        Ok(Self {
            norm: NormKind::Sup,
            m,
            d,
            smoothness: None,
        })
    }

    pub fn lp(p: f64, m: usize, d: usize) -> Result<Self, SpaceError> {
        check_shape(m, d)?;
        if !(p >= 1.0) || !p.is_finite() {
            return Err(SpaceError::InvalidExponent(p));
        }
        Ok(Self {
            norm: NormKind::Lp(p),
            m,
            d,
            smoothness: None,
        })
    }

    pub fn with_smoothness(mut self, p: f64, constant: f64) -> Result<Self, SpaceError> {
        if !(p > 1.0 && p <= 2.0) || !(constant > 0.0) || !constant.is_finite() {
            return Err(SpaceError::InvalidSmoothness { p, constant });
        }
        self.smoothness = Some(Smoothness { p, constant });
        Ok(self)
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn smoothness(&self) -> Option<Smoothness> {
        self.smoothness
    }

    pub fn norm(&self, f: &GridFunction) -> f64 {
        match self.norm {
            NormKind::Sup => sup_norm(f),
            NormKind::Lp(p) => lp_norm_unchecked(f, p),
        }
    }

    pub fn distance(&self, a: &GridFunction, b: &GridFunction) -> f64 {
        self.norm(&a.sub(b))
    }

    pub fn zeros(&self) -> GridFunction {
        GridFunction::from_raw(self.m, self.d, vec![0.0; self.m * self.d])
    }

    pub fn contains(&self, f: &GridFunction) -> bool {
        f.shape() == (self.m, self.d)
    }

    pub fn check(&self, f: &GridFunction) -> Result<(), SpaceError> {
        if self.contains(f) {
            Ok(())
        } else {
            Err(SpaceError::ShapeMismatch {
                expected: (self.m, self.d),
                found: f.values().len(),
            })
        }
    }
}

/// `||x+y||^p + ||x-y||^p - 2||x||^p - D||y||^p`; non-positive values
/// certify the smoothness inequality at `(x, y)`.
pub fn smoothness_residual(
    x: &GridFunction,
    y: &GridFunction,
    space: &SpaceDescriptor,
) -> Result<f64, SpaceError> {
    let s = space.smoothness.ok_or(SpaceError::MissingSmoothness)?;
    space.check(x)?;
    space.check(y)?;
    let p = s.p;
    let plus = space.norm(&x.add(y)).powf(p);
    let minus = space.norm(&x.sub(y)).powf(p);
    Ok(plus + minus - 2.0 * space.norm(x).powf(p) - s.constant * space.norm(y).powf(p))
}

/// Smallest `D` that makes the inequality hold at `(x, y)`; zero when `y = 0`.
pub fn required_smoothness_constant(
    x: &GridFunction,
    y: &GridFunction,
    space: &SpaceDescriptor,
    p: f64,
) -> f64 {
    let ny = space.norm(y).powf(p);
    if ny == 0.0 {
        return 0.0;
    }
    let lhs = space.norm(&x.add(y)).powf(p) + space.norm(&x.sub(y)).powf(p);
    (lhs - 2.0 * space.norm(x).powf(p)) / ny
}
