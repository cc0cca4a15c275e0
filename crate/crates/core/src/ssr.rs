//! l1-regularized least squares over complex coefficients.
//!
//! Minimizes `||r - A b||^2 + w ||b||_1` with an accelerated proximal
//! gradient method. Momentum is reset whenever an accelerated step would
//! increase the objective, in which case a plain proximal step is taken
//! instead, so the objective sequence never increases.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsrParams {
    pub lasso_weight: f64,
    /// Stop when the relative objective change drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Support keeps entries with `|b_i| > support_fraction * max |b|`.
    pub support_fraction: f64,
    pub max_support: usize,
    /// Solve a decreasing sequence of weights ending at `lasso_weight`,
    /// warm-starting each stage from the previous one.
    pub continuation: bool,
    pub continuation_factor: f64,
}

impl Default for SsrParams {
    fn default() -> Self {
        Self {
            lasso_weight: 1e-5,
            tolerance: 1e-8,
            max_iterations: 5000,
            support_fraction: 0.05,
            max_support: 64,
            continuation: true,
            continuation_factor: 0.1,
        }
    }
}

impl SsrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lasso_weight >= 0.0 && self.lasso_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!("lasso_weight must be >= 0, got {}", self.lasso_weight)));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidConfig("solver tolerance and iteration cap must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.support_fraction) || self.max_support == 0 {
            return Err(Error::InvalidConfig("support_fraction must be in [0, 1) and max_support >= 1".into()));
        }
        if self.continuation && !(self.continuation_factor > 0.0 && self.continuation_factor < 1.0) {
            return Err(Error::InvalidConfig("continuation_factor must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsrSolution {
    pub beta: DVector<Complex64>,
    /// Indices sorted by decreasing `|beta|`.
    pub support: Vec<usize>,
    pub residual_norm: f64,
    /// Total iterations over all continuation stages.
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every iteration of the final stage.
    pub objective_history: Vec<f64>,
}

pub fn objective(r: &DVector<Complex64>, phi: &DMatrix<Complex64>, beta: &DVector<Complex64>, weight: f64) -> f64 {
    (r - phi * beta).norm_squared() + weight * l1(beta)
}

fn l1(v: &DVector<Complex64>) -> f64 {
    v.iter().map(|z| z.norm()).sum()
}

/// Complex soft threshold: shrinks each magnitude by `t`, keeping phase.
pub fn soft_threshold(v: &DVector<Complex64>, t: f64) -> DVector<Complex64> {
    v.map(|z| {
        let a = z.norm();
        if a <= t {
            Complex64::new(0.0, 0.0)
        } else {
            z * ((a - t) / a)
        }
    })
}

/// Largest eigenvalue of `A^H A` by power iteration.
pub fn spectral_norm_sq(phi: &DMatrix<Complex64>) -> f64 {
    let n = phi.ncols();
    if n == 0 || phi.nrows() == 0 {
        return 0.0;
    }
    // deterministic start with no special alignment to any column
    let mut v = DVector::from_fn(n, |i, _| Complex64::from_polar(1.0, 0.7 * i as f64 + 0.3 * (i * i) as f64));
    v /= Complex64::new(v.norm(), 0.0);
    let mut est = 0.0;
    for _ in 0..200 {
        let w = phi.ad_mul(&(phi * &v));
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let converged = (nw - est).abs() <= 1e-10 * nw;
        est = nw;
        v = w / Complex64::new(nw, 0.0);
        if converged {
            break;
        }
    }
    est
}

/// Solve `min_b ||r - phi b||^2 + w ||b||_1`.
pub fn solve_ssr(r: &DVector<Complex64>, phi: &DMatrix<Complex64>, params: &SsrParams) -> Result<SsrSolution> {
    params.validate()?;
    if phi.nrows() != r.len() {
        return Err(dim_mismatch(phi.nrows(), r.len()));
    }
    if phi.ncols() == 0 {
        return Err(Error::InvalidConfig("empty dictionary".into()));
    }
    if r.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("measurement"));
    }
    if phi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("dictionary"));
    }

    let lipschitz = 2.0 * spectral_norm_sq(phi) * 1.01;
    let n = phi.ncols();
    let mut beta = DVector::from_element(n, Complex64::new(0.0, 0.0));
    if lipschitz == 0.0 {
        return Ok(finish(beta, r, phi, params, 0, true, vec![r.norm_squared()]));
    }

    let mut weights = Vec::new();
    if params.continuation {
        // above this weight the zero vector is optimal
        let w_max = 2.0 * phi.ad_mul(r).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut w = w_max * params.continuation_factor;
        while w > params.lasso_weight {
            weights.push(w);
            w *= params.continuation_factor;
        }
    }
    weights.push(params.lasso_weight);

    let mut total = 0;
    let mut converged = false;
    let mut history = Vec::new();
    for (stage, &w) in weights.iter().enumerate() {
        let last = stage + 1 == weights.len();
        let out = fista(r, phi, &beta, w, lipschitz, params, last);
        beta = out.0;
        total += out.1;
        converged = out.2;
        if last {
            history = out.3;
        }
    }
    Ok(finish(beta, r, phi, params, total, converged, history))
}

fn fista(
    r: &DVector<Complex64>,
    phi: &DMatrix<Complex64>,
    start: &DVector<Complex64>,
    weight: f64,
    lipschitz: f64,
    params: &SsrParams,
    record: bool,
) -> (DVector<Complex64>, usize, bool, Vec<f64>) {
    let step = Complex64::new(2.0 / lipschitz, 0.0);
    let thresh = weight / lipschitz;
    let prox_step = |point: &DVector<Complex64>| {
        let grad_half = phi.ad_mul(&(phi * point - r));
        soft_threshold(&(point - grad_half * step), thresh)
    };

    let mut x = start.clone();
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut f_x = objective(r, phi, &x, weight);
    let mut history = Vec::new();
    if record {
        history.push(f_x);
    }
    for it in 1..=params.max_iterations {
        let mut z = prox_step(&y);
        let mut f_z = objective(r, phi, &z, weight);
        if f_z > f_x {
            // restart: a plain proximal step from x cannot increase the objective
            t = 1.0;
            z = prox_step(&x);
            f_z = objective(r, phi, &z, weight);
            if f_z > f_x {
                // only rounding can get here
                z = x.clone();
                f_z = f_x;
            }
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &z + (&z - &x) * Complex64::new((t - 1.0) / t_next, 0.0);
        t = t_next;
        let change = (f_x - f_z).abs();
        let scale = f_x.abs().max(f64::MIN_POSITIVE);
        x = z;
        f_x = f_z;
        if record {
            history.push(f_x);
        }
        if change <= params.tolerance * scale {
            return (x, it, true, history);
        }
    }
    (x, params.max_iterations, false, history)
}

fn finish(
    beta: DVector<Complex64>,
    r: &DVector<Complex64>,
    phi: &DMatrix<Complex64>,
    params: &SsrParams,
    iterations: usize,
    converged: bool,
    objective_history: Vec<f64>,
) -> SsrSolution {
    let support = support_of(&beta, params.support_fraction, params.max_support);
    let residual_norm = (r - phi * &beta).norm();
    SsrSolution { beta, support, residual_norm, iterations, converged, objective_history }
}

pub fn support_of(beta: &DVector<Complex64>, fraction: f64, cap: usize) -> Vec<usize> {
    let max = beta.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..beta.len()).filter(|&i| beta[i].norm() > fraction * max).collect();
    idx.sort_by(|&a, &b| beta[b].norm().total_cmp(&beta[a].norm()).then(a.cmp(&b)));
    idx.truncate(cap);
    idx
}
