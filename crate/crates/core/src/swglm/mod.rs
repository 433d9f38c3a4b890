//! Survey-weighted logistic regression.
//!
//! Coefficients maximize the weight-scaled Bernoulli log-likelihood
//! `Σ wᵢ [yᵢ ηᵢ − log(1 + e^{ηᵢ})]` by iteratively reweighted least squares
//! with step halving, so the likelihood never decreases between iterations.
//! Standard errors come from the sandwich estimator
//! `A⁻¹ B A⁻¹` with `A = Σ wᵢ μᵢ(1−μᵢ) xᵢxᵢᵀ` and `B = Σ wᵢ² (yᵢ−μᵢ)² xᵢxᵢᵀ`.
//! Strata and PSU identifiers are not used.

mod ewas;
mod fdr;

pub use ewas::{ewas_scan, AssociationResult, Direction, EwasError, EwasHyperparams, EwasReport, SkippedFactor};
pub use fdr::{adjust_fdr, FdrError, FdrMethod};

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::preprocess::DesignMatrix;

/// Coefficients beyond this magnitude signal (quasi-)separation.
pub const SEPARATION_BOUND: f64 = 15.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GlmError {
    #[error("coefficient {index} diverged past ±{bound} (separation)")]
    Separation { index: usize, bound: f64 },
    #[error("weighted information matrix is singular")]
    Singular,
    #[error("fit did not converge")]
    NotConverged,
    #[error("coefficient index {index} out of range for {len} coefficients")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("need more observations ({n}) than coefficients ({k})")]
    TooFewObservations { n: usize, k: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl GlmError {
    pub fn code(&self) -> &'static str {
        match self {
            GlmError::Separation { .. } => "Separation",
            GlmError::Singular => "Singular",
            GlmError::NotConverged => "NotConverged",
            GlmError::IndexOutOfRange { .. } => "IndexOutOfRange",
            GlmError::TooFewObservations { .. } => "TooFewObservations",
            GlmError::InvalidInput(_) => "InvalidInput",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Convergence when `max |Δβ| < tol`.
    pub tol: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub robust_se: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub p_values: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Weighted log-likelihood after each iteration, starting at β = 0.
    pub log_likelihood_trace: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weighted Bernoulli log-likelihood `Σ wᵢ [yᵢ ηᵢ − log(1 + e^{ηᵢ})]`.
pub fn log_likelihood(x: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &[f64]) -> f64 {
    let eta = x * DVector::from_column_slice(beta);
    eta.iter().zip(y).zip(w).map(|((e, yi), wi)| wi * (yi * e - softplus(*e))).sum()
}

/// Weighted log-likelihood of a design at the given coefficients.
pub fn weighted_log_likelihood(design: &DesignMatrix, beta: &[f64]) -> f64 {
    log_likelihood(&design.values, &design.response, &design.weights, beta)
}

/// Two-sided standard normal tail probability.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Fits a survey-weighted logistic regression by IRLS.
///
/// Returns `Ok` with `converged == false` when `max_iter` runs out.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], w: &[f64], opts: IrlsOptions) -> Result<GlmFit, GlmError> {
    let (n, k) = x.shape();
    if y.len() != n || w.len() != n {
        return Err(GlmError::InvalidInput("response and weights must match the design rows".into()));
    }
    if n <= k {
        return Err(GlmError::TooFewObservations { n, k });
    }
    if w.iter().any(|wi| !(wi.is_finite() && *wi > 0.0)) || x.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::InvalidInput("non-finite design entry or non-positive weight".into()));
    }

    let mut beta = DVector::zeros(k);
    let mut ll = log_likelihood(x, y, w, beta.as_slice());
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let eta = x * &beta;
        let mut score = DVector::zeros(k);
        let mut info = DMatrix::zeros(k, k);
        for i in 0..n {
            let mu = sigmoid(eta[i]);
            let row = x.row(i).transpose();
            score.axpy(w[i] * (y[i] - mu), &row, 1.0);
            info.ger(w[i] * mu * (1.0 - mu), &row, &row, 1.0);
        }
        let step = info.cholesky().ok_or(GlmError::Singular)?.solve(&score);
        if step.iter().any(|s| !s.is_finite()) {
            return Err(GlmError::Singular);
        }
        let mut t = 1.0;
        let mut candidate = &beta + &step;
        let mut candidate_ll = log_likelihood(x, y, w, candidate.as_slice());
        let mut halvings = 0;
        // Near the optimum the likelihood is flat to rounding, so only a real
        // decrease triggers halving.
        let floor = ll - 1e-9 * (1.0 + ll.abs());
        while !(candidate_ll >= floor) && halvings < 40 {
            t *= 0.5;
            halvings += 1;
            candidate = &beta + &step * t;
            candidate_ll = log_likelihood(x, y, w, candidate.as_slice());
        }
        if !(candidate_ll >= floor) {
            candidate = beta.clone();
            candidate_ll = ll;
        }
        if let Some(index) = candidate.iter().position(|b| b.abs() > SEPARATION_BOUND) {
            return Err(GlmError::Separation { index, bound: SEPARATION_BOUND });
        }
        let delta = (&candidate - &beta).amax();
        beta = candidate;
        ll = candidate_ll;
        trace.push(ll);
        if delta < opts.tol {
            converged = true;
            break;
        }
    }

    let robust_se = sandwich_se(x, y, w, beta.as_slice())?;
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let z_scores: Vec<f64> = coefficients.iter().zip(&robust_se).map(|(b, s)| b / s).collect();
    let p_values = z_scores.iter().map(|z| two_sided_p(*z)).collect();
    Ok(GlmFit {
        coefficients,
        robust_se,
        z_scores,
        p_values,
        converged,
        iterations,
        log_likelihood: ll,
        log_likelihood_trace: trace,
    })
}

fn sandwich_se(x: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &[f64]) -> Result<Vec<f64>, GlmError> {
    let k = x.ncols();
    let eta = x * DVector::from_column_slice(beta);
    let mut bread = DMatrix::zeros(k, k);
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..x.nrows() {
        let mu = sigmoid(eta[i]);
        let row = x.row(i).transpose();
        bread.ger(w[i] * mu * (1.0 - mu), &row, &row, 1.0);
        let r = w[i] * (y[i] - mu);
        meat.ger(r * r, &row, &row, 1.0);
    }
    let inv = bread.cholesky().ok_or(GlmError::Singular)?.inverse();
    let cov = &inv * meat * &inv;
    Ok((0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect())
}

/// Fits the design's weighted logistic model.
pub fn fit_weighted_logistic(design: &DesignMatrix, opts: IrlsOptions) -> Result<GlmFit, GlmError> {
    fit_logistic(&design.values, &design.response, &design.weights, opts)
}

/// Wald test of coefficient `k`: `z = β_k / se_k` and its two-sided p-value.
pub fn wald_test(fit: &GlmFit, k: usize) -> Result<(f64, f64), GlmError> {
    if !fit.converged {
        return Err(GlmError::NotConverged);
    }
    let len = fit.coefficients.len();
    if k >= len {
        return Err(GlmError::IndexOutOfRange { index: k, len });
    }
    let beta = fit.coefficients[k];
    let z = if beta == 0.0 { 0.0 } else { beta / fit.robust_se[k] };
    Ok((z, two_sided_p(z)))
}
