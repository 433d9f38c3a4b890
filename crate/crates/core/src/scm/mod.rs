//! Supervised cadre model for binary outcomes.
//!
//! A cadre `m` has a center `cᵐ`, a linear expert `eₘ(x) = wᵐ·x + bₘ` and
//! shares one seminorm diagonal `d` with the others. Membership
//! probabilities are a softmax over negative scaled seminorm distances,
//!
//! ```text
//! gₘ(x) = exp(−γ‖x − cᵐ‖²_d) / Σₘ' exp(−γ‖x − cᵐ'‖²_d),   ‖z‖²_d = Σₚ |dₚ| zₚ²
//! ```
//!
//! and the risk score `f(x) = Σₘ gₘ(x) eₘ(x)` is the log-odds of the outcome.

mod loss;
mod summary;
mod train;

pub use loss::{loss_and_gradients, Batch, Gradients};
pub use summary::{
    cadre_summaries, per_cadre_association, CadreAssociation, CadreSummary, CadreTest, Moments,
};
pub use train::{train_scm, ScmModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScmError {
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("label {value} at position {index} is not 0 or 1")]
    NonBinaryLabel { index: usize, value: f64 },
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid hyperparameter `{field}`: {message}")]
    InvalidHyperparams { field: String, message: String },
}

/// L1 and L2 penalty strengths; the penalty is `l1·Σ|v| + ½·l2·Σv²`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticNet {
    pub l1: f64,
    pub l2: f64,
}

impl ElasticNet {
    pub fn new(l1: f64, l2: f64) -> Self {
        Self { l1, l2 }
    }

    pub fn penalty(&self, values: impl Iterator<Item = f64>) -> f64 {
        values.map(|v| self.l1 * v.abs() + 0.5 * self.l2 * v * v).sum()
    }

    /// Subgradient, taking 0 at the L1 kink.
    pub fn gradient(&self, v: f64) -> f64 {
        let sign = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.l1 * sign + self.l2 * v
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_restarts() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmHyperparams {
    /// Number of cadres.
    #[serde(rename = "M")]
    pub cadres: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_w: ElasticNet,
    pub lambda_d: ElasticNet,
    pub seed: u64,
    /// FDR level of the per-cadre association scans.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Independent initializations; the fit with the lowest final training
    /// loss is kept.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

impl ScmHyperparams {
    pub fn validate(&self) -> Result<(), (String, String)> {
        let fail = |f: &str, m: &str| Err((f.to_string(), m.to_string()));
        if self.cadres == 0 {
            return fail("M", "must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return fail("gamma", "must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", "must be positive");
        }
        if self.epochs == 0 {
            return fail("epochs", "must be at least 1");
        }
        if self.restarts == 0 {
            return fail("restarts", "must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1");
        }
        for (name, net) in [("lambda_w", self.lambda_w), ("lambda_d", self.lambda_d)] {
            if !(net.l1 >= 0.0 && net.l2 >= 0.0 && net.l1.is_finite() && net.l2.is_finite()) {
                return fail(name, "strengths must be non-negative");
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("alpha", "must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Parameters of a fitted cadre model. Serializes to the model document
/// stored with results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CadreModelParams {
    #[serde(rename = "M")]
    pub cadres: usize,
    #[serde(rename = "P")]
    pub features: usize,
    /// Cadre centers, one row of length P per cadre.
    pub centers: Vec<Vec<f64>>,
    /// Expert weights, one row of length P per cadre.
    pub expert_weights: Vec<Vec<f64>>,
    pub expert_bias: Vec<f64>,
    pub seminorm_diag: Vec<f64>,
    pub gamma: f64,
    /// Names of the feature columns, in order.
    #[serde(default)]
    pub feature_names: Vec<String>,
}

impl CadreModelParams {
    /// Zero experts, unit seminorm.
    pub fn new(centers: Vec<Vec<f64>>, gamma: f64) -> Result<Self, ScmError> {
        let m = centers.len();
        let p = centers.first().map_or(0, Vec::len);
        let params = Self {
            cadres: m,
            features: p,
            expert_weights: vec![vec![0.0; p]; m],
            expert_bias: vec![0.0; m],
            seminorm_diag: vec![1.0; p],
            centers,
            gamma,
            feature_names: Vec::new(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ScmError> {
        let bad = |m: String| Err(ScmError::InvalidParams(m));
        if self.cadres == 0 {
            return bad("M must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive".into());
        }
        if self.centers.len() != self.cadres
            || self.expert_weights.len() != self.cadres
            || self.expert_bias.len() != self.cadres
        {
            return bad("per-cadre arrays must have M rows".into());
        }
        if self.seminorm_diag.len() != self.features
            || self.centers.iter().chain(&self.expert_weights).any(|r| r.len() != self.features)
        {
            return bad("per-feature arrays must have P entries".into());
        }
        let all = self
            .centers
            .iter()
            .chain(&self.expert_weights)
            .flatten()
            .chain(&self.expert_bias)
            .chain(&self.seminorm_diag);
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("all entries must be finite".into());
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ScmError> {
        if x.len() != self.features {
            return Err(ScmError::DimensionMismatch { expected: self.features, got: x.len() });
        }
        Ok(())
    }

    /// `−γ‖x − cᵐ‖²_d` for every cadre.
    pub(crate) fn gate_logits(&self, x: &[f64]) -> Vec<f64> {
        self.centers
            .iter()
            .map(|c| {
                let dist: f64 = x
                    .iter()
                    .zip(c)
                    .zip(&self.seminorm_diag)
                    .map(|((xp, cp), dp)| dp.abs() * (xp - cp) * (xp - cp))
                    .sum();
                -self.gamma * dist
            })
            .collect()
    }

    pub(crate) fn gates_unchecked(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.gate_logits(x))
    }

    pub(crate) fn expert_scores(&self, x: &[f64]) -> Vec<f64> {
        self.expert_weights
            .iter()
            .zip(&self.expert_bias)
            .map(|(w, b)| w.iter().zip(x).map(|(wp, xp)| wp * xp).sum::<f64>() + b)
            .collect()
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|a| (a - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cadre membership probabilities of `x`; they sum to one.
pub fn gate_probabilities(x: &[f64], params: &CadreModelParams) -> Result<Vec<f64>, ScmError> {
    params.check_dim(x)?;
    Ok(params.gates_unchecked(x))
}

/// Aggregate risk score `f(x) = Σₘ gₘ(x)(wᵐ·x + bₘ)`.
pub fn risk_score(x: &[f64], params: &CadreModelParams) -> Result<f64, ScmError> {
    params.check_dim(x)?;
    let g = params.gates_unchecked(x);
    Ok(g.iter().zip(params.expert_scores(x)).map(|(g, e)| g * e).sum())
}

/// Most probable cadre; ties go to the lowest index.
pub fn assign_cadre(x: &[f64], params: &CadreModelParams) -> Result<usize, ScmError> {
    params.check_dim(x)?;
    Ok(argmax(&params.gate_logits(x)))
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_cadres(w1: f64, w2: f64) -> CadreModelParams {
        let mut p = CadreModelParams::new(vec![vec![0.0], vec![2.0]], 1.0).unwrap();
        p.expert_weights = vec![vec![w1], vec![w2]];
        p
    }

    #[test]
    fn single_cadre_gate_is_one() {
        let p = CadreModelParams::new(vec![vec![0.3, -1.0]], 2.0).unwrap();
        assert_eq!(gate_probabilities(&[5.0, 7.0], &p).unwrap(), vec![1.0]);
        assert_eq!(assign_cadre(&[5.0, 7.0], &p).unwrap(), 0);
    }

    #[test]
    fn zero_seminorm_gives_uniform_gates() {
        let mut p = CadreModelParams::new(vec![vec![0.0, 1.0], vec![3.0, 1.0], vec![-2.0, 4.0]], 1.0).unwrap();
        p.seminorm_diag = vec![0.0, 0.0];
        for g in gate_probabilities(&[1.5, -0.5], &p).unwrap() {
            assert_abs_diff_eq!(g, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn scalar_gate_example() {
        // g1 = e^0 / (e^0 + e^-4)
        let g = gate_probabilities(&[0.0], &two_cadres(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(g[0], 1.0 / (1.0 + (-4.0f64).exp()), epsilon = 1e-15);
        assert_abs_diff_eq!(g[0], 0.9820137900379085, epsilon = 1e-12);
        assert_eq!(assign_cadre(&[0.0], &two_cadres(0.0, 0.0)).unwrap(), 0);
    }

    #[test]
    fn risk_score_examples() {
        let mut single = CadreModelParams::new(vec![vec![0.0]], 1.0).unwrap();
        single.expert_weights = vec![vec![2.0]];
        assert_eq!(risk_score(&[3.0], &single).unwrap(), 6.0);

        // x = 0.5: distances 0.25 and 2.25, so g1 = 1 / (1 + e^-2)
        let p = two_cadres(2.0, -1.0);
        let g1 = 1.0 / (1.0 + (-2.0f64).exp());
        assert_abs_diff_eq!(g1, 0.8807970779778823, epsilon = 1e-15);
        let f = risk_score(&[0.5], &p).unwrap();
        assert_abs_diff_eq!(f, g1 * 1.0 + (1.0 - g1) * -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f, 0.8211956169668235, epsilon = 1e-12);

        let mut sym = CadreModelParams::new(vec![vec![-1.0], vec![1.0]], 1.0).unwrap();
        sym.expert_weights = vec![vec![1.5], vec![-1.5]];
        assert_eq!(risk_score(&[0.0], &sym).unwrap(), 0.0);
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let p = CadreModelParams::new(vec![vec![-1.0], vec![1.0]], 1.0).unwrap();
        assert_eq!(assign_cadre(&[0.0], &p).unwrap(), 0);
    }

    #[test]
    fn dimension_checks() {
        let p = two_cadres(0.0, 0.0);
        assert_eq!(
            gate_probabilities(&[0.0, 1.0], &p).unwrap_err(),
            ScmError::DimensionMismatch { expected: 1, got: 2 }
        );
        assert!(risk_score(&[], &p).is_err());
        assert!(assign_cadre(&[1.0, 2.0], &p).is_err());
    }

    #[test]
    fn param_validation() {
        assert!(CadreModelParams::new(vec![vec![0.0]], 0.0).is_err());
        assert!(CadreModelParams::new(vec![], 1.0).is_err());
        let mut p = two_cadres(0.0, 0.0);
        p.expert_bias[1] = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn model_document_round_trips() {
        let p = two_cadres(2.0, -1.0);
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"M\":2") && text.contains("\"P\":1"));
        assert_eq!(serde_json::from_str::<CadreModelParams>(&text).unwrap(), p);
    }
}
