use super::{CadreModelParams, ScmError, ScmHyperparams};

/// A minibatch of feature rows with binary labels and survey weights.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub rows: Vec<&'a [f64]>,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gradients with the same shapes as the corresponding parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub centers: Vec<Vec<f64>>,
    pub expert_weights: Vec<Vec<f64>>,
    pub expert_bias: Vec<f64>,
    pub seminorm_diag: Vec<f64>,
}

impl Gradients {
    fn zeros(m: usize, p: usize) -> Self {
        Self {
            centers: vec![vec![0.0; p]; m],
            expert_weights: vec![vec![0.0; p]; m],
            expert_bias: vec![0.0; m],
            seminorm_diag: vec![0.0; p],
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Survey-weighted binary cross-entropy of `sigmoid(f(x))` plus elastic-net
/// penalties on the expert weights and the seminorm diagonal, with its exact
/// gradient.
///
/// Weights are normalized to mean one within the batch, so the data term is
/// `Σ wᵢ ℓᵢ / Σ wᵢ`. Centers and expert biases are not penalized.
pub fn loss_and_gradients(
    batch: &Batch<'_>,
    params: &CadreModelParams,
    hp: &ScmHyperparams,
) -> Result<(f64, Gradients), ScmError> {
    let n = batch.rows.len();
    if n == 0 {
        return Err(ScmError::EmptyBatch);
    }
    if batch.labels.len() != n || batch.weights.len() != n {
        return Err(ScmError::DimensionMismatch { expected: n, got: batch.labels.len().min(batch.weights.len()) });
    }
    if let Some((index, &value)) = batch.labels.iter().enumerate().find(|(_, y)| **y != 0.0 && **y != 1.0) {
        return Err(ScmError::NonBinaryLabel { index, value });
    }
    let (m, p) = (params.cadres, params.features);
    let total_weight: f64 = batch.weights.iter().sum();
    let mut grads = Gradients::zeros(m, p);
    let mut data_loss = 0.0;

    for ((x, &y), &w) in batch.rows.iter().zip(&batch.labels).zip(&batch.weights) {
        if x.len() != p {
            return Err(ScmError::DimensionMismatch { expected: p, got: x.len() });
        }
        let gates = params.gates_unchecked(x);
        let experts = params.expert_scores(x);
        let f: f64 = gates.iter().zip(&experts).map(|(g, e)| g * e).sum();
        let scale = w / total_weight;
        data_loss += scale * (softplus(f) - y * f);
        // dℓ/df
        let residual = scale * (crate::swglm::sigmoid(f) - y);
        for k in 0..m {
            let g = gates[k];
            grads.expert_bias[k] += residual * g;
            // df/da_k = g_k (e_k − f), a_k = −γ Σ |d| (x − c)²
            let da = residual * g * (experts[k] - f);
            let center = &params.centers[k];
            for j in 0..p {
                grads.expert_weights[k][j] += residual * g * x[j];
                let diff = x[j] - center[j];
                let d = params.seminorm_diag[j];
                grads.centers[k][j] += da * 2.0 * params.gamma * d.abs() * diff;
                let sign = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grads.seminorm_diag[j] -= da * params.gamma * sign * diff * diff;
            }
        }
    }

    let penalty = hp.lambda_w.penalty(params.expert_weights.iter().flatten().copied())
        + hp.lambda_d.penalty(params.seminorm_diag.iter().copied());
    for (gk, wk) in grads.expert_weights.iter_mut().zip(&params.expert_weights) {
        for (g, w) in gk.iter_mut().zip(wk) {
            *g += hp.lambda_w.gradient(*w);
        }
    }
    for (g, d) in grads.seminorm_diag.iter_mut().zip(&params.seminorm_diag) {
        *g += hp.lambda_d.gradient(*d);
    }
    Ok((data_loss + penalty, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::ElasticNet;

    fn hp() -> ScmHyperparams {
        ScmHyperparams {
            cadres: 1,
            gamma: 1.0,
            learning_rate: 0.1,
            epochs: 1,
            batch_size: 4,
            lambda_w: ElasticNet::default(),
            lambda_d: ElasticNet::default(),
            seed: 0,
            alpha: 0.05,
            restarts: 1,
        }
    }

    #[test]
    fn rejects_bad_batches() {
        let params = CadreModelParams::new(vec![vec![0.0]], 1.0).unwrap();
        let empty = Batch { rows: vec![], labels: vec![], weights: vec![] };
        assert_eq!(loss_and_gradients(&empty, &params, &hp()).unwrap_err(), ScmError::EmptyBatch);
        let row = [1.0];
        let bad = Batch { rows: vec![&row], labels: vec![0.5], weights: vec![1.0] };
        assert!(matches!(loss_and_gradients(&bad, &params, &hp()), Err(ScmError::NonBinaryLabel { .. })));
    }

    #[test]
    fn loss_vanishes_as_score_grows() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0], vec![2.0], vec![0.5]];
        let batch = Batch { rows: rows.iter().map(Vec::as_slice).collect(), labels: vec![1.0; 3], weights: vec![1.0; 3] };
        let mut params = CadreModelParams::new(vec![vec![0.0]], 1.0).unwrap();
        let mut last = f64::INFINITY;
        for b in [0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0] {
            params.expert_bias = vec![b];
            let (loss, _) = loss_and_gradients(&batch, &params, &hp()).unwrap();
            assert!(loss < last);
            last = loss;
        }
        assert!(last < 1e-15);
    }

    #[test]
    fn zero_experts_give_trivial_loss() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![-2.0, 3.0]];
        let batch = Batch { rows: rows.iter().map(Vec::as_slice).collect(), labels: vec![1.0, 0.0], weights: vec![3.0, 1.0] };
        let params = CadreModelParams::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], 0.5).unwrap();
        let (loss, _) = loss_and_gradients(&batch, &params, &hp()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
