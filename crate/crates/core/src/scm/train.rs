use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, loss_and_gradients, Batch, CadreModelParams, ScmError, ScmHyperparams};
use crate::preprocess::DesignMatrix;

/// A trained cadre model with its per-epoch full-data loss and the cadre of
/// every design row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmModel {
    pub params: CadreModelParams,
    pub hyperparams: ScmHyperparams,
    pub loss_trace: Vec<f64>,
    pub assignments: Vec<usize>,
}

pub(crate) fn feature_rows(design: &DesignMatrix) -> (Vec<String>, Vec<Vec<f64>>) {
    let cols = design.feature_columns();
    let names = cols.iter().map(|&j| design.columns[j].name.clone()).collect();
    let rows = (0..design.n_rows()).map(|i| cols.iter().map(|&j| design.values[(i, j)]).collect()).collect();
    (names, rows)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding over the rows.
fn kmeans_pp(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![rows[rng.random_range(0..rows.len())].clone()];
    let mut nearest: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = rows.len() - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..rows.len())
        };
        centers.push(rows[next].clone());
        for (n, r) in nearest.iter_mut().zip(rows) {
            *n = n.min(sq_dist(r, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn full_loss(rows: &[Vec<f64>], design: &DesignMatrix, params: &CadreModelParams, hp: &ScmHyperparams) -> Result<f64, ScmError> {
    let batch = Batch {
        rows: rows.iter().map(Vec::as_slice).collect(),
        labels: design.response.clone(),
        weights: design.weights.clone(),
    };
    Ok(loss_and_gradients(&batch, params, hp)?.0)
}

fn step(params: &mut CadreModelParams, grads: &super::Gradients, lr: f64) {
    for (c, g) in params.centers.iter_mut().flatten().zip(grads.centers.iter().flatten()) {
        *c -= lr * g;
    }
    for (w, g) in params.expert_weights.iter_mut().flatten().zip(grads.expert_weights.iter().flatten()) {
        *w -= lr * g;
    }
    for (b, g) in params.expert_bias.iter_mut().zip(&grads.expert_bias) {
        *b -= lr * g;
    }
    for (d, g) in params.seminorm_diag.iter_mut().zip(&grads.seminorm_diag) {
        *d -= lr * g;
    }
}

fn train_once(
    rows: &[Vec<f64>],
    design: &DesignMatrix,
    hp: &ScmHyperparams,
    mut rng: ChaCha8Rng,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(CadreModelParams, Vec<f64>), ScmError> {
    let centers = kmeans_pp(rows, hp.cadres, &mut rng);
    let mut params = CadreModelParams::new(centers, hp.gamma)?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut loss_trace = Vec::with_capacity(hp.epochs);
    for epoch in 1..=hp.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size) {
            let batch = Batch {
                rows: chunk.iter().map(|&i| rows[i].as_slice()).collect(),
                labels: chunk.iter().map(|&i| design.response[i]).collect(),
                weights: chunk.iter().map(|&i| design.weights[i]).collect(),
            };
            let (loss, grads) = loss_and_gradients(&batch, &params, hp)?;
            if !loss.is_finite() {
                return Err(ScmError::DivergedLoss { epoch });
            }
            step(&mut params, &grads, hp.learning_rate);
        }
        let loss = full_loss(rows, design, &params, hp)?;
        if !loss.is_finite() || params.validate().is_err() {
            return Err(ScmError::DivergedLoss { epoch });
        }
        loss_trace.push(loss);
        on_epoch(epoch, loss);
    }
    Ok((params, loss_trace))
}

/// Trains a cadre model on the non-intercept columns of `design` by
/// minibatch gradient descent.
///
/// Centers are seeded by k-means++ on the rows, experts start at zero and the
/// seminorm diagonal at one. Each of the `hp.restarts` runs draws its seeding
/// and per-epoch shuffles from its own ChaCha stream keyed by `hp.seed`, so
/// equal inputs give bit-identical models; the run with the lowest final
/// loss is returned. `progress` is called after every epoch with the number
/// of epochs completed across all runs and that epoch's full-data loss.
pub fn train_scm(
    design: &DesignMatrix,
    hp: &ScmHyperparams,
    mut progress: impl FnMut(usize, f64),
) -> Result<ScmModel, ScmError> {
    hp.validate().map_err(|(field, message)| ScmError::InvalidHyperparams { field, message })?;
    if design.n_rows() == 0 {
        return Err(ScmError::EmptyBatch);
    }
    let (names, rows) = feature_rows(design);
    let mut best: Option<(CadreModelParams, Vec<f64>)> = None;
    for restart in 0..hp.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        rng.set_stream(restart as u64);
        let done = restart * hp.epochs;
        let (params, trace) = train_once(&rows, design, hp, rng, |e, l| progress(done + e, l))?;
        let better = best.as_ref().is_none_or(|(_, t)| trace.last() < t.last());
        if better {
            best = Some((params, trace));
        }
    }
    let (mut params, loss_trace) = best.expect("at least one restart");
    params.feature_names = names;
    let assignments = rows.iter().map(|r| argmax(&params.gate_logits(r))).collect();
    Ok(ScmModel { params, hyperparams: hp.clone(), loss_trace, assignments })
}
