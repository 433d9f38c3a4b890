use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FdrMethod {
    #[serde(rename = "benjamini-hochberg")]
    BenjaminiHochberg,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FdrError {
    #[error("p-value {value} at position {index} is outside [0, 1]")]
    InvalidP { index: usize, value: f64 },
}

/// Step-up adjusted p-values, returned in input order.
///
/// For Benjamini-Hochberg the value at sorted rank `i` (1-based) of `m` is
/// `min_{j ≥ i} m·p_(j)/j`, clipped at 1.
pub fn adjust_fdr(p_values: &[f64], method: FdrMethod) -> Result<Vec<f64>, FdrError> {
    if let Some((index, &value)) = p_values.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(FdrError::InvalidP { index, value });
    }
    match method {
        FdrMethod::BenjaminiHochberg => Ok(benjamini_hochberg(p_values)),
    }
}

fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        // m·p/m can round below p
        running = running.min((p[idx] * m as f64 / (rank + 1) as f64).max(p[idx]));
        adjusted[idx] = running;
    }
    adjusted
}
