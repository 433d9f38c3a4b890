//! Evaluates a hand-built two-cadre model along a line through feature space
//! and prints the gate probabilities, risk score and hard assignment.

use riskd_core::scm::{assign_cadre, gate_probabilities, risk_score, CadreModelParams};

fn main() {
    let mut params = CadreModelParams::new(vec![vec![0.0, 0.0], vec![3.0, 0.0]], 1.0).expect("valid params");
    // only the first feature separates the cadres
    params.seminorm_diag = vec![1.0, 0.0];
    params.expert_weights = vec![vec![0.0, 1.2], vec![0.0, -0.4]];
    params.expert_bias = vec![-0.5, 0.3];

    println!("{:>5} {:>5}  {:>6} {:>6}  {:>7}  cadre", "x1", "x2", "g0", "g1", "score");
    for step in 0..=8 {
        let x = [-1.0 + 0.625 * step as f64, 1.0];
        let g = gate_probabilities(&x, &params).expect("finite input");
        let f = risk_score(&x, &params).expect("finite input");
        let m = assign_cadre(&x, &params).expect("finite input");
        println!("{:>5.2} {:>5.2}  {:>6.3} {:>6.3}  {:>7.3}  {m}", x[0], x[1], g[0], g[1], f);
    }
}
