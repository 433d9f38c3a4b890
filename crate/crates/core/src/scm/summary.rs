use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cartridge::StudyPlan;
use crate::dataset::{Dataset, VarKind, SUBJECT_ID_VAR};
use crate::preprocess::{DesignMatrix, Role};
use crate::swglm::{ewas_scan, EwasError, EwasReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

/// Survey-weighted description of one cadre on the raw variable scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadreSummary {
    pub cadre: usize,
    pub count: usize,
    pub weight_total: f64,
    /// Weighted mean and SD of each continuous variable; `None` when the
    /// cadre has no observed value.
    pub continuous: BTreeMap<String, Option<Moments>>,
    /// Unweighted counts per category label.
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    /// Weighted counts per category label.
    pub weighted_counts: BTreeMap<String, BTreeMap<String, f64>>,
}

fn weighted_mean_sd(pairs: &[(f64, f64)]) -> Option<Moments> {
    let total: f64 = pairs.iter().map(|(_, w)| w).sum();
    if pairs.is_empty() || total <= 0.0 {
        return None;
    }
    let mean = pairs.iter().map(|(x, w)| w * x).sum::<f64>() / total;
    let var = pairs.iter().map(|(x, w)| w * (x - mean) * (x - mean)).sum::<f64>() / total;
    Some(Moments { mean, sd: var.sqrt() })
}

/// Per-cadre summaries of the dataset rows behind `design`. Continuous
/// variables (other than the subject id and the weight) get weighted mean and
/// SD; coded variables get counts per label. Empty cadres appear with zero
/// counts.
pub fn cadre_summaries(design: &DesignMatrix, ds: &Dataset, assignments: &[usize], cadres: usize) -> Vec<CadreSummary> {
    let weights = ds.weights();
    let continuous: Vec<_> = ds
        .dictionary()
        .iter()
        .filter(|v| v.kind == VarKind::Continuous && v.id != SUBJECT_ID_VAR && v.id != ds.weight_var())
        .collect();
    let coded: Vec<_> = ds.dictionary().iter().filter(|v| v.kind != VarKind::Continuous && !v.codebook.is_empty()).collect();

    (0..cadres)
        .map(|m| {
            let members: Vec<usize> =
                design.rows.iter().zip(assignments).filter(|(_, a)| **a == m).map(|(r, _)| *r).collect();
            let continuous = continuous
                .iter()
                .map(|v| {
                    let pairs: Vec<(f64, f64)> =
                        members.iter().filter_map(|&r| ds.value(r, &v.id).map(|x| (x, weights[r]))).collect();
                    (v.id.clone(), weighted_mean_sd(&pairs))
                })
                .collect();
            let mut counts = BTreeMap::new();
            let mut weighted_counts = BTreeMap::new();
            for v in &coded {
                let mut c: BTreeMap<String, usize> = v.codebook.values().map(|l| (l.clone(), 0)).collect();
                let mut wc: BTreeMap<String, f64> = v.codebook.values().map(|l| (l.clone(), 0.0)).collect();
                for &r in &members {
                    if let Some(label) = ds.value(r, &v.id).and_then(|x| v.code_label(x)) {
                        *c.entry(label.to_string()).or_default() += 1;
                        *wc.entry(label.to_string()).or_default() += weights[r];
                    }
                }
                counts.insert(v.id.clone(), c);
                weighted_counts.insert(v.id.clone(), wc);
            }
            CadreSummary {
                cadre: m,
                count: members.len(),
                weight_total: members.iter().map(|&r| weights[r]).sum(),
                continuous,
                counts,
                weighted_counts,
            }
        })
        .collect()
}

/// Outcome of the association scan inside one cadre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum CadreTest {
    Tested { report: EwasReport },
    /// `reason` is the error name, e.g. `InsufficientN`.
    Untestable { reason: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadreAssociation {
    pub cadre: usize,
    pub n: usize,
    pub test: CadreTest,
}

/// Runs the factor scan separately within each cadre. A cadre is untestable
/// when it has at most `K + 10` members (`K` the width of a single-factor
/// design) or only one outcome class.
pub fn per_cadre_association(
    plan: &StudyPlan,
    ds: &Dataset,
    design: &DesignMatrix,
    assignments: &[usize],
    cadres: usize,
    alpha: f64,
) -> Vec<CadreAssociation> {
    let k = 2 + design.columns.iter().filter(|c| c.role == Role::Control).count();
    (0..cadres)
        .map(|m| {
            let idx: Vec<usize> = (0..design.n_rows()).filter(|&i| assignments[i] == m).collect();
            let n = idx.len();
            let untestable = |reason: &str, detail: String| CadreAssociation {
                cadre: m,
                n,
                test: CadreTest::Untestable { reason: reason.into(), detail },
            };
            if n <= k + 10 {
                return untestable("InsufficientN", format!("{n} members, need more than {}", k + 10));
            }
            let positives = idx.iter().filter(|&&i| design.response[i] == 1.0).count();
            if positives == 0 || positives == n {
                return untestable("AllOneClass", "cadre contains a single outcome class".into());
            }
            let subset = ds.select_rows(&idx.iter().map(|&i| design.rows[i]).collect::<Vec<_>>());
            match ewas_scan(plan, &subset, alpha) {
                Ok(report) => CadreAssociation { cadre: m, n, test: CadreTest::Tested { report } },
                Err(EwasError::AllFactorsSkipped(skipped)) => {
                    let detail = skipped.iter().map(|s| format!("{}: {}", s.factor, s.reason)).collect::<Vec<_>>().join("; ");
                    untestable("AllFactorsSkipped", detail)
                }
                Err(EwasError::EmptyCohort) => untestable("EmptyCohort", "no subjects".into()),
                Err(EwasError::Preprocess(e)) => untestable(e.code(), e.to_string()),
            }
        })
        .collect()
}
