//! Workflow execution: turns cohort rows into the design matrix, binary
//! response and survey weights consumed by the analysis methods.
//!
//! Columns are laid out as intercept, factors (cartridge order), controls
//! (response cartridge order) and finally the creatinine control. Every
//! transform is recorded in [`ColumnMeta`] so the matrix can be rebuilt from
//! raw values with [`ColumnMeta::replay`].

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cartridge::{Axiom, StudyPlan, CREATININE_VAR};
use crate::dataset::{Dataset, DatasetError, VarKind};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PreprocessError {
    #[error("no subjects remain after cohort and complete-case filtering")]
    EmptyCohort,
    #[error("variable `{0}` has zero weighted variance")]
    DegenerateVariable(String),
    #[error("variable `{0}` has fewer than two non-missing values")]
    InsufficientData(String),
    #[error("response has a single class after filtering")]
    AllOneClass,
    #[error("factor `{0}` requires creatinine control but `URXUCR` is unavailable")]
    MissingCreatinine(String),
    #[error("cannot log-transform `{var}`: {reason}")]
    InvalidTransform { var: String, reason: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl PreprocessError {
    /// Stable error name used in reports and skip reasons.
    pub fn code(&self) -> &'static str {
        match self {
            PreprocessError::EmptyCohort => "EmptyCohort",
            PreprocessError::DegenerateVariable(_) => "DegenerateVariable",
            PreprocessError::InsufficientData(_) => "InsufficientData",
            PreprocessError::AllOneClass => "AllOneClass",
            PreprocessError::MissingCreatinine(_) => "MissingCreatinine",
            PreprocessError::InvalidTransform { .. } => "InvalidTransform",
            PreprocessError::UnknownVariable(_) => "UnknownVariable",
            PreprocessError::Dataset(_) => "DatasetError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Intercept,
    Factor,
    Control,
    CadreFeature,
}

/// One recorded step applied to a raw value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Transform {
    /// Constant 1.
    Intercept,
    /// `ln(x + shift)`; the shift is half the smallest positive value when
    /// zeros are present, otherwise 0.
    Log { shift: f64 },
    /// `(x - mean) / sd` with survey-weighted moments.
    Standardize { mean: f64, sd: f64 },
    /// 1 when the raw code equals `code`, else 0.
    Indicator { code: f64 },
}

impl Transform {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Transform::Intercept => 1.0,
            Transform::Log { shift } => (x + shift).ln(),
            Transform::Standardize { mean, sd } => (x - mean) / sd,
            Transform::Indicator { code } => f64::from(u8::from(x == code)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    /// Display name, e.g. `exposure_1` or `RIDRETH1=3`.
    pub name: String,
    /// Source variable id; empty for the intercept.
    pub source: String,
    pub role: Role,
    pub transforms: Vec<Transform>,
}

impl ColumnMeta {
    /// Rebuilds the column value from the raw dataset value.
    pub fn replay(&self, raw: Option<f64>) -> f64 {
        let mut x = raw.unwrap_or(f64::NAN);
        for t in &self.transforms {
            x = t.apply(x);
        }
        x
    }
}

/// Numeric model input. No missing or non-finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub columns: Vec<ColumnMeta>,
    /// Binary (0/1) response.
    pub response: Vec<f64>,
    pub weights: Vec<f64>,
    /// Dataset row backing each design row.
    pub rows: Vec<usize>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Indices of columns used as cadre features (everything but the intercept).
    pub fn feature_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c.role, Role::Factor | Role::Control | Role::CadreFeature))
            .map(|(j, _)| j)
            .collect()
    }

    fn push_column(&mut self, meta: ColumnMeta, values: Vec<f64>) {
        let n = self.values.nrows();
        let k = self.values.ncols();
        let mut m = std::mem::replace(&mut self.values, DMatrix::zeros(0, 0)).insert_column(k, 0.0);
        for i in 0..n {
            m[(i, k)] = values[i];
        }
        self.values = m;
        self.columns.push(meta);
    }
}

fn weighted_moments(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(x, w)| w * x).sum::<f64>() / total;
    let var = values.iter().zip(weights).map(|(x, w)| w * (x - mean) * (x - mean)).sum::<f64>() / total;
    (mean, var)
}

fn standardize_params(values: &[f64], weights: &[f64], var_id: &str) -> Result<Transform, PreprocessError> {
    if values.len() < 2 {
        return Err(PreprocessError::InsufficientData(var_id.to_string()));
    }
    let (mean, var) = weighted_moments(values, weights);
    let scale = values.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    if !(var > 1e-24 * scale * scale) {
        return Err(PreprocessError::DegenerateVariable(var_id.to_string()));
    }
    Ok(Transform::Standardize { mean, sd: var.sqrt() })
}

/// Survey-weighted standardization: weighted mean 0 and weighted variance 1
/// (denominator `Σw`) over the non-missing entries. Missing entries stay
/// missing.
pub fn standardize(column: &[Option<f64>], weights: &[f64]) -> Result<Vec<Option<f64>>, PreprocessError> {
    standardize_named(column, weights, "<column>")
}

fn standardize_named(
    column: &[Option<f64>],
    weights: &[f64],
    var_id: &str,
) -> Result<Vec<Option<f64>>, PreprocessError> {
    let (xs, ws): (Vec<f64>, Vec<f64>) =
        column.iter().zip(weights).filter_map(|(x, w)| x.map(|x| (x, *w))).unzip();
    let t = standardize_params(&xs, &ws, var_id)?;
    Ok(column.iter().map(|x| x.map(|x| t.apply(x))).collect())
}

/// Log transform parameters, shifting by half the smallest positive value
/// when the column contains zeros.
pub fn log_params(values: &[f64], var_id: &str) -> Result<Transform, PreprocessError> {
    let invalid = |reason: &str| PreprocessError::InvalidTransform { var: var_id.to_string(), reason: reason.into() };
    if values.iter().any(|x| *x < 0.0) {
        return Err(invalid("negative values"));
    }
    let min_positive = values.iter().copied().filter(|x| *x > 0.0).fold(f64::INFINITY, f64::min);
    if !min_positive.is_finite() {
        return Err(invalid("no positive values"));
    }
    let shift = if values.iter().any(|x| *x == 0.0) { min_positive / 2.0 } else { 0.0 };
    Ok(Transform::Log { shift })
}

/// Which factors enter the design.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorSelection {
    One(String),
    All,
}

fn selected_factors<'a>(plan: &'a StudyPlan, sel: &FactorSelection) -> Result<Vec<&'a str>, PreprocessError> {
    match sel {
        FactorSelection::All => Ok(plan.factors.iter().map(|f| f.id.as_str()).collect()),
        FactorSelection::One(id) => plan
            .factor(id)
            .map(|f| vec![f.id.as_str()])
            .ok_or_else(|| PreprocessError::UnknownVariable(id.clone())),
    }
}

fn needs_creatinine(plan: &StudyPlan, factors: &[&str]) -> bool {
    factors.iter().any(|id| plan.factor(id).is_some_and(|f| f.creatinine_control))
}

fn column_values(ds: &Dataset, rows: &[usize], var: &str) -> Result<Vec<f64>, PreprocessError> {
    let j = ds.column_index(var).ok_or_else(|| PreprocessError::UnknownVariable(var.to_string()))?;
    Ok(rows.iter().map(|&i| ds.rows()[i][j].unwrap_or(f64::NAN)).collect())
}

fn apply_all(values: &[f64], transforms: &[Transform]) -> Vec<f64> {
    values
        .iter()
        .map(|&x| transforms.iter().fold(x, |acc, t| t.apply(acc)))
        .collect()
}

/// Appends the log-transformed, standardized urinary creatinine control
/// column when any selected factor requires it. A design that already
/// carries the column is returned unchanged.
pub fn creatinine_control(
    plan: &StudyPlan,
    ds: &Dataset,
    factor: &FactorSelection,
    mut design: DesignMatrix,
) -> Result<DesignMatrix, PreprocessError> {
    let factors = selected_factors(plan, factor)?;
    if !needs_creatinine(plan, &factors) {
        return Ok(design);
    }
    if design.columns.iter().any(|c| c.source == CREATININE_VAR && c.role == Role::Control) {
        return Ok(design);
    }
    let first = factors.iter().find(|id| plan.factor(id).is_some_and(|f| f.creatinine_control)).unwrap();
    if ds.variable(CREATININE_VAR).is_none() {
        return Err(PreprocessError::MissingCreatinine(first.to_string()));
    }
    let raw = column_values(ds, &design.rows, CREATININE_VAR)?;
    if raw.iter().any(|x| x.is_nan()) {
        return Err(PreprocessError::InsufficientData(CREATININE_VAR.into()));
    }
    let log = log_params(&raw, CREATININE_VAR)?;
    let logged = apply_all(&raw, &[log]);
    let std = standardize_params(&logged, &design.weights, CREATININE_VAR)?;
    let transforms = vec![log, std];
    let values = apply_all(&raw, &transforms);
    design.push_column(
        ColumnMeta { name: CREATININE_VAR.into(), source: CREATININE_VAR.into(), role: Role::Control, transforms },
        values,
    );
    Ok(design)
}

/// Rows kept by the cohort filter with no missing value among `vars`.
fn complete_rows(plan: &StudyPlan, ds: &Dataset, vars: &[&str]) -> Result<Vec<usize>, PreprocessError> {
    plan.cohort.filter.validate(ds)?;
    let cols: Vec<usize> = vars
        .iter()
        .map(|v| ds.column_index(v).ok_or_else(|| PreprocessError::UnknownVariable(v.to_string())))
        .collect::<Result<_, _>>()?;
    Ok((0..ds.n_rows())
        .filter(|&i| plan.cohort.filter.keeps(ds, i) && cols.iter().all(|&j| ds.rows()[i][j].is_some()))
        .collect())
}

/// Modal category (lowest code on ties) and the other observed codes in
/// ascending order.
fn dummy_levels(values: &[f64]) -> (f64, Vec<f64>) {
    let mut counts: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for &v in values {
        counts.entry(v.to_bits()).or_insert((v, 0)).1 += 1;
    }
    let mut levels: Vec<(f64, usize)> = counts.into_values().collect();
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));
    let reference = levels
        .iter()
        .fold(None::<(f64, usize)>, |best, &(v, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((v, c)),
        })
        .map(|(v, _)| v)
        .unwrap_or(0.0);
    (reference, levels.into_iter().map(|(v, _)| v).filter(|v| *v != reference).collect())
}

/// Builds the design matrix for one factor (EWAS) or all factors (SCM).
pub fn build_design(plan: &StudyPlan, ds: &Dataset, factor: &FactorSelection) -> Result<DesignMatrix, PreprocessError> {
    let factors = selected_factors(plan, factor)?;
    let creatinine = needs_creatinine(plan, &factors);
    if creatinine && ds.variable(CREATININE_VAR).is_none() {
        let first = factors.iter().find(|id| plan.factor(id).is_some_and(|f| f.creatinine_control)).unwrap();
        return Err(PreprocessError::MissingCreatinine(first.to_string()));
    }
    let mut vars: Vec<&str> = vec![plan.response.response_var.as_str()];
    vars.extend(factors.iter().copied());
    vars.extend(plan.controls().iter().map(String::as_str));
    if creatinine {
        vars.push(CREATININE_VAR);
    }
    let rows = complete_rows(plan, ds, &vars)?;
    if rows.is_empty() {
        return Err(PreprocessError::EmptyCohort);
    }

    let response: Vec<f64> = column_values(ds, &rows, &plan.response.response_var)?
        .into_iter()
        .map(|v| f64::from(u8::from(plan.response.positive_rule.is_positive(v))))
        .collect();
    let positives = response.iter().filter(|y| **y == 1.0).count();
    if positives == 0 || positives == response.len() {
        return Err(PreprocessError::AllOneClass);
    }
    let all_weights = ds.weights();
    let weights: Vec<f64> = rows.iter().map(|&i| all_weights[i]).collect();

    let mut design = DesignMatrix {
        values: DMatrix::from_element(rows.len(), 1, 1.0),
        columns: vec![ColumnMeta {
            name: "(intercept)".into(),
            source: String::new(),
            role: Role::Intercept,
            transforms: vec![Transform::Intercept],
        }],
        response,
        weights,
        rows,
    };

    for id in &factors {
        let fp = plan.factor(id).expect("selected from plan");
        let def = ds.variable(id).ok_or_else(|| PreprocessError::UnknownVariable(id.to_string()))?;
        let raw = column_values(ds, &design.rows, id)?;
        let mut transforms = Vec::new();
        let mut current = raw;
        if def.kind == VarKind::Continuous {
            for step in &fp.transforms {
                let t = match step {
                    Axiom::LogTransform => log_params(&current, id)?,
                    Axiom::Standardize => standardize_params(&current, &design.weights, id)?,
                    _ => continue,
                };
                current = apply_all(&current, &[t]);
                transforms.push(t);
            }
        }
        let (_, var) = weighted_moments(&current, &design.weights);
        if !(var > 0.0) {
            return Err(PreprocessError::DegenerateVariable(id.to_string()));
        }
        design.push_column(
            ColumnMeta { name: id.to_string(), source: id.to_string(), role: Role::Factor, transforms },
            current,
        );
    }

    for id in plan.controls() {
        let def = ds.variable(id).ok_or_else(|| PreprocessError::UnknownVariable(id.clone()))?;
        let raw = column_values(ds, &design.rows, id)?;
        let dummy_coded = def.kind == VarKind::Categorical || (def.kind == VarKind::Binary && !def.codebook.is_empty());
        if dummy_coded {
            let (_, others) = dummy_levels(&raw);
            for code in others {
                let transforms = vec![Transform::Indicator { code }];
                let values = apply_all(&raw, &transforms);
                design.push_column(
                    ColumnMeta { name: format!("{id}={code}"), source: id.clone(), role: Role::Control, transforms },
                    values,
                );
            }
        } else {
            let mut transforms = Vec::new();
            if def.kind == VarKind::Continuous && plan.standardizes() {
                transforms.push(standardize_params(&raw, &design.weights, id)?);
            } else {
                let (_, var) = weighted_moments(&raw, &design.weights);
                if !(var > 0.0) {
                    return Err(PreprocessError::DegenerateVariable(id.clone()));
                }
            }
            let values = apply_all(&raw, &transforms);
            design.push_column(
                ColumnMeta { name: id.clone(), source: id.clone(), role: Role::Control, transforms },
                values,
            );
        }
    }

    creatinine_control(plan, ds, factor, design)
}
