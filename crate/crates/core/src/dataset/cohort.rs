use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, VarKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "in")]
    In,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::In => "in",
        }
    }

    pub fn is_ordered(self) -> bool {
        matches!(self, Comparator::Lt | Comparator::Le | Comparator::Gt | Comparator::Ge)
    }

    /// Scalar comparison; `In` is never satisfied by a scalar literal.
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Eq => lhs == rhs,
            Comparator::Ne => lhs != rhs,
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Ge => lhs >= rhs,
            Comparator::In => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClauseValue {
    Number(f64),
    Set(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clause {
    pub var: String,
    pub op: Comparator,
    pub value: ClauseValue,
}

impl Clause {
    pub fn new(var: impl Into<String>, op: Comparator, value: f64) -> Self {
        Self { var: var.into(), op, value: ClauseValue::Number(value) }
    }

    pub fn in_set(var: impl Into<String>, values: Vec<f64>) -> Self {
        Self { var: var.into(), op: Comparator::In, value: ClauseValue::Set(values) }
    }

    fn matches(&self, v: f64) -> bool {
        match (&self.value, self.op) {
            (ClauseValue::Set(set), Comparator::In) => set.contains(&v),
            (ClauseValue::Number(x), op) => op.holds(v, *x),
            // A set literal with a scalar comparator is rejected by `validate`.
            (ClauseValue::Set(_), _) => false,
        }
    }
}

/// Conjunction of inclusion clauses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortFilter {
    pub clauses: Vec<Clause>,
}

impl CohortFilter {
    pub fn new(clauses: Vec<Clause>) -> Self {
        Self { clauses }
    }

    /// Checks clause shapes on their own (no dictionary needed).
    pub fn validate_shape(&self) -> Result<(), String> {
        for c in &self.clauses {
            if c.var.is_empty() {
                return Err("clause with empty variable id".into());
            }
            match (c.op, &c.value) {
                (Comparator::In, ClauseValue::Set(s)) if s.is_empty() => {
                    return Err(format!("empty `in` set for `{}`", c.var))
                }
                (Comparator::In, ClauseValue::Set(_)) => {}
                (Comparator::In, ClauseValue::Number(_)) | (_, ClauseValue::Set(_)) => {
                    return Err(format!("comparator `{}` does not match literal for `{}`", c.op.symbol(), c.var))
                }
                (_, ClauseValue::Number(x)) if !x.is_finite() => {
                    return Err(format!("non-finite literal for `{}`", c.var))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Checks the filter against a dataset dictionary.
    pub fn validate(&self, ds: &Dataset) -> Result<(), DatasetError> {
        for c in &self.clauses {
            let var = ds.variable(&c.var).ok_or_else(|| DatasetError::UnknownVariable(c.var.clone()))?;
            if c.op.is_ordered() && var.kind != VarKind::Continuous {
                return Err(DatasetError::TypeMismatch { var: c.var.clone(), op: c.op.symbol().into() });
            }
        }
        self.validate_shape().map_err(DatasetError::InvalidFilter)
    }

    /// Whether a row passes every clause. Missing values fail.
    pub fn keeps(&self, ds: &Dataset, row: usize) -> bool {
        self.clauses.iter().all(|c| ds.value(row, &c.var).is_some_and(|v| c.matches(v)))
    }
}

/// Applies a cohort filter, returning the kept rows with kept and dropped
/// counts. Rows missing any filtered variable are dropped.
pub fn apply_cohort(ds: &Dataset, filter: &CohortFilter) -> Result<(Dataset, usize, usize), DatasetError> {
    filter.validate(ds)?;
    let keep: Vec<usize> = (0..ds.n_rows()).filter(|&i| filter.keeps(ds, i)).collect();
    let kept = keep.len();
    Ok((ds.select_rows(&keep), kept, ds.n_rows() - kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_dataset;
    use crate::dataset::tests::small_dictionary;

    fn ages() -> Dataset {
        parse_dataset("SEQN,RIDAGEYR,WTMEC,RIAGENDR\n1,18,1,1\n2,20,1,2\n3,45,1,2\n4,,1,1\n", small_dictionary())
            .unwrap()
    }

    #[test]
    fn empty_filter_is_identity() {
        let ds = ages();
        let (out, kept, dropped) = apply_cohort(&ds, &CohortFilter::default()).unwrap();
        assert_eq!(out, ds);
        assert_eq!((kept, dropped), (4, 0));
    }

    #[test]
    fn age_threshold() {
        let ds = ages().select_rows(&[0, 1, 2]);
        let f = CohortFilter::new(vec![Clause::new("RIDAGEYR", Comparator::Ge, 20.0)]);
        let (out, kept, dropped) = apply_cohort(&ds, &f).unwrap();
        assert_eq!((kept, dropped), (2, 1));
        assert_eq!(out.subject_ids(), ["2", "3"]);
    }

    #[test]
    fn missing_filtered_value_is_dropped() {
        let f = CohortFilter::new(vec![Clause::new("RIDAGEYR", Comparator::Ge, 0.0)]);
        let (_, kept, dropped) = apply_cohort(&ages(), &f).unwrap();
        assert_eq!((kept, dropped), (3, 1));
    }

    #[test]
    fn zero_rows_is_not_an_error_here() {
        let f = CohortFilter::new(vec![Clause::new("RIDAGEYR", Comparator::Gt, 200.0)]);
        let (out, kept, _) = apply_cohort(&ages(), &f).unwrap();
        assert_eq!(kept, 0);
        assert_eq!(out.n_rows(), 0);
    }

    #[test]
    fn in_set_and_errors() {
        let f = CohortFilter::new(vec![Clause::in_set("RIAGENDR", vec![2.0])]);
        assert_eq!(apply_cohort(&ages(), &f).unwrap().1, 2);
        let unknown = CohortFilter::new(vec![Clause::new("NOPE", Comparator::Eq, 1.0)]);
        assert_eq!(apply_cohort(&ages(), &unknown).unwrap_err(), DatasetError::UnknownVariable("NOPE".into()));
        let ordered = CohortFilter::new(vec![Clause::new("RIAGENDR", Comparator::Lt, 2.0)]);
        assert!(matches!(apply_cohort(&ages(), &ordered), Err(DatasetError::TypeMismatch { .. })));
    }

    #[test]
    fn idempotent() {
        let f = CohortFilter::new(vec![
            Clause::new("RIDAGEYR", Comparator::Ge, 20.0),
            Clause::in_set("RIAGENDR", vec![1.0, 2.0]),
        ]);
        let once = apply_cohort(&ages(), &f).unwrap().0;
        let twice = apply_cohort(&once, &f).unwrap().0;
        assert_eq!(once, twice);
    }
}
