//! Plain-text tables for terminal output.

use std::fmt::Write;

use riskd_core::provenance::{ProvenanceChain, ResultHeader, ResultsCartridge};
use riskd_core::scm::CadreTest;
use riskd_core::swglm::AssociationResult;

/// Significance stars for an adjusted p-value.
pub fn stars(adjusted_p: f64) -> &'static str {
    if adjusted_p < 0.001 {
        "***"
    } else if adjusted_p < 0.01 {
        "**"
    } else if adjusted_p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn sci(v: f64) -> String {
    format!("{v:.3e}")
}

/// Association table sorted by adjusted p, ties by factor id.
pub fn findings_table(findings: &[AssociationResult]) -> String {
    let mut rows: Vec<&AssociationResult> = findings.iter().collect();
    rows.sort_by(|a, b| a.adjusted_p.total_cmp(&b.adjusted_p).then_with(|| a.factor.cmp(&b.factor)));
    let width = rows.iter().map(|r| r.factor.len()).max().unwrap_or(0).max("factor".len());
    let mut out = String::new();
    writeln!(
        out,
        "{:<width$}  {:>12}  {:>10}  {:>10}  {:>10}  {:>6}  sig",
        "factor", "coefficient", "robust SE", "p", "adjusted p", "n"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<width$}  {:>12.4}  {:>10.4}  {:>10}  {:>10}  {:>6}  {}",
            r.factor,
            r.coefficient,
            r.robust_se,
            sci(r.p_value),
            sci(r.adjusted_p),
            r.n_used,
            stars(r.adjusted_p)
        )
        .unwrap();
    }
    out
}

/// Full report of one result: findings, cadre summaries and skipped factors.
pub fn result_report(r: &ResultsCartridge) -> String {
    let mut out = String::new();
    writeln!(out, "{} ({})", r.disease_label, r.method).unwrap();
    if let Some(payload) = &r.scm_payload {
        for (summary, assoc) in payload.summaries.iter().zip(&payload.per_cadre) {
            writeln!(out, "\ncadre {}: {} subjects, weight {:.1}", summary.cadre, summary.count, summary.weight_total)
                .unwrap();
            match &assoc.test {
                CadreTest::Tested { report } => out.push_str(&findings_table(&report.results)),
                CadreTest::Untestable { reason, detail } => writeln!(out, "not tested: {reason} ({detail})").unwrap(),
            }
        }
    } else {
        out.push_str(&findings_table(&r.findings));
    }
    for s in &r.skipped {
        writeln!(out, "skipped {}: {} ({})", s.factor, s.reason, s.detail).unwrap();
    }
    out
}

pub fn headers_table(headers: &[ResultHeader]) -> String {
    let mut out = String::new();
    writeln!(out, "{:<64}  {:<20}  {:<10}  {:<24}  significant", "id", "created", "method", "disease").unwrap();
    for h in headers {
        writeln!(
            out,
            "{:<64}  {:<20}  {:<10}  {:<24}  {}",
            h.id,
            h.created_at.format("%Y-%m-%dT%H:%M:%SZ"),
            h.method.as_str(),
            h.disease_label,
            h.significant_factors.join(",")
        )
        .unwrap();
    }
    out
}

/// One line per chain link, then the dataset.
pub fn chain_lines(chain: &ProvenanceChain) -> String {
    let mut out = String::new();
    let status = |ok: bool| if ok { "resolved" } else { "unresolved" };
    for l in &chain.links {
        writeln!(out, "{:<12} {:<32} {} {}", l.kind.as_str(), l.id, &l.digest[..l.digest.len().min(16)], status(l.resolved))
            .unwrap();
    }
    writeln!(out, "{:<12} {:<32} {}", "dataset", &chain.dataset[..chain.dataset.len().min(32)], status(chain.dataset_resolved))
        .unwrap();
    out
}
