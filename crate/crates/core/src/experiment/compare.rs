//! Paired model comparisons on test AUROC with CI-overlap verdicts.

use std::fs::{self, File};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::evaluate::development_sites;
use super::train::local_name;
use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{Estimate, MetricReport};
use crate::model::OUTCOME_NAMES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Better,
    Worse,
    /// Confidence intervals overlap.
    Comparable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub comparison: String,
    pub model: String,
    pub reference: String,
    pub site: String,
    pub outcome: String,
    /// AUROC of `model` minus AUROC of `reference`.
    pub delta: f64,
    pub model_auroc: Estimate,
    pub reference_auroc: Estimate,
    pub verdict: Verdict,
}

fn verdict(a: &Estimate, b: &Estimate) -> Verdict {
    if a.ci_low > b.ci_high {
        Verdict::Better
    } else if a.ci_high < b.ci_low {
        Verdict::Worse
    } else {
        Verdict::Comparable
    }
}

/// Compares `model` against `reference` at one site and outcome; `None`
/// when either AUROC is undefined there.
pub fn compare_pair(
    report: &MetricReport,
    comparison: &str,
    model: &str,
    reference: &str,
    site: &str,
    outcome: &str,
) -> Result<Option<Comparison>> {
    let get = |m: &str| {
        report
            .find(m, site, outcome)
            .ok_or_else(|| Error::Config(format!("report has no row for {m} at {site} ({outcome}); run `evaluate`")))
    };
    let (a, b) = (get(model)?, get(reference)?);
    let (Some(ea), Some(eb)) = (&a.auroc, &b.auroc) else {
        return Ok(None);
    };
    Ok(Some(Comparison {
        comparison: comparison.into(),
        model: model.into(),
        reference: reference.into(),
        site: site.into(),
        outcome: outcome.into(),
        delta: ea.point - eb.point,
        model_auroc: *ea,
        reference_auroc: *eb,
        verdict: verdict(ea, eb),
    }))
}

/// Local model with the highest AUROC at `site` among those trained
/// elsewhere.
pub fn best_foreign_local(report: &MetricReport, dev: &[String], site: &str, outcome: &str) -> Option<String> {
    dev.iter()
        .filter(|d| d.as_str() != site)
        .filter_map(|d| {
            let name = local_name(d);
            let auc = report.find(&name, site, outcome)?.auroc.as_ref()?.point;
            Some((name, auc))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, _)| n)
}

/// All comparisons present in the report: SCAFFOLD against FedAvg, every
/// federated model against the best foreign local model and against the
/// central model, for every site and outcome.
pub fn compare_report(cfg: &ExperimentConfig, report: &MetricReport) -> Result<Vec<Comparison>> {
    let dev = development_sites(cfg);
    let has = |m: &str| report.rows.iter().any(|r| r.model == m);
    let federated: Vec<&str> = ["fedavg", "fedprox", "scaffold"].into_iter().filter(|m| has(m)).collect();
    if federated.is_empty() {
        return Err(Error::Config("no federated model in the report; nothing to compare".into()));
    }
    let mut out = Vec::new();
    for (site, _) in cfg.sites() {
        let site = site.site_name.as_str();
        for outcome in OUTCOME_NAMES {
            if has("scaffold") && has("fedavg") {
                out.extend(compare_pair(report, "scaffold_vs_fedavg", "scaffold", "fedavg", site, outcome)?);
            }
            for &f in &federated {
                if let Some(local) = best_foreign_local(report, &dev, site, outcome) {
                    out.extend(compare_pair(report, "federated_vs_best_foreign_local", f, &local, site, outcome)?);
                }
                if has("central") {
                    out.extend(compare_pair(report, "federated_vs_central", f, "central", site, outcome)?);
                }
            }
        }
    }
    Ok(out)
}

pub fn write_comparisons<W: Write>(rows: &[Comparison], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "comparison",
        "model",
        "reference",
        "site",
        "outcome",
        "delta",
        "model_auroc",
        "model_ci_low",
        "model_ci_high",
        "reference_auroc",
        "reference_ci_low",
        "reference_ci_high",
        "verdict",
    ])?;
    for r in rows {
        let v = match r.verdict {
            Verdict::Better => "better",
            Verdict::Worse => "worse",
            Verdict::Comparable => "comparable",
        };
        w.write_record([
            r.comparison.clone(),
            r.model.clone(),
            r.reference.clone(),
            r.site.clone(),
            r.outcome.clone(),
            r.delta.to_string(),
            r.model_auroc.point.to_string(),
            r.model_auroc.ci_low.to_string(),
            r.model_auroc.ci_high.to_string(),
            r.reference_auroc.point.to_string(),
            r.reference_auroc.ci_low.to_string(),
            r.reference_auroc.ci_high.to_string(),
            v.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `reports/metrics.json` and writes `reports/compare.{csv,json}`.
pub fn compare_all(cfg: &ExperimentConfig) -> Result<Vec<Comparison>> {
    let dir = cfg.report_dir();
    let path = dir.join("metrics.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("missing {} (run `evaluate` first): {e}", path.display())))?;
    let report = MetricReport::from_json(&text)?;
    let rows = compare_report(cfg, &report)?;
    write_comparisons(&rows, File::create(dir.join("compare.csv"))?)?;
    fs::write(dir.join("compare.json"), serde_json::to_string_pretty(&rows)?)?;
    for name in ["scaffold_vs_fedavg", "federated_vs_best_foreign_local", "federated_vs_central"] {
        let d: Vec<f64> = rows.iter().filter(|r| r.comparison == name).map(|r| r.delta).collect();
        if !d.is_empty() {
            log::info!(
                "{name}: mean AUROC delta {:+.4} over {} pairs",
                d.iter().sum::<f64>() / d.len() as f64,
                d.len()
            );
        }
    }
    Ok(rows)
}
