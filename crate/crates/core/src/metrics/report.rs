use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_outcome, BootstrapCi};
use crate::error::{Error, Result};

/// Point estimate with a confidence interval that always contains it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl From<BootstrapCi> for Estimate {
    /// Percentile intervals of a skewed statistic can miss the point
    /// estimate; the interval is widened to include it.
    fn from(ci: BootstrapCi) -> Self {
        Self { point: ci.point, ci_low: ci.lo.min(ci.point), ci_high: ci.hi.max(ci.point) }
    }
}

/// Metrics of one model on one site's test split for one outcome.
/// Metrics that are undefined for the sample (e.g. no positives) are absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub site: String,
    pub outcome: String,
    pub n_total: usize,
    pub n_positives: usize,
    pub threshold: f64,
    pub auroc: Option<Estimate>,
    pub auprc: Option<Estimate>,
    pub sensitivity: Option<Estimate>,
    pub specificity: Option<Estimate>,
    pub ppv: Option<Estimate>,
    pub npv: Option<Estimate>,
    pub bootstrap_skipped: usize,
}

pub struct RowSpec<'a> {
    pub model: &'a str,
    pub site: &'a str,
    pub outcome: &'a str,
    pub threshold: f64,
    pub n_boot: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl MetricRow {
    pub fn compute(spec: &RowSpec<'_>, scores: &[f64], labels: &[bool]) -> Result<Self> {
        let n_positives = labels.iter().filter(|&&l| l).count();
        let mut row = MetricRow {
            model: spec.model.to_string(),
            site: spec.site.to_string(),
            outcome: spec.outcome.to_string(),
            n_total: labels.len(),
            n_positives,
            threshold: spec.threshold,
            auroc: None,
            auprc: None,
            sensitivity: None,
            specificity: None,
            ppv: None,
            npv: None,
            bootstrap_skipped: 0,
        };
        match bootstrap_outcome(scores, labels, spec.threshold, spec.n_boot, spec.alpha, spec.seed) {
            Ok(b) => {
                row.auroc = Some(b.auroc.into());
                row.auprc = Some(b.auprc.into());
                row.sensitivity = Some(b.sensitivity.into());
                row.specificity = Some(b.specificity.into());
                row.ppv = b.ppv.map(Into::into);
                row.npv = b.npv.map(Into::into);
                row.bootstrap_skipped = b.skipped;
            }
            Err(Error::DegenerateLabels(msg)) => {
                log::warn!("{}/{}/{}: {msg}", spec.model, spec.site, spec.outcome)
            }
            Err(e) => return Err(e),
        }
        Ok(row)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

const METRICS: [&str; 6] = ["auroc", "auprc", "sensitivity", "specificity", "ppv", "npv"];

impl MetricReport {
    pub fn find(&self, model: &str, site: &str, outcome: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.model == model && r.site == site && r.outcome == outcome)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One line per model × site × outcome; absent metrics are empty cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> =
            ["model", "site", "outcome", "n_total", "n_positives", "threshold"].iter().map(|s| s.to_string()).collect();
        for m in METRICS {
            header.extend([m.to_string(), format!("{m}_ci_low"), format!("{m}_ci_high")]);
        }
        header.push("bootstrap_skipped".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.model.clone(),
                r.site.clone(),
                r.outcome.clone(),
                r.n_total.to_string(),
                r.n_positives.to_string(),
            ];
            rec.push(r.threshold.to_string());
            for e in [r.auroc, r.auprc, r.sensitivity, r.specificity, r.ppv, r.npv] {
                match e {
                    Some(e) => rec.extend([e.point.to_string(), e.ci_low.to_string(), e.ci_high.to_string()]),
                    None => rec.extend([String::new(), String::new(), String::new()]),
                }
            }
            rec.push(r.bootstrap_skipped.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(csv_path)?)?;
        std::fs::write(json_path, self.to_json()?)?;
        Ok(())
    }
}
