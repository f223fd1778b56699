//! Test-split scoring, persisted per-encounter scores and metric reports.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::data::{load_sites, SiteData};
use super::train::{local_name, personalized_name, TrainedModel};
use super::{ExperimentConfig, RunKind, SiteRole};
use crate::error::{Error, Result};
use crate::metrics::{pick_threshold, MetricReport, MetricRow, RowSpec};
use crate::model::{N_OUTCOMES, OUTCOME_NAMES};
use crate::rng;

/// Per-encounter predictions and labels of one model on one site.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreFile {
    pub encounter_ids: Vec<u64>,
    pub scores: Vec<[f64; N_OUTCOMES]>,
    pub labels: Vec<[bool; N_OUTCOMES]>,
}

impl ScoreFile {
    pub fn outcome(&self, o: usize) -> (Vec<f64>, Vec<bool>) {
        (self.scores.iter().map(|s| s[o]).collect(), self.labels.iter().map(|l| l[o]).collect())
    }

    fn from_predictions(ids: &[u64], probs: &[f64], labels: &[f64]) -> Self {
        let n = ids.len();
        let row = |v: &[f64], r: usize| -> [f64; N_OUTCOMES] { std::array::from_fn(|o| v[r * N_OUTCOMES + o]) };
        ScoreFile {
            encounter_ids: ids.to_vec(),
            scores: (0..n).map(|r| row(probs, r)).collect(),
            labels: (0..n).map(|r| row(labels, r).map(|y| y > 0.5)).collect(),
        }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["encounter_id".to_string()];
        header.extend(OUTCOME_NAMES.iter().map(|o| format!("score_{o}")));
        header.extend(OUTCOME_NAMES.iter().map(|o| format!("label_{o}")));
        w.write_record(&header)?;
        for ((id, s), l) in self.encounter_ids.iter().zip(&self.scores).zip(&self.labels) {
            let mut row = vec![id.to_string()];
            row.extend(s.iter().map(|v| v.to_string()));
            row.extend(l.iter().map(|&y| u8::from(y).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut out = ScoreFile { encounter_ids: Vec::new(), scores: Vec::new(), labels: Vec::new() };
        let bad = |what: &str| Error::Format(format!("score file: bad {what}"));
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 1 + 2 * N_OUTCOMES {
                return Err(bad("column count"));
            }
            out.encounter_ids.push(rec[0].parse().map_err(|_| bad("encounter id"))?);
            let mut s = [0.0; N_OUTCOMES];
            let mut l = [false; N_OUTCOMES];
            for o in 0..N_OUTCOMES {
                s[o] = rec[1 + o].parse().map_err(|_| bad("score"))?;
                l[o] = match &rec[1 + N_OUTCOMES + o] {
                    "1" => true,
                    "0" => false,
                    _ => return Err(bad("label")),
                };
            }
            out.scores.push(s);
            out.labels.push(l);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

/// Model names implied by the configured runs, in run order.
pub fn model_names(cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = Vec::new();
    for &kind in &cfg.runs {
        match kind {
            RunKind::Local => out.extend(cfg.development.iter().map(|s| local_name(&s.site_name))),
            RunKind::Central => out.push("central".into()),
            RunKind::Personalized => out.extend(cfg.development.iter().map(|s| personalized_name(&s.site_name))),
            fed => out.push(fed.algorithm().expect("federated run").name().into()),
        }
    }
    out
}

/// Youden thresholds from the model's predictions on the validation splits
/// of the sites it was trained on. Falls back to 0.5 when an outcome has a
/// single class there.
fn validation_thresholds(model: &TrainedModel, sites: &[SiteData]) -> Result<[f64; N_OUTCOMES]> {
    let mut scores: [Vec<f64>; N_OUTCOMES] = Default::default();
    let mut labels: [Vec<bool>; N_OUTCOMES] = Default::default();
    for s in sites.iter().filter(|s| model.meta.trained_on.contains(&s.name)) {
        let val = s.matrices(&model.meta.scaler)?.validation.expect("development site");
        let p = model.predict(&val)?;
        for o in 0..N_OUTCOMES {
            scores[o].extend((0..val.len()).map(|r| p[r * N_OUTCOMES + o]));
            labels[o].extend(val.outcome_labels(o));
        }
    }
    let mut out = [0.5; N_OUTCOMES];
    for o in 0..N_OUTCOMES {
        match pick_threshold(&scores[o], &labels[o]) {
            Ok(t) => out[o] = t,
            Err(Error::DegenerateLabels(_)) | Err(Error::EmptyData(_)) => {
                log::warn!("{}: no usable validation labels for {}, threshold 0.5", model.meta.name, OUTCOME_NAMES[o])
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Bootstrap seed shared by every model scored on the same site and outcome,
/// so their resamples are paired.
fn bootstrap_seed(cfg: &ExperimentConfig, site: &str, outcome: usize) -> u64 {
    rng::derive_seed(cfg.evaluation.seed, &[rng::label_key(site), outcome as u64])
}

/// Scores one model on one site's test data, persists the scores, and
/// returns one metric row per outcome.
pub fn evaluate_model_at(
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    site: &SiteData,
    thresholds: &[f64; N_OUTCOMES],
) -> Result<Vec<MetricRow>> {
    let test = site.matrices(&model.meta.scaler)?.test;
    let probs = model.predict(&test)?;
    let file = ScoreFile::from_predictions(&test.encounter_ids, &probs, &test.labels);
    let path = cfg.score_path(&model.meta.name, &site.name);
    fs::create_dir_all(path.parent().expect("scores directory"))?;
    let mut w = BufWriter::new(File::create(&path)?);
    file.write(&mut w)?;
    w.flush()?;
    rows_from_scores(cfg, &model.meta.name, &site.name, &file, thresholds)
}

/// Metric rows recomputed from a score file.
pub fn rows_from_scores(
    cfg: &ExperimentConfig,
    model: &str,
    site: &str,
    file: &ScoreFile,
    thresholds: &[f64; N_OUTCOMES],
) -> Result<Vec<MetricRow>> {
    (0..N_OUTCOMES)
        .map(|o| {
            let (scores, labels) = file.outcome(o);
            let spec = RowSpec {
                model,
                site,
                outcome: OUTCOME_NAMES[o],
                threshold: thresholds[o],
                n_boot: cfg.evaluation.n_boot,
                alpha: cfg.evaluation.alpha,
                seed: bootstrap_seed(cfg, site, o),
            };
            MetricRow::compute(&spec, &scores, &labels)
        })
        .collect()
}

/// Sites a model is scored on: every site, except that a personalized model
/// only knows its own site's surgeons.
fn evaluation_sites<'a>(model: &TrainedModel, sites: &'a [SiteData]) -> Vec<&'a SiteData> {
    sites
        .iter()
        .filter(|s| model.meta.kind != RunKind::Personalized || model.meta.trained_on.contains(&s.name))
        .collect()
}

/// Scores every trained model on every applicable site and writes
/// `reports/metrics.{csv,json}` and `reports/cross_site_auroc.csv`.
pub fn evaluate_all(cfg: &ExperimentConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let sites = load_sites(cfg)?;
    let mut report = MetricReport { rows: Vec::new() };
    for name in model_names(cfg) {
        let model = TrainedModel::load(cfg, &name)?;
        let thresholds = validation_thresholds(&model, &sites)?;
        for site in evaluation_sites(&model, &sites) {
            log::info!("evaluating {name} on {}", site.name);
            report.rows.extend(evaluate_model_at(cfg, &model, site, &thresholds)?);
        }
    }
    let dir = cfg.report_dir();
    fs::create_dir_all(&dir)?;
    report.save(&dir.join("metrics.csv"), &dir.join("metrics.json"))?;
    write_cross_site(cfg, &report, File::create(dir.join("cross_site_auroc.csv"))?)?;
    Ok(report)
}

/// Model × site AUROC matrix per outcome.
pub fn write_cross_site<W: Write>(cfg: &ExperimentConfig, report: &MetricReport, out: W) -> Result<()> {
    let sites: Vec<&str> = cfg.sites().map(|(s, _)| s.site_name.as_str()).collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["model".to_string(), "outcome".to_string()];
    header.extend(sites.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    let mut models: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    for m in models {
        for o in OUTCOME_NAMES {
            let mut row = vec![m.to_string(), o.to_string()];
            row.extend(sites.iter().map(|s| {
                report.find(m, s, o).and_then(|r| r.auroc.as_ref()).map_or(String::new(), |e| e.point.to_string())
            }));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Development-site names in configuration order.
pub fn development_sites(cfg: &ExperimentConfig) -> Vec<String> {
    cfg.sites().filter(|(_, r)| *r == SiteRole::Development).map(|(s, _)| s.site_name.clone()).collect()
}
