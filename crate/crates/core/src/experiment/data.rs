//! Cohort generation and per-site data preparation.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, SiteRole};
use crate::cohort::{
    generate_site, read_cohort_csv, write_cohort_csv, Cohort, ExclusionCounts, GroundTruthModel, Schema,
};
use crate::error::{Error, Result};
use crate::model::N_OUTCOMES;
use crate::pipeline::{
    chronological_split, fit_preprocessor, merge_scaler_stats, FeatureMatrix, FitOptions, Preprocessor, ScalerStats,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteManifest {
    pub site: String,
    pub role: String,
    pub n_encounters: usize,
    pub n_patients: usize,
    pub target_prevalence: [f64; N_OUTCOMES],
    pub achieved_prevalence: [f64; N_OUTCOMES],
    pub intercepts: [f64; N_OUTCOMES],
    pub exclusions: ExclusionCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub sites: Vec<SiteManifest>,
}

fn role_name(role: SiteRole) -> &'static str {
    match role {
        SiteRole::Development => "development",
        SiteRole::External => "external",
    }
}

/// Writes one cohort CSV per site plus `manifest.json`.
pub fn generate_cohorts(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let dir = cfg.cohort_dir();
    fs::create_dir_all(&dir)?;
    let mut truth = GroundTruthModel::sample(&cfg.generator, cfg.seed)?;
    let mut intercepts = Vec::new();
    for (site, _) in cfg.sites() {
        intercepts.push(truth.calibrate_site(site, cfg.seed)?);
    }
    let mut sites = Vec::new();
    for ((site, role), b0) in cfg.sites().zip(intercepts) {
        let out = generate_site(site, &truth, cfg.seed)?;
        let mut w = BufWriter::new(File::create(cfg.cohort_path(&site.site_name))?);
        write_cohort_csv(&out.cohort, &mut w)?;
        std::io::Write::flush(&mut w)?;
        let patients: std::collections::BTreeSet<u64> = out.cohort.records.iter().map(|r| r.patient_id).collect();
        log::info!(
            "{}: {} encounters, prevalence {:?}",
            site.site_name,
            out.cohort.len(),
            out.prevalence.map(|p| (p * 1e4).round() / 1e4)
        );
        sites.push(SiteManifest {
            site: site.site_name.clone(),
            role: role_name(role).into(),
            n_encounters: out.cohort.len(),
            n_patients: patients.len(),
            target_prevalence: site.target_prevalence,
            achieved_prevalence: out.prevalence,
            intercepts: b0,
            exclusions: out.exclusions,
        });
    }
    let manifest = Manifest { seed: cfg.seed, sites };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_cohort(cfg: &ExperimentConfig, site: &str) -> Result<Cohort> {
    let path = cfg.cohort_path(site);
    let file = File::open(&path)
        .map_err(|e| Error::Config(format!("missing cohort file {} (run `generate` first): {e}", path.display())))?;
    read_cohort_csv(site, &Schema::from_generator(&cfg.generator), BufReader::new(file))
}

/// One site's data with its own preprocessing statistics. Development sites
/// are split chronologically; an external site is all test data.
#[derive(Clone, Debug)]
pub struct SiteData {
    pub name: String,
    pub role: SiteRole,
    pub train: Option<Cohort>,
    pub validation: Option<Cohort>,
    pub test: Cohort,
    /// Clip bounds, medians and scale fitted on the site's training rows
    /// (the whole cohort for an external site).
    pub local: Preprocessor,
}

/// Preprocessed matrices of one site under a given scaler.
#[derive(Clone, Debug)]
pub struct SiteMatrices {
    pub train: Option<FeatureMatrix>,
    pub validation: Option<FeatureMatrix>,
    pub test: FeatureMatrix,
}

impl SiteData {
    pub fn prepare(cfg: &ExperimentConfig, cohort: Cohort, role: SiteRole) -> Result<Self> {
        let opts = FitOptions { catalog: Some(cfg.catalog()), ..FitOptions::default() };
        let name = cohort.site.clone();
        match role {
            SiteRole::Development => {
                let split = chronological_split(&cohort, &cfg.split)?;
                let local = fit_preprocessor(&split.train, &opts)?;
                Ok(SiteData {
                    name,
                    role,
                    train: Some(split.train),
                    validation: Some(split.validation),
                    test: split.test,
                    local,
                })
            }
            SiteRole::External => {
                let local = fit_preprocessor(&cohort, &opts)?;
                Ok(SiteData { name, role, train: None, validation: None, test: cohort, local })
            }
        }
    }

    pub fn load(cfg: &ExperimentConfig, name: &str) -> Result<Self> {
        let (_, role) = cfg.site(name)?;
        Self::prepare(cfg, load_cohort(cfg, name)?, role)
    }

    /// Clipped training bounds shared with the coordinator.
    pub fn scaler_stats(&self) -> ScalerStats {
        self.local.scaler_stats()
    }

    /// Site-local clipping and imputation with the model's scale bounds.
    pub fn matrices(&self, scaler: &ScalerStats) -> Result<SiteMatrices> {
        let pp = self.local.with_scaler(scaler)?;
        let opt = |c: &Option<Cohort>| c.as_ref().map(|c| pp.transform(c)).transpose();
        Ok(SiteMatrices {
            train: opt(&self.train)?,
            validation: opt(&self.validation)?,
            test: pp.transform(&self.test)?,
        })
    }
}

pub fn load_sites(cfg: &ExperimentConfig) -> Result<Vec<SiteData>> {
    cfg.sites().map(|(s, _)| SiteData::load(cfg, &s.site_name)).collect()
}

/// Federation-wide scaler from the development sites' clipped bounds.
pub fn global_scaler(sites: &[SiteData]) -> Result<ScalerStats> {
    let stats: Vec<ScalerStats> =
        sites.iter().filter(|s| s.role == SiteRole::Development).map(SiteData::scaler_stats).collect();
    merge_scaler_stats(&stats)
}
