use chrono::Days;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Geometric, StandardNormal};

use super::config::{CovariateShift, SiteConfig};
use super::truth::{GroundTruthModel, Latent, SiteEffect};
use super::{
    apply_exclusions, index_surgery, inject_missingness, select_index_surgery, Cohort, EncounterRecord,
    ExclusionCounts, Schema, Surgery,
};
use crate::error::{Error, Result};
use crate::model::N_OUTCOMES;
use crate::rng;

/// Monte-Carlo sample size used to calibrate intercepts.
pub const CALIBRATION_SAMPLES: usize = 200_000;
/// Largest allowed gap between the calibrated and target prevalence.
const CALIBRATION_TOLERANCE: f64 = 0.002;
const ESRD_RATE: f64 = 0.02;
const NO_SURGERY_RATE: f64 = 0.02;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn mean_prob(scores: &[f64], b: f64) -> f64 {
    scores.iter().map(|&s| sigmoid(s + b)).sum::<f64>() / scores.len() as f64
}

/// Intercept `b` with `mean(sigmoid(score + b)) ≈ target`, by bisection on
/// `[−20, 20]` over Monte-Carlo scores.
pub fn calibrate_intercept(target: f64, scores: &[f64]) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Calibration(format!("target prevalence {target} is outside (0,1)")));
    }
    if scores.is_empty() {
        return Err(Error::Calibration("no Monte-Carlo scores".into()));
    }
    let (mut lo, mut hi) = (-20.0, 20.0);
    if mean_prob(scores, lo) > target || mean_prob(scores, hi) < target {
        return Err(Error::Calibration(format!(
            "target prevalence {target} not reachable with intercept in [-20, 20]"
        )));
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(scores, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    let achieved = mean_prob(scores, b);
    if (achieved - target).abs() > CALIBRATION_TOLERANCE {
        return Err(Error::Calibration(format!("bisection ended at prevalence {achieved} for target {target}")));
    }
    Ok(b)
}

/// Feature distribution of one site.
struct SiteProfile {
    measurement: Vec<[f64; 2]>,
    latent_mean: Vec<f64>,
    binary_shift: Vec<f64>,
    procedures: WeightedIndex<f64>,
    categories: Vec<WeightedIndex<f64>>,
    surgeons: WeightedIndex<f64>,
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn skewed_weights(rng: &mut impl Rng, n: usize, spread: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|_| (spread * normal(rng)).exp())).expect("positive weights")
}

impl SiteProfile {
    fn new(truth: &GroundTruthModel, cfg: &SiteConfig) -> Result<Self> {
        let g = &truth.generator;
        let n_labs = truth.loadings.len();
        let mut rng = rng::stream(truth.seed, &[rng::label_key("site-profile"), rng::label_key(&cfg.site_name)]);
        let measurement = match &cfg.covariate_shift {
            CovariateShift::Magnitude { mean, scale } => {
                (0..n_labs).map(|_| [mean * normal(&mut rng), scale * normal(&mut rng)]).collect()
            }
            CovariateShift::PerFeature(v) if v.len() == n_labs => v.clone(),
            CovariateShift::PerFeature(v) => {
                return Err(Error::Config(format!("{}: {} shift entries for {n_labs} labs", cfg.site_name, v.len())))
            }
        };
        let direction: Vec<f64> = (0..g.latent_dim).map(|_| normal(&mut rng)).collect();
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let latent_mean = direction.iter().map(|v| cfg.case_mix * v.abs() / norm).collect();
        let binary_shift = (0..g.n_binary).map(|_| 0.3 * normal(&mut rng)).collect();
        let procedures = skewed_weights(&mut rng, g.n_procedures, 1.0);
        let categories = g.categorical_vocab.iter().map(|&v| skewed_weights(&mut rng, v, 0.8)).collect();
        let surgeons =
            WeightedIndex::new((1..=cfg.surgeon_vocab_size).map(|k| (k as f64).powf(-0.8))).expect("weights");
        Ok(Self { measurement, latent_mean, binary_shift, procedures, categories, surgeons })
    }
}

struct Drawer<'a> {
    truth: &'a GroundTruthModel,
    cfg: &'a SiteConfig,
    profile: SiteProfile,
    next_patient: u64,
    next_encounter: u64,
}

impl Drawer<'_> {
    /// All encounters of one new patient, with their scoring inputs.
    fn patient(&mut self, rng: &mut ChaCha8Rng) -> Vec<(EncounterRecord, Latent)> {
        let t = self.truth;
        let g = &t.generator;
        let cfg = self.cfg;
        let p = &self.profile;
        let patient_id = self.next_patient;
        self.next_patient += 1;

        let z: Vec<f64> = p.latent_mean.iter().map(|m| m + normal(rng)).collect();
        let first_age = (cfg.age_mean + cfg.age_sd * normal(rng)).clamp(1.0, 100.0);
        let esrd = rng.random::<f64>() < ESRD_RATE;
        let extra = Geometric::new(1.0 / (1.0 + cfg.encounters_per_patient.mean_extra)).expect("valid p").sample(rng);
        let n_enc = 1 + (extra as usize).min(cfg.encounters_per_patient.max - 1);
        let span = (cfg.date_end - cfg.date_start).num_days().max(1) as u64;
        let mut date = cfg.date_start + Days::new(rng.random_range(0..span));
        let gap = Exp::new(1.0 / 180.0).expect("valid rate");

        let mut out = Vec::with_capacity(n_enc);
        for prior in 0..n_enc {
            if prior > 0 {
                date = date + Days::new(1 + gap.sample(rng) as u64);
                if date > cfg.date_end {
                    break;
                }
            }
            let age = first_age
                + (date - out.first().map_or(date, |(r, _): &(EncounterRecord, Latent)| r.admission_date)).num_days()
                    as f64
                    / 365.25;
            let z_enc: Vec<f64> = z.iter().map(|v| v + 0.5 * normal(rng)).collect();

            let surgeries = if rng.random::<f64>() < NO_SURGERY_RATE {
                Vec::new()
            } else {
                let n = 1 + (Geometric::new(0.75).expect("valid p").sample(rng) as usize).min(3);
                (0..n)
                    .map(|_| {
                        let code = p.procedures.sample(rng);
                        Surgery {
                            procedure_code: code as u32,
                            work_units: t.procedure_work_units[code] * (0.3 * normal(rng)).exp(),
                            date: date + Days::new(rng.random_range(0..4)),
                        }
                    })
                    .collect()
            };

            let labs: Vec<f64> = t
                .loadings
                .iter()
                .map(|l| {
                    let explained: f64 = l.iter().zip(&z_enc).map(|(a, b)| a * b).sum();
                    let share: f64 = l.iter().map(|a| a * a).sum();
                    explained + (1.0 - share).max(0.0).sqrt() * normal(rng)
                })
                .collect();
            let mut continuous = Vec::with_capacity(g.n_raw_continuous());
            continuous.push(Some(prior as f64));
            for (j, &tv) in labs.iter().enumerate() {
                let [shift, scale] = p.measurement[j];
                let mut u = (1.0 + scale) * tv + shift;
                if rng.random::<f64>() < g.outlier_rate {
                    u *= 8.0;
                }
                let (c, s) = (t.lab_center[j], t.lab_scale[j]);
                let v = if t.lab_lognormal[j] { c * (s * u).exp() } else { c + c * s * u };
                continuous.push(Some(v));
            }
            let binary: Vec<bool> = (0..g.n_binary)
                .map(|k| {
                    let logit = t.binary_logit[k] + t.binary_loading[k] * z_enc[k % g.latent_dim] + p.binary_shift[k];
                    rng.random::<f64>() < 1.0 / (1.0 + (-logit).exp())
                })
                .collect();
            let categories: Vec<u32> = p.categories.iter().map(|w| w.sample(rng) as u32).collect();
            let surgeon = 1 + p.surgeons.sample(rng) as u32;

            let latent = Latent {
                age_std: (age - 55.0) / 20.0,
                prior: prior as f64,
                labs,
                binary: binary.clone(),
                procedure: index_surgery(&surgeries).map_or(0, |s| s.procedure_code),
                categories: categories.clone(),
                surgeon,
            };
            let record = EncounterRecord {
                patient_id,
                encounter_id: self.next_encounter,
                admission_date: date,
                age,
                esrd,
                surgeries,
                surgeon_id: Some(surgeon),
                continuous,
                binary,
                categorical: categories.into_iter().map(Some).collect(),
                outcomes: [false; N_OUTCOMES],
            };
            self.next_encounter += 1;
            out.push((record, latent));
        }
        out
    }
}

fn eligible(r: &EncounterRecord) -> bool {
    r.age >= 18.0 && !r.esrd && !r.surgeries.is_empty()
}

impl GroundTruthModel {
    /// Draws the site's effects and calibrates its four intercepts to the
    /// target prevalences on a fresh Monte-Carlo sample of eligible
    /// encounters.
    pub fn calibrate_site(&mut self, cfg: &SiteConfig, seed: u64) -> Result<[f64; N_OUTCOMES]> {
        cfg.validate()?;
        let mut effect = self.draw_site_effect(&cfg.site_name, cfg.surgeon_vocab_size);
        let mut drawer =
            Drawer { truth: self, cfg, profile: SiteProfile::new(self, cfg)?, next_patient: 0, next_encounter: 0 };
        let mut rng = rng::stream(seed, &[rng::label_key("calibration"), rng::label_key(&cfg.site_name)]);
        let mut scores: [Vec<f64>; N_OUTCOMES] = Default::default();
        while scores[0].len() < CALIBRATION_SAMPLES {
            for (record, latent) in drawer.patient(&mut rng) {
                if eligible(&record) {
                    let s = self.score(&effect, &latent);
                    for (dst, v) in scores.iter_mut().zip(s) {
                        dst.push(v);
                    }
                }
            }
        }
        for o in 0..N_OUTCOMES {
            effect.intercept[o] = calibrate_intercept(cfg.target_prevalence[o], &scores[o])
                .map_err(|e| Error::Calibration(format!("{} outcome {o}: {e}", cfg.site_name)))?;
        }
        let intercepts = effect.intercept;
        self.sites.insert(cfg.site_name.clone(), effect);
        Ok(intercepts)
    }
}

#[derive(Clone, Debug)]
pub struct SiteOutput {
    pub cohort: Cohort,
    pub exclusions: ExclusionCounts,
    pub prevalence: [f64; N_OUTCOMES],
}

/// Generates one site's cohort: patients and encounters with site covariate
/// shift, exclusions, index-surgery selection, outcome sampling from the
/// calibrated ground truth, then missingness.
pub fn generate_site(cfg: &SiteConfig, truth: &GroundTruthModel, seed: u64) -> Result<SiteOutput> {
    cfg.validate()?;
    let effect: &SiteEffect = truth.site(&cfg.site_name)?;
    let mut drawer = Drawer { truth, cfg, profile: SiteProfile::new(truth, cfg)?, next_patient: 1, next_encounter: 1 };
    let mut rng = rng::stream(seed, &[rng::label_key("features"), rng::label_key(&cfg.site_name)]);
    let mut raw = Vec::new();
    let mut latents = std::collections::HashMap::new();
    for _ in 0..cfg.n_patients {
        for (record, latent) in drawer.patient(&mut rng) {
            latents.insert(record.encounter_id, latent);
            raw.push(record);
        }
    }
    let (kept, exclusions) = apply_exclusions(raw);
    let mut outcome_rng = rng::stream(seed, &[rng::label_key("outcomes"), rng::label_key(&cfg.site_name)]);
    let mut records = Vec::with_capacity(kept.len());
    for r in kept {
        let mut r = select_index_surgery(r)?;
        let s = truth.score(effect, &latents[&r.encounter_id]);
        for o in 0..N_OUTCOMES {
            r.outcomes[o] = outcome_rng.random::<f64>() < sigmoid(s[o] + effect.intercept[o]);
        }
        records.push(r);
    }
    let cohort = Cohort { site: cfg.site_name.clone(), schema: Schema::from_generator(&truth.generator), records };
    let cohort = inject_missingness(cohort, &cfg.missing_rate, seed)?;
    let prevalence = cohort.prevalence();
    Ok(SiteOutput { cohort, exclusions, prevalence })
}
