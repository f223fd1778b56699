use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::GeneratorConfig;
use crate::error::{Error, Result};
use crate::model::N_OUTCOMES;
use crate::rng;

/// Outcome-model offsets specific to one site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteEffect {
    /// Calibrated per-outcome intercept.
    pub intercept: [f64; N_OUTCOMES],
    /// Perturbation of the lab coefficients, `[outcome][lab]`.
    pub lab_coef: Vec<Vec<f64>>,
    /// Risk offset per surgeon (`surgeon_id − 1`).
    pub surgeon: Vec<[f64; N_OUTCOMES]>,
}

/// The latent label mechanism: feature structure plus per-outcome
/// coefficients, shared by all sites up to their [`SiteEffect`]s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModel {
    pub generator: GeneratorConfig,
    pub seed: u64,
    /// Loadings of each lab on the latent state, `[lab][latent]`.
    pub loadings: Vec<Vec<f64>>,
    pub lab_center: Vec<f64>,
    pub lab_scale: Vec<f64>,
    pub lab_lognormal: Vec<bool>,
    pub binary_logit: Vec<f64>,
    pub binary_loading: Vec<f64>,
    pub procedure_work_units: Vec<f64>,
    pub beta_age: [f64; N_OUTCOMES],
    pub beta_prior: [f64; N_OUTCOMES],
    pub beta_nonlinear: [f64; N_OUTCOMES],
    /// `[outcome][lab]`
    pub beta_lab: Vec<Vec<f64>>,
    /// `[outcome][flag]`
    pub beta_binary: Vec<Vec<f64>>,
    pub procedure_effect: Vec<[f64; N_OUTCOMES]>,
    /// `[column][code]`
    pub category_effect: Vec<Vec<[f64; N_OUTCOMES]>>,
    pub sites: BTreeMap<String, SiteEffect>,
}

/// Noise-free description of one encounter used for scoring.
#[derive(Clone, Debug)]
pub(crate) struct Latent {
    pub age_std: f64,
    pub prior: f64,
    pub labs: Vec<f64>,
    pub binary: Vec<bool>,
    pub procedure: u32,
    pub categories: Vec<u32>,
    pub surgeon: u32,
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl GroundTruthModel {
    pub fn sample(generator: &GeneratorConfig, seed: u64) -> Result<Self> {
        generator.validate()?;
        let g = generator;
        let mut rng = rng::stream(seed, &[rng::label_key("truth")]);
        let n_labs = g.n_raw_continuous() - 1;
        let loadings: Vec<Vec<f64>> = (0..n_labs)
            .map(|_| {
                let raw: Vec<f64> = (0..g.latent_dim).map(|_| normal(&mut rng)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
                // explained share of variance in [0.2, 0.7]
                let share = rng.random_range(0.2f64..0.7).sqrt();
                raw.iter().map(|v| v / norm * share).collect()
            })
            .collect();
        let lab_center = (0..n_labs).map(|_| rng.random_range(1.0f64..200.0)).collect();
        let lab_scale = (0..n_labs).map(|_| rng.random_range(0.1f64..0.4)).collect();
        let lab_lognormal = (0..n_labs).map(|j| j % 4 == 3).collect();
        let binary_logit = (0..g.n_binary).map(|_| rng.random_range(-3.0f64..-0.5)).collect();
        let binary_loading = (0..g.n_binary).map(|_| 0.5 * normal(&mut rng)).collect();
        let procedure_work_units = (0..g.n_procedures).map(|_| (2.0 + 0.6 * normal(&mut rng)).exp()).collect();

        let s = g.signal;
        let shared: Vec<f64> = (0..n_labs).map(|_| normal(&mut rng)).collect();
        let beta_lab = (0..N_OUTCOMES)
            .map(|_| {
                (0..n_labs)
                    .map(|j| {
                        if j < g.informative_continuous {
                            s * (0.7 * shared[j] + 0.7 * normal(&mut rng))
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let informative_flags = g.n_binary.div_ceil(3);
        let beta_binary = (0..N_OUTCOMES)
            .map(|_| {
                (0..g.n_binary).map(|k| if k < informative_flags { 1.5 * s * normal(&mut rng) } else { 0.0 }).collect()
            })
            .collect();
        let beta_age: [f64; N_OUTCOMES] = std::array::from_fn(|_| 0.6 + 0.2 * normal(&mut rng));
        let beta_prior: [f64; N_OUTCOMES] = std::array::from_fn(|_| 0.15 + 0.05 * normal(&mut rng));
        let beta_nonlinear: [f64; N_OUTCOMES] = std::array::from_fn(|_| g.nonlinear * (1.0 + 0.3 * normal(&mut rng)));
        let procedure_effect =
            (0..g.n_procedures).map(|_| std::array::from_fn(|_| 2.0 * s * normal(&mut rng))).collect();
        let category_effect = g
            .categorical_vocab
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let scale = if k < 3 { s } else { 0.0 };
                (0..v).map(|_| std::array::from_fn(|_| scale * normal(&mut rng))).collect()
            })
            .collect();
        Ok(Self {
            generator: g.clone(),
            seed,
            loadings,
            lab_center,
            lab_scale,
            lab_lognormal,
            binary_logit,
            binary_loading,
            procedure_work_units,
            beta_age,
            beta_prior,
            beta_nonlinear,
            beta_lab,
            beta_binary,
            procedure_effect,
            category_effect,
            sites: BTreeMap::new(),
        })
    }

    /// Site coefficient perturbations and surgeon effects (intercepts zero
    /// until calibrated). Deterministic in the model seed and site name.
    pub(crate) fn draw_site_effect(&self, site: &str, surgeons: usize) -> SiteEffect {
        let g = &self.generator;
        let mut rng = rng::stream(self.seed, &[rng::label_key("site-effect"), rng::label_key(site)]);
        let n_labs = self.loadings.len();
        let lab_coef =
            (0..N_OUTCOMES)
                .map(|_| {
                    (0..n_labs)
                        .map(|j| {
                            if j < g.informative_continuous {
                                g.site_effect * g.signal * normal(&mut rng)
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect();
        let surgeon = (0..surgeons).map(|_| std::array::from_fn(|_| g.surgeon_effect * normal(&mut rng))).collect();
        SiteEffect { intercept: [0.0; N_OUTCOMES], lab_coef, surgeon }
    }

    pub fn site(&self, site: &str) -> Result<&SiteEffect> {
        self.sites.get(site).ok_or_else(|| Error::Calibration(format!("site `{site}` has not been calibrated")))
    }

    /// Linear predictor of every outcome, excluding the site intercept.
    pub(crate) fn score(&self, effect: &SiteEffect, x: &Latent) -> [f64; N_OUTCOMES] {
        let a = x.age_std;
        let (l0, l1, l2) = (x.labs[0], x.labs[1], x.labs[2]);
        let shape = 0.5 * (a * a - 1.0) + l0 * l1 - 0.5 * (l2.max(0.0) - 0.4);
        std::array::from_fn(|o| {
            let mut s = self.beta_age[o] * a + self.beta_prior[o] * x.prior.min(5.0) + self.beta_nonlinear[o] * shape;
            for (j, &t) in x.labs.iter().enumerate() {
                let b = self.beta_lab[o][j] + effect.lab_coef[o][j];
                if b != 0.0 {
                    s += b * t;
                }
            }
            for (k, &flag) in x.binary.iter().enumerate() {
                if flag {
                    s += self.beta_binary[o][k];
                }
            }
            s += self.procedure_effect[x.procedure as usize][o];
            for (k, &c) in x.categories.iter().enumerate() {
                s += self.category_effect[k][c as usize][o];
            }
            if let Some(e) = effect.surgeon.get(x.surgeon as usize - 1) {
                s += e[o];
            }
            s
        })
    }
}
