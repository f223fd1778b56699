use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::N_OUTCOMES;

/// Structure of the synthetic world shared by every site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Continuous model inputs, age included.
    pub n_continuous: usize,
    pub n_binary: usize,
    /// Vocabulary of each categorical column besides the procedure code.
    pub categorical_vocab: Vec<usize>,
    /// Size of the shared procedure-code catalog.
    pub n_procedures: usize,
    /// Dimension of the latent health state driving correlated features.
    pub latent_dim: usize,
    /// Continuous features with a direct effect on outcomes.
    pub informative_continuous: usize,
    /// Scale of outcome coefficients.
    pub signal: f64,
    /// Spread of per-site coefficient perturbations, relative to `signal`.
    pub site_effect: f64,
    /// Spread of per-surgeon risk offsets.
    pub surgeon_effect: f64,
    /// Weight of the quadratic and interaction terms.
    pub nonlinear: f64,
    /// Probability that a lab value is a gross outlier.
    pub outlier_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_continuous: 60,
            n_binary: 30,
            categorical_vocab: vec![12, 6, 20, 8, 30, 5, 15, 40],
            n_procedures: 150,
            latent_dim: 6,
            informative_continuous: 20,
            signal: 0.3,
            site_effect: 0.8,
            surgeon_effect: 0.3,
            nonlinear: 0.3,
            outlier_rate: 0.005,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_continuous < 3 || self.n_binary == 0 || self.n_procedures == 0 || self.latent_dim == 0 {
            return Err(Error::Config("generator needs ≥3 continuous, ≥1 binary, procedures and latent dims".into()));
        }
        if self.categorical_vocab.contains(&0) {
            return Err(Error::Config("categorical vocabularies must be non-empty".into()));
        }
        if self.informative_continuous > self.n_continuous - 2 {
            return Err(Error::Config("more informative features than lab features".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return Err(Error::Config("outlier_rate must be in [0,1)".into()));
        }
        Ok(())
    }

    /// Raw continuous columns in a record (everything but age).
    pub fn n_raw_continuous(&self) -> usize {
        self.n_continuous - 1
    }

    pub fn continuous_names(&self) -> Vec<String> {
        std::iter::once("prior_admissions".to_string())
            .chain((1..self.n_raw_continuous()).map(|j| format!("lab_{j:02}")))
            .collect()
    }

    pub fn binary_names(&self) -> Vec<String> {
        (1..=self.n_binary).map(|k| format!("flag_{k:02}")).collect()
    }

    pub fn categorical_names(&self) -> Vec<String> {
        const KNOWN: [&str; 8] =
            ["admission_source", "insurance", "service", "anesthesia", "diagnosis_group", "sex", "race", "zip_region"];
        (0..self.categorical_vocab.len())
            .map(|k| KNOWN.get(k).map_or_else(|| format!("category_{k:02}"), |s| s.to_string()))
            .collect()
    }
}

/// Per-feature missing rates, or one rate for all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rates {
    Uniform(f64),
    PerFeature(Vec<f64>),
}

impl Rates {
    pub fn resolve(&self, n: usize) -> Result<Vec<f64>> {
        let v = match self {
            Rates::Uniform(r) => vec![*r; n],
            Rates::PerFeature(v) if v.len() == n => v.clone(),
            Rates::PerFeature(v) => return Err(Error::Config(format!("{} missing rates for {n} features", v.len()))),
        };
        if v.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("missing rates must lie in [0,1)".into()));
        }
        Ok(v)
    }
}

/// Site-specific shift of the recorded feature values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateShift {
    /// Offsets drawn per feature with these spreads, seeded by the site name.
    Magnitude { mean: f64, scale: f64 },
    /// Explicit `(mean offset, scale offset)` per raw continuous feature.
    PerFeature(Vec<[f64; 2]>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncounterDist {
    /// Mean number of encounters beyond the first.
    pub mean_extra: f64,
    pub max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub site_name: String,
    pub n_patients: usize,
    pub encounters_per_patient: EncounterDist,
    /// ICU, MV, AKI, mortality.
    pub target_prevalence: [f64; N_OUTCOMES],
    pub covariate_shift: CovariateShift,
    /// Shift of the latent health state (case mix).
    #[serde(default)]
    pub case_mix: f64,
    pub surgeon_vocab_size: usize,
    pub missing_rate: Rates,
    pub age_mean: f64,
    pub age_sd: f64,
    pub date_start: NaiveDate,
    pub date_end: NaiveDate,
}

impl SiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_prevalence.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Config(format!("{}: prevalences must lie in (0,1)", self.site_name)));
        }
        if self.n_patients == 0 || self.surgeon_vocab_size == 0 || self.encounters_per_patient.max == 0 {
            return Err(Error::Config(format!(
                "{}: patient, surgeon and encounter counts must be ≥ 1",
                self.site_name
            )));
        }
        if self.date_end <= self.date_start {
            return Err(Error::Config(format!("{}: empty date range", self.site_name)));
        }
        if let Rates::Uniform(r) = self.missing_rate {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{}: missing rate must be in [0,1)", self.site_name)));
            }
        }
        Ok(())
    }

    fn profile(
        name: &str,
        n_patients: usize,
        prevalence: [f64; 4],
        age: (f64, f64),
        shift: (f64, f64),
        case_mix: f64,
    ) -> Self {
        SiteConfig {
            site_name: name.to_string(),
            n_patients,
            encounters_per_patient: EncounterDist { mean_extra: 0.3, max: 6 },
            target_prevalence: prevalence,
            covariate_shift: CovariateShift::Magnitude { mean: shift.0, scale: shift.1 },
            case_mix,
            surgeon_vocab_size: 40,
            missing_rate: Rates::Uniform(0.05),
            age_mean: age.0,
            age_sd: age.1,
            date_start: NaiveDate::from_ymd_opt(2014, 1, 1).expect("valid date"),
            date_end: NaiveDate::from_ymd_opt(2019, 12, 31).expect("valid date"),
        }
    }

    /// Large academic centre: high acuity.
    pub fn partner3(n_patients: usize) -> Self {
        Self::profile("partner3", n_patients, [0.15, 0.06, 0.10, 0.02], (56.0, 20.0), (0.3, 0.15), 0.3)
    }

    /// Older, lower-acuity population.
    pub fn partner4(n_patients: usize) -> Self {
        Self::profile("partner4", n_patients, [0.02, 0.01, 0.01, 0.001], (61.0, 19.0), (0.3, 0.15), -0.3)
    }

    /// Intermediate acuity with high AKI.
    pub fn partner6(n_patients: usize) -> Self {
        Self::profile("partner6", n_patients, [0.06, 0.02, 0.15, 0.01], (57.0, 18.0), (0.3, 0.15), 0.1)
    }

    /// External validation site with very low outcome rates.
    pub fn external(name: &str, n_patients: usize) -> Self {
        Self::profile(name, n_patients, [0.003, 0.003, 0.02, 0.001], (50.0, 20.0), (0.3, 0.15), -0.1)
    }
}
