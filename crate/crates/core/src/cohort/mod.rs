//! Synthetic multi-site surgical cohorts: the record types, the generator
//! with prevalence calibration, cohort exclusions, index-surgery selection
//! and missingness injection.

mod config;
mod csv_io;
mod generate;
mod truth;

pub use config::{CovariateShift, EncounterDist, GeneratorConfig, Rates, SiteConfig};
pub use csv_io::{read_cohort_csv, write_cohort_csv};
pub use generate::{calibrate_intercept, generate_site, SiteOutput, CALIBRATION_SAMPLES};
pub use truth::{GroundTruthModel, SiteEffect};

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::N_OUTCOMES;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surgery {
    pub procedure_code: u32,
    pub work_units: f64,
    pub date: NaiveDate,
}

/// One surgical admission.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub patient_id: u64,
    pub encounter_id: u64,
    pub admission_date: NaiveDate,
    pub age: f64,
    pub esrd: bool,
    pub surgeries: Vec<Surgery>,
    pub surgeon_id: Option<u32>,
    pub continuous: Vec<Option<f64>>,
    pub binary: Vec<bool>,
    pub categorical: Vec<Option<u32>>,
    /// ICU admission, mechanical ventilation, AKI, in-hospital mortality.
    pub outcomes: [bool; N_OUTCOMES],
}

/// Column names of the raw feature blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub continuous: Vec<String>,
    pub binary: Vec<String>,
    pub categorical: Vec<String>,
}

impl Schema {
    pub fn from_generator(cfg: &GeneratorConfig) -> Self {
        Self { continuous: cfg.continuous_names(), binary: cfg.binary_names(), categorical: cfg.categorical_names() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub site: String,
    pub schema: Schema,
    pub records: Vec<EncounterRecord>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Fraction of records positive for each outcome.
    pub fn prevalence(&self) -> [f64; N_OUTCOMES] {
        let mut out = [0.0; N_OUTCOMES];
        if self.records.is_empty() {
            return out;
        }
        for r in &self.records {
            for (o, &y) in r.outcomes.iter().enumerate() {
                if y {
                    out[o] += 1.0;
                }
            }
        }
        out.map(|c| c / self.records.len() as f64)
    }

    /// Same site and schema with a different set of records.
    pub fn with_records(&self, records: Vec<EncounterRecord>) -> Cohort {
        Cohort { site: self.site.clone(), schema: self.schema.clone(), records }
    }
}

/// Encounters removed by each criterion, checked in this order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionCounts {
    pub under_18: usize,
    pub esrd: usize,
    pub no_surgery: usize,
    pub retained: usize,
}

impl ExclusionCounts {
    pub fn total(&self) -> usize {
        self.under_18 + self.esrd + self.no_surgery + self.retained
    }
}

/// Drops minors, end-stage renal disease and admissions without surgery.
pub fn apply_exclusions(raw: Vec<EncounterRecord>) -> (Vec<EncounterRecord>, ExclusionCounts) {
    let mut counts = ExclusionCounts::default();
    let kept: Vec<_> = raw
        .into_iter()
        .filter(|r| {
            if r.age < 18.0 {
                counts.under_18 += 1;
            } else if r.esrd {
                counts.esrd += 1;
            } else if r.surgeries.is_empty() {
                counts.no_surgery += 1;
            } else {
                return true;
            }
            false
        })
        .collect();
    counts.retained = kept.len();
    (kept, counts)
}

/// The surgery with the most work units; ties go to the earliest date, then
/// the lowest procedure code.
pub fn index_surgery(surgeries: &[Surgery]) -> Option<&Surgery> {
    surgeries.iter().min_by(|a, b| {
        b.work_units.total_cmp(&a.work_units).then(a.date.cmp(&b.date)).then(a.procedure_code.cmp(&b.procedure_code))
    })
}

/// Keeps only the index surgery of an encounter.
pub fn select_index_surgery(mut encounter: EncounterRecord) -> Result<EncounterRecord> {
    let best = index_surgery(&encounter.surgeries)
        .cloned()
        .ok_or_else(|| Error::Contract(format!("encounter {} has no surgery", encounter.encounter_id)))?;
    encounter.surgeries = vec![best];
    Ok(encounter)
}

/// Blanks continuous then categorical values independently at the given
/// per-feature rates. Labels, binary flags, age and dates are untouched.
pub fn inject_missingness(mut cohort: Cohort, rates: &Rates, seed: u64) -> Result<Cohort> {
    let nc = cohort.schema.continuous.len();
    let nk = cohort.schema.categorical.len();
    let rates = rates.resolve(nc + nk)?;
    let mut rng = rng::stream(seed, &[rng::label_key("missingness"), rng::label_key(&cohort.site)]);
    for r in &mut cohort.records {
        for (v, &rate) in r.continuous.iter_mut().zip(&rates[..nc]) {
            if rate > 0.0 && rng.random::<f64>() < rate {
                *v = None;
            }
        }
        for (v, &rate) in r.categorical.iter_mut().zip(&rates[nc..]) {
            if rate > 0.0 && rng.random::<f64>() < rate {
                *v = None;
            }
        }
    }
    Ok(cohort)
}

#[cfg(test)]
mod tests;
