use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};

/// Train/validation/test fractions of encounters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { fractions: [0.6, 0.1, 0.3] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Cohort,
    pub validation: Cohort,
    pub test: Cohort,
}

/// Index `k` in `range` whose cumulative fraction is closest to `target`
/// (earliest on ties).
fn closest(cum: &[usize], total: usize, target: f64, range: std::ops::RangeInclusive<usize>) -> usize {
    let mut best = (*range.start(), f64::INFINITY);
    for k in range {
        let d = (cum[k] as f64 / total as f64 - target).abs();
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// Splits by patient in order of first admission (ties by patient id), so
/// that all of a patient's encounters land in one cohort and cumulative
/// encounter fractions are as close as possible to the requested fractions.
pub fn chronological_split(cohort: &Cohort, spec: &SplitSpec) -> Result<Split> {
    let [a, b, c] = spec.fractions;
    if a <= 0.0 || b <= 0.0 || c <= 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("fractions {:?} must be positive and sum to 1", spec.fractions)));
    }
    let mut patients: BTreeMap<u64, (NaiveDate, usize)> = BTreeMap::new();
    for r in &cohort.records {
        let e = patients.entry(r.patient_id).or_insert((r.admission_date, 0));
        e.0 = e.0.min(r.admission_date);
        e.1 += 1;
    }
    if patients.len() < 3 {
        return Err(Error::Split(format!("{}: {} patients cannot fill three cohorts", cohort.site, patients.len())));
    }
    let mut order: Vec<(NaiveDate, u64, usize)> = patients.into_iter().map(|(id, (d, n))| (d, id, n)).collect();
    order.sort();
    let p = order.len();
    let mut cum = vec![0usize; p + 1];
    for (k, (_, _, n)) in order.iter().enumerate() {
        cum[k + 1] = cum[k] + n;
    }
    let total = cum[p];
    let k1 = closest(&cum, total, a, 1..=p - 2);
    let k2 = closest(&cum, total, a + b, k1 + 1..=p - 1);
    let part: BTreeMap<u64, usize> = order
        .iter()
        .enumerate()
        .map(|(k, (_, id, _))| {
            (
                *id,
                if k < k1 {
                    0
                } else if k < k2 {
                    1
                } else {
                    2
                },
            )
        })
        .collect();
    let mut buckets: [Vec<_>; 3] = Default::default();
    for r in &cohort.records {
        buckets[part[&r.patient_id]].push(r.clone());
    }
    let [train, validation, test] = buckets;
    Ok(Split {
        train: cohort.with_records(train),
        validation: cohort.with_records(validation),
        test: cohort.with_records(test),
    })
}
