use chrono::NaiveDate;
use proptest::prelude::*;

use super::*;
use crate::cohort::{Cohort, EncounterRecord, Schema, Surgery};
use crate::error::Error;

fn day(n: u64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2015, 1, 1).unwrap() + chrono::Days::new(n)
}

fn rec(patient: u64, encounter: u64, d: u64, cont: Vec<Option<f64>>, cat: Option<u32>) -> EncounterRecord {
    EncounterRecord {
        patient_id: patient,
        encounter_id: encounter,
        admission_date: day(d),
        age: 40.0 + encounter as f64,
        esrd: false,
        surgeries: vec![Surgery { procedure_code: (encounter % 3) as u32, work_units: 5.0, date: day(d) }],
        surgeon_id: Some(1),
        continuous: cont,
        binary: vec![encounter % 2 == 0],
        categorical: vec![cat],
        outcomes: [encounter % 2 == 0, false, true, false],
    }
}

fn schema(nc: usize) -> Schema {
    Schema {
        continuous: (0..nc).map(|j| format!("x{j}")).collect(),
        binary: vec!["f".into()],
        categorical: vec!["k".into()],
    }
}

fn cohort(records: Vec<EncounterRecord>) -> Cohort {
    let nc = records[0].continuous.len();
    Cohort { site: "s".into(), schema: schema(nc), records }
}

fn ids(c: &Cohort) -> Vec<u64> {
    c.records.iter().map(|r| r.patient_id).collect()
}

#[test]
fn ten_patients_split_six_one_three() {
    // dates deliberately out of id order
    let records: Vec<_> = (0..10).map(|i| rec(i, i, (7 * i) % 10, vec![Some(1.0)], Some(1))).collect();
    let s = chronological_split(&cohort(records), &SplitSpec::default()).unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (6, 1, 3));
    let max_train = s.train.records.iter().map(|r| r.admission_date).max().unwrap();
    let min_val = s.validation.records.iter().map(|r| r.admission_date).min().unwrap();
    let max_val = s.validation.records.iter().map(|r| r.admission_date).max().unwrap();
    let min_test = s.test.records.iter().map(|r| r.admission_date).min().unwrap();
    assert!(max_train <= min_val && max_val <= min_test);
}

#[test]
fn patient_encounters_stay_together() {
    let mut records: Vec<_> = (0..10).map(|i| rec(i, i, i, vec![Some(1.0)], None)).collect();
    // patient 5 returns much later, past the train boundary date
    records.push(rec(5, 100, 50, vec![Some(1.0)], None));
    let s = chronological_split(&cohort(records), &SplitSpec::default()).unwrap();
    let holders: Vec<_> = [&s.train, &s.validation, &s.test].iter().map(|c| ids(c).contains(&5)).collect();
    assert_eq!(holders.iter().filter(|&&h| h).count(), 1);
    let train = ids(&s.train);
    assert_eq!(train.iter().filter(|&&p| p == 5).count(), if train.contains(&5) { 2 } else { 0 });
}

#[test]
fn split_needs_three_patients() {
    let records = vec![
        rec(1, 1, 0, vec![Some(1.0)], None),
        rec(2, 2, 1, vec![Some(1.0)], None),
        rec(2, 3, 2, vec![Some(1.0)], None),
    ];
    assert!(matches!(chronological_split(&cohort(records), &SplitSpec::default()), Err(Error::Split(_))));
}

fn numbered(n: usize) -> Cohort {
    cohort((1..=n as u64).map(|i| rec(i, i, i, vec![Some(i as f64)], Some(i as u32 % 4))).collect())
}

#[test]
fn percentiles_follow_linear_interpolation() {
    let pp = fit_preprocessor(&numbered(100), &FitOptions::default()).unwrap();
    let x = &pp.continuous[1];
    assert!((x.clip_low - 1.99).abs() < 1e-12);
    assert!((x.clip_high - 99.01).abs() < 1e-12);
    assert!((x.median - 50.5).abs() < 1e-12);
    // sort-based oracle: position h = (n-1)q between neighbours
    let v: Vec<f64> = (1..=100).map(f64::from).collect();
    for q in [0.01f64, 0.25, 0.5, 0.99] {
        let h = 99.0 * q;
        let expect = v[h.floor() as usize] + (h - h.floor()) * (v[h.ceil() as usize] - v[h.floor() as usize]);
        assert!((percentile(&v, q) - expect).abs() < 1e-12);
    }
}

#[test]
fn scaler_override_and_constant_feature() {
    let c = numbered(100);
    let opts = FitOptions { scaler_override: Some(vec![(40.0, 140.0), (0.0, 200.0)]), ..Default::default() };
    let pp = fit_preprocessor(&c, &opts).unwrap();
    let m = pp.transform(&c).unwrap();
    let max = (0..m.len()).map(|r| m.continuous[r * 2 + 1]).fold(0.0, f64::max);
    // the top value is clipped to the 99th percentile before scaling
    assert!((max - 99.01 / 200.0).abs() < 1e-12);

    let flat = cohort((1..=20).map(|i| rec(i, i, i, vec![Some(3.0)], None)).collect());
    let m = fit_preprocessor(&flat, &FitOptions::default()).unwrap().transform(&flat).unwrap();
    assert!((0..m.len()).all(|r| m.continuous[r * 2 + 1] == 0.0));
}

#[test]
fn transform_rules() {
    let train = numbered(100);
    let pp = fit_preprocessor(&train, &FitOptions::default()).unwrap();
    let x = pp.continuous[1].clone();
    let probe = cohort(vec![
        rec(1, 1, 0, vec![None], Some(99)),
        rec(2, 2, 0, vec![Some(1000.0)], None),
        rec(3, 3, 0, vec![Some(-5.0)], Some(2)),
    ]);
    let m = pp.transform(&probe).unwrap();
    let scaled = |v: f64| (v - x.scale_min) / (x.scale_max - x.scale_min);
    assert!((m.continuous[1] - scaled(x.median)).abs() < 1e-15);
    assert_eq!(m.continuous[3], 1.0);
    assert_eq!(m.continuous[5], 0.0);
    assert_eq!(m.high_card[1], vec![0, 0, pp.categorical[1].lookup(Some(2))]);
    assert!(m.high_card[1][2] > 0);
    assert_eq!(m.labels[..4], [0.0, 0.0, 1.0, 0.0]);
}

#[test]
fn all_missing_feature_is_named() {
    let c = cohort((1..=5).map(|i| rec(i, i, i, vec![Some(1.0), None], None)).collect());
    match fit_preprocessor(&c, &FitOptions::default()) {
        Err(Error::MissingFeature(msg)) => assert!(msg.contains("x1")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn hard_bounds_drop_implausible_values() {
    let mut c = numbered(100);
    c.records[0].continuous[0] = Some(-1e6);
    let opts = FitOptions { hard_bounds: [("x0".to_string(), (0.0, 1e3))].into_iter().collect(), ..Default::default() };
    let pp = fit_preprocessor(&c, &opts).unwrap();
    assert!(pp.continuous[1].clip_low > 0.0);
    let m = pp.transform(&c).unwrap();
    let median_scaled = pp.continuous[1].apply(None);
    assert_eq!(m.continuous[1], median_scaled);
}

#[test]
fn merge_scaler_cases() {
    let a = vec![(0.0, 1.0)];
    assert_eq!(merge_scaler_stats(std::slice::from_ref(&a)).unwrap(), a);
    assert_eq!(merge_scaler_stats(&[a.clone(), vec![(-1.0, 2.0)]]).unwrap(), vec![(-1.0, 2.0)]);
    assert!(merge_scaler_stats(&[a, vec![(0.0, 1.0), (0.0, 1.0)]]).is_err());
    assert!(merge_scaler_stats(&[]).is_err());
}

#[test]
fn shared_scaler_equals_pooled_clipped_minmax() {
    let mut rng = crate::rng::stream(5, &[]);
    use rand::Rng;
    let sites: Vec<Cohort> = (0..3)
        .map(|s| {
            cohort(
                (1..=200u64)
                    .map(|i| {
                        let shift = s as f64 * 3.0;
                        rec(i, i, i, vec![Some(shift + rng.random::<f64>() * 10.0), Some(rng.random::<f64>())], None)
                    })
                    .collect(),
            )
        })
        .collect();
    let local: Vec<Preprocessor> = sites.iter().map(|c| fit_preprocessor(c, &FitOptions::default()).unwrap()).collect();
    let merged = merge_scaler_stats(&local.iter().map(Preprocessor::scaler_stats).collect::<Vec<_>>()).unwrap();
    // pooled oracle: min/max over every site's clipped training values
    let n_feat = local[0].continuous.len();
    let mut pooled = vec![(f64::INFINITY, f64::NEG_INFINITY); n_feat];
    for (c, pp) in sites.iter().zip(&local) {
        for r in &c.records {
            for (j, st) in pp.continuous.iter().enumerate() {
                let v = if j == 0 { Some(r.age) } else { r.continuous[j - 1] };
                if let Some(v) = v {
                    let v = v.clamp(st.clip_low, st.clip_high);
                    pooled[j].0 = pooled[j].0.min(v);
                    pooled[j].1 = pooled[j].1.max(v);
                }
            }
        }
    }
    for (c, pp) in sites.iter().zip(&local) {
        let a = pp.with_scaler(&merged).unwrap().transform(c).unwrap();
        let b = pp.with_scaler(&pooled).unwrap().transform(c).unwrap();
        for (x, y) in a.continuous.iter().zip(&b.continuous) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn fitting_ignores_held_out_rows() {
    let c = numbered(60);
    let s = chronological_split(&c, &SplitSpec::default()).unwrap();
    let before = fit_preprocessor(&s.train, &FitOptions::default()).unwrap();
    let mut s2 = s.clone();
    for r in s2.test.records.iter_mut().chain(s2.validation.records.iter_mut()) {
        r.continuous[0] = Some(-1e9);
    }
    assert_eq!(fit_preprocessor(&s2.train, &FitOptions::default()).unwrap(), before);
}

#[test]
fn artifact_round_trip() {
    let opts = FitOptions {
        catalog: Some(vec![3, 4]),
        hard_bounds: [("x0".to_string(), (0.0, 1e3))].into_iter().collect(),
        ..Default::default()
    };
    let pp = fit_preprocessor(&numbered(50), &opts).unwrap();
    let text = pp.to_text();
    assert!(text.starts_with("fedrisk-preprocessor v1\n"));
    assert_eq!(Preprocessor::from_text(&text).unwrap(), pp);
    assert!(Preprocessor::from_text("garbage").is_err());
    assert_eq!(pp.vocab_sizes(), vec![4, 5]);
}

proptest! {
    #[test]
    fn transformed_values_are_in_range(
        train in proptest::collection::vec((proptest::option::of(-1e3f64..1e3), proptest::option::of(0u32..6)), 3..40),
        probe in proptest::collection::vec((proptest::option::of(-1e4f64..1e4), proptest::option::of(0u32..9)), 1..20),
    ) {
        let mk = |rows: &[(Option<f64>, Option<u32>)]| cohort(
            rows.iter().enumerate().map(|(i, (v, k))| rec(i as u64, i as u64, i as u64, vec![*v], *k)).collect(),
        );
        let mut train_rows = train.clone();
        train_rows[0].0 = Some(0.5);
        let pp = fit_preprocessor(&mk(&train_rows), &FitOptions::default()).unwrap();
        let m = pp.transform(&mk(&probe)).unwrap();
        prop_assert!(m.continuous.iter().all(|v| (0.0..=1.0).contains(v)));
        for (col, map) in m.high_card.iter().zip(&pp.categorical) {
            prop_assert!(col.iter().all(|&i| i < map.vocab));
        }
    }
}
