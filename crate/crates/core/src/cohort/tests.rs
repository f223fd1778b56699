use super::*;
use crate::metrics::mann_whitney_u;

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn record(id: u64, age: f64, esrd: bool, surgeries: Vec<Surgery>) -> EncounterRecord {
    EncounterRecord {
        patient_id: id,
        encounter_id: id,
        admission_date: date(2015, 1, 1),
        age,
        esrd,
        surgeries,
        surgeon_id: Some(1),
        continuous: vec![Some(1.0), Some(2.5)],
        binary: vec![true],
        categorical: vec![Some(3)],
        outcomes: [true, false, false, true],
    }
}

fn surgery(code: u32, wu: f64, d: u32) -> Surgery {
    Surgery { procedure_code: code, work_units: wu, date: date(2015, 1, d) }
}

fn small_world() -> (GroundTruthModel, SiteConfig) {
    let truth = GroundTruthModel::sample(&GeneratorConfig::default(), 7).unwrap();
    (truth, SiteConfig::partner3(3000))
}

#[test]
fn exclusions_count_every_record() {
    let raw = vec![
        record(1, 17.0, false, vec![surgery(1, 1.0, 1)]),
        record(2, 40.0, true, vec![surgery(1, 1.0, 1)]),
        record(3, 40.0, false, vec![]),
        record(4, 18.0, false, vec![surgery(1, 1.0, 1)]),
    ];
    let (kept, c) = apply_exclusions(raw);
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].patient_id, 4);
    assert_eq!((c.under_18, c.esrd, c.no_surgery, c.retained), (1, 1, 1, 1));
    assert_eq!(c.total(), 4);
    let (kept, c) = apply_exclusions(Vec::new());
    assert!(kept.is_empty());
    assert_eq!(c, ExclusionCounts::default());
}

#[test]
fn index_surgery_rules() {
    let one = record(1, 30.0, false, vec![surgery(5, 3.0, 2)]);
    assert_eq!(select_index_surgery(one.clone()).unwrap(), one);

    let r = select_index_surgery(record(1, 30.0, false, vec![surgery(1, 10.0, 1), surgery(2, 20.0, 2)])).unwrap();
    assert_eq!(r.surgeries, vec![surgery(2, 20.0, 2)]);

    let r = select_index_surgery(record(1, 30.0, false, vec![surgery(1, 20.0, 2), surgery(2, 20.0, 1)])).unwrap();
    assert_eq!(r.surgeries, vec![surgery(2, 20.0, 1)]);

    let r = select_index_surgery(record(1, 30.0, false, vec![surgery(9, 20.0, 1), surgery(4, 20.0, 1)])).unwrap();
    assert_eq!(r.surgeries[0].procedure_code, 4);

    assert!(matches!(select_index_surgery(record(1, 30.0, false, vec![])), Err(Error::Contract(_))));
}

fn cohort_of(records: Vec<EncounterRecord>) -> Cohort {
    Cohort {
        site: "s".into(),
        schema: Schema {
            continuous: vec!["a".into(), "b".into()],
            binary: vec!["f".into()],
            categorical: vec!["k".into()],
        },
        records,
    }
}

#[test]
fn missingness_rates() {
    let base = cohort_of((0..2500).map(|i| record(i, 40.0, false, vec![surgery(1, 1.0, 1)])).collect());
    assert_eq!(inject_missingness(base.clone(), &Rates::Uniform(0.0), 1).unwrap(), base);

    let out = inject_missingness(base.clone(), &Rates::Uniform(0.3), 1).unwrap();
    let blanks = out
        .records
        .iter()
        .flat_map(|r| r.continuous.iter().map(Option::is_none).chain(r.categorical.iter().map(Option::is_none)))
        .filter(|&b| b)
        .count();
    // two continuous and one categorical value per record
    let total = 2500 * 3;
    let frac = blanks as f64 / total as f64;
    assert!((0.28..=0.32).contains(&frac), "{frac}");
    for (a, b) in out.records.iter().zip(&base.records) {
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.binary, b.binary);
    }
    assert_eq!(out, inject_missingness(base.clone(), &Rates::Uniform(0.3), 1).unwrap());
    assert!(inject_missingness(base, &Rates::PerFeature(vec![0.1]), 1).is_err());
}

#[test]
fn intercept_calibration_closed_forms() {
    let zeros = vec![0.0; 1000];
    assert!(calibrate_intercept(0.5, &zeros).unwrap().abs() < 1e-9);
    assert!((calibrate_intercept(0.75, &zeros).unwrap() - 3f64.ln()).abs() < 1e-9);
    assert!(matches!(calibrate_intercept(1.0, &zeros), Err(Error::Calibration(_))));
    assert!(matches!(calibrate_intercept(0.5, &[30.0; 10]), Err(Error::Calibration(_))));
}

#[test]
fn generation_is_deterministic_and_calibrated() {
    let (mut truth, cfg) = small_world();
    truth.calibrate_site(&cfg, 3).unwrap();
    let a = generate_site(&cfg, &truth, 11).unwrap();
    let b = generate_site(&cfg, &truth, 11).unwrap();
    assert_eq!(a.cohort, b.cohort);
    assert_eq!(
        a.exclusions.total(),
        a.exclusions.retained + a.exclusions.under_18 + a.exclusions.esrd + a.exclusions.no_surgery
    );
    assert_eq!(a.exclusions.retained, a.cohort.len());
    assert!(a.cohort.records.iter().all(|r| r.surgeries.len() == 1 && r.age >= 18.0 && !r.esrd));
    for r in &a.cohort.records {
        let d = r.surgeries[0].date - r.admission_date;
        assert!((0..=3).contains(&d.num_days()));
    }
    // loose bound at this size; the tight bound is checked at 50k elsewhere
    for (p, t) in a.prevalence.iter().zip(cfg.target_prevalence) {
        assert!((p - t).abs() < 0.03, "{p} vs {t}");
    }
}

#[test]
fn uncalibrated_site_is_rejected() {
    let (truth, cfg) = small_world();
    assert!(matches!(generate_site(&cfg, &truth, 1), Err(Error::Calibration(_))));
}

#[test]
fn sites_are_non_iid() {
    let (mut truth, _) = small_world();
    let a_cfg = SiteConfig {
        covariate_shift: CovariateShift::Magnitude { mean: 0.0, scale: 0.0 },
        ..SiteConfig::partner3(2000)
    };
    let b_cfg = SiteConfig::partner4(2000);
    truth.calibrate_site(&a_cfg, 1).unwrap();
    truth.calibrate_site(&b_cfg, 1).unwrap();
    let a = generate_site(&a_cfg, &truth, 2).unwrap().cohort;
    let b = generate_site(&b_cfg, &truth, 2).unwrap().cohort;
    let column = |c: &Cohort, j: usize| -> Vec<f64> { c.records.iter().filter_map(|r| r.continuous[j]).collect() };
    let best = (1..a.schema.continuous.len())
        .map(|j| mann_whitney_u(&column(&a, j), &column(&b, j)).unwrap().p_two_sided)
        .fold(1.0, f64::min);
    assert!(best < 1e-3, "{best}");
}

#[test]
fn csv_round_trip_is_lossless() {
    let (mut truth, cfg) = small_world();
    let cfg = SiteConfig { n_patients: 300, ..cfg };
    truth.calibrate_site(&cfg, 1).unwrap();
    let cohort = generate_site(&cfg, &truth, 5).unwrap().cohort;
    assert!(cohort.records.iter().any(|r| r.continuous.iter().any(Option::is_none)));
    let mut buf = Vec::new();
    write_cohort_csv(&cohort, &mut buf).unwrap();
    let back = read_cohort_csv(&cohort.site, &cohort.schema, buf.as_slice()).unwrap();
    assert_eq!(back, cohort);
    let text = String::from_utf8(buf).unwrap();
    assert!(text.lines().next().unwrap().ends_with("icu,mv,aki,mortality"));

    let wrong = Schema { binary: vec!["x".into()], ..cohort.schema.clone() };
    assert!(read_cohort_csv("s", &wrong, text.as_bytes()).is_err());
}
