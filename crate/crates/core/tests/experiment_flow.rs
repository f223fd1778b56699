use std::fs;
use std::path::Path;

use fedrisk::experiment::{
    compare_pair, compare_report, evaluate_all, generate_cohorts, model_names, rows_from_scores, train_all,
    ExperimentConfig, RunKind, ScoreFile, TrainedModel, Transport,
};
use fedrisk::metrics::{auroc, MetricReport};
use fedrisk::model::OUTCOME_NAMES;

fn tiny_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::example(dir, 350);
    cfg.model.embed_dim = 3;
    cfg.model.branch_hidden = 8;
    cfg.model.merge_hidden = 12;
    for t in [&mut cfg.training.local, &mut cfg.training.central, &mut cfg.training.federated] {
        t.rounds = 3;
        t.lr = 0.1;
        t.batch_size = 32;
    }
    cfg.personalize.train.rounds = 3;
    cfg.evaluation.n_boot = 40;
    cfg.runs = vec![RunKind::Local, RunKind::Central, RunKind::FedAvg, RunKind::Scaffold, RunKind::Personalized];
    cfg
}

fn run_all(cfg: &ExperimentConfig) -> MetricReport {
    generate_cohorts(cfg).unwrap();
    train_all(cfg).unwrap();
    evaluate_all(cfg).unwrap()
}

#[test]
fn pipeline_is_deterministic_and_auditable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_a = tiny_config(a.path());
    let cfg_b = tiny_config(b.path());
    let report = run_all(&cfg_a);
    let again = run_all(&cfg_b);

    // identical inputs give identical artifacts
    assert_eq!(report, again);
    for (s, _) in cfg_a.sites() {
        assert_eq!(
            fs::read(cfg_a.cohort_path(&s.site_name)).unwrap(),
            fs::read(cfg_b.cohort_path(&s.site_name)).unwrap()
        );
    }
    assert_eq!(
        fs::read(cfg_a.model_dir("scaffold").join("history.csv")).unwrap(),
        fs::read(cfg_b.model_dir("scaffold").join("history.csv")).unwrap()
    );

    // five cohort files plus a manifest
    let files: Vec<_> = fs::read_dir(cfg_a.cohort_dir()).unwrap().collect();
    assert_eq!(files.len(), 6);

    // cardinality: personalized models are scored at their own site only
    let names = model_names(&cfg_a);
    assert_eq!(names.len(), 3 + 1 + 2 + 3);
    let shared = 3 + 1 + 2;
    assert_eq!(report.rows.len(), (shared * 5 + 3) * 4);

    for row in &report.rows {
        for est in
            [&row.auroc, &row.auprc, &row.sensitivity, &row.specificity, &row.ppv, &row.npv].into_iter().flatten()
        {
            assert!(est.ci_low <= est.point && est.point <= est.ci_high, "{row:?}");
        }
    }

    // every AUROC is recomputable from the persisted score file
    for name in ["local_partner3", "central", "scaffold"] {
        for (s, _) in cfg_a.sites() {
            let file = ScoreFile::load(&cfg_a.score_path(name, &s.site_name)).unwrap();
            for (o, outcome) in OUTCOME_NAMES.iter().enumerate() {
                let (scores, labels) = file.outcome(o);
                let row = report.find(name, &s.site_name, outcome).unwrap();
                assert_eq!(row.n_total, scores.len());
                match (&row.auroc, auroc(&scores, &labels)) {
                    (Some(e), Ok(v)) => assert!((e.point - v).abs() < 1e-12),
                    (None, Err(_)) => {}
                    (r, v) => panic!("{name}/{}/{outcome}: {r:?} vs {v:?}", s.site_name),
                }
                let thresholds = [row.threshold; 4];
                let again = rows_from_scores(&cfg_a, name, &s.site_name, &file, &thresholds).unwrap();
                assert_eq!(again[o], *row);
            }
        }
    }

    // a model compared with itself has zero delta
    for outcome in OUTCOME_NAMES {
        if let Some(c) = compare_pair(&report, "self", "fedavg", "fedavg", "partner3", outcome).unwrap() {
            assert_eq!(c.delta, 0.0);
        }
    }
    let cmp = compare_report(&cfg_a, &report).unwrap();
    assert!(cmp.iter().any(|c| c.comparison == "scaffold_vs_fedavg"));
    for c in &cmp {
        let a = report.find(&c.model, &c.site, &c.outcome).unwrap().auroc.unwrap().point;
        let b = report.find(&c.reference, &c.site, &c.outcome).unwrap().auroc.unwrap().point;
        assert_eq!(c.delta, a - b);
    }

    // personalized backbones are the federated model, bit for bit
    let base = TrainedModel::load(&cfg_a, "scaffold").unwrap();
    let pers = TrainedModel::load(&cfg_a, "personalized_partner4").unwrap();
    assert_eq!(pers.params.digest(), base.params.digest());
}

#[test]
fn direct_and_wire_federations_agree_closely() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.runs = vec![RunKind::FedAvg];
    generate_cohorts(&cfg).unwrap();
    let wire = train_all(&cfg).unwrap().remove(0);
    cfg.training.transport = Transport::Direct;
    let direct = train_all(&cfg).unwrap().remove(0);
    let d = wire.params.max_abs_diff(&direct.params).unwrap();
    assert!(d < 1e-4, "{d}");
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = tiny_config(Path::new("/tmp/somewhere"));
    let text = cfg.to_toml().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
}

#[test]
fn config_rejects_duplicate_sites_and_unknown_keys() {
    let mut cfg = tiny_config(Path::new("/tmp/x"));
    cfg.external[0].site_name = "partner3".into();
    assert!(cfg.validate().is_err());
    let text = tiny_config(Path::new("/tmp/x")).to_toml().unwrap() + "\nbogus = 1\n";
    assert!(ExperimentConfig::from_toml(&text).is_err());
}

#[test]
fn training_without_cohorts_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let err = train_all(&tiny_config(dir.path())).unwrap_err().to_string();
    assert!(err.contains("partner3.csv"), "{err}");
}
