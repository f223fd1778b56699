use super::*;
use crate::model::{forward, init_model, local_train, HighCardSpec};

fn arch() -> ArchConfig {
    ArchConfig {
        n_continuous: 4,
        n_binary: 3,
        high_card: vec![HighCardSpec { vocab: 6, embed_dim: 2 }],
        branch_hidden: 6,
        merge_hidden: 8,
    }
}

/// A briefly trained global model and site data whose labels lean on the
/// surgeon.
fn fixture(n: usize) -> (Params, FeatureMatrix, FeatureMatrix) {
    let a = arch();
    let mut global = init_model::<f64>(&a, 3).unwrap();
    let pre = FeatureMatrix::random(&a, 400, 1);
    global = local_train(&global, &pre, &TrainConfig { lr: 0.2, batch_size: 32, ..TrainConfig::default() }, None)
        .unwrap()
        .params;
    let with_surgeons = |mut m: FeatureMatrix| {
        for r in 0..m.len() {
            let s = m.surgeon_ids[r].unwrap();
            if s < 2 {
                for o in 0..N_OUTCOMES {
                    m.labels[r * N_OUTCOMES + o] = 1.0;
                }
            }
        }
        m
    };
    (global, with_surgeons(FeatureMatrix::random(&a, n, 2)), with_surgeons(FeatureMatrix::random(&a, 300, 4)))
}

#[test]
fn warm_start_reproduces_the_global_model() {
    let (global, train, _) = fixture(200);
    let pm = PersonalizedModel::warm_start(&global, &arch(), 8, 8, 9).unwrap();
    let ours = pm.predict(&train).unwrap();
    let theirs = forward(&global, &train.full_batch::<f64>()).unwrap();
    let gap = ours.data().iter().zip(theirs.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-12, "{gap}");
}

#[test]
fn zero_epochs_leave_predictions_at_the_global_model() {
    let (global, train, val) = fixture(200);
    let cfg = TrainConfig { rounds: 0, ..TrainConfig::default() };
    let res = fine_tune(&global, &arch(), &train, &val, &cfg, &PersonalizeConfig::default()).unwrap();
    assert_eq!(res.best_epoch, 0);
    let ours = res.model.predict(&val).unwrap();
    let theirs = forward(&global, &val.full_batch::<f64>()).unwrap();
    let gap = ours.data().iter().zip(theirs.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-12);
}

#[test]
fn fine_tuning_freezes_backbone_and_does_not_hurt_validation() {
    let (global, train, val) = fixture(600);
    let before = global.digest();
    let cfg = TrainConfig { lr: 0.3, rounds: 15, batch_size: 32, patience: 0, ..TrainConfig::default() };
    let res = fine_tune(&global, &arch(), &train, &val, &cfg, &PersonalizeConfig::default()).unwrap();
    assert_eq!(res.model.backbone.digest(), before);
    assert_eq!(res.model.backbone, global);
    assert!(res.val_loss_after <= res.val_loss_before);
    // surgeon-driven labels are learnable, so the kept model moved
    assert!(res.best_epoch > 0 && res.val_loss_after < res.val_loss_before - 1e-3);
}

#[test]
fn full_batch_training_loss_is_monotone_at_small_lr() {
    let (global, train, val) = fixture(1000);
    let cfg = TrainConfig { lr: 1e-3, rounds: 25, batch_size: 1000, patience: 0, ..TrainConfig::default() };
    let res = fine_tune(&global, &arch(), &train, &val, &cfg, &PersonalizeConfig::default()).unwrap();
    assert_eq!(res.train_loss.len(), 25);
    for w in res.train_loss.windows(2) {
        assert!(w[1] <= w[0], "{w:?}");
    }
}

#[test]
fn unknown_surgeons_use_row_zero() {
    assert_eq!(surgeon_index(None, 5), 0);
    assert_eq!(surgeon_index(Some(3), 5), 4);
    assert_eq!(surgeon_index(Some(4), 5), 0);
    let (global, mut train, _) = fixture(10);
    let pm = PersonalizedModel::warm_start(&global, &arch(), 3, 4, 0).unwrap();
    train.surgeon_ids[0] = None;
    train.surgeon_ids[1] = Some(1_000);
    let p = pm.predict(&train).unwrap();
    assert_eq!(p.shape(), &[10, N_OUTCOMES]);
    assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn zeroed_table_matches_warm_start() {
    let (global, train, _) = fixture(50);
    let mut pm = PersonalizedModel::warm_start(&global, &arch(), 8, 8, 1).unwrap();
    let warm = pm.predict(&train).unwrap();
    let zero = pm.personal.expect(SURGEON_TABLE).map(|_| 0.0);
    *pm.personal.get_mut(SURGEON_TABLE).unwrap() = zero;
    assert_eq!(pm.predict(&train).unwrap(), warm);
}

#[test]
fn missing_surgeon_vocabulary_is_an_error() {
    let (global, mut train, val) = fixture(30);
    train.surgeon_ids.iter_mut().for_each(|s| *s = None);
    let err = fine_tune(&global, &arch(), &train, &val, &TrainConfig::default(), &PersonalizeConfig::default());
    assert!(matches!(err, Err(Error::MissingFeature(_))));
}
