use super::*;
use crate::fed::TrainConfig;
use crate::pipeline::FeatureMatrix;

fn tiny_arch() -> ArchConfig {
    ArchConfig {
        n_continuous: 3,
        n_binary: 2,
        high_card: vec![HighCardSpec { vocab: 5, embed_dim: 2 }, HighCardSpec { vocab: 4, embed_dim: 3 }],
        branch_hidden: 4,
        merge_hidden: 5,
    }
}

fn default_arch() -> ArchConfig {
    ArchConfig {
        n_continuous: 60,
        n_binary: 30,
        high_card: vec![HighCardSpec { vocab: 50, embed_dim: DEFAULT_EMBED_DIM }; 9],
        branch_hidden: 32,
        merge_hidden: 64,
    }
}

fn sigmoid64(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn init_is_deterministic_with_zero_biases_and_glorot_bounds() {
    let arch = default_arch();
    let a: ModelParams<f64> = init_model(&arch, 11).unwrap();
    let b: ModelParams<f64> = init_model(&arch, 11).unwrap();
    let c: ModelParams<f64> = init_model(&arch, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.num_scalars(), arch.param_count());
    for (name, t) in a.iter() {
        if t.shape().len() == 1 {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name} bias not zero");
        } else {
            let bound = glorot_bound(t.shape()[0], t.shape()[1]);
            assert!(t.data().iter().all(|v| v.abs() <= bound), "{name} outside ±{bound}");
        }
    }
    let merge = a.expect("merge.w");
    assert_eq!(merge.shape(), &[96, 64]);
    assert!((glorot_bound(96, 64) - (6.0f64 / 160.0).sqrt()).abs() < 1e-15);
}

#[test]
fn zero_weights_give_half_probabilities() {
    let arch = tiny_arch();
    let p: ModelParams<f64> = init_model::<f64>(&arch, 0).unwrap().zeros_like();
    let data = FeatureMatrix::random(&arch, 7, 1);
    let probs = forward(&p, &data.full_batch()).unwrap();
    assert_eq!(probs.shape(), &[7, 4]);
    assert!(probs.data().iter().all(|&v| v == 0.5));
}

#[test]
fn forward_matches_hand_unrolled_row() {
    let arch = tiny_arch();
    let p: ModelParams<f64> = init_model(&arch, 5).unwrap();
    // nonzero biases so they are exercised
    let p = p.map(|v| if v == 0.0 { 0.05 } else { v });
    let data = FeatureMatrix::random(&arch, 3, 2);
    let probs = forward(&p, &data.full_batch()).unwrap();

    let dense = |x: &[f64], w: &str, b: &str| -> Vec<f64> {
        let (w, b) = (p.expect(w), p.expect(b));
        let (fi, fo) = (w.shape()[0], w.shape()[1]);
        (0..fo)
            .map(|j| {
                let mut s = b.data()[j];
                for i in 0..fi {
                    s += x[i] * w.data()[i * fo + j];
                }
                s
            })
            .collect()
    };
    let relu_v = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
    for r in 0..3 {
        let hc = relu_v(dense(&data.continuous[r * 3..r * 3 + 3], "cont.w", "cont.b"));
        let hb = relu_v(dense(&data.binary[r * 2..r * 2 + 2], "bin.w", "bin.b"));
        let mut e = Vec::new();
        for (i, col) in data.high_card.iter().enumerate() {
            let t = p.expect(&format!("emb.{i}"));
            let d = t.shape()[1];
            e.extend_from_slice(&t.data()[col[r] * d..(col[r] + 1) * d]);
        }
        let he = relu_v(dense(&e, "hc.w", "hc.b"));
        let joined: Vec<f64> = hc.into_iter().chain(hb).chain(he).collect();
        let m = relu_v(dense(&joined, "merge.w", "merge.b"));
        for o in 0..4 {
            let z = dense(&m, &format!("head.{o}.w"), &format!("head.{o}.b"))[0];
            assert!((probs.get2(r, o) - sigmoid64(z)).abs() < 1e-14);
        }
    }
}

#[test]
fn out_of_range_category_is_index_error() {
    let arch = tiny_arch();
    let p: ModelParams<f64> = init_model(&arch, 0).unwrap();
    let mut data = FeatureMatrix::random(&arch, 2, 0);
    data.high_card[1][0] = 4;
    assert!(matches!(forward(&p, &data.full_batch()), Err(Error::Index { .. })));
}

#[test]
fn multitask_loss_cases() {
    let half = Tensor::<f64>::full(&[3, 4], 0.5);
    let labels =
        Tensor::<f64>::new(vec![3, 4], vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    let l: f64 = multitask_loss(&half, &labels).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

    let l: f64 = multitask_loss(&labels, &labels).unwrap();
    assert!(l < 1e-6);

    let probs =
        Tensor::<f64>::new(vec![3, 4], vec![0.2, 0.7, 0.9, 0.1, 0.4, 0.3, 0.6, 0.8, 0.55, 0.65, 0.25, 0.05]).unwrap();
    let mut expect = 0.0;
    for o in 0..4 {
        let mut s = 0.0;
        for r in 0..3 {
            let (p, y) = (probs.get2(r, o), labels.get2(r, o));
            s -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        expect += s / 3.0 / 4.0;
    }
    assert!((multitask_loss(&probs, &labels).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn tape_loss_agrees_with_direct_loss() {
    let arch = tiny_arch();
    let p: ModelParams<f64> = init_model(&arch, 3).unwrap();
    let data = FeatureMatrix::random(&arch, 20, 3);
    let batch = data.full_batch();
    let (l, _) = loss_and_grads(&p, &batch, &EQUAL_OUTCOME_WEIGHTS, None).unwrap();
    let direct = multitask_loss(&forward(&p, &batch).unwrap(), &batch.labels).unwrap();
    assert!((l - direct).abs() < 1e-14);
}

/// Max relative error between the tape gradient and central differences.
fn grad_check_error(seed: u64) -> f64 {
    let arch = tiny_arch();
    let p: ModelParams<f64> = init_model(&arch, seed).unwrap();
    let p = p.map(|v| if v == 0.0 { 0.01 } else { v });
    let data = FeatureMatrix::random(&arch, 16, seed + 100);
    let batch = data.full_batch();
    let (_, g) = loss_and_grads(&p, &batch, &EQUAL_OUTCOME_WEIGHTS, None).unwrap();
    let flat = p.flatten();
    let analytic = g.flatten();
    let h = 1e-5;
    let loss_at =
        |v: &[f64]| multitask_loss(&forward(&p.unflatten(v).unwrap(), &batch).unwrap(), &batch.labels).unwrap();
    let mut worst: f64 = 0.0;
    let mut buf = flat.clone();
    for i in 0..flat.len() {
        buf[i] = flat[i] + h;
        let up = loss_at(&buf);
        buf[i] = flat[i] - h;
        let down = loss_at(&buf);
        buf[i] = flat[i];
        let fd = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((analytic[i] - fd).abs() / denom);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..3 {
        let err = grad_check_error(seed);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn heads_are_independent() {
    let arch = tiny_arch();
    let p: ModelParams<f64> = init_model(&arch, 8).unwrap();
    let data = FeatureMatrix::random(&arch, 6, 8);
    let batch = data.full_batch();
    let before = forward(&p, &batch).unwrap();
    let mut q = p.clone();
    for v in q.get_mut("head.2.b").unwrap().data_mut() {
        *v += 0.7;
    }
    let after = forward(&q, &batch).unwrap();
    for r in 0..6 {
        for o in 0..4 {
            if o == 2 {
                assert_ne!(before.get2(r, o), after.get2(r, o));
            } else {
                assert_eq!(before.get2(r, o), after.get2(r, o));
            }
        }
    }
}

fn cfg(lr: f64, batch_size: usize) -> TrainConfig {
    TrainConfig { lr, batch_size, local_epochs: 1, seed: 4, ..TrainConfig::default() }
}

#[test]
fn local_train_edge_cases() {
    let arch = tiny_arch();
    let p: ModelParams<f64> = init_model(&arch, 1).unwrap();
    let data = FeatureMatrix::random(&arch, 30, 1);

    let frozen = local_train(&p, &data, &cfg(0.0, 8), None).unwrap();
    assert_eq!(frozen.params, p);
    assert_eq!(frozen.steps, 4);

    let plain = local_train(&p, &data, &cfg(0.1, 8), None).unwrap();
    let anchor = p.map(|v| v + 1.0);
    let mu0 = local_train(&p, &data, &cfg(0.1, 8), Some((0.0, &anchor))).unwrap();
    assert_eq!(plain.params, mu0.params);

    let empty = data.select(&[]);
    assert!(matches!(local_train(&p, &empty, &cfg(0.1, 8), None), Err(Error::EmptyData(_))));
}

#[test]
fn full_batch_step_is_gradient_descent() {
    let arch = tiny_arch();
    let p: ModelParams<f64> = init_model(&arch, 2).unwrap();
    let data = FeatureMatrix::random(&arch, 25, 2);
    let out = local_train(&p, &data, &cfg(0.05, 1000), None).unwrap();
    assert_eq!(out.steps, 1);
    // Shuffling does not matter for a full batch loss that is a mean.
    let (_, g) = loss_and_grads(&p, &data.full_batch(), &EQUAL_OUTCOME_WEIGHTS, None).unwrap();
    let expect = p.zip_with(&g, |w, gi| w - 0.05 * gi).unwrap();
    assert!(out.params.max_abs_diff(&expect).unwrap() < 1e-14);
}

#[test]
fn prox_term_contributes_exactly_its_pull() {
    let arch = tiny_arch();
    let p: ModelParams<f64> = init_model(&arch, 6).unwrap();
    let anchor: ModelParams<f64> = init_model(&arch, 7).unwrap();
    let data = FeatureMatrix::random(&arch, 10, 6);
    let (lr, mu) = (0.1, 0.3);
    let with = local_train(&p, &data, &cfg(lr, 100), Some((mu, &anchor))).unwrap();
    let without = local_train(&p, &data, &cfg(lr, 100), None).unwrap();
    let diff = with.params.sub(&without.params).unwrap();
    let expect = p.sub(&anchor).unwrap().scale(-lr * mu);
    assert!(diff.max_abs_diff(&expect).unwrap() < 1e-13);
}

#[test]
fn training_reduces_loss() {
    let arch = tiny_arch();
    let p: ModelParams<f64> = init_model(&arch, 9).unwrap();
    let data = FeatureMatrix::random(&arch, 200, 9);
    let batch = data.full_batch();
    let before = multitask_loss(&forward(&p, &batch).unwrap(), &batch.labels).unwrap();
    let trained = local_train(&p, &data, &TrainConfig { local_epochs: 20, ..cfg(0.1, 32) }, None).unwrap();
    let after = multitask_loss(&forward(&trained.params, &batch).unwrap(), &batch.labels).unwrap();
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn f32_and_f64_models_agree_roughly() {
    let arch = tiny_arch();
    let p64: ModelParams<f64> = init_model(&arch, 3).unwrap();
    let p32: ModelParams<f32> = p64.cast();
    let data = FeatureMatrix::random(&arch, 5, 3);
    let a = forward(&p64, &data.full_batch()).unwrap();
    let b = forward(&p32, &data.full_batch()).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - *y as f64).abs() < 1e-5);
    }
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let arch = tiny_arch();
    let p: ModelParams<f64> = init_model(&arch, 1).unwrap();
    write_checkpoint(&path, &arch, &p).unwrap();
    let (arch2, q) = read_checkpoint::<f64>(&path).unwrap();
    assert_eq!(arch2, arch);
    assert_eq!(q, p);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(read_checkpoint::<f64>(&path).is_err());

    let other = ArchConfig { merge_hidden: 6, ..arch.clone() };
    assert_ne!(arch.fingerprint(), other.fingerprint());
    let wrong: ModelParams<f64> = init_model(&other, 1).unwrap();
    assert!(matches!(arch.check_params(&wrong), Err(Error::Layout(_))));
}
