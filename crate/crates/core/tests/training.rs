mod common;

use common::{random_examples, tiny_architecture};
use proptest::prelude::*;
use ser_core::model::SerModel;
use ser_core::optim::*;
use ser_core::tensor::Tensor;

fn config(epochs: usize, batch_size: usize, seed: u64) -> TrainingConfig {
    TrainingConfig {
        epochs,
        batch_size,
        seed,
        lr: 1e-3,
        shuffle: true,
    }
}

#[test]
fn same_seed_same_bits() {
    let arch = tiny_architecture();
    let data = random_examples(&arch, 10, 1);
    let run = || {
        let (m, h) = train(SerModel::build(arch.clone(), 4), &data, &config(3, 4, 4)).unwrap();
        (m.to_bytes().unwrap(), h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    let (c, _) = train(SerModel::build(arch.clone(), 4), &data, &config(3, 4, 5)).unwrap();
    assert_ne!(c.to_bytes().unwrap(), a);
}

#[test]
fn history_has_one_record_per_epoch() {
    let arch = tiny_architecture();
    let data = random_examples(&arch, 7, 2);
    let (_, h) = train(SerModel::build(arch, 0), &data, &config(4, 3, 0)).unwrap();
    assert_eq!(h.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    let text = h.to_text();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("epoch,train_loss,train_acc\n1,"));
    // accuracy is a multiple of 1/7 because the short final batch is kept
    for r in &h.records {
        assert!(((r.train_acc * 7.0) - (r.train_acc * 7.0).round()).abs() < 1e-9);
    }
}

#[test]
fn invalid_configs() {
    let arch = tiny_architecture();
    let data = random_examples(&arch, 2, 0);
    let m = || SerModel::build(arch.clone(), 0);
    assert!(matches!(
        train(m(), &data, &config(0, 4, 0)),
        Err(TrainError::InvalidConfig(_))
    ));
    assert!(matches!(
        train(m(), &data, &config(1, 0, 0)),
        Err(TrainError::InvalidConfig(_))
    ));
    assert!(matches!(
        train(m(), &[], &config(1, 1, 0)),
        Err(TrainError::EmptyTrainingSet)
    ));
}

/// One epoch with the whole set in one batch is one Adam step, so every
/// parameter moves by `-lr g / (|g| + eps)` for the gradient left on its layer.
#[test]
fn one_epoch_one_step() {
    let arch = tiny_architecture();
    let data = random_examples(&arch, 6, 3);
    let before = SerModel::build(arch, 1);
    let mut after = before.clone();
    let set = TrainingSet::from_examples(&after, &data).unwrap();
    train_on(&mut after, &set, &config(1, 32, 1), None).unwrap();

    let old: Vec<Vec<f32>> = before
        .layers
        .iter()
        .flat_map(|l| l.parameters().into_iter().map(|(_, t)| t.data().to_vec()))
        .collect();
    let mut moved = 0;
    let mut slot = 0;
    for l in after.layers.iter_mut() {
        for (p, g) in l.params_and_grads() {
            for ((&new, &g), &prev) in p.data().iter().zip(g.data()).zip(&old[slot]) {
                let (gf, prev) = (g as f64, prev as f64);
                let want = (prev - 1e-3 * gf / (gf.abs() + 1e-8)) as f32;
                let tol = 2.0 * f32::EPSILON * want.abs().max(1e-6);
                assert!((new - want).abs() <= tol, "slot {slot}: {new} vs {want}");
                if gf.abs() > 1e-6 {
                    assert!((((prev - new as f64).abs()) - 1e-3).abs() < 1e-5);
                    moved += 1;
                }
            }
            slot += 1;
        }
    }
    assert!(moved > 100);
}

#[test]
fn validation_tracks_eval_mode() {
    let arch = tiny_architecture();
    let data = random_examples(&arch, 8, 4);
    let mut m = SerModel::build(arch, 0);
    let set = TrainingSet::from_examples(&m, &data).unwrap();
    let h = train_on(&mut m, &set, &config(2, 8, 0), Some(&set)).unwrap();
    let last = h.final_record().unwrap();
    let (loss, acc) = evaluate_set(&m, &set, 3).unwrap();
    assert_eq!(last.val_acc, Some(acc));
    assert_eq!(last.val_loss, Some(loss));
    assert!(h.to_text().starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n"));
}

#[test]
fn adam_two_step_scalar_trace() {
    let mut p = Tensor::<f64>::new(vec![1], vec![0.5]).unwrap();
    let g = Tensor::<f64>::new(vec![1], vec![0.3]).unwrap();
    let cfg = AdamConfig::default();
    let mut st = AdamState::new(cfg, &[&[1]]);
    let (mut theta, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
    for t in 1..=2 {
        adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        m = 0.9 * m + 0.1 * 0.3;
        v = 0.999 * v + 0.001 * 0.09;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        theta -= 1e-3 * mh / (vh.sqrt() + 1e-8);
        assert!((p.data()[0] - theta).abs() < 1e-12);
    }
    assert_eq!(st.t, 2);
}

#[test]
fn adam_zero_lr_leaves_parameters() {
    let mut p = Tensor::<f32>::new(vec![3], vec![0.1, -2.0, 7.5]).unwrap();
    let orig = p.clone();
    let g = Tensor::<f32>::new(vec![3], vec![1.0, -0.5, 3.0]).unwrap();
    let mut st = AdamState::new(
        AdamConfig {
            lr: 0.0,
            ..Default::default()
        },
        &[&[3]],
    );
    adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
    assert_eq!(p, orig);
    assert!(st.m[0].data().iter().all(|&v| v != 0.0));
}

#[test]
fn metrics() {
    let uniform = Tensor::<f64>::full(&[4, 12], 1.0 / 12.0);
    assert!((cross_entropy(&uniform, &[0, 3, 7, 11]).unwrap() - 12f64.ln()).abs() < 1e-12);
    assert_eq!(categorical_accuracy(&uniform, &[0, 0, 3, 0]), 0.75);

    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for i in 0..180 {
        let mut r = vec![0.0f64; 12];
        r[i % 12] = 1.0;
        rows.extend(r);
        targets.push(if i < 124 { i % 12 } else { (i + 1) % 12 });
    }
    let p = Tensor::new(vec![180, 12], rows).unwrap();
    assert!((categorical_accuracy(&p, &targets) - 124.0 / 180.0).abs() < 1e-15);
    assert_eq!(topk_accuracy(&p, &targets, 12), 1.0);
}

proptest! {
    #[test]
    fn topk_matches_sort_oracle(
        vals in prop::collection::vec(0u8..6, 12 * 5),
        targets in prop::collection::vec(0usize..12, 5),
        k in 1usize..=12,
    ) {
        let p = Tensor::new(vec![5, 12], vals.iter().map(|&v| v as f64).collect()).unwrap();
        let mut hits = 0;
        for (row, &t) in vals.chunks(12).zip(&targets) {
            let mut idx: Vec<usize> = (0..12).collect();
            idx.sort_by_key(|&i| (std::cmp::Reverse(row[i]), i));
            hits += idx[..k].contains(&t) as usize;
        }
        prop_assert_eq!(topk_accuracy(&p, &targets, k), hits as f64 / 5.0);
        if k == 1 {
            prop_assert_eq!(topk_accuracy(&p, &targets, 1), categorical_accuracy(&p, &targets));
        }
    }

    #[test]
    fn cross_entropy_non_negative(vals in prop::collection::vec(-30.0f64..30.0, 12 * 3), t in 0usize..12) {
        let z = Tensor::new(vec![3, 12], vals).unwrap();
        let p = ser_core::nn::softmax(&z).unwrap();
        prop_assert!(cross_entropy(&p, &[t, t, t]).unwrap() >= 0.0);
    }
}
