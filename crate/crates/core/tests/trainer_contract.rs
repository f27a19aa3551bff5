use std::collections::HashSet;

use dclnet_core::model::{Dclnet, Mode};
use dclnet_core::phantom::{generate_phantom, PhantomConfig};
use dclnet_core::trainer::{
    assemble_batch, batch_loss, make_folds, mean_dice, predict_subject, train_prepared, train_step, PreparedSubject,
    Sgd, TrainConfig,
};

fn tiny(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.seed = seed;
    cfg.epochs = 3;
    cfg.model.widths = vec![2, 3, 4, 6, 8];
    cfg
}

fn subjects(dims: [usize; 3], n: usize) -> Vec<PreparedSubject> {
    let cfg = PhantomConfig {
        dims,
        ..Default::default()
    };
    (0..n).map(|i| PreparedSubject::new(generate_phantom(&cfg, i).unwrap())).collect()
}

/// A batch of the slices that carry the most label voxels.
fn busy_batch(s: &PreparedSubject) -> dclnet_core::trainer::Batch {
    let mut ks: Vec<usize> = (0..s.num_slices()).collect();
    let count = |k: usize| -> f32 { s.slice_group(k).precise.channels.iter().flatten().sum() };
    ks.sort_by(|&a, &b| count(b).total_cmp(&count(a)));
    let groups: Vec<_> = ks[..4].iter().map(|&k| (s.slice_group(k), s.t1w_stats, s.fa_stats)).collect();
    assemble_batch(&groups).unwrap()
}

#[test]
fn every_subject_is_validated_exactly_once() {
    let ids: Vec<String> = (0..23).map(|i| format!("sub-{i:03}")).collect();
    for k in [2, 5] {
        let folds = make_folds(&ids, k, 9).unwrap();
        let mut seen = Vec::new();
        for f in &folds {
            let train: HashSet<_> = f.train.iter().collect();
            assert!(f.val.iter().all(|v| !train.contains(v)));
            assert_eq!(f.train.len() + f.val.len(), ids.len());
            seen.extend(f.val.iter().cloned());
        }
        seen.sort();
        assert_eq!(seen, ids);
    }
}

#[test]
fn zero_learning_rate_leaves_weights_alone() {
    let data = subjects([32, 32, 32], 1);
    let cfg = tiny(1);
    let batch = busy_batch(&data[0]);
    let mut net = Dclnet::<f32>::new(cfg.model_config()).unwrap();
    let before = net.params().clone();
    let mut opt = Sgd::new(0.0, cfg.momentum);
    for step in 0..3 {
        train_step(&mut net, &batch, &cfg, &mut opt, step).unwrap();
    }
    for (a, b) in before.entries().iter().zip(net.params().entries()) {
        // BN running statistics are buffers, not optimizer state
        if a.trainable {
            assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
        }
    }
}

#[test]
fn a_few_steps_lower_the_batch_loss() {
    let data = subjects([32, 32, 32], 1);
    let batch = busy_batch(&data[0]);
    let mut gain = 0.0;
    for seed in 0..5 {
        let mut cfg = tiny(seed);
        cfg.model.dropout = 0.0;
        let mut net = Dclnet::<f32>::new(cfg.model_config()).unwrap();
        let before = batch_loss(&net, &batch, &cfg, Mode::Train, 0).unwrap().total;
        let mut opt = Sgd::new(0.01, cfg.momentum);
        for step in 0..10 {
            train_step(&mut net, &batch, &cfg, &mut opt, step).unwrap();
        }
        gain += before - batch_loss(&net, &batch, &cfg, Mode::Train, 0).unwrap().total;
    }
    assert!(gain / 5.0 > 0.0, "mean loss change {}", -gain / 5.0);
}

#[test]
fn single_label_training_has_no_coarse_term() {
    let data = subjects([32, 32, 32], 1);
    let mut cfg = tiny(2);
    cfg.use_dcl = false;
    let net = Dclnet::<f32>::new(cfg.model_config()).unwrap();
    let l = batch_loss(&net, &busy_batch(&data[0]), &cfg, Mode::Train, 0).unwrap();
    assert_eq!(l.coarse, 0.0);
    assert!((l.total - l.dice - l.bce).abs() < 1e-9);
}

#[test]
fn best_epoch_has_the_top_validation_score_and_runs_repeat() {
    let data = subjects([32, 32, 32], 3);
    let cfg = tiny(4);
    let dir = tempfile::tempdir().unwrap();
    let a = train_prepared(&data[..2], &data[2..], &cfg, 0, &dir.path().join("a")).unwrap();
    let b = train_prepared(&data[..2], &data[2..], &cfg, 0, &dir.path().join("b")).unwrap();
    assert_eq!(a.epochs.len(), 3);
    let top = a.epochs.iter().filter_map(|e| e.val_dice).fold(f64::NEG_INFINITY, f64::max);
    if let Some(best) = a.best_val_dice {
        assert_eq!(best, top);
        assert_eq!(a.epochs[a.best_epoch].val_dice, Some(best));
    }
    assert_eq!(a.epochs[0].total.to_bits(), b.epochs[0].total.to_bits());
    assert_eq!(a.epochs, b.epochs);
    let log = std::fs::read_to_string(dir.path().join("a/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn truth_scored_against_itself_is_perfect() {
    let data = subjects([32, 32, 32], 1);
    let truth = &data[0].sample.precise;
    assert_eq!(mean_dice(truth, truth).unwrap(), Some(1.0));
}

#[test]
fn prediction_keeps_geometry_and_thresholds_probabilities() {
    // 36 is not a multiple of 16, so slices get padded and cropped
    let data = subjects([36, 32, 32], 1);
    let s = &data[0].sample;
    let cfg = tiny(5);
    let net = Dclnet::<f32>::new(cfg.model_config()).unwrap();
    let names = s.precise.class_names();
    let p = predict_subject(&net, &s.t1w, &s.fa, names, 0.5).unwrap();
    assert!(p.padded);
    assert_eq!(p.labels.geometry(), s.t1w.geometry());
    for (c, prob) in p.probabilities.iter().enumerate() {
        assert_eq!(prob.geometry(), s.t1w.geometry());
        for (&v, &l) in prob.data().iter().zip(&p.labels.channels()[c]) {
            assert_eq!(l, u8::from(v as f64 >= 0.5));
        }
    }
    let again = predict_subject(&net, &s.t1w, &s.fa, names, 0.5).unwrap();
    for (x, y) in p.probabilities.iter().zip(&again.probabilities) {
        assert_eq!(x.data(), y.data());
    }

    let square = subjects([32, 32, 32], 1);
    let q = &square[0].sample;
    assert!(!predict_subject(&net, &q.t1w, &q.fa, names, 0.5).unwrap().padded);
}
