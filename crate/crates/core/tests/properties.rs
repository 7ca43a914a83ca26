use std::collections::HashSet;

use mgeal_core::dataset::{
    apply_scenario, class_frequencies, generate_synthetic, load_csv, split, write_csv, Archive,
    ScenarioSpec, SplitFractions, SyntheticConfig,
};
use mgeal_core::metrics::{aggregate, confusion, macro_f1, micro_f1, per_class_f1, CurvePoint};
use mgeal_core::model::{last_layer_gradient, train};
use mgeal_core::nn::{Activation, Stack};
use mgeal_core::query::{mge_clustering_query, mge_query, mge_scores, random_query};
use mgeal_core::rng;
use mgeal_core::ssl::{byol_loss, ema_update};
use mgeal_core::{ModelParams, MultiLabelVector, Sample, TrainConfig};
use proptest::prelude::*;

fn vec_pair(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_len).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(-10.0..10.0f64, n),
        )
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn label_matrix(rows: usize, c: usize) -> impl Strategy<Value = Vec<Vec<bool>>> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), c), rows)
}

fn archive(seed: u64, size: usize) -> Archive {
    generate_synthetic(&SyntheticConfig {
        num_classes: 4,
        dim: 3,
        size,
        class_priors: vec![0.5, 0.4, 0.3, 0.2],
        cooccurrence: vec![],
        noise_std: 0.4,
        allow_empty_labels: false,
        seed,
    })
    .unwrap()
}

fn pool(seed: u64, n: usize, d: usize, c: usize) -> Vec<Sample> {
    let mut r = rng::stream(seed, 40);
    (0..n)
        .map(|id| Sample {
            id: id * 3 + 1,
            features: (0..d)
                .map(|_| rand::Rng::random_range(&mut r, -2.0..2.0))
                .collect(),
            labels: MultiLabelVector::zeros(c),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn byol_loss_is_two_minus_two_cosine((u, v) in vec_pair(12), a in 0.01..50.0f64, b in 0.01..50.0f64) {
        prop_assume!(norm(&u) > 1e-6 && norm(&v) > 1e-6);
        let cos = u.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() / (norm(&u) * norm(&v));
        let loss = byol_loss(&u, &v).unwrap();
        prop_assert!((loss - (2.0 - 2.0 * cos)).abs() < 1e-9);
        prop_assert!((-1e-12..=4.0 + 1e-12).contains(&loss));
        let su: Vec<f64> = u.iter().map(|x| a * x).collect();
        let sv: Vec<f64> = v.iter().map(|x| b * x).collect();
        prop_assert!((byol_loss(&su, &sv).unwrap() - loss).abs() < 1e-9);
    }

    #[test]
    fn ema_stays_between_endpoints(seed in 0u64..1000, tau in 0.0..=1.0f64) {
        let mut r = rng::stream(seed, 0);
        let online = Stack::init(4, &[3, 2], Activation::Tanh, false, &mut r);
        let target = Stack::init(4, &[3, 2], Activation::Tanh, false, &mut r);
        let mut mixed = target.clone();
        ema_update(&mut mixed, &online, tau).unwrap();
        for ((&m, &t), &o) in mixed.params().zip(target.params()).zip(online.params()) {
            prop_assert!(m >= t.min(o) - 1e-15 && m <= t.max(o) + 1e-15);
        }
    }

    #[test]
    fn f1_is_invariant_to_class_order(
        (preds, truths) in (1usize..6, 1usize..20).prop_flat_map(|(c, n)| (label_matrix(n, c), label_matrix(n, c))),
        rot in 0usize..6,
    ) {
        let mv = |m: &Vec<Vec<bool>>| m.iter().map(|r| MultiLabelVector::new(r.clone())).collect::<Vec<_>>();
        let permute = |m: &Vec<Vec<bool>>| {
            m.iter().map(|r| { let mut r = r.clone(); let k = rot % r.len(); r.rotate_left(k); r }).collect::<Vec<_>>()
        };
        let base = confusion(&mv(&preds), &mv(&truths)).unwrap();
        let rotated = confusion(&mv(&permute(&preds)), &mv(&permute(&truths))).unwrap();
        prop_assert_eq!(micro_f1(&base), micro_f1(&rotated));
        prop_assert!((macro_f1(&base) - macro_f1(&rotated)).abs() < 1e-12);
        let per = per_class_f1(&base);
        let lo = per.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = per.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mac = macro_f1(&base);
        prop_assert!(mac >= lo - 1e-12 && mac <= hi + 1e-12);
        prop_assert!((0.0..=1.0).contains(&micro_f1(&base)));
        for c in &base.per_class {
            prop_assert_eq!(c.total(), preds.len() as u64);
        }
    }

    #[test]
    fn aggregate_ignores_run_order(
        curves in prop::collection::vec(prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 3), 1..6),
        shift in 0usize..6,
    ) {
        let runs: Vec<Vec<CurvePoint>> = curves
            .iter()
            .map(|c| c.iter().enumerate().map(|(t, &(mi, ma))| CurvePoint {
                labeled_count: 10 + 5 * t,
                micro_f1: mi,
                macro_f1: ma,
            }).collect())
            .collect();
        let mut rotated = runs.clone();
        let k = shift % rotated.len();
        rotated.rotate_left(k);
        let a = aggregate(&runs).unwrap();
        prop_assert_eq!(&a, &aggregate(&rotated).unwrap());
        for cp in &a.checkpoints {
            prop_assert!(cp.macro_std >= 0.0 && (0.0..=1.0).contains(&cp.macro_mean));
        }
    }

    #[test]
    fn splits_partition_the_archive(seed in 0u64..500, size in 10usize..120, pool_frac in 0.1..0.8f64) {
        let data = archive(seed, size);
        let val_frac = (1.0 - pool_frac) / 2.0;
        let s = split(&data, SplitFractions::new(pool_frac, val_frac, 1.0 - pool_frac - val_frac), seed).unwrap();
        let ids: Vec<usize> = [&s.pool, &s.val, &s.test].iter().flat_map(|a| a.ids()).collect();
        let unique: HashSet<usize> = ids.iter().copied().collect();
        prop_assert_eq!(ids.len(), size);
        prop_assert_eq!(unique.len(), size);
        prop_assert_eq!(s.pool.len(), (size as f64 * pool_frac).round() as usize);
    }

    #[test]
    fn scenario_removes_exactly_per_class(seed in 0u64..200, remove in 1usize..10) {
        let data = archive(seed, 200);
        let spec = ScenarioSpec {
            minority_classes: vec![3, 2],
            remove_per_class: remove,
            exclusion_pairs: vec![],
            seed,
        };
        let out = apply_scenario(&data, &spec).unwrap();
        let before = class_frequencies(&data);
        let after = class_frequencies(&out);
        for j in 0..4 {
            prop_assert!(after[j] <= before[j]);
        }
        prop_assert!(before[3] - after[3] >= remove && before[2] - after[2] >= remove);
        prop_assert!(data.len() - out.len() <= 2 * remove);
        prop_assert!(data.len() - out.len() >= remove);
    }

    #[test]
    fn csv_round_trip_is_stable(seed in 0u64..100, size in 1usize..30) {
        let data = archive(seed, size);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_csv(&data, &a).unwrap();
        let back = load_csv(&a).unwrap();
        write_csv(&back, &b).unwrap();
        prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        prop_assert_eq!(back.len(), data.len());
        for (x, y) in back.samples().iter().zip(data.samples()) {
            prop_assert_eq!(&x.labels, &y.labels);
            for (p, q) in x.features.iter().zip(&y.features) {
                prop_assert!((p - q).abs() <= 1e-8 * q.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn selections_are_valid(seed in 0u64..300, n in 1usize..40, b in 1usize..8, m_factor in 1usize..5) {
        let params = ModelParams::init(3, &[5], 3, seed).unwrap();
        let samples = pool(seed, n, 3, 3);
        let refs: Vec<&Sample> = samples.iter().collect();
        let ids: HashSet<usize> = samples.iter().map(|s| s.id).collect();
        let mut r = rng::stream(seed, 3);
        let picks = [
            random_query(&refs, b, &mut r).selected_ids,
            mge_query(&params, &refs, b).unwrap().selected_ids,
            mge_clustering_query(&params, &refs, b, m_factor * b, &mut r).unwrap().selected_ids,
        ];
        for p in &picks {
            prop_assert_eq!(p.len(), b.min(n));
            let uniq: HashSet<usize> = p.iter().copied().collect();
            prop_assert_eq!(uniq.len(), p.len());
            prop_assert!(uniq.is_subset(&ids));
        }
    }

    #[test]
    fn mge_never_reads_true_labels(seed in 0u64..300, n in 2usize..30, b in 1usize..6) {
        let params = ModelParams::init(3, &[4], 3, seed).unwrap();
        let plain = pool(seed, n, 3, 3);
        let mut r = rng::stream(seed, 9);
        let relabeled: Vec<Sample> = plain
            .iter()
            .map(|s| Sample {
                labels: MultiLabelVector::new((0..3).map(|_| rand::Rng::random_bool(&mut r, 0.5)).collect()),
                ..s.clone()
            })
            .collect();
        let a: Vec<&Sample> = plain.iter().collect();
        let c: Vec<&Sample> = relabeled.iter().collect();
        prop_assert_eq!(mge_scores(&params, &a).unwrap(), mge_scores(&params, &c).unwrap());
        let q1 = mge_clustering_query(&params, &a, b, 4 * b, &mut rng::stream(seed, 3)).unwrap();
        let q2 = mge_clustering_query(&params, &c, b, 4 * b, &mut rng::stream(seed, 3)).unwrap();
        prop_assert_eq!(q1, q2);
    }

    #[test]
    fn single_sgd_step_moves_head_by_gradient(seed in 0u64..1000, lr in 0.001..1.0f64) {
        let params = ModelParams::init(4, &[3], 2, seed).unwrap();
        let sample = pool(seed, 1, 4, 2).pop().unwrap();
        let sample = Sample { labels: MultiLabelVector::new(vec![seed % 2 == 0, seed % 3 == 0]), ..sample };
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            learning_rate: lr,
            lr_decay_factor: 1.0,
            lr_decay_epoch: 1,
            seed,
            augment_noise_std: 0.0,
            freeze_encoder: seed % 2 == 1,
        };
        let g = last_layer_gradient(&params, &sample.features, &sample.labels).unwrap();
        let after = train(&params, &[&sample], &cfg).unwrap();
        for (k, gk) in g.values.iter().enumerate() {
            let delta = after.head.weights[k] - params.head.weights[k];
            prop_assert!((delta + lr * gk).abs() <= 1e-10);
        }
        if cfg.freeze_encoder {
            prop_assert_eq!(&after.encoder, &params.encoder);
        }
    }
}
