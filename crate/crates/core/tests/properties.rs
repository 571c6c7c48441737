use ndarray::{s, Array1, Array2};
use proptest::prelude::*;

use scate_core::cart::TreeParams;
use scate_core::data::{friedman1_response, gen_friedman1, split, ScalingStats, Task};
use scate_core::distill::{make_targets, oracle_eval, DistilledModel};
use scate_core::ensemble::{fit_gbm_traced, fit_rf, predict_gbm, predict_rf, ForestParams, GbmParams};
use scate_core::experiment::{best_under_budget, pareto_frontier, Method, SweepRecord};
use scate_core::mlp::{arch_dims, forward, init_mlp};
use scate_core::model_io::{self, deserialize, measure_size, predict_f32, serialize};
use scate_core::operator::{gbm_smoother_matrix, gbm_smoother_row, rf_kernel_cross, rf_kernel_matrix};
use scate_core::rng::{rng_from_seed, standard_normal};
use scate_core::spectral::{eig_sym, svd_trunc, Decomposition};

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_rows(n in 3usize..200, a in 0.1f64..0.8, seed in any::<u64>()) {
        let b = (1.0 - a) / 2.0;
        let s = split(n, [a, b, 1.0 - a - b], seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn noiseless_friedman_matches_formula(n in 1usize..100, d in 5usize..12, seed in any::<u64>()) {
        let ds = gen_friedman1(n, d, 0.0, seed).unwrap();
        for (i, row) in ds.features.rows().into_iter().enumerate() {
            let x = row.to_vec();
            let direct = 10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
                + 20.0 * (x[2] - 0.5).powi(2)
                + 10.0 * x[3]
                + 5.0 * x[4];
            prop_assert!((ds.target[i] - direct).abs() <= 1e-12);
            prop_assert_eq!(ds.target[i], friedman1_response(&x));
        }
    }

    #[test]
    fn measure_size_monotone_in_params(d in 1usize..20, w in 1usize..64, depth in 1usize..5, p in 1usize..60) {
        let small = arch_dims(d, w, depth, p);
        let wider = arch_dims(d, w + 1, depth, p);
        let deeper = arch_dims(d, w, depth + 1, p);
        let n = |dims: &[usize]| scate_core::mlp::param_count(dims);
        prop_assert!(n(&wider) > n(&small) && model_io::scte_size(&wider) > model_io::scte_size(&small));
        prop_assert!(n(&deeper) > n(&small) && model_io::scte_size(&deeper) > model_io::scte_size(&small));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rf_kernel_structure_and_consistency(
        n in 10usize..120,
        b in 1usize..12,
        depth in prop::option::of(1usize..10),
        bootstrap in any::<bool>(),
        seed in 0u64..10_000,
    ) {
        let ds = gen_friedman1(n, 6, 1.0, seed).unwrap();
        let tree = TreeParams { max_depth: depth, bootstrap, ..Default::default() };
        let f = fit_rf(&ds, &ForestParams { n_trees: b, tree, seed }).unwrap();
        let k = rf_kernel_matrix(&f, &ds.features).unwrap();
        let diag = k.diagnostics();
        prop_assert!(diag.max_asymmetry <= 1e-12);
        prop_assert!(diag.max_row_sum_error <= 1e-10 && diag.max_col_sum_error <= 1e-10);
        prop_assert!(diag.min_entry >= 0.0);
        let ky = k.values.dot(&ds.target);
        for (i, row) in ds.features.rows().into_iter().enumerate() {
            prop_assert!((ky[i] - predict_rf(&f, &row.to_vec()).unwrap()).abs() <= 1e-10);
        }
        let q = gen_friedman1(15, 6, 0.0, seed + 1).unwrap();
        let c = rf_kernel_cross(&f, &ds.features, &q.features).unwrap();
        for row in c.rows() {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn gbm_smoother_consistency_and_monotone_loss(
        n in 20usize..120,
        b in 1usize..25,
        eta in prop::sample::select(vec![0.05, 0.1, 0.5, 1.0]),
        depth in 1usize..5,
        seed in 0u64..10_000,
    ) {
        let ds = gen_friedman1(n, 5, 1.0, seed).unwrap();
        let params = GbmParams {
            n_trees: b,
            learning_rate: eta,
            tree: TreeParams { max_depth: Some(depth), bootstrap: false, ..Default::default() },
            seed,
        };
        let (m, trace) = fit_gbm_traced(&ds, &params).unwrap();
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        let st = gbm_smoother_matrix(&m, &ds.features).unwrap();
        let probes = gen_friedman1(10, 5, 0.0, seed + 7).unwrap();
        let rows = ds.features.rows().into_iter().take(10).chain(probes.features.rows());
        for r in rows {
            let x = r.to_vec();
            let w = gbm_smoother_row(&st, &m, &x).unwrap();
            prop_assert!((w.dot(&ds.target) - predict_gbm(&m, &x).unwrap()).abs() <= 1e-8);
        }
    }

    #[test]
    fn batch_forward_equals_rowwise(w in 1usize..40, depth in 1usize..5, rows in 1usize..150, seed in any::<u64>()) {
        let m = init_mlp(&arch_dims(7, w, depth, 3), seed).unwrap();
        let mut rng = rng_from_seed(seed ^ 1);
        let x = Array2::from_shape_fn((rows, 7), |_| standard_normal(&mut rng));
        let batch = forward(&m, &x.view()).unwrap();
        for (i, r) in x.rows().into_iter().enumerate() {
            let single = m.forward_row(&r.to_vec()).unwrap();
            for (a, b) in batch.row(i).iter().zip(&single) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn scte_round_trip(
        d in 1usize..12,
        w in prop::sample::select(vec![4usize, 8, 16, 32, 64, 128]),
        depth in 1usize..6,
        p in 1usize..60,
        seed in any::<u64>(),
    ) {
        let dims = arch_dims(d, w, depth, p);
        let mut rng = rng_from_seed(seed);
        let model = DistilledModel {
            mlp: init_mlp(&dims, seed).unwrap(),
            coefficients: Array1::from_shape_fn(p, |_| standard_normal(&mut rng)),
            scaling: ScalingStats {
                means: (0..d).map(|_| standard_normal(&mut rng)).collect(),
                stds: (0..d).map(|_| 0.5 + standard_normal(&mut rng).abs()).collect(),
            },
            task: Task::Regression,
            p,
            provenance: None,
        };
        let bytes = serialize(&model);
        prop_assert_eq!(bytes.len(), model_io::scte_size(&dims));
        prop_assert_eq!(measure_size(&model), bytes.len());
        let back = deserialize(&bytes).unwrap();
        prop_assert_eq!(&serialize(&back), &bytes);
        let x: Vec<f32> = (0..d).map(|_| standard_normal(&mut rng) as f32).collect();
        prop_assert_eq!(predict_f32(&model, &x).unwrap().to_bits(), predict_f32(&back, &x).unwrap().to_bits());
    }

    #[test]
    fn weights_monotone_and_full_rank_identity(n in 8usize..60, b in 1usize..10, seed in 0u64..10_000) {
        let ds = gen_friedman1(n, 5, 1.0, seed).unwrap();
        let f = fit_rf(&ds, &ForestParams { n_trees: b, seed, ..Default::default() }).unwrap();
        let k = rf_kernel_matrix(&f, &ds.features).unwrap();
        let decomp = Decomposition::Eigen(eig_sym(&k.values, None).unwrap());
        let y = ds.target.to_vec();
        let t = make_targets(&decomp, &y, n).unwrap();
        for w in t.weights.windows(2) {
            prop_assert!(w[1] <= w[0] && w[1] > 0.0);
        }
        let recon = t.targets.dot(&t.coefficients);
        let ky = k.values.dot(&ds.target);
        for i in 0..n {
            prop_assert!((recon[i] - ky[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn oracle_lower_bounds_any_coordinates(n in 10usize..60, p in 1usize..8, seed in 0u64..10_000) {
        let ds = gen_friedman1(n, 5, 1.0, seed).unwrap();
        let f = fit_rf(&ds, &ForestParams { n_trees: 5, seed, ..Default::default() }).unwrap();
        let k = rf_kernel_matrix(&f, &ds.features).unwrap();
        let decomp = Decomposition::Eigen(eig_sym(&k.values, None).unwrap());
        let q = gen_friedman1(20, 5, 1.0, seed + 3).unwrap();
        let cross = rf_kernel_cross(&f, &ds.features, &q.features).unwrap();
        let o = oracle_eval(&decomp, &cross, &ds.target.to_vec(), p).unwrap();
        let mut rng = rng_from_seed(seed);
        let coords = Array2::from_shape_fn((20, p), |_| 0.1 * standard_normal(&mut rng));
        let vals = decomp.values().slice(s![..p]).to_owned();
        let v = decomp.right().slice(s![.., ..p]).to_owned();
        let approx = (&coords * &vals).dot(&v.t());
        prop_assert!(o.frobenius_error <= frob(&(&cross - &approx)) + 1e-12);
    }

    #[test]
    fn svd_residual_with_gap(m in 20usize..50, n in 20usize..50, p in 1usize..6, seed in any::<u64>()) {
        // planted spectrum with ratio 2 between consecutive values
        let mut rng = rng_from_seed(seed);
        let r = m.min(n);
        let g1 = Array2::from_shape_fn((m, r), |_| standard_normal(&mut rng));
        let g2 = Array2::from_shape_fn((n, r), |_| standard_normal(&mut rng));
        let q1 = orthonormal(g1);
        let q2 = orthonormal(g2);
        let sig = Array1::from_shape_fn(r, |j| 2f64.powi(-(j as i32)));
        let a = (&q1 * &sig).dot(&q2.t());
        let t = svd_trunc(&a, p, 10, 4, seed).unwrap();
        for j in 0..p {
            let resid = &a.dot(&t.v.column(j)) - &(&t.u.column(j) * t.sigma[j]);
            prop_assert!(resid.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-5 * t.sigma[0]);
        }
    }
}

fn orthonormal(mut a: Array2<f64>) -> Array2<f64> {
    let cols = a.ncols();
    for j in 0..cols {
        for k in 0..j {
            let proj = a.column(k).dot(&a.column(j));
            let ck = a.column(k).to_owned();
            a.column_mut(j).scaled_add(-proj, &ck);
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        a.column_mut(j).mapv_inplace(|v| v / norm);
    }
    a
}

fn record_strategy() -> impl Strategy<Value = SweepRecord> {
    (
        prop::sample::select(vec![Method::Scate, Method::NaiveMlp, Method::NaiveRf]),
        0usize..6,
        1usize..20_000,
        -1.0f64..1.0,
        -1.0f64..1.0,
        0u64..3,
    )
        .prop_map(|(method, cell, size, metric, val, seed)| SweepRecord {
            method,
            cell: format!("c{cell}"),
            size_bytes: Some(size),
            metric,
            val_metric: val,
            seed,
            wall_train_s: 0.0,
            wall_infer_s_per_1k: 0.0,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn best_never_exceeds_budget(records in prop::collection::vec(record_strategy(), 0..40), budgets in prop::collection::vec(1usize..20_000, 1..4)) {
        let mut budgets = budgets;
        budgets.sort_unstable();
        // one size per (method, cell), as in a real sweep
        let records: Vec<SweepRecord> = records
            .into_iter()
            .map(|mut r| {
                let c: usize = r.cell[1..].parse().unwrap();
                r.size_bytes = Some(1000 * (c + 1) + r.method as usize);
                r
            })
            .collect();
        for row in best_under_budget(&records, &budgets) {
            match row.size_bytes {
                Some(s) => prop_assert!(s <= row.budget as f64),
                None => prop_assert!(row.cell.is_none() && records.iter().all(|r| r.method != row.method || r.size_bytes.unwrap() > row.budget)),
            }
        }
    }

    #[test]
    fn pareto_points_are_non_dominated(records in prop::collection::vec(record_strategy(), 1..40)) {
        let front = pareto_frontier(&records);
        prop_assert!(!front.is_empty());
        for a in &front {
            for b in &front {
                if a.method == b.method && a.cell != b.cell {
                    let dominates = b.size_bytes <= a.size_bytes
                        && b.mean_metric >= a.mean_metric
                        && (b.size_bytes < a.size_bytes || b.mean_metric > a.mean_metric);
                    prop_assert!(!dominates);
                }
            }
        }
    }
}
