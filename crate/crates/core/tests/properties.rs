use ndarray::Array2;
use proptest::prelude::*;
use sensorgraph::data::{
    apply_normalizer, fit_normalizer, input_indices, make_windows, split_chronological, split_sizes,
    ProcessDataset,
};
use sensorgraph::graph::{cosine_similarity_matrix, topk_adjacency, EmbeddingTable};
use sensorgraph::metrics::{nmae, nrmse, r2, MetricsReport};

fn dataset(rows: usize, cols: usize, values: Vec<f64>) -> ProcessDataset {
    let tags: Vec<String> = (0..cols).map(|c| format!("V{c}")).collect();
    let tags: Vec<&str> = tags.iter().map(String::as_str).collect();
    ProcessDataset::from_tags(Array2::from_shape_vec((rows, cols), values).unwrap(), &tags).unwrap()
}

fn dataset_strategy() -> impl Strategy<Value = ProcessDataset> {
    (4usize..30, 2usize..6).prop_flat_map(|(rows, cols)| {
        proptest::collection::vec(-1e3f64..1e3, rows * cols).prop_map(move |v| dataset(rows, cols, v))
    })
}

fn series_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            proptest::collection::vec(-50.0f64..50.0, n),
            proptest::collection::vec(-50.0f64..50.0, n),
        )
    })
    .prop_filter("non-constant truth", |(y, _)| {
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo > 1e-3
    })
}

proptest! {
    #[test]
    fn windows_reconstruct_the_series(ds in dataset_strategy(), w_frac in 0.0f64..1.0, target_pick in 0usize..100) {
        let t_len = ds.len();
        let w = 1 + ((t_len - 2) as f64 * w_frac) as usize;
        let target = target_pick % ds.num_variables();
        let windows = make_windows(&ds, target, w).unwrap();
        prop_assert_eq!(windows.len(), t_len - w);
        let inputs = input_indices(ds.num_variables(), target);
        for s in &windows {
            prop_assert_eq!(s.y, ds.values[[s.t_index, target]]);
            prop_assert_eq!(s.x.dim(), (inputs.len(), w));
            for (row, &var) in inputs.iter().enumerate() {
                for step in 0..w {
                    prop_assert_eq!(s.x[[row, step]], ds.values[[s.t_index + 1 - w + step, var]]);
                }
            }
        }
    }

    #[test]
    fn normalization_round_trips(ds in dataset_strategy()) {
        prop_assume!(fit_normalizer(&ds, 0..ds.len()).is_ok());
        let stats = fit_normalizer(&ds, 0..ds.len()).unwrap();
        let normed = apply_normalizer(&ds, &stats).unwrap();
        for ((t, c), &v) in normed.values.indexed_iter() {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
            let back = stats.denormalize(c, v);
            let orig = ds.values[[t, c]];
            prop_assert!((back - orig).abs() <= 1e-12 * orig.abs().max(stats.range(c)));
        }
    }

    #[test]
    fn split_is_an_ordered_partition(n in 3usize..500, a in 0.1f64..0.8, b_share in 0.1f64..0.9) {
        let b = (1.0 - a) * b_share;
        let c = 1.0 - a - b;
        let items: Vec<usize> = (0..n).collect();
        match split_chronological(items, (a, b, c)) {
            Ok((train, val, test)) => {
                let joined: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
                prop_assert_eq!(joined, (0..n).collect::<Vec<_>>());
                prop_assert_eq!(train.len(), (n as f64 * a).round() as usize);
                prop_assert!(!val.is_empty() && !test.is_empty());
            }
            Err(_) => prop_assert!(split_sizes(n, (a, b, c)).is_err()),
        }
    }

    #[test]
    fn topk_rows_and_scale_invariance(
        n in 2usize..9,
        d in 1usize..6,
        vals in proptest::collection::vec(-1.0f64..1.0, 48),
        scale in 0.01f64..100.0,
        k_pick in 0usize..100,
    ) {
        let z = Array2::from_shape_fn((n, d), |(i, j)| vals[(i * d + j) % vals.len()] + 0.01 * (i + 1) as f64);
        let table = EmbeddingTable::new(z.clone());
        prop_assume!(cosine_similarity_matrix(&table).is_ok());
        let sim = cosine_similarity_matrix(&table).unwrap();
        let scaled = cosine_similarity_matrix(&EmbeddingTable::new(z * scale)).unwrap();
        for (a, b) in sim.iter().zip(scaled.iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for i in 0..n {
            prop_assert!((sim[[i, i]] - 1.0).abs() <= 1e-12);
            for j in 0..n {
                prop_assert!((sim[[i, j]] - sim[[j, i]]).abs() <= 1e-15);
            }
        }
        let k = k_pick % n;
        let adj = topk_adjacency(&sim, k).unwrap();
        for i in 0..n {
            prop_assert_eq!(adj.in_degree(i), k);
            prop_assert!(!adj.has_edge(i, i));
        }
    }

    #[test]
    fn nmae_never_exceeds_nrmse((y, p) in series_pair()) {
        prop_assert!(nmae(&y, &p).unwrap() <= nrmse(&y, &p).unwrap() + 1e-12);
    }

    #[test]
    fn metrics_are_affine_invariant((y, p) in series_pair(), shift in -100.0f64..100.0, scale in 0.1f64..10.0) {
        let ty: Vec<f64> = y.iter().map(|v| scale * v + shift).collect();
        let tp: Vec<f64> = p.iter().map(|v| scale * v + shift).collect();
        let tol = |a: f64| 1e-9 * a.abs().max(1.0);
        let (a, b) = (nrmse(&y, &p).unwrap(), nrmse(&ty, &tp).unwrap());
        prop_assert!((a - b).abs() <= tol(a));
        let (a, b) = (nmae(&y, &p).unwrap(), nmae(&ty, &tp).unwrap());
        prop_assert!((a - b).abs() <= tol(a));
        let (a, b) = (r2(&y, &p).unwrap(), r2(&ty, &tp).unwrap());
        prop_assert!((a - b).abs() <= tol(a));
    }

    #[test]
    fn report_invariants((y, p) in series_pair()) {
        prop_assume!(y.iter().any(|v| v.abs() > 1e-8));
        let r = MetricsReport::compute(&y, &p).unwrap();
        prop_assert!(r.nrmse >= 0.0 && r.nmae >= 0.0 && r.mape >= 0.0);
        prop_assert!(r.r2 <= 1.0);
        prop_assert!(r.y_max > r.y_min);
        prop_assert_eq!(r.n_samples, y.len());
    }

    #[test]
    fn perfect_prediction_scores_zero((y, _) in series_pair()) {
        prop_assert_eq!(nrmse(&y, &y).unwrap(), 0.0);
        prop_assert_eq!(nmae(&y, &y).unwrap(), 0.0);
        prop_assert_eq!(r2(&y, &y).unwrap(), 1.0);
    }
}
