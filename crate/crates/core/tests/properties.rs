mod common;

use std::collections::{BTreeSet, HashMap};

use coldmap::baselines::{average_filling, fit_transformation_matrix, normal_equation_residual};
use coldmap::config::ExperimentConfig;
use coldmap::dataset::{filter_min_ratings, make_split, DomainPair, RatingMatrix, RatingRecord, SplitSpec};
use coldmap::eval::{mae, rmse};
use coldmap::gbt::{fit_gbt, GbtHyper, Presorted};
use coldmap::linalg::Matrix;
use coldmap::mfus::{laplacian, train_mfus, MfusHyper};
use coldmap::similarity::{similarity_set, SimilarityParams};
use common::*;
use proptest::prelude::*;

fn records() -> impl Strategy<Value = Vec<RatingRecord>> {
    prop::collection::vec((0..8u8, 0..8u8, 1..=5u8), 1..40).prop_map(|v| {
        v.into_iter()
            .map(|(u, i, r)| RatingRecord::new(format!("u{u}"), format!("i{i}"), r))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_permutation_invariant(
        pairs in prop::collection::vec((-10.0..10.0f64, 1.0..5.0f64), 1..30),
        seed in any::<u64>(),
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mut r = rng(seed);
        let order = coldmap::rng::sample_indices(&mut r, p.len(), p.len());
        let mut shuffled: Vec<usize> = order;
        shuffled.rotate_left(seed as usize % p.len());
        let p2: Vec<f64> = shuffled.iter().map(|&i| p[i]).collect();
        let t2: Vec<f64> = shuffled.iter().map(|&i| t[i]).collect();
        let (a, b) = (rmse(&p, &t).unwrap(), rmse(&p2, &t2).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        let (c, d) = (mae(&p, &t).unwrap(), mae(&p2, &t2).unwrap());
        prop_assert!((c - d).abs() <= 1e-12 * (1.0 + c));
        prop_assert!(a >= 0.0 && c >= 0.0);
    }

    #[test]
    fn rating_matrix_keeps_last_write(recs in records()) {
        let m = RatingMatrix::from_records(&recs).unwrap();
        let mut last: HashMap<(String, String), u8> = HashMap::new();
        for r in &recs {
            last.insert((r.user_id.clone(), r.item_id.clone()), r.rating);
        }
        prop_assert_eq!(m.len(), last.len());
        for ((u, i), r) in &last {
            prop_assert_eq!(m.get_by_id(u, i), Some(*r));
        }
        let back = RatingMatrix::from_json(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn filtering_reaches_a_fixed_point(recs in records(), mu in 1..4usize, mi in 1..4usize) {
        let m = RatingMatrix::from_records(&recs).unwrap();
        if let Ok(f) = filter_min_ratings(&m, mu, mi) {
            prop_assert!((0..f.n_users()).all(|u| f.user_count(u) >= mu));
            prop_assert!((0..f.n_items()).all(|i| f.item_count(i) >= mi));
            prop_assert_eq!(filter_min_ratings(&f, mu, mi).unwrap(), f);
        }
    }

    #[test]
    fn average_filling_decomposes(recs in records()) {
        let m = RatingMatrix::from_records(&recs).unwrap();
        let af = average_filling(&m).unwrap();
        for r in m.records() {
            let want = af.global_mean + af.user_bias(&r.user_id) + af.item_bias(&r.item_id);
            prop_assert_eq!(af.predict(&r.user_id, &r.item_id), want);
        }
        prop_assert_eq!(af.predict("nobody", "nothing"), af.global_mean);
    }

    #[test]
    fn similarity_matches_brute_force_s2(seed in any::<u64>(), n in 2..7usize, m in 2..9usize) {
        let mut r = rng(seed);
        let mat = random_matrix(&mut r, n, m, 0.5);
        let p = SimilarityParams::default();
        let set = similarity_set(&mat, &p).unwrap();
        for a in 0..mat.n_users() {
            for b in a + 1..mat.n_users() {
                let o = s2_brute_force(&mat, a, b, p.gamma2, p.sigma, &p.rated_map, p.high_rating_threshold);
                prop_assert!((o - set.s2.get(a, b)).abs() < 1e-12);
                for s in [&set.s1, &set.s2, &set.s3, &set.combined] {
                    prop_assert!((0.0..=1.0).contains(&s.get(a, b)));
                }
            }
        }
    }

    #[test]
    fn laplacian_rows_sum_to_zero(seed in any::<u64>(), n in 1..10usize) {
        let mut r = rng(seed);
        let s = random_similarity(&mut r, n);
        let lap = laplacian(&s);
        let dense = lap.to_dense();
        for a in 0..n {
            let row: f64 = (0..n).map(|b| dense.get(a, b)).sum();
            prop_assert!(row.abs() < 1e-12);
            for b in 0..n {
                prop_assert_eq!(dense.get(a, b), dense.get(b, a));
            }
        }
        let x = random_matrix_values(&mut r, n, 1, 1.0).column(0);
        prop_assert!(lap.quad(&x) >= -1e-12);
    }

    #[test]
    fn trees_match_exhaustive_search(seed in any::<u64>(), n in 1..=8usize, k in 1..=2usize, depth in 1..4usize, min_leaf in 1..3usize) {
        let mut r = rng(seed);
        let (x, y) = small_dataset(&mut r, n, k);
        let tree = Presorted::new(&x).fit(&y, depth, min_leaf).unwrap();
        prop_assert!(same_tree(&preorder(&tree), &oracle_tree(&x, &y, depth, min_leaf)));
        prop_assert!(tree.depth() <= depth);
    }

    #[test]
    fn boosting_loss_never_increases(seed in any::<u64>(), n in 1..30usize, nu in 0.01..1.0f64) {
        let mut r = rng(seed);
        let (x, y) = small_dataset(&mut r, n, 2);
        let model = fit_gbt(&x, &y, &GbtHyper { nu, max_stages: 40, ..GbtHyper::default() }).unwrap();
        prop_assert!(model.loss_log.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(model.loss_log.len(), model.stages.len() + 1);
    }

    #[test]
    fn planted_linear_map_is_recovered(seed in any::<u64>(), ka in 1..5usize, kt in 1..5usize) {
        let mut r = rng(seed);
        let truth = random_matrix_values(&mut r, kt, ka, 1.0);
        let aux = random_matrix_values(&mut r, 4 * ka + 3, ka, 1.0);
        let tgt: Vec<Vec<f64>> = aux.to_rows().iter().map(|a| {
            (0..kt).map(|row| coldmap::linalg::dot(truth.row(row), a)).collect()
        }).collect();
        let a: Vec<&[f64]> = (0..aux.rows()).map(|i| aux.row(i)).collect();
        let t: Vec<&[f64]> = tgt.iter().map(Vec::as_slice).collect();
        let fit = fit_transformation_matrix(&a, &t, 0.0, false).unwrap();
        for (x, y) in fit.matrix.as_slice().iter().zip(truth.as_slice()) {
            prop_assert!((x - y).abs() < 1e-8);
        }
        let ridge = fit_transformation_matrix(&a, &t, 0.7, false).unwrap();
        prop_assert!(normal_equation_residual(&a, &t, 0.7, &ridge) < 1e-8);
    }

    #[test]
    fn config_hash_recomputes_from_its_snapshot(seed in any::<u64>(), k in 1..30usize, sim in 0.0..0.99f64) {
        let mut cfg = ExperimentConfig::default().with_seed(seed);
        cfg.mfus.k = k;
        cfg.mapping.sim = sim;
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(cfg.hash().unwrap(), again.hash().unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mfus_objective_is_monotone(seed in any::<u64>(), beta in 0.0..0.5f64) {
        let mut r = rng(seed);
        let m = random_matrix(&mut r, 7, 6, 0.5);
        let s = random_similarity(&mut r, m.n_users());
        let hyper = MfusHyper { k: 3, beta, max_outer_iters: 40, seed, ..MfusHyper::default() };
        let trained = train_mfus(&m, Some(&s), &hyper, "p").unwrap();
        prop_assert!(trained.log.windows(2).all(|w| w[1].objective <= w[0].objective));
        prop_assert!(trained.model.is_finite());
    }

    #[test]
    fn cold_start_split_holds_out_only_cold_users(seed in any::<u64>(), frac in 0.1..0.9f64) {
        let mut r = rng(seed);
        let t = random_matrix(&mut r, 12, 6, 0.5);
        let a = random_matrix(&mut r, 12, 5, 0.5);
        let pair = DomainPair::new(t, a);
        let spec = SplitSpec { cold_start_fraction: frac, seed, ..SplitSpec::default() };
        if let Ok((train, test)) = make_split(&pair, &spec) {
            let cold: BTreeSet<&String> = train.cold_start_users.iter().collect();
            prop_assert!(test.iter().all(|r| cold.contains(&r.user_id)));
            prop_assert!(train.linked_users.iter().all(|u| !cold.contains(u)));
            prop_assert!(cold.iter().all(|u| train.target.users().index_of(u).is_none()));
            let again = make_split(&pair, &spec).unwrap();
            prop_assert_eq!(again.1, test);
        }
    }
}

#[test]
fn tree_on_two_points_splits_at_midpoint() {
    let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
    let tree = Presorted::new(&x).fit(&[0.0, 1.0], 1, 1).unwrap();
    assert_eq!(preorder(&tree), oracle_tree(&x, &[0.0, 1.0], 1, 1));
    assert_eq!(tree.predict(&[1.5]), 0.0);
    assert_eq!(tree.predict(&[1.6]), 1.0);
}
