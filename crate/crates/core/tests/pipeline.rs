use coldmap::baselines::{fit_transformation_matrix, global_gbt_mapping};
use coldmap::dataset::{DomainPair, RatingMatrix, RatingRecord};
use coldmap::eval::synthetic::{generate_synthetic, CrossMap, SyntheticSpec};
use coldmap::gbt::{fit_gbt, GbtHyper};
use coldmap::linalg::{dot, Matrix};
use coldmap::mapping::{run_cdlfm, train_user_mapping, PipelineParams};
use coldmap::mfus::MfusHyper;

fn small_params(k: usize) -> PipelineParams {
    let mfus = MfusHyper {
        k,
        max_outer_iters: 40,
        ..MfusHyper::default()
    };
    PipelineParams {
        target_mfus: mfus.clone(),
        auxiliary_mfus: MfusHyper { seed: 9, ..mfus },
        gbt: GbtHyper {
            max_stages: 50,
            ..GbtHyper::default()
        },
        ..PipelineParams::default()
    }
}

#[test]
fn noiseless_linear_map_is_recovered_from_planted_factors() {
    let spec = SyntheticSpec {
        n_linked: 60,
        n_cold: 5,
        cross_map: CrossMap::Linear,
        noise_sd: 0.0,
        n_clusters: 1,
        cluster_spread: 1.0,
        seed: 4,
        ..SyntheticSpec::default()
    };
    let d = generate_synthetic(&spec).unwrap();
    let n = spec.n_linked;
    let aux: Vec<&[f64]> = (0..n).map(|u| d.truth.aux_users.row(u)).collect();
    let tgt: Vec<&[f64]> = (0..n).map(|u| d.truth.target_users.row(u)).collect();
    let map = fit_transformation_matrix(&aux, &tgt, 0.0, false).unwrap();
    let mut sq = 0.0;
    for u in 0..n {
        for (p, t) in map.apply(aux[u]).iter().zip(tgt[u]) {
            sq += (p - t).powi(2);
        }
    }
    let feature_rmse = (sq / (n * spec.k_true) as f64).sqrt();
    assert!(feature_rmse < 1e-6, "feature rmse {feature_rmse}");
}

#[test]
fn nonlinear_map_separates_linear_and_boosted_fits() {
    let xs: Vec<f64> = (0..40).map(|i| i as f64 / 4.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| if *x < 5.0 { 1.0 } else { -2.0 }).collect();
    let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
    let targets: Vec<Vec<f64>> = ys.iter().map(|y| vec![*y]).collect();
    let a: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let t: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
    let lin = fit_transformation_matrix(&a, &t, 0.0, true).unwrap();
    let lin_mse: f64 = a.iter().zip(&ys).map(|(x, y)| (lin.apply(x)[0] - y).powi(2)).sum::<f64>() / 40.0;
    let x = Matrix::from_rows(&rows).unwrap();
    let gbt = fit_gbt(&x, &ys, &GbtHyper::default()).unwrap();
    let gbt_mse = *gbt.loss_log.last().unwrap();
    assert!(lin_mse > 0.1, "linear mse {lin_mse}");
    assert!(gbt_mse < 1e-3 * lin_mse, "gbt mse {gbt_mse} vs linear {lin_mse}");
}

#[test]
fn global_mapping_equals_per_user_mapping_over_all_linked_users() {
    let aux = Matrix::from_fn(12, 3, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
    let tgt = Matrix::from_fn(12, 2, |r, c| ((r * 5 + c) % 4) as f64);
    let pairs: Vec<(usize, usize)> = (0..12).map(|i| (i, i)).collect();
    let hyper = GbtHyper {
        max_stages: 30,
        ..GbtHyper::default()
    };
    let global = global_gbt_mapping(&pairs, &aux, &tgt, &hyper).unwrap();
    let local = train_user_mapping(Some("u".into()), &pairs, &aux, &tgt, &hyper).unwrap();
    assert_eq!(global.subfunctions, local.subfunctions);

    let flat = Matrix::from_fn(12, 2, |_, c| c as f64 + 0.5);
    let constant = global_gbt_mapping(&pairs, &aux, &flat, &hyper).unwrap();
    assert!(constant.subfunctions.iter().all(|f| f.stages.is_empty()));
    assert_eq!(constant.map(&[9.0, 9.0, 9.0]), vec![0.5, 1.5]);
}

#[test]
fn single_linked_user_maps_to_its_own_target_features() {
    let rec = |u: &str, i: &str, r| RatingRecord::new(u, i, r);
    let target = RatingMatrix::from_records(&[rec("v", "t1", 4), rec("v", "t2", 2)]).unwrap();
    let aux = RatingMatrix::from_records(&[rec("v", "a1", 5), rec("v", "a2", 3), rec("u", "a1", 4), rec("u", "a2", 1)])
        .unwrap();
    let pair = DomainPair::new(target, aux);
    assert_eq!(pair.cold_start_users.iter().collect::<Vec<_>>(), vec!["u"]);
    let (models, table) = run_cdlfm(&pair, &small_params(3)).unwrap();
    let mapped = table.row("u").unwrap();
    let v = models.target.users.row(0);
    for (i, value) in mapped.iter().enumerate() {
        assert_eq!(*value, dot(v, models.target.items.row(i)));
    }
    let nb = table.neighbors[0].as_ref().unwrap();
    assert_eq!(nb.members.len(), 1);
}

#[test]
fn pipeline_scores_every_cold_user() {
    let spec = SyntheticSpec {
        n_linked: 40,
        n_cold: 10,
        n_items_target: 30,
        n_items_aux: 30,
        k_true: 3,
        density_target: 0.3,
        density_aux: 0.3,
        seed: 2,
        ..SyntheticSpec::default()
    };
    let d = generate_synthetic(&spec).unwrap();
    let (train, test) = coldmap::dataset::split_with_cold_users(&d.pair, &d.cold_users).unwrap();
    let (models, table) = run_cdlfm(&train, &small_params(3)).unwrap();
    assert!(models.target_sim.is_some());
    assert_eq!(table.users.len(), 10);
    let linked: Vec<usize> = train.linked_indices().iter().map(|p| p.0).collect();
    for nb in table.neighbors.iter().flatten() {
        assert!(!nb.members.is_empty());
        assert!(nb.members.iter().all(|m| linked.contains(m)));
    }
    for r in &test {
        if let Some(p) = table.predict(&r.user_id, &r.item_id) {
            assert!(p.is_finite());
        }
    }

    let mut params = small_params(3);
    params.target_mfus.beta = 0.0;
    let (models, _) = run_cdlfm(&train, &params).unwrap();
    assert!(models.target_sim.is_none());
}
