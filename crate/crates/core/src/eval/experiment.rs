//! Protocol runner: splits, method training, prediction and scoring.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{average_filling, fit_transformation_matrix, global_gbt_mapping, train_mf, AfModel};
use crate::config::{DataSource, ExperimentConfig, Method};
use crate::dataset::{
    filter_min_ratings, parse_ratings_file, split_with_cold_users, make_split, subsample_density,
    DomainPair, InputFormat, RatingMatrix, RatingRecord, SplitSpec,
};
use crate::error::{Error, Result};
use crate::eval::metrics::{mae, rmse};
use crate::eval::synthetic::generate_synthetic;
use crate::mapping::{apply_shared_mapping, cdlfm_predict, train_domain_models, DomainModels, PredictionTable};
use crate::mfus::{train_mfus, FactorModel, MfusHyper};
use crate::rng::{self, derive_seed, fraction_count, offsets, sample_indices};
use crate::similarity::SimilarityParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Single,
    Density,
    Overlap,
    SimSweep,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Single => "single",
            Protocol::Density => "density",
            Protocol::Overlap => "overlap",
            Protocol::SimSweep => "sim_sweep",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Protocol::Single, Protocol::Density, Protocol::Overlap, Protocol::SimSweep]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!("unknown protocol `{s}` (expected density, overlap or sim_sweep)"))
            })
    }
}

/// One scored (protocol point, method) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: String,
    /// Human-readable split descriptor such as `density=0.7`.
    pub point: String,
    pub parameter: Option<f64>,
    pub method: String,
    pub seed: u64,
    pub rmse: f64,
    pub mae: f64,
    pub n_predictions: usize,
    /// Test ratings with no prediction: unknown target item or a user absent
    /// from the auxiliary training data.
    pub n_dropped: usize,
    pub config_hash: String,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user_id: String,
    pub item_id: String,
    pub predicted: f64,
    pub actual: u8,
}

/// Everything a protocol needs before splitting.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub pair: DomainPair,
    /// Cold-start users fixed by the data source rather than sampled.
    pub designated_cold: Option<BTreeSet<String>>,
    pub explicit_test: Option<Vec<RatingRecord>>,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let d = generate_synthetic(&cfg.synthetic)?;
            Ok(ExperimentData {
                pair: d.pair,
                designated_cold: Some(d.cold_users),
                explicit_test: None,
            })
        }
        DataSource::Files => {
            let path = |p: &Option<std::path::PathBuf>, name: &str| {
                p.clone()
                    .ok_or_else(|| Error::Config(format!("data.{name} path is required")))
            };
            let read = |p: &std::path::Path| -> Result<RatingMatrix> {
                let recs = parse_ratings_file(p, InputFormat::Csv, cfg.data.header)?;
                let m = RatingMatrix::from_records(&recs)?;
                filter_min_ratings(&m, cfg.data.min_user_ratings, cfg.data.min_item_ratings)
            };
            let target = read(&path(&cfg.data.target, "target")?)?;
            let auxiliary = read(&path(&cfg.data.auxiliary, "auxiliary")?)?;
            let explicit_test = match &cfg.data.test {
                Some(p) => Some(parse_ratings_file(p, InputFormat::Csv, cfg.data.header)?),
                None => None,
            };
            Ok(ExperimentData {
                pair: DomainPair::new(target, auxiliary),
                designated_cold: None,
                explicit_test,
            })
        }
    }
}

/// Builds the training pair and the held-out target ratings.
pub fn build_split(
    data: &ExperimentData,
    spec: &SplitSpec,
) -> Result<(DomainPair, Vec<RatingRecord>)> {
    spec.validate()?;
    let density_seed = derive_seed(spec.seed, offsets::DENSITY);
    if let Some(test) = &data.explicit_test {
        let cold: BTreeSet<String> = test.iter().map(|r| r.user_id.clone()).collect();
        let linked = data
            .pair
            .linked_users
            .iter()
            .filter(|u| !cold.contains(*u))
            .cloned()
            .collect();
        let train = DomainPair {
            target: data.pair.target.clone(),
            auxiliary: data.pair.auxiliary.clone(),
            linked_users: linked,
            cold_start_users: cold,
        };
        return Ok((subsample_density(&train, spec.density_level, density_seed)?, test.clone()));
    }
    match &data.designated_cold {
        Some(cold) if spec.overlap_level >= 1.0 => {
            let (train, test) = split_with_cold_users(&data.pair, cold)?;
            Ok((subsample_density(&train, spec.density_level, density_seed)?, test))
        }
        _ => make_split(&data.pair, spec),
    }
}

/// Shared models trained lazily while evaluating several methods.
#[derive(Debug, Clone, Default)]
pub struct TrainedModels {
    pub af: Option<AfModel>,
    /// Similarity-regularized factors in both domains.
    pub mfus: Option<DomainModels>,
    /// Plain factors, `(target, auxiliary)`.
    pub mf: Option<(FactorModel, FactorModel)>,
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub predictions: Vec<Prediction>,
    pub n_dropped: usize,
    pub wall_time: f64,
    pub table: Option<PredictionTable>,
}

impl MethodRun {
    pub fn scores(&self) -> Result<(f64, f64)> {
        let p: Vec<f64> = self.predictions.iter().map(|p| p.predicted).collect();
        let t: Vec<f64> = self.predictions.iter().map(|p| p.actual as f64).collect();
        Ok((rmse(&p, &t)?, mae(&p, &t)?))
    }
}

/// Test cells every method is scored on.
pub fn scorable_test(train: &DomainPair, test: &[RatingRecord]) -> (Vec<RatingRecord>, usize) {
    let kept: Vec<RatingRecord> = test
        .iter()
        .filter(|r| {
            train.cold_start_users.contains(&r.user_id)
                && train.auxiliary.users().index_of(&r.user_id).is_some()
                && train.target.items().index_of(&r.item_id).is_some()
        })
        .cloned()
        .collect();
    let dropped = test.len() - kept.len();
    (kept, dropped)
}

fn from_table(table: &PredictionTable, test: &[RatingRecord], clamp: bool) -> Result<Vec<Prediction>> {
    test.iter()
        .map(|r| {
            let p = table.predict(&r.user_id, &r.item_id).ok_or_else(|| {
                Error::EmptyResult(format!("no prediction for ({}, {})", r.user_id, r.item_id))
            })?;
            Ok(Prediction {
                user_id: r.user_id.clone(),
                item_id: r.item_id.clone(),
                predicted: if clamp { p.clamp(1.0, 5.0) } else { p },
                actual: r.rating,
            })
        })
        .collect()
}

fn mfus_models<'a>(
    slot: &'a mut Option<DomainModels>,
    train: &DomainPair,
    cfg: &ExperimentConfig,
) -> Result<&'a DomainModels> {
    if slot.is_none() {
        *slot = Some(train_domain_models(train, &cfg.pipeline_params())?);
    }
    Ok(slot.as_ref().expect("just set"))
}

fn mf_models<'a>(
    slot: &'a mut Option<(FactorModel, FactorModel)>,
    train: &DomainPair,
    cfg: &ExperimentConfig,
) -> Result<&'a (FactorModel, FactorModel)> {
    if slot.is_none() {
        let p = cfg.pipeline_params();
        let t = train_mf(&train.target, &p.target_mfus, "target")?.model;
        let a = train_mf(&train.auxiliary, &p.auxiliary_mfus, "auxiliary")?.model;
        *slot = Some((t, a));
    }
    Ok(slot.as_ref().expect("just set"))
}

fn linked_rows<'a>(train: &DomainPair, target: &'a FactorModel, aux: &'a FactorModel) -> (Vec<&'a [f64]>, Vec<&'a [f64]>) {
    train
        .linked_indices()
        .into_iter()
        .map(|(a, t)| (aux.users.row(a), target.users.row(t)))
        .unzip()
}

/// Trains and scores each method on one split. Methods share trained
/// factor models through `models`.
pub fn evaluate_methods(
    train: &DomainPair,
    test: &[RatingRecord],
    cfg: &ExperimentConfig,
    methods: &[Method],
    models: &mut TrainedModels,
) -> Result<Vec<MethodRun>> {
    let (test, n_dropped) = scorable_test(train, test);
    if test.is_empty() {
        return Err(Error::EmptyResult("no scorable test ratings in this split".into()));
    }
    let clamp = cfg.mapping.clamp;
    let mut runs = Vec::with_capacity(methods.len());
    for &method in methods {
        let start = Instant::now();
        let (predictions, table) = match method {
            Method::Af => {
                if models.af.is_none() {
                    models.af = Some(average_filling(&train.target)?);
                }
                let af = models.af.as_ref().expect("just set");
                let preds = test
                    .iter()
                    .map(|r| Prediction {
                        user_id: r.user_id.clone(),
                        item_id: r.item_id.clone(),
                        predicted: af.predict(&r.user_id, &r.item_id),
                        actual: r.rating,
                    })
                    .collect();
                (preds, None)
            }
            Method::Cdlfm => {
                let dm = mfus_models(&mut models.mfus, train, cfg)?;
                let table = cdlfm_predict(train, dm, &cfg.mapping, &cfg.gbt)?;
                (from_table(&table, &test, clamp)?, Some(table))
            }
            Method::MfusGbt => {
                let dm = mfus_models(&mut models.mfus, train, cfg)?;
                let f = global_gbt_mapping(&train.linked_indices(), &dm.auxiliary.users, &dm.target.users, &cfg.gbt)?;
                let table = apply_shared_mapping(train, &dm.target, &dm.auxiliary, |a| f.map(a));
                (from_table(&table, &test, clamp)?, Some(table))
            }
            Method::MfGbt => {
                let (t, a) = mf_models(&mut models.mf, train, cfg)?;
                let f = global_gbt_mapping(&train.linked_indices(), &a.users, &t.users, &cfg.gbt)?;
                let table = apply_shared_mapping(train, t, a, |x| f.map(x));
                (from_table(&table, &test, clamp)?, Some(table))
            }
            Method::Tmatrix => {
                let (t, a) = mf_models(&mut models.mf, train, cfg)?;
                let (aux_rows, tgt_rows) = linked_rows(train, t, a);
                let map = fit_transformation_matrix(
                    &aux_rows,
                    &tgt_rows,
                    cfg.experiment.tmatrix_ridge,
                    cfg.experiment.tmatrix_intercept,
                )?;
                let table = apply_shared_mapping(train, t, a, |x| map.apply(x));
                (from_table(&table, &test, clamp)?, Some(table))
            }
        };
        log::info!("{method}: {} predictions", predictions.len());
        runs.push(MethodRun {
            method,
            predictions,
            n_dropped,
            wall_time: start.elapsed().as_secs_f64(),
            table,
        });
    }
    Ok(runs)
}

struct Point {
    protocol: Protocol,
    label: String,
    parameter: Option<f64>,
    cfg: ExperimentConfig,
}

fn label(name: &str, v: f64) -> String {
    format!("{name}={v}")
}

fn points(cfg: &ExperimentConfig, protocol: Protocol) -> Vec<Point> {
    let with = |f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = cfg.clone();
        f(&mut c);
        c
    };
    match protocol {
        Protocol::Single => vec![Point {
            protocol,
            label: "base".into(),
            parameter: None,
            cfg: cfg.clone(),
        }],
        Protocol::Density => cfg
            .experiment
            .density_levels
            .iter()
            .map(|&v| Point {
                protocol,
                label: label("density", v),
                parameter: Some(v),
                cfg: with(&|c| c.data.density_level = v),
            })
            .collect(),
        Protocol::Overlap => cfg
            .experiment
            .overlap_levels
            .iter()
            .map(|&v| Point {
                protocol,
                label: label("overlap", v),
                parameter: Some(v),
                cfg: with(&|c| c.data.overlap_level = v),
            })
            .collect(),
        Protocol::SimSweep => cfg
            .experiment
            .sim_values
            .iter()
            .map(|&v| Point {
                protocol,
                label: label("sim", v),
                parameter: Some(v),
                cfg: with(&|c| c.mapping.sim = v),
            })
            .collect(),
    }
}

fn report(point: &Point, run: &MethodRun, seed: u64, hash: &str) -> Result<MetricReport> {
    let (r, m) = run.scores()?;
    Ok(MetricReport {
        protocol: point.protocol.to_string(),
        point: point.label.clone(),
        parameter: point.parameter,
        method: run.method.to_string(),
        seed,
        rmse: r,
        mae: m,
        n_predictions: run.predictions.len(),
        n_dropped: run.n_dropped,
        config_hash: hash.to_string(),
        wall_time: run.wall_time,
    })
}

/// Output of one protocol: reports plus the per-method runs behind them.
pub struct ProtocolOutput {
    pub reports: Vec<MetricReport>,
    pub runs: Vec<(String, MethodRun)>,
    pub models: Vec<TrainedModels>,
    pub train: Vec<DomainPair>,
}

pub fn run_protocol_on(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    protocol: Protocol,
) -> Result<ProtocolOutput> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let seed = cfg.experiment.seed;
    let methods: Vec<Method> = {
        let set: BTreeSet<Method> = cfg.experiment.methods.iter().copied().collect();
        set.into_iter().collect()
    };
    let pts = points(cfg, protocol);
    let outcomes: Vec<Result<(Vec<MethodRun>, TrainedModels, DomainPair)>> = if protocol == Protocol::SimSweep {
        // one split and one set of factor models for every sim value
        let (train, test) = build_split(data, &cfg.split_spec())?;
        let mut shared = TrainedModels::default();
        let fixed: Vec<Method> = methods.iter().copied().filter(|m| *m != Method::Cdlfm).collect();
        let fixed_runs = evaluate_methods(&train, &test, cfg, &fixed, &mut shared)?;
        pts.iter()
            .map(|p| {
                let mut runs = fixed_runs.clone();
                if methods.contains(&Method::Cdlfm) {
                    runs.extend(evaluate_methods(&train, &test, &p.cfg, &[Method::Cdlfm], &mut shared)?);
                }
                Ok((runs, shared.clone(), train.clone()))
            })
            .collect()
    } else {
        pts.par_iter()
            .map(|p| {
                let (train, test) = build_split(data, &p.cfg.split_spec())?;
                let mut models = TrainedModels::default();
                let runs = evaluate_methods(&train, &test, &p.cfg, &methods, &mut models)?;
                Ok((runs, models, train))
            })
            .collect()
    };
    let mut reports = Vec::new();
    let mut all_runs = Vec::new();
    let mut all_models = Vec::new();
    let mut trains = Vec::new();
    for (p, outcome) in pts.iter().zip(outcomes) {
        let (runs, models, train) = outcome?;
        for run in runs {
            reports.push(report(p, &run, seed, &hash)?);
            all_runs.push((p.label.clone(), run));
        }
        all_models.push(models);
        trains.push(train);
    }
    sort_reports(&mut reports);
    Ok(ProtocolOutput {
        reports,
        runs: all_runs,
        models: all_models,
        train: trains,
    })
}

/// Orders reports by protocol, method, then parameter.
pub fn sort_reports(reports: &mut [MetricReport]) {
    reports.sort_by(|a, b| {
        a.protocol
            .cmp(&b.protocol)
            .then_with(|| a.method.cmp(&b.method))
            .then_with(|| {
                let x = a.parameter.unwrap_or(f64::NEG_INFINITY);
                let y = b.parameter.unwrap_or(f64::NEG_INFINITY);
                x.total_cmp(&y)
            })
            .then_with(|| a.point.cmp(&b.point))
    });
}

pub fn run_experiment(cfg: &ExperimentConfig, protocol: Protocol) -> Result<Vec<MetricReport>> {
    let data = load_data(cfg)?;
    Ok(run_protocol_on(cfg, &data, protocol)?.reports)
}

/// Seeded rating-level holdout within one domain.
pub fn holdout_split(
    m: &RatingMatrix,
    train_fraction: f64,
    seed: u64,
) -> Result<(RatingMatrix, Vec<RatingRecord>)> {
    let n_train = fraction_count(train_fraction, m.len());
    let mut rng = rng::seeded(seed);
    let mut keep = vec![false; m.len()];
    for p in sample_indices(&mut rng, m.len(), n_train) {
        keep[p] = true;
    }
    let train = m.retain_entries(|p, _| keep[p])?;
    let test = m
        .records()
        .zip(&keep)
        .filter(|(_, k)| !**k)
        .map(|(r, _)| r)
        .collect();
    Ok((train, test))
}

/// RMSE, MAE, scored count and dropped count of a single-domain model.
pub fn score_factors(
    model: &FactorModel,
    train: &RatingMatrix,
    test: &[RatingRecord],
) -> Result<(f64, f64, usize, usize)> {
    let mut pred = Vec::with_capacity(test.len());
    let mut truth = Vec::with_capacity(test.len());
    for r in test {
        let (Some(u), Some(i)) = (train.users().index_of(&r.user_id), train.items().index_of(&r.item_id)) else {
            continue;
        };
        pred.push(model.predict(u, i));
        truth.push(r.rating as f64);
    }
    Ok((rmse(&pred, &truth)?, mae(&pred, &truth)?, pred.len(), test.len() - pred.len()))
}

fn grid_report(
    protocol: &str,
    point: String,
    parameter: Option<f64>,
    scores: (f64, f64, usize, usize),
    seed: u64,
    hash: &str,
    wall_time: f64,
) -> MetricReport {
    MetricReport {
        protocol: protocol.into(),
        point,
        parameter,
        method: "mfus".into(),
        seed,
        rmse: scores.0,
        mae: scores.1,
        n_predictions: scores.2,
        n_dropped: scores.3,
        config_hash: hash.into(),
        wall_time,
    }
}

/// Single-domain sweep over `(K, alpha, beta)` and over the similarity
/// weights, on a seeded holdout of `m`.
pub fn parameter_grid_on(m: &RatingMatrix, cfg: &ExperimentConfig) -> Result<Vec<MetricReport>> {
    let e = &cfg.experiment;
    if e.grid_k.is_empty() || e.grid_alpha.is_empty() || e.grid_beta.is_empty() {
        return Err(Error::Config("parameter grid is empty".into()));
    }
    let hash = cfg.hash()?;
    let (train, test) = holdout_split(m, e.train_fraction, derive_seed(e.seed, offsets::GRID_SPLIT))?;
    let sims = crate::similarity::similarity_set(&train, &cfg.similarity)?;
    let fit = |hyper: &MfusHyper, sim: Option<&crate::similarity::SimilarityMatrix>| -> Result<((f64, f64, usize, usize), f64)> {
        let start = Instant::now();
        let model = train_mfus(&train, sim.filter(|_| hyper.beta != 0.0), hyper, "grid")?.model;
        Ok((score_factors(&model, &train, &test)?, start.elapsed().as_secs_f64()))
    };
    let mut jobs = Vec::new();
    for &k in &e.grid_k {
        for &alpha in &e.grid_alpha {
            for &beta in &e.grid_beta {
                jobs.push(MfusHyper {
                    k,
                    alpha,
                    beta,
                    ..cfg.mfus.clone()
                });
            }
        }
    }
    let kab = jobs
        .par_iter()
        .map(|h| {
            let (s, t) = fit(h, Some(&sims.combined))?;
            Ok(grid_report(
                "grid_kab",
                format!("k={};alpha={};beta={}", h.k, h.alpha, h.beta),
                Some(h.beta),
                s,
                e.seed,
                &hash,
                t,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let rho = e
        .grid_rho
        .par_iter()
        .map(|&r| {
            SimilarityParams { rho: r, ..cfg.similarity.clone() }.validate()?;
            let s = sims.remix(r);
            let (sc, t) = fit(&cfg.mfus, Some(&s))?;
            Ok(grid_report(
                "grid_rho",
                format!("rho={},{},{}", r[0], r[1], r[2]),
                Some(r[0]),
                sc,
                e.seed,
                &hash,
                t,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(kab.into_iter().chain(rho).collect())
}

/// The grid on the configured target domain.
pub fn parameter_grid(cfg: &ExperimentConfig) -> Result<Vec<MetricReport>> {
    let data = load_data(cfg)?;
    parameter_grid_on(&data.pair.target, cfg)
}
