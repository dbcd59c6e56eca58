use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use coldmap::config::{ExperimentConfig, Method};
use coldmap::eval::report::write_results;
use coldmap::eval::{load_data, parameter_grid, run_protocol_on, Prediction, Protocol};
use coldmap::mfus::train_mfus;
use coldmap::similarity::{similarity_set, SimilarityMatrix};
use coldmap::RatingMatrix;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "coldmap", version, about = "Cross-domain rating prediction for cold-start users")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, overriding `experiment.jobs`.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory, overriding `experiment.output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Domain {
    Target,
    Auxiliary,
}

impl Domain {
    fn name(self) -> &'static str {
        match self {
            Domain::Target => "target",
            Domain::Auxiliary => "auxiliary",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and filter both rating files and write matrix artifacts.
    Ingest(Common),
    /// Compute similarity matrices for one domain.
    Similarity {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "target")]
        domain: Domain,
    },
    /// Train the factor model of one domain.
    Factorize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "target")]
        domain: Domain,
        /// Similarity artifact; defaults to the one `similarity` writes.
        #[arg(long)]
        similarity: Option<PathBuf>,
    },
    /// Run the pipeline or a baseline end to end.
    Run {
        #[command(flatten)]
        common: Common,
        /// Methods to run, overriding `experiment.methods`.
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
    },
    /// Run a density, overlap or sim-threshold sweep.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        protocol: String,
    },
    /// Single-domain sweep over K, alpha, beta and the similarity weights.
    Grid(Common),
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default().resolve(),
    };
    let mut cfg = match c.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    if let Some(j) = c.jobs {
        cfg.experiment.jobs = j;
    }
    if let Some(o) = &c.output {
        cfg.experiment.output_dir = o.clone();
    }
    cfg.validate()?;
    log::info!("config hash {}", cfg.hash()?);
    if cfg.experiment.jobs > 0 {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.experiment.jobs)
            .build_global();
    }
    Ok(cfg)
}

/// Files are written into a staging directory and moved into place only
/// once every artifact succeeded.
struct Staging {
    dir: tempfile::TempDir,
    out: PathBuf,
    files: Vec<String>,
}

impl Staging {
    fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".coldmap-staging")
            .tempdir_in(out)
            .with_context(|| format!("staging in {}", out.display()))?;
        Ok(Staging {
            dir,
            out: out.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.path().join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {name}"))
    }

    fn config(&mut self, cfg: &ExperimentConfig) -> Result<()> {
        self.write("config.toml", &cfg.to_toml()?)
    }

    fn commit(self) -> Result<()> {
        for f in &self.files {
            let to = self.out.join(f);
            fs::rename(self.dir.path().join(f), &to).with_context(|| format!("moving {}", to.display()))?;
        }
        Ok(())
    }
}

fn domain_matrix(cfg: &ExperimentConfig, domain: Domain) -> Result<RatingMatrix> {
    let data = load_data(cfg)?;
    Ok(match domain {
        Domain::Target => data.pair.target,
        Domain::Auxiliary => data.pair.auxiliary,
    })
}

fn ingest(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let data = load_data(&cfg)?;
    let mut st = Staging::new(&cfg.experiment.output_dir)?;
    st.write("matrix_target.json", &data.pair.target.to_json()?)?;
    st.write("matrix_auxiliary.json", &data.pair.auxiliary.to_json()?)?;
    st.config(&cfg)?;
    st.commit()?;
    println!(
        "target: {} users, {} items, {} ratings; auxiliary: {} users, {} items, {} ratings; linked {}, cold-start {}",
        data.pair.target.n_users(),
        data.pair.target.n_items(),
        data.pair.target.len(),
        data.pair.auxiliary.n_users(),
        data.pair.auxiliary.n_items(),
        data.pair.auxiliary.len(),
        data.pair.linked_users.len(),
        data.pair.cold_start_users.len()
    );
    Ok(())
}

fn similarity(c: &Common, domain: Domain) -> Result<()> {
    let cfg = load_config(c)?;
    let m = domain_matrix(&cfg, domain)?;
    let params = match domain {
        Domain::Target => cfg.similarity.clone(),
        Domain::Auxiliary => cfg.similarity_auxiliary.clone().unwrap_or_else(|| cfg.similarity.clone()),
    };
    let set = similarity_set(&m, &params)?;
    let users = m.users().ids();
    let name = domain.name();
    let mut st = Staging::new(&cfg.experiment.output_dir)?;
    st.write(&format!("similarity_{name}.json"), &set.combined.to_json(Some(users))?)?;
    for (tag, s) in [("s1", &set.s1), ("s2", &set.s2), ("s3", &set.s3)] {
        st.write(&format!("similarity_{name}_{tag}.json"), &s.to_json(Some(users))?)?;
    }
    st.config(&cfg)?;
    st.commit()?;
    println!("{name}: {} users, {} pairs", m.n_users(), set.combined.pair_count());
    Ok(())
}

fn factorize(c: &Common, domain: Domain, sim_path: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(c)?;
    let m = domain_matrix(&cfg, domain)?;
    let name = domain.name();
    let hyper = match domain {
        Domain::Target => cfg.mfus.clone(),
        Domain::Auxiliary => cfg.mfus_auxiliary.clone().unwrap_or_else(|| cfg.mfus.clone()),
    };
    let sim = if hyper.beta != 0.0 {
        let p = sim_path.unwrap_or_else(|| cfg.experiment.output_dir.join(format!("similarity_{name}.json")));
        let text = fs::read_to_string(&p).with_context(|| format!("similarity artifact {}", p.display()))?;
        let (s, users): (SimilarityMatrix, _) = SimilarityMatrix::from_json(&text)?;
        if s.n_users() != m.n_users() || users.as_deref().is_some_and(|u| u != m.users().ids()) {
            bail!(
                "similarity artifact {} covers {} users but the {name} matrix has {}",
                p.display(),
                s.n_users(),
                m.n_users()
            );
        }
        Some(s)
    } else {
        None
    };
    let tag = if hyper.beta == 0.0 { "mf" } else { "mfus" };
    let trained = train_mfus(&m, sim.as_ref(), &hyper, name)?;
    let mut st = Staging::new(&cfg.experiment.output_dir)?;
    st.write(&format!("model_{name}.json"), &trained.model.to_json(&m)?)?;
    st.write(&format!("log_{name}.csv"), &trained.log_csv())?;
    st.config(&cfg)?;
    st.commit()?;
    let last = trained.log.last().map_or(f64::NAN, |l| l.objective);
    println!("{name}: {tag} trained, {} sweeps, objective {last}", trained.log.len() - 1);
    Ok(())
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    method: &'a str,
    user_id: &'a str,
    item_id: &'a str,
    predicted: f64,
    actual: u8,
}

fn run(c: &Common, methods: &[String]) -> Result<()> {
    let mut cfg = load_config(c)?;
    if !methods.is_empty() {
        cfg.experiment.methods = methods.iter().map(|m| m.parse::<Method>()).collect::<Result<_, _>>()?;
    }
    let data = load_data(&cfg)?;
    let out = run_protocol_on(&cfg, &data, Protocol::Single)?;
    let mut st = Staging::new(&cfg.experiment.output_dir)?;
    let rows: Vec<PredictionRow> = out
        .runs
        .iter()
        .flat_map(|(_, run)| {
            run.predictions.iter().map(move |p: &Prediction| PredictionRow {
                method: run.method.as_str(),
                user_id: &p.user_id,
                item_id: &p.item_id,
                predicted: p.predicted,
                actual: p.actual,
            })
        })
        .collect();
    let pred_path = st.path("predictions.csv");
    write_predictions_rows(&pred_path, &rows)?;
    if let (Some(models), Some(train)) = (out.models.first(), out.train.first()) {
        if let Some(dm) = &models.mfus {
            st.write("model_target.json", &dm.target.to_json(&train.target)?)?;
            st.write("model_auxiliary.json", &dm.auxiliary.to_json(&train.auxiliary)?)?;
        }
        if let Some((t, a)) = &models.mf {
            st.write("model_mf_target.json", &t.to_json(&train.target)?)?;
            st.write("model_mf_auxiliary.json", &a.to_json(&train.auxiliary)?)?;
        }
        if let Some(af) = &models.af {
            st.write("model_af.json", &serde_json::to_string_pretty(af)?)?;
        }
    }
    results(&mut st, &out.reports)?;
    st.config(&cfg)?;
    st.commit()?;
    for r in &out.reports {
        println!("{}: rmse {:.6} mae {:.6} n {}", r.method, r.rmse, r.mae, r.n_predictions);
    }
    Ok(())
}

fn write_predictions_rows(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn results(st: &mut Staging, reports: &[coldmap::eval::MetricReport]) -> Result<()> {
    let tmp = tempfile::tempdir()?;
    write_results(tmp.path(), reports)?;
    for f in ["results.json", "results.csv", "timings.csv"] {
        let to = st.path(f);
        fs::copy(tmp.path().join(f), to)?;
    }
    Ok(())
}

fn experiment(c: &Common, protocol: &str) -> Result<()> {
    let cfg = load_config(c)?;
    let protocol: Protocol = protocol.parse()?;
    if protocol == Protocol::Single {
        bail!("use `coldmap run` for a single split");
    }
    let data = load_data(&cfg)?;
    let out = run_protocol_on(&cfg, &data, protocol)?;
    let mut st = Staging::new(&cfg.experiment.output_dir)?;
    results(&mut st, &out.reports)?;
    st.config(&cfg)?;
    st.commit()?;
    for r in &out.reports {
        println!("{} {} {}: rmse {:.6} mae {:.6}", r.protocol, r.point, r.method, r.rmse, r.mae);
    }
    Ok(())
}

fn grid(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let reports = parameter_grid(&cfg)?;
    let mut st = Staging::new(&cfg.experiment.output_dir)?;
    results(&mut st, &reports)?;
    st.config(&cfg)?;
    st.commit()?;
    for r in &reports {
        println!("{} {}: rmse {:.6} mae {:.6}", r.protocol, r.point, r.rmse, r.mae);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("COLDMAP_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(c) => ingest(c),
        Command::Similarity { common, domain } => similarity(common, *domain),
        Command::Factorize {
            common,
            domain,
            similarity,
        } => factorize(common, *domain, similarity.clone()),
        Command::Run { common, method } => run(common, method),
        Command::Experiment { common, protocol } => experiment(common, protocol),
        Command::Grid(c) => grid(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
