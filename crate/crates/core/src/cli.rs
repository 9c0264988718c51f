//! Batch driver behind the `neurop` binary. Every subcommand writes into an
//! output directory and leaves a `manifest.json` there (config hash, seed,
//! crate version) so a run can be repeated exactly.
//!
//! Exit codes: 0 success, 1 invalid input (bad arguments, config or
//! domain), 2 runtime failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::Config;
use crate::data::PoissonDataset;
use crate::discretization::{Discretization, Domain, DomainKind};
use crate::error::{Error, Result};
use crate::evaluation::suite::{collapse_suite, knn_vs_gno, layer_drift_suite};
use crate::evaluation::{drift_csv, error_decomposition, resolution_sweep, sweep_csv, DecompositionReport};
use crate::io::write_atomic;
use crate::model::Model;
use crate::training::{checkpoint_load, checkpoint_save, CsvLog, Trainer};

#[derive(Debug, Parser)]
#[command(name = "neurop", version, about = "Neural-operator training and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample GRF forcings, solve Poisson, write `dataset.nopk`.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Overrides `data.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on the training split, write `checkpoint.nopk` and `train_log.csv`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Overrides `training.seed` and `model.init_seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Relative L2 error per resolution on the test split (`sweep.csv`) and
    /// the error decomposition (`decomposition.csv`).
    EvalSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Drift sequences of every operator layer and the kNN/GNO contrast.
    DriftTest {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Discrete convolution vs box-kernel operator along a refinement chain.
    CollapseDemo {
        #[command(flatten)]
        common: Common,
    },
    /// Print the Delaunay quadrature weights of the unit-square corners.
    QuadCheck,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) if !p.exists() => Err(Error::InvalidArgument(format!("config file {} does not exist", p.display()))),
        Some(p) => Config::load(p),
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    write_atomic(&path, bytes)?;
    Ok(path)
}

fn prepare(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_manifest(dir: &Path, command: &str, config: &Config, seed: u64, outputs: &[&str]) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": config.hash(),
        "seed": seed,
        "config": config.to_toml_string(),
        "outputs": outputs,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(dir, "manifest.json", format!("{text}\n").as_bytes())?;
    Ok(())
}

fn decomposition_csv(r: &DecompositionReport) -> String {
    let mut s = String::from("sample,err_train,err_query,drift_train,drift_query,holds\n");
    for e in &r.entries {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{}",
            e.sample, e.err_train, e.err_query, e.drift_train, e.drift_query, e.holds
        );
    }
    s
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, seed } => {
            let mut config = load_config(common.config.as_deref())?;
            if let Some(s) = seed {
                config.data.seed = s;
            }
            let d = &config.data;
            let ds = PoissonDataset::generate(&d.grf, d.dim, d.resolution, d.count, d.seed)?;
            prepare(&common.out)?;
            ds.save(common.out.join("dataset.nopk"))?;
            write_manifest(&common.out, "gen-data", &config, d.seed, &["dataset.nopk"])?;
            println!("wrote {} samples at {}^{}", ds.len(), d.resolution, d.dim);
        }
        Command::Train { common, data, seed } => {
            let mut config = load_config(common.config.as_deref())?;
            if let Some(s) = seed {
                config.training.seed = s;
                config.model.init_seed = s;
            }
            let ds = PoissonDataset::load(&data)?;
            let (train, _) = ds.split(config.data.n_train)?;
            let model = Model::new(&config.model)?;
            println!("{} parameters", model.param_count());
            let mut trainer = Trainer::new(model, config.training.clone(), &train)?;
            let mut log = CsvLog::new();
            let metrics = trainer.run(Some(&mut log))?;
            prepare(&common.out)?;
            checkpoint_save(&trainer.checkpoint(), common.out.join("checkpoint.nopk"))?;
            write_file(&common.out, "train_log.csv", log.as_str().as_bytes())?;
            write_manifest(
                &common.out,
                "train",
                &config,
                config.training.seed,
                &["checkpoint.nopk", "train_log.csv"],
            )?;
            if let Some(m) = metrics.last() {
                println!("epoch {} train loss {:.4e}", m.epoch, m.train_loss);
            }
        }
        Command::EvalSweep { common, data, checkpoint } => {
            let config = load_config(common.config.as_deref())?;
            let ds = PoissonDataset::load(&data)?;
            let (_, test) = ds.split(config.data.n_train)?;
            let model = checkpoint_load(&checkpoint)?.model;
            let rows = resolution_sweep(&model, &test, &config.eval.resolutions)?;
            let e = &config.eval;
            let dec = error_decomposition(&model, &test, e.train_resolution, e.query_resolution, e.slack)?;
            prepare(&common.out)?;
            let csv = sweep_csv(&rows);
            write_file(&common.out, "sweep.csv", csv.as_bytes())?;
            write_file(&common.out, "decomposition.csv", decomposition_csv(&dec).as_bytes())?;
            write_manifest(
                &common.out,
                "eval-sweep",
                &config,
                config.training.seed,
                &["sweep.csv", "decomposition.csv"],
            )?;
            print!("{csv}");
            println!("decomposition holds on {:.1}% of samples", 100.0 * dec.fraction_holding());
        }
        Command::DriftTest { common, seed } => {
            let config = load_config(common.config.as_deref())?;
            let mut reports = layer_drift_suite(seed)?;
            let (knn, gno) = knn_vs_gno(seed)?;
            reports.push(("knn_gnn", knn));
            reports.push(("gno_skewed", gno));
            prepare(&common.out)?;
            let mut names = Vec::new();
            for (name, r) in &reports {
                let file = format!("drift_{name}.csv");
                write_file(&common.out, &file, drift_csv(r).as_bytes())?;
                println!(
                    "{name:<20} last drift {:.3e}  nonincreasing {}  order {:.2}",
                    r.last(),
                    r.nonincreasing,
                    r.observed_order
                );
                names.push(file);
            }
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            write_manifest(&common.out, "drift-test", &config, seed, &names)?;
        }
        Command::CollapseDemo { common } => {
            let config = load_config(common.config.as_deref())?;
            let report = collapse_suite(config.eval.collapse_radius)?;
            let mut csv = String::from("n,discrete_to_pointwise,operator_to_window\n");
            for r in &report.rows {
                let _ = writeln!(csv, "{},{:e},{:e}", r.n, r.discrete_to_pointwise, r.operator_to_window);
            }
            prepare(&common.out)?;
            write_file(&common.out, "collapse.csv", csv.as_bytes())?;
            write_manifest(&common.out, "collapse-demo", &config, 0, &["collapse.csv"])?;
            print!("{csv}");
            println!("separation of the limits: {:.4e}", report.separation);
        }
        Command::QuadCheck => {
            let d = Discretization::delaunay_2d(
                &Domain::unit(DomainKind::Square),
                vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            )?;
            for (p, w) in d.points().chunks(2).zip(d.weights()) {
                println!("({}, {}) {w:.17}", p[0], p[1]);
            }
        }
    }
    Ok(())
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
