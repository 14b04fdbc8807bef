//! `dpa`: generate data, train, evaluate and export distributional
//! principal autoencoders.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use dpa_core::baselines::ordered_ae_train_with;
use dpa_core::data::{self, Dataset, MarginRule};
use dpa_core::metrics::{self, MAX_PAIRS};
use dpa_core::model::{DpaModel, ModelKind, Reconstructor};
use dpa_core::optim::{train_model, EpochRecord};
use dpa_core::rng::{self, domain};
use dpa_core::{DpaError, Matrix};

use config::RunConfig;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 1;

#[derive(Parser)]
#[command(name = "dpa", version, about = "Distributional principal autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Disk,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum Margin {
    Inside,
    Clipped,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset in the binary format.
    GenerateData {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Image side length (disk).
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        radius_min: f64,
        #[arg(long, default_value_t = 6.0)]
        radius_max: f64,
        #[arg(long, value_enum, default_value = "inside")]
        margin: Margin,
        /// Comma-separated mean vector (gaussian).
        #[arg(long)]
        mean: Option<String>,
        /// Covariance rows separated by `;`, entries by `,` (gaussian).
        /// Defaults to the identity.
        #[arg(long)]
        cov: Option<String>,
    },
    /// Train a model described by a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace the contents of an existing run directory.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Metric table, one row per k.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated k values; all of 0..=max k by default.
        #[arg(long)]
        ks: Option<String>,
        #[arg(long, default_value_t = 16)]
        draws: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = MAX_PAIRS)]
        max_pairs: usize,
    },
    /// First k latent coordinates as CSV.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stochastic reconstructions, `samples` consecutive rows per input.
    Reconstruct {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Q-Q table of one column against its reconstructions.
    Qq {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        column: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 99)]
        quantiles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<DpaError>() {
            return match e {
                DpaError::Numeric(_) => EXIT_NUMERIC,
                DpaError::Io(_) => EXIT_IO,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenerateData {
            kind,
            out,
            n,
            size,
            seed,
            radius_min,
            radius_max,
            margin,
            mean,
            cov,
        } => {
            let ds = match kind {
                DataKind::Disk => {
                    let rule = match margin {
                        Margin::Inside => MarginRule::Inside,
                        Margin::Clipped => MarginRule::Clipped,
                    };
                    data::gen_disk(n, size, seed, (radius_min, radius_max), rule)?
                }
                DataKind::Gaussian => {
                    let mean = parse_floats(mean.as_deref().ok_or_else(|| anyhow!("gaussian data needs --mean"))?)
                        .context("--mean")?;
                    let cov = match cov {
                        Some(c) => parse_matrix(&c).context("--cov")?,
                        None => Matrix::identity(mean.len()),
                    };
                    data::gen_gaussian(n, &mean, &cov, seed)?
                }
            };
            let bytes = data::encode_dataset(&ds);
            fs::write(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
            println!("n={} p={} sha256={}", ds.n(), ds.p(), sha256_hex(&bytes));
            Ok(())
        }
        Command::Train {
            config,
            data,
            out,
            force,
            quiet,
        } => train(&config, &data, &out, force, quiet),
        Command::Evaluate {
            model,
            data,
            ks,
            draws,
            out,
            seed,
            max_pairs,
        } => {
            if draws == 0 {
                bail!("--draws must be at least 1");
            }
            let model = load_model(&model)?;
            let ds = load_data(&data)?;
            check_width(&model, &ds)?;
            let ks = match ks {
                Some(s) => parse_list(&s).context("--ks")?,
                None => (0..=model.max_k()).collect(),
            };
            for &k in &ks {
                model.check_k(k)?;
            }
            let mut reports = Vec::with_capacity(ks.len());
            for &k in &ks {
                let mut r = rng::substream(seed, &[domain::EVAL, k as u64]);
                reports.push(metrics::evaluate_k(&model, &ds.x, k, draws, max_pairs, &mut r)?);
            }
            write_file(&out, metrics::reports_to_csv(&reports))
        }
        Command::Embed { model, data, k, out } => {
            let model = load_model(&model)?;
            let ds = load_data(&data)?;
            check_width(&model, &ds)?;
            let z = model.embed(&ds.x, k)?;
            let mut emb = Dataset::new("embedding", z, ds.labels.clone())?;
            emb.preprocessing.clear();
            let text = data::export_csv(&emb).replacen(&header_of(&emb, "x"), &header_of(&emb, "z"), 1);
            write_file(&out, text)
        }
        Command::Reconstruct {
            model,
            data,
            k,
            samples,
            out,
            seed,
        } => {
            if samples == 0 {
                bail!("--samples must be at least 1");
            }
            let model = load_model(&model)?;
            let ds = load_data(&data)?;
            check_width(&model, &ds)?;
            let mut r = rng::substream(seed, &[domain::EVAL]);
            let draws = model.reconstruct_draws(&ds.x, k, samples, &mut r)?;
            let n = ds.n();
            let order: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..samples).map(move |s| (i, s))).collect();
            let x = Matrix::from_fn(n * samples, ds.p(), |row, j| {
                let (i, s) = order[row];
                draws[s].get(i, j)
            });
            let labels = ds.labels.as_ref().map(|l| order.iter().map(|&(i, _)| l[i]).collect());
            let rec = Dataset::new("reconstruction", x, labels)?;
            let bytes = data::encode_dataset(&rec);
            fs::write(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
            println!("n={} p={} sha256={}", rec.n(), rec.p(), sha256_hex(&bytes));
            Ok(())
        }
        Command::Qq {
            model,
            data,
            k,
            column,
            out,
            quantiles,
            seed,
        } => {
            let model = load_model(&model)?;
            let ds = load_data(&data)?;
            check_width(&model, &ds)?;
            if column >= ds.p() {
                bail!("--column {column} out of range for {} columns", ds.p());
            }
            let mut r = rng::substream(seed, &[domain::EVAL]);
            let rec = model.reconstruct(&ds.x, k, &mut r)?;
            let table = metrics::qq_table(&ds.x.col(column), &rec.col(column), quantiles)?;
            write_file(&out, metrics::qq_to_csv(&table))
        }
    }
}

fn train(config: &Path, data_path: &Path, out: &Path, force: bool, quiet: bool) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = RunConfig::parse(&text)?;
    let raw = load_data(data_path)?;
    let resolved = cfg.resolve(raw.p())?;
    prepare_run_dir(out, force)?;
    let ds = data::preprocess(&raw, &resolved.preprocessing)?;

    let report = |e: &EpochRecord| {
        if !quiet {
            let per_k: Vec<String> = e.per_k.iter().map(|(k, v)| format!("k{k}={v:.5}")).collect();
            eprintln!(
                "epoch {:>4}  total {:.6}  {}  ({:.2}s)",
                e.epoch,
                e.total,
                per_k.join(" "),
                e.wall_seconds
            );
        }
    };
    let (model, history) = match resolved.kind {
        ModelKind::Dpa => train_model(&ds, &resolved.arch, &resolved.train, ModelKind::Dpa, report)?,
        ModelKind::OrderedAe => ordered_ae_train_with(&ds, &resolved.arch, &resolved.train, report)?,
    };
    model.save(out)?;
    write_file(&out.join("history.csv"), history.to_csv(resolved.train.schedule.ks()))?;
    write_file(&out.join("config.toml"), resolved.effective.to_toml()?)?;
    if !quiet {
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

/// Creates `dir`, or empties it when `force` is set.
fn prepare_run_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            bail!(
                "{} already exists and is not empty (use --force to overwrite)",
                dir.display()
            );
        }
        if non_empty {
            for name in [
                dpa_core::model::MODEL_JSON,
                dpa_core::model::MODEL_BIN,
                "history.csv",
                "config.toml",
            ] {
                let p = dir.join(name);
                if p.exists() {
                    fs::remove_file(p)?;
                }
            }
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn load_model(dir: &Path) -> Result<DpaModel> {
    DpaModel::load(dir).with_context(|| format!("loading model from {}", dir.display()))
}

fn load_data(path: &Path) -> Result<Dataset> {
    let ds = if path.extension().is_some_and(|e| e == "csv") {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
        data::import_csv(&text, name)
    } else {
        data::load_dataset(path)
    };
    ds.with_context(|| format!("loading data from {}", path.display()))
}

fn check_width(model: &DpaModel, ds: &Dataset) -> Result<()> {
    if model.arch().input_dim != ds.p() {
        bail!(DpaError::Parameter(format!(
            "model expects {} columns, data has {}",
            model.arch().input_dim,
            ds.p()
        )));
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn header_of(ds: &Dataset, prefix: &str) -> String {
    let mut h = (0..ds.p())
        .map(|j| format!("{prefix}{j}"))
        .collect::<Vec<_>>()
        .join(",");
    if ds.labels.is_some() {
        if ds.p() > 0 {
            h.push(',');
        }
        h.push_str("label");
    }
    h
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| anyhow!("not a number: {t:?}")))
        .collect()
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| anyhow!("not a non-negative integer: {t:?}"))
        })
        .collect()
}

fn parse_matrix(s: &str) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = s.split(';').map(parse_floats).collect::<Result<_>>()?;
    Ok(Matrix::from_rows(&rows)?)
}
