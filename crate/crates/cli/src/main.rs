//! `dmtl`: end-to-end pipeline for duration-aware candidate generation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error,
//! 3 acceptance failure (bench only).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dmtl_cli::commands::{self, QuerySource};
use dmtl_cli::config::{load_config, resolve_out_dir};

#[derive(Parser)]
#[command(
    name = "dmtl",
    about = "Duration-aware candidate generation: synthetic data, multi-task teacher, distilled double-tower student, baselines, evaluation and top-k retrieval",
    long_about = None,
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; every key is optional and an empty file means all
    /// defaults. Defaults match `config.example.toml` at the repo root.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<dmtl_cli::config::RunConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset, ground-truth sidecar and catalogs.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (default: $DMTL_OUT_DIR or ./dmtl-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the distilled model and/or baselines on a generated dataset.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of dmtl,dssm-regression,dssm-classification,dssm-click.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
    },
    /// Offline AUC and simulated serving metrics for trained models.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Directory with the model checkpoints.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build an item index from a student checkpoint.
    BuildIndex {
        /// Student checkpoint JSON.
        #[arg(long)]
        checkpoint: PathBuf,
        /// items.jsonl catalog from gen-data.
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Build the pruned (IVF) variant with this many k-means cells.
        #[arg(long)]
        cells: Option<usize>,
        #[arg(long, default_value_t = 12345)]
        kmeans_seed: u64,
    },
    /// Top-k inner-product lookup against a saved index.
    Query {
        #[arg(long)]
        index: PathBuf,
        /// Inline query vector: comma-separated floats.
        #[arg(long, value_delimiter = ',', conflicts_with = "user")]
        vector: Vec<f64>,
        /// Query by user id (needs --checkpoint and --users).
        #[arg(long, requires = "checkpoint", requires = "users")]
        user: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// users.jsonl catalog from gen-data.
        #[arg(long)]
        users: Option<PathBuf>,
        #[arg(short, default_value_t = 10)]
        k: usize,
        /// Probe count for pruned search (requires an IVF index).
        #[arg(long)]
        nprobe: Option<usize>,
    },
    /// Full seed-replicated pipeline with ordering/margin checks.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the number of seed replications.
        #[arg(long)]
        seeds: Option<u64>,
        /// Skip the reproducibility double run of the first seed.
        #[arg(long)]
        no_verify_repro: bool,
    },
}

fn run() -> anyhow::Result<i32> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            if e.use_stderr() {
                eprint!("{e}");
                return Ok(1);
            }
            print!("{e}");
            return Ok(0);
        }
    };

    match cli.command {
        Command::GenData { config, out } => {
            let cfg = config.load()?;
            let out = resolve_out_dir(out);
            commands::cmd_gen_data(&cfg, &out)?;
            Ok(0)
        }
        Command::Train {
            config,
            data,
            out,
            models,
        } => {
            let cfg = config.load()?;
            commands::ensure_exists(&data, "data directory")?;
            let out = resolve_out_dir(out);
            commands::cmd_train(&cfg, &data, &out, &models)?;
            Ok(0)
        }
        Command::Evaluate {
            config,
            data,
            models,
            out,
        } => {
            let cfg = config.load()?;
            commands::ensure_exists(&data, "data directory")?;
            commands::ensure_exists(&models, "models directory")?;
            let out = resolve_out_dir(out);
            commands::cmd_evaluate(&cfg, &data, &models, &out)?;
            Ok(0)
        }
        Command::BuildIndex {
            checkpoint,
            items,
            out,
            cells,
            kmeans_seed,
        } => {
            commands::ensure_exists(&checkpoint, "checkpoint")?;
            commands::ensure_exists(&items, "items catalog")?;
            commands::cmd_build_index(&checkpoint, &items, &out, cells, kmeans_seed)?;
            Ok(0)
        }
        Command::Query {
            index,
            vector,
            user,
            checkpoint,
            users,
            k,
            nprobe,
        } => {
            commands::ensure_exists(&index, "index")?;
            let source = if let Some(user) = user {
                QuerySource::User {
                    user,
                    checkpoint: checkpoint.expect("clap enforces --checkpoint"),
                    users_file: users.expect("clap enforces --users"),
                }
            } else if !vector.is_empty() {
                QuerySource::Vector(vector)
            } else {
                anyhow::bail!("query needs either --vector or --user");
            };
            commands::cmd_query(&index, source, k, nprobe)?;
            Ok(0)
        }
        Command::Bench {
            config,
            out,
            seeds,
            no_verify_repro,
        } => {
            let mut cfg = config.load()?;
            if let Some(s) = seeds {
                cfg.bench.seeds = s;
                cfg.bench.min_ordered_seeds = cfg.bench.min_ordered_seeds.min(s);
            }
            if no_verify_repro {
                cfg.bench.verify_reproducibility = false;
            }
            cfg.validate()?;
            let out = resolve_out_dir(out);
            let report = commands::cmd_bench(&cfg, &out)?;
            Ok(if report.passed { 0 } else { 3 })
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::classify_exit(&err) as u8)
        }
    }
}
