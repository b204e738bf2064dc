//! `dpre`: command-line front end for field synthesis, the verification checks and
//! the wandering experiments. Every command prints a JSON report and, with
//! `--out`, also writes it to disk.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dpre::environment::{estimate_field_covariance, FieldCache, GridSpec, SpaceGrid};
use dpre::experiments::{
    annuli_family, estimate_wandering_exponent, event_a_probability, f_hat_probability, f_hat_sweep,
    phi_bound_integral, replay_manifest, run_experiment, threshold_alpha, ExperimentConfig, Regime,
};
use dpre::girsanov::{verify_entropic_bound, verify_martingale, verify_shift_law, EntropicConfig, ShiftLawConfig};
use dpre::{block_covariance, BlockGeometry, Kernel};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "dpre", version, about = "Directed polymer in a correlated Gaussian environment")]
struct Cli {
    /// master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// output file (reports) or directory (`run`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// directory for cached environments
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one environment and store it in the cache
    Simulate {
        #[arg(long, default_value = "polynomial4")]
        kernel: String,
        #[arg(long, default_value_t = 4.0)]
        t: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 0.02)]
        dx: f64,
        /// spatial half extent of the grid
        #[arg(long, default_value_t = 10.0)]
        half_width: f64,
    },
    /// Block covariance lags, or an empirical field-covariance check with `--replicas`
    Cov {
        #[arg(long, default_value = "polynomial4")]
        kernel: String,
        #[arg(long, default_value_t = 16.0)]
        t: f64,
        #[arg(long, default_value_t = 0.55)]
        alpha: f64,
        #[arg(long, default_value_t = 8)]
        trunc: usize,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Girsanov and shift-law checks
    #[command(subcommand)]
    Verify(Verify),
    /// Wandering exponent sweep
    Exponent(ConfigArgs),
    /// Frequency of a non-central block beating block 0
    EventA(ConfigArgs),
    /// Frequency of the F-hat event, optionally over a sweep of M
    Fhat {
        #[command(flatten)]
        config: ConfigArgs,
        /// comma-separated list of M values, swept at the largest horizon
        #[arg(long, value_delimiter = ',')]
        sweep_trunc: Option<Vec<usize>>,
    },
    /// Disjoint annuli Q_q(m) Z*_m inside Z*_M
    Annuli {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        trunc: usize,
    },
    /// Largest admissible exponent for a given tail exponent
    Threshold {
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        weakened: bool,
    },
    /// The Phi integral bounding 1/2 - P(D+)
    PhiBound {
        #[arg(long)]
        m: u32,
        #[arg(long)]
        q0: u64,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
    },
    /// Run every experiment and write CSV, JSON report and manifest
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// replay the configuration stored in a manifest instead
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Verify {
    /// Martingale property and the entropic bound under common random numbers
    Girsanov {
        #[arg(long, default_value = "polynomial4")]
        kernel: String,
        #[arg(long, default_value_t = 16.0)]
        t: f64,
        #[arg(long, default_value_t = 0.55)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        k: i64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 0.02)]
        dt: f64,
        #[arg(long, default_value_t = 4)]
        trunc: usize,
        #[arg(long, default_value_t = 2000)]
        n_paths: usize,
        #[arg(long, default_value_t = 20)]
        n_fields: usize,
    },
    /// KS comparison of shifted and unshifted environments
    ShiftLaw {
        #[arg(long, default_value = "polynomial4")]
        kernel: String,
        #[arg(long, default_value_t = 16.0)]
        t: f64,
        #[arg(long, default_value_t = 0.55)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        k: i64,
        #[arg(long, default_value_t = 0.02)]
        dt: f64,
        #[arg(long, default_value_t = 300)]
        replicas: usize,
    },
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML experiment configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// kernel name when no configuration file is given
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long, value_delimiter = ',')]
    t_list: Option<Vec<f64>>,
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long)]
    n_fields: Option<usize>,
    #[arg(long)]
    trunc: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
}

impl ConfigArgs {
    fn load(&self, seed: Option<u64>) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.kernel) {
            (Some(path), _) => ExperimentConfig::from_file(path)?,
            (None, Some(k)) => ExperimentConfig::with_kernel(k),
            (None, None) => bail!("give --config or --kernel"),
        };
        if let Some(k) = &self.kernel {
            cfg.kernel = k.clone();
        }
        if let Some(v) = &self.t_list {
            cfg.t_list = v.clone();
        }
        if let Some(v) = self.n_paths {
            cfg.n_paths = v;
        }
        if let Some(v) = self.n_fields {
            cfg.n_fields = v;
        }
        if let Some(v) = self.trunc {
            cfg.trunc = v;
        }
        if let Some(v) = self.m {
            cfg.m = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(p) = out {
        std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    // a closed pipe (`dpre ... | head`) is not an error
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match cli.command {
        Command::Simulate { kernel, t, dt, dx, half_width } => {
            let kernel = Kernel::by_name(&kernel)?;
            let spec = GridSpec::for_horizon(SpaceGrid::centered(half_width, dx)?, t, dt)?;
            let dir = cli.cache_dir.unwrap_or_else(|| PathBuf::from("field-cache"));
            let cache = FieldCache::new(&dir)?;
            let field = cache.load_or_sample(&kernel, &spec, seed)?;
            let path = cache.path_for(&kernel, &spec, seed);
            #[derive(Serialize)]
            struct Summary {
                path: PathBuf,
                rows: usize,
                cols: usize,
                dt: f64,
                dx: f64,
                seed: u64,
            }
            emit(&Summary { path, rows: field.n_rows, cols: field.grid.n, dt, dx, seed }, out)
        }
        Command::Cov { kernel, t, alpha, trunc, replicas } => {
            let kernel = Kernel::by_name(&kernel)?;
            match replicas {
                None => emit(&block_covariance(&kernel, &BlockGeometry::new(t, alpha, trunc)?)?, out),
                Some(r) => {
                    let spec = GridSpec::for_horizon(SpaceGrid::centered(5.0, 0.1)?, t, 0.01 * t)?;
                    let lags: Vec<usize> = (0..10).collect();
                    emit(&estimate_field_covariance(&kernel, &spec, &lags, r, seed, 3.0)?, out)
                }
            }
        }
        Command::Verify(Verify::Girsanov { kernel, t, alpha, k, beta, dt, trunc, n_paths, n_fields }) => {
            let kernel = Kernel::by_name(&kernel)?;
            let martingale = verify_martingale(t, alpha, k, dt, 10_000, seed, 3.0)?;
            let cfg = EntropicConfig { t, alpha, k, beta, dt, refine: 1, trunc, tau: 0.5, n_paths, n_fields, seed };
            let entropic = verify_entropic_bound(&kernel, &cfg)?;
            #[derive(Serialize)]
            struct Both {
                martingale: dpre::girsanov::MartingaleReport,
                entropic: dpre::girsanov::EntropicReport,
            }
            emit(&Both { martingale, entropic }, out)
        }
        Command::Verify(Verify::ShiftLaw { kernel, t, alpha, k, dt, replicas }) => {
            let kernel = Kernel::by_name(&kernel)?;
            let cfg = ShiftLawConfig { t, alpha, k, dt, refine: 1, replicas, level: 0.01, seed };
            emit(&verify_shift_law(&kernel, &cfg)?, out)
        }
        Command::Exponent(args) => emit(&estimate_wandering_exponent(&args.load(cli.seed)?)?, out),
        Command::EventA(args) => emit(&event_a_probability(&args.load(cli.seed)?)?, out),
        Command::Fhat { config, sweep_trunc } => {
            let cfg = config.load(cli.seed)?;
            match sweep_trunc {
                Some(ms) => emit(&f_hat_sweep(&cfg, cfg.t_list.len() - 1, &ms)?, out),
                None => emit(&f_hat_probability(&cfg)?, out),
            }
        }
        Command::Annuli { m, trunc } => emit(&annuli_family(m, trunc)?, out),
        Command::Threshold { theta, weakened } => {
            let regime = if weakened { Regime::Weakened } else { Regime::Strict };
            emit(&threshold_alpha(theta, regime)?, out)
        }
        Command::PhiBound { m, q0, kappa } => emit(&phi_bound_integral(m, q0, kappa)?, out),
        Command::Run { config, manifest } => {
            let dir = out.map(Path::to_path_buf);
            let artifacts = match manifest {
                Some(m) => replay_manifest(&m, dir.as_deref().context("--out is required with --manifest")?)?,
                None => run_experiment(&config.load(cli.seed)?, dir.as_deref())?,
            };
            println!("{}", artifacts.manifest.display());
            Ok(())
        }
    }
}
