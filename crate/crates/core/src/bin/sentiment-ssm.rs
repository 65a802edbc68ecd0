use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use sentiment_ssm::error::{Error, Result};
use sentiment_ssm::mcmc::RunConfig;
use sentiment_ssm::model::Variant;
use sentiment_ssm::panel::{WindowingConfig, DEFAULT_MAX_EMPTY_FRACTION, DEFAULT_TAU};
use sentiment_ssm::pipeline::{self, AggregateConfig, PipelineConfig};
use sentiment_ssm::synth::SynthConfig;

#[derive(Parser)]
#[command(name = "sentiment-ssm", version, about = "State-space models for news-sentiment panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a panel CSV from an article file.
    Aggregate(AggregateArgs),
    /// Generate a synthetic panel with known truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        emit_articles: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model variant and write a draws store.
    Fit {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, default_value = "hierarchical")]
        variant: Variant,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split R-hat and ESS for a draws store.
    Diagnose {
        #[arg(long)]
        draws: PathBuf,
        /// Scalars to check, e.g. `theta[1]` or `x[3,2]`; all parameters by default.
        #[arg(long, value_delimiter = ',')]
        names: Vec<String>,
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior predictive checks.
    Ppc {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interval-width regression across a heteroscedastic and a homoscedastic fit.
    Validate {
        #[arg(long)]
        draws_hetero: PathBuf,
        #[arg(long)]
        draws_homo: PathBuf,
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-category CSVs of observations and latent-state intervals.
    ExportPlots {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline from a TOML configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        paper_scale: bool,
    },
}

#[derive(Args)]
struct AggregateArgs {
    /// TOML with the full aggregation configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    articles: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    categories: Vec<String>,
    #[arg(long)]
    start_date: Option<NaiveDate>,
    #[arg(long, default_value_t = 7)]
    window_length: u32,
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_EMPTY_FRACTION)]
    max_empty_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// TOML with RunConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    state_storage: Option<String>,
    #[arg(long)]
    serial: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, self.paper_scale) {
            (Some(p), _) => pipeline::load_toml(p)?,
            (None, true) => RunConfig::paper_scale(),
            (None, false) => RunConfig::default(),
        };
        if self.paper_scale {
            let p = RunConfig::paper_scale();
            cfg.iterations = p.iterations;
            cfg.burn_in = p.burn_in;
            cfg.thin = p.thin;
        }
        if let Some(v) = self.seed {
            cfg.base_seed = v;
        }
        if let Some(v) = self.chains {
            cfg.chains = v;
        }
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.burn_in {
            cfg.burn_in = v;
        }
        if let Some(v) = self.thin {
            cfg.thin = v;
        }
        if let Some(s) = &self.state_storage {
            cfg.state_storage = serde_json::from_value(serde_json::Value::String(s.clone()))
                .map_err(|_| Error::Config(format!("unknown state storage `{s}` (full, summary, none)")))?;
        }
        if self.serial {
            cfg.parallel = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl AggregateArgs {
    fn resolve(&self) -> Result<AggregateConfig> {
        if let Some(p) = &self.config {
            let mut cfg: AggregateConfig = pipeline::load_toml(p)?;
            if let Some(a) = &self.articles {
                cfg.articles = a.clone();
            }
            return Ok(cfg);
        }
        let missing = |what: &str| Error::Config(format!("--{what} is required without --config"));
        let articles = self.articles.clone().ok_or_else(|| missing("articles"))?;
        if self.categories.is_empty() {
            return Err(missing("categories"));
        }
        let windowing = WindowingConfig::new(
            self.start_date.ok_or_else(|| missing("start-date"))?,
            self.window_length,
            self.windows.ok_or_else(|| missing("windows"))?,
        )?;
        Ok(AggregateConfig {
            articles,
            categories: self.categories.clone(),
            windowing,
            tau: self.tau,
            max_empty_fraction: self.max_empty_fraction,
        })
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Aggregate(args) => {
            let cfg = args.resolve()?;
            let o = pipeline::aggregate_stage(&cfg, &args.out)?;
            log::info!("{} windows x {} categories", o.summary.windows, o.summary.categories);
        }
        Command::Simulate { config, seed, emit_articles, out } => {
            let cfg: SynthConfig = match config {
                Some(p) => pipeline::load_toml(&p)?,
                None => SynthConfig::default(),
            };
            pipeline::simulate_stage(&cfg, seed, emit_articles, &out)?;
        }
        Command::Fit { panel, variant, run, out } => {
            pipeline::fit_stage(&panel, variant, &run.resolve()?, &out)?;
        }
        Command::Diagnose { draws, names, traces, out } => {
            let r = pipeline::diagnose_stage(&draws, &names, &out, traces.as_deref())?;
            println!("max split R-hat {:.4}, min ESS {:.1}, flagged {}", r.max_rhat, r.min_ess, r.flagged.len());
        }
        Command::Ppc { draws, panel, seed, out } => {
            pipeline::ppc_stage(&draws, &panel, seed, &out)?;
        }
        Command::Validate { draws_hetero, draws_homo, panel, out } => {
            let r = pipeline::validate_stage(&draws_hetero, &draws_homo, &panel, &out)?;
            println!("N = {}, adjusted R^2 = {:.4}", r.n_obs, r.adj_r2);
        }
        Command::ExportPlots { draws, panel, out } => {
            pipeline::export_plots_stage(&draws, &panel, &out)?;
        }
        Command::Run { config, seed, out, paper_scale } => {
            let mut cfg: PipelineConfig = pipeline::load_toml(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if paper_scale {
                let p = RunConfig::paper_scale();
                cfg.run.iterations = p.iterations;
                cfg.run.burn_in = p.burn_in;
                cfg.run.thin = p.thin;
            }
            let o = pipeline::run_pipeline(&cfg)?;
            for v in &o.variants {
                println!("{}: max split R-hat {:.4}", v.variant, v.diagnostics.max_rhat);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", pipeline::error_json(&e));
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
