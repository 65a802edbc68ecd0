//! Stage functions behind the command-line tool, plus the end-to-end run.
//!
//! Every stage writes its artifacts and a sidecar manifest carrying the seed,
//! a SHA-256 of the resolved stage configuration, and a creation time. The
//! time appears only in manifests, so all other outputs are reproducible
//! byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{self, DiagnosticsReport};
use crate::draws::{read_draws, write_draws, PosteriorDraws};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_articles, read_panel_csv, write_articles_jsonl, write_csv_rows, write_panel_csv};
use crate::mcmc::{chain_rng, run_chains, RunConfig};
use crate::model::{ModelSpec, Variant};
use crate::panel::{
    aggregate, filter_categories, panel_summary, threshold_relevance, AggregateReport, DroppedCategory, PanelSummary,
    SentimentPanel, WindowingConfig, DEFAULT_MAX_EMPTY_FRACTION, DEFAULT_TAU,
};
use crate::ppc::{self, PpcReport};
use crate::synth::{self, SynthConfig};
use crate::validation::{self, RegressionResult};

pub const MANIFEST_NAME: &str = "manifest.json";

/// RNG streams derived from the run seed; chains use streams `0..chains`.
const SIMULATION_STREAM: usize = 1 << 20;
const PPC_STREAM: usize = (1 << 20) + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub created_at: String,
    pub artifacts: Vec<ArtifactEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON form of a configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("configuration serializes"))
}

/// Write `manifest` next to the artifacts. `base` is the directory artifact
/// paths are reported relative to.
fn write_manifest<T: Serialize>(
    manifest_path: &Path,
    base: &Path,
    stage: &str,
    seed: Option<u64>,
    config: &T,
    artifacts: &[PathBuf],
) -> Result<()> {
    let mut entries = Vec::with_capacity(artifacts.len());
    for p in artifacts {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        let rel = p.strip_prefix(base).unwrap_or(p);
        entries.push(ArtifactEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&bytes),
        });
    }
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        stage: stage.into(),
        seed,
        config_sha256: config_hash(config),
        created_at: chrono::Utc::now().to_rfc3339(),
        artifacts: entries,
    };
    write_json(manifest_path, &m)
}

/// Manifest location for a single-file output: `<file>.manifest.json`.
pub fn sidecar_manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_file_manifest<T: Serialize>(out: &Path, stage: &str, seed: Option<u64>, config: &T) -> Result<()> {
    let base = out.parent().unwrap_or(Path::new(""));
    write_manifest(&sidecar_manifest_path(out), base, stage, seed, config, &[out.to_path_buf()])
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// Files under `dir`, sorted, excluding manifests.
fn list_artifacts(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(MANIFEST_NAME) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Read a TOML configuration file.
pub fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::parse(path, e))
}

/// Machine-readable error report for stderr.
pub fn error_json(e: &Error) -> String {
    let kind = match e {
        Error::InvalidInput(_) => "invalid_input",
        Error::Config(_) => "config",
        Error::Dimension(_) => "dimension",
        Error::NoCategoriesLeft { .. } => "no_categories_left",
        Error::RankDeficient { .. } => "rank_deficient",
        Error::NonFiniteInit { .. } => "non_finite_init",
        Error::Chain { .. } => "chain_failure",
        Error::UnknownName(_) => "unknown_name",
        Error::Format(_) => "format",
        Error::Io { .. } => "io",
        Error::Parse { .. } => "parse",
    };
    let path = match e {
        Error::Io { path, .. } | Error::Parse { path, .. } => Some(path.display().to_string()),
        _ => None,
    };
    serde_json::json!({
        "error": kind,
        "message": e.to_string(),
        "path": path,
        "exit_code": exit_code(e),
    })
    .to_string()
}

/// 2 for configuration and input problems, 1 for failures inside a stage.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() {
        2
    } else {
        1
    }
}

// ----- aggregate -----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateConfig {
    pub articles: PathBuf,
    pub categories: Vec<String>,
    pub windowing: WindowingConfig,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_max_empty")]
    pub max_empty_fraction: f64,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_max_empty() -> f64 {
    DEFAULT_MAX_EMPTY_FRACTION
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateOutcome {
    #[serde(skip)]
    pub panel: SentimentPanel,
    pub report: AggregateReport,
    pub retained_after_threshold: usize,
    pub dropped: Vec<DroppedCategory>,
    pub summary: PanelSummary,
}

/// Threshold, window, aggregate and filter articles into a panel.
pub fn build_panel(cfg: &AggregateConfig) -> Result<AggregateOutcome> {
    if !(0.0..=1.0).contains(&cfg.tau) {
        return Err(Error::Config(format!("tau {} outside [0, 1]", cfg.tau)));
    }
    let records = read_articles(&cfg.articles, &cfg.categories)?;
    let kept = threshold_relevance(&records, cfg.tau);
    let (panel, mut report) = aggregate(&kept, &cfg.windowing, &cfg.categories)?;
    report.records = records.len();
    let (panel, dropped) = filter_categories(&panel, cfg.max_empty_fraction)?;
    for d in &dropped {
        log::warn!("dropping category {} ({:.1}% empty windows)", d.category, 100.0 * d.empty_fraction);
    }
    Ok(AggregateOutcome {
        summary: panel_summary(&panel),
        panel,
        report,
        retained_after_threshold: kept.len(),
        dropped,
    })
}

/// `aggregate` subcommand: panel CSV plus `<out>.summary.json`.
pub fn aggregate_stage(cfg: &AggregateConfig, out: &Path) -> Result<AggregateOutcome> {
    let outcome = build_panel(cfg)?;
    ensure_parent(out)?;
    write_panel_csv(out, &outcome.panel)?;
    let summary_path = out.with_extension("summary.json");
    write_json(&summary_path, &outcome)?;
    let base = out.parent().unwrap_or(Path::new(""));
    write_manifest(
        &sidecar_manifest_path(out),
        base,
        "aggregate",
        None,
        cfg,
        &[out.to_path_buf(), summary_path],
    )?;
    Ok(outcome)
}

// ----- simulate -----

/// Synthetic panel and truth. With `emit_articles`, articles are generated
/// and aggregated so the panel matches the article file.
pub fn simulate(cfg: &SynthConfig, seed: u64, emit_articles: bool) -> Result<Simulated> {
    let mut rng: ChaCha8Rng = chain_rng(seed, SIMULATION_STREAM);
    if emit_articles {
        let a = synth::generate_articles(cfg, &mut rng)?;
        let (panel, _) = aggregate(&a.records, &cfg.windowing(), &cfg.categories)?;
        Ok(Simulated {
            panel,
            x: a.x,
            articles: Some(a.records),
        })
    } else {
        let s = synth::generate_panel(cfg, &mut rng)?;
        Ok(Simulated {
            panel: s.panel,
            x: s.x,
            articles: None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub panel: SentimentPanel,
    pub x: nalgebra::DMatrix<f64>,
    pub articles: Option<Vec<crate::panel::ArticleRecord>>,
}

#[derive(Serialize)]
struct SimulateManifestConfig<'a> {
    synth: &'a SynthConfig,
    emit_articles: bool,
}

/// `simulate` subcommand: `panel.csv`, `truth.csv`, `truth_params.json` and
/// optionally `articles.jsonl` under `out`.
pub fn simulate_stage(cfg: &SynthConfig, seed: u64, emit_articles: bool, out: &Path) -> Result<Simulated> {
    let sim = simulate(cfg, seed, emit_articles)?;
    create_dir(out)?;
    write_panel_csv(&out.join("panel.csv"), &sim.panel)?;
    synth::write_truth_csv(&out.join("truth.csv"), &sim.panel, &sim.x)?;
    write_json(&out.join("truth_params.json"), cfg)?;
    if let Some(a) = &sim.articles {
        write_articles_jsonl(&out.join("articles.jsonl"), a, &cfg.categories)?;
    }
    let arts = list_artifacts(out)?;
    let mc = SimulateManifestConfig { synth: cfg, emit_articles };
    write_manifest(&out.join(MANIFEST_NAME), out, "simulate", Some(seed), &mc, &arts)?;
    Ok(sim)
}

// ----- fit -----

#[derive(Serialize)]
struct FitManifestConfig<'a> {
    variant: Variant,
    run: &'a RunConfig,
    panel_sha256: String,
}

pub fn fit(panel: &SentimentPanel, variant: Variant, run: &RunConfig) -> Result<PosteriorDraws> {
    let spec = ModelSpec::for_panel(variant, panel)?;
    run_chains(panel, &spec, run)
}

/// `fit` subcommand: a draws store in `out`.
pub fn fit_stage(panel_path: &Path, variant: Variant, run: &RunConfig, out: &Path) -> Result<PosteriorDraws> {
    let panel = read_panel_csv(panel_path)?;
    let draws = fit(&panel, variant, run)?;
    write_draws(out, &draws, false)?;
    let panel_bytes = fs::read(panel_path).map_err(|e| Error::io(panel_path, e))?;
    let mc = FitManifestConfig {
        variant,
        run,
        panel_sha256: sha256_hex(&panel_bytes),
    };
    write_manifest(&out.join(MANIFEST_NAME), out, "fit", Some(run.base_seed), &mc, &list_artifacts(out)?)?;
    Ok(draws)
}

// ----- diagnose -----

/// `diagnose` subcommand: the report as JSON, optionally with trace CSV.
pub fn diagnose_stage(draws_dir: &Path, names: &[String], out: &Path, traces: Option<&Path>) -> Result<DiagnosticsReport> {
    let draws = read_draws(draws_dir)?;
    let report = diagnostics::diagnose(&draws, names)?;
    ensure_parent(out)?;
    write_json(out, &report)?;
    write_file_manifest(out, "diagnose", None, &names)?;
    if let Some(t) = traces {
        let names = if names.is_empty() { draws.param_names() } else { names.to_vec() };
        ensure_parent(t)?;
        diagnostics::write_traces(t, &draws, &names)?;
        write_file_manifest(t, "traces", None, &names)?;
    }
    Ok(report)
}

// ----- ppc -----

pub fn run_ppc(draws: &PosteriorDraws, panel: &SentimentPanel, seed: u64) -> Result<PpcReport> {
    let mut rng = chain_rng(seed, PPC_STREAM);
    let reps = ppc::replicate(draws, panel, &mut rng)?;
    ppc::ppc_summary(&reps, panel)
}

/// `ppc` subcommand.
pub fn ppc_stage(draws_dir: &Path, panel_path: &Path, seed: u64, out: &Path) -> Result<PpcReport> {
    let draws = read_draws(draws_dir)?;
    let panel = read_panel_csv(panel_path)?;
    let report = run_ppc(&draws, &panel, seed)?;
    ensure_parent(out)?;
    ppc::write_ppc_csv(out, &report)?;
    write_file_manifest(out, "ppc", Some(seed), &seed)?;
    Ok(report)
}

// ----- validate -----

pub fn run_validation(hetero: &PosteriorDraws, homo: &PosteriorDraws, panel: &SentimentPanel) -> Result<RegressionResult> {
    if !hetero.variant.is_heteroscedastic() || homo.variant.is_heteroscedastic() {
        return Err(Error::InvalidInput(format!(
            "validation needs a heteroscedastic and a homoscedastic fit, got {} and {}",
            hetero.variant, homo.variant
        )));
    }
    let mut records = validation::interval_widths(hetero, panel)?;
    records.extend(validation::interval_widths(homo, panel)?);
    validation::fit_width_regression(&records, &panel.categories)
}

fn write_regression(out: &Path, res: &RegressionResult) -> Result<()> {
    validation::write_table1_csv(out, res)?;
    write_json(&out.with_extension("json"), res)
}

/// `validate` subcommand: the four displayed terms as CSV plus the full fit as JSON.
pub fn validate_stage(hetero_dir: &Path, homo_dir: &Path, panel_path: &Path, out: &Path) -> Result<RegressionResult> {
    let hetero = read_draws(hetero_dir)?;
    let homo = read_draws(homo_dir)?;
    let panel = read_panel_csv(panel_path)?;
    let res = run_validation(&hetero, &homo, &panel)?;
    ensure_parent(out)?;
    write_regression(out, &res)?;
    let base = out.parent().unwrap_or(Path::new(""));
    write_manifest(
        &sidecar_manifest_path(out),
        base,
        "validate",
        None,
        &(hetero.variant, homo.variant),
        &[out.to_path_buf(), out.with_extension("json")],
    )?;
    Ok(res)
}

// ----- export-plots -----

fn file_stem_for(category: &str) -> String {
    category
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// One CSV per category: `window_start,y_obs,n,x_median,x_q05,x_q95`.
pub fn export_plot_data(draws: &PosteriorDraws, panel: &SentimentPanel, out: &Path) -> Result<Vec<PathBuf>> {
    if draws.windows != panel.windows() || draws.categories != panel.categories {
        return Err(Error::Dimension("draws and panel disagree in shape or labels".into()));
    }
    let q = draws.state_quantiles()?;
    create_dir(out)?;
    let mut paths = Vec::new();
    for (j, cat) in panel.categories.iter().enumerate() {
        let rows: Vec<Vec<String>> = (0..panel.windows())
            .map(|t| {
                let c = q[j][t];
                vec![
                    panel.window_starts[t].to_string(),
                    fmt_f64(panel.y[(t, j)]),
                    fmt_f64(panel.n[(t, j)]),
                    fmt_f64(c[1]),
                    fmt_f64(c[0]),
                    fmt_f64(c[2]),
                ]
            })
            .collect();
        let path = out.join(format!("{}.csv", file_stem_for(cat)));
        write_csv_rows(&path, &["window_start", "y_obs", "n", "x_median", "x_q05", "x_q95"], &rows)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn export_plots_stage(draws_dir: &Path, panel_path: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let draws = read_draws(draws_dir)?;
    let panel = read_panel_csv(panel_path)?;
    let paths = export_plot_data(&draws, &panel, out)?;
    write_manifest(&out.join(MANIFEST_NAME), out, "export-plots", None, &draws.variant, &paths)?;
    Ok(paths)
}

// ----- full pipeline -----

/// Where the panel comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputConfig {
    Articles(AggregateConfig),
    Panel { path: PathBuf },
    Synthetic {
        #[serde(default)]
        synth: SynthConfig,
        #[serde(default)]
        emit_articles: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub input: InputConfig,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub run: RunConfig,
}

fn default_seed() -> u64 {
    RunConfig::default().base_seed
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Hierarchical, Variant::HomoscedasticHierarchical]
}

impl PipelineConfig {
    /// Desk-scale defaults on the synthetic recovery fixture.
    pub fn synthetic(output_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            output_dir: output_dir.into(),
            seed,
            input: InputConfig::Synthetic {
                synth: SynthConfig::default(),
                emit_articles: false,
            },
            variants: default_variants(),
            run: RunConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("at least one variant must be fitted".into()));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].contains(v) {
                return Err(Error::Config(format!("variant {v} listed twice")));
            }
        }
        if let InputConfig::Panel { path } = &self.input {
            if !path.exists() {
                return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }
        if let InputConfig::Articles(a) = &self.input {
            if !a.articles.exists() {
                return Err(Error::io(&a.articles, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }
        self.run.validate()
    }

    /// Run configuration with the pipeline seed applied.
    pub fn seeded_run(&self) -> RunConfig {
        RunConfig {
            base_seed: self.seed,
            ..self.run.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub diagnostics: DiagnosticsReport,
    pub ppc: Option<PpcReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutcome {
    pub variants: Vec<VariantOutcome>,
    pub regression: Option<RegressionResult>,
    pub artifacts: Vec<PathBuf>,
}

/// aggregate or simulate, then fit, diagnose, check and export each variant,
/// and run the width regression when both arms were fitted.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    create_dir(out)?;
    let panel = match &cfg.input {
        InputConfig::Articles(a) => {
            let o = build_panel(a)?;
            write_json(&out.join("panel_summary.json"), &o)?;
            o.panel
        }
        InputConfig::Panel { path } => read_panel_csv(path)?,
        InputConfig::Synthetic { synth, emit_articles } => {
            let sim = simulate(synth, cfg.seed, *emit_articles)?;
            synth::write_truth_csv(&out.join("truth.csv"), &sim.panel, &sim.x)?;
            if let Some(a) = &sim.articles {
                write_articles_jsonl(&out.join("articles.jsonl"), a, &synth.categories)?;
            }
            sim.panel
        }
    };
    write_panel_csv(&out.join("panel.csv"), &panel)?;
    let run = cfg.seeded_run();
    let mut outcomes = Vec::new();
    let mut fitted: Vec<PosteriorDraws> = Vec::new();
    for &variant in &cfg.variants {
        log::info!("fitting {variant}");
        let dir = out.join(variant.name());
        let draws = fit(&panel, variant, &run)?;
        write_draws(&dir.join("draws"), &draws, false)?;
        let report = diagnostics::diagnose(&draws, &[])?;
        write_json(&dir.join("diagnostics.json"), &report)?;
        if !report.flagged.is_empty() {
            log::warn!("{variant}: split R-hat above {} for {:?}", report.threshold, report.flagged);
        }
        let ppc_report = if draws.has_states() {
            let r = run_ppc(&draws, &panel, cfg.seed)?;
            ppc::write_ppc_csv(&dir.join("ppc.csv"), &r)?;
            Some(r)
        } else {
            None
        };
        if draws.has_states() || draws.has_state_summary() {
            export_plot_data(&draws, &panel, &dir.join("plots"))?;
        }
        outcomes.push(VariantOutcome {
            variant,
            diagnostics: report,
            ppc: ppc_report,
        });
        fitted.push(draws);
    }
    let hetero = fitted.iter().find(|d| d.variant.is_heteroscedastic());
    let homo = fitted.iter().find(|d| !d.variant.is_heteroscedastic());
    let regression = match (hetero, homo) {
        (Some(h), Some(m)) if panel.n_categories() >= 2 => {
            let res = run_validation(h, m, &panel)?;
            write_regression(&out.join("table1.csv"), &res)?;
            Some(res)
        }
        _ => None,
    };
    let artifacts = list_artifacts(out)?;
    write_manifest(&out.join(MANIFEST_NAME), out, "run", Some(cfg.seed), cfg, &artifacts)?;
    Ok(PipelineOutcome {
        variants: outcomes,
        regression,
        artifacts,
    })
}
