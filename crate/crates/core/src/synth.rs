//! Synthetic panels and article streams drawn from the model's own
//! generative law, with the latent truth returned alongside.

use std::path::Path;

use chrono::{NaiveDate, NaiveTime, TimeZone, Utc};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv_rows};
use crate::model::{Hyper, Hyperpriors, ParamState};
use crate::panel::{ArticleRecord, SentimentPanel, WindowingConfig, DEFAULT_TAU};

/// Smallest information weight the generator will emit; draws below it are
/// raised to it so every generated article survives the default threshold.
pub const MIN_WEIGHT: f64 = DEFAULT_TAU;

/// How `n_tj` is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum NLaw {
    Constant { value: f64 },
    /// `base * (1 + amplitude * sin(2 pi (t + phase_j) / period))`, with the
    /// phase shifted by one window per category.
    Seasonal { base: f64, amplitude: f64, period: f64 },
    /// Independent log-normal draws with the given mean and coefficient of variation.
    LogNormal { mean: f64, cv: f64 },
}

impl NLaw {
    fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let ok = match *self {
            NLaw::Constant { value } => pos(value),
            NLaw::Seasonal { base, amplitude, period } => pos(base) && (0.0..1.0).contains(&amplitude) && pos(period),
            NLaw::LogNormal { mean, cv } => pos(mean) && pos(cv),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid n law {self:?}")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, t: usize, j: usize, rng: &mut R) -> f64 {
        let n = match *self {
            NLaw::Constant { value } => value,
            NLaw::Seasonal { base, amplitude, period } => {
                base * (1.0 + amplitude * (std::f64::consts::TAU * (t + j) as f64 / period).sin())
            }
            NLaw::LogNormal { mean, cv } => {
                let s2 = (1.0 + cv * cv).ln();
                LogNormal::new(mean.ln() - 0.5 * s2, s2.sqrt()).expect("validated").sample(rng)
            }
        };
        n.max(MIN_WEIGHT)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub categories: Vec<String>,
    pub windows: usize,
    pub window_start_date: NaiveDate,
    pub window_length_days: u32,
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma_eta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub n_law: NLaw,
    /// Probability that a cell receives no articles at all.
    pub missing_fraction: f64,
    /// Draw observations with variance `sigma^2` instead of `sigma^2 / n`.
    pub homoscedastic: bool,
    /// Fixed article count per cell for [`generate_articles`]; by default
    /// `max(1, ceil(n))` articles share the weight.
    pub articles_per_cell: Option<usize>,
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

impl Default for SynthConfig {
    /// The parameter-recovery fixture: six categories, two years of weeks.
    fn default() -> Self {
        let j = 6;
        Self {
            categories: (1..=j).map(|i| format!("cat{i}")).collect(),
            windows: 104,
            window_start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            window_length_days: 7,
            theta: vec![0.85; j],
            mu: linspace(-0.3, 0.3, j),
            sigma_eta: vec![0.05; j],
            sigma: linspace(0.10, 0.30, j),
            n_law: NLaw::LogNormal { mean: 15.0, cv: 0.8 },
            missing_fraction: 0.0,
            homoscedastic: false,
            articles_per_cell: None,
        }
    }
}

impl SynthConfig {
    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.categories.len();
        if j == 0 || self.windows < 2 {
            return Err(Error::Config("need at least one category and two windows".into()));
        }
        for (name, v) in [("theta", &self.theta), ("mu", &self.mu), ("sigma_eta", &self.sigma_eta), ("sigma", &self.sigma)] {
            if v.len() != j {
                return Err(Error::Config(format!("{name} has {} entries for {j} categories", v.len())));
            }
        }
        if self.theta.iter().any(|t| !(0.0..1.0).contains(t)) {
            return Err(Error::Config("theta must lie in [0, 1)".into()));
        }
        if self.mu.iter().any(|m| !(-1.0..=1.0).contains(m)) {
            return Err(Error::Config("mu must lie in [-1, 1]".into()));
        }
        if self.sigma.iter().chain(&self.sigma_eta).any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("scales must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::Config("missing_fraction must lie in [0, 1)".into()));
        }
        if self.window_length_days < 1 {
            return Err(Error::Config("window_length_days must be at least 1".into()));
        }
        if self.articles_per_cell == Some(0) {
            return Err(Error::Config("articles_per_cell must be positive".into()));
        }
        self.n_law.validate()
    }

    pub fn windowing(&self) -> WindowingConfig {
        WindowingConfig {
            window_start_date: self.window_start_date,
            window_length_days: self.window_length_days,
            window_count: self.windows,
        }
    }

    /// Ground-truth parameters, hyperparameters at their prior centers.
    pub fn true_params(&self) -> ParamState {
        ParamState::from_natural(
            &self.theta,
            &self.mu,
            &self.sigma_eta,
            &self.sigma,
            Hyper::prior_center(&Hyperpriors::default()),
        )
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub panel: SentimentPanel,
    /// Latent truth, `windows × categories`.
    pub x: DMatrix<f64>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Latent paths and information weights, drawn category by category.
fn latent_and_weights<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = (cfg.windows, cfg.n_categories());
    let mut x = DMatrix::zeros(rows, cols);
    let mut n = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        let (theta, mu, se) = (cfg.theta[j], cfg.mu[j], cfg.sigma_eta[j]);
        x[(0, j)] = mu + se * normal(rng);
        for t in 1..rows {
            x[(t, j)] = (1.0 - theta) * mu + theta * x[(t - 1, j)] + se * normal(rng);
        }
        for t in 0..rows {
            let missing = cfg.missing_fraction > 0.0 && rng.random::<f64>() < cfg.missing_fraction;
            let w = cfg.n_law.sample(t, j, rng);
            n[(t, j)] = if missing { 0.0 } else { w };
        }
    }
    (x, n)
}

/// Simulate states then observations. Observations are clamped to `[-1, 1]`.
pub fn generate_panel<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<SyntheticPanel> {
    cfg.validate()?;
    let (x, n) = latent_and_weights(cfg, rng);
    let mut y = DMatrix::from_element(cfg.windows, cfg.n_categories(), f64::NAN);
    for j in 0..cfg.n_categories() {
        for t in 0..cfg.windows {
            let w = n[(t, j)];
            if w == 0.0 {
                continue;
            }
            let sd = if cfg.homoscedastic { cfg.sigma[j] } else { cfg.sigma[j] / w.sqrt() };
            y[(t, j)] = (x[(t, j)] + sd * normal(rng)).clamp(-1.0, 1.0);
        }
    }
    let panel = SentimentPanel::new(y, n, cfg.categories.clone(), cfg.windowing().window_starts())?;
    Ok(SyntheticPanel { panel, x })
}

#[derive(Debug, Clone)]
pub struct SyntheticArticles {
    pub records: Vec<ArticleRecord>,
    pub x: DMatrix<f64>,
    /// Target information weights the articles were built to reproduce.
    pub n: DMatrix<f64>,
}

/// Emit single-category articles whose weighted aggregate has mean `x_tj` and
/// variance `sigma_j^2 / n_tj`: `k` articles of relevance `C = n/k`, each with
/// sentiment noise of sd `sigma / sqrt(C)`, clamped to `[-1, 1]`.
pub fn generate_articles<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<SyntheticArticles> {
    cfg.validate()?;
    let (x, n) = latent_and_weights(cfg, rng);
    let cols = cfg.n_categories();
    let noon = NaiveTime::from_hms_opt(12, 0, 0).expect("valid time");
    let starts = cfg.windowing().window_starts();
    let mut records = Vec::new();
    for j in 0..cols {
        for t in 0..cfg.windows {
            let w = n[(t, j)];
            if w == 0.0 {
                continue;
            }
            let k = cfg.articles_per_cell.unwrap_or_else(|| (w.ceil() as usize).max(1));
            let c = w / k as f64;
            if !(DEFAULT_TAU..=1.0).contains(&c) {
                return Err(Error::Config(format!(
                    "cell ({t},{j}): weight {w} over {k} articles gives relevance {c} outside [{DEFAULT_TAU}, 1]"
                )));
            }
            let sd = if cfg.homoscedastic { cfg.sigma[j] * (k as f64).sqrt() } else { cfg.sigma[j] / c.sqrt() };
            for i in 0..k {
                let day = starts[t] + chrono::Duration::days((i % cfg.window_length_days as usize) as i64);
                let mut relevance = vec![0.0; cols];
                relevance[j] = c;
                let s = (x[(t, j)] + sd * normal(rng)).clamp(-1.0, 1.0);
                records.push(ArticleRecord::new(
                    format!("syn-{j}-{t}-{i}"),
                    Utc.from_utc_datetime(&day.and_time(noon)),
                    s,
                    relevance,
                )?);
            }
        }
    }
    Ok(SyntheticArticles { records, x, n })
}

/// Long-format truth: `window_start,category,x`.
pub fn write_truth_csv(path: &Path, panel: &SentimentPanel, x: &DMatrix<f64>) -> Result<()> {
    let mut rows = Vec::with_capacity(x.len());
    for (j, cat) in panel.categories.iter().enumerate() {
        for (t, d) in panel.window_starts.iter().enumerate() {
            rows.push(vec![d.to_string(), cat.clone(), fmt_f64(x[(t, j)])]);
        }
    }
    write_csv_rows(path, &["window_start", "category", "x"], &rows)
}
