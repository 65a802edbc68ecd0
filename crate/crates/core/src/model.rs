//! The hierarchical state-space model: parameter layout, transforms, priors
//! and exact log densities.
//!
//! For category `j` the latent sentiment follows
//!
//! ```text
//! x_1j ~ N(mu_j, sigma_eta_j^2)
//! x_tj ~ N((1 - theta_j) mu_j + theta_j x_{t-1,j}, sigma_eta_j^2)
//! y_tj ~ N(x_tj, sigma_j^2 / n_tj)        (heteroscedastic variants)
//! y_tj ~ N(x_tj, sigma_j^2)               (homoscedastic variant)
//! ```
//!
//! Parameters are stored on their sampling scales: `theta_aux` is the logit of
//! the persistence, `mu_aux = (mu + 1) / 2` lies in (0, 1), and both noise
//! scales are kept as logarithms.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::SentimentPanel;
use crate::stats::{self, lognormal_logpdf, normal_logpdf, CompensatedSum};

/// Distance from 0 and 1 inside which `mu_aux` is treated as off-support.
pub const MU_AUX_EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Every category has its own parameters, tied together by hyperpriors.
    Hierarchical,
    /// One set of parameters shared by all categories.
    Pooled,
    /// Persistence and innovation scale shared; mean and noise per category.
    #[serde(rename = "partial-sigma")]
    PartialSigmaOnly,
    /// Hierarchical, but the observation variance ignores `n`.
    #[serde(rename = "homoscedastic")]
    HomoscedasticHierarchical,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Hierarchical,
        Variant::Pooled,
        Variant::PartialSigmaOnly,
        Variant::HomoscedasticHierarchical,
    ];

    pub fn is_heteroscedastic(self) -> bool {
        !matches!(self, Variant::HomoscedasticHierarchical)
    }

    /// Whether parameters of `kind` take one common value across categories.
    pub fn shares(self, kind: ParamKind) -> bool {
        match self {
            Variant::Pooled => true,
            Variant::PartialSigmaOnly => matches!(kind, ParamKind::Theta | ParamKind::SigmaEta),
            Variant::Hierarchical | Variant::HomoscedasticHierarchical => false,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Hierarchical => "hierarchical",
            Variant::Pooled => "pooled",
            Variant::PartialSigmaOnly => "partial-sigma",
            Variant::HomoscedasticHierarchical => "homoscedastic",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// The four per-category parameter families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Theta,
    Mu,
    SigmaEta,
    Sigma,
}

impl ParamKind {
    pub const ALL: [ParamKind; 4] = [ParamKind::Theta, ParamKind::Mu, ParamKind::SigmaEta, ParamKind::Sigma];

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Theta => "theta",
            ParamKind::Mu => "mu",
            ParamKind::SigmaEta => "sigma_eta",
            ParamKind::Sigma => "sigma",
        }
    }
}

/// Fixed constants of the hyperpriors. Every `*_sd` / `*_sdlog` is a standard
/// deviation on the stated scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperpriors {
    pub mu_theta_mean: f64,
    pub mu_theta_sd: f64,
    pub sigma_theta_meanlog: f64,
    pub sigma_theta_sdlog: f64,
    pub mu_log_sigma_mean: f64,
    pub mu_log_sigma_sd: f64,
    pub sigma_log_sigma_meanlog: f64,
    pub sigma_log_sigma_sdlog: f64,
    pub mu_log_sigma_eta_mean: f64,
    pub mu_log_sigma_eta_sd: f64,
    pub sigma_log_sigma_eta_meanlog: f64,
    pub sigma_log_sigma_eta_sdlog: f64,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Self {
            mu_theta_mean: 0.0,
            mu_theta_sd: 1.0,
            sigma_theta_meanlog: 0.7f64.ln(),
            sigma_theta_sdlog: 0.35,
            mu_log_sigma_mean: 0.15f64.ln(),
            mu_log_sigma_sd: 1.0,
            sigma_log_sigma_meanlog: 0.5f64.ln(),
            sigma_log_sigma_sdlog: 0.35,
            mu_log_sigma_eta_mean: 0.05f64.ln(),
            mu_log_sigma_eta_sd: 1.0,
            sigma_log_sigma_eta_meanlog: 0.5f64.ln(),
            sigma_log_sigma_eta_sdlog: 0.35,
        }
    }
}

impl Hyperpriors {
    fn validate(&self) -> Result<()> {
        let scales = [
            self.mu_theta_sd,
            self.sigma_theta_sdlog,
            self.mu_log_sigma_sd,
            self.sigma_log_sigma_sdlog,
            self.mu_log_sigma_eta_sd,
            self.sigma_log_sigma_eta_sdlog,
        ];
        if scales.iter().all(|s| *s > 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("hyperprior scales must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub categories: usize,
    pub windows: usize,
    #[serde(default)]
    pub hyperpriors: Hyperpriors,
}

impl ModelSpec {
    pub fn new(variant: Variant, categories: usize, windows: usize) -> Result<Self> {
        let spec = Self {
            variant,
            categories,
            windows,
            hyperpriors: Hyperpriors::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn for_panel(variant: Variant, panel: &SentimentPanel) -> Result<Self> {
        Self::new(variant, panel.n_categories(), panel.windows())
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories < 1 {
            return Err(Error::Config("model needs at least one category".into()));
        }
        if self.windows < 2 {
            return Err(Error::Config("model needs at least two windows".into()));
        }
        self.hyperpriors.validate()
    }

    /// Category groups that share one value of `kind`: a single group with
    /// every category when shared, otherwise one singleton per category.
    pub fn groups(&self, kind: ParamKind) -> Vec<Vec<usize>> {
        if self.variant.shares(kind) {
            vec![(0..self.categories).collect()]
        } else {
            (0..self.categories).map(|j| vec![j]).collect()
        }
    }
}

/// Hyperparameters. Scales are stored on the natural (positive) scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub mu_theta: f64,
    pub sigma_theta: f64,
    pub mu_log_sigma: f64,
    pub sigma_log_sigma: f64,
    pub mu_log_sigma_eta: f64,
    pub sigma_log_sigma_eta: f64,
}

impl Hyper {
    pub const NAMES: [&'static str; 6] = [
        "mu_theta",
        "sigma_theta",
        "mu_log_sigma",
        "sigma_log_sigma",
        "mu_log_sigma_eta",
        "sigma_log_sigma_eta",
    ];

    /// Hyperparameters at the centers of their hyperpriors.
    pub fn prior_center(h: &Hyperpriors) -> Self {
        Self {
            mu_theta: h.mu_theta_mean,
            sigma_theta: h.sigma_theta_meanlog.exp(),
            mu_log_sigma: h.mu_log_sigma_mean,
            sigma_log_sigma: h.sigma_log_sigma_meanlog.exp(),
            mu_log_sigma_eta: h.mu_log_sigma_eta_mean,
            sigma_log_sigma_eta: h.sigma_log_sigma_eta_meanlog.exp(),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.mu_theta,
            self.sigma_theta,
            self.mu_log_sigma,
            self.sigma_log_sigma,
            self.mu_log_sigma_eta,
            self.sigma_log_sigma_eta,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            mu_theta: a[0],
            sigma_theta: a[1],
            mu_log_sigma: a[2],
            sigma_log_sigma: a[3],
            mu_log_sigma_eta: a[4],
            sigma_log_sigma_eta: a[5],
        }
    }

    fn log_density(&self, h: &Hyperpriors) -> f64 {
        normal_logpdf(self.mu_theta, h.mu_theta_mean, h.mu_theta_sd)
            + lognormal_logpdf(self.sigma_theta, h.sigma_theta_meanlog, h.sigma_theta_sdlog)
            + normal_logpdf(self.mu_log_sigma, h.mu_log_sigma_mean, h.mu_log_sigma_sd)
            + lognormal_logpdf(self.sigma_log_sigma, h.sigma_log_sigma_meanlog, h.sigma_log_sigma_sdlog)
            + normal_logpdf(self.mu_log_sigma_eta, h.mu_log_sigma_eta_mean, h.mu_log_sigma_eta_sd)
            + lognormal_logpdf(
                self.sigma_log_sigma_eta,
                h.sigma_log_sigma_eta_meanlog,
                h.sigma_log_sigma_eta_sdlog,
            )
    }
}

/// One draw of every parameter and (optionally) the latent states.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub theta_aux: Vec<f64>,
    pub mu_aux: Vec<f64>,
    pub log_sigma_eta: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub hyper: Hyper,
    /// `windows × categories`; `0 × 0` when states are not retained.
    pub x: DMatrix<f64>,
}

impl ParamState {
    /// Build a state from natural-scale per-category values.
    pub fn from_natural(theta: &[f64], mu: &[f64], sigma_eta: &[f64], sigma: &[f64], hyper: Hyper) -> Self {
        Self {
            theta_aux: theta.iter().map(|&t| stats::logit(t)).collect(),
            mu_aux: mu.iter().map(|&m| (m + 1.0) / 2.0).collect(),
            log_sigma_eta: sigma_eta.iter().map(|s| s.ln()).collect(),
            log_sigma: sigma.iter().map(|s| s.ln()).collect(),
            hyper,
            x: DMatrix::zeros(0, 0),
        }
    }

    pub fn categories(&self) -> usize {
        self.theta_aux.len()
    }

    pub fn theta(&self, j: usize) -> f64 {
        stats::logistic(self.theta_aux[j])
    }

    pub fn mu(&self, j: usize) -> f64 {
        2.0 * self.mu_aux[j] - 1.0
    }

    pub fn sigma_eta(&self, j: usize) -> f64 {
        self.log_sigma_eta[j].exp()
    }

    pub fn sigma(&self, j: usize) -> f64 {
        self.log_sigma[j].exp()
    }

    pub fn natural(&self, kind: ParamKind, j: usize) -> f64 {
        match kind {
            ParamKind::Theta => self.theta(j),
            ParamKind::Mu => self.mu(j),
            ParamKind::SigmaEta => self.sigma_eta(j),
            ParamKind::Sigma => self.sigma(j),
        }
    }

    /// Stored (sampling-scale) value vector for a family.
    pub fn raw(&self, kind: ParamKind) -> &[f64] {
        match kind {
            ParamKind::Theta => &self.theta_aux,
            ParamKind::Mu => &self.mu_aux,
            ParamKind::SigmaEta => &self.log_sigma_eta,
            ParamKind::Sigma => &self.log_sigma,
        }
    }

    pub fn raw_mut(&mut self, kind: ParamKind) -> &mut [f64] {
        match kind {
            ParamKind::Theta => &mut self.theta_aux,
            ParamKind::Mu => &mut self.mu_aux,
            ParamKind::SigmaEta => &mut self.log_sigma_eta,
            ParamKind::Sigma => &mut self.log_sigma,
        }
    }

    pub fn cat_params(&self, j: usize) -> CategoryParams {
        CategoryParams {
            theta: self.theta(j),
            mu: self.mu(j),
            sigma_eta: self.sigma_eta(j),
            sigma: self.sigma(j),
        }
    }

    /// Check dimensions and the sharing constraints of the variant.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        let j = spec.categories;
        for kind in ParamKind::ALL {
            let v = self.raw(kind);
            if v.len() != j {
                return Err(Error::Dimension(format!(
                    "{} has {} entries for {j} categories",
                    kind.name(),
                    v.len()
                )));
            }
            if spec.variant.shares(kind) && v.iter().any(|&a| a != v[0]) {
                return Err(Error::InvalidInput(format!(
                    "{} must be shared across categories under the {} variant",
                    kind.name(),
                    spec.variant
                )));
            }
        }
        if !self.x.is_empty() && self.x.shape() != (spec.windows, j) {
            return Err(Error::Dimension(format!(
                "latent states are {}x{}, expected {}x{j}",
                self.x.nrows(),
                self.x.ncols(),
                spec.windows
            )));
        }
        Ok(())
    }
}

/// Natural-scale parameters of one category.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryParams {
    pub theta: f64,
    pub mu: f64,
    pub sigma_eta: f64,
    pub sigma: f64,
}

/// Prior log density of one stored value of `kind`, given the hyperparameters.
pub fn log_prior_term(kind: ParamKind, raw: f64, hyper: &Hyper) -> f64 {
    match kind {
        ParamKind::Theta => normal_logpdf(raw, hyper.mu_theta, hyper.sigma_theta),
        ParamKind::Mu => {
            if raw > MU_AUX_EPS && raw < 1.0 - MU_AUX_EPS {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        ParamKind::SigmaEta => normal_logpdf(raw, hyper.mu_log_sigma_eta, hyper.sigma_log_sigma_eta),
        ParamKind::Sigma => normal_logpdf(raw, hyper.mu_log_sigma, hyper.sigma_log_sigma),
    }
}

/// Joint prior log density of the stored parameters and hyperparameters.
/// Shared parameters contribute one prior term.
pub fn log_prior(p: &ParamState, spec: &ModelSpec) -> f64 {
    let mut acc = CompensatedSum::default();
    for kind in ParamKind::ALL {
        for group in spec.groups(kind) {
            acc.add(log_prior_term(kind, p.raw(kind)[group[0]], &p.hyper));
        }
    }
    acc.add(p.hyper.log_density(&spec.hyperpriors));
    acc.value()
}

/// Log density of the first latent state.
pub fn log_initial(x1: f64, mu: f64, sigma_eta: f64) -> f64 {
    normal_logpdf(x1, mu, sigma_eta)
}

/// Log density of one AR(1) step.
pub fn log_transition(x_prev: f64, x_curr: f64, theta: f64, mu: f64, sigma_eta: f64) -> f64 {
    normal_logpdf(x_curr, (1.0 - theta) * mu + theta * x_prev, sigma_eta)
}

/// Observation log density. Missing (`NaN`) observations contribute zero.
pub fn log_obs(y: f64, x: f64, sigma: f64, n: f64, variant: Variant) -> Result<f64> {
    if y.is_nan() {
        return Ok(0.0);
    }
    if variant.is_heteroscedastic() {
        if !(n > 0.0) {
            return Err(Error::InvalidInput(format!(
                "observed cell has non-positive weight n = {n}"
            )));
        }
        Ok(stats::normal_logpdf_var(y, x, sigma * sigma / n))
    } else {
        Ok(normal_logpdf(y, x, sigma))
    }
}

/// Complete-data log density: prior, latent transitions and observations.
pub fn log_joint(panel: &SentimentPanel, p: &ParamState, spec: &ModelSpec) -> Result<f64> {
    if panel.n_categories() != spec.categories || panel.windows() != spec.windows {
        return Err(Error::Dimension(format!(
            "panel is {}x{}, model expects {}x{}",
            panel.windows(),
            panel.n_categories(),
            spec.windows,
            spec.categories
        )));
    }
    p.check(spec)?;
    if p.x.shape() != (spec.windows, spec.categories) {
        return Err(Error::Dimension("log_joint needs latent states".into()));
    }
    let mut acc = CompensatedSum::default();
    acc.add(log_prior(p, spec));
    for j in 0..spec.categories {
        let c = p.cat_params(j);
        for t in 0..spec.windows {
            let x = p.x[(t, j)];
            acc.add(if t == 0 {
                log_initial(x, c.mu, c.sigma_eta)
            } else {
                log_transition(p.x[(t - 1, j)], x, c.theta, c.mu, c.sigma_eta)
            });
            acc.add(log_obs(panel.y[(t, j)], x, c.sigma, panel.n[(t, j)], spec.variant)?);
        }
    }
    Ok(acc.value())
}
