//! Metropolis-within-Gibbs sampler.
//!
//! Per-category parameters are updated by random-walk Metropolis against the
//! Kalman marginal likelihood, so the latent path is integrated out of every
//! parameter move. Hyperparameter means are drawn from their normal-normal
//! conditionals, hyperparameter scales by random-walk Metropolis on the log
//! scale, and the latent paths are drawn exactly by forward-filter
//! backward-sampling.
//!
//! Step sizes adapt by Robbins-Monro toward a target acceptance rate during
//! the first `adapt_iterations` sweeps and are frozen afterwards.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::draws::{ChainDraws, PosteriorDraws, StateSummary};
use crate::error::{Error, Result};
use crate::kalman;
use crate::model::{self, CategoryParams, Hyper, ModelSpec, ParamKind, ParamState};
use crate::panel::SentimentPanel;
use crate::stats::{self, normal_logpdf};

/// How latent states are kept for retained draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateStorage {
    /// Every retained draw keeps its full latent path.
    #[default]
    Full,
    /// Only streaming per-cell quantile summaries are kept.
    Summary,
    /// Latent states are not drawn at all.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub base_seed: u64,
    /// Defaults to `burn_in` when unset.
    pub adapt_iterations: Option<usize>,
    pub target_accept: f64,
    pub state_storage: StateStorage,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            chains: 3,
            iterations: 20_000,
            burn_in: 5_000,
            thin: 5,
            base_seed: 42,
            adapt_iterations: None,
            target_accept: 0.44,
            state_storage: StateStorage::Full,
            parallel: true,
        }
    }
}

impl RunConfig {
    /// 3 chains of 255,000 sweeps, 5,000 burn-in, every 25th draw kept.
    pub fn paper_scale() -> Self {
        Self {
            iterations: 255_000,
            burn_in: 5_000,
            thin: 25,
            ..Self::default()
        }
    }

    pub fn adapt(&self) -> usize {
        self.adapt_iterations.unwrap_or(self.burn_in)
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.iterations == 0 || self.thin == 0 {
            return Err(Error::Config("chains, iterations and thin must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.adapt() > self.burn_in {
            return Err(Error::Config("adapt_iterations may not exceed burn_in".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Generator for chain `chain_id`: one ChaCha stream per chain.
pub fn chain_rng(base_seed: u64, chain_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(chain_id as u64);
    rng
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AcceptanceStat {
    pub name: String,
    pub step: f64,
    /// Acceptance rate over the sweeps after adaptation stopped.
    pub rate: f64,
    pub proposals: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tuning {
    log_step: f64,
    adapt_count: u64,
    accepted: u64,
    proposed: u64,
}

impl Tuning {
    fn new(step: f64) -> Self {
        Self {
            log_step: step.ln(),
            ..Default::default()
        }
    }

    fn record(&mut self, accepted: bool, adapting: bool, target: f64) {
        if adapting {
            self.adapt_count += 1;
            let gain = (self.adapt_count as f64).powf(-0.6);
            let a = if accepted { 1.0 } else { 0.0 };
            self.log_step = (self.log_step + gain * (a - target)).clamp(-20.0, 3.0);
        } else {
            self.proposed += 1;
            self.accepted += accepted as u64;
        }
    }

    fn step(&self) -> f64 {
        self.log_step.exp()
    }
}

#[derive(Debug, Clone)]
struct Block {
    kind: ParamKind,
    cats: Vec<usize>,
    tuning: Tuning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HyperFamily {
    Theta,
    Sigma,
    SigmaEta,
}

impl HyperFamily {
    const ALL: [HyperFamily; 3] = [HyperFamily::Theta, HyperFamily::Sigma, HyperFamily::SigmaEta];

    fn kind(self) -> ParamKind {
        match self {
            HyperFamily::Theta => ParamKind::Theta,
            HyperFamily::Sigma => ParamKind::Sigma,
            HyperFamily::SigmaEta => ParamKind::SigmaEta,
        }
    }

    fn scale_name(self) -> &'static str {
        match self {
            HyperFamily::Theta => "sigma_theta",
            HyperFamily::Sigma => "sigma_log_sigma",
            HyperFamily::SigmaEta => "sigma_log_sigma_eta",
        }
    }
}

fn default_step(kind: ParamKind) -> f64 {
    match kind {
        ParamKind::Theta => 0.5,
        ParamKind::Mu => 0.3,
        ParamKind::SigmaEta => 0.3,
        ParamKind::Sigma => 0.2,
    }
}

/// Data-informed deterministic starting point.
pub fn initial_state(panel: &SentimentPanel, spec: &ModelSpec) -> ParamState {
    let cats = spec.categories;
    let hyper = Hyper::prior_center(&spec.hyperpriors);
    let mut mu = vec![0.0; cats];
    let mut log_sigma = vec![hyper.mu_log_sigma; cats];
    for j in 0..cats {
        let obs: Vec<(f64, f64)> = panel
            .y_col(j)
            .iter()
            .zip(panel.n_col(j))
            .filter(|(y, _)| !y.is_nan())
            .map(|(&y, &n)| (y, n))
            .collect();
        if obs.is_empty() {
            continue;
        }
        let ys: Vec<f64> = obs.iter().map(|o| o.0).collect();
        mu[j] = stats::mean(&ys);
        if ys.len() >= 2 {
            let mut sd = stats::variance(&ys).sqrt();
            if spec.variant.is_heteroscedastic() {
                sd *= (obs.iter().map(|o| o.1).sum::<f64>() / obs.len() as f64).sqrt();
            }
            log_sigma[j] = sd.max(0.01).ln();
        }
    }
    let mut state = ParamState {
        theta_aux: vec![0.0; cats],
        mu_aux: mu.iter().map(|m| ((m + 1.0) / 2.0).clamp(0.01, 0.99)).collect(),
        log_sigma_eta: vec![0.05f64.ln(); cats],
        log_sigma,
        hyper,
        x: DMatrix::zeros(spec.windows, cats),
    };
    for kind in ParamKind::ALL {
        if spec.variant.shares(kind) {
            let v = state.raw(kind);
            let avg = v.iter().sum::<f64>() / v.len() as f64;
            state.raw_mut(kind).iter_mut().for_each(|a| *a = avg);
        }
    }
    for j in 0..cats {
        let c = state.cat_params(j);
        for t in 0..spec.windows {
            state.x[(t, j)] = c.mu;
        }
    }
    state
}

/// Exact conditional draw of a hyper mean: prior `N(prior_mean, prior_sd^2)`,
/// each value in `values` distributed `N(mean, scale^2)`.
pub fn draw_hyper_mean<R: Rng + ?Sized>(
    values: &[f64],
    scale: f64,
    prior_mean: f64,
    prior_sd: f64,
    rng: &mut R,
) -> f64 {
    let prec = 1.0 / (prior_sd * prior_sd) + values.len() as f64 / (scale * scale);
    let mean = (prior_mean / (prior_sd * prior_sd) + values.iter().sum::<f64>() / (scale * scale)) / prec;
    let z: f64 = rng.sample(StandardNormal);
    mean + z / prec.sqrt()
}

/// Sampler state for one chain.
pub struct Sampler<'a> {
    panel: &'a SentimentPanel,
    spec: &'a ModelSpec,
    state: ParamState,
    loglik: Vec<f64>,
    blocks: Vec<Block>,
    hyper_tuning: [Tuning; 3],
    target_accept: f64,
    adapting: bool,
}

impl<'a> Sampler<'a> {
    pub fn new(panel: &'a SentimentPanel, spec: &'a ModelSpec, state: ParamState) -> Result<Self> {
        if panel.n_categories() != spec.categories || panel.windows() != spec.windows {
            return Err(Error::Dimension(format!(
                "panel is {}x{}, model expects {}x{}",
                panel.windows(),
                panel.n_categories(),
                spec.windows,
                spec.categories
            )));
        }
        state.check(spec)?;
        let mut state = state;
        if state.x.shape() != (spec.windows, spec.categories) {
            state.x = DMatrix::zeros(spec.windows, spec.categories);
        }
        let loglik = (0..spec.categories)
            .map(|j| kalman::marginal_loglik(panel.y_col(j), panel.n_col(j), state.cat_params(j), spec.variant))
            .collect();
        let blocks = ParamKind::ALL
            .iter()
            .flat_map(|&kind| {
                spec.groups(kind).into_iter().map(move |cats| Block {
                    kind,
                    cats,
                    tuning: Tuning::new(default_step(kind)),
                })
            })
            .collect();
        Ok(Self {
            panel,
            spec,
            state,
            loglik,
            blocks,
            hyper_tuning: [Tuning::new(0.3); 3],
            target_accept: 0.44,
            adapting: false,
        })
    }

    pub fn with_target_accept(mut self, target: f64) -> Self {
        self.target_accept = target;
        self
    }

    pub fn set_adapting(&mut self, adapting: bool) {
        self.adapting = adapting;
    }

    pub fn state(&self) -> &ParamState {
        &self.state
    }

    pub fn into_state(self) -> ParamState {
        self.state
    }

    /// Collapsed log posterior: log prior plus Kalman marginal likelihoods.
    pub fn log_target(&self) -> f64 {
        model::log_prior(&self.state, self.spec) + self.loglik.iter().sum::<f64>()
    }

    /// One sweep over parameters and hyperparameters, optionally followed by
    /// a latent path draw.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R, draw_states: bool) {
        for b in 0..self.blocks.len() {
            self.update_block(b, rng);
        }
        self.update_hyper_means(rng);
        for (i, fam) in HyperFamily::ALL.into_iter().enumerate() {
            self.update_hyper_scale(i, fam, rng);
        }
        if draw_states {
            self.draw_states(rng);
        }
    }

    fn update_block<R: Rng + ?Sized>(&mut self, b: usize, rng: &mut R) {
        let kind = self.blocks[b].kind;
        let step = self.blocks[b].tuning.step();
        let lead = self.blocks[b].cats[0];
        let current = self.state.raw(kind)[lead];
        let z: f64 = rng.sample(StandardNormal);

        let (proposed, log_jac_cur, log_jac_prop) = if kind == ParamKind::Mu {
            let u = stats::logit(current) + step * z;
            let a = stats::logistic(u);
            (a, current.ln() + (1.0 - current).ln(), a.ln() + (1.0 - a).ln())
        } else {
            (current + step * z, 0.0, 0.0)
        };

        let hyper = &self.state.hyper;
        let lp_cur = model::log_prior_term(kind, current, hyper) + log_jac_cur;
        let lp_prop = model::log_prior_term(kind, proposed, hyper) + log_jac_prop;

        let mut ll_cur = 0.0;
        let mut ll_prop = 0.0;
        let mut new_ll = Vec::with_capacity(self.blocks[b].cats.len());
        if lp_prop.is_finite() {
            for &j in &self.blocks[b].cats {
                let mut c = self.state.cat_params(j);
                set_natural(&mut c, kind, proposed);
                let ll = kalman::marginal_loglik(self.panel.y_col(j), self.panel.n_col(j), c, self.spec.variant);
                ll_cur += self.loglik[j];
                ll_prop += ll;
                new_ll.push(ll);
            }
        }
        let log_ratio = (lp_prop + ll_prop) - (lp_cur + ll_cur);
        let accept = lp_prop.is_finite()
            && log_ratio.is_finite()
            && rng.random::<f64>().ln() < log_ratio;
        if accept {
            let cats = self.blocks[b].cats.clone();
            for (&j, ll) in cats.iter().zip(new_ll) {
                self.state.raw_mut(kind)[j] = proposed;
                self.loglik[j] = ll;
            }
        }
        self.blocks[b].tuning.record(accept, self.adapting, self.target_accept);
    }

    fn group_values(&self, kind: ParamKind) -> Vec<f64> {
        self.spec
            .groups(kind)
            .iter()
            .map(|g| self.state.raw(kind)[g[0]])
            .collect()
    }

    fn update_hyper_means<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let hp = self.spec.hyperpriors;
        let theta = self.group_values(ParamKind::Theta);
        let h = &mut self.state.hyper;
        h.mu_theta = draw_hyper_mean(&theta, h.sigma_theta, hp.mu_theta_mean, hp.mu_theta_sd, rng);
        let sig = self.group_values(ParamKind::Sigma);
        let h = &mut self.state.hyper;
        h.mu_log_sigma = draw_hyper_mean(&sig, h.sigma_log_sigma, hp.mu_log_sigma_mean, hp.mu_log_sigma_sd, rng);
        let eta = self.group_values(ParamKind::SigmaEta);
        let h = &mut self.state.hyper;
        h.mu_log_sigma_eta =
            draw_hyper_mean(&eta, h.sigma_log_sigma_eta, hp.mu_log_sigma_eta_mean, hp.mu_log_sigma_eta_sd, rng);
    }

    fn update_hyper_scale<R: Rng + ?Sized>(&mut self, idx: usize, fam: HyperFamily, rng: &mut R) {
        let hp = self.spec.hyperpriors;
        let values = self.group_values(fam.kind());
        let (center, cur_scale, meanlog, sdlog) = {
            let h = &self.state.hyper;
            match fam {
                HyperFamily::Theta => (h.mu_theta, h.sigma_theta, hp.sigma_theta_meanlog, hp.sigma_theta_sdlog),
                HyperFamily::Sigma => (
                    h.mu_log_sigma,
                    h.sigma_log_sigma,
                    hp.sigma_log_sigma_meanlog,
                    hp.sigma_log_sigma_sdlog,
                ),
                HyperFamily::SigmaEta => (
                    h.mu_log_sigma_eta,
                    h.sigma_log_sigma_eta,
                    hp.sigma_log_sigma_eta_meanlog,
                    hp.sigma_log_sigma_eta_sdlog,
                ),
            }
        };
        // density of w = log(scale): lognormal prior times the Jacobian
        let target = |w: f64| -> f64 {
            let s = w.exp();
            normal_logpdf(w, meanlog, sdlog) + values.iter().map(|&v| normal_logpdf(v, center, s)).sum::<f64>()
        };
        let w = cur_scale.ln();
        let z: f64 = rng.sample(StandardNormal);
        let w_new = w + self.hyper_tuning[idx].step() * z;
        let log_ratio = target(w_new) - target(w);
        let accept = log_ratio.is_finite() && rng.random::<f64>().ln() < log_ratio;
        if accept {
            let s = w_new.exp();
            let h = &mut self.state.hyper;
            match fam {
                HyperFamily::Theta => h.sigma_theta = s,
                HyperFamily::Sigma => h.sigma_log_sigma = s,
                HyperFamily::SigmaEta => h.sigma_log_sigma_eta = s,
            }
        }
        self.hyper_tuning[idx].record(accept, self.adapting, self.target_accept);
    }

    fn draw_states<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let windows = self.spec.windows;
        for j in 0..self.spec.categories {
            let c = self.state.cat_params(j);
            // inputs were validated when the sampler was built
            let fr = kalman::kalman_filter(self.panel.y_col(j), self.panel.n_col(j), c, self.spec.variant)
                .expect("validated panel");
            let col = &mut self.state.x.as_mut_slice()[j * windows..(j + 1) * windows];
            kalman::ffbs_into(&fr, c.theta, rng, col);
        }
    }

    /// Acceptance rates since adaptation stopped, one per scalar proposal.
    pub fn acceptance(&self) -> Vec<AcceptanceStat> {
        let mut out: Vec<AcceptanceStat> = self
            .blocks
            .iter()
            .map(|b| AcceptanceStat {
                name: if b.cats.len() == self.spec.categories && self.spec.variant.shares(b.kind) {
                    b.kind.name().to_string()
                } else {
                    format!("{}[{}]", b.kind.name(), b.cats[0] + 1)
                },
                step: b.tuning.step(),
                rate: rate(&b.tuning),
                proposals: b.tuning.proposed,
            })
            .collect();
        for (fam, t) in HyperFamily::ALL.iter().zip(&self.hyper_tuning) {
            out.push(AcceptanceStat {
                name: fam.scale_name().to_string(),
                step: t.step(),
                rate: rate(t),
                proposals: t.proposed,
            });
        }
        out
    }
}

fn rate(t: &Tuning) -> f64 {
    if t.proposed == 0 {
        f64::NAN
    } else {
        t.accepted as f64 / t.proposed as f64
    }
}

fn set_natural(c: &mut CategoryParams, kind: ParamKind, raw: f64) {
    match kind {
        ParamKind::Theta => c.theta = stats::logistic(raw),
        ParamKind::Mu => c.mu = 2.0 * raw - 1.0,
        ParamKind::SigmaEta => c.sigma_eta = raw.exp(),
        ParamKind::Sigma => c.sigma = raw.exp(),
    }
}

/// One full sweep from `state`, including a latent path draw.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: ParamState,
    panel: &SentimentPanel,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<ParamState> {
    let mut s = Sampler::new(panel, spec, state)?;
    s.sweep(rng, true);
    Ok(s.into_state())
}

/// Run one chain: adapt, burn in, then keep every `thin`-th sweep.
pub fn run_chain(panel: &SentimentPanel, spec: &ModelSpec, cfg: &RunConfig, chain_id: usize) -> Result<ChainDraws> {
    cfg.validate()?;
    spec.validate()?;
    panel.validate()?;
    let mut rng = chain_rng(cfg.base_seed, chain_id);
    let init = initial_state(panel, spec);
    let mut sampler = Sampler::new(panel, spec, init)?.with_target_accept(cfg.target_accept);
    if !sampler.log_target().is_finite() {
        return Err(Error::NonFiniteInit { chain: chain_id });
    }
    let keep_states = cfg.state_storage != StateStorage::None;
    let mut draws = Vec::with_capacity(cfg.retained_per_chain());
    let mut summary = (cfg.state_storage == StateStorage::Summary)
        .then(|| StateSummary::new(spec.windows, spec.categories));
    for it in 0..cfg.iterations {
        sampler.set_adapting(it < cfg.adapt());
        let keep = it >= cfg.burn_in && (it - cfg.burn_in + 1).is_multiple_of(cfg.thin);
        // parameter moves never condition on x, so paths are only drawn when kept
        sampler.sweep(&mut rng, keep && keep_states);
        if keep {
            let mut s = sampler.state().clone();
            match cfg.state_storage {
                StateStorage::Full => {}
                StateStorage::Summary => {
                    summary.as_mut().expect("summary enabled").push(&s.x);
                    s.x = DMatrix::zeros(0, 0);
                }
                StateStorage::None => s.x = DMatrix::zeros(0, 0),
            }
            draws.push(s);
        }
    }
    Ok(ChainDraws {
        chain_id,
        draws,
        acceptance: sampler.acceptance(),
        state_summary: summary,
    })
}

/// Run all chains. Results do not depend on whether chains run in parallel.
pub fn run_chains(panel: &SentimentPanel, spec: &ModelSpec, cfg: &RunConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let run = |c: usize| {
        run_chain(panel, spec, cfg, c).map_err(|e| Error::Chain {
            chain: c,
            source: Box::new(e),
        })
    };
    let results: Vec<Result<ChainDraws>> = if cfg.parallel {
        (0..cfg.chains).into_par_iter().map(run).collect()
    } else {
        (0..cfg.chains).map(run).collect()
    };
    let chains = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        variant: spec.variant,
        categories: panel.categories.clone(),
        windows: spec.windows,
        chains,
    })
}
