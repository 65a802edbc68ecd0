//! Posterior predictive checks: interval coverage, a mean-statistic p-value,
//! and the probability of replicates leaving `[-1, 1]`.
//!
//! Conventions: central intervals come from type-7 empirical quantiles of the
//! replicates; `p_mean` is the one-sided `P(mean(y_rep) >= mean(y_obs))`.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::draws::PosteriorDraws;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv_rows};
use crate::panel::SentimentPanel;
use crate::stats;

/// Fewest replicate draws accepted by [`ppc_summary`].
pub const MIN_REPLICATES: usize = 500;

/// Replicated observations: `values[s][j][t]`, `NaN` where the panel cell is
/// unobserved.
#[derive(Debug, Clone)]
pub struct Replicates {
    pub draws: usize,
    pub windows: usize,
    pub categories: usize,
    values: Vec<f64>,
}

impl Replicates {
    pub fn get(&self, s: usize, t: usize, j: usize) -> f64 {
        self.values[(s * self.categories + j) * self.windows + t]
    }

    /// Replicates of cell `(t, j)` across draws.
    pub fn cell(&self, t: usize, j: usize) -> Vec<f64> {
        (0..self.draws).map(|s| self.get(s, t, j)).collect()
    }
}

/// Draw one replicate panel per retained draw from the observation law.
pub fn replicate<R: Rng + ?Sized>(draws: &PosteriorDraws, panel: &SentimentPanel, rng: &mut R) -> Result<Replicates> {
    if !draws.has_states() {
        return Err(Error::InvalidInput("posterior predictive checks need latent state draws".into()));
    }
    let (windows, cats) = (panel.windows(), panel.n_categories());
    if draws.windows != windows || draws.categories.len() != cats {
        return Err(Error::Dimension("draws and panel disagree in shape".into()));
    }
    let hetero = draws.variant.is_heteroscedastic();
    let total = draws.total_draws();
    let mut values = Vec::with_capacity(total * windows * cats);
    for d in draws.chains.iter().flat_map(|c| &c.draws) {
        for j in 0..cats {
            let sigma = d.sigma(j);
            for t in 0..windows {
                if !panel.is_observed(t, j) {
                    values.push(f64::NAN);
                    continue;
                }
                let sd = if hetero { sigma / panel.n[(t, j)].sqrt() } else { sigma };
                let z: f64 = rng.sample(StandardNormal);
                values.push(d.x[(t, j)] + sd * z);
            }
        }
    }
    Ok(Replicates {
        draws: total,
        windows,
        categories: cats,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryPpc {
    pub category: String,
    pub cov80: f64,
    pub cov95: f64,
    pub p_mean: f64,
    pub p_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    pub replicates: usize,
    pub categories: Vec<CategoryPpc>,
}

pub fn ppc_summary(reps: &Replicates, panel: &SentimentPanel) -> Result<PpcReport> {
    if reps.draws < MIN_REPLICATES {
        return Err(Error::InvalidInput(format!(
            "{} replicate draws; at least {MIN_REPLICATES} are required",
            reps.draws
        )));
    }
    let mut out = Vec::with_capacity(panel.n_categories());
    for j in 0..panel.n_categories() {
        let observed: Vec<usize> = (0..panel.windows()).filter(|&t| panel.is_observed(t, j)).collect();
        if observed.is_empty() {
            return Err(Error::InvalidInput(format!("category {} has no observations", panel.categories[j])));
        }
        let (mut in80, mut in95, mut outside) = (0usize, 0usize, 0usize);
        for &t in &observed {
            let mut v = reps.cell(t, j);
            outside += v.iter().filter(|x| x.abs() > 1.0).count();
            v.sort_by(f64::total_cmp);
            let y = panel.y[(t, j)];
            let q = |p| stats::quantile_sorted(&v, p);
            if q(0.10) <= y && y <= q(0.90) {
                in80 += 1;
            }
            if q(0.025) <= y && y <= q(0.975) {
                in95 += 1;
            }
        }
        let obs_mean = observed.iter().map(|&t| panel.y[(t, j)]).sum::<f64>() / observed.len() as f64;
        let exceed = (0..reps.draws)
            .filter(|&s| {
                let m = observed.iter().map(|&t| reps.get(s, t, j)).sum::<f64>() / observed.len() as f64;
                m >= obs_mean
            })
            .count();
        let cells = observed.len() as f64;
        out.push(CategoryPpc {
            category: panel.categories[j].clone(),
            cov80: in80 as f64 / cells,
            cov95: in95 as f64 / cells,
            p_mean: exceed as f64 / reps.draws as f64,
            p_out: outside as f64 / (cells * reps.draws as f64),
        });
    }
    Ok(PpcReport {
        replicates: reps.draws,
        categories: out,
    })
}

/// Table-shaped CSV: `category,cov80,cov95,p_mean,p_out`.
pub fn write_ppc_csv(path: &Path, report: &PpcReport) -> Result<()> {
    let rows: Vec<Vec<String>> = report
        .categories
        .iter()
        .map(|c| {
            vec![
                c.category.clone(),
                fmt_f64(c.cov80),
                fmt_f64(c.cov95),
                fmt_f64(c.p_mean),
                fmt_f64(c.p_out),
            ]
        })
        .collect();
    write_csv_rows(path, &["category", "cov80", "cov95", "p_mean", "p_out"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::draws::ChainDraws;
    use crate::model::{Hyper, ParamState, Variant};
    use chrono::NaiveDate;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn panel(y: &[f64], n: &[f64]) -> SentimentPanel {
        let len = y.len();
        let d = NaiveDate::from_ymd_opt(2024, 1, 7).unwrap();
        SentimentPanel::new(
            DMatrix::from_column_slice(len, 1, y),
            DMatrix::from_column_slice(len, 1, n),
            vec!["a".into()],
            (0..len).map(|t| d + chrono::Duration::days(7 * t as i64)).collect(),
        )
        .unwrap()
    }

    fn fixed_draws(x: &[f64], sigma: f64, count: usize) -> PosteriorDraws {
        let mut s = ParamState::from_natural(&[0.5], &[0.0], &[0.05], &[sigma], Hyper::from_array([0.0, 0.7, -1.9, 0.5, -3.0, 0.5]));
        s.x = DMatrix::from_column_slice(x.len(), 1, x);
        PosteriorDraws {
            variant: Variant::Hierarchical,
            categories: vec!["a".into()],
            windows: x.len(),
            chains: vec![ChainDraws { chain_id: 0, draws: vec![s; count], acceptance: vec![], state_summary: None }],
        }
    }

    #[test]
    fn tiny_noise_collapses_onto_states() {
        let x = [0.1, -0.2, 0.3];
        let d = fixed_draws(&x, 1e-9, 10);
        let p = panel(&[0.1, 0.0, 0.2], &[1.0, 2.0, 3.0]);
        let r = replicate(&d, &p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for s in 0..10 {
            for t in 0..3 {
                assert!((r.get(s, t, 0) - x[t]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn doubling_weight_shrinks_spread() {
        let d = fixed_draws(&[0.0, 0.0], 0.2, 40_000);
        let p = panel(&[0.0, 0.0], &[1.0, 2.0]);
        let r = replicate(&d, &p, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let sd0 = stats::variance(&r.cell(0, 0)).sqrt();
        let sd1 = stats::variance(&r.cell(1, 0)).sqrt();
        assert!((sd0 / sd1 - 2f64.sqrt()).abs() < 0.03, "{}", sd0 / sd1);
    }

    #[test]
    fn replicate_moments_follow_total_variance() {
        // x alternates between -0.3 and 0.3, so Var(y_rep) = 0.09 + sigma^2 / n.
        let mut d = fixed_draws(&[0.0], 0.2, 40_000);
        for (i, s) in d.chains[0].draws.iter_mut().enumerate() {
            s.x[(0, 0)] = if i % 2 == 0 { -0.3 } else { 0.3 };
        }
        let p = panel(&[0.0], &[4.0]);
        let r = replicate(&d, &p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c = r.cell(0, 0);
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        let var = 0.09 + 0.01;
        assert!(mean.abs() < 4.0 * (var / c.len() as f64).sqrt(), "{mean}");
        assert!((stats::variance(&c) / var - 1.0).abs() < 0.03);
    }

    #[test]
    fn missing_cells_stay_missing() {
        let d = fixed_draws(&[0.0, 0.0], 0.2, 5);
        let p = panel(&[0.1, f64::NAN], &[1.0, 0.0]);
        let r = replicate(&d, &p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(r.get(0, 1, 0).is_nan());
    }

    #[test]
    fn needs_enough_replicates_and_states() {
        let d = fixed_draws(&[0.0, 0.0], 0.2, 10);
        let p = panel(&[0.1, 0.2], &[1.0, 1.0]);
        let r = replicate(&d, &p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(ppc_summary(&r, &p).is_err());
        let mut no_states = d.clone();
        no_states.chains[0].draws.iter_mut().for_each(|s| s.x = DMatrix::zeros(0, 0));
        assert!(replicate(&no_states, &p, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
    }

    #[test]
    fn self_consistent_observations_hit_nominal_coverage() {
        // observations drawn from the same law as the replicates
        let t_len = 400;
        let x: Vec<f64> = (0..t_len).map(|t| 0.3 * ((t as f64) * 0.1).sin()).collect();
        let n: Vec<f64> = (0..t_len).map(|t| 1.0 + (t % 7) as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..t_len)
            .map(|t| x[t] + 0.1 / n[t].sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let p = panel(&y, &n);
        let d = fixed_draws(&x, 0.1, 2000);
        let r = replicate(&d, &p, &mut rng).unwrap();
        let rep = ppc_summary(&r, &p).unwrap();
        let c = &rep.categories[0];
        assert!((c.cov95 - 0.95).abs() < 0.04, "{}", c.cov95);
        assert!((c.cov80 - 0.80).abs() < 0.06, "{}", c.cov80);
        assert_eq!(c.p_out, 0.0);
        assert!(c.cov80 <= c.cov95);
    }
}
