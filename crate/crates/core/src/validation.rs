//! Interval-width validation: 90% posterior interval widths of the latent
//! states, regressed on `1/sqrt(n)` with category fixed effects and an
//! interaction with the homoscedastic arm.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::draws::PosteriorDraws;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv_rows};
use crate::panel::SentimentPanel;
use crate::stats;

pub const TERM_INTERCEPT: &str = "(Intercept)";
pub const TERM_SLOPE: &str = "1/sqrt(n_tj)";
pub const TERM_HOMO: &str = "I_homo";
pub const TERM_INTERACTION: &str = "I_homo × 1/sqrt(n_tj)";

/// Terms shown in the published table; fixed effects are fitted but omitted.
pub const DISPLAYED_TERMS: [&str; 4] = [TERM_INTERCEPT, TERM_SLOPE, TERM_HOMO, TERM_INTERACTION];

/// p-values below this are reported as exactly zero.
pub const P_VALUE_FLOOR: f64 = 1e-300;

/// Relative tolerance on the diagonal of `R` below which a column counts as
/// linearly dependent on the preceding ones.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthRecord {
    pub t: usize,
    pub j: usize,
    pub w: f64,
    pub inv_sqrt_n: f64,
    /// 1 for the homoscedastic arm.
    pub variant_flag: u8,
}

/// One record per observed cell. Zero widths are dropped with a warning.
pub fn interval_widths(draws: &PosteriorDraws, panel: &SentimentPanel) -> Result<Vec<WidthRecord>> {
    if draws.windows != panel.windows() || draws.categories != panel.categories {
        return Err(Error::Dimension("draws and panel disagree in shape or labels".into()));
    }
    let flag = u8::from(!draws.variant.is_heteroscedastic());
    let q = draws.state_quantiles()?;
    let mut out = Vec::new();
    for (j, col) in q.iter().enumerate() {
        for (t, cell) in col.iter().enumerate() {
            let n = panel.n[(t, j)];
            if n <= 0.0 {
                continue;
            }
            let w = cell[2] - cell[0];
            if !(w > 0.0) {
                log::warn!("zero-width interval at window {t}, category {}; excluded", panel.categories[j]);
                continue;
            }
            out.push(WidthRecord {
                t,
                j,
                w,
                inv_sqrt_n: 1.0 / n.sqrt(),
                variant_flag: flag,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub terms: Vec<Term>,
    pub n_obs: usize,
    pub df_resid: usize,
    pub r2: f64,
    pub adj_r2: f64,
    pub sigma: f64,
}

impl RegressionResult {
    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.estimate).collect()
    }
}

/// Ordinary least squares through a Householder QR of the design, with
/// classical standard errors and two-sided Student-t p-values.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<RegressionResult> {
    let (n, p) = x.shape();
    if names.len() != p || y.len() != n {
        return Err(Error::Dimension(format!(
            "design is {n}x{p} with {} names and {} responses",
            names.len(),
            y.len()
        )));
    }
    if n <= p {
        return Err(Error::InvalidInput(format!("{n} rows cannot identify {p} coefficients")));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    let deficient: Vec<String> = (0..p)
        .filter(|&k| !(r[(k, k)].abs() > RANK_TOL * scale))
        .map(|k| names[k].clone())
        .collect();
    if !deficient.is_empty() {
        return Err(Error::RankDeficient { columns: deficient });
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient { columns: names.to_vec() })?;
    let resid = y - x * &beta;
    let rss = resid.norm_squared();
    let df = n - p;
    let s2 = rss / df as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient { columns: names.to_vec() })?;
    let ybar = y.mean();
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let r2 = 1.0 - rss / tss;
    let adj_r2 = 1.0 - (rss / df as f64) / (tss / (n - 1) as f64);
    let terms = (0..p)
        .map(|k| {
            let se = (s2 * r_inv.row(k).norm_squared()).sqrt();
            let t_value = beta[k] / se;
            let pv = stats::student_t_two_sided(t_value, df as f64);
            Term {
                name: names[k].clone(),
                estimate: beta[k],
                std_error: se,
                t_value,
                p_value: if pv < P_VALUE_FLOOR { 0.0 } else { pv },
            }
        })
        .collect();
    Ok(RegressionResult {
        terms,
        n_obs: n,
        df_resid: df,
        r2,
        adj_r2,
        sigma: s2.sqrt(),
    })
}

/// Design columns: intercept, `1/sqrt(n)`, `I_homo`, the interaction, then
/// one indicator per category after the first in `categories` order.
pub fn width_design(records: &[WidthRecord], categories: &[String]) -> (DMatrix<f64>, DVector<f64>, Vec<String>) {
    let used: Vec<usize> = (0..categories.len())
        .filter(|j| records.iter().any(|r| r.j == *j))
        .collect();
    let mut names: Vec<String> = DISPLAYED_TERMS.iter().map(|s| s.to_string()).collect();
    names.extend(used.iter().skip(1).map(|&j| format!("gamma[{}]", categories[j])));
    let p = names.len();
    let x = DMatrix::from_fn(records.len(), p, |i, k| {
        let r = &records[i];
        let homo = f64::from(r.variant_flag);
        match k {
            0 => 1.0,
            1 => r.inv_sqrt_n,
            2 => homo,
            3 => homo * r.inv_sqrt_n,
            _ => f64::from(u8::from(r.j == used[k - 3])),
        }
    });
    let y = DVector::from_iterator(records.len(), records.iter().map(|r| r.w));
    (x, y, names)
}

pub fn fit_width_regression(records: &[WidthRecord], categories: &[String]) -> Result<RegressionResult> {
    if let Some(r) = records.iter().find(|r| r.j >= categories.len()) {
        return Err(Error::InvalidInput(format!("record category index {} out of range", r.j)));
    }
    for flag in [0u8, 1] {
        if !records.iter().any(|r| r.variant_flag == flag) {
            return Err(Error::InvalidInput(format!("no width records with variant flag {flag}")));
        }
    }
    let distinct = (0..categories.len()).filter(|j| records.iter().any(|r| r.j == *j)).count();
    if distinct < 2 {
        return Err(Error::InvalidInput("width regression needs at least two categories".into()));
    }
    let (x, y, names) = width_design(records, categories);
    ols(&x, &y, &names)
}

/// `(beta1, beta1 + beta3)`: slope on `1/sqrt(n)` for each arm.
pub fn marginal_effects(res: &RegressionResult) -> Result<(f64, f64)> {
    let get = |name: &str| {
        res.term(name)
            .map(|t| t.estimate)
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    };
    let b1 = get(TERM_SLOPE)?;
    Ok((b1, b1 + get(TERM_INTERACTION)?))
}

/// Table-shaped CSV with the four displayed terms.
pub fn write_table1_csv(path: &Path, res: &RegressionResult) -> Result<()> {
    let rows: Vec<Vec<String>> = DISPLAYED_TERMS
        .iter()
        .filter_map(|name| res.term(name))
        .map(|t| {
            vec![
                t.name.clone(),
                fmt_f64(t.estimate),
                fmt_f64(t.std_error),
                fmt_f64(t.t_value),
                fmt_f64(t.p_value),
            ]
        })
        .collect();
    write_csv_rows(path, &["Term", "Estimate", "Std. Error", "t value", "p value"], &rows)
}
