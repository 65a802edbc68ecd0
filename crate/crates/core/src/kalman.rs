//! Scalar Kalman filter, RTS smoother and forward-filter backward-sampler for
//! one category's AR(1) latent path with per-window observation variance.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{CategoryParams, Variant};
use crate::stats::LN_SQRT_2PI;

/// Lower bound applied to every variance produced by the recursions.
pub const VAR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub filtered_mean: Vec<f64>,
    pub filtered_var: Vec<f64>,
    pub predicted_mean: Vec<f64>,
    pub predicted_var: Vec<f64>,
    /// `log p(y_observed | parameters)` with the latent path integrated out.
    pub marginal_loglik: f64,
}

impl FilterResult {
    pub fn len(&self) -> usize {
        self.filtered_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filtered_mean.is_empty()
    }
}

#[inline]
fn obs_var(sigma: f64, n: f64, variant: Variant) -> f64 {
    if variant.is_heteroscedastic() {
        sigma * sigma / n
    } else {
        sigma * sigma
    }
}

fn check_inputs(y: &[f64], n: &[f64], p: &CategoryParams, variant: Variant) -> Result<()> {
    if y.len() != n.len() {
        return Err(Error::Dimension(format!("{} observations but {} weights", y.len(), n.len())));
    }
    if !(p.sigma > 0.0 && p.sigma_eta > 0.0) {
        return Err(Error::InvalidInput("noise scales must be positive".into()));
    }
    if !(0.0..=1.0).contains(&p.theta) {
        return Err(Error::InvalidInput(format!("persistence {} outside [0, 1]", p.theta)));
    }
    if variant.is_heteroscedastic() {
        if let Some(t) = (0..y.len()).find(|&t| !y[t].is_nan() && !(n[t] > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "window {t} is observed with non-positive weight {}",
                n[t]
            )));
        }
    }
    Ok(())
}

/// Forward pass. Missing observations (`NaN`) skip the update step.
pub fn kalman_filter(y: &[f64], n: &[f64], p: CategoryParams, variant: Variant) -> Result<FilterResult> {
    check_inputs(y, n, &p, variant)?;
    let len = y.len();
    let mut out = FilterResult {
        filtered_mean: Vec::with_capacity(len),
        filtered_var: Vec::with_capacity(len),
        predicted_mean: Vec::with_capacity(len),
        predicted_var: Vec::with_capacity(len),
        marginal_loglik: 0.0,
    };
    let q = p.sigma_eta * p.sigma_eta;
    let (mut m, mut v) = (p.mu, 0.0);
    for t in 0..len {
        let (mp, vp) = if t == 0 {
            (p.mu, q)
        } else {
            ((1.0 - p.theta) * p.mu + p.theta * m, (p.theta * p.theta * v + q).max(VAR_FLOOR))
        };
        out.predicted_mean.push(mp);
        out.predicted_var.push(vp);
        if y[t].is_nan() {
            m = mp;
            v = vp;
        } else {
            let s = vp + obs_var(p.sigma, n[t], variant);
            let e = y[t] - mp;
            let k = vp / s;
            m = mp + k * e;
            v = (vp * (1.0 - k)).max(VAR_FLOOR);
            out.marginal_loglik += -LN_SQRT_2PI - 0.5 * (s.ln() + e * e / s);
        }
        out.filtered_mean.push(m);
        out.filtered_var.push(v);
    }
    Ok(out)
}

/// Marginal log-likelihood only, without allocating. Inputs are assumed to
/// have been validated; an observed cell with `n <= 0` under a
/// heteroscedastic variant yields `-inf`.
pub fn marginal_loglik(y: &[f64], n: &[f64], p: CategoryParams, variant: Variant) -> f64 {
    let q = p.sigma_eta * p.sigma_eta;
    let hetero = variant.is_heteroscedastic();
    let s2 = p.sigma * p.sigma;
    let mut ll = 0.0;
    let (mut m, mut v) = (p.mu, 0.0);
    for t in 0..y.len() {
        let (mp, vp) = if t == 0 {
            (p.mu, q)
        } else {
            ((1.0 - p.theta) * p.mu + p.theta * m, (p.theta * p.theta * v + q).max(VAR_FLOOR))
        };
        let yt = y[t];
        if yt.is_nan() {
            m = mp;
            v = vp;
            continue;
        }
        let r = if hetero {
            if !(n[t] > 0.0) {
                return f64::NEG_INFINITY;
            }
            s2 / n[t]
        } else {
            s2
        };
        let s = vp + r;
        let e = yt - mp;
        let k = vp / s;
        m = mp + k * e;
        v = (vp * (1.0 - k)).max(VAR_FLOOR);
        ll += -LN_SQRT_2PI - 0.5 * (s.ln() + e * e / s);
    }
    ll
}

#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// `Cov(x_t, x_{t+1} | y)`, one entry shorter than the path.
    pub lag_one_cov: Vec<f64>,
}

/// Rauch-Tung-Striebel backward pass.
pub fn rts_smoother(fr: &FilterResult, theta: f64) -> Smoothed {
    let len = fr.len();
    let mut mean = fr.filtered_mean.clone();
    let mut var = fr.filtered_var.clone();
    let mut lag_one_cov = vec![0.0; len.saturating_sub(1)];
    for t in (0..len.saturating_sub(1)).rev() {
        let gain = theta * fr.filtered_var[t] / fr.predicted_var[t + 1];
        mean[t] = fr.filtered_mean[t] + gain * (mean[t + 1] - fr.predicted_mean[t + 1]);
        var[t] = (fr.filtered_var[t] + gain * gain * (var[t + 1] - fr.predicted_var[t + 1])).max(VAR_FLOOR);
        lag_one_cov[t] = gain * var[t + 1];
    }
    Smoothed { mean, var, lag_one_cov }
}

/// Draw a latent path from its exact conditional given the data.
pub fn ffbs_sample<R: Rng + ?Sized>(fr: &FilterResult, theta: f64, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; fr.len()];
    ffbs_into(fr, theta, rng, &mut out);
    out
}

/// [`ffbs_sample`] writing into a caller-provided buffer.
pub fn ffbs_into<R: Rng + ?Sized>(fr: &FilterResult, theta: f64, rng: &mut R, out: &mut [f64]) {
    let len = fr.len();
    if len == 0 {
        return;
    }
    let z: f64 = rng.sample(StandardNormal);
    out[len - 1] = fr.filtered_mean[len - 1] + fr.filtered_var[len - 1].sqrt() * z;
    for t in (0..len - 1).rev() {
        let gain = theta * fr.filtered_var[t] / fr.predicted_var[t + 1];
        let m = fr.filtered_mean[t] + gain * (out[t + 1] - fr.predicted_mean[t + 1]);
        let v = (fr.filtered_var[t] - gain * gain * fr.predicted_var[t + 1]).max(VAR_FLOOR);
        let z: f64 = rng.sample(StandardNormal);
        out[t] = m + v.sqrt() * z;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn six_fixture() -> (Vec<f64>, Vec<f64>, CategoryParams) {
        (
            vec![0.12, 0.05, 0.18, 0.09, -0.02, 0.11],
            vec![1.0, 4.0, 2.0, 8.0, 1.0, 3.0],
            CategoryParams { theta: 0.7, mu: 0.1, sigma_eta: 0.05, sigma: 0.15 },
        )
    }

    /// Dense joint Gaussian of (x, y) assembled directly from the model.
    fn dense(n: &[f64], p: &CategoryParams, hetero: bool) -> (DMatrix<f64>, DMatrix<f64>) {
        let len = n.len();
        let q = p.sigma_eta * p.sigma_eta;
        let mut var = vec![q; len];
        for t in 1..len {
            var[t] = p.theta * p.theta * var[t - 1] + q;
        }
        let cx = DMatrix::from_fn(len, len, |a, b| var[a.min(b)] * p.theta.powi((a as i32 - b as i32).abs()));
        let mut cy = cx.clone();
        for t in 0..len {
            cy[(t, t)] += if hetero { p.sigma * p.sigma / n[t] } else { p.sigma * p.sigma };
        }
        (cx, cy)
    }

    fn mvn_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let chol = cov.clone().cholesky().unwrap();
        let d = y - mean;
        let sol = chol.solve(&d);
        let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        -0.5 * (d.dot(&sol) + logdet + y.len() as f64 * (2.0 * std::f64::consts::PI).ln())
    }

    #[test]
    fn marginal_matches_dense_gaussian() {
        let (y, n, p) = six_fixture();
        let fr = kalman_filter(&y, &n, p, Variant::Hierarchical).unwrap();
        let (_, cy) = dense(&n, &p, true);
        let want = mvn_logpdf(&DVector::from_vec(y.clone()), &DVector::from_element(6, p.mu), &cy);
        assert!((fr.marginal_loglik - want).abs() < 1e-8, "{} vs {want}", fr.marginal_loglik);
        assert!((marginal_loglik(&y, &n, p, Variant::Hierarchical) - fr.marginal_loglik).abs() < 1e-14);
    }

    #[test]
    fn smoother_matches_dense_conditional_mean() {
        let (y, n, p) = six_fixture();
        let fr = kalman_filter(&y, &n, p, Variant::Hierarchical).unwrap();
        let sm = rts_smoother(&fr, p.theta);
        let (cx, cy) = dense(&n, &p, true);
        let mu = DVector::from_element(6, p.mu);
        let resid = DVector::from_vec(y) - &mu;
        let solve = cy.clone().cholesky().unwrap();
        let cond_mean = &mu + &cx * solve.solve(&resid);
        let cond_cov = &cx - &cx * solve.solve(&cx);
        for t in 0..6 {
            assert!((sm.mean[t] - cond_mean[t]).abs() < 1e-8);
            assert!((sm.var[t] - cond_cov[(t, t)]).abs() < 1e-8);
            if t < 5 {
                assert!((sm.lag_one_cov[t] - cond_cov[(t, t + 1)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn conjugate_single_observation() {
        let p = CategoryParams { theta: 0.0, mu: 0.2, sigma_eta: 0.1, sigma: 0.3 };
        let fr = kalman_filter(&[0.5, f64::NAN], &[2.0, 0.0], p, Variant::Hierarchical).unwrap();
        let (w0, w1) = (1.0 / 0.01, 2.0 / 0.09);
        let want = (w0 * 0.2 + w1 * 0.5) / (w0 + w1);
        assert!((fr.filtered_mean[0] - want).abs() < 1e-14);
        assert!((fr.filtered_var[0] - 1.0 / (w0 + w1)).abs() < 1e-14);
    }

    #[test]
    fn all_missing_gives_prior() {
        let p = CategoryParams { theta: 0.8, mu: -0.3, sigma_eta: 0.05, sigma: 0.2 };
        let y = vec![f64::NAN; 5];
        let n = vec![0.0; 5];
        let fr = kalman_filter(&y, &n, p, Variant::Hierarchical).unwrap();
        assert_eq!(fr.marginal_loglik, 0.0);
        let mut v = 0.0025;
        for t in 0..5 {
            assert!((fr.filtered_mean[t] + 0.3).abs() < 1e-15);
            assert!((fr.filtered_var[t] - v).abs() < 1e-15);
            v = 0.64 * v + 0.0025;
        }
        let sm = rts_smoother(&fr, p.theta);
        assert!(sm.mean.iter().all(|m| (m + 0.3).abs() < 1e-14));
    }

    #[test]
    fn smoother_boundary_and_contraction() {
        let (y, n, p) = six_fixture();
        let fr = kalman_filter(&y, &n, p, Variant::Hierarchical).unwrap();
        let sm = rts_smoother(&fr, p.theta);
        assert_eq!(sm.mean[5], fr.filtered_mean[5]);
        assert_eq!(sm.var[5], fr.filtered_var[5]);
        for t in 0..6 {
            assert!(sm.var[t] <= fr.filtered_var[t] + 1e-15);
        }
    }

    #[test]
    fn extra_observation_never_widens() {
        let (mut y, n, p) = six_fixture();
        let full = rts_smoother(&kalman_filter(&y, &n, p, Variant::Hierarchical).unwrap(), p.theta);
        for t in 0..6 {
            let keep = y[t];
            y[t] = f64::NAN;
            let fewer = rts_smoother(&kalman_filter(&y, &n, p, Variant::Hierarchical).unwrap(), p.theta);
            assert!(full.var[t] <= fewer.var[t]);
            y[t] = keep;
        }
    }

    #[test]
    fn weight_scaling_equals_sigma_scaling() {
        let (y, n, p) = six_fixture();
        let n4: Vec<f64> = n.iter().map(|v| 4.0 * v).collect();
        let a = kalman_filter(&y, &n4, p, Variant::Hierarchical).unwrap();
        let b = kalman_filter(&y, &n, CategoryParams { sigma: p.sigma / 2.0, ..p }, Variant::Hierarchical).unwrap();
        for t in 0..6 {
            assert!((a.filtered_mean[t] - b.filtered_mean[t]).abs() < 1e-12);
            assert!((a.filtered_var[t] - b.filtered_var[t]).abs() < 1e-12);
        }
        assert!((a.marginal_loglik - b.marginal_loglik).abs() < 1e-12);
    }

    #[test]
    fn homoscedastic_ignores_weights() {
        let (y, n, p) = six_fixture();
        let a = kalman_filter(&y, &n, p, Variant::HomoscedasticHierarchical).unwrap();
        let b = kalman_filter(&y, &[1.0; 6], p, Variant::Hierarchical).unwrap();
        assert!((a.marginal_loglik - b.marginal_loglik).abs() < 1e-14);
    }

    #[test]
    fn rejects_nonpositive_weight_when_observed() {
        let (y, mut n, p) = six_fixture();
        n[2] = 0.0;
        assert!(kalman_filter(&y, &n, p, Variant::Hierarchical).is_err());
        assert_eq!(marginal_loglik(&y, &n, p, Variant::Hierarchical), f64::NEG_INFINITY);
        assert!(kalman_filter(&y, &n, p, Variant::HomoscedasticHierarchical).is_ok());
    }

    #[test]
    fn ffbs_degenerate_random_walk_is_flat() {
        let p = CategoryParams { theta: 1.0, mu: 0.3, sigma_eta: 1e-7, sigma: 0.2 };
        let y = vec![0.1, 0.5, -0.2, 0.4];
        let fr = kalman_filter(&y, &[1.0; 4], p, Variant::Hierarchical).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = ffbs_sample(&fr, p.theta, &mut rng);
        for v in &x {
            assert!((v - 0.3).abs() < 1e-5);
        }
    }

    #[test]
    fn ffbs_is_seed_deterministic() {
        let (y, n, p) = six_fixture();
        let fr = kalman_filter(&y, &n, p, Variant::Hierarchical).unwrap();
        let a = ffbs_sample(&fr, p.theta, &mut ChaCha8Rng::seed_from_u64(11));
        let b = ffbs_sample(&fr, p.theta, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }
}
