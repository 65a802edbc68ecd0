//! Convergence diagnostics: split-R̂, effective sample size and trace export.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::draws::PosteriorDraws;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_f64};

/// R̂ values above this are flagged.
pub const RHAT_THRESHOLD: f64 = 1.01;
/// ESS is capped at this multiple of the total draw count.
pub const ESS_INFLATION_BOUND: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub value: f64,
    /// Set when every draw of every chain is identical.
    pub degenerate: bool,
}

fn check_shape(chains: &[Vec<f64>]) -> Result<usize> {
    if chains.len() < 2 {
        return Err(Error::InvalidInput("need at least two chains".into()));
    }
    let n = chains[0].len();
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput("chains need equal length of at least 4".into()));
    }
    Ok(n)
}

/// Halve every chain (dropping the middle draw of odd-length chains).
fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .collect()
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Potential scale reduction on split chains, `sqrt(V̂ / W)`.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<Diagnostic> {
    check_shape(chains)?;
    let halves = split(chains);
    let n = halves[0].len() as f64;
    let stats: Vec<(f64, f64)> = halves.iter().map(|h| mean_var(h)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let (_, var_means) = mean_var(&means);
    let b = n * var_means;
    if w <= 0.0 {
        return Ok(Diagnostic {
            value: if b > 0.0 { f64::INFINITY } else { 1.0 },
            degenerate: b <= 0.0,
        });
    }
    let v_hat = (n - 1.0) / n * w + b / n;
    Ok(Diagnostic {
        value: (v_hat / w).sqrt(),
        degenerate: false,
    })
}

/// Multi-chain ESS with Geyer's initial monotone sequence truncation,
/// computed on split chains.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> Result<Diagnostic> {
    check_shape(chains)?;
    let halves = split(chains);
    let m = halves.len();
    let n = halves[0].len();
    let total = (chains.len() * chains[0].len()) as f64;
    let stats: Vec<(f64, f64)> = halves.iter().map(|h| mean_var(h)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let (_, var_means) = mean_var(&means);
    if w <= 0.0 {
        return Ok(Diagnostic {
            value: total,
            degenerate: true,
        });
    }
    let var_plus = w * (n as f64 - 1.0) / n as f64 + var_means;

    // biased autocovariance at `lag`, averaged over split chains
    let acov = |lag: usize| -> f64 {
        halves
            .iter()
            .zip(&stats)
            .map(|(h, &(mu, _))| {
                h[..n - lag]
                    .iter()
                    .zip(&h[lag..])
                    .map(|(a, b)| (a - mu) * (b - mu))
                    .sum::<f64>()
                    / n as f64
            })
            .sum::<f64>()
            / m as f64
    };
    let rho = |lag: usize| 1.0 - (w - acov(lag)) / var_plus;

    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let r0 = if lag == 0 { 1.0 } else { rho(lag) };
        let pair = r0 + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / ESS_INFLATION_BOUND);
    let ess = ((m * n) as f64 / tau).min(ESS_INFLATION_BOUND * total);
    Ok(Diagnostic {
        value: ess,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarDiagnostics {
    pub name: String,
    pub rhat: f64,
    pub ess_bulk: f64,
    pub degenerate: bool,
    pub rhat_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub threshold: f64,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub max_rhat: f64,
    pub min_ess: f64,
    pub flagged: Vec<String>,
    pub scalars: Vec<ScalarDiagnostics>,
}

/// Diagnostics for the named scalars (all parameters when `names` is empty).
pub fn diagnose(draws: &PosteriorDraws, names: &[String]) -> Result<DiagnosticsReport> {
    let names = if names.is_empty() { draws.param_names() } else { names.to_vec() };
    let mut scalars = Vec::with_capacity(names.len());
    for name in &names {
        let chains = draws.scalar(name)?;
        let r = split_rhat(&chains)?;
        let e = effective_sample_size(&chains)?;
        scalars.push(ScalarDiagnostics {
            name: name.clone(),
            rhat: r.value,
            ess_bulk: e.value,
            degenerate: r.degenerate || e.degenerate,
            rhat_flag: r.value > RHAT_THRESHOLD,
        });
    }
    Ok(DiagnosticsReport {
        threshold: RHAT_THRESHOLD,
        chains: draws.chains.len(),
        draws_per_chain: draws.chains.first().map_or(0, |c| c.draws.len()),
        max_rhat: scalars.iter().map(|s| s.rhat).fold(f64::NEG_INFINITY, f64::max),
        min_ess: scalars.iter().map(|s| s.ess_bulk).fold(f64::INFINITY, f64::min),
        flagged: scalars.iter().filter(|s| s.rhat_flag).map(|s| s.name.clone()).collect(),
        scalars,
    })
}

/// One trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub chain: usize,
    pub iteration: usize,
    pub name: String,
    pub value: f64,
}

/// Long-format traces `chain,iteration,name,value` for the named scalars.
pub fn export_traces(draws: &PosteriorDraws, names: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record(["chain", "iteration", "name", "value"]).map_err(e)?;
    for name in names {
        let chains = draws.scalar(name)?;
        for (c, seq) in draws.chains.iter().zip(chains) {
            for (i, v) in seq.iter().enumerate() {
                w.write_record([c.chain_id.to_string(), i.to_string(), name.clone(), fmt_f64(*v)])
                    .map_err(e)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn write_traces(path: &Path, draws: &PosteriorDraws, names: &[String]) -> Result<()> {
    let text = export_traces(draws, names)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_traces(text: &str) -> Result<Vec<TracePoint>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::InvalidInput(e.to_string()))?;
        let bad = || Error::InvalidInput(format!("malformed trace row {row:?}"));
        out.push(TracePoint {
            chain: row[0].parse().map_err(|_| bad())?,
            iteration: row[1].parse().map_err(|_| bad())?,
            name: row[2].to_string(),
            value: parse_f64(&row[3]).ok_or_else(bad)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::draws::ChainDraws;
    use crate::model::{Hyper, ParamState, Variant};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal_chains(m: usize, n: usize, seed: u64, offsets: &[f64]) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|c| (0..n).map(|_| offsets[c] + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn constant_chains_are_degenerate() {
        let chains = vec![vec![2.0; 10]; 3];
        let r = split_rhat(&chains).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(r.degenerate);
        assert!(effective_sample_size(&chains).unwrap().degenerate);
    }

    #[test]
    fn shape_errors() {
        assert!(split_rhat(&[vec![1.0, 2.0, 3.0, 4.0]]).is_err());
        assert!(split_rhat(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).is_err());
        assert!(effective_sample_size(&[vec![1.0; 5], vec![1.0; 6]]).is_err());
    }

    #[test]
    fn same_distribution_gives_rhat_near_one() {
        let chains = normal_chains(2, 10_000, 1, &[0.0, 0.0]);
        let r = split_rhat(&chains).unwrap().value;
        assert!((0.999..1.01).contains(&r), "{r}");
    }

    #[test]
    fn disjoint_chains_have_large_rhat() {
        let chains = normal_chains(2, 1000, 2, &[0.0, 10.0]);
        assert!(split_rhat(&chains).unwrap().value > 1.1);
    }

    #[test]
    fn rhat_affine_invariance() {
        let chains = normal_chains(3, 500, 3, &[0.0, 0.2, -0.1]);
        let moved: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| 3.5 * v - 7.0).collect()).collect();
        let a = split_rhat(&chains).unwrap().value;
        let b = split_rhat(&moved).unwrap().value;
        assert!((a - b).abs() < 1e-10);
        let ea = effective_sample_size(&chains).unwrap().value;
        let eb = effective_sample_size(&moved).unwrap().value;
        assert!((ea - eb).abs() < 1e-6 * ea);
    }

    #[test]
    fn iid_ess_close_to_count() {
        let chains = normal_chains(4, 5000, 4, &[0.0; 4]);
        let e = effective_sample_size(&chains).unwrap().value;
        assert!((e / 20_000.0 - 1.0).abs() < 0.1, "{e}");
        assert!(e <= 1.5 * 20_000.0);
    }

    fn draws_with(values: Vec<Vec<f64>>) -> PosteriorDraws {
        PosteriorDraws {
            variant: Variant::Pooled,
            categories: vec!["a".into()],
            windows: 2,
            chains: values
                .into_iter()
                .enumerate()
                .map(|(c, seq)| ChainDraws {
                    chain_id: c,
                    draws: seq
                        .into_iter()
                        .map(|v| ParamState::from_natural(&[0.5], &[v.tanh() * 0.5], &[0.05], &[0.1 + v.abs()], Hyper::from_array([0.0, 0.7, -1.9, 0.5, -3.0, 0.5])))
                        .collect(),
                    acceptance: vec![],
                    state_summary: None,
                })
                .collect(),
        }
    }

    #[test]
    fn trace_export_shape_and_roundtrip() {
        let d = draws_with(normal_chains(3, 100, 9, &[0.0; 3]));
        let names = vec!["mu[1]".to_string(), "sigma[1]".to_string()];
        let text = export_traces(&d, &names).unwrap();
        let rows = parse_traces(&text).unwrap();
        assert_eq!(rows.len(), 600);
        for p in &rows {
            let want = d.scalar(&p.name).unwrap()[p.chain][p.iteration];
            assert_eq!(p.value, want);
        }
        let empty = export_traces(&d, &[]).unwrap();
        assert_eq!(empty.trim(), "chain,iteration,name,value");
        assert!(matches!(export_traces(&d, &["bogus".into()]), Err(Error::UnknownName(_))));
    }

    #[test]
    fn report_covers_all_parameters() {
        let d = draws_with(normal_chains(2, 50, 10, &[0.0; 2]));
        let rep = diagnose(&d, &[]).unwrap();
        assert_eq!(rep.scalars.len(), 4 + 6);
        // theta is constant in this fixture
        assert!(rep.scalars[0].degenerate);
        for s in &rep.scalars {
            // plain split-R̂ can dip slightly below one
            assert!(s.rhat > 0.9);
            assert!(s.ess_bulk > 0.0 && s.ess_bulk <= 1.5 * 100.0);
        }
    }
}
