//! Retained posterior draws, scalar naming, and the on-disk draws store.
//!
//! A draws directory holds:
//!
//! * `meta.json`: variant, category labels, window count, per-chain tuning.
//! * `draws.bin`: every retained draw in the binary layout below.
//! * `draws.csv`: long format `chain,draw,name,value` of the named scalars
//!   (latent states included only on request).
//! * `state_summary.json`: streaming quantile summaries, when states were
//!   stored in summary mode.
//!
//! Binary layout (all integers `u32`, all floats `f64`, little-endian):
//!
//! ```text
//! magic      8 bytes  "SSMDRAWS"
//! version    u32      1
//! chains     u32
//! per_chain  u32      retained draws per chain
//! categories u32      J
//! windows    u32      N
//! flags      u32      bit 0: latent states present
//! body       chains × per_chain records of
//!            theta_aux[J] mu_aux[J] log_sigma_eta[J] log_sigma[J] hyper[6]
//!            x[N·J] (column-major, only with flag bit 0)
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::mcmc::AcceptanceStat;
use crate::model::{Hyper, ParamKind, ParamState, Variant};
use crate::stats::{self, P2Quantile};

pub const MAGIC: &[u8; 8] = b"SSMDRAWS";
pub const FORMAT_VERSION: u32 = 1;

/// Per-cell streaming summaries of the latent states of one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateSummary {
    windows: usize,
    categories: usize,
    count: usize,
    q05: Vec<P2Quantile>,
    q50: Vec<P2Quantile>,
    q95: Vec<P2Quantile>,
    sum: Vec<f64>,
}

impl StateSummary {
    pub fn new(windows: usize, categories: usize) -> Self {
        let cells = windows * categories;
        Self {
            windows,
            categories,
            count: 0,
            q05: vec![P2Quantile::new(0.05); cells],
            q50: vec![P2Quantile::new(0.5); cells],
            q95: vec![P2Quantile::new(0.95); cells],
            sum: vec![0.0; cells],
        }
    }

    pub fn push(&mut self, x: &DMatrix<f64>) {
        for (i, &v) in x.as_slice().iter().enumerate() {
            self.q05[i].push(v);
            self.q50[i].push(v);
            self.q95[i].push(v);
            self.sum[i] += v;
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `(q05, median, q95, mean)` for cell `(t, j)`.
    pub fn cell(&self, t: usize, j: usize) -> [f64; 4] {
        let i = j * self.windows + t;
        [
            self.q05[i].estimate(),
            self.q50[i].estimate(),
            self.q95[i].estimate(),
            self.sum[i] / self.count as f64,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub chain_id: usize,
    pub draws: Vec<ParamState>,
    pub acceptance: Vec<AcceptanceStat>,
    pub state_summary: Option<StateSummary>,
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub variant: Variant,
    pub categories: Vec<String>,
    pub windows: usize,
    pub chains: Vec<ChainDraws>,
}

/// A named scalar that can be extracted from a draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scalar {
    Param(ParamKind, usize),
    Hyper(usize),
    State(usize, usize),
}

impl Scalar {
    pub fn parse(name: &str, categories: usize, windows: usize) -> Result<Self> {
        let unknown = || Error::UnknownName(name.to_string());
        if let Some(i) = Hyper::NAMES.iter().position(|h| *h == name) {
            return Ok(Scalar::Hyper(i));
        }
        let open = name.find('[').ok_or_else(unknown)?;
        let inner = name[open + 1..].strip_suffix(']').ok_or_else(unknown)?;
        let base = &name[..open];
        if base == "x" {
            let (t, j) = inner.split_once(',').ok_or_else(unknown)?;
            let t: usize = t.trim().parse().map_err(|_| unknown())?;
            let j: usize = j.trim().parse().map_err(|_| unknown())?;
            if t == 0 || t > windows || j == 0 || j > categories {
                return Err(unknown());
            }
            return Ok(Scalar::State(t - 1, j - 1));
        }
        let kind = ParamKind::ALL.into_iter().find(|k| k.name() == base).ok_or_else(unknown)?;
        let j: usize = inner.parse().map_err(|_| unknown())?;
        if j == 0 || j > categories {
            return Err(unknown());
        }
        Ok(Scalar::Param(kind, j - 1))
    }

    pub fn value(&self, s: &ParamState) -> f64 {
        match *self {
            Scalar::Param(kind, j) => s.natural(kind, j),
            Scalar::Hyper(i) => s.hyper.to_array()[i],
            Scalar::State(t, j) => s.x[(t, j)],
        }
    }
}

/// Names of the natural-scale parameters and hyperparameters, in export order.
pub fn param_names(categories: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(4 * categories + 6);
    for kind in ParamKind::ALL {
        for j in 1..=categories {
            names.push(format!("{}[{j}]", kind.name()));
        }
    }
    names.extend(Hyper::NAMES.iter().map(|s| s.to_string()));
    names
}

pub fn state_names(windows: usize, categories: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(windows * categories);
    for j in 1..=categories {
        for t in 1..=windows {
            names.push(format!("x[{t},{j}]"));
        }
    }
    names
}

impl PosteriorDraws {
    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn has_states(&self) -> bool {
        self.chains
            .iter()
            .all(|c| c.draws.iter().all(|d| d.x.shape() == (self.windows, self.categories.len())))
            && self.total_draws() > 0
    }

    pub fn has_state_summary(&self) -> bool {
        !self.chains.is_empty() && self.chains.iter().all(|c| c.state_summary.is_some())
    }

    pub fn param_names(&self) -> Vec<String> {
        param_names(self.categories.len())
    }

    /// Per-chain sequences of a named scalar.
    pub fn scalar(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let s = Scalar::parse(name, self.categories.len(), self.windows)?;
        if matches!(s, Scalar::State(..)) && !self.has_states() {
            return Err(Error::UnknownName(format!("{name} (latent states were not retained)")));
        }
        Ok(self
            .chains
            .iter()
            .map(|c| c.draws.iter().map(|d| s.value(d)).collect())
            .collect())
    }

    /// All retained draws of `x[t, j]`, chains pooled in order.
    pub fn state_draws(&self, t: usize, j: usize) -> Vec<f64> {
        self.chains
            .iter()
            .flat_map(|c| c.draws.iter().map(move |d| d.x[(t, j)]))
            .collect()
    }

    /// Pooled `(q05, median, q95, mean)` of every latent cell. Exact type-7
    /// quantiles when full paths are stored; otherwise the chain-averaged
    /// streaming estimates.
    pub fn state_quantiles(&self) -> Result<Vec<Vec<[f64; 4]>>> {
        let cats = self.categories.len();
        if self.has_states() {
            Ok((0..cats)
                .map(|j| {
                    (0..self.windows)
                        .map(|t| {
                            let v = self.state_draws(t, j);
                            let q = stats::quantiles(&v, &[0.05, 0.5, 0.95]);
                            [q[0], q[1], q[2], stats::mean(&v)]
                        })
                        .collect()
                })
                .collect())
        } else if self.has_state_summary() {
            let k = self.chains.len() as f64;
            Ok((0..cats)
                .map(|j| {
                    (0..self.windows)
                        .map(|t| {
                            let mut acc = [0.0; 4];
                            for c in &self.chains {
                                let v = c.state_summary.as_ref().expect("checked").cell(t, j);
                                for i in 0..4 {
                                    acc[i] += v[i] / k;
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect())
        } else {
            Err(Error::InvalidInput("draws carry no latent states".into()))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainMeta {
    chain_id: usize,
    acceptance: Vec<AcceptanceStat>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DrawsMeta {
    format_version: u32,
    variant: Variant,
    categories: Vec<String>,
    windows: usize,
    chains: Vec<ChainMeta>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Write the draws store into `dir`. Latent states go to the CSV only when
/// `states_in_csv` is set; the binary file always carries them.
pub fn write_draws(dir: &Path, draws: &PosteriorDraws, states_in_csv: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = DrawsMeta {
        format_version: FORMAT_VERSION,
        variant: draws.variant,
        categories: draws.categories.clone(),
        windows: draws.windows,
        chains: draws
            .chains
            .iter()
            .map(|c| ChainMeta {
                chain_id: c.chain_id,
                acceptance: c.acceptance.clone(),
            })
            .collect(),
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&path, text).map_err(io_err(&path))?;

    let path = dir.join("draws.bin");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    write_binary(&mut w, draws).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;

    let path = dir.join("draws.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    write_csv(&mut w, draws, states_in_csv).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;

    if draws.has_state_summary() {
        let summaries: Vec<&StateSummary> = draws.chains.iter().filter_map(|c| c.state_summary.as_ref()).collect();
        let path = dir.join("state_summary.json");
        let text = serde_json::to_string(&summaries).expect("summary serializes");
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}

fn write_binary<W: Write>(w: &mut W, draws: &PosteriorDraws) -> std::io::Result<()> {
    let per_chain = draws.chains.first().map_or(0, |c| c.draws.len());
    let states = draws.has_states();
    w.write_all(MAGIC)?;
    for v in [
        FORMAT_VERSION,
        draws.chains.len() as u32,
        per_chain as u32,
        draws.categories.len() as u32,
        draws.windows as u32,
        states as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for c in &draws.chains {
        for d in &c.draws {
            for kind in ParamKind::ALL {
                for v in d.raw(kind) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            for v in d.hyper.to_array() {
                w.write_all(&v.to_le_bytes())?;
            }
            if states {
                for v in d.x.as_slice() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

fn write_csv<W: Write>(w: &mut W, draws: &PosteriorDraws, states: bool) -> std::io::Result<()> {
    let cats = draws.categories.len();
    let mut scalars: Vec<(String, Scalar)> = param_names(cats)
        .into_iter()
        .map(|n| {
            let s = Scalar::parse(&n, cats, draws.windows).expect("generated name");
            (n, s)
        })
        .collect();
    if states && draws.has_states() {
        for n in state_names(draws.windows, cats) {
            let s = Scalar::parse(&n, cats, draws.windows).expect("generated name");
            scalars.push((n, s));
        }
    }
    writeln!(w, "chain,draw,name,value")?;
    for c in &draws.chains {
        for (i, d) in c.draws.iter().enumerate() {
            for (name, s) in &scalars {
                writeln!(w, "{},{},\"{}\",{}", c.chain_id, i, name, fmt_f64(s.value(d)))?;
            }
        }
    }
    Ok(())
}

pub fn read_draws(dir: &Path) -> Result<PosteriorDraws> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let meta: DrawsMeta = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {}", meta.format_version)));
    }
    let path = dir.join("draws.bin");
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let mut chains = decode_binary(&bytes, &meta)?;

    let path = dir.join("state_summary.json");
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let summaries: Vec<StateSummary> = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
        if summaries.len() != chains.len() {
            return Err(Error::Format("state summary count does not match chains".into()));
        }
        for (c, s) in chains.iter_mut().zip(summaries) {
            c.state_summary = Some(s);
        }
    }
    Ok(PosteriorDraws {
        variant: meta.variant,
        categories: meta.categories,
        windows: meta.windows,
        chains,
    })
}

fn decode_binary(bytes: &[u8], meta: &DrawsMeta) -> Result<Vec<ChainDraws>> {
    if bytes.len() < 32 || &bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic in draws.bin".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (version, n_chains, per_chain, cats, windows, flags) = (word(0), word(1), word(2), word(3), word(4), word(5));
    if version != FORMAT_VERSION as usize {
        return Err(Error::Format(format!("unsupported binary version {version}")));
    }
    if cats != meta.categories.len() || windows != meta.windows || n_chains != meta.chains.len() {
        return Err(Error::Format("draws.bin header disagrees with meta.json".into()));
    }
    let states = flags & 1 == 1;
    let record = 4 * cats + 6 + if states { windows * cats } else { 0 };
    let body = &bytes[32..];
    if body.len() != n_chains * per_chain * record * 8 {
        return Err(Error::Format(format!(
            "draws.bin body has {} bytes, expected {}",
            body.len(),
            n_chains * per_chain * record * 8
        )));
    }
    let mut vals = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |k: usize| -> Vec<f64> { vals.by_ref().take(k).collect() };
    let mut chains = Vec::with_capacity(n_chains);
    for cm in &meta.chains {
        let mut draws = Vec::with_capacity(per_chain);
        for _ in 0..per_chain {
            let theta_aux = take(cats);
            let mu_aux = take(cats);
            let log_sigma_eta = take(cats);
            let log_sigma = take(cats);
            let h = take(6);
            let hyper = Hyper::from_array([h[0], h[1], h[2], h[3], h[4], h[5]]);
            let x = if states {
                DMatrix::from_vec(windows, cats, take(windows * cats))
            } else {
                DMatrix::zeros(0, 0)
            };
            draws.push(ParamState {
                theta_aux,
                mu_aux,
                log_sigma_eta,
                log_sigma,
                hyper,
                x,
            });
        }
        chains.push(ChainDraws {
            chain_id: cm.chain_id,
            draws,
            acceptance: cm.acceptance.clone(),
            state_summary: None,
        });
    }
    Ok(chains)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_draws(states: bool) -> PosteriorDraws {
        let mk = |k: f64| {
            let mut s = ParamState::from_natural(
                &[0.8, 0.6 + k * 0.01],
                &[0.1, -0.2],
                &[0.05, 0.04 + k * 1e-3],
                &[0.2, 0.1],
                Hyper::from_array([0.1, 0.7, -1.9, 0.5, -3.0, 0.5 + k * 1e-3]),
            );
            if states {
                s.x = DMatrix::from_fn(3, 2, |t, j| k + t as f64 * 0.1 - j as f64 * 0.01);
            }
            s
        };
        PosteriorDraws {
            variant: Variant::Hierarchical,
            categories: vec!["a".into(), "b".into()],
            windows: 3,
            chains: (0..2)
                .map(|c| ChainDraws {
                    chain_id: c,
                    draws: (0..4).map(|i| mk((c * 10 + i) as f64)).collect(),
                    acceptance: vec![],
                    state_summary: None,
                })
                .collect(),
        }
    }

    #[test]
    fn scalar_names_parse() {
        assert_eq!(Scalar::parse("theta[2]", 2, 3).unwrap(), Scalar::Param(ParamKind::Theta, 1));
        assert_eq!(Scalar::parse("sigma_eta[1]", 2, 3).unwrap(), Scalar::Param(ParamKind::SigmaEta, 0));
        assert_eq!(Scalar::parse("x[3,1]", 2, 3).unwrap(), Scalar::State(2, 0));
        assert_eq!(Scalar::parse("sigma_theta", 2, 3).unwrap(), Scalar::Hyper(1));
        for bad in ["theta[0]", "theta[3]", "x[4,1]", "nope", "theta", "x[1]"] {
            assert!(matches!(Scalar::parse(bad, 2, 3), Err(Error::UnknownName(_))), "{bad}");
        }
    }

    #[test]
    fn store_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for states in [true, false] {
            let d = sample_draws(states);
            write_draws(dir.path(), &d, states).unwrap();
            let back = read_draws(dir.path()).unwrap();
            assert_eq!(back.variant, d.variant);
            assert_eq!(back.categories, d.categories);
            for (a, b) in back.chains.iter().zip(&d.chains) {
                assert_eq!(a.draws, b.draws);
            }
        }
    }

    #[test]
    fn binary_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        write_draws(dir.path(), &sample_draws(true), false).unwrap();
        let bytes = fs::read(dir.path().join("draws.bin")).unwrap();
        assert_eq!(&bytes[..8], b"SSMDRAWS");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
        assert_eq!(bytes.len(), 32 + 2 * 4 * (8 + 6 + 6) * 8);
    }

    #[test]
    fn corrupted_store_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_draws(dir.path(), &sample_draws(false), false).unwrap();
        let path = dir.path().join("draws.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_draws(dir.path()), Err(Error::Format(_))));
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_draws(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn csv_row_count() {
        let dir = tempfile::tempdir().unwrap();
        write_draws(dir.path(), &sample_draws(true), true).unwrap();
        let text = fs::read_to_string(dir.path().join("draws.csv")).unwrap();
        // (8 params + 6 hyper + 6 states) per draw, 8 draws, plus header
        assert_eq!(text.lines().count(), 1 + 8 * 20);
    }

    #[test]
    fn state_quantiles_are_ordered() {
        let d = sample_draws(true);
        for col in d.state_quantiles().unwrap() {
            for q in col {
                assert!(q[0] <= q[1] && q[1] <= q[2]);
            }
        }
        assert!(sample_draws(false).state_quantiles().is_err());
    }
}
