//! Article records and the weekly category panel built from them.
//!
//! An article carries one sentiment score in `[-1, 1]` and a relevance weight
//! per category. After thresholding weak relevances to zero, every article is
//! assigned to a fixed-length calendar window and the panel cell `(t, j)`
//! holds the relevance-weighted mean sentiment `y` together with the total
//! relevance mass `n` that produced it.

use chrono::{DateTime, NaiveDate, Utc};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Default relevance cutoff below which a category weight is treated as noise.
pub const DEFAULT_TAU: f64 = 0.25;
/// Default maximum fraction of empty windows tolerated for a category.
pub const DEFAULT_MAX_EMPTY_FRACTION: f64 = 0.10;
/// Allowed deviation of `pos + neu + neg` from one.
pub const PROB_SUM_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub id: String,
    pub published_at: DateTime<Utc>,
    pub sentiment: f64,
    pub relevance: Vec<f64>,
}

impl ArticleRecord {
    pub fn new(
        id: impl Into<String>,
        published_at: DateTime<Utc>,
        sentiment: f64,
        relevance: Vec<f64>,
    ) -> Result<Self> {
        let id = id.into();
        if !(-1.0..=1.0).contains(&sentiment) {
            return Err(Error::InvalidInput(format!(
                "article {id}: sentiment {sentiment} outside [-1, 1]"
            )));
        }
        if let Some(c) = relevance.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::InvalidInput(format!(
                "article {id}: relevance {c} outside [0, 1]"
            )));
        }
        Ok(Self {
            id,
            published_at,
            sentiment,
            relevance,
        })
    }
}

/// Collapse classifier probabilities into one score, `pos - neg`.
pub fn score_from_probs(pos: f64, neu: f64, neg: f64) -> Result<f64> {
    let open_unit = |p: f64| p > 0.0 && p < 1.0;
    if !(open_unit(pos) && open_unit(neu) && open_unit(neg)) {
        return Err(Error::InvalidInput(format!(
            "sentiment probabilities must lie in (0, 1): pos={pos}, neu={neu}, neg={neg}"
        )));
    }
    let total = pos + neu + neg;
    if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "sentiment probabilities sum to {total}, expected 1 ± {PROB_SUM_TOLERANCE}"
        )));
    }
    Ok((pos - neg).clamp(-1.0, 1.0))
}

/// Zero every relevance below `tau` and drop records left with no category.
pub fn threshold_relevance(records: &[ArticleRecord], tau: f64) -> Vec<ArticleRecord> {
    records
        .iter()
        .filter_map(|r| {
            let relevance: Vec<f64> = r
                .relevance
                .iter()
                .map(|&c| if c < tau { 0.0 } else { c })
                .collect();
            relevance.iter().any(|&c| c > 0.0).then(|| ArticleRecord {
                relevance,
                ..r.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowingConfig {
    pub window_start_date: NaiveDate,
    #[serde(default = "default_window_length")]
    pub window_length_days: u32,
    pub window_count: usize,
}

fn default_window_length() -> u32 {
    7
}

impl WindowingConfig {
    pub fn new(window_start_date: NaiveDate, window_length_days: u32, window_count: usize) -> Result<Self> {
        let cfg = Self {
            window_start_date,
            window_length_days,
            window_count,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length_days < 1 {
            return Err(Error::Config("window_length_days must be at least 1".into()));
        }
        if self.window_count < 2 {
            return Err(Error::Config("window_count must be at least 2".into()));
        }
        Ok(())
    }

    pub fn window_starts(&self) -> Vec<NaiveDate> {
        (0..self.window_count)
            .map(|t| {
                self.window_start_date
                    + chrono::Duration::days(t as i64 * self.window_length_days as i64)
            })
            .collect()
    }
}

/// Where a timestamp falls relative to the configured windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowAssignment {
    /// Zero-based window index.
    Window(usize),
    BeforeFirst,
    AfterLast,
}

/// Assign a publication time to a window by flooring its UTC calendar date.
pub fn assign_window(published_at: DateTime<Utc>, cfg: &WindowingConfig) -> WindowAssignment {
    let days = (published_at.date_naive() - cfg.window_start_date).num_days();
    if days < 0 {
        return WindowAssignment::BeforeFirst;
    }
    let t = (days / cfg.window_length_days as i64) as usize;
    if t >= cfg.window_count {
        WindowAssignment::AfterLast
    } else {
        WindowAssignment::Window(t)
    }
}

/// Weekly category panel. `y` and `n` are `windows × categories`; `y` is NaN
/// exactly where `n` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SentimentPanel {
    pub y: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub categories: Vec<String>,
    pub window_starts: Vec<NaiveDate>,
    /// Retained articles per window, when the panel was built from articles.
    pub article_counts: Option<Vec<usize>>,
}

impl SentimentPanel {
    pub fn new(
        y: DMatrix<f64>,
        n: DMatrix<f64>,
        categories: Vec<String>,
        window_starts: Vec<NaiveDate>,
    ) -> Result<Self> {
        let panel = Self {
            y,
            n,
            categories,
            window_starts,
            article_counts: None,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn windows(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_categories(&self) -> usize {
        self.y.ncols()
    }

    /// Column of observations for category `j`.
    pub fn y_col(&self, j: usize) -> &[f64] {
        let n = self.windows();
        &self.y.as_slice()[j * n..(j + 1) * n]
    }

    pub fn n_col(&self, j: usize) -> &[f64] {
        let n = self.windows();
        &self.n.as_slice()[j * n..(j + 1) * n]
    }

    pub fn is_observed(&self, t: usize, j: usize) -> bool {
        !self.y[(t, j)].is_nan()
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.y.shape();
        if self.n.shape() != (rows, cols) {
            return Err(Error::Dimension(format!(
                "y is {rows}x{cols} but n is {}x{}",
                self.n.nrows(),
                self.n.ncols()
            )));
        }
        if self.categories.len() != cols || self.window_starts.len() != rows {
            return Err(Error::Dimension(format!(
                "panel is {rows}x{cols} but has {} window labels and {} category labels",
                self.window_starts.len(),
                self.categories.len()
            )));
        }
        for j in 0..cols {
            for t in 0..rows {
                let (y, n) = (self.y[(t, j)], self.n[(t, j)]);
                if !(n >= 0.0) || !n.is_finite() {
                    return Err(Error::InvalidInput(format!("n[{t},{j}] = {n} must be >= 0")));
                }
                if y.is_nan() != (n == 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "cell ({t},{j}): y must be missing exactly when n = 0 (y={y}, n={n})"
                    )));
                }
                if !y.is_nan() && !(-1.0..=1.0).contains(&y) {
                    return Err(Error::InvalidInput(format!("y[{t},{j}] = {y} outside [-1, 1]")));
                }
            }
        }
        Ok(())
    }

    /// Restrict to a subset of categories, keeping the given order.
    pub fn select_categories(&self, keep: &[usize]) -> SentimentPanel {
        SentimentPanel {
            y: self.y.select_columns(keep),
            n: self.n.select_columns(keep),
            categories: keep.iter().map(|&j| self.categories[j].clone()).collect(),
            window_starts: self.window_starts.clone(),
            article_counts: self.article_counts.clone(),
        }
    }
}

/// Bookkeeping produced by [`aggregate`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub records: usize,
    pub in_range: usize,
    pub before_first_window: usize,
    pub after_last_window: usize,
}

/// Relevance-weighted mean sentiment per window and category.
pub fn aggregate(
    records: &[ArticleRecord],
    cfg: &WindowingConfig,
    categories: &[String],
) -> Result<(SentimentPanel, AggregateReport)> {
    cfg.validate()?;
    let (rows, cols) = (cfg.window_count, categories.len());
    let mut num = DMatrix::<f64>::zeros(rows, cols);
    let mut den = DMatrix::<f64>::zeros(rows, cols);
    let mut counts = vec![0usize; rows];
    let mut report = AggregateReport {
        records: records.len(),
        ..Default::default()
    };
    for r in records {
        if r.relevance.len() != cols {
            return Err(Error::Dimension(format!(
                "article {} has {} relevance scores for {cols} categories",
                r.id,
                r.relevance.len()
            )));
        }
        match assign_window(r.published_at, cfg) {
            WindowAssignment::BeforeFirst => report.before_first_window += 1,
            WindowAssignment::AfterLast => report.after_last_window += 1,
            WindowAssignment::Window(t) => {
                report.in_range += 1;
                counts[t] += 1;
                for (j, &c) in r.relevance.iter().enumerate() {
                    num[(t, j)] += c * r.sentiment;
                    den[(t, j)] += c;
                }
            }
        }
    }
    let y = num.zip_map(&den, |s, w| if w > 0.0 { (s / w).clamp(-1.0, 1.0) } else { f64::NAN });
    let panel = SentimentPanel {
        y,
        n: den,
        categories: categories.to_vec(),
        window_starts: cfg.window_starts(),
        article_counts: Some(counts),
    };
    Ok((panel, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCategory {
    pub category: String,
    pub empty_fraction: f64,
}

/// Drop categories whose fraction of empty windows exceeds the cutoff.
pub fn filter_categories(
    panel: &SentimentPanel,
    max_empty_fraction: f64,
) -> Result<(SentimentPanel, Vec<DroppedCategory>)> {
    if !(0.0..=1.0).contains(&max_empty_fraction) {
        return Err(Error::Config(format!(
            "max_empty_fraction {max_empty_fraction} outside [0, 1]"
        )));
    }
    let rows = panel.windows() as f64;
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..panel.n_categories() {
        let empty = panel.n_col(j).iter().filter(|&&n| n == 0.0).count() as f64 / rows;
        if empty > max_empty_fraction {
            dropped.push(DroppedCategory {
                category: panel.categories[j].clone(),
                empty_fraction: empty,
            });
        } else {
            keep.push(j);
        }
    }
    if keep.is_empty() {
        return Err(Error::NoCategoriesLeft {
            dropped: dropped.into_iter().map(|d| d.category).collect(),
        });
    }
    Ok((panel.select_categories(&keep), dropped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: String,
    /// min, 25%, median, 75%, max of the window weights
    pub n_quantiles: [f64; 5],
    pub n_total: f64,
    pub mean_y: Option<f64>,
    pub zero_weight_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSummary {
    pub windows: usize,
    pub categories: usize,
    pub total_articles: Option<usize>,
    pub mean_articles_per_window: Option<f64>,
    pub zero_weight_cells: usize,
    pub per_category: Vec<CategorySummary>,
}

pub fn panel_summary(panel: &SentimentPanel) -> PanelSummary {
    let per_category: Vec<CategorySummary> = (0..panel.n_categories())
        .map(|j| {
            let n = panel.n_col(j);
            let q = stats::quantiles(n, &[0.0, 0.25, 0.5, 0.75, 1.0]);
            let observed: Vec<f64> = panel.y_col(j).iter().copied().filter(|y| !y.is_nan()).collect();
            CategorySummary {
                category: panel.categories[j].clone(),
                n_quantiles: [q[0], q[1], q[2], q[3], q[4]],
                n_total: n.iter().sum(),
                mean_y: (!observed.is_empty()).then(|| stats::mean(&observed)),
                zero_weight_cells: n.iter().filter(|&&v| v == 0.0).count(),
            }
        })
        .collect();
    let total_articles = panel.article_counts.as_ref().map(|c| c.iter().sum::<usize>());
    PanelSummary {
        windows: panel.windows(),
        categories: panel.n_categories(),
        total_articles,
        mean_articles_per_window: total_articles.map(|a| a as f64 / panel.windows() as f64),
        zero_weight_cells: per_category.iter().map(|c| c.zero_weight_cells).sum(),
        per_category,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn at(y: i32, m: u32, d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, 12, 0, 0).unwrap()
    }

    fn weekly(count: usize) -> WindowingConfig {
        WindowingConfig::new(NaiveDate::from_ymd_opt(2023, 12, 31).unwrap(), 7, count).unwrap()
    }

    fn rec(id: &str, when: DateTime<Utc>, s: f64, c: Vec<f64>) -> ArticleRecord {
        ArticleRecord::new(id, when, s, c).unwrap()
    }

    #[test]
    fn score_examples() {
        assert!((score_from_probs(0.7, 0.2, 0.1).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(score_from_probs(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap(), 0.0);
        assert!((score_from_probs(0.05, 0.05, 0.90).unwrap() + 0.85).abs() < 1e-15);
    }

    #[test]
    fn score_rejects_bad_probabilities() {
        assert!(score_from_probs(0.0, 0.5, 0.5).is_err());
        assert!(score_from_probs(0.5, 0.5, 1.0).is_err());
        assert!(score_from_probs(0.5, 0.2, 0.2).is_err());
        // 0.985 is inside the tolerance
        assert!(score_from_probs(0.5, 0.285, 0.2).is_ok());
    }

    #[test]
    fn record_invariants() {
        assert!(ArticleRecord::new("a", at(2024, 1, 1), 1.2, vec![0.5]).is_err());
        assert!(ArticleRecord::new("a", at(2024, 1, 1), 0.2, vec![1.5]).is_err());
    }

    #[test]
    fn threshold_examples() {
        let r = vec![rec("a", at(2024, 1, 1), 0.1, vec![0.2, 0.8])];
        let out = threshold_relevance(&r, 0.25);
        assert_eq!(out[0].relevance, vec![0.0, 0.8]);

        let r = vec![rec("b", at(2024, 1, 1), 0.1, vec![0.1, 0.2])];
        assert!(threshold_relevance(&r, 0.25).is_empty());

        let r = vec![
            rec("c", at(2024, 1, 1), 0.1, vec![0.1, 0.2]),
            rec("d", at(2024, 1, 2), -0.3, vec![0.0, 0.9]),
        ];
        assert_eq!(threshold_relevance(&r, 0.0), r);
    }

    #[test]
    fn window_examples() {
        let cfg = weekly(10);
        assert_eq!(assign_window(at(2023, 12, 31), &cfg), WindowAssignment::Window(0));
        assert_eq!(assign_window(at(2024, 1, 7), &cfg), WindowAssignment::Window(1));
        assert_eq!(assign_window(at(2023, 12, 30), &cfg), WindowAssignment::BeforeFirst);
        assert_eq!(assign_window(at(2024, 3, 10), &cfg), WindowAssignment::AfterLast);
        // late on the last day of a window still belongs to it
        let late = Utc.with_ymd_and_hms(2024, 1, 6, 23, 59, 59).unwrap();
        assert_eq!(assign_window(late, &cfg), WindowAssignment::Window(0));
    }

    #[test]
    fn windowing_config_invariants() {
        let d = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        assert!(WindowingConfig::new(d, 0, 5).is_err());
        assert!(WindowingConfig::new(d, 7, 1).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let cfg = weekly(2);
        let cats = vec!["a".to_string()];
        let (p, _) = aggregate(
            &[rec("1", at(2024, 1, 1), 1.0, vec![0.5]), rec("2", at(2024, 1, 2), 0.0, vec![0.5])],
            &cfg,
            &cats,
        )
        .unwrap();
        assert_eq!(p.y[(0, 0)], 0.5);
        assert_eq!(p.n[(0, 0)], 1.0);
        assert!(p.y[(1, 0)].is_nan());
        assert_eq!(p.n[(1, 0)], 0.0);

        let (p, _) = aggregate(&[rec("1", at(2024, 1, 1), -0.4, vec![0.8])], &cfg, &cats).unwrap();
        assert!((p.y[(0, 0)] + 0.4).abs() < 1e-15);
        assert_eq!(p.n[(0, 0)], 0.8);

        let (p, _) = aggregate(
            &[rec("1", at(2024, 1, 1), 1.0, vec![0.9]), rec("2", at(2024, 1, 1), -1.0, vec![0.1])],
            &cfg,
            &cats,
        )
        .unwrap();
        // (0.9 - 0.1) / 1.0
        assert!((p.y[(0, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(p.n[(0, 0)], 1.0);
    }

    #[test]
    fn aggregate_counts_out_of_range() {
        let cfg = weekly(2);
        let cats = vec!["a".to_string()];
        let recs = vec![
            rec("1", at(2023, 12, 1), 1.0, vec![0.5]),
            rec("2", at(2024, 1, 2), 0.0, vec![0.5]),
            rec("3", at(2024, 6, 2), 0.0, vec![0.5]),
        ];
        let (p, report) = aggregate(&recs, &cfg, &cats).unwrap();
        assert_eq!(
            report,
            AggregateReport { records: 3, in_range: 1, before_first_window: 1, after_last_window: 1 }
        );
        assert_eq!(p.article_counts, Some(vec![1, 0]));
    }

    #[test]
    fn aggregate_rejects_wrong_relevance_length() {
        let cfg = weekly(2);
        let cats = vec!["a".to_string(), "b".to_string()];
        let recs = vec![rec("1", at(2024, 1, 1), 1.0, vec![0.5])];
        assert!(matches!(aggregate(&recs, &cfg, &cats), Err(Error::Dimension(_))));
    }

    fn panel_with_empty(counts_empty: &[usize], rows: usize) -> SentimentPanel {
        let cols = counts_empty.len();
        let mut y = DMatrix::from_element(rows, cols, 0.1);
        let mut n = DMatrix::from_element(rows, cols, 2.0);
        for (j, &e) in counts_empty.iter().enumerate() {
            for t in 0..e {
                y[(t, j)] = f64::NAN;
                n[(t, j)] = 0.0;
            }
        }
        let cats = (0..cols).map(|j| format!("c{j}")).collect();
        SentimentPanel::new(y, n, cats, weekly(rows).window_starts()).unwrap()
    }

    #[test]
    fn filter_examples() {
        let p = panel_with_empty(&[0, 50], 100);
        let (kept, dropped) = filter_categories(&p, 0.1).unwrap();
        assert_eq!(kept.categories, vec!["c0"]);
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].category, "c1");
        assert!((dropped[0].empty_fraction - 0.5).abs() < 1e-15);

        let (kept, dropped) = filter_categories(&p, 1.0).unwrap();
        assert_eq!(kept.n_categories(), 2);
        assert!(dropped.is_empty());

        let p = panel_with_empty(&[60, 50], 100);
        assert!(matches!(filter_categories(&p, 0.1), Err(Error::NoCategoriesLeft { .. })));
    }

    #[test]
    fn summary_examples() {
        let cfg = weekly(2);
        let cats = vec!["a".to_string(), "b".to_string()];
        let recs: Vec<_> = (0..10)
            .map(|i| rec(&i.to_string(), at(2024, 1, 1 + (i % 2) as u32 * 7), 0.2, vec![0.5, 0.0]))
            .collect();
        let (p, _) = aggregate(&recs, &cfg, &cats).unwrap();
        let s = panel_summary(&p);
        assert_eq!(s.total_articles, Some(10));
        assert_eq!(s.mean_articles_per_window, Some(5.0));
        // category b never receives weight
        assert_eq!(s.per_category[1].zero_weight_cells, 2);
        assert_eq!(s.per_category[1].mean_y, None);
        assert_eq!(s.zero_weight_cells, 2);
    }

    #[test]
    fn panel_rejects_inconsistent_missingness() {
        let y = DMatrix::from_row_slice(2, 1, &[0.1, f64::NAN]);
        let n = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(SentimentPanel::new(y, n, vec!["a".into()], weekly(2).window_starts()).is_err());
    }

    fn arb_records() -> impl Strategy<Value = Vec<(i64, f64, Vec<f64>)>> {
        prop::collection::vec(
            (0i64..28, -1.0f64..=1.0, prop::collection::vec(0.0f64..=1.0, 3)),
            1..40,
        )
    }

    fn build(raw: &[(i64, f64, Vec<f64>)]) -> Vec<ArticleRecord> {
        raw.iter()
            .enumerate()
            .map(|(i, (d, s, c))| rec(&i.to_string(), at(2023, 12, 31) + chrono::Duration::days(*d), *s, c.clone()))
            .collect()
    }

    proptest! {
        #[test]
        fn weight_scaling_invariance(raw in arb_records(), scale in 0.05f64..1.0) {
            let cfg = weekly(4);
            let cats: Vec<String> = (0..3).map(|j| j.to_string()).collect();
            let recs = build(&raw);
            let scaled: Vec<_> = recs.iter().map(|r| ArticleRecord {
                relevance: r.relevance.iter().map(|c| c * scale).collect(), ..r.clone()
            }).collect();
            let (a, _) = aggregate(&recs, &cfg, &cats).unwrap();
            let (b, _) = aggregate(&scaled, &cfg, &cats).unwrap();
            for t in 0..4 { for j in 0..3 {
                if a.n[(t, j)] > 1e-9 {
                    prop_assert!((a.y[(t, j)] - b.y[(t, j)]).abs() < 1e-12);
                }
                prop_assert!((a.n[(t, j)] * scale - b.n[(t, j)]).abs() < 1e-12);
            }}
        }

        #[test]
        fn weighted_mean_within_contributor_range(raw in arb_records()) {
            let cfg = weekly(4);
            let cats: Vec<String> = (0..3).map(|j| j.to_string()).collect();
            let recs = build(&raw);
            let (p, report) = aggregate(&recs, &cfg, &cats).unwrap();
            prop_assert_eq!(report.in_range, recs.len());
            prop_assert_eq!(p.article_counts.unwrap().iter().sum::<usize>(), recs.len());
            for t in 0..4 { for j in 0..3 {
                let contrib: Vec<f64> = recs.iter()
                    .filter(|r| assign_window(r.published_at, &cfg) == WindowAssignment::Window(t) && r.relevance[j] > 0.0)
                    .map(|r| r.sentiment).collect();
                if p.n[(t, j)] > 0.0 {
                    let lo = contrib.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = contrib.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(p.y[(t, j)] >= lo - 1e-12 && p.y[(t, j)] <= hi + 1e-12);
                } else {
                    prop_assert!(p.y[(t, j)].is_nan());
                }
            }}
        }

        #[test]
        fn threshold_is_idempotent(raw in arb_records(), tau in 0.0f64..1.0) {
            let recs = build(&raw);
            let once = threshold_relevance(&recs, tau);
            prop_assert_eq!(threshold_relevance(&once, tau), once);
        }
    }
}
