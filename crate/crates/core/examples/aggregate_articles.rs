//! Turn scored articles into a weekly panel: relevance threshold, windowing,
//! weighted means and the empty-window filter.
//!
//!     cargo run --example aggregate_articles

use chrono::{NaiveDate, TimeZone, Utc};
use sentiment_ssm::panel::{
    aggregate, filter_categories, panel_summary, score_from_probs, threshold_relevance, ArticleRecord,
    WindowingConfig, DEFAULT_MAX_EMPTY_FRACTION, DEFAULT_TAU,
};

fn main() -> sentiment_ssm::Result<()> {
    let categories: Vec<String> = ["rates", "energy", "crypto"].map(String::from).to_vec();
    let at = |d: u32, h: u32| Utc.with_ymd_and_hms(2024, 1, d, h, 0, 0).unwrap();

    // (day, hour, positive, neutral, negative, relevance per category)
    let raw = [
        (1, 9, 0.70, 0.20, 0.10, [0.9, 0.1, 0.0]),
        (2, 14, 0.10, 0.30, 0.60, [0.6, 0.8, 0.0]),
        (4, 8, 0.40, 0.40, 0.20, [0.0, 1.0, 0.3]),
        (9, 11, 0.20, 0.20, 0.60, [1.0, 0.0, 0.0]),
        (10, 16, 0.55, 0.35, 0.10, [0.3, 0.7, 0.1]),
        (15, 10, 0.33, 0.34, 0.33, [0.5, 0.5, 0.0]),
        (16, 12, 0.80, 0.15, 0.05, [0.2, 0.9, 0.0]),
    ];
    let mut records = Vec::new();
    for (i, (d, h, pos, neu, neg, rel)) in raw.into_iter().enumerate() {
        let s = score_from_probs(pos, neu, neg)?;
        records.push(ArticleRecord::new(format!("a{i}"), at(d, h), s, rel.to_vec())?);
    }

    let kept = threshold_relevance(&records, DEFAULT_TAU);
    let windowing = WindowingConfig::new(NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(), 7, 3)?;
    let (panel, report) = aggregate(&kept, &windowing, &categories)?;
    println!("{report:?}");

    println!("{:<12} {:>10} {:>10} {:>10}", "window", "rates", "energy", "crypto");
    for t in 0..panel.windows() {
        let cells: Vec<String> = (0..3).map(|j| format!("{:+.3}/{:.1}", panel.y[(t, j)], panel.n[(t, j)])).collect();
        println!("{:<12} {:>10} {:>10} {:>10}", panel.window_starts[t], cells[0], cells[1], cells[2]);
    }

    let (filtered, dropped) = filter_categories(&panel, DEFAULT_MAX_EMPTY_FRACTION)?;
    println!("dropped: {dropped:?}");
    println!("{}", serde_json::to_string_pretty(&panel_summary(&filtered)).unwrap());
    Ok(())
}
