//! File formats: article input (JSON Lines or CSV) and the long-format panel
//! CSV (`window_start,category,y,n`).

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::panel::{score_from_probs, ArticleRecord, SentimentPanel};

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_f64(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("nan") || s.is_empty() || s.eq_ignore_ascii_case("na") {
        Some(f64::NAN)
    } else {
        s.parse().ok()
    }
}

/// Accepts RFC 3339, `YYYY-MM-DD HH:MM:SS` (taken as UTC), or a bare date.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
}

fn relevance_column(category: &str) -> String {
    format!("c_{category}")
}

fn build_record(
    path: &Path,
    line: usize,
    get: &dyn Fn(&str) -> Option<String>,
    categories: &[String],
) -> Result<ArticleRecord> {
    let err = |m: String| Error::parse(path, format!("record {line}: {m}"));
    let id = get("id").ok_or_else(|| err("missing id".into()))?;
    let ts = get("published_at").ok_or_else(|| err("missing published_at".into()))?;
    let published_at = parse_timestamp(&ts).ok_or_else(|| err(format!("malformed timestamp `{ts}`")))?;
    let num = |key: &str| -> Result<f64> {
        let raw = get(key).ok_or_else(|| err(format!("missing {key}")))?;
        raw.trim().parse::<f64>().map_err(|_| err(format!("{key}: not a number `{raw}`")))
    };
    let sentiment = match get("sentiment").filter(|s| !s.trim().is_empty()) {
        Some(_) => num("sentiment")?,
        None => score_from_probs(num("pos")?, num("neu")?, num("neg")?).map_err(|e| err(e.to_string()))?,
    };
    let relevance = categories
        .iter()
        .map(|c| num(&relevance_column(c)))
        .collect::<Result<Vec<_>>>()?;
    ArticleRecord::new(id, published_at, sentiment, relevance).map_err(|e| err(e.to_string()))
}

/// Read articles from `.jsonl`/`.json` (one object per line) or `.csv`.
pub fn read_articles(path: &Path, categories: &[String]) -> Result<Vec<ArticleRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "csv" {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::parse(path, e))?.clone();
        let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
        let mut out = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| Error::parse(path, e))?;
            let get = |k: &str| index.get(k).and_then(|&c| row.get(c)).map(str::to_string);
            out.push(build_record(path, i + 1, &get, categories)?);
        }
        Ok(out)
    } else {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let obj: serde_json::Map<String, serde_json::Value> =
                serde_json::from_str(line).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))?;
            let get = |k: &str| {
                obj.get(k).and_then(|v| match v {
                    serde_json::Value::String(s) => Some(s.clone()),
                    serde_json::Value::Number(n) => Some(n.to_string()),
                    _ => None,
                })
            };
            out.push(build_record(path, i + 1, &get, categories)?);
        }
        Ok(out)
    }
}

/// Write articles as JSON Lines in the input schema.
pub fn write_articles_jsonl(path: &Path, records: &[ArticleRecord], categories: &[String]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        let mut obj = serde_json::Map::new();
        obj.insert("id".into(), r.id.clone().into());
        obj.insert("published_at".into(), r.published_at.to_rfc3339().into());
        obj.insert("sentiment".into(), r.sentiment.into());
        for (c, v) in categories.iter().zip(&r.relevance) {
            obj.insert(relevance_column(c), (*v).into());
        }
        serde_json::to_writer(&mut buf, &obj).expect("json object");
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_panel_csv(path: &Path, panel: &SentimentPanel) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |e: csv::Error| Error::parse(path, e);
    w.write_record(["window_start", "category", "y", "n"]).map_err(e)?;
    for (j, cat) in panel.categories.iter().enumerate() {
        for (t, start) in panel.window_starts.iter().enumerate() {
            w.write_record([
                start.to_string(),
                cat.clone(),
                fmt_f64(panel.y[(t, j)]),
                fmt_f64(panel.n[(t, j)]),
            ])
            .map_err(e)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::parse(path, e))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_panel_csv(path: &Path) -> Result<SentimentPanel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut cats: Vec<String> = Vec::new();
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut cells: HashMap<(NaiveDate, String), (f64, f64)> = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::parse(path, e))?;
        let bad = |m: &str| Error::parse(path, format!("row {}: {m}", i + 1));
        if row.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d").map_err(|_| bad("bad window_start"))?;
        let cat = row[1].to_string();
        let y = parse_f64(&row[2]).ok_or_else(|| bad("bad y"))?;
        let n: f64 = row[3].trim().parse().map_err(|_| bad("bad n"))?;
        if !cats.contains(&cat) {
            cats.push(cat.clone());
        }
        if !dates.contains(&date) {
            dates.push(date);
        }
        if cells.insert((date, cat), (y, n)).is_some() {
            return Err(bad("duplicate cell"));
        }
    }
    dates.sort();
    let (rows, cols) = (dates.len(), cats.len());
    if cells.len() != rows * cols {
        return Err(Error::parse(path, format!("panel has {} cells, expected {rows}x{cols}", cells.len())));
    }
    let mut y = DMatrix::zeros(rows, cols);
    let mut n = DMatrix::zeros(rows, cols);
    for (t, d) in dates.iter().enumerate() {
        for (j, c) in cats.iter().enumerate() {
            let (yv, nv) = cells[&(*d, c.clone())];
            y[(t, j)] = yv;
            n[(t, j)] = nv;
        }
    }
    SentimentPanel::new(y, n, cats, dates).map_err(|e| Error::parse(path, e))
}

/// Write `rows` of preformatted fields as CSV with the given header.
pub fn write_csv_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |e: csv::Error| Error::parse(path, e);
    w.write_record(header).map_err(e)?;
    for r in rows {
        w.write_record(r).map_err(e)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse(path, e))?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
