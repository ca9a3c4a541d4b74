//! Readers and writers for every file the pipeline consumes or produces.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use topicforge_core::cluster::ClusterResult;
use topicforge_core::dedup::DedupDecision;
use topicforge_core::ingest::{ClickRecord, RowError};
use topicforge_core::tokenize::{FacetLexicon, Vocabulary};
use topicforge_core::train::EpochStats;

pub const CLICK_FIELDS: [&str; 5] = ["query", "page_id", "page_type", "clicks", "impressions"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl LogFormat {
    /// `.csv` is CSV; `.jsonl`, `.json` and `.ndjson` are JSON lines.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(LogFormat::Csv),
            Some("jsonl" | "json" | "ndjson") => Ok(LogFormat::Jsonl),
            _ => bail!("cannot infer click log format from {}", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    pub line: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedLog {
    pub records: Vec<ClickRecord>,
    pub errors: Vec<RowIssue>,
}

pub fn parse_click_log(path: &Path, format: LogFormat) -> Result<ParsedLog> {
    let contents = fs::read_to_string(path).with_context(|| format!("reading click log {}", path.display()))?;
    parse_click_log_str(&contents, format).with_context(|| format!("parsing click log {}", path.display()))
}

/// Well-formed rows become records; every other row becomes a [`RowIssue`].
/// A header that lacks one of the schema fields is fatal.
pub fn parse_click_log_str(contents: &str, format: LogFormat) -> Result<ParsedLog> {
    match format {
        LogFormat::Csv => parse_csv_log(contents),
        LogFormat::Jsonl => Ok(parse_jsonl_log(contents)),
    }
}

fn parse_csv_log(contents: &str) -> Result<ParsedLog> {
    let mut out = ParsedLog::default();
    if contents.trim().is_empty() {
        return Ok(out);
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(contents.as_bytes());
    let header = reader.headers()?.clone();
    let mut columns = [0usize; 5];
    for (slot, field) in columns.iter_mut().zip(CLICK_FIELDS) {
        *slot = header
            .iter()
            .position(|h| h == field)
            .with_context(|| format!("click log header lacks field {field:?} (found {:?})", header.iter().collect::<Vec<_>>()))?;
    }
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.errors.push(RowIssue { line, error: e.to_string() });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != header.len() {
            let error = RowError::FieldCount {
                expected: header.len(),
                found: row.len(),
            };
            out.errors.push(RowIssue { line, error: error.to_string() });
            continue;
        }
        let f = |i: usize| &row[columns[i]];
        match ClickRecord::from_fields(f(0), f(1), f(2), f(3), f(4)) {
            Ok(r) => out.records.push(r),
            Err(e) => out.errors.push(RowIssue { line, error: e.to_string() }),
        }
    }
    Ok(out)
}

fn field_text(obj: &serde_json::Map<String, serde_json::Value>, name: &str) -> Result<String, RowError> {
    match obj.get(name) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
        Some(other) => Err(RowError::Malformed(format!("field {name} has unexpected value {other}"))),
        None => Err(RowError::Malformed(format!("missing field {name}"))),
    }
}

fn parse_jsonl_log(contents: &str) -> ParsedLog {
    let mut out = ParsedLog::default();
    for (i, line) in contents.lines().enumerate() {
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<serde_json::Value>(line)
            .map_err(|e| RowError::Malformed(e.to_string()))
            .and_then(|v| match v {
                serde_json::Value::Object(obj) => {
                    let fields = CLICK_FIELDS.map(|f| field_text(&obj, f));
                    let [q, p, t, c, im] = fields;
                    ClickRecord::from_fields(&q?, &p?, &t?, &c?, &im?)
                }
                _ => Err(RowError::Malformed("expected a JSON object".into())),
            });
        match parsed {
            Ok(r) => out.records.push(r),
            Err(e) => out.errors.push(RowIssue {
                line: line_no,
                error: e.to_string(),
            }),
        }
    }
    out
}

/// Every non-blank line must parse; the first failure is fatal.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}: invalid record", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub facet_name: String,
    pub values: Vec<String>,
}

pub fn read_lexicon(path: &Path) -> Result<FacetLexicon> {
    let entries: Vec<LexiconEntry> = read_jsonl(path)?;
    let mut lex = FacetLexicon::new();
    for e in &entries {
        for v in &e.values {
            lex.insert(&e.facet_name, v);
        }
    }
    Ok(lex)
}

pub fn write_lexicon(path: &Path, lexicon: &FacetLexicon) -> Result<()> {
    let entries: Vec<LexiconEntry> = lexicon
        .iter()
        .map(|(name, values)| LexiconEntry {
            facet_name: name.to_string(),
            values: values.iter().cloned().collect(),
        })
        .collect();
    write_jsonl(path, &entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct VocabEntry {
    token: String,
    id: u32,
}

pub fn write_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let entries: Vec<VocabEntry> = vocab
        .entries()
        .map(|(token, id)| VocabEntry { token: token.to_string(), id })
        .collect();
    write_jsonl(path, &entries)
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let entries: Vec<VocabEntry> = read_jsonl(path)?;
    Vocabulary::from_entries(entries.into_iter().map(|e| (e.token, e.id))).with_context(|| format!("invalid vocabulary {}", path.display()))
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// `epoch,mean_loss` or `epoch,mean_loss,accuracy`.
pub fn write_curve(path: &Path, curve: &[EpochStats], with_accuracy: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    if with_accuracy {
        w.write_record(["epoch", "mean_loss", "accuracy"])?;
    } else {
        w.write_record(["epoch", "mean_loss"])?;
    }
    for e in curve {
        let mut row = vec![e.epoch.to_string(), fmt_f64(e.mean_loss)];
        if with_accuracy {
            row.push(e.accuracy.map(fmt_f64).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub query: String,
    pub product_type: String,
    pub cluster_id: usize,
    pub is_representative: bool,
}

pub fn cluster_rows(result: &ClusterResult) -> Vec<ClusterRow> {
    result
        .assignments
        .iter()
        .map(|(q, a)| ClusterRow {
            query: q.clone(),
            product_type: a.product_type.clone(),
            cluster_id: a.cluster_id,
            is_representative: result.is_representative(q),
        })
        .collect()
}

pub fn write_clusters(path: &Path, rows: &[ClusterRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["query", "product_type", "cluster_id", "is_representative"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_clusters(path: &Path) -> Result<Vec<ClusterRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .map(|row| row.with_context(|| format!("parsing {}", path.display())))
        .collect()
}

/// `query,verdict,best_match,best_similarity,path`; a missing match is an
/// empty field and its similarity `-inf`.
pub fn write_dedup(path: &Path, decisions: &[DedupDecision]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["query", "verdict", "best_match", "best_similarity", "path"])?;
    for d in decisions {
        w.write_record([
            d.query.as_str(),
            d.verdict.as_str(),
            d.best_match.as_deref().unwrap_or(""),
            &fmt_f64(d.best_similarity),
            d.path.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupRow {
    pub query: String,
    pub verdict: String,
    pub best_match: String,
    pub best_similarity: f64,
    pub path: String,
}

pub fn read_dedup(path: &Path) -> Result<Vec<DedupRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.records()
        .map(|row| {
            let row = row.with_context(|| format!("parsing {}", path.display()))?;
            if row.len() != 5 {
                bail!("{}: expected 5 fields, found {}", path.display(), row.len());
            }
            Ok(DedupRow {
                query: row[0].to_string(),
                verdict: row[1].to_string(),
                best_match: row[2].to_string(),
                best_similarity: row[3].parse().with_context(|| format!("bad similarity {:?}", &row[3]))?,
                path: row[4].to_string(),
            })
        })
        .collect()
}

/// Candidate file record: a query and optional click count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateLine {
    pub query: String,
    #[serde(default)]
    pub clicks_total: u64,
}

/// Daily clicks as a JSON object `{date: clicks}`.
pub fn read_daily_clicks(path: &Path) -> Result<BTreeMap<String, f64>> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use topicforge_core::PageType;

    #[test]
    fn csv_row_from_worked_example() {
        let log = parse_click_log_str("query,page_id,page_type,clicks,impressions\niphone case,P2,item,42,100\n", LogFormat::Csv).unwrap();
        assert_eq!(log.records.len(), 1);
        let r = &log.records[0];
        assert_eq!((r.query.as_str(), r.page_id.as_str(), r.page_type), ("iphone case", "P2", PageType::Item));
        assert_eq!((r.clicks, r.impressions), (42, 100));
    }

    #[test]
    fn empty_inputs() {
        for fmt in [LogFormat::Csv, LogFormat::Jsonl] {
            let log = parse_click_log_str("", fmt).unwrap();
            assert!(log.records.is_empty() && log.errors.is_empty());
        }
    }

    #[test]
    fn malformed_rows_counted() {
        let csv = "query,page_id,page_type,clicks,impressions\n\
                   a,P1,shelf,1,2\n\
                   b,P1,shelf,-3,2\n\
                   c,P2,facet,1,5\n\
                   d,P3,item,2\n\
                   e,P3,item,0,0\n";
        let log = parse_click_log_str(csv, LogFormat::Csv).unwrap();
        assert_eq!(log.records.len(), 3);
        assert_eq!(log.errors.len(), 2);
        assert_eq!(log.errors[0].line, 3);
        assert!(log.errors[0].error.contains("negative"));

        let jsonl = r#"{"query":"a","page_id":"P1","page_type":"shelf","clicks":1,"impressions":2}
{"query":"b","page_id":"P1","page_type":"shelf","clicks":"2","impressions":"9"}
not json
{"query":"c","page_id":"P1","page_type":"shelf","clicks":1}
"#;
        let log = parse_click_log_str(jsonl, LogFormat::Jsonl).unwrap();
        assert_eq!(log.records.len(), 2);
        assert_eq!(log.errors.iter().map(|e| e.line).collect::<Vec<_>>(), vec![3, 4]);
    }

    #[test]
    fn header_order_is_free_but_fields_required() {
        let log = parse_click_log_str("clicks,impressions,query,page_type,page_id\n3,4,Red Shoes,shelf,S1\n", LogFormat::Csv).unwrap();
        assert_eq!(log.records[0].query, "red shoes");
        assert!(parse_click_log_str("query,page_id,clicks\nx,y,1\n", LogFormat::Csv).is_err());
    }
}
