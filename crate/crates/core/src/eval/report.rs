//! Report records: a JSON-lines stream for machines and markdown tables laid
//! out as result tables. Both formats load back.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::verification::{Protocol, VerificationOutcome};
use super::TransferMatrix;
use crate::error::{Error, Result};

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRow {
    pub method: String,
    pub dataset: String,
    pub f_database: String,
    pub f_loss: String,
    pub f_target: String,
    pub protocol: Protocol,
    pub far: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub tar: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub skipped_identities: usize,
}

/// Type-I TAR of one transfer cell, shown as a percentage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub method: String,
    pub f_database: String,
    pub f_loss: String,
    pub f_target: String,
    pub dataset: String,
    pub far: f64,
    pub tar: f64,
}

/// Calibrated decision threshold of a recognition model at one FAR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub model: String,
    pub dataset: String,
    pub far: f64,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub region: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub method: String,
    pub regions: Vec<RegionScore>,
}

/// One variant row of an ablation or quality table. Missing metrics render
/// as `n/a`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationRow {
    pub table: String,
    pub variant: String,
    pub type1: Option<f64>,
    pub type2: Option<f64>,
    pub ms_ssim: Option<f64>,
    pub mse: Option<f64>,
    pub famse: Option<f64>,
    pub lpips: Option<f64>,
    /// Mean projector objective over the last training epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
}

impl AblationRow {
    fn metrics(&self) -> [Option<f64>; 7] {
        [
            self.type1,
            self.type2,
            self.ms_ssim,
            self.mse,
            self.famse,
            self.lpips,
            self.train_loss,
        ]
    }
}

const ABLATION_COLUMNS: [&str; 7] = [
    "Type-I",
    "Type-II",
    "MS-SSIM",
    "MSE",
    "FAMSE",
    "LPIPS",
    "Train loss",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Verification(VerificationRow),
    Transfer(TransferRow),
    Threshold(ThresholdRow),
    RegionSimilarity(RegionRow),
    Ablation(AblationRow),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section<'a> {
    Verification,
    Transfer(u64),
    Threshold,
    Region,
    Ablation(&'a str),
}

impl Record {
    fn section(&self) -> Section<'_> {
        match self {
            Record::Verification(_) => Section::Verification,
            Record::Transfer(r) => Section::Transfer(r.far.to_bits()),
            Record::Threshold(_) => Section::Threshold,
            Record::RegionSimilarity(_) => Section::Region,
            Record::Ablation(r) => Section::Ablation(&r.table),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub records: Vec<Record>,
}

/// `0.001` -> `"0.1"` (percent, trailing zeros trimmed).
pub fn format_percent(far: f64) -> String {
    let s = format!("{:.6}", far * 100.0);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn parse_percent(s: &str) -> Result<f64> {
    let v = s
        .strip_suffix('%')
        .ok_or_else(|| Error::Report(format!("expected a percentage, got '{s}'")))?;
    Ok(parse_f64(v)? / 100.0)
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Report(format!("not a number: '{s}'")))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    match s {
        "-" | "n/a" => Ok(None),
        v => parse_f64(v).map(Some),
    }
}

fn fmt_opt(v: Option<f64>, na: &str) -> String {
    v.map_or_else(|| na.to_string(), |x| format!("{x:.4}"))
}

struct MdTable {
    title: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl MdTable {
    fn render(&self, out: &mut String) -> Result<()> {
        for cell in self.header.iter().chain(self.rows.iter().flatten()) {
            if cell.contains('|') || cell.contains('\n') {
                return Err(Error::Report(format!("cell '{cell}' cannot be written to a table")));
            }
        }
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        let _ = write!(out, "### {}\n\n", self.title);
        out.push_str(&line(&self.header));
        let _ = writeln!(out, "|{}", "---|".repeat(self.header.len()));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out.push('\n');
        Ok(())
    }
}

fn split_row(line: &str) -> Vec<String> {
    let inner = line.trim().trim_start_matches('|').trim_end_matches('|');
    inner.split('|').map(|c| c.trim().to_string()).collect()
}

fn parse_tables(text: &str) -> Result<Vec<MdTable>> {
    let mut tables = Vec::new();
    let mut lines = text.lines().peekable();
    while let Some(line) = lines.next() {
        let Some(title) = line.strip_prefix("### ") else {
            continue;
        };
        while lines.peek().is_some_and(|l| l.trim().is_empty()) {
            lines.next();
        }
        let header = split_row(
            lines
                .next()
                .ok_or_else(|| Error::Report(format!("table '{title}' has no header")))?,
        );
        lines.next();
        let mut rows = Vec::new();
        while let Some(l) = lines.peek() {
            if !l.trim_start().starts_with('|') {
                break;
            }
            let row = split_row(l);
            if row.len() != header.len() {
                return Err(Error::Report(format!(
                    "table '{title}': row has {} cells, header has {}",
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
            lines.next();
        }
        tables.push(MdTable {
            title: title.to_string(),
            header,
            rows,
        });
    }
    Ok(tables)
}

fn first_seen<K: PartialEq + Clone>(keys: impl Iterator<Item = K>) -> Vec<K> {
    let mut out: Vec<K> = Vec::new();
    for k in keys {
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

const VERIFICATION_TITLE: &str = "Verification TAR";
const THRESHOLD_TITLE: &str = "Operating thresholds";
const REGION_TITLE: &str = "Region similarity";
const TRANSFER_PREFIX: &str = "Transfer Type-I TAR (%) at FAR=";
const ABLATION_PREFIX: &str = "Ablation: ";

fn verification_table(rows: &[&VerificationRow]) -> MdTable {
    fn key<'a>(r: &&'a VerificationRow) -> (&'a str, &'a str, &'a str, &'a str) {
        (&r.method, &r.f_database, &r.f_loss, &r.f_target)
    }
    let row_keys = first_seen(rows.iter().map(key));
    let mut cols: Vec<(&str, f64, Protocol)> =
        first_seen(rows.iter().map(|r| (r.dataset.as_str(), r.far, r.protocol)));
    cols.sort_by(|a, b| a.0.cmp(b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut header: Vec<String> = ["Method", "F_database", "F_loss", "F_target"]
        .map(String::from)
        .to_vec();
    header.extend(
        cols.iter()
            .map(|(d, far, p)| format!("{d}: {} @ FAR={}%", p.label(), format_percent(*far))),
    );
    let body = row_keys
        .iter()
        .map(|k| {
            let mut cells = vec![k.0.into(), k.1.into(), k.2.into(), k.3.into()];
            cells.extend(cols.iter().map(|c| {
                rows.iter()
                    .find(|r| key(r) == *k && (r.dataset.as_str(), r.far, r.protocol) == *c)
                    .map_or_else(|| "-".to_string(), |r| format!("{:.4}", r.tar))
            }));
            cells
        })
        .collect();
    MdTable {
        title: VERIFICATION_TITLE.into(),
        header,
        rows: body,
    }
}

fn parse_verification(t: &MdTable) -> Result<Vec<Record>> {
    let cols = t.header[4..]
        .iter()
        .map(|h| {
            let (dataset, rest) = h
                .split_once(": ")
                .ok_or_else(|| Error::Report(format!("bad column '{h}'")))?;
            let (proto, far) = rest
                .split_once(" @ FAR=")
                .ok_or_else(|| Error::Report(format!("bad column '{h}'")))?;
            Ok((dataset.to_string(), Protocol::from_label(proto)?, parse_percent(far)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for row in &t.rows {
        for ((dataset, protocol, far), cell) in cols.iter().zip(&row[4..]) {
            if let Some(tar) = parse_opt(cell)? {
                out.push(Record::Verification(VerificationRow {
                    method: row[0].clone(),
                    dataset: dataset.clone(),
                    f_database: row[1].clone(),
                    f_loss: row[2].clone(),
                    f_target: row[3].clone(),
                    protocol: *protocol,
                    far: *far,
                    threshold: None,
                    tar,
                    skipped_identities: 0,
                }));
            }
        }
    }
    Ok(out)
}

fn transfer_table(rows: &[&TransferRow], far: f64) -> MdTable {
    fn key<'a>(r: &&'a TransferRow) -> (&'a str, &'a str, &'a str) {
        (&r.f_database, &r.f_loss, &r.f_target)
    }
    let row_keys = first_seen(rows.iter().map(key));
    let mut cols: Vec<(&str, &str)> =
        first_seen(rows.iter().map(|r| (r.dataset.as_str(), r.method.as_str())));
    cols.sort();
    let mut header: Vec<String> = ["F_database", "F_loss", "F_target"].map(String::from).to_vec();
    header.extend(cols.iter().map(|(d, m)| format!("{d}: {m}")));
    let body = row_keys
        .iter()
        .map(|k| {
            let mut cells = vec![k.0.into(), k.1.into(), k.2.into()];
            cells.extend(cols.iter().map(|c| {
                rows.iter()
                    .find(|r| key(r) == *k && (r.dataset.as_str(), r.method.as_str()) == *c)
                    .map_or_else(|| "-".to_string(), |r| format!("{:.2}", r.tar * 100.0))
            }));
            cells
        })
        .collect();
    MdTable {
        title: format!("{TRANSFER_PREFIX}{}%", format_percent(far)),
        header,
        rows: body,
    }
}

fn parse_transfer(t: &MdTable, far: f64) -> Result<Vec<Record>> {
    let cols = t.header[3..]
        .iter()
        .map(|h| {
            h.split_once(": ")
                .ok_or_else(|| Error::Report(format!("bad column '{h}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for row in &t.rows {
        for ((dataset, method), cell) in cols.iter().zip(&row[3..]) {
            if let Some(pct) = parse_opt(cell)? {
                out.push(Record::Transfer(TransferRow {
                    method: method.to_string(),
                    f_database: row[0].clone(),
                    f_loss: row[1].clone(),
                    f_target: row[2].clone(),
                    dataset: dataset.to_string(),
                    far,
                    tar: pct / 100.0,
                }));
            }
        }
    }
    Ok(out)
}

fn threshold_table(rows: &[&ThresholdRow]) -> MdTable {
    let models = first_seen(rows.iter().map(|r| r.model.as_str()));
    let mut cols: Vec<(&str, f64)> = first_seen(rows.iter().map(|r| (r.dataset.as_str(), r.far)));
    cols.sort_by(|a, b| a.0.cmp(b.0).then(b.1.total_cmp(&a.1)));
    let mut header = vec!["Model".to_string()];
    header.extend(
        cols.iter()
            .map(|(d, far)| format!("{d}: FAR={}%", format_percent(*far))),
    );
    let body = models
        .iter()
        .map(|m| {
            let mut cells = vec![m.to_string()];
            cells.extend(cols.iter().map(|c| {
                rows.iter()
                    .find(|r| r.model == *m && (r.dataset.as_str(), r.far) == *c)
                    .map_or_else(|| "-".to_string(), |r| format!("{:.8}", r.threshold))
            }));
            cells
        })
        .collect();
    MdTable {
        title: THRESHOLD_TITLE.into(),
        header,
        rows: body,
    }
}

fn parse_thresholds(t: &MdTable) -> Result<Vec<Record>> {
    let cols = t.header[1..]
        .iter()
        .map(|h| {
            let (d, far) = h
                .split_once(": FAR=")
                .ok_or_else(|| Error::Report(format!("bad column '{h}'")))?;
            Ok((d.to_string(), parse_percent(far)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for row in &t.rows {
        for ((dataset, far), cell) in cols.iter().zip(&row[1..]) {
            if let Some(threshold) = parse_opt(cell)? {
                out.push(Record::Threshold(ThresholdRow {
                    model: row[0].clone(),
                    dataset: dataset.clone(),
                    far: *far,
                    threshold,
                    tar: None,
                }));
            }
        }
    }
    Ok(out)
}

fn region_table(rows: &[&RegionRow]) -> MdTable {
    let regions = first_seen(
        rows.iter()
            .flat_map(|r| r.regions.iter().map(|s| s.region.as_str())),
    );
    let mut header = vec!["Method".to_string()];
    header.extend(regions.iter().map(|r| r.to_string()));
    let body = rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.method.clone()];
            cells.extend(regions.iter().map(|name| {
                r.regions
                    .iter()
                    .find(|s| s.region == *name)
                    .map_or_else(|| "-".to_string(), |s| format!("{:.4}", s.value))
            }));
            cells
        })
        .collect();
    MdTable {
        title: REGION_TITLE.into(),
        header,
        rows: body,
    }
}

fn parse_regions(t: &MdTable) -> Result<Vec<Record>> {
    t.rows
        .iter()
        .map(|row| {
            let mut regions = Vec::new();
            for (name, cell) in t.header[1..].iter().zip(&row[1..]) {
                if let Some(value) = parse_opt(cell)? {
                    regions.push(RegionScore {
                        region: name.clone(),
                        value,
                    });
                }
            }
            Ok(Record::RegionSimilarity(RegionRow {
                method: row[0].clone(),
                regions,
            }))
        })
        .collect()
}

fn ablation_table(rows: &[&AblationRow], table: &str) -> MdTable {
    let mut header = vec!["Variant".to_string()];
    header.extend(ABLATION_COLUMNS.map(String::from));
    MdTable {
        title: format!("{ABLATION_PREFIX}{table}"),
        header,
        rows: rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.variant.clone()];
                cells.extend(r.metrics().map(|m| fmt_opt(m, "n/a")));
                cells
            })
            .collect(),
    }
}

fn parse_ablation(t: &MdTable, table: &str) -> Result<Vec<Record>> {
    if t.header[1..] != ABLATION_COLUMNS {
        return Err(Error::Report(format!("ablation table '{table}' has unexpected columns")));
    }
    t.rows
        .iter()
        .map(|row| {
            let m = row[1..]
                .iter()
                .map(|c| parse_opt(c))
                .collect::<Result<Vec<_>>>()?;
            Ok(Record::Ablation(AblationRow {
                table: table.to_string(),
                variant: row[0].clone(),
                type1: m[0],
                type2: m[1],
                ms_ssim: m[2],
                mse: m[3],
                famse: m[4],
                lpips: m[5],
                train_loss: m[6],
            }))
        })
        .collect()
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Report(format!("record on line {}: {e}", i + 1)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    /// One table per section, in order of first appearance.
    pub fn to_markdown(&self) -> Result<String> {
        let sections = first_seen(self.records.iter().map(Record::section));
        let mut out = String::new();
        for s in sections {
            let members = self.records.iter().filter(|r| r.section() == s);
            let table = match s {
                Section::Verification => verification_table(
                    &members
                        .filter_map(|r| match r {
                            Record::Verification(v) => Some(v),
                            _ => None,
                        })
                        .collect::<Vec<_>>(),
                ),
                Section::Transfer(bits) => transfer_table(
                    &members
                        .filter_map(|r| match r {
                            Record::Transfer(v) => Some(v),
                            _ => None,
                        })
                        .collect::<Vec<_>>(),
                    f64::from_bits(bits),
                ),
                Section::Threshold => threshold_table(
                    &members
                        .filter_map(|r| match r {
                            Record::Threshold(v) => Some(v),
                            _ => None,
                        })
                        .collect::<Vec<_>>(),
                ),
                Section::Region => region_table(
                    &members
                        .filter_map(|r| match r {
                            Record::RegionSimilarity(v) => Some(v),
                            _ => None,
                        })
                        .collect::<Vec<_>>(),
                ),
                Section::Ablation(name) => ablation_table(
                    &members
                        .filter_map(|r| match r {
                            Record::Ablation(v) => Some(v),
                            _ => None,
                        })
                        .collect::<Vec<_>>(),
                    name,
                ),
            };
            table.render(&mut out)?;
        }
        Ok(out)
    }

    /// Parses tables written by [`Report::to_markdown`]. Values come back at
    /// the printed precision; thresholds of verification rows are dropped.
    pub fn from_markdown(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for t in parse_tables(text)? {
            let title = t.title.as_str();
            let parsed = if title == VERIFICATION_TITLE {
                parse_verification(&t)?
            } else if title == THRESHOLD_TITLE {
                parse_thresholds(&t)?
            } else if title == REGION_TITLE {
                parse_regions(&t)?
            } else if let Some(far) = title.strip_prefix(TRANSFER_PREFIX) {
                parse_transfer(&t, parse_percent(far)?)?
            } else if let Some(name) = title.strip_prefix(ABLATION_PREFIX) {
                parse_ablation(&t, name)?
            } else {
                return Err(Error::Report(format!("unknown table '{title}'")));
            };
            records.extend(parsed);
        }
        Ok(Self { records })
    }

    pub fn save(&self, jsonl: &Path, markdown: &Path) -> Result<()> {
        std::fs::write(jsonl, self.to_jsonl()?).map_err(|e| Error::io(jsonl, e))?;
        std::fs::write(markdown, self.to_markdown()?).map_err(|e| Error::io(markdown, e))
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Rows for every operating point of one verification run.
pub fn verification_records(
    method: &str,
    dataset: &str,
    f_database: &str,
    f_loss: &str,
    f_target: &str,
    outcome: &VerificationOutcome,
) -> Vec<Record> {
    outcome
        .points
        .iter()
        .map(|p| {
            Record::Verification(VerificationRow {
                method: method.into(),
                dataset: dataset.into(),
                f_database: f_database.into(),
                f_loss: f_loss.into(),
                f_target: f_target.into(),
                protocol: outcome.scores.protocol,
                far: p.far,
                threshold: Some(p.threshold),
                tar: p.tar,
                skipped_identities: outcome.skipped_identities,
            })
        })
        .collect()
}

pub fn transfer_records(method: &str, m: &TransferMatrix) -> Vec<Record> {
    m.cells
        .iter()
        .map(|c| {
            Record::Transfer(TransferRow {
                method: method.into(),
                f_database: c.f_database.clone(),
                f_loss: c.f_loss.clone(),
                f_target: c.f_target.clone(),
                dataset: c.dataset.clone(),
                far: m.far,
                tar: c.tar,
            })
        })
        .collect()
}
