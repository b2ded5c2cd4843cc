//! Loaders and report writers for every external format.
//!
//! Conventions shared by all artifacts:
//!
//! - JSONL outputs start with one provenance line
//!   `{"schema", "version", "seed", "config_hash", "tool_version"}`
//!   followed by records; loaders accept files without that line, so
//!   externally converted datasets stay compatible.
//! - CSV outputs start with `# key=value` comment lines carrying the
//!   same provenance, then a header row; readers skip `#` lines.
//! - Loaders reject malformed input with line numbers rather than
//!   repairing it; strings are NFC-normalized on load.
//! - Floats are printed in shortest round-trip form, so save → load is
//!   exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConfigTag, SpaceDistanceCurve};
use crate::metrics::{GroupedReport, LanguageMeta, LanguageMetrics, ResourceThresholds};
use crate::neurons::{KnowledgeNeuronSet, OverlapFormula, OverlapReport};
use crate::probing::{ProbeQuery, ProbeResult};
use crate::provenance::{RunMeta, REPORT_VERSION};
use crate::sweep::{SweepEntry, SweepResult};
use crate::tokenizer::nfc;
use crate::trainer::world::FactWorldSpec;
use crate::trainer::TrainSentence;

/// Provenance line at the head of JSONL artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMeta {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
}

impl FileMeta {
    pub fn new(schema: &str, run: &RunMeta) -> Self {
        FileMeta {
            schema: schema.to_string(),
            version: run.version,
            seed: run.seed,
            config_hash: run.config_hash.clone(),
            tool_version: run.tool_version.clone(),
        }
    }

    fn check(&self, schema: &str) -> Result<()> {
        if self.version != REPORT_VERSION {
            return Err(Error::Version(format!(
                "{} carries version {}, expected {REPORT_VERSION}",
                self.schema, self.version
            )));
        }
        if self.schema != schema {
            return Err(Error::Validation(format!(
                "expected schema {schema:?}, found {:?}",
                self.schema
            )));
        }
        Ok(())
    }
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for line in lines {
        writeln!(file, "{line}")?;
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Split a JSONL file into an optional leading meta line and its records.
fn jsonl_records(text: &str) -> (Option<FileMeta>, Vec<(usize, &str)>) {
    let mut meta = None;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            if let Ok(m) = serde_json::from_str::<FileMeta>(line) {
                meta = Some(m);
                continue;
            }
        }
        records.push((idx + 1, line));
    }
    (meta, records)
}

fn parse_records<T: DeserializeOwned>(
    records: &[(usize, &str)],
    what: &str,
    mut validate: impl FnMut(&T) -> Result<()>,
) -> Result<Vec<T>> {
    let mut items = Vec::with_capacity(records.len());
    let mut bad = Vec::new();
    for &(line_no, line) in records {
        match serde_json::from_str::<T>(line) {
            Ok(item) => match validate(&item) {
                Ok(()) => items.push(item),
                Err(e) => bad.push(format!("line {line_no}: {e}")),
            },
            Err(e) => bad.push(format!("line {line_no}: {e}")),
        }
    }
    if !bad.is_empty() {
        let shown = bad.iter().take(20).cloned().collect::<Vec<_>>().join("; ");
        let suffix = if bad.len() > 20 { format!(" (+{} more)", bad.len() - 20) } else { String::new() };
        return Err(Error::Validation(format!("{what}: {shown}{suffix}")));
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// Probe datasets
// ---------------------------------------------------------------------------

/// Dataset summary: languages, relations, and per-pair counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub languages: Vec<String>,
    pub relations: Vec<String>,
    /// `lang -> relation -> query count`.
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub version: u32,
}

pub fn save_probe_dataset(path: &Path, queries: &[ProbeQuery], run: &RunMeta) -> Result<()> {
    let mut lines = vec![serde_json::to_string(&FileMeta::new("probe-dataset", run))?];
    for q in queries {
        lines.push(serde_json::to_string(q)?);
    }
    write_lines(path, lines)
}

/// Load and validate a probe dataset, producing its manifest.
pub fn load_probe_dataset(path: &Path) -> Result<(Vec<ProbeQuery>, DatasetManifest)> {
    let text = read_text(path)?;
    let (meta, records) = jsonl_records(&text);
    if let Some(meta) = &meta {
        meta.check("probe-dataset")?;
    }
    if records.is_empty() {
        return Err(Error::Validation(format!("{}: no records", path.display())));
    }
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let queries: Vec<ProbeQuery> = parse_records(&records, &path.display().to_string(), |q: &ProbeQuery| {
        q.validate()?;
        if !seen.insert((q.lang.clone(), q.uuid.clone())) {
            return Err(Error::Validation(format!("duplicate uuid {} for language {}", q.uuid, q.lang)));
        }
        Ok(())
    })?;
    let queries: Vec<ProbeQuery> = queries
        .into_iter()
        .map(|q| ProbeQuery {
            lang: nfc(&q.lang),
            relation: nfc(&q.relation),
            template: nfc(&q.template),
            subject: nfc(&q.subject),
            object: nfc(&q.object),
            uuid: nfc(&q.uuid),
        })
        .collect();

    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for q in &queries {
        *counts.entry(q.lang.clone()).or_default().entry(q.relation.clone()).or_insert(0) += 1;
    }
    let languages: Vec<String> = counts.keys().cloned().collect();
    let relations: Vec<String> = queries.iter().map(|q| q.relation.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let manifest = DatasetManifest { name, languages, relations, counts, version: REPORT_VERSION };
    Ok((queries, manifest))
}

// ---------------------------------------------------------------------------
// Corpora
// ---------------------------------------------------------------------------

/// One exported corpus sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub lang: String,
    pub text: String,
    pub token_ids: Vec<u32>,
}

pub fn save_corpus(path: &Path, sentences: &[TrainSentence], run: &RunMeta) -> Result<()> {
    let mut lines = vec![serde_json::to_string(&FileMeta::new("corpus", run))?];
    for s in sentences {
        lines.push(serde_json::to_string(&CorpusRecord {
            lang: s.lang.clone(),
            text: s.text.clone(),
            token_ids: s.token_ids.clone(),
        })?);
    }
    write_lines(path, lines)
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let text = read_text(path)?;
    let (meta, records) = jsonl_records(&text);
    if let Some(meta) = &meta {
        meta.check("corpus")?;
    }
    if records.is_empty() {
        return Err(Error::Validation(format!("{}: no records", path.display())));
    }
    parse_records(&records, &path.display().to_string(), |r: &CorpusRecord| {
        if r.token_ids.is_empty() {
            return Err(Error::Validation("empty token_ids".into()));
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Parallel corpora
// ---------------------------------------------------------------------------

/// Load two line-aligned text files as sentence pairs.
///
/// Pairs where either side falls outside `3..=max_tokens` whitespace
/// tokens are dropped; the second return value counts them.
pub fn load_parallel_corpus(path_a: &Path, path_b: &Path, max_tokens: usize) -> Result<(Vec<(String, String)>, usize)> {
    let text_a = read_text(path_a)?;
    let text_b = read_text(path_b)?;
    let lines_a: Vec<&str> = text_a.lines().collect();
    let lines_b: Vec<&str> = text_b.lines().collect();
    if lines_a.len() != lines_b.len() {
        return Err(Error::Alignment(format!(
            "{} holds {} lines but {} holds {}",
            path_a.display(),
            lines_a.len(),
            path_b.display(),
            lines_b.len()
        )));
    }
    let mut pairs = Vec::new();
    let mut filtered = 0usize;
    for (a, b) in lines_a.into_iter().zip(lines_b) {
        let la = a.split_whitespace().count();
        let lb = b.split_whitespace().count();
        if (3..=max_tokens).contains(&la) && (3..=max_tokens).contains(&lb) {
            pairs.push((nfc(a), nfc(b)));
        } else {
            filtered += 1;
        }
    }
    Ok((pairs, filtered))
}

// ---------------------------------------------------------------------------
// Language meta
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetaHeader {
    schema: String,
    version: u32,
    thresholds: ResourceThresholds,
}

pub fn save_language_meta(path: &Path, metas: &[LanguageMeta], thresholds: &ResourceThresholds) -> Result<()> {
    let mut lines = vec![serde_json::to_string(&MetaHeader {
        schema: "language-meta".into(),
        version: REPORT_VERSION,
        thresholds: *thresholds,
    })?];
    for m in metas {
        lines.push(serde_json::to_string(m)?);
    }
    write_lines(path, lines)
}

/// Load language metadata, checking each row's resource tier against the
/// thresholds declared in the file header (or the defaults).
pub fn load_language_meta(path: &Path) -> Result<Vec<LanguageMeta>> {
    let text = read_text(path)?;
    let mut thresholds = ResourceThresholds::default();
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            if let Ok(header) = serde_json::from_str::<MetaHeader>(line) {
                if header.version != REPORT_VERSION {
                    return Err(Error::Version(format!(
                        "language meta version {} not supported",
                        header.version
                    )));
                }
                thresholds = header.thresholds;
                continue;
            }
        }
        records.push((idx + 1, line));
    }
    if records.is_empty() {
        return Err(Error::Validation(format!("{}: no records", path.display())));
    }
    parse_records(&records, &path.display().to_string(), |m: &LanguageMeta| {
        let expected = thresholds.tier(m.wiki_articles);
        if m.resource != expected {
            return Err(Error::Validation(format!(
                "language {} declares tier {:?} but {} articles imply {:?}",
                m.lang, m.resource, m.wiki_articles, expected
            )));
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Probe results
// ---------------------------------------------------------------------------

/// Context a results file was produced under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
    pub lang: String,
    pub pivot: String,
    pub lirp: Option<usize>,
    pub lsrp: Option<usize>,
}

/// One persisted probe outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRow {
    pub uuid: String,
    pub gold_rank: usize,
    pub correct: bool,
    pub lirp: Option<usize>,
    pub lsrp: Option<usize>,
}

pub fn save_probe_results(
    path: &Path,
    results: &[ProbeResult],
    lang: &str,
    pivot: &str,
    config: ConfigTag,
    run: &RunMeta,
) -> Result<()> {
    let (lirp, lsrp) = match config {
        ConfigTag::Baseline => (None, None),
        ConfigTag::Pair { lirp, lsrp } => (Some(lirp), Some(lsrp)),
    };
    let header = ResultsHeader {
        schema: "probe-results".into(),
        version: run.version,
        seed: run.seed,
        config_hash: run.config_hash.clone(),
        tool_version: run.tool_version.clone(),
        lang: lang.to_string(),
        pivot: pivot.to_string(),
        lirp,
        lsrp,
    };
    let mut lines = vec![serde_json::to_string(&header)?];
    for r in results {
        lines.push(serde_json::to_string(&ResultRow {
            uuid: r.uuid.clone(),
            gold_rank: r.gold_rank,
            correct: r.correct,
            lirp,
            lsrp,
        })?);
    }
    write_lines(path, lines)
}

pub fn load_probe_results(path: &Path) -> Result<(ResultsHeader, Vec<ResultRow>)> {
    let text = read_text(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Validation(format!("{}: no records", path.display())))?;
    let header: ResultsHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::Validation(format!("{}: bad results header: {e}", path.display())))?;
    if header.version != REPORT_VERSION {
        return Err(Error::Version(format!(
            "results version {} not supported (expected {REPORT_VERSION})",
            header.version
        )));
    }
    let records: Vec<(usize, &str)> = lines.enumerate().map(|(i, l)| (i + 2, l)).collect();
    let rows = parse_records(&records, &path.display().to_string(), |r: &ResultRow| {
        if r.correct != (r.gold_rank == 1) {
            return Err(Error::Validation(format!("uuid {}: correct flag disagrees with rank", r.uuid)));
        }
        Ok(())
    })?;
    Ok((header, rows))
}

// ---------------------------------------------------------------------------
// Metrics JSON
// ---------------------------------------------------------------------------

/// Per-language metrics artifact written by the probe stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
    pub lang: String,
    pub pivot: String,
    pub lirp: Option<usize>,
    pub lsrp: Option<usize>,
    pub accuracy: f64,
    pub transferability: f64,
    pub probed: usize,
    pub correct: usize,
}

pub fn save_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

pub fn load_metrics(path: &Path) -> Result<MetricsReport> {
    let report: MetricsReport = serde_json::from_str(&read_text(path)?)?;
    if report.version != REPORT_VERSION {
        return Err(Error::Version(format!("metrics version {} not supported", report.version)));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepRow {
    lang: String,
    i: Option<usize>,
    j: Option<usize>,
    accuracy: f64,
    transferability: f64,
}

pub fn save_sweep(path: &Path, result: &SweepResult, run: &RunMeta) -> Result<()> {
    let mut lines = vec![serde_json::to_string(&FileMeta::new("sweep", run))?];
    lines.push(serde_json::to_string(&SweepRow {
        lang: result.lang.clone(),
        i: None,
        j: None,
        accuracy: result.baseline_accuracy,
        transferability: result.baseline_transferability,
    })?);
    for e in &result.entries {
        lines.push(serde_json::to_string(&SweepRow {
            lang: result.lang.clone(),
            i: Some(e.i),
            j: Some(e.j),
            accuracy: e.accuracy,
            transferability: e.transferability,
        })?);
    }
    write_lines(path, lines)
}

pub fn load_sweep(path: &Path) -> Result<SweepResult> {
    let text = read_text(path)?;
    let (meta, records) = jsonl_records(&text);
    if let Some(meta) = &meta {
        meta.check("sweep")?;
    }
    let rows: Vec<SweepRow> = parse_records(&records, &path.display().to_string(), |_| Ok(()))?;
    let mut lang = None;
    let mut baseline = None;
    let mut entries = Vec::new();
    for row in rows {
        match lang {
            None => lang = Some(row.lang.clone()),
            Some(ref l) if *l != row.lang => {
                return Err(Error::Validation(format!("sweep file mixes languages {l} and {}", row.lang)))
            }
            _ => {}
        }
        match (row.i, row.j) {
            (None, None) => baseline = Some((row.accuracy, row.transferability)),
            (Some(i), Some(j)) => {
                entries.push(SweepEntry { i, j, accuracy: row.accuracy, transferability: row.transferability })
            }
            _ => return Err(Error::Validation("sweep row with half a layer pair".into())),
        }
    }
    let lang = lang.ok_or_else(|| Error::Validation(format!("{}: no records", path.display())))?;
    let (baseline_accuracy, baseline_transferability) =
        baseline.ok_or_else(|| Error::Validation("sweep file lacks the baseline row".into()))?;
    entries.sort_by_key(|e| (e.i, e.j));
    Ok(SweepResult { lang, entries, baseline_accuracy, baseline_transferability })
}

// ---------------------------------------------------------------------------
// CSV helpers
// ---------------------------------------------------------------------------

fn csv_comment_block(run: &RunMeta, extra: &[(&str, String)]) -> String {
    let mut block = String::new();
    let _ = writeln!(block, "# version={}", run.version);
    let _ = writeln!(block, "# seed={}", run.seed);
    let _ = writeln!(block, "# config_hash={}", run.config_hash);
    let _ = writeln!(block, "# tool_version={}", run.tool_version);
    for (key, value) in extra {
        let _ = writeln!(block, "# {key}={value}");
    }
    block
}

fn write_csv(path: &Path, run: &RunMeta, extra: &[(&str, String)], header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut out = csv_comment_block(run, extra);
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(&row)?;
    }
    let body = writer.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    std::fs::write(path, out)?;
    Ok(())
}

fn read_csv(path: &Path, expected_header: &[&str]) -> Result<(BTreeMap<String, String>, Vec<Vec<String>>)> {
    let text = read_text(path)?;
    let mut comments = BTreeMap::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some((key, value)) = line.trim_start_matches('#').trim().split_once('=') {
            comments.insert(key.trim().to_string(), value.trim().to_string());
        }
    }
    if let Some(version) = comments.get("version") {
        if version != &REPORT_VERSION.to_string() {
            return Err(Error::Version(format!("{}: report version {version} not supported", path.display())));
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let found: Vec<&str> = header.iter().collect();
    if found != expected_header {
        return Err(Error::Validation(format!(
            "{}: header {:?} does not match expected {:?}",
            path.display(),
            found,
            expected_header
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    Ok((comments, rows))
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "n/a".into(),
    }
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == "n/a" {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|e| Error::Validation(format!("bad float {s:?}: {e}")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|e| Error::Validation(format!("bad float {s:?}: {e}")))
}

// ---------------------------------------------------------------------------
// Grouped metrics report
// ---------------------------------------------------------------------------

pub const GROUPED_HEADER: [&str; 5] = ["model", "config", "group", "accuracy", "transferability"];

/// Grouped rows for `(model, config)` pairs, Table-style.
pub fn save_grouped_csv(
    path: &Path,
    blocks: &[(String, String, GroupedReport)],
    run: &RunMeta,
) -> Result<()> {
    let mut rows = Vec::new();
    for (model, config, report) in blocks {
        rows.push(vec![
            model.clone(),
            config.clone(),
            report.pivot.group.clone(),
            fmt_opt(report.pivot.accuracy),
            fmt_opt(report.pivot.transferability),
        ]);
        for row in &report.rows {
            rows.push(vec![
                model.clone(),
                config.clone(),
                row.group.clone(),
                fmt_opt(row.accuracy),
                fmt_opt(row.transferability),
            ]);
        }
    }
    write_csv(path, run, &[], &GROUPED_HEADER, rows)
}

/// Reload a grouped CSV as raw rows (model, config, group, acc, trans).
pub fn load_grouped_csv(path: &Path) -> Result<Vec<(String, String, String, Option<f64>, Option<f64>)>> {
    let (_, rows) = read_csv(path, &GROUPED_HEADER)?;
    rows.into_iter()
        .map(|row| {
            Ok((
                row[0].clone(),
                row[1].clone(),
                row[2].clone(),
                parse_opt(&row[3])?,
                parse_opt(&row[4])?,
            ))
        })
        .collect()
}

/// JSON twin of the grouped CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedJson {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
    pub blocks: Vec<GroupedBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedBlock {
    pub model: String,
    pub config: String,
    pub report: GroupedReport,
    pub per_language: Vec<LanguageMetrics>,
}

pub fn save_grouped_json(path: &Path, blocks: &[GroupedBlock], run: &RunMeta) -> Result<()> {
    let doc = GroupedJson {
        schema: "grouped-metrics".into(),
        version: run.version,
        seed: run.seed,
        config_hash: run.config_hash.clone(),
        tool_version: run.tool_version.clone(),
        blocks: blocks.to_vec(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn load_grouped_json(path: &Path) -> Result<GroupedJson> {
    let doc: GroupedJson = serde_json::from_str(&read_text(path)?)?;
    if doc.version != REPORT_VERSION {
        return Err(Error::Version(format!("grouped report version {} not supported", doc.version)));
    }
    Ok(doc)
}

// ---------------------------------------------------------------------------
// Best-config table
// ---------------------------------------------------------------------------

pub const BEST_CONFIG_HEADER: [&str; 5] = ["lang", "criterion", "lirp_layer", "lsrp_layer", "value"];

/// One best-config row per (language, criterion), Tables-4/5-shaped.
pub fn save_best_config_csv(
    path: &Path,
    rows: &[(String, String, ConfigTag, f64)],
    run: &RunMeta,
) -> Result<()> {
    let body = rows
        .iter()
        .map(|(lang, criterion, tag, value)| {
            let (i, j) = match tag {
                ConfigTag::Baseline => ("baseline".to_string(), "baseline".to_string()),
                ConfigTag::Pair { lirp, lsrp } => (lirp.to_string(), lsrp.to_string()),
            };
            vec![lang.clone(), criterion.clone(), i, j, value.to_string()]
        })
        .collect();
    write_csv(path, run, &[], &BEST_CONFIG_HEADER, body)
}

// ---------------------------------------------------------------------------
// Geometry curves
// ---------------------------------------------------------------------------

pub const CURVE_HEADER: [&str; 3] = ["layer", "value", "config"];

pub fn save_curves_csv(path: &Path, curves: &[SpaceDistanceCurve], run: &RunMeta) -> Result<()> {
    let pair = curves
        .first()
        .map(|c| format!("{}-{}", c.lang_pair.0, c.lang_pair.1))
        .unwrap_or_default();
    let mut rows = Vec::new();
    for curve in curves {
        for (layer, value) in curve.values.iter().enumerate() {
            rows.push(vec![layer.to_string(), value.to_string(), curve.config.to_string()]);
        }
    }
    write_csv(path, run, &[("lang_pair", pair)], &CURVE_HEADER, rows)
}

pub fn load_curves_csv(path: &Path) -> Result<Vec<SpaceDistanceCurve>> {
    let (comments, rows) = read_csv(path, &CURVE_HEADER)?;
    let pair = comments.get("lang_pair").cloned().unwrap_or_default();
    let (lang_a, lang_b) = pair.split_once('-').unwrap_or(("", ""));
    let mut by_config: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for row in rows {
        let layer: usize =
            row[0].parse().map_err(|_| Error::Validation(format!("bad layer {:?}", row[0])))?;
        by_config.entry(row[2].clone()).or_default().push((layer, parse_f64(&row[1])?));
    }
    let mut curves = Vec::new();
    for (config, mut values) in by_config {
        values.sort_by_key(|&(layer, _)| layer);
        curves.push(SpaceDistanceCurve {
            lang_pair: (lang_a.to_string(), lang_b.to_string()),
            values: values.into_iter().map(|(_, v)| v).collect(),
            config: config.parse()?,
        });
    }
    Ok(curves)
}

// ---------------------------------------------------------------------------
// Neuron sets and overlap
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronSetDoc {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
    pub config: String,
    #[serde(flatten)]
    pub set: KnowledgeNeuronSet,
}

pub fn save_neuron_set(path: &Path, set: &KnowledgeNeuronSet, config: ConfigTag, run: &RunMeta) -> Result<()> {
    let doc = NeuronSetDoc {
        schema: "neuron-set".into(),
        version: run.version,
        seed: run.seed,
        config_hash: run.config_hash.clone(),
        tool_version: run.tool_version.clone(),
        config: config.to_string(),
        set: set.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn load_neuron_set(path: &Path) -> Result<NeuronSetDoc> {
    let doc: NeuronSetDoc = serde_json::from_str(&read_text(path)?)?;
    if doc.version != REPORT_VERSION {
        return Err(Error::Version(format!("neuron set version {} not supported", doc.version)));
    }
    Ok(doc)
}

pub const OVERLAP_HEADER: [&str; 5] = ["scope", "config", "same", "different", "avg"];

/// Overlap table plus per-layer curves; the formula choice is recorded in
/// the header comments.
pub fn save_overlap_csv(
    path: &Path,
    blocks: &[(String, OverlapReport)],
    run: &RunMeta,
) -> Result<()> {
    let formula = blocks
        .first()
        .map(|(_, r)| r.formula.to_string())
        .unwrap_or_else(|| OverlapFormula::IntersectionOverUnion.to_string());
    let mut rows = Vec::new();
    for (config, report) in blocks {
        rows.push(vec![
            "pooled".to_string(),
            config.clone(),
            fmt_opt(report.same),
            fmt_opt(report.different),
            report.avg.to_string(),
        ]);
        for (layer, value) in &report.per_layer {
            rows.push(vec![
                format!("layer-{layer}"),
                config.clone(),
                value.to_string(),
                "n/a".to_string(),
                "n/a".to_string(),
            ]);
        }
    }
    write_csv(path, run, &[("overlap_formula", formula)], &OVERLAP_HEADER, rows)
}

/// Reload an overlap CSV into per-config reports.
pub fn load_overlap_csv(path: &Path) -> Result<Vec<(String, OverlapReport)>> {
    let (comments, rows) = read_csv(path, &OVERLAP_HEADER)?;
    let formula = match comments.get("overlap_formula").map(String::as_str) {
        Some("intersection-over-k") => OverlapFormula::IntersectionOverK,
        _ => OverlapFormula::IntersectionOverUnion,
    };
    let mut reports: BTreeMap<String, OverlapReport> = BTreeMap::new();
    for row in &rows {
        let config = row[1].clone();
        let entry = reports.entry(config).or_insert(OverlapReport {
            formula,
            same: None,
            different: None,
            avg: 0.0,
            per_layer: BTreeMap::new(),
        });
        if row[0] == "pooled" {
            entry.same = parse_opt(&row[2])?;
            entry.different = parse_opt(&row[3])?;
            entry.avg = parse_f64(&row[4])?;
        } else if let Some(layer) = row[0].strip_prefix("layer-") {
            let layer: usize =
                layer.parse().map_err(|_| Error::Validation(format!("bad scope {:?}", row[0])))?;
            entry.per_layer.insert(layer, parse_f64(&row[2])?);
        } else {
            return Err(Error::Validation(format!("bad scope {:?}", row[0])));
        }
    }
    Ok(reports.into_iter().collect())
}

// ---------------------------------------------------------------------------
// Gap curves
// ---------------------------------------------------------------------------

pub const GAP_HEADER: [&str; 3] = ["gap", "criterion", "value"];

/// Best value per layer gap, one row per (gap, criterion).
pub fn save_gap_curve_csv(
    path: &Path,
    curves: &[(String, BTreeMap<usize, f64>)],
    run: &RunMeta,
) -> Result<()> {
    let mut rows = Vec::new();
    for (criterion, curve) in curves {
        for (gap, value) in curve {
            rows.push(vec![gap.to_string(), criterion.clone(), value.to_string()]);
        }
    }
    write_csv(path, run, &[], &GAP_HEADER, rows)
}

pub fn load_gap_curve_csv(path: &Path) -> Result<Vec<(String, BTreeMap<usize, f64>)>> {
    let (_, rows) = read_csv(path, &GAP_HEADER)?;
    let mut curves: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for row in rows {
        let gap: usize =
            row[0].parse().map_err(|_| Error::Validation(format!("bad gap {:?}", row[0])))?;
        curves.entry(row[1].clone()).or_default().insert(gap, parse_f64(&row[2])?);
    }
    Ok(curves.into_iter().collect())
}

// ---------------------------------------------------------------------------
// Per-relation transferability
// ---------------------------------------------------------------------------

pub const RELATION_HEADER: [&str; 2] = ["relation", "transferable_pct"];

pub fn save_relation_transfer_csv(path: &Path, rows: &[(String, f64)], run: &RunMeta) -> Result<()> {
    let body = rows.iter().map(|(rel, pct)| vec![rel.clone(), pct.to_string()]).collect();
    write_csv(path, run, &[], &RELATION_HEADER, body)
}

pub fn load_relation_transfer_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let (_, rows) = read_csv(path, &RELATION_HEADER)?;
    rows.into_iter().map(|row| Ok((row[0].clone(), parse_f64(&row[1])?))).collect()
}

// ---------------------------------------------------------------------------
// Fact-world specs
// ---------------------------------------------------------------------------

pub fn save_world_spec(path: &Path, spec: &FactWorldSpec) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(spec)?)?;
    Ok(())
}

pub fn load_world_spec(path: &Path) -> Result<FactWorldSpec> {
    let spec: FactWorldSpec = serde_json::from_str(&read_text(path)?)?;
    spec.validate()?;
    Ok(spec)
}
