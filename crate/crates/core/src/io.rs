//! File formats: labeled-table ingestion, report/dataset/heatmap artifacts,
//! and the JSON envelopes for training and sweep results.
//!
//! Every floating-point value we write is first rounded to 12 significant
//! digits. That keeps artifacts stable and diffable across runs while
//! preserving write→read round-trips to well within 1e-9. Keyed maps are
//! emitted in sorted order, so identical inputs produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dist::{marginal_spurious, marginal_target, CategoricalDist, JointDist};
use crate::error::{Error, Result};
use crate::metrics::BiasReport;
use crate::sim::{RunMetrics, SweepTable};
use crate::synth::{BiasConfig, FeatureLayout, LabeledDataset, Record, Tag};

/// Mass tolerance when re-ingesting probabilities: rounding each entry to 12
/// significant digits can drift a table's total by ~1e-11, past the strict
/// in-memory construction tolerance. Files are accepted within 1e-9 and
/// rescaled before the usual validation runs.
const INGEST_MASS_TOLERANCE: f64 = 1e-9;

/// Round to 12 significant digits. Non-finite values pass through.
///
/// The result's shortest decimal representation has at most 12 significant
/// digits, so both `Display` and JSON serialization stay compact and
/// reparse to exactly the rounded value.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float reparses")
}

fn json_err(e: serde_json::Error) -> Error {
    Error::ParseFailure {
        detail: e.to_string(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::ParseFailure {
        detail: e.to_string(),
    }
}

fn row_err(row: usize, e: csv::Error) -> Error {
    Error::MalformedRow {
        row,
        reason: e.to_string(),
    }
}

/// Round every JSON float in place; integers are left untouched.
fn round_json(value: &mut Value) {
    match value {
        Value::Number(n) => {
            if n.is_f64() {
                let rounded = round12(n.as_f64().expect("is_f64 checked"));
                *value = Value::Number(
                    serde_json::Number::from_f64(rounded).expect("rounded float is finite"),
                );
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Serialize with 12-significant-digit floats and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut tree = serde_json::to_value(value).map_err(json_err)?;
    round_json(&mut tree);
    let mut text = serde_json::to_string_pretty(&tree).map_err(json_err)?;
    text.push('\n');
    Ok(text)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, to_json_string(value)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Labeled-table ingestion
// ---------------------------------------------------------------------------

/// Where and how to read a labeled table.
///
/// With `has_header` the column selectors are header names; without, they are
/// 0-based column indices written in decimal.
#[derive(Debug, Clone)]
pub struct TabularSource {
    pub path: PathBuf,
    pub target_column: String,
    pub spurious_column: String,
    pub delimiter: u8,
    pub has_header: bool,
}

impl TabularSource {
    pub fn new(
        path: impl Into<PathBuf>,
        target_column: impl Into<String>,
        spurious_column: impl Into<String>,
    ) -> Self {
        TabularSource {
            path: path.into(),
            target_column: target_column.into(),
            spurious_column: spurious_column.into(),
            delimiter: b',',
            has_header: true,
        }
    }
}

/// Estimate the empirical joint of the two label columns: each cell is
/// `count(target = t, spurious = s) / N`. Label indices are assigned in
/// lexicographic order, so re-ingesting the same file yields an identical
/// layout.
///
/// # Errors
///
/// `MissingColumn` when a selector matches nothing, `EmptyFile` when there
/// are no data rows, and `MalformedRow` (with its 1-based data-row number)
/// for short rows or empty label cells — silently dropping such rows would
/// bias the estimate.
pub fn load_joint(source: &TabularSource) -> Result<JointDist> {
    let file = fs::File::open(&source.path)?;
    joint_from_reader(file, source)
}

/// [`load_joint`] over any reader; the `source` supplies column selectors and
/// the path used in error messages.
pub fn joint_from_reader<R: Read>(reader: R, source: &TabularSource) -> Result<JointDist> {
    if source.target_column == source.spurious_column {
        return Err(Error::InvalidParams {
            reason: format!(
                "target and spurious selectors are both {:?}",
                source.target_column
            ),
        });
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(source.delimiter)
        .has_headers(source.has_header)
        .flexible(true)
        .from_reader(reader);

    let (t_idx, s_idx) = if source.has_header {
        let headers = rdr.headers().map_err(csv_err)?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn {
                    name: name.to_string(),
                })
        };
        (find(&source.target_column)?, find(&source.spurious_column)?)
    } else {
        (
            parse_column_index(&source.target_column)?,
            parse_column_index(&source.spurious_column)?,
        )
    };

    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut total: u64 = 0;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| row_err(row, e))?;
        let label = |idx: usize, axis: &str| -> Result<String> {
            let raw = record.get(idx).ok_or_else(|| Error::MalformedRow {
                row,
                reason: format!("no field at column {idx} ({axis})"),
            })?;
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("empty {axis} cell"),
                });
            }
            Ok(trimmed.to_string())
        };
        let t = label(t_idx, "target")?;
        let s = label(s_idx, "spurious")?;
        *counts.entry((t, s)).or_insert(0) += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::EmptyFile {
            path: source.path.clone(),
        });
    }

    // Pair keys iterate in lexicographic order, so target labels come out
    // sorted already; spurious labels need their own sort.
    let mut target_labels: Vec<String> = counts.keys().map(|(t, _)| t.clone()).collect();
    target_labels.dedup();
    let mut spurious_labels: Vec<String> = counts.keys().map(|(_, s)| s.clone()).collect();
    spurious_labels.sort();
    spurious_labels.dedup();

    let t_index: BTreeMap<&str, usize> = target_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let s_index: BTreeMap<&str, usize> = spurious_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut table = vec![vec![0.0; spurious_labels.len()]; target_labels.len()];
    for ((t, s), count) in &counts {
        table[t_index[t.as_str()]][s_index[s.as_str()]] = *count as f64 / total as f64;
    }
    JointDist::new(table, target_labels, spurious_labels)
}

fn parse_column_index(selector: &str) -> Result<usize> {
    selector.parse().map_err(|_| Error::InvalidParams {
        reason: format!("headerless input needs numeric column selectors, got {selector:?}"),
    })
}

// ---------------------------------------------------------------------------
// Analysis report
// ---------------------------------------------------------------------------

/// One spurious value's entry in the report: its decomposition-based
/// magnitude next to the prior measures over the same column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeEntry {
    pub spurious_label: String,
    /// Nats; `null` when the divergence is infinite (support mismatch).
    pub rho_star: Option<f64>,
    /// `corr_tcp[t]` = P(this spurious value | target = t).
    pub corr_tcp: Vec<f64>,
    /// `corr_scp[t]` = P(target = t | this spurious value).
    pub corr_scp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub target: Vec<f64>,
    pub spurious: Vec<f64>,
}

/// The on-disk analysis report, keyed by labels rather than indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub theta: f64,
    pub magnitudes: Vec<MagnitudeEntry>,
    /// H(target | spurious) in nats.
    pub corr_sce: f64,
    pub biased_set: Vec<String>,
    pub prevalence: f64,
    /// spurious label → most likely target label.
    pub correlated_class: BTreeMap<String, String>,
    pub marginals: Marginals,
    /// Normalized magnitudes, present for 2x2 joints only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
}

/// Assemble the serializable report from an analysis and the joint it
/// described (the joint supplies labels and marginals).
pub fn report_file(report: &BiasReport, joint: &JointDist) -> ReportFile {
    let t_labels = joint.target_labels();
    let s_labels = joint.spurious_labels();
    let magnitudes = (0..joint.n_spurious())
        .map(|s| MagnitudeEntry {
            spurious_label: s_labels[s].clone(),
            rho_star: report.magnitudes[s]
                .is_finite()
                .then_some(report.magnitudes[s]),
            corr_tcp: report.prior.corr_tcp[s].clone(),
            corr_scp: report.prior.corr_scp[s].clone(),
        })
        .collect();
    ReportFile {
        theta: report.threshold,
        magnitudes,
        corr_sce: report.prior.corr_sce,
        biased_set: report
            .biased_set
            .iter()
            .map(|&s| s_labels[s].clone())
            .collect(),
        prevalence: report.prevalence,
        correlated_class: report
            .correlated_class
            .iter()
            .map(|(&s, &t)| (s_labels[s].clone(), t_labels[t].clone()))
            .collect(),
        marginals: Marginals {
            target: marginal_target(joint).probs().to_vec(),
            spurious: marginal_spurious(joint).probs().to_vec(),
        },
        phi: report.phi.clone(),
    }
}

pub fn write_report(report: &BiasReport, joint: &JointDist, path: &Path) -> Result<()> {
    write_json(&report_file(report, joint), path)
}

pub fn read_report(path: &Path) -> Result<ReportFile> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(json_err)
}

// ---------------------------------------------------------------------------
// Dataset CSV
// ---------------------------------------------------------------------------

/// Write `target,spurious,tag,f0..f{d-1}` rows, one per record.
pub fn write_dataset(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    let dim = dataset.layout.dim();
    let mut header = vec!["target".to_string(), "spurious".to_string(), "tag".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    writer.write_record(&header).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for record in &dataset.records {
        row.clear();
        row.push(record.target.to_string());
        row.push(record.spurious.to_string());
        row.push(record.tag.as_str().to_string());
        row.extend(record.features.iter().map(|&x| round12(x).to_string()));
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<Record>> {
    let file = fs::File::open(path)?;
    dataset_from_reader(file, path)
}

/// Parse dataset rows; every feature must be finite and every row full-width.
pub fn dataset_from_reader<R: Read>(reader: R, path: &Path) -> Result<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    for (i, expected) in ["target", "spurious", "tag"].iter().enumerate() {
        if headers.get(i) != Some(expected) {
            return Err(Error::ParseFailure {
                detail: format!(
                    "dataset header must start with target,spurious,tag; column {i} is {:?}",
                    headers.get(i).unwrap_or("")
                ),
            });
        }
    }
    let width = headers.len();
    let mut records = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| row_err(row, e))?;
        if record.len() != width {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let field = |idx: usize| record.get(idx).expect("width checked");
        let parse_index = |idx: usize, axis: &str| -> Result<usize> {
            field(idx).parse().map_err(|_| Error::MalformedRow {
                row,
                reason: format!("{axis} {:?} is not an index", field(idx)),
            })
        };
        let target = parse_index(0, "target")?;
        let spurious = parse_index(1, "spurious")?;
        let tag: Tag = field(2).parse().map_err(|_| Error::MalformedRow {
            row,
            reason: format!("unknown tag {:?}", field(2)),
        })?;
        let features = (3..width)
            .map(|idx| {
                let value: f64 = field(idx).parse().map_err(|_| Error::MalformedRow {
                    row,
                    reason: format!("feature {:?} is not a number", field(idx)),
                })?;
                if !value.is_finite() {
                    return Err(Error::MalformedRow {
                        row,
                        reason: format!("non-finite feature {value}"),
                    });
                }
                Ok(value)
            })
            .collect::<Result<Vec<f64>>>()?;
        records.push(Record {
            target,
            spurious,
            tag,
            features,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Heatmap CSV
// ---------------------------------------------------------------------------

/// Matrix form of a joint distribution: first row = spurious labels, first
/// column = target labels, cells = probabilities.
pub fn export_heatmap(joint: &JointDist, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec![String::new()];
    header.extend(joint.spurious_labels().iter().cloned());
    writer.write_record(&header).map_err(csv_err)?;
    for t in 0..joint.n_target() {
        let mut row = vec![joint.target_labels()[t].clone()];
        row.extend((0..joint.n_spurious()).map(|s| round12(joint.cell(t, s)).to_string()));
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_heatmap(path: &Path) -> Result<JointDist> {
    let file = fs::File::open(path)?;
    heatmap_from_reader(file, path)
}

/// Inverse of [`export_heatmap`]. The total mass may drift from 1 by up to
/// [`INGEST_MASS_TOLERANCE`] (serialization rounding); the table is rescaled
/// before construction.
pub fn heatmap_from_reader<R: Read>(reader: R, path: &Path) -> Result<JointDist> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(record) => record.map_err(csv_err)?,
        None => {
            return Err(Error::EmptyFile {
                path: path.to_path_buf(),
            })
        }
    };
    let spurious_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let width = header.len();

    let mut target_labels = Vec::new();
    let mut table: Vec<Vec<f64>> = Vec::new();
    for (i, record) in rows.enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| row_err(row, e))?;
        if record.len() != width {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected {width} fields, found {}", record.len()),
            });
        }
        target_labels.push(record.get(0).expect("width checked").to_string());
        let cells = (1..width)
            .map(|idx| {
                let raw = record.get(idx).expect("width checked");
                raw.trim().parse().map_err(|_| Error::MalformedRow {
                    row,
                    reason: format!("cell {raw:?} is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        table.push(cells);
    }
    if table.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }

    let sum: f64 = table.iter().flatten().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > INGEST_MASS_TOLERANCE {
        return Err(Error::MassMismatch { sum });
    }
    let table = table
        .into_iter()
        .map(|row| row.into_iter().map(|c| c / sum).collect())
        .collect();
    JointDist::new(table, target_labels, spurious_labels)
}

// ---------------------------------------------------------------------------
// Training and sweep result envelopes
// ---------------------------------------------------------------------------

/// Metrics of a single training run plus an echo of the configuration that
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config_echo: Value,
    #[serde(flatten)]
    pub metrics: RunMetrics,
}

/// Sweep results plus the shared configuration echo; points stay keyed by
/// (value, seed), so the table is order-independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_echo: Value,
    #[serde(flatten)]
    pub table: SweepTable,
}

pub fn write_sim_report(report: &SimReport, path: &Path) -> Result<()> {
    write_json(report, path)
}

pub fn write_sweep_report(report: &SweepReport, path: &Path) -> Result<()> {
    write_json(report, path)
}

/// Either result envelope, as found on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricsFile {
    Run(SimReport),
    Sweep(SweepReport),
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile> {
    let bytes = fs::read(path)?;
    metrics_from_slice(&bytes)
}

/// Detect which envelope a metrics JSON holds: sweeps carry `points`, single
/// runs carry `per_epoch` at the top level.
pub fn metrics_from_slice(bytes: &[u8]) -> Result<MetricsFile> {
    let tree: Value = serde_json::from_slice(bytes).map_err(json_err)?;
    let keys = tree.as_object().ok_or_else(|| Error::ParseFailure {
        detail: "metrics JSON must be an object".to_string(),
    })?;
    if keys.contains_key("points") {
        let report = serde_json::from_value(tree).map_err(json_err)?;
        Ok(MetricsFile::Sweep(report))
    } else if keys.contains_key("per_epoch") {
        let report = serde_json::from_value(tree).map_err(json_err)?;
        Ok(MetricsFile::Run(report))
    } else {
        Err(Error::ParseFailure {
            detail: "metrics JSON has neither per_epoch nor points".to_string(),
        })
    }
}

/// Per-epoch category weights as a plottable CSV; absent categories leave
/// empty cells.
pub fn weights_csv(metrics: &RunMetrics) -> String {
    let mut out = String::from("epoch,w_ba,w_bc,w_bn\n");
    let cell = |w: Option<f64>| w.map(|x| round12(x).to_string()).unwrap_or_default();
    for epoch in &metrics.per_epoch {
        out.push_str(&format!(
            "{},{},{},{}\n",
            epoch.epoch,
            cell(epoch.w_ba),
            cell(epoch.w_bc),
            cell(epoch.w_bn)
        ));
    }
    out
}

/// Sweep results as a plottable matrix: rows = axis values, columns = seeds,
/// cells = unbiased-test average accuracy. Missing (value, seed) pairs leave
/// empty cells.
pub fn sweep_heatmap_csv(table: &SweepTable) -> String {
    let mut seeds: Vec<u64> = table.points.iter().map(|p| p.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut values: Vec<f64> = table.points.iter().map(|p| p.value).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();

    let mut out = table.axis.to_string();
    for seed in &seeds {
        out.push_str(&format!(",{seed}"));
    }
    out.push('\n');
    for &value in &values {
        out.push_str(&round12(value).to_string());
        for &seed in &seeds {
            out.push(',');
            let hit = table
                .points
                .iter()
                .find(|p| p.seed == seed && p.value.to_bits() == value.to_bits());
            if let Some(point) = hit {
                out.push_str(&round12(point.metrics.final_metrics.avg_acc).to_string());
            }
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Bias-configuration JSON
// ---------------------------------------------------------------------------

/// On-disk description of a bias configuration. Marginals default to
/// uniform; the feature layout defaults to [`FeatureLayout::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    pub n_target: usize,
    pub n_spurious: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_marginal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spurious_marginal: Option<Vec<f64>>,
    pub biased_set: Vec<usize>,
    pub g: BTreeMap<usize, usize>,
    pub corr: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_layout: Option<FeatureLayout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ConfigFile {
    /// Validate and convert into the in-memory configuration plus the
    /// layout and optional seed riding along.
    pub fn resolve(&self) -> Result<(BiasConfig, FeatureLayout, Option<u64>)> {
        let marginal = |probs: &Option<Vec<f64>>, n: usize| match probs {
            Some(p) => {
                let sum: f64 = p.iter().sum();
                if sum.is_finite() && (sum - 1.0).abs() <= INGEST_MASS_TOLERANCE {
                    CategoricalDist::new(p.iter().map(|x| x / sum).collect())
                } else {
                    CategoricalDist::new(p.clone())
                }
            }
            None => CategoricalDist::uniform(n),
        };
        let config = BiasConfig {
            n_target: self.n_target,
            n_spurious: self.n_spurious,
            target_marginal: marginal(&self.target_marginal, self.n_target)?,
            spurious_marginal: marginal(&self.spurious_marginal, self.n_spurious)?,
            biased_set: self.biased_set.clone(),
            g: self.g.clone(),
            corr: self.corr.clone(),
        };
        config.validate()?;
        let layout = self.feature_layout.clone().unwrap_or_default();
        layout.validate()?;
        Ok((config, layout, self.seed))
    }
}

pub fn read_config(path: &Path) -> Result<ConfigFile> {
    let bytes = fs::read(path)?;
    config_from_slice(&bytes)
}

pub fn config_from_slice(bytes: &[u8]) -> Result<ConfigFile> {
    serde_json::from_slice(bytes).map_err(json_err)
}

/// Write a string artifact either to a file or, with no path, to stdout.
pub fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::analyze;
    use crate::sim::{EpochWeights, FinalMetrics, SweepAxis, SweepPoint};
    use crate::synth::{build_joint, identity_config, preset, synthesize};
    use tempfile::tempdir;

    fn write_temp(dir: &tempfile::TempDir, name: &str, contents: &str) -> PathBuf {
        let path = dir.path().join(name);
        fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn test_round12() {
        assert_eq!(round12(0.1234567890123456), 0.123456789012);
        assert_eq!(round12(round12(std::f64::consts::PI)), round12(std::f64::consts::PI));
        assert_eq!(round12(0.0), 0.0);
        assert_eq!(round12(-2.0 / 3.0), -0.666666666667);
        assert!(round12(f64::INFINITY).is_infinite());
        // Display of a rounded value stays within 12 significant digits.
        assert_eq!(round12(2.0 / 9000.0).to_string(), "0.000222222222222");
    }

    #[test]
    fn test_load_joint_uniform_2x2() {
        let dir = tempdir().unwrap();
        let path = write_temp(
            &dir,
            "rows.csv",
            "risk,race\nhigh,blue\nhigh,green\nlow,blue\nlow,green\n",
        );
        let source = TabularSource::new(&path, "risk", "race");
        let joint = load_joint(&source).unwrap();
        assert_eq!(joint.target_labels(), ["high", "low"]);
        assert_eq!(joint.spurious_labels(), ["blue", "green"]);
        for t in 0..2 {
            for s in 0..2 {
                assert!((joint.cell(t, s) - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn test_load_joint_counts_and_extra_columns() {
        let dir = tempdir().unwrap();
        // An unused middle column, unsorted labels, repeated cells.
        let path = write_temp(
            &dir,
            "rows.csv",
            "y,junk,s\nb,1,x\na,2,x\nb,3,y\nb,4,x\n",
        );
        let source = TabularSource::new(&path, "y", "s");
        let joint = load_joint(&source).unwrap();
        assert_eq!(joint.target_labels(), ["a", "b"]);
        assert_eq!(joint.spurious_labels(), ["x", "y"]);
        assert!((joint.cell(0, 0) - 0.25).abs() < 1e-15);
        assert!((joint.cell(1, 0) - 0.5).abs() < 1e-15);
        assert!((joint.cell(1, 1) - 0.25).abs() < 1e-15);
        assert!((joint.cell(0, 1) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn test_load_joint_headerless_and_delimiter() {
        let dir = tempdir().unwrap();
        let path = write_temp(&dir, "rows.tsv", "a\tx\na\ty\nb\tx\nb\ty\n");
        let mut source = TabularSource::new(&path, "0", "1");
        source.delimiter = b'\t';
        source.has_header = false;
        let joint = load_joint(&source).unwrap();
        assert_eq!(joint.target_labels(), ["a", "b"]);
        assert!((joint.cell(0, 1) - 0.25).abs() < 1e-15);

        source.target_column = "nope".to_string();
        assert!(matches!(
            load_joint(&source),
            Err(Error::InvalidParams { .. })
        ));
    }

    #[test]
    fn test_load_joint_error_contract() {
        let dir = tempdir().unwrap();
        let missing = TabularSource::new(
            write_temp(&dir, "m.csv", "a,b\n1,2\n"),
            "absent",
            "b",
        );
        assert!(matches!(
            load_joint(&missing),
            Err(Error::MissingColumn { name }) if name == "absent"
        ));

        let empty = TabularSource::new(write_temp(&dir, "e.csv", "a,b\n"), "a", "b");
        assert!(matches!(load_joint(&empty), Err(Error::EmptyFile { .. })));
        let blank = TabularSource::new(write_temp(&dir, "blank.csv", ""), "a", "b");
        assert!(load_joint(&blank).is_err());

        let short = TabularSource::new(
            write_temp(&dir, "s.csv", "a,b\nt1,s1\nt2\n"),
            "a",
            "b",
        );
        assert!(matches!(
            load_joint(&short),
            Err(Error::MalformedRow { row: 2, .. })
        ));

        let hole = TabularSource::new(
            write_temp(&dir, "h.csv", "a,b\nt1,s1\nt2,s2\nt3,\n"),
            "a",
            "b",
        );
        assert!(matches!(
            load_joint(&hole),
            Err(Error::MalformedRow { row: 3, .. })
        ));

        let same = TabularSource::new(write_temp(&dir, "d.csv", "a,b\n1,2\n"), "a", "a");
        assert!(matches!(load_joint(&same), Err(Error::InvalidParams { .. })));
    }

    #[test]
    fn test_load_joint_single_valued_column_rejected() {
        let dir = tempdir().unwrap();
        let path = write_temp(&dir, "one.csv", "a,b\nt,s1\nt,s2\n");
        let source = TabularSource::new(&path, "a", "b");
        assert!(matches!(
            load_joint(&source),
            Err(Error::TableTooSmall { .. })
        ));
    }

    #[test]
    fn test_heatmap_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("joint.heatmap.csv");
        let joint = build_joint(&preset("hmlp").unwrap()).unwrap();
        export_heatmap(&joint, &path).unwrap();
        let back = read_heatmap(&path).unwrap();
        assert_eq!(back.target_labels(), joint.target_labels());
        assert_eq!(back.spurious_labels(), joint.spurious_labels());
        for t in 0..10 {
            for s in 0..10 {
                assert!((back.cell(t, s) - joint.cell(t, s)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn test_heatmap_read_rejections() {
        let dir = tempdir().unwrap();
        let empty = write_temp(&dir, "empty.csv", "");
        assert!(matches!(
            read_heatmap(&empty),
            Err(Error::EmptyFile { .. })
        ));
        let header_only = write_temp(&dir, "h.csv", ",x,y\n");
        assert!(matches!(
            read_heatmap(&header_only),
            Err(Error::EmptyFile { .. })
        ));
        let bad_cell = write_temp(&dir, "b.csv", ",x,y\na,0.5,oops\nb,0.25,0.25\n");
        assert!(matches!(
            read_heatmap(&bad_cell),
            Err(Error::MalformedRow { row: 1, .. })
        ));
        let short_row = write_temp(&dir, "s.csv", ",x,y\na,0.5\nb,0.25,0.25\n");
        assert!(matches!(
            read_heatmap(&short_row),
            Err(Error::MalformedRow { row: 1, .. })
        ));
        let wrong_mass = write_temp(&dir, "m.csv", ",x,y\na,0.5,0.4\nb,0.25,0.25\n");
        assert!(matches!(
            read_heatmap(&wrong_mass),
            Err(Error::MassMismatch { .. })
        ));
    }

    #[test]
    fn test_report_round_trip_invariants() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("report.json");
        let joint = build_joint(&preset("hmhp").unwrap()).unwrap();
        let report = analyze(&joint, 0.1).unwrap();
        write_report(&report, &joint, &path).unwrap();

        let parsed = read_report(&path).unwrap();
        assert_eq!(parsed.theta, 0.1);
        assert_eq!(parsed.magnitudes.len(), 10);
        assert_eq!(parsed.biased_set.len(), 10);
        assert!((parsed.prevalence - 1.0).abs() < 1e-9);
        assert!(parsed.phi.is_none());
        // Prevalence re-derives from the serialized marginals and biased set.
        let mass: f64 = parsed
            .biased_set
            .iter()
            .map(|label| {
                let s = joint
                    .spurious_labels()
                    .iter()
                    .position(|l| l == label)
                    .unwrap();
                parsed.marginals.spurious[s]
            })
            .sum();
        assert!((mass - parsed.prevalence).abs() < 1e-9);
        // Diagonal construction: every spurious value points at its own class.
        for (s_label, t_label) in &parsed.correlated_class {
            assert_eq!(s_label, t_label);
        }
        for entry in &parsed.magnitudes {
            let rho = entry.rho_star.unwrap();
            assert!((rho - 3.197758002225635).abs() < 1e-9);
            assert_eq!(entry.corr_tcp.len(), 10);
            assert_eq!(entry.corr_scp.len(), 10);
        }
    }

    #[test]
    fn test_report_binary_includes_phi_and_nulls_infinity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("report.json");
        // Second spurious column concentrates all its mass on target 0, while
        // the marginal also covers target 1 — infinite divergence.
        let joint = JointDist::from_table(vec![vec![0.3, 0.25], vec![0.45, 0.0]]).unwrap();
        let report = analyze(&joint, 0.1).unwrap();
        write_report(&report, &joint, &path).unwrap();
        let parsed = read_report(&path).unwrap();
        assert!(parsed.magnitudes[0].rho_star.is_some());
        assert!(parsed.magnitudes[1].rho_star.is_none());
        assert_eq!(parsed.phi.as_ref().map(Vec::len), Some(2));
        let raw = fs::read_to_string(&path).unwrap();
        assert!(raw.contains("\"rho_star\": null"));
    }

    #[test]
    fn test_dataset_round_trip_and_tags() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let config = preset("hmlp").unwrap();
        let (_, dataset) = synthesize(&config, &FeatureLayout::default(), 300, 7).unwrap();
        write_dataset(&dataset, &path).unwrap();

        let records = read_dataset(&path).unwrap();
        assert_eq!(records.len(), 300);
        for (a, b) in dataset.records.iter().zip(&records) {
            assert_eq!(a.target, b.target);
            assert_eq!(a.spurious, b.spurious);
            assert_eq!(a.tag, b.tag);
            assert_eq!(
                b.tag,
                crate::synth::categorize(b.target, b.spurious, &config.biased_set, &config.g)
            );
            for (x, y) in a.features.iter().zip(&b.features) {
                assert!((x - y).abs() < 1e-9);
                // Stored features reparse to exactly their rounded form.
                assert_eq!(*y, round12(*x));
            }
        }
    }

    #[test]
    fn test_dataset_read_rejections() {
        let dir = tempdir().unwrap();
        let wrong_header = write_temp(&dir, "w.csv", "a,b,c\n1,2,3\n");
        assert!(matches!(
            read_dataset(&wrong_header),
            Err(Error::ParseFailure { .. })
        ));
        let empty = write_temp(&dir, "e.csv", "target,spurious,tag,f0\n");
        assert!(matches!(read_dataset(&empty), Err(Error::EmptyFile { .. })));
        let bad_tag = write_temp(&dir, "t.csv", "target,spurious,tag,f0\n0,0,XX,1.0\n");
        assert!(matches!(
            read_dataset(&bad_tag),
            Err(Error::MalformedRow { row: 1, .. })
        ));
        let bad_feature = write_temp(&dir, "f.csv", "target,spurious,tag,f0\n0,0,BA,inf\n");
        assert!(matches!(
            read_dataset(&bad_feature),
            Err(Error::MalformedRow { row: 1, .. })
        ));
        let short = write_temp(
            &dir,
            "s.csv",
            "target,spurious,tag,f0\n0,0,BA,1.0\n1,1\n",
        );
        assert!(matches!(
            read_dataset(&short),
            Err(Error::MalformedRow { row: 2, .. })
        ));
    }

    #[test]
    fn test_synthesized_csv_round_trips_within_tv() {
        let dir = tempdir().unwrap();
        let csv_path = dir.path().join("hmhp.csv");
        let config = preset("hmhp").unwrap();
        let n = 200_000;
        let (exact, dataset) = synthesize(&config, &FeatureLayout::default(), n, 11).unwrap();
        write_dataset(&dataset, &csv_path).unwrap();

        let source = TabularSource::new(&csv_path, "target", "spurious");
        let empirical = load_joint(&source).unwrap();
        // Labels are digit strings; lexicographic assignment keeps them in
        // numeric order here because all indices are single digits.
        assert_eq!(empirical.target_labels(), exact.target_labels());
        let tv: f64 = (0..10)
            .flat_map(|t| (0..10).map(move |s| (t, s)))
            .map(|(t, s)| (empirical.cell(t, s) - exact.cell(t, s)).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "empirical TV {tv} too large at n={n}");
    }

    #[test]
    fn test_sim_report_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("metrics.json");
        let report = SimReport {
            config_echo: serde_json::json!({"preset": "hmlp", "seed": 0}),
            metrics: RunMetrics {
                per_epoch: vec![EpochWeights {
                    epoch: 1,
                    w_ba: Some(0.25),
                    w_bc: Some(0.5),
                    w_bn: None,
                }],
                final_metrics: FinalMetrics {
                    bc_acc: Some(0.125),
                    avg_acc: 0.5,
                    worst_acc: 0.25,
                },
                empty_groups_skipped: false,
            },
        };
        write_sim_report(&report, &path).unwrap();
        let raw = fs::read_to_string(&path).unwrap();
        assert!(raw.contains("\"final\""));
        assert!(raw.contains("\"per_epoch\""));
        match read_metrics(&path).unwrap() {
            MetricsFile::Run(parsed) => assert_eq!(parsed, report),
            MetricsFile::Sweep(_) => panic!("detected as sweep"),
        }
    }

    #[test]
    fn test_sweep_report_round_trip_and_detection() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("sweep.json");
        let point = |value: f64, seed: u64, acc: f64| SweepPoint {
            value,
            seed,
            metrics: RunMetrics {
                per_epoch: Vec::new(),
                final_metrics: FinalMetrics {
                    bc_acc: None,
                    avg_acc: acc,
                    worst_acc: acc,
                },
                empty_groups_skipped: false,
            },
        };
        let report = SweepReport {
            config_echo: serde_json::json!({"method": "DBAM"}),
            table: SweepTable {
                axis: SweepAxis::Prevalence,
                points: vec![point(1.0, 0, 0.5), point(1.0, 1, 0.75), point(2.0, 0, 0.25)],
            },
        };
        write_sweep_report(&report, &path).unwrap();
        match read_metrics(&path).unwrap() {
            MetricsFile::Sweep(parsed) => assert_eq!(parsed, report),
            MetricsFile::Run(_) => panic!("detected as single run"),
        }

        let junk = write_temp(&dir, "junk.json", "{\"stuff\": 1}\n");
        assert!(matches!(
            read_metrics(&junk),
            Err(Error::ParseFailure { .. })
        ));
        let not_json = write_temp(&dir, "n.json", "not json");
        assert!(matches!(
            read_metrics(&not_json),
            Err(Error::ParseFailure { .. })
        ));
    }

    #[test]
    fn test_weights_csv_layout() {
        let metrics = RunMetrics {
            per_epoch: vec![
                EpochWeights {
                    epoch: 1,
                    w_ba: Some(0.25),
                    w_bc: None,
                    w_bn: Some(1.0),
                },
                EpochWeights {
                    epoch: 2,
                    w_ba: Some(0.5),
                    w_bc: Some(0.75),
                    w_bn: None,
                },
            ],
            final_metrics: FinalMetrics {
                bc_acc: None,
                avg_acc: 0.0,
                worst_acc: 0.0,
            },
            empty_groups_skipped: false,
        };
        assert_eq!(
            weights_csv(&metrics),
            "epoch,w_ba,w_bc,w_bn\n1,0.25,,1\n2,0.5,0.75,\n"
        );
    }

    #[test]
    fn test_sweep_heatmap_csv_layout() {
        let point = |value: f64, seed: u64, acc: f64| SweepPoint {
            value,
            seed,
            metrics: RunMetrics {
                per_epoch: Vec::new(),
                final_metrics: FinalMetrics {
                    bc_acc: None,
                    avg_acc: acc,
                    worst_acc: acc,
                },
                empty_groups_skipped: false,
            },
        };
        let table = SweepTable {
            axis: SweepAxis::Magnitude,
            points: vec![
                point(0.5, 1, 0.625),
                point(0.5, 0, 0.5),
                point(0.98, 0, 0.25),
            ],
        };
        assert_eq!(
            sweep_heatmap_csv(&table),
            "magnitude,0,1\n0.5,0.5,0.625\n0.98,0.25,\n"
        );
    }

    #[test]
    fn test_config_file_resolution() {
        let full = r#"{
            "n_target": 4,
            "n_spurious": 4,
            "target_marginal": [0.1, 0.2, 0.3, 0.4],
            "biased_set": [1, 2],
            "g": {"1": 0, "2": 3},
            "corr": {"1": 0.9, "2": 0.8},
            "feature_layout": {
                "target_dim": 4,
                "spurious_dim": 4,
                "noise_target": 1.0,
                "noise_spurious": 0.1
            },
            "seed": 42
        }"#;
        let file = config_from_slice(full.as_bytes()).unwrap();
        let (config, layout, seed) = file.resolve().unwrap();
        assert_eq!(config.n_target, 4);
        assert!((config.target_marginal.get(3) - 0.4).abs() < 1e-15);
        assert!((config.spurious_marginal.get(0) - 0.25).abs() < 1e-15);
        assert_eq!(config.g[&2], 3);
        assert_eq!(layout.target_dim, 4);
        assert_eq!(seed, Some(42));

        let minimal = r#"{
            "n_target": 2,
            "n_spurious": 2,
            "biased_set": [0],
            "g": {"0": 0},
            "corr": {"0": 0.9}
        }"#;
        let file = config_from_slice(minimal.as_bytes()).unwrap();
        let (config, layout, seed) = file.resolve().unwrap();
        assert!((config.target_marginal.get(0) - 0.5).abs() < 1e-15);
        assert_eq!(layout.target_dim, FeatureLayout::default().target_dim);
        assert_eq!(seed, None);

        let bad = r#"{
            "n_target": 2,
            "n_spurious": 2,
            "biased_set": [0],
            "g": {"0": 0},
            "corr": {"0": 1.5}
        }"#;
        let file = config_from_slice(bad.as_bytes()).unwrap();
        assert!(matches!(
            file.resolve(),
            Err(Error::InvalidConfig { .. })
        ));
        assert!(config_from_slice(b"[1, 2]").is_err());
    }

    #[test]
    fn test_json_writer_rounds_floats_and_keeps_integers() {
        #[derive(Serialize)]
        struct Mixed {
            count: u64,
            ratio: f64,
            nested: Vec<f64>,
        }
        let text = to_json_string(&Mixed {
            count: 123_456_789_012_345,
            ratio: 1.0 / 3.0,
            nested: vec![2.0 / 3.0],
        })
        .unwrap();
        assert!(text.contains("123456789012345"));
        assert!(text.contains("0.333333333333"));
        assert!(text.contains("0.666666666667"));
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn test_identity_config_round_trips_through_config_file() {
        let config = identity_config(6, 6, 3, 0.7).unwrap();
        let file = ConfigFile {
            n_target: config.n_target,
            n_spurious: config.n_spurious,
            target_marginal: Some(config.target_marginal.probs().to_vec()),
            spurious_marginal: Some(config.spurious_marginal.probs().to_vec()),
            biased_set: config.biased_set.clone(),
            g: config.g.clone(),
            corr: config.corr.clone(),
            feature_layout: None,
            seed: None,
        };
        let text = to_json_string(&file).unwrap();
        let back = config_from_slice(text.as_bytes()).unwrap();
        let (resolved, _, _) = back.resolve().unwrap();
        assert_eq!(resolved.biased_set, config.biased_set);
        assert_eq!(resolved.g, config.g);
        let exact = build_joint(&config).unwrap();
        let redone = build_joint(&resolved).unwrap();
        for t in 0..6 {
            for s in 0..6 {
                assert!((exact.cell(t, s) - redone.cell(t, s)).abs() < 1e-9);
            }
        }
    }
}
