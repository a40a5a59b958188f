//! On-disk form of a [`RunRecord`] and of the inequality analysis.
//!
//! A run directory holds `timeseries.csv`, `wealth_snapshots.csv`,
//! `summary.json` and `manifest.json`. The manifest is written first with
//! `complete = false` and rewritten once every other file is on disk, so an
//! aborted run is recognisable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::RunConfig;
use crate::sim_engine::{PeriodRow, RunRecord, RunSummary, WealthSnapshot};
use crate::wealth_stats::{
    ccdf_at, fit_tail_sorted, report_sorted, LorenzCurve, Percentiles, TailFitOptions,
    TailFitReport,
};

pub const FORMAT_VERSION: u32 = 1;

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const SNAPSHOTS_FILE: &str = "wealth_snapshots.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const TIMESERIES_COLUMNS: [&str; 10] = [
    "period",
    "true_p",
    "implied_p",
    "signal",
    "mean_belief",
    "belief_p20",
    "belief_p80",
    "pe_ratio",
    "equity_price",
    "wealth_drift",
];
pub const SNAPSHOT_COLUMNS: [&str; 3] = ["snapshot_period", "agent_index", "w_over_H"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub version: String,
    pub complete: bool,
    pub timeseries_rows: usize,
    pub snapshot_rows: usize,
    pub snapshot_count: usize,
}

#[derive(Serialize, Deserialize)]
struct SummaryFile {
    format_version: u32,
    version: String,
    seed: u64,
    config: RunConfig,
    summary: RunSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub snapshot_period: usize,
    pub agent_index: usize,
    #[serde(rename = "w_over_H")]
    pub w_over_h: f64,
}

/// Writes the four run files into `dir`, creating it if needed.
pub fn save(record: &RunRecord, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let snapshot_rows = record.snapshots.iter().map(|s| s.w_over_h.len()).sum();
    let mut manifest = Manifest {
        format_version: FORMAT_VERSION,
        version: record.version.clone(),
        complete: false,
        timeseries_rows: record.series.len(),
        snapshot_rows,
        snapshot_count: record.snapshots.len(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;

    write_csv(&dir.join(TIMESERIES_FILE), &TIMESERIES_COLUMNS, |w| {
        for row in &record.series {
            w.serialize(row)?;
        }
        Ok(())
    })?;
    write_csv(&dir.join(SNAPSHOTS_FILE), &SNAPSHOT_COLUMNS, |w| {
        for snap in &record.snapshots {
            for (k, &v) in snap.w_over_h.iter().enumerate() {
                w.serialize(SnapshotRow {
                    snapshot_period: snap.period,
                    agent_index: snap.agent_index(k),
                    w_over_h: v,
                })?;
            }
        }
        Ok(())
    })?;
    write_json(
        &dir.join(SUMMARY_FILE),
        &SummaryFile {
            format_version: FORMAT_VERSION,
            version: record.version.clone(),
            seed: record.seed,
            config: record.config.clone(),
            summary: record.summary.clone(),
        },
    )?;

    manifest.complete = true;
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

/// Reads a run directory written by [`save`].
pub fn load(dir: &Path) -> Result<RunRecord> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let value: serde_json::Value = read_json(&manifest_path, MANIFEST_FILE)?;
    check_version(&manifest_path, value.get("format_version"))?;
    let manifest: Manifest =
        serde_json::from_value(value).map_err(|e| Error::format(MANIFEST_FILE, e.to_string()))?;
    if !manifest.complete {
        return Err(Error::format(
            MANIFEST_FILE,
            "run did not complete; outputs are partial",
        ));
    }

    let summary_path = dir.join(SUMMARY_FILE);
    let value: serde_json::Value = read_json(&summary_path, SUMMARY_FILE)?;
    check_version(&summary_path, value.get("format_version"))?;
    let summary: SummaryFile =
        serde_json::from_value(value).map_err(|e| Error::format(SUMMARY_FILE, e.to_string()))?;

    let series: Vec<PeriodRow> = read_csv(
        &dir.join(TIMESERIES_FILE),
        TIMESERIES_FILE,
        &TIMESERIES_COLUMNS,
    )?;
    if series.len() != manifest.timeseries_rows {
        return Err(Error::format(
            TIMESERIES_FILE,
            format!(
                "expected {} rows, found {}",
                manifest.timeseries_rows,
                series.len()
            ),
        ));
    }

    let rows: Vec<SnapshotRow> =
        read_csv(&dir.join(SNAPSHOTS_FILE), SNAPSHOTS_FILE, &SNAPSHOT_COLUMNS)?;
    if rows.len() != manifest.snapshot_rows {
        return Err(Error::format(
            SNAPSHOTS_FILE,
            format!(
                "expected {} rows, found {}",
                manifest.snapshot_rows,
                rows.len()
            ),
        ));
    }
    let stride = summary.config.snapshot_stride;
    let mut snapshots: Vec<WealthSnapshot> = Vec::with_capacity(manifest.snapshot_count);
    for (line, row) in rows.into_iter().enumerate() {
        let start_new = snapshots
            .last()
            .is_none_or(|s| s.period != row.snapshot_period);
        if start_new {
            snapshots.push(WealthSnapshot {
                period: row.snapshot_period,
                stride,
                w_over_h: Vec::new(),
            });
        }
        let snap = snapshots.last_mut().expect("pushed above");
        if row.agent_index != snap.agent_index(snap.w_over_h.len()) {
            return Err(Error::format(
                SNAPSHOTS_FILE,
                format!(
                    "row {}: agent_index {} breaks the stride-{stride} layout",
                    line + 2,
                    row.agent_index
                ),
            ));
        }
        snap.w_over_h.push(row.w_over_h);
    }
    if snapshots.len() != manifest.snapshot_count {
        return Err(Error::format(
            SNAPSHOTS_FILE,
            format!(
                "expected {} snapshots, found {}",
                manifest.snapshot_count,
                snapshots.len()
            ),
        ));
    }

    Ok(RunRecord {
        config: summary.config,
        seed: summary.seed,
        version: summary.version,
        series,
        snapshots,
        summary: summary.summary,
    })
}

/// Wealth values of `wealth_snapshots.csv` grouped by snapshot period, in
/// file order. Agent indices are not interpreted.
pub fn read_snapshot_values(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let rows: Vec<SnapshotRow> = read_csv(path, SNAPSHOTS_FILE, &SNAPSHOT_COLUMNS)?;
    let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
    for row in rows {
        match out.last_mut() {
            Some((p, values)) if *p == row.snapshot_period => values.push(row.w_over_h),
            _ => out.push((row.snapshot_period, vec![row.w_over_h])),
        }
    }
    Ok(out)
}

/// Writes the rows of `wealth_snapshots.csv` for arbitrary cross-sections.
pub fn write_snapshot_rows(path: &Path, rows: &[SnapshotRow]) -> Result<()> {
    write_csv(path, &SNAPSHOT_COLUMNS, |w| {
        for row in rows {
            w.serialize(row)?;
        }
        Ok(())
    })
}

/// Writes `header` then one CSV row per serialized item.
pub fn write_table<T, I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    T: Serialize,
    I: IntoIterator<Item = T>,
{
    write_csv(path, header, |w| {
        for row in rows {
            w.serialize(row)?;
        }
        Ok(())
    })
}

/// Contents of `inequality.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalitySummary {
    pub gini: f64,
    pub percentiles: Percentiles,
    pub n_samples: usize,
    pub n_snapshots: usize,
}

/// Everything `analyze` derives from pooled snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub inequality: InequalitySummary,
    pub lorenz: LorenzCurve,
    /// `(w / H, G(w))` at up to [`CCDF_POINTS`] ranks spaced evenly in log.
    pub ccdf: Vec<(f64, f64)>,
    pub tail: TailFitReport,
}

pub const CCDF_POINTS: usize = 400;

/// Analysis of an ascending pooled sample in units of `H`.
pub fn analyze_sorted(sorted: &[f64], n_snapshots: usize, options: TailFitOptions) -> Analysis {
    let report = report_sorted(sorted);
    Analysis {
        inequality: InequalitySummary {
            gini: report.gini,
            percentiles: report.percentiles,
            n_samples: report.n_samples,
            n_snapshots,
        },
        lorenz: report.lorenz,
        ccdf: thinned_ccdf(sorted, CCDF_POINTS),
        tail: fit_tail_sorted(sorted, options),
    }
}

/// The empirical CCDF evaluated at sample values whose upper rank is on a
/// geometric grid, so the tail keeps its resolution on log-log axes.
pub fn thinned_ccdf(sorted: &[f64], points: usize) -> Vec<(f64, f64)> {
    let n = sorted.len();
    if n == 0 || points == 0 {
        return Vec::new();
    }
    let mut ranks: Vec<usize> = (0..points)
        .map(|k| {
            let r = (n as f64).powf(k as f64 / (points.max(2) - 1) as f64);
            (r.round() as usize).clamp(1, n)
        })
        .collect();
    ranks.dedup();
    let mut out: Vec<(f64, f64)> = ranks
        .into_iter()
        .rev()
        .map(|r| {
            let w = sorted[n - r];
            (w, ccdf_at(sorted, w))
        })
        .collect();
    out.dedup_by(|a, b| a.0 == b.0);
    out
}

/// Writes `lorenz.csv`, `ccdf.csv`, `inequality.json` and `tail_fit.json`.
pub fn write_analysis(analysis: &Analysis, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(
        &dir.join("lorenz.csv"),
        &["pop_share", "wealth_share"],
        |w| {
            for (x, y) in analysis
                .lorenz
                .pop_share
                .iter()
                .zip(&analysis.lorenz.wealth_share)
            {
                w.serialize((x, y))?;
            }
            Ok(())
        },
    )?;
    write_csv(&dir.join("ccdf.csv"), &["w_over_H", "G"], |w| {
        for row in &analysis.ccdf {
            w.serialize(row)?;
        }
        Ok(())
    })?;
    write_json(&dir.join("inequality.json"), &analysis.inequality)?;
    write_json(&dir.join("tail_fit.json"), &analysis.tail)
}

/// Pretty JSON with object keys in sorted order.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::format("json", e.to_string()))?;
    serde_json::to_string_pretty(&v).map_err(|e| Error::format("json", e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_sorted_json(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json(path: &Path, section: &str) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| missing_or_io(path, section, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(section, e.to_string()))
}

fn check_version(path: &Path, found: Option<&serde_json::Value>) -> Result<()> {
    match found.and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => Ok(()),
        other => Err(Error::Version {
            path: path.to_path_buf(),
            found: other.map_or("none".to_string(), |v| v.to_string()),
            expected: FORMAT_VERSION.to_string(),
        }),
    }
}

fn missing_or_io(path: &Path, section: &str, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::format(section, format!("{} is missing", path.display()))
    } else {
        Error::io(path, e)
    }
}

fn write_csv<F>(path: &Path, header: &[&str], body: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<BufWriter<File>>) -> csv::Result<()>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    let result = w.write_record(header).and_then(|_| body(&mut w));
    result.map_err(|e| csv_error(path, e))?;
    let mut inner = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: serde::de::DeserializeOwned>(
    path: &Path,
    section: &str,
    header: &[&str],
) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| missing_or_io(path, section, e))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let found = r
        .headers()
        .map_err(|e| Error::format(section, e.to_string()))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        let detail = if found.is_empty() {
            "header row is missing".to_string()
        } else {
            format!(
                "header {:?} does not match {:?}",
                found.iter().collect::<Vec<_>>(),
                header
            )
        };
        return Err(Error::format(section, detail));
    }
    r.deserialize()
        .collect::<csv::Result<Vec<T>>>()
        .map_err(|e| Error::format(section, e.to_string()))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path_name(path), format!("{other:?}")),
    }
}

fn path_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| PathBuf::from(path).display().to_string())
}
