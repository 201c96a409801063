//! Append-only store of hardware data points.
//!
//! Records live in one newline-delimited JSON file. Opening the store reads
//! every complete line into memory; a final line without its terminating
//! newline is a torn write and is ignored with a warning. The first append
//! after such a tail truncates it before writing.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::design_space::{ParameterPoint, WorkloadSpec};
use crate::error::{Error, Result};
use crate::evaluator::{EvaluationReport, Resources};
use crate::templates::{AcceleratorDesign, SourceSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
    Failed,
    Pending,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accepted => "accepted",
            Verdict::Rejected => "rejected",
            Verdict::Failed => "failed",
            Verdict::Pending => "pending",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accepted" => Ok(Verdict::Accepted),
            "rejected" => Ok(Verdict::Rejected),
            "failed" => Ok(Verdict::Failed),
            "pending" => Ok(Verdict::Pending),
            other => Err(Error::validation("verdict", format!("unknown verdict `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Analytical,
    External,
    Human,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Analytical => "analytical",
            Source::External => "external",
            Source::Human => "human",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSummary {
    pub total_cycles: u64,
    pub wall_time_ns: f64,
    pub resources: Resources,
    pub utilization_pct: Resources,
    pub timing_pass: bool,
    pub feasible: bool,
}

impl MetricsSummary {
    /// All-zero, infeasible metrics for proposals that were never evaluated.
    pub fn unevaluated() -> Self {
        Self::default()
    }
}

impl From<&EvaluationReport> for MetricsSummary {
    fn from(r: &EvaluationReport) -> Self {
        Self {
            total_cycles: r.total_cycles,
            wall_time_ns: r.wall_time_ns,
            resources: r.resources,
            utilization_pct: r.utilization_pct,
            timing_pass: r.timing_pass,
            feasible: r.feasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareDataPoint {
    pub point_id: String,
    pub design_id: String,
    pub configuration: ParameterPoint,
    pub workload: WorkloadSpec,
    pub device: String,
    pub metrics: MetricsSummary,
    pub verdict: Verdict,
    pub source: Source,
    pub rationale: Option<String>,
    pub created_at: DateTime<Utc>,
}

/// A data point before the store assigns its id and timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct NewDataPoint {
    pub design_id: String,
    pub configuration: ParameterPoint,
    pub workload: WorkloadSpec,
    pub device: String,
    pub metrics: MetricsSummary,
    pub verdict: Verdict,
    pub source: Source,
    pub rationale: Option<String>,
}

/// How `created_at` is stamped on records created through [`CostDb::record`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timestamps {
    Wall,
    /// Unix epoch plus the record's sequence number in seconds, for
    /// byte-reproducible databases.
    Logical,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointFilter {
    pub workload: Option<String>,
    pub device: Option<String>,
    pub verdict: Option<Verdict>,
    pub feasible: Option<bool>,
}

impl PointFilter {
    pub fn matches(&self, p: &HardwareDataPoint) -> bool {
        self.workload.as_ref().is_none_or(|w| &p.workload.name == w)
            && self.device.as_ref().is_none_or(|d| &p.device == d)
            && self.verdict.is_none_or(|v| p.verdict == v)
            && self.feasible.is_none_or(|f| p.metrics.feasible == f)
    }
}

/// Sort keys accepted by [`CostDb::query_points`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    TotalCycles,
    WallTimeNs,
    Bram18k,
    Dsp,
    Ff,
    Lut,
    CreatedAt,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "total_cycles" | "objective" => Metric::TotalCycles,
            "wall_time_ns" => Metric::WallTimeNs,
            "bram_18k" => Metric::Bram18k,
            "dsp" => Metric::Dsp,
            "ff" => Metric::Ff,
            "lut" => Metric::Lut,
            "created_at" => Metric::CreatedAt,
            other => return Err(Error::UnknownMetric(other.to_string())),
        })
    }
}

impl Metric {
    /// Latency metrics of infeasible points sort as `+inf`.
    fn key(self, p: &HardwareDataPoint) -> f64 {
        let m = &p.metrics;
        match self {
            Metric::TotalCycles if m.feasible => m.total_cycles as f64,
            Metric::WallTimeNs if m.feasible => m.wall_time_ns,
            Metric::TotalCycles | Metric::WallTimeNs => f64::INFINITY,
            Metric::Bram18k => m.resources.bram_18k as f64,
            Metric::Dsp => m.resources.dsp as f64,
            Metric::Ff => m.resources.ff as f64,
            Metric::Lut => m.resources.lut as f64,
            Metric::CreatedAt => p.created_at.timestamp_micros() as f64,
        }
    }
}

/// Review status of an evaluated point, derived from later human records.
#[derive(Debug, Clone, PartialEq)]
pub enum ReviewState {
    Pending,
    Reviewed { verdict: Verdict, notes: Option<String>, record_id: String },
    NotReviewable,
}

#[derive(Debug)]
pub struct CostDb {
    path: PathBuf,
    points: Vec<HardwareDataPoint>,
    by_id: HashMap<String, usize>,
    valid_len: u64,
    torn_tail: bool,
    timestamps: Timestamps,
}

impl CostDb {
    pub const FILE: &'static str = "datapoints.ndjson";

    /// Opens (creating if needed) the store at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::storage(parent.display(), e))?;
        }
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::storage(path.display(), e)),
        };

        let mut db = Self {
            path,
            points: Vec::new(),
            by_id: HashMap::new(),
            valid_len: 0,
            torn_tail: false,
            timestamps: Timestamps::Wall,
        };
        let mut offset = 0usize;
        let mut line_no = 0usize;
        while offset < bytes.len() {
            line_no += 1;
            let Some(rel_end) = bytes[offset..].iter().position(|&b| b == b'\n') else {
                log::warn!(
                    "{}: ignoring torn final line {line_no} ({} bytes)",
                    db.path.display(),
                    bytes.len() - offset
                );
                db.torn_tail = true;
                break;
            };
            let line = &bytes[offset..offset + rel_end];
            offset += rel_end + 1;
            db.valid_len = offset as u64;
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let point: HardwareDataPoint = serde_json::from_slice(line).map_err(|e| {
                Error::Storage(format!("{}: corrupt record on line {line_no}: {e}", db.path.display()))
            })?;
            if db.by_id.contains_key(&point.point_id) {
                return Err(Error::Storage(format!(
                    "{}: duplicate point_id {} on line {line_no}",
                    db.path.display(),
                    point.point_id
                )));
            }
            db.by_id.insert(point.point_id.clone(), db.points.len());
            db.points.push(point);
        }
        Ok(db)
    }

    pub fn with_timestamps(mut self, timestamps: Timestamps) -> Self {
        self.timestamps = timestamps;
        self
    }

    pub fn set_timestamps(&mut self, timestamps: Timestamps) {
        self.timestamps = timestamps;
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Every record in append order.
    pub fn points(&self) -> &[HardwareDataPoint] {
        &self.points
    }

    pub fn get(&self, point_id: &str) -> Option<&HardwareDataPoint> {
        self.by_id.get(point_id).map(|&i| &self.points[i])
    }

    /// Id the next record for `design_id` from `source` would receive.
    pub fn next_point_id(&self, design_id: &str, source: Source) -> String {
        let prefix = &design_id[..16.min(design_id.len())];
        format!("{prefix}-{}-{:06}", source.as_str(), self.points.len())
    }

    fn next_timestamp(&self) -> DateTime<Utc> {
        match self.timestamps {
            Timestamps::Wall => Utc::now(),
            Timestamps::Logical => Utc
                .timestamp_opt(self.points.len() as i64, 0)
                .single()
                .expect("sequence fits a timestamp"),
        }
    }

    /// Assigns id and timestamp, then appends.
    pub fn record(&mut self, new: NewDataPoint) -> Result<String> {
        let point = HardwareDataPoint {
            point_id: self.next_point_id(&new.design_id, new.source),
            created_at: self.next_timestamp(),
            design_id: new.design_id,
            configuration: new.configuration,
            workload: new.workload,
            device: new.device,
            metrics: new.metrics,
            verdict: new.verdict,
            source: new.source,
            rationale: new.rationale,
        };
        self.append_point(point)
    }

    pub fn append_point(&mut self, p: HardwareDataPoint) -> Result<String> {
        if self.by_id.contains_key(&p.point_id) {
            return Err(Error::DuplicatePoint(p.point_id));
        }
        if p.point_id.is_empty() || p.design_id.is_empty() {
            return Err(Error::validation("point_id", "point_id and design_id must be non-empty"));
        }
        if p.verdict == Verdict::Failed && p.metrics.feasible {
            return Err(Error::validation("verdict", "a failed point cannot be feasible"));
        }
        let mut line = serde_json::to_vec(&p).map_err(|e| Error::storage("encoding record", e))?;
        line.push(b'\n');

        if self.torn_tail {
            log::warn!("{}: truncating torn tail before append", self.path.display());
            let f = OpenOptions::new()
                .write(true)
                .open(&self.path)
                .map_err(|e| Error::storage(self.path.display(), e))?;
            f.set_len(self.valid_len).map_err(|e| Error::storage(self.path.display(), e))?;
            self.torn_tail = false;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::storage(self.path.display(), e))?;
        f.write_all(&line)
            .and_then(|_| f.sync_data())
            .map_err(|e| Error::storage(self.path.display(), e))?;
        self.valid_len += line.len() as u64;

        let id = p.point_id.clone();
        self.by_id.insert(id.clone(), self.points.len());
        self.points.push(p);
        Ok(id)
    }

    /// Up to `limit` matching points sorted ascending by `order`, ties by point_id.
    pub fn query_points(&self, filter: &PointFilter, order: &str, limit: Option<usize>) -> Result<Vec<HardwareDataPoint>> {
        let metric: Metric = order.parse()?;
        let mut hits: Vec<&HardwareDataPoint> = self.points.iter().filter(|p| filter.matches(p)).collect();
        hits.sort_by(|a, b| {
            metric
                .key(a)
                .partial_cmp(&metric.key(b))
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.point_id.cmp(&b.point_id))
        });
        Ok(hits.into_iter().take(limit.unwrap_or(usize::MAX)).cloned().collect())
    }

    /// Whether `point_id` still awaits a human verdict. A point counts as
    /// reviewed once a later human record exists for the same design.
    pub fn review_state(&self, point_id: &str) -> Option<ReviewState> {
        let &idx = self.by_id.get(point_id)?;
        let p = &self.points[idx];
        if p.source == Source::Human || p.verdict != Verdict::Pending {
            return Some(ReviewState::NotReviewable);
        }
        let review = self.points[idx + 1..]
            .iter()
            .find(|q| q.source == Source::Human && q.design_id == p.design_id);
        Some(match review {
            Some(q) => ReviewState::Reviewed {
                verdict: q.verdict,
                notes: q.rationale.clone(),
                record_id: q.point_id.clone(),
            },
            None => ReviewState::Pending,
        })
    }

    /// Appends a human verdict for a pending point. Resubmitting the same
    /// verdict and notes returns the existing record id without appending.
    pub fn record_verdict(&mut self, point_id: &str, verdict: Verdict, notes: Option<String>) -> Result<String> {
        if !matches!(verdict, Verdict::Accepted | Verdict::Rejected) {
            return Err(Error::validation("verdict", "must be accepted or rejected"));
        }
        match self.review_state(point_id) {
            None | Some(ReviewState::NotReviewable) => Err(Error::UnknownPoint(point_id.to_string())),
            Some(ReviewState::Reviewed {
                verdict: v,
                notes: n,
                record_id,
            }) => {
                if v == verdict && n == notes {
                    Ok(record_id)
                } else {
                    Err(Error::VerdictConflict(point_id.to_string()))
                }
            }
            Some(ReviewState::Pending) => {
                let original = self.get(point_id).expect("reviewable point exists").clone();
                self.record(NewDataPoint {
                    design_id: original.design_id,
                    configuration: original.configuration,
                    workload: original.workload,
                    device: original.device,
                    metrics: original.metrics,
                    verdict,
                    source: Source::Human,
                    rationale: notes,
                })
            }
        }
    }
}

/// One line of the fine-tuning dataset export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneRecord {
    pub configuration: ParameterPoint,
    pub workload: WorkloadSpec,
    pub device: String,
    pub feedback: Feedback,
    pub verdict: Verdict,
    pub rationale: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    pub simulation_success: bool,
    pub latency_cycles: u64,
    pub resource_utilization: Resources,
}

impl From<&HardwareDataPoint> for FinetuneRecord {
    fn from(p: &HardwareDataPoint) -> Self {
        Self {
            configuration: p.configuration,
            workload: p.workload.clone(),
            device: p.device.clone(),
            feedback: Feedback {
                simulation_success: p.verdict != Verdict::Failed && p.metrics.feasible,
                latency_cycles: p.metrics.total_cycles,
                resource_utilization: p.metrics.utilization_pct,
            },
            verdict: p.verdict,
            rationale: p.rationale.clone(),
        }
    }
}

/// Writes one JSON line per matching point, in append order.
pub fn export_finetune_dataset(db: &CostDb, filter: &PointFilter, out: &Path) -> Result<usize> {
    let file = File::create(out).map_err(|e| Error::storage(out.display(), e))?;
    let mut w = BufWriter::new(file);
    let mut count = 0;
    for p in db.points().iter().filter(|p| filter.matches(p)) {
        serde_json::to_writer(&mut w, &FinetuneRecord::from(p)).map_err(|e| Error::storage(out.display(), e))?;
        w.write_all(b"\n").map_err(|e| Error::storage(out.display(), e))?;
        count += 1;
    }
    w.flush().map_err(|e| Error::storage(out.display(), e))?;
    Ok(count)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Headline {
    pub total_cycles: u64,
    pub utilization_pct: Resources,
    pub feasible: bool,
}

/// Condensed "results" of one run folder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub design_id: String,
    pub headline: Headline,
    pub files: Vec<String>,
}

pub fn summarize_run(run_folder: &Path) -> Result<RunSummary> {
    let design_path = run_folder.join("design.json");
    let report_path = run_folder.join("report.json");
    for (name, path) in [("design.json", &design_path), ("report.json", &report_path)] {
        if !path.is_file() {
            return Err(Error::MissingArtifact(name.to_string()));
        }
    }
    let design = AcceleratorDesign::load(&design_path)?;
    let report = EvaluationReport::load(&report_path)?;
    let src = run_folder.join("src");
    let files = if src.is_dir() {
        SourceSet::read_from(&src)?.files.into_keys().collect()
    } else {
        Vec::new()
    };
    let run_id = run_folder
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(RunSummary {
        run_id,
        design_id: design.design_id,
        headline: Headline {
            total_cycles: report.total_cycles,
            utilization_pct: report.utilization_pct,
            feasible: report.feasible,
        },
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(design: &str, cycles: u64, feasible: bool, verdict: Verdict) -> NewDataPoint {
        NewDataPoint {
            design_id: design.repeat(16),
            configuration: ParameterPoint::new(1024, 1, 32),
            workload: WorkloadSpec::vecmul(1023).unwrap(),
            device: "xc7z020-clg400-1".into(),
            metrics: MetricsSummary {
                total_cycles: cycles,
                feasible,
                timing_pass: true,
                ..Default::default()
            },
            verdict,
            source: Source::Analytical,
            rationale: None,
        }
    }

    fn temp_db() -> (tempfile::TempDir, CostDb) {
        let dir = tempfile::tempdir().unwrap();
        let db = CostDb::open(dir.path().join("db").join(CostDb::FILE)).unwrap();
        (dir, db)
    }

    #[test]
    fn append_counts_and_rejects_duplicates() {
        let (_dir, mut db) = temp_db();
        assert_eq!(db.len(), 0);
        let id = db.record(sample("a", 2060, true, Verdict::Pending)).unwrap();
        assert_eq!(db.len(), 1);
        let dup = db.get(&id).unwrap().clone();
        assert!(matches!(db.append_point(dup), Err(Error::DuplicatePoint(_))));
        assert_eq!(db.len(), 1);
    }

    #[test]
    fn rejected_points_are_queryable() {
        let (_dir, mut db) = temp_db();
        db.record(sample("a", 2060, true, Verdict::Pending)).unwrap();
        let mut neg = sample("b", 0, false, Verdict::Rejected);
        neg.metrics = MetricsSummary::unevaluated();
        neg.rationale = Some("buffer_depth not in directive set".into());
        db.record(neg).unwrap();
        let filter = PointFilter {
            verdict: Some(Verdict::Rejected),
            ..Default::default()
        };
        let got = db.query_points(&filter, "total_cycles", None).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].verdict, Verdict::Rejected);
    }

    #[test]
    fn query_orders_infeasible_last() {
        let (_dir, mut db) = temp_db();
        assert!(db.query_points(&PointFilter::default(), "total_cycles", Some(5)).unwrap().is_empty());
        db.record(sample("a", 2060, true, Verdict::Pending)).unwrap();
        db.record(sample("b", 1040, true, Verdict::Pending)).unwrap();
        db.record(sample("c", 10, false, Verdict::Rejected)).unwrap();
        let got = db.query_points(&PointFilter::default(), "total_cycles", Some(2)).unwrap();
        let cycles: Vec<_> = got.iter().map(|p| p.metrics.total_cycles).collect();
        assert_eq!(cycles, vec![1040, 2060]);
        assert!(matches!(
            db.query_points(&PointFilter::default(), "power", None),
            Err(Error::UnknownMetric(_))
        ));
    }

    #[test]
    fn failed_point_must_be_infeasible() {
        let (_dir, mut db) = temp_db();
        assert!(db.record(sample("a", 1, true, Verdict::Failed)).is_err());
        assert!(db.record(sample("a", 1, false, Verdict::Failed)).is_ok());
    }

    #[test]
    fn reopen_preserves_records_and_prefix() {
        let (dir, mut db) = temp_db();
        db.record(sample("a", 2060, true, Verdict::Pending)).unwrap();
        let before = std::fs::read(db.path()).unwrap();
        db.record(sample("b", 1040, true, Verdict::Pending)).unwrap();
        let after = std::fs::read(db.path()).unwrap();
        assert_eq!(&after[..before.len()], &before[..]);
        let reopened = CostDb::open(dir.path().join("db").join(CostDb::FILE)).unwrap();
        assert_eq!(reopened.points(), db.points());
    }

    #[test]
    fn torn_tail_is_ignored_then_truncated() {
        let (dir, mut db) = temp_db();
        db.record(sample("a", 2060, true, Verdict::Pending)).unwrap();
        let path = db.path().to_path_buf();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"point_id\":\"torn").unwrap();
        drop(f);

        let mut reopened = CostDb::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        reopened.record(sample("b", 1040, true, Verdict::Pending)).unwrap();
        let again = CostDb::open(&path).unwrap();
        assert_eq!(again.len(), 2);
        drop(dir);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CostDb::FILE);
        std::fs::write(&path, b"not json\n").unwrap();
        assert!(matches!(CostDb::open(&path), Err(Error::Storage(_))));
    }

    #[test]
    fn verdicts_are_idempotent_and_conflicts_detected() {
        let (_dir, mut db) = temp_db();
        let id = db.record(sample("a", 2060, true, Verdict::Pending)).unwrap();
        let r1 = db.record_verdict(&id, Verdict::Accepted, Some("ok".into())).unwrap();
        let r2 = db.record_verdict(&id, Verdict::Accepted, Some("ok".into())).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(db.len(), 2);
        assert!(matches!(
            db.record_verdict(&id, Verdict::Rejected, None),
            Err(Error::VerdictConflict(_))
        ));
        assert!(matches!(
            db.record_verdict("nope", Verdict::Accepted, None),
            Err(Error::UnknownPoint(_))
        ));
        let human = db.get(&r1).unwrap();
        assert_eq!((human.source, human.verdict), (Source::Human, Verdict::Accepted));
    }

    #[test]
    fn logical_timestamps_follow_sequence() {
        let (_dir, db) = temp_db();
        let mut db = db.with_timestamps(Timestamps::Logical);
        let a = db.record(sample("a", 1, true, Verdict::Pending)).unwrap();
        let b = db.record(sample("b", 1, true, Verdict::Pending)).unwrap();
        assert_eq!(db.get(&a).unwrap().created_at.timestamp(), 0);
        assert_eq!(db.get(&b).unwrap().created_at.timestamp(), 1);
        assert!(a.ends_with("-analytical-000000"));
    }

    #[test]
    fn export_maps_fields() {
        let (dir, mut db) = temp_db();
        let out = dir.path().join("export.ndjson");
        assert_eq!(export_finetune_dataset(&db, &PointFilter::default(), &out).unwrap(), 0);
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "");

        db.record(sample("a", 2060, true, Verdict::Accepted)).unwrap();
        db.record(sample("b", 0, false, Verdict::Failed)).unwrap();
        assert_eq!(export_finetune_dataset(&db, &PointFilter::default(), &out).unwrap(), 2);
        let text = std::fs::read_to_string(&out).unwrap();
        let first: FinetuneRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(first.feedback.simulation_success);
        assert_eq!(first.feedback.latency_cycles, 2060);
        let second: FinetuneRecord = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert!(!second.feedback.simulation_success);
    }

    #[test]
    fn summarize_requires_report() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("0001-abc");
        std::fs::create_dir_all(&run).unwrap();
        std::fs::write(run.join("design.json"), "{}").unwrap();
        assert!(matches!(summarize_run(&run), Err(Error::MissingArtifact(f)) if f == "report.json"));
    }
}
