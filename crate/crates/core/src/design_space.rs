//! Workloads, devices and directive-bounded parameter spaces.
//!
//! A [`Directives`] value fixes the explicit candidate values for each
//! architectural parameter. Points are enumerated as the Cartesian product of
//! those sets in lexicographic order (buffer depth major, then parallelism,
//! then data width), which is also the derived `Ord` of [`ParameterPoint`].

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUPPORTED_DATA_WIDTHS: [u32; 3] = [8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Vecmul,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Vecmul => "vecmul",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_data_width() -> u32 {
    32
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadDoc {
    kernel_kind: KernelKind,
    length_l: u64,
    #[serde(default = "default_data_width")]
    data_width: u32,
    #[serde(default)]
    name: Option<String>,
}

/// The target kernel: element-wise `Z = X * Y` over vectors of `length_l`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "WorkloadDoc")]
pub struct WorkloadSpec {
    pub kernel_kind: KernelKind,
    pub length_l: u64,
    pub data_width: u32,
    pub name: String,
}

impl TryFrom<WorkloadDoc> for WorkloadSpec {
    type Error = Error;

    fn try_from(doc: WorkloadDoc) -> Result<Self> {
        let name = doc
            .name
            .unwrap_or_else(|| format!("{}_l{}", doc.kernel_kind, doc.length_l));
        WorkloadSpec::new(doc.kernel_kind, doc.length_l, doc.data_width, name)
    }
}

impl WorkloadSpec {
    pub fn new(
        kernel_kind: KernelKind,
        length_l: u64,
        data_width: u32,
        name: impl Into<String>,
    ) -> Result<Self> {
        if length_l < 1 {
            return Err(Error::validation("length_l", "must be at least 1"));
        }
        if !SUPPORTED_DATA_WIDTHS.contains(&data_width) {
            return Err(Error::validation(
                "data_width",
                format!("{data_width} is not one of 8, 16, 32"),
            ));
        }
        Ok(Self {
            kernel_kind,
            length_l,
            data_width,
            name: name.into(),
        })
    }

    pub fn vecmul(length_l: u64) -> Result<Self> {
        Self::new(KernelKind::Vecmul, length_l, 32, format!("vecmul_l{length_l}"))
    }
}

/// Parses a workload document (JSON, unknown fields rejected).
pub fn load_workload(source: &str) -> Result<WorkloadSpec> {
    parse_validated::<WorkloadDoc, _>(source)
}

pub fn load_workload_file(path: &Path) -> Result<WorkloadSpec> {
    load_workload(&read_text(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceDoc {
    name: String,
    bram_18k: u64,
    dsp: u64,
    ff: u64,
    lut: u64,
    clock_target_ns: f64,
}

/// Resource capacities and clock constraint of a target FPGA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DeviceDoc")]
pub struct DeviceProfile {
    pub name: String,
    pub bram_18k: u64,
    pub dsp: u64,
    pub ff: u64,
    pub lut: u64,
    pub clock_target_ns: f64,
}

impl TryFrom<DeviceDoc> for DeviceProfile {
    type Error = Error;

    fn try_from(doc: DeviceDoc) -> Result<Self> {
        if !(doc.clock_target_ns.is_finite() && doc.clock_target_ns > 0.0) {
            return Err(Error::validation("clock_target_ns", "must be a positive number"));
        }
        Ok(Self {
            name: doc.name,
            bram_18k: doc.bram_18k,
            dsp: doc.dsp,
            ff: doc.ff,
            lut: doc.lut,
            clock_target_ns: doc.clock_target_ns,
        })
    }
}

const XC7Z020_JSON: &str = include_str!("../data/xc7z020.json");

impl DeviceProfile {
    /// Zynq-7000 `xc7z020-clg400-1` at a 5 ns clock target.
    pub fn xc7z020() -> Self {
        serde_json::from_str(XC7Z020_JSON).expect("packaged device profile is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse_validated::<DeviceDoc, _>(&read_text(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DirectivesDoc {
    buffer_depth: Vec<u64>,
    parallelism_p: Vec<u64>,
    data_width: Vec<u32>,
}

/// Explicit per-parameter candidate sets. Each set is non-empty, ascending,
/// and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "DirectivesDoc")]
pub struct Directives {
    buffer_depth: Vec<u64>,
    parallelism_p: Vec<u64>,
    data_width: Vec<u32>,
}

impl TryFrom<DirectivesDoc> for Directives {
    type Error = Error;

    fn try_from(doc: DirectivesDoc) -> Result<Self> {
        Directives::new(doc.buffer_depth, doc.parallelism_p, doc.data_width)
    }
}

fn check_set<T: Ord + Copy + fmt::Display>(field: &str, values: &[T], positive: impl Fn(T) -> bool) -> Result<()> {
    if values.is_empty() {
        return Err(Error::validation(field, "directive set is empty"));
    }
    if let Some(bad) = values.iter().find(|&&v| !positive(v)) {
        return Err(Error::validation(field, format!("{bad} is not a positive value")));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation(
            field,
            "directive set must be sorted ascending without duplicates",
        ));
    }
    Ok(())
}

impl Directives {
    pub fn new(buffer_depth: Vec<u64>, parallelism_p: Vec<u64>, data_width: Vec<u32>) -> Result<Self> {
        check_set("buffer_depth", &buffer_depth, |v| v > 0)?;
        check_set("parallelism_p", &parallelism_p, |v| v > 0)?;
        check_set("data_width", &data_width, |v| v > 0)?;
        Ok(Self {
            buffer_depth,
            parallelism_p,
            data_width,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse_validated::<DirectivesDoc, _>(&read_text(path)?)
    }

    pub fn buffer_depth(&self) -> &[u64] {
        &self.buffer_depth
    }

    pub fn parallelism_p(&self) -> &[u64] {
        &self.parallelism_p
    }

    pub fn data_width(&self) -> &[u32] {
        &self.data_width
    }

    /// Number of points in the full Cartesian space.
    pub fn size(&self) -> usize {
        self.buffer_depth.len() * self.parallelism_p.len() * self.data_width.len()
    }

    /// Sizes of the three sets, in parameter order.
    pub fn set_sizes(&self) -> [usize; 3] {
        [
            self.buffer_depth.len(),
            self.parallelism_p.len(),
            self.data_width.len(),
        ]
    }

    /// Position of each field of `p` within its directive set, if all are members.
    pub fn indices_of(&self, p: &ParameterPoint) -> Option<[usize; 3]> {
        Some([
            self.buffer_depth.binary_search(&p.buffer_depth).ok()?,
            self.parallelism_p.binary_search(&p.parallelism_p).ok()?,
            self.data_width.binary_search(&p.data_width).ok()?,
        ])
    }

    pub fn point_at(&self, idx: [usize; 3]) -> ParameterPoint {
        ParameterPoint {
            buffer_depth: self.buffer_depth[idx[0]],
            parallelism_p: self.parallelism_p[idx[1]],
            data_width: self.data_width[idx[2]],
        }
    }

    pub fn contains(&self, p: &ParameterPoint) -> bool {
        self.indices_of(p).is_some()
    }
}

/// One concrete assignment of architectural parameters.
///
/// Field order defines the derived ordering, which matches enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterPoint {
    pub buffer_depth: u64,
    pub parallelism_p: u64,
    pub data_width: u32,
}

impl ParameterPoint {
    pub fn new(buffer_depth: u64, parallelism_p: u64, data_width: u32) -> Self {
        Self {
            buffer_depth,
            parallelism_p,
            data_width,
        }
    }
}

impl fmt::Display for ParameterPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "depth={} P={} width={}",
            self.buffer_depth, self.parallelism_p, self.data_width
        )
    }
}

/// Cartesian product of the directive sets in lexicographic order.
pub fn enumerate_points(d: &Directives) -> Vec<ParameterPoint> {
    let mut out = Vec::with_capacity(d.size());
    for &depth in &d.buffer_depth {
        for &p in &d.parallelism_p {
            for &width in &d.data_width {
                out.push(ParameterPoint::new(depth, p, width));
            }
        }
    }
    out
}

/// A violated point-validity rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    BufferDepthInDirectives,
    BufferDepthCoversLength,
    DataWidthInDirectives,
    ParallelismInDirectives,
    ParallelismWithinLength,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::BufferDepthInDirectives => "buffer_depth_in_directives",
            Rule::BufferDepthCoversLength => "buffer_depth_covers_length",
            Rule::DataWidthInDirectives => "data_width_in_directives",
            Rule::ParallelismInDirectives => "parallelism_in_directives",
            Rule::ParallelismWithinLength => "parallelism_within_length",
        }
    }

    pub fn reason(self) -> &'static str {
        match self {
            Rule::BufferDepthInDirectives => "buffer_depth not in directive set",
            Rule::BufferDepthCoversLength => "buffer_depth < length_L",
            Rule::DataWidthInDirectives => "data_width not in directive set",
            Rule::ParallelismInDirectives => "parallelism_P not in directive set",
            Rule::ParallelismWithinLength => "parallelism_P > length_L",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.reason())
    }
}

/// Outcome of [`validate_point`]; `violations` is sorted by rule name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validity {
    pub violations: Vec<Rule>,
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn reasons(&self) -> Vec<&'static str> {
        self.violations.iter().map(|r| r.reason()).collect()
    }
}

/// Checks the workload-coupling rules only (no directive membership).
pub fn workload_violations(p: &ParameterPoint, w: &WorkloadSpec) -> Vec<Rule> {
    let mut out = Vec::new();
    if p.buffer_depth < w.length_l {
        out.push(Rule::BufferDepthCoversLength);
    }
    if p.parallelism_p > w.length_l {
        out.push(Rule::ParallelismWithinLength);
    }
    out
}

pub fn validate_point(p: &ParameterPoint, w: &WorkloadSpec, d: &Directives) -> Validity {
    let mut violations = workload_violations(p, w);
    if d.buffer_depth.binary_search(&p.buffer_depth).is_err() {
        violations.push(Rule::BufferDepthInDirectives);
    }
    if d.parallelism_p.binary_search(&p.parallelism_p).is_err() {
        violations.push(Rule::ParallelismInDirectives);
    }
    if d.data_width.binary_search(&p.data_width).is_err() {
        violations.push(Rule::DataWidthInDirectives);
    }
    violations.sort_by_key(|r| r.name());
    Validity { violations }
}

/// Points reachable by moving exactly one field to an adjacent directive value.
///
/// Returns an empty set when `p` is not a member of `d`.
pub fn neighbor_points(p: &ParameterPoint, d: &Directives) -> BTreeSet<ParameterPoint> {
    let mut out = BTreeSet::new();
    let Some(idx) = d.indices_of(p) else {
        return out;
    };
    let sizes = d.set_sizes();
    for axis in 0..3 {
        if idx[axis] > 0 {
            let mut moved = idx;
            moved[axis] -= 1;
            out.insert(d.point_at(moved));
        }
        if idx[axis] + 1 < sizes[axis] {
            let mut moved = idx;
            moved[axis] += 1;
            out.insert(d.point_at(moved));
        }
    }
    out
}

pub(crate) fn parse_document<T: serde::de::DeserializeOwned>(source: &str) -> Result<T> {
    Ok(serde_json::from_str(source)?)
}

/// Parses the raw document shape first so invariant failures surface as
/// `Error::Validation` instead of being folded into a serde message.
fn parse_validated<D, T>(source: &str) -> Result<T>
where
    D: serde::de::DeserializeOwned,
    T: TryFrom<D, Error = Error>,
{
    T::try_from(parse_document::<D>(source)?)
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::storage(format!("reading {}", path.display()), e))
}

pub(crate) fn read_document<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    parse_document(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dirs(depths: &[u64], ps: &[u64], widths: &[u32]) -> Directives {
        Directives::new(depths.to_vec(), ps.to_vec(), widths.to_vec()).unwrap()
    }

    #[test]
    fn load_workload_examples() {
        let w = load_workload(r#"{"kernel_kind":"vecmul","length_l":1024,"data_width":32}"#).unwrap();
        assert_eq!((w.kernel_kind, w.length_l, w.data_width), (KernelKind::Vecmul, 1024, 32));

        let w = load_workload(r#"{"kernel_kind":"vecmul","length_l":1,"data_width":32,"name":"tiny"}"#).unwrap();
        assert_eq!(w.length_l, 1);
        assert_eq!(w.name, "tiny");

        match load_workload(r#"{"kernel_kind":"vecmul","length_l":0,"data_width":32}"#) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "length_l"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn load_workload_rejects_bad_documents() {
        assert!(matches!(load_workload("{kernel"), Err(Error::Parse(_))));
        assert!(matches!(
            load_workload(r#"{"kernel_kind":"vecmul","length_l":4,"bogus":1}"#),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            load_workload(r#"{"kernel_kind":"vecmul","length_l":4,"data_width":12}"#),
            Err(Error::Validation { ref field, .. }) if field == "data_width"
        ));
        // width defaults to 32
        assert_eq!(load_workload(r#"{"kernel_kind":"vecmul","length_l":4}"#).unwrap().data_width, 32);
    }

    #[test]
    fn directives_reject_empty_and_unsorted_sets() {
        assert!(matches!(
            Directives::new(vec![], vec![1], vec![32]),
            Err(Error::Validation { ref field, .. }) if field == "buffer_depth"
        ));
        assert!(Directives::new(vec![512, 256], vec![1], vec![32]).is_err());
        assert!(Directives::new(vec![256, 256], vec![1], vec![32]).is_err());
        assert!(Directives::new(vec![256], vec![0], vec![32]).is_err());
        let err = serde_json::from_str::<Directives>(r#"{"buffer_depth":[],"parallelism_p":[1],"data_width":[32]}"#);
        assert!(err.is_err());
    }

    #[test]
    fn enumerate_examples() {
        let pts = enumerate_points(&dirs(&[256, 512], &[1], &[32]));
        assert_eq!(pts, vec![ParameterPoint::new(256, 1, 32), ParameterPoint::new(512, 1, 32)]);

        let pts = enumerate_points(&dirs(&[256], &[1, 2, 4], &[32]));
        let ps: Vec<u64> = pts.iter().map(|p| p.parallelism_p).collect();
        assert_eq!(ps, vec![1, 2, 4]);
    }

    #[test]
    fn validate_examples() {
        let d = dirs(&[512, 1024], &[1, 4096], &[32]);
        let w = WorkloadSpec::vecmul(1023).unwrap();
        assert!(validate_point(&ParameterPoint::new(1024, 1, 32), &w, &d).is_valid());

        let v = validate_point(&ParameterPoint::new(512, 1, 32), &w, &d);
        assert_eq!(v.reasons(), vec!["buffer_depth < length_L"]);

        let v = validate_point(&ParameterPoint::new(1024, 4096, 32), &w, &d);
        assert_eq!(v.reasons(), vec!["parallelism_P > length_L"]);
    }

    #[test]
    fn validate_lists_every_violation_sorted_by_rule() {
        let d = dirs(&[2048], &[1], &[32]);
        let w = WorkloadSpec::vecmul(8).unwrap();
        let v = validate_point(&ParameterPoint::new(4, 16, 8), &w, &d);
        let names: Vec<_> = v.violations.iter().map(|r| r.name()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert_eq!(names.len(), 5);
    }

    #[test]
    fn neighbor_examples() {
        let d = dirs(&[256, 512, 1024], &[1, 2, 4], &[32]);
        let got = neighbor_points(&ParameterPoint::new(512, 2, 32), &d);
        let want: BTreeSet<_> = [
            ParameterPoint::new(256, 2, 32),
            ParameterPoint::new(1024, 2, 32),
            ParameterPoint::new(512, 1, 32),
            ParameterPoint::new(512, 4, 32),
        ]
        .into_iter()
        .collect();
        assert_eq!(got, want);

        let corner = neighbor_points(&ParameterPoint::new(256, 1, 32), &d);
        assert!(corner.iter().all(|q| q > &ParameterPoint::new(256, 1, 32)));
        assert_eq!(corner.len(), 2);

        let single = dirs(&[256], &[1], &[32]);
        assert!(neighbor_points(&ParameterPoint::new(256, 1, 32), &single).is_empty());
    }

    #[test]
    fn packaged_device_profile() {
        let dev = DeviceProfile::xc7z020();
        assert_eq!((dev.bram_18k, dev.dsp, dev.ff, dev.lut), (280, 220, 106_400, 53_200));
        assert_eq!(dev.clock_target_ns, 5.0);
        assert!(serde_json::from_str::<DeviceProfile>(
            r#"{"name":"x","bram_18k":1,"dsp":1,"ff":1,"lut":1,"clock_target_ns":0}"#
        )
        .is_err());
    }
}
