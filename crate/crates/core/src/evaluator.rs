//! Analytical latency/resource model standing in for HLS reports.
//!
//! Per-module latency is affine in the number of elements a module touches:
//! `ceil(alpha * n) + beta`, where compute-kind modules see `n = ceil(L / P)`
//! and every other module sees `n = L`. With `L = 0` a module reports its
//! `idle` constant instead and the top-level total is zero. The top level is
//! not pipelined, so the initiation interval equals the total latency.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::process::Command;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::design_space::{read_text, DeviceProfile, ParameterPoint};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::templates::{template_by_id, AcceleratorDesign, AcceleratorTemplate, ModuleKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleCoefficients {
    /// cycles per element
    pub alpha: f64,
    pub beta: u64,
    pub idle: u64,
}

fn default_bram_bits() -> u64 {
    18_432
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    template_id: String,
    modules: BTreeMap<String, ModuleCoefficients>,
    total_handoff: u64,
    dsp_per_multiplier: u64,
    #[serde(default = "default_bram_bits")]
    bram_bits_per_block: u64,
    ff_base: u64,
    lut_base: u64,
    ff_per_lane: u64,
    lut_per_lane: u64,
    estimated_path_ns: f64,
    declared_l_max: u64,
}

/// Coefficients that make the analytical model reproduce a reference HLS report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileDoc")]
pub struct CalibrationProfile {
    pub template_id: String,
    pub modules: BTreeMap<String, ModuleCoefficients>,
    pub total_handoff: u64,
    pub dsp_per_multiplier: u64,
    pub bram_bits_per_block: u64,
    pub ff_base: u64,
    pub lut_base: u64,
    pub ff_per_lane: u64,
    pub lut_per_lane: u64,
    pub estimated_path_ns: f64,
    pub declared_l_max: u64,
}

impl TryFrom<ProfileDoc> for CalibrationProfile {
    type Error = Error;

    fn try_from(d: ProfileDoc) -> Result<Self> {
        for (name, c) in &d.modules {
            if !(c.alpha.is_finite() && c.alpha >= 0.0) {
                return Err(Error::validation(format!("modules.{name}.alpha"), "must be >= 0"));
            }
        }
        if d.bram_bits_per_block == 0 {
            return Err(Error::validation("bram_bits_per_block", "must be > 0"));
        }
        if !(d.estimated_path_ns.is_finite() && d.estimated_path_ns > 0.0) {
            return Err(Error::validation("estimated_path_ns", "must be > 0"));
        }
        if d.declared_l_max == 0 {
            return Err(Error::validation("declared_l_max", "must be > 0"));
        }
        Ok(Self {
            template_id: d.template_id,
            modules: d.modules,
            total_handoff: d.total_handoff,
            dsp_per_multiplier: d.dsp_per_multiplier,
            bram_bits_per_block: d.bram_bits_per_block,
            ff_base: d.ff_base,
            lut_base: d.lut_base,
            ff_per_lane: d.ff_per_lane,
            lut_per_lane: d.lut_per_lane,
            estimated_path_ns: d.estimated_path_ns,
            declared_l_max: d.declared_l_max,
        })
    }
}

const VECMUL_PROFILE_JSON: &str = include_str!("../data/vecmul_profile.json");

impl CalibrationProfile {
    /// Profile fitted to the reference vecmul HLS report.
    pub fn shipped_vecmul() -> Self {
        serde_json::from_str(VECMUL_PROFILE_JSON).expect("packaged profile is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: ProfileDoc = crate::design_space::parse_document(&read_text(path)?)?;
        Self::try_from(doc)
    }

    fn coefficients(&self, module: &str) -> Result<&ModuleCoefficients> {
        self.modules
            .get(module)
            .ok_or_else(|| Error::ProfileMissingModule(module.to_string()))
    }
}

/// `ceil(alpha * n) + beta`, evaluated in scalar type `S`.
pub fn affine_cycles<S: Scalar>(alpha: S, beta: u64, n: u64) -> u64 {
    let scaled = (alpha * S::from_u64(n).expect("element count fits scalar")).ceil();
    scaled.to_u64().expect("cycle count is finite and non-negative") + beta
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyEstimate {
    pub module_cycles: BTreeMap<String, u64>,
    pub total_cycles: u64,
}

/// Latency for an explicit vector length, which may be zero.
pub fn estimate_latency_at(
    template: &AcceleratorTemplate,
    point: &ParameterPoint,
    length: u64,
    prof: &CalibrationProfile,
) -> Result<LatencyEstimate> {
    let mut module_cycles = BTreeMap::new();
    for m in &template.hw_modules {
        let c = prof.coefficients(&m.name)?;
        let cycles = if length == 0 {
            c.idle
        } else {
            let elements = match m.kind {
                ModuleKind::Compute => length.div_ceil(point.parallelism_p.max(1)),
                _ => length,
            };
            affine_cycles::<f64>(c.alpha, c.beta, elements)
        };
        module_cycles.insert(m.name.clone(), cycles);
    }
    let total_cycles = if length == 0 {
        0
    } else {
        module_cycles.values().copied().max().unwrap_or(0) + prof.total_handoff
    };
    Ok(LatencyEstimate {
        module_cycles,
        total_cycles,
    })
}

pub fn estimate_latency(d: &AcceleratorDesign, prof: &CalibrationProfile) -> Result<LatencyEstimate> {
    let template = template_by_id(&d.template_id)?;
    estimate_latency_at(&template, &d.point, d.workload.length_l, prof)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resources {
    pub bram_18k: u64,
    pub dsp: u64,
    pub ff: u64,
    pub lut: u64,
}

pub fn estimate_resources(d: &AcceleratorDesign, prof: &CalibrationProfile) -> Result<Resources> {
    let template = template_by_id(&d.template_id)?;
    Ok(resources_for(&template, &d.point, prof))
}

fn resources_for(template: &AcceleratorTemplate, p: &ParameterPoint, prof: &CalibrationProfile) -> Resources {
    let bits = p.buffer_depth * u64::from(p.data_width);
    let per_buffer = bits.div_ceil(prof.bram_bits_per_block);
    let extra_lanes = p.parallelism_p.saturating_sub(1);
    Resources {
        bram_18k: per_buffer * template.buffers.len() as u64,
        dsp: prof.dsp_per_multiplier * p.parallelism_p,
        ff: prof.ff_base + prof.ff_per_lane * extra_lanes,
        lut: prof.lut_base + prof.lut_per_lane * extra_lanes,
    }
}

/// `floor(100 * used / available)`.
pub fn utilization_pct(used: u64, available: u64) -> Result<u64> {
    if available == 0 {
        return Err(Error::validation("available", "must be > 0"));
    }
    Ok((u128::from(used) * 100 / u128::from(available)) as u64)
}

/// Inclusive: a path exactly at the clock target passes.
pub fn check_timing(prof: &CalibrationProfile, dev: &DeviceProfile) -> bool {
    prof.estimated_path_ns <= dev.clock_target_ns
}

/// Ranking value of a report: total cycles when feasible, `+inf` otherwise.
/// Serialized as a JSON number, or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Objective {
    Cycles(u64),
    Infeasible,
}

impl Objective {
    pub fn as_f64(self) -> f64 {
        match self {
            Objective::Cycles(c) => c as f64,
            Objective::Infeasible => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Objective::Cycles(_))
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Cycles(c) => write!(f, "{c}"),
            Objective::Infeasible => f.write_str("inf"),
        }
    }
}

impl Serialize for Objective {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Objective::Cycles(c) => s.serialize_u64(*c),
            Objective::Infeasible => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Objective {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(c) => Ok(Objective::Cycles(c)),
            Raw::Text(t) if t == "inf" => Ok(Objective::Infeasible),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad objective `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub module_cycles: BTreeMap<String, u64>,
    pub total_cycles: u64,
    pub initiation_interval: u64,
    pub wall_time_ns: f64,
    pub resources: Resources,
    pub utilization_pct: Resources,
    pub timing_pass: bool,
    pub feasible: bool,
    pub objective: Objective,
}

impl EvaluationReport {
    pub fn load(path: &Path) -> Result<Self> {
        crate::design_space::read_document(path)
    }
}

fn fits(used: &Resources, dev: &DeviceProfile) -> bool {
    used.bram_18k <= dev.bram_18k && used.dsp <= dev.dsp && used.ff <= dev.ff && used.lut <= dev.lut
}

/// Utilization against a device; a zero-capacity resource reports 0 % when
/// unused and saturates at `u64::MAX` otherwise.
fn utilization(used: &Resources, dev: &DeviceProfile) -> Resources {
    let pct = |u: u64, a: u64| match utilization_pct(u, a) {
        Ok(v) => v,
        Err(_) if u == 0 => 0,
        Err(_) => u64::MAX,
    };
    Resources {
        bram_18k: pct(used.bram_18k, dev.bram_18k),
        dsp: pct(used.dsp, dev.dsp),
        ff: pct(used.ff, dev.ff),
        lut: pct(used.lut, dev.lut),
    }
}

pub fn evaluate(d: &AcceleratorDesign, dev: &DeviceProfile, prof: &CalibrationProfile) -> Result<EvaluationReport> {
    evaluate_at_length(d, d.workload.length_l, dev, prof)
}

/// Evaluates `d` as if its workload had `length` elements. `length = 0` gives
/// the idle end of the latency range.
pub fn evaluate_at_length(
    d: &AcceleratorDesign,
    length: u64,
    dev: &DeviceProfile,
    prof: &CalibrationProfile,
) -> Result<EvaluationReport> {
    let template = template_by_id(&d.template_id)?;
    let latency = estimate_latency_at(&template, &d.point, length, prof)?;
    let resources = resources_for(&template, &d.point, prof);
    let timing_pass = check_timing(prof, dev);
    let feasible = timing_pass && fits(&resources, dev);
    Ok(EvaluationReport {
        initiation_interval: latency.total_cycles,
        wall_time_ns: latency.total_cycles as f64 * dev.clock_target_ns,
        total_cycles: latency.total_cycles,
        module_cycles: latency.module_cycles,
        utilization_pct: utilization(&resources, dev),
        resources,
        timing_pass,
        feasible,
        objective: if feasible {
            Objective::Cycles(latency.total_cycles)
        } else {
            Objective::Infeasible
        },
    })
}

/// Runs an external synthesis/simulation command on a run folder.
///
/// The folder path is appended as the final argument; the command must write
/// `report.json` into the folder. At most `max_concurrent` processes run at once.
#[derive(Debug)]
pub struct ExternalEvaluator {
    command: Vec<String>,
    max_concurrent: usize,
    running: Mutex<usize>,
    slot_freed: Condvar,
}

impl ExternalEvaluator {
    pub fn new(command: Vec<String>, max_concurrent: usize) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::validation("command", "external evaluator command is empty"));
        }
        Ok(Self {
            command,
            max_concurrent: max_concurrent.max(1),
            running: Mutex::new(0),
            slot_freed: Condvar::new(),
        })
    }

    /// Splits a command template on whitespace.
    pub fn from_template(template: &str, max_concurrent: usize) -> Result<Self> {
        Self::new(template.split_whitespace().map(str::to_string).collect(), max_concurrent)
    }

    pub fn run(&self, d: &AcceleratorDesign, run_folder: &Path) -> Result<EvaluationReport> {
        let _slot = self.acquire();
        log::debug!("external evaluation of {} in {}", d.design_id, run_folder.display());
        let output = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg(run_folder)
            .output()
            .map_err(|e| Error::ExternalToolFailure {
                message: format!("could not start `{}`", self.command[0]),
                diagnostics: e.to_string(),
            })?;
        let stderr = String::from_utf8_lossy(&output.stderr).into_owned();
        if !output.status.success() {
            return Err(Error::ExternalToolFailure {
                message: format!("`{}` exited with {}", self.command[0], output.status),
                diagnostics: stderr,
            });
        }
        let report_path = run_folder.join("report.json");
        let text = std::fs::read_to_string(&report_path).map_err(|e| Error::ExternalToolFailure {
            message: "report.json not written".into(),
            diagnostics: format!("{e}\n{stderr}"),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::ExternalToolFailure {
            message: "report.json is malformed".into(),
            diagnostics: format!("{e}\n{stderr}"),
        })
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut running = self.running.lock().expect("slot counter poisoned");
        while *running >= self.max_concurrent {
            running = self.slot_freed.wait(running).expect("slot counter poisoned");
        }
        *running += 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a ExternalEvaluator);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut running = self.0.running.lock().expect("slot counter poisoned");
        *running -= 1;
        self.0.slot_freed.notify_one();
    }
}

/// Convenience wrapper around [`ExternalEvaluator::run`] for one-off calls.
pub fn run_external_evaluator(cmd: &str, d: &AcceleratorDesign, run_folder: &Path) -> Result<EvaluationReport> {
    ExternalEvaluator::from_template(cmd, 1)?.run(d, run_folder)
}
