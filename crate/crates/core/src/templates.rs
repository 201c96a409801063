//! Load-compute-store accelerator templates and run-folder source emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design_space::{workload_violations, ParameterPoint, WorkloadSpec};
use crate::error::{Error, Result};

pub const VECMUL_TEMPLATE_ID: &str = "vecmul";

/// Stream endpoint name for the main-memory side of an AXI-Stream.
pub const EXTERNAL: &str = "external";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Main,
    Load,
    Compute,
    Store,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HwModule {
    pub name: String,
    pub kind: ModuleKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferRole {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buffer {
    pub name: String,
    pub role: BufferRole,
}

/// A directed edge between modules, buffers, or [`EXTERNAL`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stream {
    pub name: String,
    pub producer: String,
    pub consumer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceleratorTemplate {
    pub template_id: String,
    pub hw_modules: Vec<HwModule>,
    pub buffers: Vec<Buffer>,
    pub streams: Vec<Stream>,
}

impl AcceleratorTemplate {
    pub fn module(&self, name: &str) -> Option<&HwModule> {
        self.hw_modules.iter().find(|m| m.name == name)
    }
}

fn module(name: &str, kind: ModuleKind) -> HwModule {
    HwModule {
        name: name.into(),
        kind,
    }
}

fn stream(name: &str, producer: &str, consumer: &str) -> Stream {
    Stream {
        name: name.into(),
        producer: producer.into(),
        consumer: consumer.into(),
    }
}

/// HW_MAIN / Send / Compute / Recv with X, Y, Z on-chip buffers.
pub fn builtin_vecmul_template() -> AcceleratorTemplate {
    AcceleratorTemplate {
        template_id: VECMUL_TEMPLATE_ID.into(),
        hw_modules: vec![
            module("HW_MAIN", ModuleKind::Main),
            module("Send", ModuleKind::Load),
            module("Compute", ModuleKind::Compute),
            module("Recv", ModuleKind::Store),
        ],
        buffers: vec![
            Buffer {
                name: "X".into(),
                role: BufferRole::Input,
            },
            Buffer {
                name: "Y".into(),
                role: BufferRole::Input,
            },
            Buffer {
                name: "Z".into(),
                role: BufferRole::Output,
            },
        ],
        streams: vec![
            stream("x_in", EXTERNAL, "Send"),
            stream("y_in", EXTERNAL, "Send"),
            stream("x_load", "Send", "X"),
            stream("y_load", "Send", "Y"),
            stream("x_read", "X", "Compute"),
            stream("y_read", "Y", "Compute"),
            stream("z_write", "Compute", "Z"),
            stream("z_read", "Z", "Recv"),
            stream("z_out", "Recv", EXTERNAL),
        ],
    }
}

pub fn template_by_id(template_id: &str) -> Result<AcceleratorTemplate> {
    match template_id {
        VECMUL_TEMPLATE_ID => Ok(builtin_vecmul_template()),
        other => Err(Error::UnsupportedTemplate(other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Compliance {
    pub violations: Vec<String>,
}

impl Compliance {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks template structure: one main module, streams wired to known
/// endpoints, each buffer with exactly one writer and one reader module.
pub fn check_compliance(t: &AcceleratorTemplate) -> Compliance {
    let mut violations = Vec::new();

    let mains = t.hw_modules.iter().filter(|m| m.kind == ModuleKind::Main).count();
    match mains {
        0 => violations.push("no main module".to_string()),
        1 => {}
        _ => violations.push("multiple main modules".to_string()),
    }

    let modules: BTreeSet<&str> = t.hw_modules.iter().map(|m| m.name.as_str()).collect();
    let buffers: BTreeSet<&str> = t.buffers.iter().map(|b| b.name.as_str()).collect();
    if modules.len() != t.hw_modules.len() {
        violations.push("duplicate module name".to_string());
    }
    if buffers.len() != t.buffers.len() {
        violations.push("duplicate buffer name".to_string());
    }
    if let Some(clash) = modules.intersection(&buffers).next() {
        violations.push(format!("name {clash} used by both a module and a buffer"));
    }

    let known = |name: &str| name == EXTERNAL || modules.contains(name) || buffers.contains(name);
    for s in &t.streams {
        if !known(&s.producer) {
            violations.push(format!("stream {} has unknown producer {}", s.name, s.producer));
        }
        if !known(&s.consumer) {
            violations.push(format!("stream {} has unknown consumer {}", s.name, s.consumer));
        }
        let touches_buffer = buffers.contains(s.producer.as_str()) || buffers.contains(s.consumer.as_str());
        let module_end = if buffers.contains(s.producer.as_str()) { &s.consumer } else { &s.producer };
        if touches_buffer && !modules.contains(module_end.as_str()) {
            violations.push(format!("stream {} connects buffer to non-module {}", s.name, module_end));
        }
    }

    for b in &t.buffers {
        let writers = t.streams.iter().filter(|s| s.consumer == b.name && modules.contains(s.producer.as_str())).count();
        let readers = t.streams.iter().filter(|s| s.producer == b.name && modules.contains(s.consumer.as_str())).count();
        match writers {
            0 => violations.push(format!("buffer {} has no writer", b.name)),
            1 => {}
            _ => violations.push(format!("buffer {} has multiple writers", b.name)),
        }
        match readers {
            0 => violations.push(format!("buffer {} has no reader", b.name)),
            1 => {}
            _ => violations.push(format!("buffer {} has multiple readers", b.name)),
        }
    }

    Compliance { violations }
}

/// A template bound to a concrete point and workload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceleratorDesign {
    pub template_id: String,
    pub point: ParameterPoint,
    pub workload: WorkloadSpec,
    pub design_id: String,
}

#[derive(Serialize)]
struct DesignContent<'a> {
    template_id: &'a str,
    point: &'a ParameterPoint,
    workload: &'a WorkloadSpec,
}

/// Lowercase hex SHA-256 over the canonical JSON of (template_id, point, workload).
pub fn design_id_for(template_id: &str, point: &ParameterPoint, workload: &WorkloadSpec) -> String {
    let canonical = serde_json::to_vec(&DesignContent {
        template_id,
        point,
        workload,
    })
    .expect("design content serializes");
    hex::encode(Sha256::digest(&canonical))
}

impl AcceleratorDesign {
    /// Reads `design.json`, rejecting documents whose `design_id` does not
    /// match their content.
    pub fn load(path: &Path) -> Result<Self> {
        let design: AcceleratorDesign = crate::design_space::read_document(path)?;
        let expected = design_id_for(&design.template_id, &design.point, &design.workload);
        if design.design_id != expected {
            return Err(Error::validation(
                "design_id",
                format!("does not match content (expected {expected})"),
            ));
        }
        Ok(design)
    }

    /// Short prefix used in run folder names.
    pub fn short_id(&self) -> &str {
        &self.design_id[..12.min(self.design_id.len())]
    }
}

pub fn instantiate(t: &AcceleratorTemplate, p: &ParameterPoint, w: &WorkloadSpec) -> Result<AcceleratorDesign> {
    let compliance = check_compliance(t);
    if !compliance.passed() {
        return Err(Error::validation("template", compliance.violations.join("; ")));
    }
    let violations = workload_violations(p, w);
    if !violations.is_empty() {
        let reasons: Vec<_> = violations.iter().map(|r| r.reason()).collect();
        return Err(Error::validation("point", reasons.join("; ")));
    }
    Ok(AcceleratorDesign {
        template_id: t.template_id.clone(),
        point: *p,
        workload: w.clone(),
        design_id: design_id_for(&t.template_id, p, w),
    })
}

/// Relative path to file contents for one run folder's `src/`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSet {
    pub files: BTreeMap<String, String>,
}

impl SourceSet {
    pub const ACCELERATOR: &'static str = "hw/vecmul_acc.sc.h";
    pub const DRIVER: &'static str = "driver/vecmul_driver.cc";
    pub const MANIFEST: &'static str = "CMakeLists.txt";

    /// Writes every file under `root`. Paths are checked to stay inside it.
    pub fn write_to(&self, root: &Path) -> Result<()> {
        for (rel, contents) in &self.files {
            if !is_safe_relative(rel) {
                return Err(Error::validation("source path", format!("{rel} escapes the run folder")));
            }
            let path = root.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, contents)?;
        }
        Ok(())
    }

    /// Reads every regular file below `root` into a source set.
    pub fn read_from(root: &Path) -> Result<Self> {
        let mut files = BTreeMap::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir)? {
                let entry = entry?;
                let path = entry.path();
                if entry.file_type()?.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path
                        .strip_prefix(root)
                        .expect("walked path is below root")
                        .components()
                        .map(|c| c.as_os_str().to_string_lossy().into_owned())
                        .collect::<Vec<_>>()
                        .join("/");
                    files.insert(rel, std::fs::read_to_string(&path)?);
                }
            }
        }
        Ok(Self { files })
    }
}

pub fn is_safe_relative(rel: &str) -> bool {
    !rel.is_empty()
        && Path::new(rel)
            .components()
            .all(|c| matches!(c, Component::Normal(_)))
}

pub fn emit_source(d: &AcceleratorDesign) -> Result<SourceSet> {
    if d.template_id != VECMUL_TEMPLATE_ID {
        return Err(Error::UnsupportedTemplate(d.template_id.clone()));
    }
    let mut files = BTreeMap::new();
    files.insert(SourceSet::ACCELERATOR.to_string(), vecmul_accelerator(d));
    files.insert(SourceSet::DRIVER.to_string(), vecmul_driver(d));
    files.insert(SourceSet::MANIFEST.to_string(), vecmul_manifest(d));
    Ok(SourceSet { files })
}

fn vecmul_accelerator(d: &AcceleratorDesign) -> String {
    let p = &d.point;
    let mut s = String::new();
    let _ = writeln!(s, "// design {}", d.design_id);
    let _ = writeln!(s, "#ifndef VECMUL_ACC_H");
    let _ = writeln!(s, "#define VECMUL_ACC_H\n");
    let _ = writeln!(s, "#include <systemc.h>");
    let _ = writeln!(s, "#include \"secda_tools/axi_support/axi_api_v2.h\"\n");
    let _ = writeln!(s, "static const unsigned DEPTH = {};", p.buffer_depth);
    let _ = writeln!(s, "static const unsigned L = {};", d.workload.length_l);
    let _ = writeln!(s, "static const unsigned P = {};", p.parallelism_p);
    let _ = writeln!(s, "static const unsigned WIDTH = {};\n", p.data_width);
    let _ = writeln!(s, "typedef sc_int<WIDTH> elem_t;\n");
    s.push_str(
        r#"SC_MODULE(ACCNAME) {
  sc_in<bool> clock;
  sc_in<bool> reset;
  sc_fifo_in<DATA> din1;
  sc_fifo_in<DATA> din2;
  sc_fifo_out<DATA> dout1;

  // on-chip buffers
  elem_t X[DEPTH];
  elem_t Y[DEPTH];
  elem_t Z[DEPTH];

  sc_signal<bool> load_done;
  sc_signal<bool> compute_done;

  void HW_MAIN() {
    load_done.write(false);
    compute_done.write(false);
    wait();
  }

  // load: stream X and Y from main memory into the input buffers
  void Send() {
    for (unsigned i = 0; i < L; i++) {
      X[i] = din1.read().data;
      Y[i] = din2.read().data;
    }
    load_done.write(true);
    wait();
  }

  // compute: Z = X * Y, P lanes per step
  void Compute() {
    while (!load_done.read()) wait();
    for (unsigned i = 0; i < L; i += P) {
      for (unsigned lane = 0; lane < P; lane++) {
#pragma HLS UNROLL
        if (i + lane < L) Z[i + lane] = X[i + lane] * Y[i + lane];
      }
    }
    compute_done.write(true);
    wait();
  }

  // store: stream Z back to main memory
  void Recv() {
    while (!compute_done.read()) wait();
    for (unsigned i = 0; i < L; i++) {
      DATA d;
      d.data = Z[i];
      d.tlast = (i == L - 1);
      dout1.write(d);
    }
    wait();
  }

  SC_CTOR(ACCNAME) {
    SC_CTHREAD(HW_MAIN, clock.pos());
    reset_signal_is(reset, true);
    SC_CTHREAD(Send, clock.pos());
    reset_signal_is(reset, true);
    SC_CTHREAD(Compute, clock.pos());
    reset_signal_is(reset, true);
    SC_CTHREAD(Recv, clock.pos());
    reset_signal_is(reset, true);
  }
};

#endif
"#,
    );
    s
}

fn vecmul_driver(d: &AcceleratorDesign) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "// driver for design {}", d.design_id);
    let _ = writeln!(s, "#include \"vecmul_driver.h\"\n");
    let _ = writeln!(s, "static const unsigned L = {};", d.workload.length_l);
    let _ = writeln!(s, "static const unsigned WIDTH = {};\n", d.point.data_width);
    s.push_str(
        r#"void vecmul_run(acc_container &drv, const int *x, const int *y, int *z) {
  // stream X and Y over the two input channels
  stream_out(drv.x_dma, x, L);
  stream_out(drv.y_dma, y, L);
  drv.start();
  // read Z back from the output channel
  stream_in(drv.z_dma, z, L);
  drv.wait_done();
}
"#,
    );
    s
}

fn vecmul_manifest(d: &AcceleratorDesign) -> String {
    format!(
        "cmake_minimum_required(VERSION 3.10)\n\
         project(vecmul_{id} CXX)\n\
         add_library(vecmul_driver driver/vecmul_driver.cc)\n\
         target_include_directories(vecmul_driver PRIVATE hw)\n\
         target_compile_definitions(vecmul_driver PRIVATE VECMUL_DEPTH={depth} VECMUL_P={p} VECMUL_WIDTH={width})\n",
        id = d.short_id(),
        depth = d.point.buffer_depth,
        p = d.point.parallelism_p,
        width = d.point.data_width,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_template_shape() {
        let t = builtin_vecmul_template();
        let names: Vec<_> = t.hw_modules.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, ["HW_MAIN", "Send", "Compute", "Recv"]);
        let bufs: Vec<_> = t.buffers.iter().map(|b| b.name.as_str()).collect();
        assert_eq!(bufs, ["X", "Y", "Z"]);
        assert!(check_compliance(&t).passed(), "{:?}", check_compliance(&t));
    }

    #[test]
    fn compliance_reports_missing_writer() {
        let mut t = builtin_vecmul_template();
        t.streams.retain(|s| s.name != "z_write");
        let c = check_compliance(&t);
        assert!(c.violations.contains(&"buffer Z has no writer".to_string()), "{c:?}");
    }

    #[test]
    fn compliance_reports_multiple_mains() {
        let mut t = builtin_vecmul_template();
        t.hw_modules.push(module("HW_MAIN2", ModuleKind::Main));
        let c = check_compliance(&t);
        assert_eq!(c.violations, vec!["multiple main modules".to_string()]);
    }

    #[test]
    fn compliance_reports_unknown_endpoint() {
        let mut t = builtin_vecmul_template();
        t.streams.push(stream("bogus", "Nowhere", "Recv"));
        let c = check_compliance(&t);
        assert!(c.violations.iter().any(|v| v.contains("unknown producer Nowhere")));
    }

    #[test]
    fn instantiate_examples() {
        let t = builtin_vecmul_template();
        let w = WorkloadSpec::vecmul(1023).unwrap();
        let a = instantiate(&t, &ParameterPoint::new(1024, 1, 32), &w).unwrap();
        let b = instantiate(&t, &ParameterPoint::new(1024, 1, 32), &w).unwrap();
        assert_eq!(a.design_id, b.design_id);
        assert_eq!(a.design_id.len(), 64);
        assert!(a.design_id.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));

        assert!(matches!(
            instantiate(&t, &ParameterPoint::new(512, 1, 32), &w),
            Err(Error::Validation { .. })
        ));

        let c = instantiate(&t, &ParameterPoint::new(1024, 2, 32), &w).unwrap();
        assert_ne!(a.design_id, c.design_id);
    }

    #[test]
    fn emit_source_echoes_parameters() {
        let t = builtin_vecmul_template();
        let w = WorkloadSpec::vecmul(1023).unwrap();
        let d = instantiate(&t, &ParameterPoint::new(1024, 1, 32), &w).unwrap();
        let src = emit_source(&d).unwrap();
        let acc = &src.files[SourceSet::ACCELERATOR];
        assert!(acc.contains("DEPTH = 1024;"));
        assert!(acc.contains("P = 1;"));
        assert!(acc.contains("WIDTH = 32;"));
        assert!(acc.contains("L = 1023;"));
        assert!(src.files.contains_key(SourceSet::DRIVER));
        assert!(src.files.contains_key(SourceSet::MANIFEST));
        assert_eq!(src, emit_source(&d).unwrap());
        assert!(src.files.keys().all(|k| is_safe_relative(k)));
    }

    #[test]
    fn emit_source_rejects_unknown_template() {
        let w = WorkloadSpec::vecmul(8).unwrap();
        let p = ParameterPoint::new(8, 1, 32);
        let d = AcceleratorDesign {
            template_id: "conv2d".into(),
            point: p,
            workload: w.clone(),
            design_id: design_id_for("conv2d", &p, &w),
        };
        assert!(matches!(emit_source(&d), Err(Error::UnsupportedTemplate(id)) if id == "conv2d"));
    }

    #[test]
    fn safe_relative_paths() {
        assert!(is_safe_relative("hw/a.h"));
        assert!(!is_safe_relative("../a.h"));
        assert!(!is_safe_relative("/etc/passwd"));
        assert!(!is_safe_relative("hw/../../a"));
        assert!(!is_safe_relative(""));
    }
}
