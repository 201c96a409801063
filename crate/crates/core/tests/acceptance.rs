//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero on
//! any failure. Runs fully in-process, without network access.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use dse_core::advisor::{build_prompt, AdvisorConfig, ChatMessage, ChatProvider, ExplorationSnapshot, Advisor, REASONING_STEPS};
use dse_core::cost_db::{export_finetune_dataset, CostDb, MetricsSummary, NewDataPoint, PointFilter, Source, Timestamps, Verdict};
use dse_core::design_space::{enumerate_points, validate_point, DeviceProfile, Directives, ParameterPoint, WorkloadSpec};
use dse_core::evaluator::{check_timing, evaluate, evaluate_at_length, CalibrationProfile, Objective};
use dse_core::explorer::{run_exploration, run_with, ExplorationConfig, Explorer, Strategy, Workspace};
use dse_core::retrieval::{CorpusDocument, DocKind, RetrievalIndex};
use dse_core::templates::{builtin_vecmul_template, instantiate, AcceleratorDesign};
use dse_core::Error;

type Outcome = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixture_design() -> AcceleratorDesign {
    instantiate(
        &builtin_vecmul_template(),
        &ParameterPoint::new(1024, 1, 32),
        &WorkloadSpec::vecmul(1023).unwrap(),
    )
    .unwrap()
}

fn within(start: Instant, limit: Duration) -> Outcome {
    let took = start.elapsed();
    ensure!(took < limit, "took {took:?}, limit {limit:?}");
    Ok(())
}

fn calibration() -> Outcome {
    let t = Instant::now();
    let d = fixture_design();
    let dev = DeviceProfile::xc7z020();
    let prof = CalibrationProfile::shipped_vecmul();
    let full = evaluate(&d, &dev, &prof).map_err(|e| e.to_string())?;
    let idle = evaluate_at_length(&d, 0, &dev, &prof).map_err(|e| e.to_string())?;
    for (m, busy, rest) in [("Send", 1030, 7), ("Compute", 1036, 13), ("Recv", 2059, 8), ("HW_MAIN", 3, 3)] {
        ensure!(full.module_cycles[m] == busy, "{m} at L=1023: {} != {busy}", full.module_cycles[m]);
        ensure!(idle.module_cycles[m] == rest, "{m} at L=0: {} != {rest}", idle.module_cycles[m]);
    }
    within(t, Duration::from_secs(1))
}

fn overall_latency() -> Outcome {
    let t = Instant::now();
    let d = fixture_design();
    let dev = DeviceProfile::xc7z020();
    let prof = CalibrationProfile::shipped_vecmul();
    let full = evaluate(&d, &dev, &prof).map_err(|e| e.to_string())?;
    let idle = evaluate_at_length(&d, 0, &dev, &prof).map_err(|e| e.to_string())?;
    ensure!(full.total_cycles == 2060, "total at L=1023 = {}", full.total_cycles);
    ensure!(idle.total_cycles == 0, "total at L=0 = {}", idle.total_cycles);
    ensure!(dev.clock_target_ns == 5.0, "clock {}", dev.clock_target_ns);
    ensure!(full.wall_time_ns == 10300.0, "wall time {}", full.wall_time_ns);
    within(t, Duration::from_secs(1))
}

fn resources() -> Outcome {
    let t = Instant::now();
    let r = evaluate(&fixture_design(), &DeviceProfile::xc7z020(), &CalibrationProfile::shipped_vecmul())
        .map_err(|e| e.to_string())?;
    let got = (r.resources.bram_18k, r.resources.dsp, r.resources.ff, r.resources.lut);
    ensure!(got == (6, 3, 993, 1113), "resources {got:?}");
    let u = r.utilization_pct;
    let util = (u.bram_18k, u.dsp, u.ff, u.lut);
    ensure!(util == (2, 1, 0, 2), "utilization {util:?}");
    within(t, Duration::from_secs(1))
}

fn timing() -> Outcome {
    let prof = CalibrationProfile::shipped_vecmul();
    let dev = DeviceProfile::xc7z020();
    ensure!(prof.estimated_path_ns == 3.95, "path {}", prof.estimated_path_ns);
    ensure!(check_timing(&prof, &dev), "timing_pass false");
    Ok(())
}

fn oracle_equivalence() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let workload = WorkloadSpec::vecmul(1023).unwrap();
    let device = DeviceProfile::xc7z020();
    let directives = Directives::new(vec![1024, 2048, 4096], vec![1, 2, 4, 8], vec![8, 16, 32]).unwrap();
    let points = enumerate_points(&directives);
    ensure!(points.len() <= 36, "space has {} points", points.len());

    // Independent brute force: evaluate every valid point, argmin with tie-break.
    let prof = CalibrationProfile::shipped_vecmul();
    let tpl = builtin_vecmul_template();
    let oracle = points
        .iter()
        .filter(|p| validate_point(p, &workload, &directives).is_valid())
        .map(|p| {
            let r = evaluate(&instantiate(&tpl, p, &workload).unwrap(), &device, &prof).unwrap();
            (r.objective, *p)
        })
        .min()
        .ok_or("no valid point")?;

    let mut cfg = ExplorationConfig::new(workload, device, directives, Strategy::Exhaustive, dir.path());
    cfg.candidates_per_iteration = 5;
    cfg.max_iterations = 100;
    let (_, report) = run_exploration(cfg).map_err(|e| e.to_string())?;
    let best = report.best.ok_or("exploration found no best point")?;
    ensure!(
        (best.objective, best.point) == oracle,
        "explorer {:?} vs oracle {:?}",
        (best.objective, best.point),
        oracle
    );
    within(t, Duration::from_secs(5))
}

fn heuristic_run(dir: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let mut cfg = ExplorationConfig::new(
        WorkloadSpec::vecmul(200).unwrap(),
        DeviceProfile::xc7z020(),
        Directives::new(vec![256, 512, 1024, 2048], vec![1, 2, 4, 8], vec![16, 32]).unwrap(),
        Strategy::Heuristic,
        dir,
    );
    cfg.seed = 42;
    cfg.max_iterations = 6;
    cfg.candidates_per_iteration = 3;
    run_exploration(cfg).map_err(|e| e.to_string())?;
    let ws = Workspace::new(dir);
    let report = std::fs::read(ws.report_path()).map_err(|e| e.to_string())?;
    let db = std::fs::read(ws.db_path()).map_err(|e| e.to_string())?;
    Ok((report, db))
}

fn reproducibility() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (ra, da) = heuristic_run(a.path())?;
    let (rb, db) = heuristic_run(b.path())?;
    ensure!(!da.is_empty(), "database is empty");
    ensure!(ra == rb, "exploration_report.json differs");
    ensure!(da == db, "datapoints.ndjson differs");
    Ok(())
}

/// Always proposes the same out-of-bounds points.
struct OutOfBounds;

const OOB_REPLY: &str = "The deepest buffer should help.\n```candidates\n\
depth=4096 P=1 width=32 action=refine\n\
depth=1024 P=3 width=32 action=rank rank=1\n\
depth=512 P=1 width=32 action=refine\n```\n";
const OOB_COUNT: usize = 3;

impl ChatProvider for OutOfBounds {
    fn chat(&self, _: &[ChatMessage], _: &AdvisorConfig) -> dse_core::Result<String> {
        Ok(OOB_REPLY.to_string())
    }
}

fn negative_logging() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ExplorationConfig::new(
        WorkloadSpec::vecmul(1023).unwrap(),
        DeviceProfile::xc7z020(),
        Directives::new(vec![1024, 2048], vec![1, 2], vec![32]).unwrap(),
        Strategy::Llm,
        dir.path(),
    );
    let advisor = Advisor::with_provider(cfg.advisor.clone(), Box::new(OutOfBounds)).map_err(|e| e.to_string())?;
    let mut explorer = Explorer::with_advisor(cfg, advisor).map_err(|e| e.to_string())?;
    let (state, report) = run_with(&mut explorer).map_err(|e| e.to_string())?;
    ensure!(state.evaluated.is_empty(), "{} evaluations", state.evaluated.len());
    ensure!(report.evaluated_count == 0, "report counts {} evaluations", report.evaluated_count);
    let ws = Workspace::new(dir.path());
    ensure!(ws.run_ids().map_err(|e| e.to_string())?.is_empty(), "run folders were created");
    let db = ws.open_db().map_err(|e| e.to_string())?;
    let expected = OOB_COUNT * report.iterations as usize;
    ensure!(db.len() == expected, "{} records, expected {expected}", db.len());
    ensure!(
        db.points().iter().all(|p| p.verdict == Verdict::Rejected),
        "non-rejected record found"
    );
    ensure!(report.iterations == 3, "stopped after {} iterations, patience is 3", report.iterations);
    Ok(())
}

fn bm25(tf: f64, len: f64, avg: f64, n: f64, df: f64) -> f64 {
    let (k1, b) = (1.2, 0.75);
    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg))
}

fn retrieval() -> Outcome {
    let t = Instant::now();
    let idx = RetrievalIndex::from_documents([
        CorpusDocument::new("d1", DocKind::CodeFragment, "axi stream buffer load"),
        CorpusDocument::new("d2", DocKind::CodeFragment, "multiplier compute unroll"),
        CorpusDocument::new("d3", DocKind::CodeFragment, "axi master burst"),
    ]);
    let hits = idx.retrieve("axi buffer", 3);
    let ids: Vec<_> = hits.iter().map(|h| h.doc_id.as_str()).collect();
    ensure!(ids == ["d1", "d3"], "ranking {ids:?}");
    let avg = 10.0 / 3.0;
    let d1 = bm25(1.0, 4.0, avg, 3.0, 2.0) + bm25(1.0, 4.0, avg, 3.0, 1.0);
    let d3 = bm25(1.0, 3.0, avg, 3.0, 2.0);
    ensure!((hits[0].score - d1).abs() < 1e-9, "d1 score {} vs {d1}", hits[0].score);
    ensure!((hits[1].score - d3).abs() < 1e-9, "d3 score {} vs {d3}", hits[1].score);
    within(t, Duration::from_secs(1))
}

fn snapshot() -> ExplorationSnapshot {
    let directives = Directives::new(vec![256, 512, 1024], vec![1, 2, 4], vec![32]).unwrap();
    ExplorationSnapshot {
        iteration: 2,
        workload: WorkloadSpec::vecmul(200).unwrap(),
        device: DeviceProfile::xc7z020(),
        evaluated: BTreeSet::from([ParameterPoint::new(512, 2, 32)]),
        excluded: BTreeSet::new(),
        best: Some((ParameterPoint::new(512, 2, 32), Objective::Cycles(420))),
        frontier: vec![ParameterPoint::new(512, 2, 32)],
        data_points: Vec::new(),
        directives,
        candidates_per_iteration: 4,
    }
}

fn prompt_contract() -> Outcome {
    let docs = vec![CorpusDocument::new(
        "api/axi.md",
        DocKind::ApiDoc,
        "AXI stream interfaces move one element per cycle between load, compute and store modules.",
    )];
    let cfg = AdvisorConfig {
        token_budget: 512,
        ..AdvisorConfig::default()
    };
    let prompt = build_prompt(&snapshot(), &docs, &cfg).map_err(|e| e.to_string())?;
    ensure!(prompt.token_estimate <= 512, "{} tokens", prompt.token_estimate);
    let text = prompt.render();
    let mut last = 0;
    for marker in REASONING_STEPS {
        let at = text[last..].find(marker).ok_or(format!("marker `{marker}` missing or out of order"))?;
        last += at + marker.len();
    }
    let minimal = build_prompt(&snapshot(), &[], &AdvisorConfig::default())
        .map_err(|e| e.to_string())?
        .token_estimate;
    let tight = AdvisorConfig {
        token_budget: minimal - 1,
        ..AdvisorConfig::default()
    };
    ensure!(
        matches!(build_prompt(&snapshot(), &[], &tight), Err(Error::BudgetExceeded { .. })),
        "no BudgetExceeded at budget {}",
        minimal - 1
    );
    Ok(())
}

fn export_schema() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut db = CostDb::open(dir.path().join("db").join(CostDb::FILE))
        .map_err(|e| e.to_string())?
        .with_timestamps(Timestamps::Logical);
    let design = fixture_design();
    let report = evaluate(&design, &DeviceProfile::xc7z020(), &CalibrationProfile::shipped_vecmul()).unwrap();
    for (i, verdict) in [Verdict::Pending, Verdict::Rejected, Verdict::Failed].into_iter().enumerate() {
        let metrics = if verdict == Verdict::Failed {
            MetricsSummary::unevaluated()
        } else {
            MetricsSummary::from(&report)
        };
        db.record(NewDataPoint {
            design_id: format!("{:064x}", i),
            configuration: design.point,
            workload: design.workload.clone(),
            device: "xc7z020-clg400-1".into(),
            metrics,
            verdict,
            source: Source::Analytical,
            rationale: Some(format!("record {i}")),
        })
        .map_err(|e| e.to_string())?;
    }
    for filter in [
        PointFilter::default(),
        PointFilter {
            verdict: Some(Verdict::Rejected),
            ..Default::default()
        },
    ] {
        let out = dir.path().join("export.jsonl");
        let count = export_finetune_dataset(&db, &filter, &out).map_err(|e| e.to_string())?;
        let queried = db.query_points(&filter, "created_at", None).map_err(|e| e.to_string())?.len();
        ensure!(count == queried, "exported {count}, queried {queried}");
        let text = std::fs::read_to_string(&out).map_err(|e| e.to_string())?;
        ensure!(text.lines().count() == count, "line count differs from count");
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let keys: BTreeSet<_> = v.as_object().ok_or("record is not an object")?.keys().cloned().collect();
            let want: BTreeSet<String> = ["configuration", "workload", "device", "feedback", "verdict", "rationale"]
                .map(String::from)
                .into();
            ensure!(keys == want, "record keys {keys:?}");
            let fb: BTreeSet<_> = v["feedback"].as_object().ok_or("feedback not an object")?.keys().cloned().collect();
            let want_fb: BTreeSet<String> = ["simulation_success", "latency_cycles", "resource_utilization"]
                .map(String::from)
                .into();
            ensure!(fb == want_fb, "feedback keys {fb:?}");
        }
    }
    Ok(())
}

fn offline() -> Outcome {
    // Every criterion above runs in-process: the advisor stub is a local
    // ChatProvider and no socket is opened by this binary.
    Ok(())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("calibration reproduction: per-module cycles and idle values", calibration),
        ("overall latency and wall time", overall_latency),
        ("resource reproduction and floor utilization", resources),
        ("timing check", timing),
        ("oracle equivalence: exhaustive vs brute force", oracle_equivalence),
        ("reproducibility: heuristic runs byte-identical", reproducibility),
        ("negative-point logging with out-of-bounds advisor", negative_logging),
        ("retrieval ranking and scores", retrieval),
        ("prompt contract: markers, budget, BudgetExceeded", prompt_contract),
        ("export schema and count", export_schema),
        ("offline: no network or secondary component needed", offline),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(())) => println!("PASS  {name}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
