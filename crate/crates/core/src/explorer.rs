//! The iterative loop: propose → instantiate → evaluate → record →
//! summarize → advise, with diversity maintenance, human verdicts and
//! per-candidate run folders.
//!
//! Workspace layout:
//!
//! ```text
//! workspace/
//!   db/datapoints.ndjson
//!   index.json
//!   runs/<run_id>/{design.json, src/, report.json, summary.json, prompt.txt?, reply.txt?}
//!   exploration_report.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advisor::{heuristic_advise, Action, Advisor, AdvisorConfig, ExplorationSnapshot, Transcript};
use crate::cost_db::{summarize_run, CostDb, HardwareDataPoint, MetricsSummary, NewDataPoint, ReviewState, Source, Timestamps, Verdict};
use crate::design_space::{enumerate_points, validate_point, DeviceProfile, Directives, ParameterPoint, WorkloadSpec};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, CalibrationProfile, EvaluationReport, ExternalEvaluator, Objective};
use crate::retrieval::load_or_build_index;
use crate::templates::{check_compliance, design_id_for, emit_source, instantiate, template_by_id, AcceleratorTemplate, VECMUL_TEMPLATE_ID};

/// Improvement-free iterations after which a non-exhaustive run stops.
pub const PATIENCE: u32 = 3;

/// Paths inside an exploration workspace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub const REPORT: &'static str = "exploration_report.json";
    pub const INDEX: &'static str = "index.json";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Creates the directory skeleton and an empty database.
    pub fn init(root: impl Into<PathBuf>) -> Result<Self> {
        let ws = Self::new(root);
        for dir in [ws.db_dir(), ws.runs_dir()] {
            fs::create_dir_all(&dir).map_err(|e| Error::storage(dir.display(), e))?;
        }
        let db_file = ws.db_path();
        if !db_file.exists() {
            fs::write(&db_file, "").map_err(|e| Error::storage(db_file.display(), e))?;
        }
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn db_dir(&self) -> PathBuf {
        self.root.join("db")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join(Self::INDEX)
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join(Self::REPORT)
    }

    pub fn db_path(&self) -> PathBuf {
        self.db_dir().join(CostDb::FILE)
    }

    pub fn open_db(&self) -> Result<CostDb> {
        CostDb::open(self.db_path())
    }

    /// Run folder names in sorted order.
    pub fn run_ids(&self) -> Result<Vec<String>> {
        let dir = self.runs_dir();
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::storage(dir.display(), e))? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Resolves a run id to its folder, refusing anything but a plain name.
    pub fn run_folder(&self, run_id: &str) -> Result<PathBuf> {
        let plain = !run_id.is_empty()
            && run_id != "."
            && run_id != ".."
            && run_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        let path = self.runs_dir().join(run_id);
        if plain && path.is_dir() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact(format!("runs/{run_id}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Exhaustive,
    Heuristic,
    Llm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    #[default]
    MinTotalCycles,
}

fn default_template() -> String {
    VECMUL_TEMPLATE_ID.to_string()
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationConfig {
    pub workload: WorkloadSpec,
    pub device: DeviceProfile,
    pub directives: Directives,
    pub strategy: Strategy,
    pub max_iterations: u64,
    pub candidates_per_iteration: usize,
    pub diversity_k: usize,
    pub seed: u64,
    #[serde(default)]
    pub objective: ObjectiveKind,
    #[serde(default)]
    pub workspace: PathBuf,
    #[serde(default = "default_template")]
    pub template_id: String,
    /// Defaults to the shipped profile of the template.
    #[serde(default)]
    pub profile: Option<CalibrationProfile>,
    #[serde(default)]
    pub advisor: AdvisorConfig,
    /// Corpus directory for retrieval-grounded prompts (llm strategy).
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// External synthesis/simulation command; the analytical model otherwise.
    #[serde(default)]
    pub external_command: Option<String>,
    #[serde(default = "default_concurrency")]
    pub max_concurrent: usize,
}

impl ExplorationConfig {
    pub fn new(
        workload: WorkloadSpec,
        device: DeviceProfile,
        directives: Directives,
        strategy: Strategy,
        workspace: impl Into<PathBuf>,
    ) -> Self {
        Self {
            workload,
            device,
            directives,
            strategy,
            max_iterations: 10,
            candidates_per_iteration: 4,
            diversity_k: 1,
            seed: 0,
            objective: ObjectiveKind::MinTotalCycles,
            workspace: workspace.into(),
            template_id: default_template(),
            profile: None,
            advisor: AdvisorConfig::default(),
            corpus: None,
            external_command: None,
            max_concurrent: default_concurrency(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::validation("max_iterations", "must be >= 1"));
        }
        if self.candidates_per_iteration < 1 {
            return Err(Error::validation("candidates_per_iteration", "must be >= 1"));
        }
        if self.max_concurrent < 1 {
            return Err(Error::validation("max_concurrent", "must be >= 1"));
        }
        self.advisor.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrontierEntry {
    pub objective: Objective,
    pub point: ParameterPoint,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationState {
    pub iteration: u64,
    pub evaluated: BTreeSet<String>,
    /// Feasible, non-vetoed points, objective ascending.
    pub frontier: Vec<FrontierEntry>,
    pub best: Option<FrontierEntry>,
    pub diversity_set: Vec<ParameterPoint>,
    pub pending_verdicts: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    SpaceExhausted,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatedCandidate {
    pub run_id: String,
    pub point_id: String,
    pub point: ParameterPoint,
    pub objective: Objective,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedProposal {
    pub point_id: String,
    pub point: ParameterPoint,
    pub reasons: Vec<String>,
}

/// What one call to [`Explorer::step`] did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: u64,
    pub proposed: Vec<ParameterPoint>,
    pub skipped_duplicates: Vec<ParameterPoint>,
    pub evaluated: Vec<EvaluatedCandidate>,
    pub rejected: Vec<RejectedProposal>,
    pub advisor_fallback: bool,
    pub best: Option<FrontierEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BestPoint {
    pub point: ParameterPoint,
    pub objective: Objective,
    pub design_id: String,
    pub point_id: String,
}

/// Contents of `exploration_report.json`; free of paths and wall-clock data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub strategy: Strategy,
    pub seed: u64,
    pub workload: String,
    pub device: String,
    pub iterations: u64,
    pub stop_reason: Option<StopReason>,
    pub best: Option<BestPoint>,
    pub evaluated_count: usize,
    pub rejected_count: usize,
    pub failed_count: usize,
    /// Iterations in which the llm strategy fell back to the heuristic.
    pub advisor_fallbacks: Vec<u64>,
    pub trace: Vec<IterationTrace>,
}

#[derive(Debug, Clone)]
struct EvalEntry {
    point: ParameterPoint,
    objective: Objective,
    point_id: String,
    vetoed: bool,
}

/// Normalized L1 distance over directive-set index positions.
pub fn point_distance(a: &ParameterPoint, b: &ParameterPoint, d: &Directives) -> f64 {
    let (Some(ia), Some(ib)) = (d.indices_of(a), d.indices_of(b)) else {
        return 0.0;
    };
    let sizes = d.set_sizes();
    (0..3)
        .map(|k| ia[k].abs_diff(ib[k]) as f64 / sizes[k] as f64)
        .sum()
}

/// Top-`top` entries by objective, then `diversity_k` more evaluated points
/// chosen greedily to maximize the minimum distance to those already picked.
/// `entries` must be sorted ascending; earlier entries win distance ties.
pub fn select_frontier(entries: &[FrontierEntry], d: &Directives, top: usize, diversity_k: usize) -> Vec<ParameterPoint> {
    let mut selected: Vec<ParameterPoint> = entries.iter().take(top).map(|e| e.point).collect();
    let mut remaining: Vec<ParameterPoint> = entries.iter().skip(top).map(|e| e.point).collect();
    for _ in 0..diversity_k {
        if remaining.is_empty() {
            break;
        }
        let score = |p: &ParameterPoint| {
            selected
                .iter()
                .map(|s| point_distance(p, s, d))
                .fold(f64::INFINITY, f64::min)
        };
        let mut best_i = 0;
        let mut best_score = score(&remaining[0]);
        for (i, p) in remaining.iter().enumerate().skip(1) {
            let s = score(p);
            if s > best_score {
                best_i = i;
                best_score = s;
            }
        }
        selected.push(remaining.remove(best_i));
    }
    selected
}

struct PlannedRun {
    point: ParameterPoint,
    design_id: String,
    run_id: String,
    folder: PathBuf,
}

/// Owns the exploration state; the database is passed in so a service can
/// share one writer between explorations and verdict submissions.
pub struct Explorer {
    cfg: ExplorationConfig,
    ws: Workspace,
    template: AcceleratorTemplate,
    profile: CalibrationProfile,
    advisor: Option<Advisor>,
    external: Option<ExternalEvaluator>,
    state: ExplorationState,
    entries: BTreeMap<String, EvalEntry>,
    excluded: BTreeSet<ParameterPoint>,
    run_points: Vec<String>,
    trace: Vec<IterationTrace>,
    fallbacks: Vec<u64>,
    stale: u32,
    stop: Option<StopReason>,
}

impl std::fmt::Debug for Explorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Explorer")
            .field("strategy", &self.cfg.strategy)
            .field("state", &self.state)
            .field("stop", &self.stop)
            .finish()
    }
}

impl Explorer {
    pub fn new(cfg: ExplorationConfig) -> Result<Self> {
        let advisor = match cfg.strategy {
            Strategy::Llm => {
                let mut advisor = Advisor::new(cfg.advisor.clone())?;
                if let Some(corpus) = &cfg.corpus {
                    let idx = load_or_build_index(corpus, &Workspace::new(&cfg.workspace).index_path())?;
                    advisor = advisor.with_index(idx);
                }
                Some(advisor)
            }
            _ => None,
        };
        Self::build(cfg, advisor)
    }

    /// Uses a caller-supplied advisor (for example one with a custom provider).
    pub fn with_advisor(cfg: ExplorationConfig, advisor: Advisor) -> Result<Self> {
        Self::build(cfg, Some(advisor))
    }

    fn build(cfg: ExplorationConfig, advisor: Option<Advisor>) -> Result<Self> {
        cfg.validate()?;
        let template = template_by_id(&cfg.template_id)?;
        let compliance = check_compliance(&template);
        if !compliance.passed() {
            return Err(Error::validation("template_id", compliance.violations.join("; ")));
        }
        let profile = match &cfg.profile {
            Some(p) => p.clone(),
            None => CalibrationProfile::shipped_vecmul(),
        };
        if profile.template_id != template.template_id {
            return Err(Error::validation("profile", "profile does not match template"));
        }
        let external = match &cfg.external_command {
            Some(cmd) => Some(ExternalEvaluator::from_template(cmd, cfg.max_concurrent)?),
            None => None,
        };
        let ws = Workspace::init(&cfg.workspace)?;
        Ok(Self {
            cfg,
            ws,
            template,
            profile,
            advisor,
            external,
            state: ExplorationState::default(),
            entries: BTreeMap::new(),
            excluded: BTreeSet::new(),
            run_points: Vec::new(),
            trace: Vec::new(),
            fallbacks: Vec::new(),
            stale: 0,
            stop: None,
        })
    }

    pub fn config(&self) -> &ExplorationConfig {
        &self.cfg
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn state(&self) -> &ExplorationState {
        &self.state
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn is_finished(&self) -> bool {
        self.stop.is_some()
    }

    /// Timestamp mode that keeps the database reproducible for this strategy.
    pub fn timestamps(&self) -> Timestamps {
        match self.cfg.strategy {
            Strategy::Llm => Timestamps::Wall,
            Strategy::Exhaustive | Strategy::Heuristic => Timestamps::Logical,
        }
    }

    fn snapshot(&self, db: &CostDb) -> ExplorationSnapshot {
        let ids: BTreeSet<&str> = self.run_points.iter().map(String::as_str).collect();
        let data_points: Vec<HardwareDataPoint> = db
            .points()
            .iter()
            .filter(|p| ids.contains(p.point_id.as_str()))
            .cloned()
            .collect();
        ExplorationSnapshot {
            iteration: self.state.iteration,
            workload: self.cfg.workload.clone(),
            device: self.cfg.device.clone(),
            directives: self.cfg.directives.clone(),
            data_points,
            evaluated: self.entries.values().map(|e| e.point).collect(),
            excluded: self.excluded.clone(),
            best: self.state.best.map(|b| (b.point, b.objective)),
            frontier: self.state.diversity_set.clone(),
            candidates_per_iteration: self.cfg.candidates_per_iteration,
        }
    }

    fn design_id(&self, p: &ParameterPoint) -> String {
        design_id_for(&self.template.template_id, p, &self.cfg.workload)
    }

    fn log_rejection(&mut self, db: &mut CostDb, point: ParameterPoint, reasons: Vec<String>) -> Result<RejectedProposal> {
        let point_id = db.record(NewDataPoint {
            design_id: self.design_id(&point),
            configuration: point,
            workload: self.cfg.workload.clone(),
            device: self.cfg.device.name.clone(),
            metrics: MetricsSummary::unevaluated(),
            verdict: Verdict::Rejected,
            source: Source::Analytical,
            rationale: Some(reasons.join("; ")),
        })?;
        self.run_points.push(point_id.clone());
        self.excluded.insert(point);
        Ok(RejectedProposal {
            point_id,
            point,
            reasons,
        })
    }

    /// Candidate points for this iteration, with any advisor rejections.
    #[allow(clippy::type_complexity)]
    fn propose(
        &mut self,
        db: &CostDb,
    ) -> Result<(Vec<ParameterPoint>, Vec<(ParameterPoint, Vec<String>)>, Option<Transcript>, bool)> {
        let limit = self.cfg.candidates_per_iteration;
        match self.cfg.strategy {
            Strategy::Exhaustive => {
                let points: Vec<_> = enumerate_points(&self.cfg.directives)
                    .into_iter()
                    .filter(|p| {
                        validate_point(p, &self.cfg.workload, &self.cfg.directives).is_valid()
                            && !self.excluded.contains(p)
                            && !self.state.evaluated.contains(&self.design_id(p))
                    })
                    .take(limit)
                    .collect();
                if points.is_empty() {
                    return Err(Error::SpaceExhausted);
                }
                Ok((points, Vec::new(), None, false))
            }
            Strategy::Heuristic => {
                let proposal = heuristic_advise(&self.snapshot(db), self.cfg.seed)?;
                Ok((proposal.candidates.iter().map(|c| c.point).collect(), Vec::new(), None, false))
            }
            Strategy::Llm => {
                let snapshot = self.snapshot(db);
                let advisor = self.advisor.as_ref().expect("llm strategy has an advisor");
                let advice = match advisor.advise(&snapshot) {
                    Ok(a) => a,
                    Err(Error::ProviderUnreachable(why)) => {
                        log::warn!("advisor unreachable ({why}); heuristic fallback for iteration {}", snapshot.iteration);
                        let proposal = heuristic_advise(&snapshot, self.cfg.seed)?;
                        return Ok((proposal.candidates.iter().map(|c| c.point).collect(), Vec::new(), None, true));
                    }
                    Err(Error::ProposalUnparseable) => {
                        log::warn!("advisor reply unusable after retry; iteration {} proposes nothing", snapshot.iteration);
                        return Ok((Vec::new(), Vec::new(), None, false));
                    }
                    Err(e) => return Err(e),
                };
                let mut rejected: Vec<_> = advice
                    .outcome
                    .rejected
                    .iter()
                    .map(|r| (r.point, r.reasons.clone()))
                    .collect();
                let mut points = Vec::new();
                for c in advice.outcome.accepted.iter().flat_map(|p| &p.candidates) {
                    if c.action == Action::Reject {
                        rejected.push((c.point, vec!["rejected by advisor".to_string()]));
                    } else if points.len() < limit {
                        points.push(c.point);
                    }
                }
                Ok((points, rejected, advice.transcript, false))
            }
        }
    }

    fn allocate_folder(&self, iteration: u64, design_id: &str) -> (String, PathBuf) {
        let base = format!("{iteration:04}-{}", &design_id[..12]);
        let mut run_id = base.clone();
        let mut n = 1;
        while self.ws.runs_dir().join(&run_id).exists() {
            run_id = format!("{base}-{n}");
            n += 1;
        }
        let folder = self.ws.runs_dir().join(&run_id);
        (run_id, folder)
    }

    fn execute(&self, run: &PlannedRun, transcript: Option<&Transcript>) -> Result<EvaluationReport> {
        fs::create_dir_all(&run.folder).map_err(|e| Error::storage(run.folder.display(), e))?;
        if let Some(t) = transcript {
            write_file(&run.folder.join("prompt.txt"), &t.prompt)?;
            write_file(&run.folder.join("reply.txt"), &t.reply)?;
        }
        let design = instantiate(&self.template, &run.point, &self.cfg.workload)?;
        write_json(&run.folder.join("design.json"), &design)?;
        emit_source(&design)?.write_to(&run.folder.join("src"))?;
        let report = match &self.external {
            Some(ext) => ext.run(&design, &run.folder)?,
            None => {
                let report = evaluate(&design, &self.cfg.device, &self.profile)?;
                write_json(&run.folder.join("report.json"), &report)?;
                report
            }
        };
        let summary = summarize_run(&run.folder)?;
        write_json(&run.folder.join("summary.json"), &summary)?;
        Ok(report)
    }

    /// One iteration. Returns `SpaceExhausted` (and marks the run finished)
    /// when the strategy has nothing new to propose.
    pub fn step(&mut self, db: &mut CostDb) -> Result<&IterationTrace> {
        if let Some(reason) = self.stop {
            return Err(match reason {
                StopReason::SpaceExhausted => Error::SpaceExhausted,
                _ => Error::validation("exploration", format!("already finished ({reason:?})")),
            });
        }
        let iteration = self.state.iteration;
        let (proposed, advisor_rejections, transcript, fallback) = match self.propose(db) {
            Ok(p) => p,
            Err(Error::SpaceExhausted) => {
                self.stop = Some(StopReason::SpaceExhausted);
                return Err(Error::SpaceExhausted);
            }
            Err(e) => return Err(e),
        };
        if fallback {
            self.fallbacks.push(iteration);
        }

        let mut rejected = Vec::new();
        for (point, reasons) in advisor_rejections {
            rejected.push(self.log_rejection(db, point, reasons)?);
        }

        let mut skipped = Vec::new();
        let mut plans = Vec::new();
        let mut batch = BTreeSet::new();
        for point in &proposed {
            let design_id = self.design_id(point);
            if self.state.evaluated.contains(&design_id) || !batch.insert(design_id.clone()) {
                skipped.push(*point);
                continue;
            }
            let (run_id, folder) = self.allocate_folder(iteration, &design_id);
            fs::create_dir_all(&folder).map_err(|e| Error::storage(folder.display(), e))?;
            plans.push(PlannedRun {
                point: *point,
                design_id,
                run_id,
                folder,
            });
        }

        let results: Vec<Result<EvaluationReport>> =
            plans.par_iter().map(|run| self.execute(run, transcript.as_ref())).collect();

        let mut evaluated = Vec::new();
        for (run, result) in plans.into_iter().zip(results) {
            let (metrics, verdict, rationale, objective) = match &result {
                Ok(r) if r.feasible => (MetricsSummary::from(r), Verdict::Pending, None, r.objective),
                Ok(r) => (
                    MetricsSummary::from(r),
                    Verdict::Rejected,
                    Some("infeasible: exceeds device resources or misses timing".to_string()),
                    Objective::Infeasible,
                ),
                Err(e) => {
                    log::warn!("candidate ({}) failed: {e}", run.point);
                    (MetricsSummary::unevaluated(), Verdict::Failed, Some(e.to_string()), Objective::Infeasible)
                }
            };
            let point_id = db.record(NewDataPoint {
                design_id: run.design_id.clone(),
                configuration: run.point,
                workload: self.cfg.workload.clone(),
                device: self.cfg.device.name.clone(),
                metrics,
                verdict,
                source: Source::Analytical,
                rationale,
            })?;
            self.run_points.push(point_id.clone());
            if verdict == Verdict::Pending {
                self.state.pending_verdicts.push(point_id.clone());
            }
            self.state.evaluated.insert(run.design_id.clone());
            self.entries.insert(
                run.design_id,
                EvalEntry {
                    point: run.point,
                    objective,
                    point_id: point_id.clone(),
                    vetoed: false,
                },
            );
            evaluated.push(EvaluatedCandidate {
                run_id: run.run_id,
                point_id,
                point: run.point,
                objective,
                verdict,
            });
        }

        let previous = self.state.best;
        self.refresh();
        let improved = match (previous, self.state.best) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(a), Some(b)) => b < a,
        };
        self.stale = if improved { 0 } else { self.stale + 1 };
        self.state.iteration += 1;

        if self.state.iteration >= self.cfg.max_iterations {
            self.stop = Some(StopReason::MaxIterations);
        } else if self.cfg.strategy != Strategy::Exhaustive && self.stale >= PATIENCE {
            self.stop = Some(StopReason::Converged);
        }

        self.trace.push(IterationTrace {
            iteration,
            proposed,
            skipped_duplicates: skipped,
            evaluated,
            rejected,
            advisor_fallback: fallback,
            best: self.state.best,
        });
        Ok(self.trace.last().expect("trace just pushed"))
    }

    /// Recomputes frontier, best and diversity set from the evaluated entries.
    fn refresh(&mut self) {
        let mut frontier: Vec<FrontierEntry> = self
            .entries
            .values()
            .filter(|e| !e.vetoed && e.objective.is_finite())
            .map(|e| FrontierEntry {
                objective: e.objective,
                point: e.point,
            })
            .collect();
        frontier.sort();
        self.state.best = frontier.first().copied();

        let mut pool: Vec<FrontierEntry> = self
            .entries
            .values()
            .filter(|e| !e.vetoed)
            .map(|e| FrontierEntry {
                objective: e.objective,
                point: e.point,
            })
            .collect();
        pool.sort();
        self.state.diversity_set = select_frontier(
            &pool,
            &self.cfg.directives,
            self.cfg.candidates_per_iteration,
            self.cfg.diversity_k,
        );
        self.state.frontier = frontier;
    }

    /// Records a human verdict for a point of this exploration. Rejected
    /// points leave the frontier and are never proposed again.
    pub fn apply_verdict(&mut self, db: &mut CostDb, point_id: &str, verdict: Verdict, notes: Option<String>) -> Result<String> {
        let pending = self.state.pending_verdicts.iter().any(|p| p == point_id);
        let reviewed = matches!(db.review_state(point_id), Some(ReviewState::Reviewed { .. }));
        let ours = self.entries.values().any(|e| e.point_id == point_id);
        if !pending && !(reviewed && ours) {
            return Err(Error::UnknownPoint(point_id.to_string()));
        }
        let record_id = db.record_verdict(point_id, verdict, notes)?;
        if pending {
            self.state.pending_verdicts.retain(|p| p != point_id);
            if verdict == Verdict::Rejected {
                if let Some(entry) = self.entries.values_mut().find(|e| e.point_id == point_id) {
                    entry.vetoed = true;
                    self.excluded.insert(entry.point);
                }
                self.refresh();
            }
        }
        Ok(record_id)
    }

    pub fn report(&self) -> ExplorationReport {
        let best = self.state.best.and_then(|b| {
            self.entries
                .iter()
                .find(|(_, e)| e.point == b.point && !e.vetoed)
                .map(|(design_id, e)| BestPoint {
                    point: b.point,
                    objective: b.objective,
                    design_id: design_id.clone(),
                    point_id: e.point_id.clone(),
                })
        });
        let all_evaluated = self.trace.iter().flat_map(|t| &t.evaluated);
        ExplorationReport {
            strategy: self.cfg.strategy,
            seed: self.cfg.seed,
            workload: self.cfg.workload.name.clone(),
            device: self.cfg.device.name.clone(),
            iterations: self.state.iteration,
            stop_reason: self.stop,
            best,
            evaluated_count: all_evaluated.clone().count(),
            rejected_count: self.trace.iter().map(|t| t.rejected.len()).sum::<usize>()
                + all_evaluated.clone().filter(|e| e.verdict == Verdict::Rejected).count(),
            failed_count: all_evaluated.filter(|e| e.verdict == Verdict::Failed).count(),
            advisor_fallbacks: self.fallbacks.clone(),
            trace: self.trace.clone(),
        }
    }

    pub fn write_report(&self) -> Result<ExplorationReport> {
        let report = self.report();
        write_json(&self.ws.report_path(), &report)?;
        Ok(report)
    }

    /// Steps until a stop condition, then writes the report.
    pub fn run(&mut self, db: &mut CostDb) -> Result<ExplorationReport> {
        while !self.is_finished() {
            match self.step(db) {
                Ok(_) | Err(Error::SpaceExhausted) => {}
                Err(e) => return Err(e),
            }
        }
        self.write_report()
    }
}

/// Runs a whole exploration in `cfg.workspace`.
pub fn run_exploration(cfg: ExplorationConfig) -> Result<(ExplorationState, ExplorationReport)> {
    let mut explorer = Explorer::new(cfg)?;
    run_with(&mut explorer)
}

/// Runs an already-built explorer against its workspace database.
pub fn run_with(explorer: &mut Explorer) -> Result<(ExplorationState, ExplorationReport)> {
    let mut db = explorer.workspace().open_db()?.with_timestamps(explorer.timestamps());
    let report = explorer.run(&mut db)?;
    Ok((explorer.state().clone(), report))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::storage(path.display(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(strategy: Strategy, dir: &Path) -> ExplorationConfig {
        let mut c = ExplorationConfig::new(
            WorkloadSpec::vecmul(1023).unwrap(),
            DeviceProfile::xc7z020(),
            Directives::new(vec![1024, 2048], vec![1], vec![32]).unwrap(),
            strategy,
            dir,
        );
        c.candidates_per_iteration = 1;
        c
    }

    #[test]
    fn exhaustive_two_point_space() {
        let dir = tempfile::tempdir().unwrap();
        let (state, report) = run_exploration(cfg(Strategy::Exhaustive, dir.path())).unwrap();
        assert_eq!(state.evaluated.len(), 2);
        let best = report.best.unwrap();
        assert_eq!(best.point, ParameterPoint::new(1024, 1, 32));
        assert_eq!(best.objective, Objective::Cycles(2060));
        assert_eq!(report.stop_reason, Some(StopReason::SpaceExhausted));
        let runs = Workspace::new(dir.path()).run_ids().unwrap();
        assert_eq!(runs.len(), 2);
        for r in runs {
            let folder = dir.path().join("runs").join(r);
            for f in ["design.json", "report.json", "summary.json", "src"] {
                assert!(folder.join(f).exists(), "{f} missing");
            }
        }
    }

    #[test]
    fn select_frontier_examples() {
        let d = Directives::new(vec![256, 512, 1024], vec![1, 2], vec![32]).unwrap();
        let e = |i: usize, j: usize, c: u64| FrontierEntry {
            objective: Objective::Cycles(c),
            point: d.point_at([i, j, 0]),
        };
        let one = [e(0, 0, 10)];
        assert_eq!(select_frontier(&one, &d, 1, 0), vec![d.point_at([0, 0, 0])]);
        let three = [e(0, 0, 10), e(2, 0, 20), e(1, 1, 30)];
        assert_eq!(
            select_frontier(&three, &d, 1, 1),
            vec![d.point_at([0, 0, 0]), d.point_at([1, 1, 0])]
        );
        assert_eq!(select_frontier(&three, &d, 1, 5).len(), 3);
    }

    #[test]
    fn verdicts_update_best_and_pending() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(Strategy::Exhaustive, dir.path());
        c.candidates_per_iteration = 2;
        let mut ex = Explorer::new(c).unwrap();
        let mut db = ex.workspace().open_db().unwrap().with_timestamps(Timestamps::Logical);
        ex.step(&mut db).unwrap();
        assert_eq!(ex.state().pending_verdicts.len(), 2);
        let best_id = ex.report().best.unwrap().point_id;

        ex.apply_verdict(&mut db, &best_id, Verdict::Rejected, Some("no".into())).unwrap();
        assert_eq!(ex.state().pending_verdicts.len(), 1);
        assert_eq!(ex.state().best.unwrap().point, ParameterPoint::new(2048, 1, 32));
        // identical resubmission is idempotent
        ex.apply_verdict(&mut db, &best_id, Verdict::Rejected, Some("no".into())).unwrap();
        assert!(matches!(
            ex.apply_verdict(&mut db, "nope", Verdict::Accepted, None),
            Err(Error::UnknownPoint(_))
        ));
        let other = ex.state().pending_verdicts[0].clone();
        ex.apply_verdict(&mut db, &other, Verdict::Accepted, None).unwrap();
        assert!(ex.state().pending_verdicts.is_empty());
    }

    #[test]
    fn run_folders_are_not_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        run_exploration(cfg(Strategy::Exhaustive, dir.path())).unwrap();
        run_exploration(cfg(Strategy::Exhaustive, dir.path())).unwrap();
        let runs = Workspace::new(dir.path()).run_ids().unwrap();
        assert_eq!(runs.len(), 4);
        assert!(runs.iter().any(|r| r.ends_with("-1")));
    }

    #[test]
    fn infeasible_points_are_rejected_not_best() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(Strategy::Exhaustive, dir.path());
        c.device.dsp = 1;
        let (state, report) = run_exploration(c).unwrap();
        assert!(state.best.is_none());
        assert_eq!(report.rejected_count, 2);
        let db = Workspace::new(dir.path()).open_db().unwrap();
        assert!(db.points().iter().all(|p| p.verdict == Verdict::Rejected));
    }
}
