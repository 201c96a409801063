//! HTTP/JSON API over a workspace. All mutations go through one lock that
//! owns the database and the live explorations, so writes are serialized.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dse_core::cost_db::{summarize_run, CostDb, HardwareDataPoint, PointFilter, ReviewState, RunSummary, Verdict};
use dse_core::evaluator::EvaluationReport;
use dse_core::explorer::{ExplorationConfig, ExplorationState, Explorer, FrontierEntry, StopReason, Workspace};
use dse_core::retrieval::{load_index_cache, DocKind};
use dse_core::templates::{AcceleratorDesign, SourceSet};
use dse_core::Error;
use serde::{Deserialize, Serialize};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::Parse(_) => (StatusCode::BAD_REQUEST, "parse_error"),
            Error::Validation { .. } => (StatusCode::BAD_REQUEST, "validation_error"),
            Error::UnsupportedTemplate(_) => (StatusCode::BAD_REQUEST, "unsupported_template"),
            Error::UnknownPoint(_) => (StatusCode::NOT_FOUND, "unknown_point"),
            Error::MissingArtifact(_) => (StatusCode::NOT_FOUND, "missing_artifact"),
            Error::VerdictConflict(_) => (StatusCode::CONFLICT, "verdict_conflict"),
            Error::SpaceExhausted => (StatusCode::CONFLICT, "space_exhausted"),
            Error::ProviderUnreachable(_) => (StatusCode::BAD_GATEWAY, "provider_unreachable"),
            Error::ProposalUnparseable => (StatusCode::BAD_GATEWAY, "proposal_unparseable"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal_error"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Exclusive advisory lock on `<workspace>/.lock`, held for the server's lifetime.
#[derive(Debug)]
pub struct WorkspaceLock {
    _file: File,
    path: PathBuf,
}

impl WorkspaceLock {
    pub fn acquire(workspace: &Path) -> anyhow::Result<Self> {
        let path = workspace.join(".lock");
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file, path }),
            Err(std::fs::TryLockError::WouldBlock) => {
                anyhow::bail!("workspace locked: another server holds {}", path.display())
            }
            Err(std::fs::TryLockError::Error(e)) => Err(e.into()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

struct Core {
    db: CostDb,
    explorations: BTreeMap<String, Explorer>,
    next_id: u64,
}

/// Shared handler state.
#[derive(Clone)]
pub struct AppState {
    ws: Workspace,
    core: Arc<Mutex<Core>>,
    _lock: Arc<WorkspaceLock>,
}

impl AppState {
    /// Opens an initialized workspace and takes its lock.
    pub fn open(workspace: &Path) -> anyhow::Result<Self> {
        let ws = Workspace::new(workspace);
        if !ws.db_dir().is_dir() {
            anyhow::bail!("{} is not an initialized workspace (run `dse init`)", workspace.display());
        }
        let lock = WorkspaceLock::acquire(workspace)?;
        let db = ws.open_db()?;
        Ok(Self {
            ws,
            core: Arc::new(Mutex::new(Core {
                db,
                explorations: BTreeMap::new(),
                next_id: 1,
            })),
            _lock: Arc::new(lock),
        })
    }
}

/// Runs `f` on the blocking pool with exclusive access to the core.
async fn with_core<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Core, &Workspace) -> ApiResult<T> + Send + 'static,
{
    let core = state.core.clone();
    let ws = state.ws.clone();
    tokio::task::spawn_blocking(move || {
        let mut guard = core.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard, &ws)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", e.to_string()))?
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/runs", get(list_runs))
        .route("/api/runs/{run_id}", get(get_run))
        .route("/api/runs/{run_id}/source", get(get_source))
        .route("/api/datapoints", get(list_datapoints))
        .route("/api/datapoints/{point_id}/verdict", post(post_verdict))
        .route("/api/explorations", post(create_exploration))
        .route("/api/explorations/{id}", get(get_exploration))
        .route("/api/explorations/{id}/step", post(step_exploration))
        .route("/api/search", get(search))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

async fn list_runs(State(state): State<AppState>) -> ApiResult<Json<Vec<RunSummary>>> {
    with_core(&state, |_, ws| {
        let mut out = Vec::new();
        for id in ws.run_ids()? {
            match summarize_run(&ws.runs_dir().join(&id)) {
                Ok(s) => out.push(s),
                Err(e) => log::debug!("skipping run {id}: {e}"),
            }
        }
        Ok(Json(out))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunDetail {
    pub summary: RunSummary,
    pub design: AcceleratorDesign,
    pub report: EvaluationReport,
}

async fn get_run(State(state): State<AppState>, UrlPath(run_id): UrlPath<String>) -> ApiResult<Json<RunDetail>> {
    with_core(&state, move |_, ws| {
        let folder = ws.run_folder(&run_id)?;
        Ok(Json(RunDetail {
            summary: summarize_run(&folder)?,
            design: AcceleratorDesign::load(&folder.join("design.json"))?,
            report: EvaluationReport::load(&folder.join("report.json"))?,
        }))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub contents: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SourceListing {
    pub run_id: String,
    pub files: Vec<SourceFile>,
}

async fn get_source(State(state): State<AppState>, UrlPath(run_id): UrlPath<String>) -> ApiResult<Json<SourceListing>> {
    with_core(&state, move |_, ws| {
        let src = ws.run_folder(&run_id)?.join("src");
        if !src.is_dir() {
            return Err(Error::MissingArtifact(format!("runs/{run_id}/src")).into());
        }
        let set = SourceSet::read_from(&src)?;
        Ok(Json(SourceListing {
            run_id,
            files: set
                .files
                .into_iter()
                .map(|(path, contents)| SourceFile { path, contents })
                .collect(),
        }))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
pub struct DatapointQuery {
    pub verdict: Option<String>,
    pub feasible: Option<bool>,
    pub workload: Option<String>,
    pub device: Option<String>,
    pub order: Option<String>,
    pub limit: Option<usize>,
}

async fn list_datapoints(
    State(state): State<AppState>,
    query: Result<Query<DatapointQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<HardwareDataPoint>>> {
    let Query(q) = query?;
    let verdict = match q.verdict.as_deref().filter(|v| !v.is_empty()) {
        Some(v) => Some(v.parse::<Verdict>()?),
        None => None,
    };
    let filter = PointFilter {
        workload: q.workload,
        device: q.device,
        verdict,
        feasible: q.feasible,
    };
    let order = q.order.filter(|o| !o.is_empty()).unwrap_or_else(|| "created_at".into());
    with_core(&state, move |core, _| Ok(Json(core.db.query_points(&filter, &order, q.limit)?))).await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerdictBody {
    pub verdict: String,
    #[serde(default)]
    pub notes: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerdictResponse {
    pub point_id: String,
    pub record_id: String,
    pub verdict: Verdict,
    pub notes: Option<String>,
    /// Exploration that tracked the point, if it is still live.
    pub exploration_id: Option<String>,
    pub pending_verdicts: Option<usize>,
}

async fn post_verdict(
    State(state): State<AppState>,
    UrlPath(point_id): UrlPath<String>,
    body: Result<Json<VerdictBody>, JsonRejection>,
) -> ApiResult<Json<VerdictResponse>> {
    let Json(body) = body?;
    let verdict: Verdict = body.verdict.parse()?;
    if !matches!(verdict, Verdict::Accepted | Verdict::Rejected) {
        return Err(Error::validation("verdict", "must be accepted or rejected").into());
    }
    with_core(&state, move |core, _| {
        if core.db.review_state(&point_id).is_none_or(|s| s == ReviewState::NotReviewable) {
            return Err(Error::UnknownPoint(point_id).into());
        }
        let owner = core.explorations.iter_mut().find(|(_, ex)| {
            ex.state().pending_verdicts.contains(&point_id)
        });
        let (record_id, exploration_id, pending) = match owner {
            Some((id, ex)) => {
                let rec = ex.apply_verdict(&mut core.db, &point_id, verdict, body.notes.clone())?;
                (rec, Some(id.clone()), Some(ex.state().pending_verdicts.len()))
            }
            None => (core.db.record_verdict(&point_id, verdict, body.notes.clone())?, None, None),
        };
        Ok(Json(VerdictResponse {
            point_id,
            record_id,
            verdict,
            notes: body.notes,
            exploration_id,
            pending_verdicts: pending,
        }))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub exploration_id: String,
}

async fn create_exploration(
    State(state): State<AppState>,
    body: Result<Json<ExplorationConfig>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Created>)> {
    let Json(mut cfg) = body?;
    with_core(&state, move |core, ws| {
        cfg.workspace = ws.root().to_path_buf();
        let explorer = Explorer::new(cfg)?;
        let id = format!("exp-{:04}", core.next_id);
        core.next_id += 1;
        core.explorations.insert(id.clone(), explorer);
        Ok((StatusCode::CREATED, Json(Created { exploration_id: id })))
    })
    .await
}

fn unknown_exploration(id: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "unknown_exploration", format!("no exploration `{id}`"))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepResponse {
    pub iteration: u64,
    pub best: Option<FrontierEntry>,
    pub evaluated: Vec<String>,
    pub rejected: Vec<String>,
    pub stop_reason: Option<StopReason>,
}

async fn step_exploration(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<StepResponse>> {
    with_core(&state, move |core, _| {
        let Core { db, explorations, .. } = core;
        let ex = explorations.get_mut(&id).ok_or_else(|| unknown_exploration(&id))?;
        if let Some(reason) = ex.stop_reason() {
            if reason != StopReason::SpaceExhausted {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "exploration_finished",
                    format!("exploration `{id}` finished: {reason:?}"),
                ));
            }
        }
        let trace = ex.step(db)?.clone();
        ex.write_report()?;
        Ok(Json(StepResponse {
            iteration: ex.state().iteration,
            best: ex.state().best,
            evaluated: trace.evaluated.iter().map(|e| e.point_id.clone()).collect(),
            rejected: trace.rejected.iter().map(|r| r.point_id.clone()).collect(),
            stop_reason: ex.stop_reason(),
        }))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExplorationSummary {
    pub exploration_id: String,
    pub state: ExplorationState,
    pub stop_reason: Option<StopReason>,
}

async fn get_exploration(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ExplorationSummary>> {
    with_core(&state, move |core, _| {
        let ex = core.explorations.get(&id).ok_or_else(|| unknown_exploration(&id))?;
        Ok(Json(ExplorationSummary {
            exploration_id: id,
            state: ex.state().clone(),
            stop_reason: ex.stop_reason(),
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct SearchQuery {
    pub q: String,
    pub k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub kind: DocKind,
    pub score: f64,
    pub text: String,
}

async fn search(
    State(state): State<AppState>,
    query: Result<Query<SearchQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<SearchHit>>> {
    let Query(q) = query?;
    with_core(&state, move |_, ws| {
        let idx = load_index_cache(&ws.index_path())?;
        let hits = idx
            .retrieve(&q.q, q.k.unwrap_or(5))
            .into_iter()
            .filter_map(|h| {
                let doc = idx.document(&h.doc_id)?;
                Some(SearchHit {
                    doc_id: h.doc_id,
                    kind: doc.kind,
                    score: h.score,
                    text: doc.text.clone(),
                })
            })
            .collect();
        Ok(Json(hits))
    })
    .await
}

/// Serves `workspace` on `port` until Ctrl-C.
pub async fn serve(workspace: &Path, port: u16) -> anyhow::Result<()> {
    let state = AppState::open(workspace)?;
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = match tokio::net::TcpListener::bind(addr).await {
        Ok(l) => l,
        Err(e) if e.kind() == std::io::ErrorKind::AddrInUse => anyhow::bail!("port in use: {port}"),
        Err(e) => return Err(e.into()),
    };
    log::info!("serving {} on http://{}", workspace.display(), listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
