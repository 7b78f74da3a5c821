//! Local HTTP/JSON service for interactive centre editing.
//!
//! Every subdirectory of the service root that holds `fused.vxg` or
//! `occ.json` is a project. Alongside the grid a project keeps
//! `centers.json` (computed from the grid on first open when missing),
//! `project.json` (revision and plan patches) and the last `plan.json`.
//! A `templates.json` in the project directory takes precedence over the
//! configured library.
//!
//! Routes, all JSON:
//!
//! | method | path                       |                                   |
//! |--------|----------------------------|-----------------------------------|
//! | GET    | /projects                  | project ids                       |
//! | GET    | /projects/{id}/occ         | sparse grid, `?stride=n`          |
//! | GET    | /projects/{id}/centers     | centres, patches, revision (ETag) |
//! | PUT    | /projects/{id}/centers     | edit, needs `If-Match: <rev>`     |
//! | POST   | /projects/{id}/plan        | match + emit, returns a summary   |
//! | POST   | /projects/{id}/apply       | dispatch over RCON or dry run     |
//! | GET    | /projects/{id}/status      | dispatch progress                 |
//! | POST   | /projects/{id}/cancel      | stop a running dispatch           |
//!
//! A PUT body is either a full replacement `{"centers": [...]}` or a list
//! of edits `{"ops": [...]}`; both may carry `"patches"`, which replace the
//! stored patch list. Edit verbs: `move`, `delete`, `split`, `reassign`,
//! `delete_class`, `add`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{Any, CorsLayer};

use crate::centers::{extract_centers, Center, CenterRow, CenterSet};
use crate::grid::io::{load_grid, to_occ_json_strided};
use crate::grid::SemanticGrid;
use crate::matching::TemplateLibrary;
use crate::pipeline::{plan_from_centers, PipelineConfig};
use crate::plan::{apply_patches, render_commands, BuildPlan, Dialect, Patch, PlanDiagnostics};
use crate::rcon::{dispatch_commands, DispatchOptions, DispatchReport, RconEndpoint, Session};

const GRID_FILES: [&str; 2] = ["fused.vxg", "occ.json"];

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown project {0}")]
    NotFound(String),
    #[error("revision conflict: current revision is {current}")]
    Conflict { current: u64 },
    #[error("If-Match header with the current revision is required")]
    PreconditionRequired,
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Invalid(String),
    #[error("a dispatch is already running for this project")]
    Busy,
    #[error("rcon: {message}")]
    Rcon { message: String, report: Option<DispatchReport> },
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict { .. } | ServiceError::Busy => StatusCode::CONFLICT,
            ServiceError::PreconditionRequired => StatusCode::PRECONDITION_REQUIRED,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Rcon { .. } => StatusCode::BAD_GATEWAY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.to_string() });
        match &self {
            ServiceError::Conflict { current } => body["revision"] = json!(current),
            ServiceError::Rcon { report: Some(r), .. } => {
                body["sent"] = json!(r.sent());
                body["total"] = json!(r.total);
                body["failures"] = json!(r.results.iter().filter(|c| !c.ok).collect::<Vec<_>>());
            }
            _ => {}
        }
        (self.status(), Json(body)).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(e.to_string())
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub root: PathBuf,
    pub pipeline: PipelineConfig,
    pub rcon: RconEndpoint,
}

impl ServiceConfig {
    pub fn new(root: impl Into<PathBuf>, pipeline: PipelineConfig) -> Self {
        let rcon = pipeline.rcon.endpoint();
        ServiceConfig { root: root.into(), pipeline, rcon }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ProjectMeta {
    revision: u64,
    #[serde(default)]
    patches: Vec<Patch>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct JobStatus {
    pub state: JobState,
    pub revision: Option<u64>,
    pub sent: usize,
    pub total: usize,
    pub failed: Vec<FailedCommand>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    #[default]
    Idle,
    Running,
    Done,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedCommand {
    pub index: usize,
    pub command: String,
    pub error: Option<String>,
}

struct StoredPlan {
    revision: u64,
    plan: BuildPlan,
}

struct Project {
    dir: PathBuf,
    grid: Arc<SemanticGrid>,
    centers: CenterSet,
    meta: ProjectMeta,
    plan: Option<StoredPlan>,
}

struct ProjectHandle {
    data: RwLock<Project>,
    job: Arc<Mutex<JobStatus>>,
    cancel: Mutex<Arc<AtomicBool>>,
}

#[derive(Clone)]
pub struct ServiceState {
    config: Arc<ServiceConfig>,
    projects: Arc<RwLock<HashMap<String, Arc<ProjectHandle>>>>,
}

fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(tmp, path)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.') && id != "." && id != ".."
}

impl ServiceState {
    pub fn new(config: ServiceConfig) -> Self {
        ServiceState { config: Arc::new(config), projects: Arc::default() }
    }

    /// Project ids present on disk.
    pub fn project_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = std::fs::read_dir(&self.config.root)
            .into_iter()
            .flatten()
            .flatten()
            .filter(|e| GRID_FILES.iter().any(|f| e.path().join(f).is_file()))
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| valid_id(id))
            .collect();
        ids.sort();
        ids
    }

    fn project(&self, id: &str) -> Result<Arc<ProjectHandle>, ServiceError> {
        if let Some(p) = self.projects.read().map_err(internal)?.get(id) {
            return Ok(p.clone());
        }
        if !valid_id(id) {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        let dir = self.config.root.join(id);
        let grid_path = GRID_FILES.iter().map(|f| dir.join(f)).find(|p| p.is_file());
        let Some(grid_path) = grid_path else { return Err(ServiceError::NotFound(id.to_string())) };
        let project = self.open(dir, &grid_path)?;
        let handle = Arc::new(ProjectHandle {
            data: RwLock::new(project),
            job: Arc::default(),
            cancel: Mutex::new(Arc::new(AtomicBool::new(false))),
        });
        let mut all = self.projects.write().map_err(internal)?;
        Ok(all.entry(id.to_string()).or_insert(handle).clone())
    }

    fn open(&self, dir: PathBuf, grid_path: &Path) -> Result<Project, ServiceError> {
        let grid = load_grid(grid_path).map_err(internal)?;
        let params = self.config.pipeline.centers;
        let centers_path = dir.join("centers.json");
        let centers = if centers_path.is_file() {
            CenterSet::load(&centers_path, grid.classes(), params).map_err(internal)?
        } else {
            let c = extract_centers(&grid, &params).map_err(internal)?;
            write_atomic(&centers_path, &c.to_json(grid.classes())).map_err(internal)?;
            c
        };
        let meta_path = dir.join("project.json");
        let meta = if meta_path.is_file() {
            let text = std::fs::read_to_string(&meta_path).map_err(internal)?;
            serde_json::from_str(&text).map_err(internal)?
        } else {
            ProjectMeta::default()
        };
        Ok(Project { dir, grid: Arc::new(grid), centers, meta, plan: None })
    }

    fn library(&self, p: &Project) -> Result<TemplateLibrary, ServiceError> {
        let local = p.dir.join("templates.json");
        if local.is_file() {
            return TemplateLibrary::load(local, p.grid.classes()).map_err(internal);
        }
        self.config.pipeline.library(p.grid.classes()).map_err(internal)
    }
}

pub fn router(state: ServiceState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods(Any)
        .allow_headers(Any)
        .expose_headers([header::ETAG]);
    Router::new()
        .route("/projects", get(list_projects))
        .route("/projects/{id}/occ", get(get_occ))
        .route("/projects/{id}/centers", get(get_centers).put(put_centers))
        .route("/projects/{id}/plan", post(post_plan))
        .route("/projects/{id}/apply", post(post_apply))
        .route("/projects/{id}/status", get(get_status))
        .route("/projects/{id}/cancel", post(post_cancel))
        .layer(cors)
        .with_state(state)
}

/// Binds and serves until the process is interrupted.
pub async fn serve(config: ServiceConfig, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving {} on http://{}", config.root.display(), listener.local_addr()?);
    axum::serve(listener, router(ServiceState::new(config)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f).await.map_err(internal)?
}

async fn list_projects(State(s): State<ServiceState>) -> Json<Value> {
    Json(json!({ "projects": s.project_ids() }))
}

#[derive(Deserialize)]
struct OccQuery {
    stride: Option<usize>,
}

async fn get_occ(
    State(s): State<ServiceState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<OccQuery>,
) -> Result<Response, ServiceError> {
    let stride = q.stride.unwrap_or(1);
    if stride == 0 {
        return Err(ServiceError::BadRequest("stride must be at least 1".into()));
    }
    let body = blocking(move || {
        let h = s.project(&id)?;
        let grid = h.data.read().map_err(internal)?.grid.clone();
        Ok(to_occ_json_strided(&grid, stride))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

fn centers_body(p: &Project) -> (HeaderMap, Json<Value>) {
    let rows: Vec<Value> = serde_json::from_str(&p.centers.to_json(p.grid.classes())).expect("centers json");
    let mut headers = HeaderMap::new();
    headers.insert(header::ETAG, HeaderValue::from(p.meta.revision));
    (headers, Json(json!({ "revision": p.meta.revision, "centers": rows, "patches": p.meta.patches })))
}

async fn get_centers(State(s): State<ServiceState>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ServiceError> {
    let h = blocking(move || s.project(&id)).await?;
    let p = h.data.read().map_err(internal)?;
    Ok(centers_body(&p))
}

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
enum EditOp {
    Move { id: u32, pos: [f64; 3] },
    Delete { id: u32 },
    /// Replaces one centre with two new ones of the same class.
    Split { id: u32, into: [[f64; 3]; 2] },
    Reassign { id: u32, class: String },
    DeleteClass { class: String },
    Add { class: String, pos: [f64; 3] },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CentersPut {
    centers: Option<Vec<CenterRow>>,
    ops: Option<Vec<EditOp>>,
    patches: Option<Vec<Patch>>,
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ServiceError::Invalid(e.to_string()),
        _ => ServiceError::BadRequest(e.to_string()),
    })
}

fn check_pos(pos: [f64; 3]) -> Result<[f64; 3], ServiceError> {
    if pos.iter().all(|c| c.is_finite()) {
        Ok(pos)
    } else {
        Err(ServiceError::Invalid("center positions must be finite".into()))
    }
}

fn apply_edits(p: &Project, put: &CentersPut) -> Result<Vec<Center>, ServiceError> {
    let table = p.grid.classes();
    let class = |name: &str| table.resolve(name).map_err(|e| ServiceError::Invalid(e.to_string()));
    let mut centers = match &put.centers {
        Some(rows) => {
            let mut seen = std::collections::HashSet::new();
            rows.iter()
                .map(|r| {
                    if !seen.insert(r.id) {
                        return Err(ServiceError::Invalid(format!("duplicate center id {}", r.id)));
                    }
                    Ok(Center { id: r.id, class: class(&r.class)?, pos: check_pos(r.pos)?, members: r.members.max(1), member_voxels: None })
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        None => p.centers.centers.clone(),
    };
    let mut next = centers.iter().map(|c| c.id + 1).max().unwrap_or(0).max(p.centers.next_id());
    let find = |cs: &Vec<Center>, id: u32| {
        cs.iter().position(|c| c.id == id).ok_or_else(|| ServiceError::Invalid(format!("no center with id {id}")))
    };
    for op in put.ops.iter().flatten() {
        match op {
            EditOp::Move { id, pos } => {
                let i = find(&centers, *id)?;
                centers[i].pos = check_pos(*pos)?;
                centers[i].member_voxels = None;
            }
            EditOp::Delete { id } => {
                let i = find(&centers, *id)?;
                centers.remove(i);
            }
            EditOp::Split { id, into } => {
                let i = find(&centers, *id)?;
                let old = centers.remove(i);
                let halves = [old.members.div_ceil(2).max(1), (old.members / 2).max(1)];
                for (k, pos) in into.iter().enumerate() {
                    centers.insert(
                        i + k,
                        Center { id: next, class: old.class, pos: check_pos(*pos)?, members: halves[k], member_voxels: None },
                    );
                    next += 1;
                }
            }
            EditOp::Reassign { id, class: name } => {
                let i = find(&centers, *id)?;
                centers[i].class = class(name)?;
            }
            EditOp::DeleteClass { class: name } => {
                let c = class(name)?;
                centers.retain(|x| x.class != c);
            }
            EditOp::Add { class: name, pos } => {
                centers.push(Center { id: next, class: class(name)?, pos: check_pos(*pos)?, members: 1, member_voxels: None });
                next += 1;
            }
        }
    }
    Ok(centers)
}

async fn put_centers(
    State(s): State<ServiceState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: axum::body::Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let h = blocking(move || s.project(&id)).await?;
    let expected: u64 = match headers.get(header::IF_MATCH) {
        None => return Err(ServiceError::PreconditionRequired),
        Some(v) => v
            .to_str()
            .ok()
            .map(|t| t.trim().trim_start_matches("W/").trim_matches('"'))
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| ServiceError::BadRequest("If-Match must be a revision number".into()))?,
    };
    let put: CentersPut = parse_body(&body)?;
    if put.centers.is_none() && put.ops.is_none() && put.patches.is_none() {
        return Err(ServiceError::Invalid("expected centers, ops or patches".into()));
    }
    let mut p = h.data.write().map_err(internal)?;
    if p.meta.revision != expected {
        return Err(ServiceError::Conflict { current: p.meta.revision });
    }
    let centers = apply_edits(&p, &put)?;
    let mut set = CenterSet::new(centers, p.centers.params);
    set.diagnostics = p.centers.diagnostics.clone();
    let mut meta = p.meta.clone();
    meta.revision += 1;
    if let Some(patches) = put.patches {
        meta.patches = patches;
    }
    // persist before committing so a failed write leaves the old revision live
    write_atomic(&p.dir.join("centers.json"), &set.to_json(p.grid.classes())).map_err(internal)?;
    write_atomic(&p.dir.join("project.json"), &serde_json::to_string_pretty(&meta).map_err(internal)?).map_err(internal)?;
    p.centers = set;
    p.meta = meta;
    p.plan = None;
    Ok(centers_body(&p))
}

#[derive(Debug, Serialize)]
struct PlanSummary {
    revision: u64,
    commands: usize,
    #[serde(flatten)]
    diagnostics: PlanDiagnostics,
    patches: usize,
    patches_dropped: usize,
}

/// Generates the plan for the current revision, stores it and writes
/// `plan.json`.
fn generate_plan(s: &ServiceState, h: &ProjectHandle) -> Result<(PlanSummary, BuildPlan), ServiceError> {
    let (grid, centers, patches, revision, library) = {
        let p = h.data.read().map_err(internal)?;
        (p.grid.clone(), p.centers.clone(), p.meta.patches.clone(), p.meta.revision, s.library(&p)?)
    };
    let cfg = &s.config.pipeline;
    let plan_cfg = cfg.plan_config().map_err(internal)?;
    let (_, mut plan, diagnostics) =
        plan_from_centers(&grid, &centers, &library, &cfg.matching, &plan_cfg).map_err(|e| ServiceError::Invalid(e.to_string()))?;
    let patches_dropped = apply_patches(&mut plan, &patches);
    let summary = PlanSummary { revision, commands: plan.commands.len(), diagnostics, patches: patches.len(), patches_dropped };
    let mut p = h.data.write().map_err(internal)?;
    if p.meta.revision == revision {
        write_atomic(&p.dir.join("plan.json"), &plan.to_json()).map_err(internal)?;
        p.plan = Some(StoredPlan { revision, plan: plan.clone() });
    }
    Ok((summary, plan))
}

async fn post_plan(State(s): State<ServiceState>, UrlPath(id): UrlPath<String>) -> Result<Json<PlanSummary>, ServiceError> {
    blocking(move || {
        let h = s.project(&id)?;
        Ok(Json(generate_plan(&s, &h)?.0))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ApplyRequest {
    dry_run: bool,
    throttle: Option<f64>,
    /// Block until the dispatch finishes and report failures as 502.
    wait: bool,
}

fn failures(r: &DispatchReport) -> Vec<FailedCommand> {
    r.results
        .iter()
        .filter(|c| !c.ok)
        .map(|c| FailedCommand { index: c.index, command: c.command.clone(), error: c.error.clone() })
        .collect()
}

async fn post_apply(
    State(s): State<ServiceState>,
    UrlPath(id): UrlPath<String>,
    body: axum::body::Bytes,
) -> Result<Response, ServiceError> {
    let req: ApplyRequest = if body.iter().all(u8::is_ascii_whitespace) { ApplyRequest::default() } else { parse_body(&body)? };
    let mut opts = DispatchOptions { throttle: s.config.pipeline.rcon.throttle, ..Default::default() };
    if let Some(t) = req.throttle {
        if !(t > 0.0 && t.is_finite()) {
            return Err(ServiceError::Invalid("throttle must be a positive number".into()));
        }
        opts.throttle = t;
    }
    let h = blocking({
        let s = s.clone();
        move || s.project(&id)
    })
    .await?;
    let (revision, plan) = {
        let cached = {
            let p = h.data.read().map_err(internal)?;
            p.plan.as_ref().filter(|sp| sp.revision == p.meta.revision).map(|sp| (sp.revision, sp.plan.clone()))
        };
        match cached {
            Some(c) => c,
            None => {
                let (s, h) = (s.clone(), h.clone());
                blocking(move || generate_plan(&s, &h).map(|(sum, plan)| (sum.revision, plan))).await?
            }
        }
    };
    let commands = render_commands(&plan, Dialect::Vanilla);
    if req.dry_run {
        return Ok(Json(json!({ "revision": revision, "dry_run": true, "commands": commands })).into_response());
    }

    let cancel = {
        let mut st = h.job.lock().map_err(internal)?;
        if st.state == JobState::Running {
            return Err(ServiceError::Busy);
        }
        *st = JobStatus { state: JobState::Running, revision: Some(revision), total: commands.len(), ..Default::default() };
        let fresh = Arc::new(AtomicBool::new(false));
        *h.cancel.lock().map_err(internal)? = fresh.clone();
        fresh
    };
    let endpoint = s.config.rcon.clone();
    let job = h.job.clone();
    let session = match tokio::task::spawn_blocking(move || Session::connect_and_auth(&endpoint)).await.map_err(internal)? {
        Ok(sess) => sess,
        Err(e) => {
            let mut st = job.lock().map_err(internal)?;
            st.state = JobState::Failed;
            st.error = Some(e.to_string());
            return Err(ServiceError::Rcon { message: e.to_string(), report: None });
        }
    };
    let run = tokio::task::spawn_blocking(move || {
        let mut session = session;
        let progress = job.clone();
        let mut on_result = |r: &crate::rcon::CommandResult| {
            if let Ok(mut st) = progress.lock() {
                st.sent += 1;
                if !r.ok {
                    st.failed.push(FailedCommand { index: r.index, command: r.command.clone(), error: r.error.clone() });
                }
            }
        };
        let outcome = dispatch_commands(&mut session, &commands, &opts, &cancel, &mut on_result);
        if let Ok(mut st) = job.lock() {
            match &outcome {
                Ok(r) if r.cancelled => st.state = JobState::Cancelled,
                Ok(r) if r.is_success() => st.state = JobState::Done,
                Ok(r) => {
                    st.state = JobState::Failed;
                    st.failed = failures(r);
                    if r.aborted {
                        st.error = Some("aborted after repeated failures".into());
                    }
                }
                Err(e) => {
                    st.state = JobState::Failed;
                    st.error = Some(e.to_string());
                }
            }
        }
        outcome
    });
    if !req.wait {
        let st = h.job.lock().map_err(internal)?.clone();
        return Ok((StatusCode::ACCEPTED, Json(st)).into_response());
    }
    match run.await.map_err(internal)? {
        Ok(r) if r.is_success() || r.cancelled => {
            let st = h.job.lock().map_err(internal)?.clone();
            Ok(Json(st).into_response())
        }
        Ok(r) => Err(ServiceError::Rcon { message: format!("{} of {} commands failed", r.failed().len(), r.total), report: Some(r) }),
        Err(e) => Err(ServiceError::Rcon { message: e.to_string(), report: None }),
    }
}

async fn get_status(State(s): State<ServiceState>, UrlPath(id): UrlPath<String>) -> Result<Json<JobStatus>, ServiceError> {
    let h = blocking(move || s.project(&id)).await?;
    let st = h.job.lock().map_err(internal)?.clone();
    Ok(Json(st))
}

async fn post_cancel(State(s): State<ServiceState>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ServiceError> {
    let h = blocking(move || s.project(&id)).await?;
    let running = h.job.lock().map_err(internal)?.state == JobState::Running;
    if running {
        h.cancel.lock().map_err(internal)?.store(true, Ordering::SeqCst);
    }
    Ok(Json(json!({ "cancelling": running })))
}
