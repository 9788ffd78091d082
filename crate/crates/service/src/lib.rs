//! HTTP interface for a labeling campaign.
//!
//! Annotators pull items from `GET /api/queue`, send labels to
//! `POST /api/labels`; `POST /api/rounds/advance` closes the round and
//! `GET /api/stats` returns the dashboard. All mutations go through one
//! write lock, and the dashboard is a snapshot refreshed after each write,
//! so stats stay readable while a round is advancing.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;
use tower_http::cors::{AllowOrigin, CorsLayer};
use weaklab::campaign::{
    append_round, read_jsonl_log, read_rounds, Campaign, CampaignConfig, Dashboard, LabelSubmission, QueueItem,
    RoundSummary, SubmissionOutcome,
};
use weaklab::{Dataset, Error, LabelMatrix};

pub const DEFAULT_QUEUE_LIMIT: usize = 20;

/// Where a served project keeps its state.
#[derive(Debug, Clone)]
pub struct ProjectStore {
    /// Append-only log of closed rounds.
    pub rounds_log: PathBuf,
    /// Holds `matrix.jsonl` (current votes) and `pending.jsonl`
    /// (submissions of the open round).
    pub state_dir: PathBuf,
}

impl ProjectStore {
    pub fn matrix_path(&self) -> PathBuf {
        self.state_dir.join("matrix.jsonl")
    }

    pub fn pending_path(&self) -> PathBuf {
        self.state_dir.join("pending.jsonl")
    }
}

#[derive(Debug)]
pub struct Project {
    campaign: Campaign,
    store: Option<ProjectStore>,
}

impl Project {
    /// A project kept in memory only.
    pub fn in_memory(campaign: Campaign) -> Self {
        Project { campaign, store: None }
    }

    /// Opens a persisted project, replaying the rounds log and any pending
    /// submissions on top of the initial matrix.
    pub fn open(
        dataset: Dataset,
        initial: LabelMatrix,
        config: CampaignConfig,
        annotators: &[String],
        store: ProjectStore,
    ) -> weaklab::Result<Self> {
        std::fs::create_dir_all(&store.state_dir).map_err(|e| io_error(&store.state_dir, e))?;
        let rounds = read_rounds(&store.rounds_log)?;
        let mut campaign = Campaign::replay(dataset, initial, config, &rounds)?;
        for id in annotators {
            campaign.register_annotator(id)?;
        }
        let pending: Vec<LabelSubmission> = read_jsonl_log(store.pending_path())?;
        for s in pending {
            if !campaign.annotators().any(|a| a == s.annotator) {
                campaign.register_annotator(&s.annotator)?;
            }
            campaign.submit(s)?;
        }
        let project = Project {
            campaign,
            store: Some(store),
        };
        project.write_matrix()?;
        Ok(project)
    }

    pub fn campaign(&self) -> &Campaign {
        &self.campaign
    }

    fn write_matrix(&self) -> weaklab::Result<()> {
        let Some(store) = &self.store else { return Ok(()) };
        let text = self.campaign.matrix().to_jsonl_string(self.campaign.dataset())?;
        write_atomic(&store.matrix_path(), text.as_bytes())
    }

    pub fn submit(&mut self, mut submission: LabelSubmission) -> weaklab::Result<SubmissionOutcome> {
        if !(submission.latency_seconds.is_finite() && submission.latency_seconds >= 0.0) {
            return Err(Error::InvalidConfig("latency_seconds must be a non-negative number".into()));
        }
        if submission.timestamp_ms == 0 {
            submission.timestamp_ms = now_ms();
        }
        let outcome = self.campaign.submit(submission.clone())?;
        if let Some(store) = &self.store {
            let mut line = serde_json::to_string(&submission)?;
            line.push('\n');
            append(&store.pending_path(), line.as_bytes())?;
            self.write_matrix()?;
        }
        Ok(outcome)
    }

    pub fn advance(&mut self, force: bool) -> weaklab::Result<RoundSummary> {
        let summary = self.campaign.advance(force)?;
        if let Some(store) = &self.store {
            let closed = self.campaign.history().last().expect("advance records the round");
            append_round(&store.rounds_log, closed)?;
            write_atomic(&store.pending_path(), b"")?;
            self.write_matrix()?;
        }
        Ok(summary)
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn append(path: &Path, bytes: &[u8]) -> weaklab::Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_error(path, e))?;
    file.write_all(bytes)
        .and_then(|_| file.sync_data())
        .map_err(|e| io_error(path, e))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> weaklab::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut file = File::create(&tmp).map_err(|e| io_error(&tmp, e))?;
    file.write_all(bytes)
        .and_then(|_| file.sync_data())
        .map_err(|e| io_error(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

pub struct AppState {
    project: Arc<RwLock<Project>>,
    stats: std::sync::RwLock<Arc<Dashboard>>,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    pub fn new(project: Project) -> SharedState {
        let stats = Arc::new(project.campaign.dashboard());
        Arc::new(AppState {
            project: Arc::new(RwLock::new(project)),
            stats: std::sync::RwLock::new(stats),
        })
    }

    pub fn stats(&self) -> Arc<Dashboard> {
        self.stats.read().expect("stats lock").clone()
    }

    fn publish(&self, dashboard: Dashboard) {
        *self.stats.write().expect("stats lock") = Arc::new(dashboard);
    }

    /// Read access to the project, e.g. for inspection in tests.
    pub async fn project(&self) -> tokio::sync::RwLockReadGuard<'_, Project> {
        self.project.read().await
    }

    /// Takes the writer lock, the same one submissions and advances hold.
    pub async fn lock_exclusive(&self) -> tokio::sync::OwnedRwLockWriteGuard<Project> {
        self.project.clone().write_owned().await
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownAnnotator(_) | Error::NotIssued(_) | Error::UnknownExample(_) => StatusCode::NOT_FOUND,
            Error::UnknownClass(_) | Error::InvalidConfig(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::BatchIncomplete(_) | Error::DiscardedLf(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct QueueParams {
    pub annotator: String,
    pub limit: Option<usize>,
}

async fn queue(State(state): State<SharedState>, Query(params): Query<QueueParams>) -> Result<Json<Vec<QueueItem>>, ApiError> {
    let project = state.project.read().await;
    let campaign = &project.campaign;
    if !campaign.annotators().any(|a| a == params.annotator) {
        return Err(Error::UnknownAnnotator(params.annotator).into());
    }
    if campaign.batch().is_empty() {
        return Err(ApiError::new(StatusCode::CONFLICT, "no active round: the pool is exhausted"));
    }
    let items = campaign.queue(&params.annotator, params.limit.unwrap_or(DEFAULT_QUEUE_LIMIT))?;
    Ok(Json(items))
}

async fn labels(
    State(state): State<SharedState>,
    Json(submission): Json<LabelSubmission>,
) -> Result<Json<SubmissionOutcome>, ApiError> {
    let mut project = state.project.clone().write_owned().await;
    let shared = state.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = project.submit(submission)?;
        shared.publish(project.campaign.dashboard());
        Ok(Json(outcome))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Debug, Default, Deserialize)]
pub struct AdvanceParams {
    #[serde(default)]
    pub force: bool,
}

async fn advance(State(state): State<SharedState>, Query(params): Query<AdvanceParams>) -> Result<Json<RoundSummary>, ApiError> {
    let mut project = state.project.clone().write_owned().await;
    let shared = state.clone();
    tokio::task::spawn_blocking(move || {
        let summary = project.advance(params.force)?;
        shared.publish(project.campaign.dashboard());
        Ok(Json(summary))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn stats(State(state): State<SharedState>) -> Json<Dashboard> {
    Json(state.stats().as_ref().clone())
}

/// Routes with CORS for `allowed_origin`, or for any origin when `None`.
pub fn router(state: SharedState, allowed_origin: Option<HeaderValue>) -> Router {
    let origin = match allowed_origin {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api/queue", get(queue))
        .route("/api/labels", post(labels))
        .route("/api/rounds/advance", post(advance))
        .route("/api/stats", get(stats))
        .layer(cors)
        .with_state(state)
}

/// Serves until Ctrl-C.
pub fn run(addr: SocketAddr, project: Project, allowed_origin: Option<&str>) -> std::io::Result<()> {
    let allowed_origin = allowed_origin
        .map(|o| {
            HeaderValue::from_str(o)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("bad origin `{o}`: {e}")))
        })
        .transpose()?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        let app = router(AppState::new(project), allowed_origin);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}
