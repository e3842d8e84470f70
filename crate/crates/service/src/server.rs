//! Streaming HTTP API.
//!
//! One engine task owns the replay session and the engagement log: it steps
//! the clock, publishes events, and applies operator actions in arrival
//! order. A watcher task re-reads the feed directory and the model files
//! when they change; models reach the engine as atomically swapped
//! snapshots.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime};

use anyhow::{Context, Result};
use arc_swap::{ArcSwap, ArcSwapOption};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::{Stream, StreamExt};

use inciplan::associator::{PlanKeyMatrix, RankModel};
use inciplan::domain::{Actor, EngagementAction, EngagementRecord, Minutes, NetworkDefinition, NetworkModel, PlanId};
use inciplan::ingest::feeds::{ALERTS_FILE, CLOSURES_FILE, SPEEDS_FILE, WEATHER_FILE};
use inciplan::ingest::Feeds;
use inciplan::scenario::{QueryBuilder, RecommendationEvent, Recommender, ReplaySession};

use crate::config::Config;
use crate::log::EngagementLog;
use crate::pipeline::{default_start, load_inputs, load_keys, load_predictor, require_models, LoadedPredictor};

/// Models currently used by the engine.
pub struct ModelSnapshot {
    pub generation: u64,
    pub predictor: LoadedPredictor,
    pub rank: RankModel,
}

fn load_models(cfg: &Config, generation: u64) -> Result<ModelSnapshot> {
    let path = cfg.paths.rank_model();
    Ok(ModelSnapshot {
        generation,
        predictor: load_predictor(&cfg.paths.predictor_checkpoint())?,
        rank: RankModel::load(&path).with_context(|| format!("associator {}", path.display()))?,
    })
}

/// Body of `POST /engagements`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngagementRequest {
    pub plan_id: PlanId,
    pub action: EngagementAction,
    pub timestamp: Minutes,
    #[serde(default = "operator")]
    pub actor: Actor,
}

fn operator() -> Actor {
    Actor::Operator
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

enum Command {
    Engage(EngagementRequest, oneshot::Sender<Result<EngagementRecord, ApiError>>),
    Feeds(Feeds),
}

struct Shared {
    network: NetworkDefinition,
    plans: String,
    current: ArcSwapOption<RecommendationEvent>,
    events: broadcast::Sender<RecommendationEvent>,
    engagements: ArcSwap<Vec<EngagementRecord>>,
    models: ArcSwap<ModelSnapshot>,
    commands: mpsc::Sender<Command>,
    /// Ends open event streams so shutdown does not wait on them.
    stopped: watch::Receiver<bool>,
}

type AppState = Arc<Shared>;

struct Engine {
    shared: AppState,
    session: ReplaySession,
    network: NetworkModel,
    log: EngagementLog,
    generation: u64,
    /// Latest speed record seen; the clock never runs past it.
    available: Option<Minutes>,
    log_model_changes: bool,
}

fn latest_speed(feeds: &Feeds) -> Option<Minutes> {
    feeds.speeds.iter().map(|r| r.timestamp).max()
}

impl Engine {
    fn refresh_models(&mut self) -> Result<()> {
        let snap = self.shared.models.load();
        if snap.generation == self.generation {
            return Ok(());
        }
        self.session.recommender.set_rank(snap.rank.clone());
        self.session.queries.set_forecaster(snap.predictor.forecaster(&self.network)?);
        self.generation = snap.generation;
        tracing::info!(generation = snap.generation, "models reloaded");
        Ok(())
    }

    fn tick(&mut self) -> Result<()> {
        if self.session.finished() || self.available.is_none_or(|a| self.session.now() > a) {
            return Ok(());
        }
        self.refresh_models()?;
        let Some((_, event)) = self.session.step()? else {
            return Ok(());
        };
        if event.changed && self.log_model_changes {
            let action = if event.active_plan.is_null() {
                EngagementAction::Stop
            } else {
                EngagementAction::Activate
            };
            let record = EngagementRecord {
                timestamp: event.timestamp,
                plan_id: event.active_plan.clone(),
                action,
                actor: Actor::Model,
            };
            match self.log.append(record) {
                Ok(()) => self.publish_log(),
                Err(e) => tracing::warn!(error = %e, "model plan change not logged"),
            }
        }
        self.shared.current.store(Some(Arc::new(event.clone())));
        // No subscribers is not an error.
        let _ = self.shared.events.send(event);
        Ok(())
    }

    fn publish_log(&self) {
        self.shared.engagements.store(Arc::new(self.log.records().to_vec()));
    }

    fn engage(&mut self, req: EngagementRequest) -> Result<EngagementRecord, ApiError> {
        let keys: &PlanKeyMatrix = self.session.recommender.keys();
        let active = self.session.recommender.state().active_plan.clone();
        let target = match req.action {
            EngagementAction::Stop => {
                if active.is_null() {
                    return Err(ApiError::Conflict("no plan is active to stop".into()));
                }
                PlanId::null()
            }
            EngagementAction::Activate | EngagementAction::Override => {
                if req.plan_id.is_null() {
                    return Err(ApiError::BadRequest("use action \"stop\" to return to the null plan".into()));
                }
                req.plan_id.clone()
            }
        };
        if keys.index_of(&req.plan_id).is_none() {
            return Err(ApiError::BadRequest(format!("unknown plan {}", req.plan_id.as_str())));
        }
        let record = EngagementRecord {
            timestamp: req.timestamp,
            plan_id: req.plan_id,
            action: req.action,
            actor: req.actor,
        };
        self.log.append(record.clone()).map_err(|e| match e {
            crate::log::LogError::OutOfOrder { .. } => ApiError::Conflict(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        })?;
        self.publish_log();
        self.session
            .recommender
            .force(&target, record.timestamp)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        Ok(record)
    }

    async fn run(mut self, mut commands: mpsc::Receiver<Command>, step: Duration, mut stop: watch::Receiver<bool>) {
        let mut clock = tokio::time::interval(step);
        clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                _ = clock.tick() => {
                    if let Err(e) = self.tick() {
                        tracing::error!(error = %format!("{e:#}"), "clock step failed; clock stopped");
                        self.available = None;
                    }
                }
                cmd = commands.recv() => match cmd {
                    Some(Command::Engage(req, reply)) => {
                        let _ = reply.send(self.engage(req));
                    }
                    Some(Command::Feeds(feeds)) => {
                        self.available = latest_speed(&feeds);
                        self.session.queries.refresh(&feeds);
                    }
                    None => break,
                },
                _ = stop.changed() => break,
            }
        }
    }
}

/// Modification stamps of a set of files; missing files stamp as `None`.
fn stamps(paths: &[PathBuf]) -> Vec<Option<(SystemTime, u64)>> {
    paths
        .iter()
        .map(|p| std::fs::metadata(p).ok().and_then(|m| Some((m.modified().ok()?, m.len()))))
        .collect()
}

fn feed_files(dir: &Path) -> Vec<PathBuf> {
    [SPEEDS_FILE, ALERTS_FILE, CLOSURES_FILE, WEATHER_FILE]
        .into_iter()
        .map(|f| dir.join(f))
        .collect()
}

async fn watch_files(cfg: Config, shared: AppState, mut stop: watch::Receiver<bool>) {
    let feed_paths = feed_files(&cfg.paths.feeds);
    let model_paths = vec![cfg.paths.predictor_checkpoint(), cfg.paths.rank_model()];
    let mut feeds_seen = stamps(&feed_paths);
    let mut models_seen = stamps(&model_paths);
    let mut every = tokio::time::interval(Duration::from_millis(cfg.service.watch_interval_ms.max(1)));
    loop {
        tokio::select! {
            _ = every.tick() => {}
            _ = stop.changed() => return,
        }
        let now = stamps(&feed_paths);
        if now != feeds_seen {
            let dir = cfg.paths.feeds.clone();
            match tokio::task::spawn_blocking(move || Feeds::read_dir(&dir)).await {
                Ok(Ok(feeds)) => {
                    feeds_seen = now;
                    if shared.commands.send(Command::Feeds(feeds)).await.is_err() {
                        return;
                    }
                }
                // Possibly mid-write; retried on the next tick.
                Ok(Err(e)) => tracing::debug!(error = %e, "feed directory not readable yet"),
                Err(e) => tracing::error!(error = %e, "feed reader panicked"),
            }
        }
        let now = stamps(&model_paths);
        if now != models_seen {
            let generation = shared.models.load().generation + 1;
            let c = cfg.clone();
            match tokio::task::spawn_blocking(move || load_models(&c, generation)).await {
                Ok(Ok(snap)) => {
                    models_seen = now;
                    shared.models.store(Arc::new(snap));
                }
                Ok(Err(e)) => tracing::debug!(error = %format!("{e:#}"), "model files not loadable yet"),
                Err(e) => tracing::error!(error = %e, "model loader panicked"),
            }
        }
    }
}

// ---------------------------------------------------------------- handlers

async fn get_network(State(s): State<AppState>) -> Json<NetworkDefinition> {
    Json(s.network.clone())
}

async fn get_plans(State(s): State<AppState>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], s.plans.clone()).into_response()
}

async fn get_current(State(s): State<AppState>) -> Result<Json<RecommendationEvent>, ApiError> {
    s.current
        .load_full()
        .map(|e| Json((*e).clone()))
        .ok_or_else(|| ApiError::NotFound("no recommendation yet".into()))
}

#[derive(Deserialize)]
struct Since {
    since: Option<Minutes>,
}

async fn get_engagements(State(s): State<AppState>, Query(q): Query<Since>) -> Json<Vec<EngagementRecord>> {
    let since = q.since.unwrap_or(Minutes::MIN);
    Json(s.engagements.load().iter().filter(|r| r.timestamp >= since).cloned().collect())
}

async fn post_engagement(
    State(s): State<AppState>,
    Json(req): Json<EngagementRequest>,
) -> Result<(StatusCode, Json<EngagementRecord>), ApiError> {
    let (tx, rx) = oneshot::channel();
    let gone = || ApiError::Internal("recommendation engine stopped".into());
    s.commands.send(Command::Engage(req, tx)).await.map_err(|_| gone())?;
    let record = rx.await.map_err(|_| gone())??;
    Ok((StatusCode::CREATED, Json(record)))
}

fn event_stream(s: &Shared) -> impl Stream<Item = Result<Event, Infallible>> {
    // Subscribe before reading the current event so nothing falls in between;
    // the timestamp filter drops the overlap.
    let live = BroadcastStream::new(s.events.subscribe()).filter_map(|r| r.ok());
    let first = s.current.load_full().map(|e| (*e).clone());
    let mut last = Minutes::MIN;
    let mut stopped = s.stopped.clone();
    let events = tokio_stream::iter(first).chain(live).filter_map(move |e| {
        if e.timestamp <= last {
            return None;
        }
        last = e.timestamp;
        let ev = Event::default()
            .id(e.timestamp.to_string())
            .event("recommendation")
            .json_data(&e)
            .expect("serializable");
        Some(Ok(ev))
    });
    futures::StreamExt::take_until(events, async move {
        let _ = stopped.wait_for(|&s| s).await;
    })
}

async fn get_stream(State(s): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    Sse::new(event_stream(&s)).keep_alive(KeepAlive::default())
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/network", get(get_network))
        .route("/plans", get(get_plans))
        .route("/state/stream", get(get_stream))
        .route("/recommendations/current", get(get_current))
        .route("/engagements", get(get_engagements).post(post_engagement))
        .with_state(state)
}

// ---------------------------------------------------------------- startup

/// A running service.
pub struct Server {
    pub addr: SocketAddr,
    stop: watch::Sender<bool>,
    tasks: Vec<tokio::task::JoinHandle<()>>,
}

impl Server {
    /// Loads models, feeds and the log, binds `cfg.service.bind` and starts
    /// the clock.
    pub async fn start(cfg: Config) -> Result<Self> {
        require_models(&cfg)?;
        let c = cfg.clone();
        let (inputs, keys, models, plans, log) = tokio::task::spawn_blocking(move || -> Result<_> {
            let inputs = load_inputs(&c)?;
            let keys = load_keys(&c, &inputs.network)?;
            let models = load_models(&c, 0)?;
            let plans = std::fs::read_to_string(&c.paths.plans)
                .with_context(|| format!("plans {}", c.paths.plans.display()))?;
            let log = EngagementLog::open(&c.paths.engagements)?;
            Ok((inputs, keys, models, plans, log))
        })
        .await??;

        let network = inputs.network.clone();
        let start = default_start(&cfg, &inputs.feeds).context("feed directory has no speed records")?;
        let end = cfg.service.end.unwrap_or(Minutes::MAX / 2);
        let queries = QueryBuilder::new(
            network.clone(),
            inputs.calendar.clone(),
            &inputs.feeds,
            models.predictor.forecaster(&network)?,
        );
        let recommender = Recommender::new(keys, models.rank.clone(), &network, cfg.associator.dwell);
        let (commands, rx) = mpsc::channel(64);
        let (events, _) = broadcast::channel(1024);
        let (stop, stopped) = watch::channel(false);
        let shared = Arc::new(Shared {
            network: network.to_definition(),
            plans,
            current: ArcSwapOption::empty(),
            events,
            engagements: ArcSwap::from_pointee(log.records().to_vec()),
            models: ArcSwap::from_pointee(models),
            commands,
            stopped: stopped.clone(),
        });
        let engine = Engine {
            shared: shared.clone(),
            session: ReplaySession::new(queries, recommender, start, end),
            network,
            log,
            generation: 0,
            available: latest_speed(&inputs.feeds),
            log_model_changes: cfg.service.log_model_changes,
        };

        let listener = tokio::net::TcpListener::bind(&cfg.service.bind)
            .await
            .with_context(|| format!("cannot bind {}", cfg.service.bind))?;
        let addr = listener.local_addr()?;
        let step = Duration::from_millis(cfg.service.step_interval_ms.max(1));
        let mut tasks = vec![
            tokio::spawn(engine.run(rx, step, stopped.clone())),
            tokio::spawn(watch_files(cfg, shared.clone(), stopped.clone())),
        ];
        let app = router(shared);
        let mut shutdown = stopped;
        tasks.push(tokio::spawn(async move {
            let serve = axum::serve(listener, app).with_graceful_shutdown(async move {
                let _ = shutdown.changed().await;
            });
            if let Err(e) = serve.await {
                tracing::error!(error = %e, "http server failed");
            }
        }));
        tracing::info!(%addr, start, "serving");
        Ok(Self { addr, stop, tasks })
    }

    /// Stops the clock, the watcher and the listener.
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }
}
