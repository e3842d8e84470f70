mod common;

use std::time::Duration;

use futures::StreamExt;
use serde_json::{json, Value};

use inciplan::associator::{RankModel, METRIC_WIDTH};
use inciplan::domain::{Actor, EngagementRecord, Minutes};
use inciplan::ingest::Feeds;
use inciplan::scenario::RecommendationEvent;
use inciplan_service::{Config, Server};

struct Running {
    _dir: tempfile::TempDir,
    cfg: Config,
    server: Server,
    base: String,
    http: reqwest::Client,
}

async fn start_with(prepare: impl FnOnce(&mut Config) + Send + 'static) -> Running {
    let (dir, cfg) = tokio::task::spawn_blocking(move || {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = common::trained(dir.path());
        // The training log holds records days ahead of the server clock.
        cfg.paths.engagements = dir.path().join("live.jsonl");
        prepare(&mut cfg);
        (dir, cfg)
    })
    .await
    .unwrap();
    let server = Server::start(cfg.clone()).await.unwrap();
    let base = format!("http://{}", server.addr);
    Running {
        _dir: dir,
        cfg,
        server,
        base,
        http: reqwest::Client::new(),
    }
}

impl Running {
    async fn get(&self, path: &str) -> reqwest::Response {
        self.http.get(format!("{}{path}", self.base)).send().await.unwrap()
    }

    async fn post(&self, body: Value) -> reqwest::Response {
        self.http
            .post(format!("{}/engagements", self.base))
            .json(&body)
            .send()
            .await
            .unwrap()
    }

    async fn current(&self) -> RecommendationEvent {
        for _ in 0..500 {
            let r = self.get("/recommendations/current").await;
            if r.status() == 200 {
                return r.json().await.unwrap();
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("no recommendation within 5 s");
    }

    /// Waits for an event stamped after `t`.
    async fn after(&self, t: Minutes) -> RecommendationEvent {
        for _ in 0..1000 {
            let e = self.current().await;
            if e.timestamp > t {
                return e;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        panic!("clock did not pass {t}");
    }
}

/// Reads `n` server-sent events from the stream.
async fn read_stream(base: &str, n: usize) -> Vec<(String, RecommendationEvent)> {
    let resp = reqwest::get(format!("{base}/state/stream")).await.unwrap();
    assert_eq!(resp.status(), 200);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
    let mut body = resp.bytes_stream();
    let mut buf = String::new();
    let mut out = Vec::new();
    while out.len() < n {
        let chunk = tokio::time::timeout(Duration::from_secs(10), body.next())
            .await
            .expect("stream stalled")
            .expect("stream ended")
            .unwrap();
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let mut id = None;
            let mut data = None;
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    id = Some(v.trim().to_owned());
                } else if let Some(v) = line.strip_prefix("data:") {
                    data = Some(v.trim().to_owned());
                }
            }
            if let (Some(id), Some(data)) = (id, data) {
                out.push((id, serde_json::from_str(&data).unwrap()));
            }
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn static_documents_are_served() {
    let s = start_with(|_| {}).await;
    let plans = s.get("/plans").await;
    assert_eq!(plans.status(), 200);
    assert_eq!(plans.text().await.unwrap(), std::fs::read_to_string(&s.cfg.paths.plans).unwrap());
    let net: Value = s.get("/network").await.json().await.unwrap();
    let segments = net["segments"].as_array().unwrap();
    assert_eq!(segments.len(), 32);
    assert!(segments.iter().all(|g| g["reference_speed"].as_f64().unwrap() > 0.0));
    assert!(segments.iter().all(|g| g["display"].is_array()));
    s.server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stream_is_ordered_and_scores_every_plan() {
    let s = start_with(|_| {}).await;
    let events = read_stream(&s.base, 40).await;
    for w in events.windows(2) {
        assert!(w[0].1.timestamp < w[1].1.timestamp);
        assert_eq!(w[1].1.timestamp - w[0].1.timestamp, 5);
    }
    for (id, e) in &events {
        assert_eq!(id, &e.timestamp.to_string());
        assert_eq!(e.scores.len(), 7);
        assert!(e.query_summary.contains_key("freeway"));
    }
    // A second subscriber sees the same events it overlaps with.
    let later = read_stream(&s.base, 3).await;
    assert!(later[0].1.timestamp >= events.last().unwrap().1.timestamp);
    s.server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn override_is_logged_and_forces_the_plan() {
    let s = start_with(|c| {
        c.service.log_model_changes = false;
        c.service.step_interval_ms = 50;
    })
    .await;
    let now = s.current().await.timestamp;
    let r = s.post(json!({"plan_id": "E", "action": "override", "timestamp": now})).await;
    assert_eq!(r.status(), 201);
    let rec: EngagementRecord = r.json().await.unwrap();
    assert_eq!(rec.actor, Actor::Operator);
    // Forced plans hold through the dwell period.
    let mut t = now;
    loop {
        let e = s.after(t).await;
        if e.timestamp >= now + 20 {
            break;
        }
        assert_eq!(e.active_plan.as_str(), "E", "{e:?}");
        t = e.timestamp;
    }
    assert!(t > now);
    let log: Vec<EngagementRecord> = s.get(&format!("/engagements?since={now}")).await.json().await.unwrap();
    assert_eq!(log, vec![rec.clone()]);
    let none: Vec<EngagementRecord> = s.get(&format!("/engagements?since={}", now + 1)).await.json().await.unwrap();
    assert!(none.is_empty());
    // Durable: the log file holds the record.
    assert!(inciplan_service::read_log(&s.cfg.paths.engagements).unwrap().contains(&rec));

    // After the dwell the model may have moved on; force E again and stop it.
    let t = s.current().await.timestamp;
    let again = s.post(json!({"plan_id": "E", "action": "override", "timestamp": t})).await;
    assert_eq!(again.status(), 201);
    let stop = s.post(json!({"plan_id": "E", "action": "stop", "timestamp": t})).await;
    assert_eq!(stop.status(), 201);
    let e = s.after(t).await;
    assert!(e.active_plan.is_null());
    let again = s.post(json!({"plan_id": "E", "action": "stop", "timestamp": e.timestamp})).await;
    assert_eq!(again.status(), 409);
    let body: Value = again.json().await.unwrap();
    assert!(body["error"].as_str().unwrap().contains("no plan is active"));
    s.server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn invalid_engagements_are_rejected() {
    let s = start_with(|_| {}).await;
    let now = s.current().await.timestamp;
    let ok = s.post(json!({"plan_id": "A", "action": "activate", "timestamp": now})).await;
    assert_eq!(ok.status(), 201);
    let stale = s.post(json!({"plan_id": "B", "action": "override", "timestamp": now - 5})).await;
    assert_eq!(stale.status(), 409);
    let unknown = s.post(json!({"plan_id": "Z", "action": "override", "timestamp": now})).await;
    assert_eq!(unknown.status(), 400);
    let null = s.post(json!({"plan_id": "NULL", "action": "activate", "timestamp": now})).await;
    assert_eq!(null.status(), 400);
    let malformed = s.post(json!({"plan_id": "A", "action": "pause", "timestamp": now})).await;
    assert!(malformed.status().is_client_error());
    let log: Vec<EngagementRecord> = s.get("/engagements").await.json().await.unwrap();
    assert_eq!(log.iter().filter(|r| r.actor == Actor::Operator).count(), 1);
    s.server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn model_changes_are_logged_with_their_actor() {
    // The engaged day of plan A.
    let s = start_with(|c| {
        let day = inciplan::ingest::calendar::from_datetime(
            common::short_spec(common::SEED).start_date.and_hms_opt(0, 0, 0).unwrap(),
        ) + 3 * 1440;
        c.service.start = Some(day + 420);
        c.service.end = Some(day + 600);
        c.service.step_interval_ms = 2;
    })
    .await;
    let end = s.cfg.service.end.unwrap();
    for _ in 0..2000 {
        if s.current().await.timestamp == end {
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let log: Vec<EngagementRecord> = s.get("/engagements").await.json().await.unwrap();
    let model: Vec<_> = log.iter().filter(|r| r.actor == Actor::Model).collect();
    assert!(!model.is_empty(), "the model never changed plan");
    assert!(log.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    s.server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn clock_waits_for_feeds_and_resumes_when_they_arrive() {
    let s = start_with(|c| {
        let feeds = Feeds::read_dir(&c.paths.feeds).unwrap();
        let first = feeds.speeds.iter().map(|r| r.timestamp).min().unwrap();
        let cut = first + 60;
        c.service.start = Some(first);
        feeds.write_dir(&c.paths.feeds.with_file_name("full")).unwrap();
        feeds.up_to(cut).write_dir(&c.paths.feeds).unwrap();
    })
    .await;
    let first = s.cfg.service.start.unwrap();
    s.current().await;
    tokio::time::sleep(Duration::from_millis(400)).await;
    let stalled = s.current().await.timestamp;
    assert_eq!(stalled, first + 60);
    // Feeds arrive: the watcher re-reads the directory and the clock moves on.
    let dir = s.cfg.paths.feeds.clone();
    tokio::task::spawn_blocking(move || {
        Feeds::read_dir(&dir.with_file_name("full")).unwrap().write_dir(&dir).unwrap();
    })
    .await
    .unwrap();
    let e = s.after(stalled + 30).await;
    assert!(e.timestamp > stalled);
    s.server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn replaced_ranker_is_picked_up() {
    let s = start_with(|_| {}).await;
    s.current().await;
    let flat = RankModel::zeros(1.0);
    assert_eq!(flat.weights.len(), METRIC_WIDTH);
    let path = s.cfg.paths.rank_model();
    tokio::task::spawn_blocking(move || flat.save(&path).unwrap()).await.unwrap();
    for _ in 0..400 {
        let e = s.current().await;
        if e.scores.iter().all(|p| p.score == e.scores[0].score) {
            s.server.shutdown().await;
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("reloaded ranker never used");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn missing_models_fail_startup_listing_paths() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = common::workspace(dir.path());
    let err = Server::start(cfg.clone()).await.err().expect("must fail");
    let msg = format!("{err:#}");
    assert!(msg.contains(&cfg.paths.predictor_checkpoint().display().to_string()), "{msg}");
    assert!(msg.contains(&cfg.paths.rank_model().display().to_string()), "{msg}");
}
