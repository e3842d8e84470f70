//! A small fixture workspace: one week of the default network with the four
//! engaged incidents, and a config sized for quick training.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use inciplan::scenario::{default_spec, ScenarioSpec, HISTORY_DAYS};
use inciplan_service::Config;

pub const SEED: u64 = 7;

/// The last three history days and the four engagement days of the fixture.
pub fn short_spec(seed: u64) -> ScenarioSpec {
    let mut spec = default_spec(seed);
    let skip = HISTORY_DAYS - 3;
    spec.incidents.retain(|i| i.day >= skip);
    for i in &mut spec.incidents {
        i.day -= skip;
    }
    spec.start_date += chrono::TimeDelta::days(i64::from(skip));
    spec.days -= skip;
    spec
}

pub fn config(root: &Path) -> Config {
    let mut c = Config {
        seed: SEED,
        ..Config::default()
    };
    let feeds = root.join("feeds");
    c.paths.network = feeds.join("network.json");
    c.paths.plans = feeds.join("plans.json");
    c.paths.engagements = feeds.join("engagements.jsonl");
    c.paths.feeds = feeds;
    c.paths.scenario = Some(root.join("scenario.json"));
    c.paths.frames = root.join("frames");
    c.paths.checkpoints = root.join("checkpoints");
    c.paths.reports = root.join("reports");
    let s = &mut c.predictor.settings;
    s.model.hidden = 8;
    s.model.attention_hidden = 8;
    s.model.layers = 1;
    s.train.max_epochs = 2;
    s.train.batch_size = 64;
    c.predictor.lasso_lags = 1;
    c.predictor.lasso.n_alphas = 5;
    c.service.bind = "127.0.0.1:0".into();
    c.service.step_interval_ms = 10;
    c.service.watch_interval_ms = 50;
    c
}

/// Writes the short scenario spec and the config file under `root`.
pub fn workspace(root: &Path) -> (Config, PathBuf) {
    short_spec(SEED).save(&root.join("scenario.json")).unwrap();
    let cfg = config(root);
    let path = root.join("inciplan.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    (cfg, path)
}

/// Workspace with feeds generated and both models trained in-process.
pub fn trained(root: &Path) -> Config {
    let (cfg, _) = workspace(root);
    inciplan_service::pipeline::generate(&cfg, None).unwrap();
    inciplan_service::pipeline::train_predictor(&cfg, SEED).unwrap();
    inciplan_service::pipeline::train_associator(&cfg).unwrap();
    cfg
}
