//! The pipeline stages behind each CLI verb. Each reads its inputs from the
//! configured paths and writes its outputs next to them.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use inciplan::associator::{PlanFile, PlanKeyMatrix, RankModel};
use inciplan::domain::{Actor, EngagementRecord, Minutes, NetworkModel};
use inciplan::ingest::calendar::{date_of, day_start, from_datetime};
use inciplan::ingest::frames::{write_frames, FRAMES_FILE};
use inciplan::ingest::feeds::write_jsonl;
use inciplan::ingest::{build_frames, Calendar, Feeds, FrameScaler, IngestOptions, RawFrame};
use inciplan::predictor::fit::{horizon_scores, FittedPredictor};
use inciplan::predictor::{
    comparison_table, fit_predictor, render_table, temporal_block_split, HorizonMetrics, Metric, PredictorSettings,
    Seq2Seq, SequenceDataset,
};
use inciplan::scenario::{
    default_spec, generate as generate_scenario, leave_one_out, read_calendar, replay_report, train_associator as fit_ranker,
    Forecaster, LooReport, ModelForecaster, QueryBuilder, Recommender, ReplayReport, ReplaySession, ScenarioSpec,
    NETWORK_FILE,
};

use crate::config::Config;
use crate::log::read_log;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const EVALUATION_TEXT: &str = "evaluation.txt";
pub const EVALUATION_JSON: &str = "evaluation.json";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid {}", path.display()))
}

/// Feeds, calendar and the network with the reference speeds ingest derives.
pub struct Inputs {
    pub network: NetworkModel,
    pub calendar: Calendar,
    pub feeds: Feeds,
    pub frames: Vec<RawFrame>,
}

pub fn load_inputs(cfg: &Config) -> Result<Inputs> {
    let p = &cfg.paths;
    if !p.feeds.is_dir() {
        bail!("feed directory {} does not exist", p.feeds.display());
    }
    let network = NetworkModel::load(&p.network).with_context(|| format!("network {}", p.network.display()))?;
    let feeds = Feeds::read_dir(&p.feeds).with_context(|| format!("feeds in {}", p.feeds.display()))?;
    let calendar = read_calendar(&p.feeds)?;
    let out = build_frames(
        &network,
        &feeds,
        &IngestOptions {
            day_window: cfg.ingest.day_window.map(|[a, b]| (a, b)),
            calendar: calendar.clone(),
            empirical_reference: cfg.ingest.empirical_reference,
        },
    )?;
    Ok(Inputs {
        network: out.network,
        calendar,
        feeds,
        frames: out.frames,
    })
}

pub fn load_keys(cfg: &Config, network: &NetworkModel) -> Result<PlanKeyMatrix> {
    let file = PlanFile::load(&cfg.paths.plans).with_context(|| format!("plans {}", cfg.paths.plans.display()))?;
    Ok(PlanKeyMatrix::build(&file, network)?)
}

/// Operator records only: the model's own plan changes are logged too but
/// are not ground truth.
pub fn operator_log(cfg: &Config) -> Result<Vec<EngagementRecord>> {
    let path = &cfg.paths.engagements;
    let all = read_log(path).with_context(|| format!("engagement log {}", path.display()))?;
    Ok(all.into_iter().filter(|r| r.actor == Actor::Operator).collect())
}

fn engagement_days(log: &[EngagementRecord]) -> BTreeSet<NaiveDate> {
    log.iter().map(|r| date_of(r.timestamp)).collect()
}

// ---------------------------------------------------------------- generate

pub fn generate(cfg: &Config, seed: Option<u64>) -> Result<PathBuf> {
    let mut spec = match &cfg.paths.scenario {
        Some(path) => ScenarioSpec::load(path).with_context(|| format!("scenario {}", path.display()))?,
        None => default_spec(cfg.seed),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let out = generate_scenario(&spec)?;
    let dir = &cfg.paths.feeds;
    out.write_dir(dir)?;
    Ok(dir.clone())
}

// ---------------------------------------------------------------- ingest

pub fn ingest(cfg: &Config) -> Result<usize> {
    let inputs = load_inputs(cfg)?;
    let dir = &cfg.paths.frames;
    create_dir(dir)?;
    write_frames(&dir.join(FRAMES_FILE), &inputs.frames)?;
    inputs.network.save(&dir.join(NETWORK_FILE))?;
    Ok(inputs.frames.len())
}

// ---------------------------------------------------------------- predictor

/// Everything needed to rebuild the training split of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub settings: PredictorSettings,
    pub excluded_days: BTreeSet<NaiveDate>,
    pub history: inciplan::predictor::History,
    pub parameters: usize,
    /// Latest observation and the trained model on the test windows.
    pub test: Vec<HorizonMetrics>,
}

fn excluded_days(cfg: &Config) -> Result<BTreeSet<NaiveDate>> {
    if !cfg.predictor.exclude_engagement_days {
        return Ok(BTreeSet::new());
    }
    if !cfg.paths.engagements.exists() {
        tracing::warn!(path = %cfg.paths.engagements.display(), "no engagement log; no days held out");
        return Ok(BTreeSet::new());
    }
    Ok(engagement_days(&operator_log(cfg)?))
}

pub fn train_predictor(cfg: &Config, seed: u64) -> Result<TrainingRecord> {
    let inputs = load_inputs(cfg)?;
    let excluded = excluded_days(cfg)?;
    let mut settings = cfg.predictor.settings.clone();
    settings.train.seed = seed;
    let FittedPredictor {
        model,
        scaler,
        dataset,
        split,
        history,
    } = fit_predictor(&inputs.network, &inputs.frames, &excluded, &settings, |e| {
        tracing::info!(epoch = e.epoch, train = e.train_loss, validation = e.validation_loss, "epoch");
    })?;
    let test = horizon_scores(&model, &scaler, &dataset, &split.test)?;
    create_dir(&cfg.paths.checkpoints)?;
    model.save(&cfg.paths.predictor_checkpoint(), &scaler, &inputs.network.fingerprint())?;
    let record = TrainingRecord {
        settings,
        excluded_days: excluded,
        history,
        parameters: model.parameter_count(),
        test,
    };
    write_json(&cfg.paths.predictor_history(), &record)?;
    Ok(record)
}

pub struct LoadedPredictor {
    pub model: Seq2Seq,
    pub scaler: FrameScaler,
    pub fingerprint: String,
}

pub fn load_predictor(path: &Path) -> Result<LoadedPredictor> {
    let (model, scaler, fingerprint) =
        Seq2Seq::load(path).with_context(|| format!("predictor checkpoint {}", path.display()))?;
    Ok(LoadedPredictor {
        model,
        scaler,
        fingerprint,
    })
}

impl LoadedPredictor {
    pub fn forecaster(&self, network: &NetworkModel) -> Result<Box<dyn Forecaster>> {
        Ok(Box::new(ModelForecaster::new(
            self.model.clone(),
            self.scaler.clone(),
            &self.fingerprint,
            network,
        )?))
    }
}

/// Errors listing every required model file that is missing.
pub fn require_models(cfg: &Config) -> Result<()> {
    let missing: Vec<String> = [cfg.paths.predictor_checkpoint(), cfg.paths.rank_model()]
        .into_iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        bail!("missing model files: {}", missing.join(", "));
    }
    Ok(())
}

fn forecaster_factory<'a>(
    predictor: &'a LoadedPredictor,
    network: &'a NetworkModel,
) -> Result<impl FnMut() -> Box<dyn Forecaster> + 'a> {
    // Fail once, up front, on a network mismatch.
    predictor.forecaster(network)?;
    Ok(move || predictor.forecaster(network).expect("checked above"))
}

// ---------------------------------------------------------------- associator

pub fn train_associator(cfg: &Config) -> Result<RankModel> {
    let predictor = load_predictor(&cfg.paths.predictor_checkpoint())?;
    let inputs = load_inputs(cfg)?;
    let keys = load_keys(cfg, &inputs.network)?;
    let log = operator_log(cfg)?;
    let mut factory = forecaster_factory(&predictor, &inputs.network)?;
    let model = fit_ranker(
        &inputs.network,
        &inputs.calendar,
        &keys,
        &inputs.feeds,
        &log,
        &mut factory,
        &cfg.associator,
    )?;
    create_dir(&cfg.paths.checkpoints)?;
    model.save(&cfg.paths.rank_model())?;
    Ok(model)
}

// ---------------------------------------------------------------- replay

/// Day starts to replay: the given dates, or every day with an operator
/// engagement.
fn replay_days(cfg: &Config, dates: &[NaiveDate]) -> Result<Vec<Minutes>> {
    let days: BTreeSet<NaiveDate> = if dates.is_empty() {
        engagement_days(&operator_log(cfg)?)
    } else {
        dates.iter().copied().collect()
    };
    if days.is_empty() {
        bail!("nothing to replay: the engagement log is empty and no --date was given");
    }
    Ok(days
        .into_iter()
        .map(|d| from_datetime(d.and_hms_opt(0, 0, 0).expect("midnight")))
        .collect())
}

pub struct ReplayOutput {
    pub events: PathBuf,
    pub report: PathBuf,
    pub summary: ReplayReport,
}

pub fn replay(cfg: &Config, dates: &[NaiveDate]) -> Result<ReplayOutput> {
    require_models(cfg)?;
    let predictor = load_predictor(&cfg.paths.predictor_checkpoint())?;
    let rank = RankModel::load(&cfg.paths.rank_model())
        .with_context(|| format!("associator {}", cfg.paths.rank_model().display()))?;
    let inputs = load_inputs(cfg)?;
    let keys = load_keys(cfg, &inputs.network)?;
    let log = read_log(&cfg.paths.engagements).unwrap_or_default();
    let operator: Vec<EngagementRecord> = log.into_iter().filter(|r| r.actor == Actor::Operator).collect();
    let window = cfg.associator.day_window;
    let mut events = Vec::new();
    for day in replay_days(cfg, dates)? {
        let queries = QueryBuilder::new(
            inputs.network.clone(),
            inputs.calendar.clone(),
            &inputs.feeds,
            predictor.forecaster(&inputs.network)?,
        );
        let rec = Recommender::new(keys.clone(), rank.clone(), &inputs.network, cfg.associator.dwell);
        events.extend(ReplaySession::new(queries, rec, day + window[0], day + window[1]).run()?);
    }
    let summary = replay_report(&events, &operator, &keys, &inputs.network, &inputs.feeds)?;
    let dir = &cfg.paths.reports;
    create_dir(dir)?;
    let out = ReplayOutput {
        events: dir.join(EVENTS_FILE),
        report: dir.join(REPORT_FILE),
        summary,
    };
    write_jsonl(&out.events, &events)?;
    write_json(&out.report, &out.summary)?;
    Ok(out)
}

// ---------------------------------------------------------------- evaluate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Test-window scores of every forecaster, one row per model.
    pub horizon: Vec<HorizonMetrics>,
    pub leave_one_out: LooReport,
}

fn loo_text(r: &LooReport) -> String {
    use std::fmt::Write;
    let mut s = String::from("Leave-one-out plan recommendation\n");
    let _ = writeln!(s, "{:<6} {:>9} {:>7} {:>9} {:>8}", "Plan", "Precision", "Recall", "Lead min", "Weights");
    for (f, nz) in r.folds.iter().zip(&r.nonzero_weights) {
        let p = f.precision.map_or("-".into(), |p| format!("{p:.3}"));
        let lead = f.lead_time.map_or("-".into(), |l| l.to_string());
        let _ = writeln!(s, "{:<6} {p:>9} {:>7.3} {lead:>9} {nz:>8}", f.plan.as_str(), f.recall);
    }
    let _ = writeln!(s, "{:<6} {:>9.3} {:>7.3}", "Macro", r.macro_precision, r.macro_recall);
    s
}

pub fn evaluate(cfg: &Config) -> Result<(Evaluation, String)> {
    let record: TrainingRecord = read_json(&cfg.paths.predictor_history())?;
    let predictor = load_predictor(&cfg.paths.predictor_checkpoint())?;
    let inputs = load_inputs(cfg)?;
    let s = &record.settings;
    let cfg_m = &predictor.model.config;
    let dataset = SequenceDataset::build(
        &inputs.frames,
        &predictor.scaler,
        predictor.model.layout.clone(),
        cfg_m.lookback,
        cfg_m.horizon,
    )?;
    let split = temporal_block_split(
        &dataset,
        &record.excluded_days,
        s.block_len,
        s.train_fraction,
        s.validation_fraction,
        s.train.seed,
    );
    let lasso = (cfg.predictor.lasso_lags > 0).then_some((cfg.predictor.lasso_lags, &cfg.predictor.lasso));
    let horizon = comparison_table(
        &dataset,
        &inputs.frames,
        &split.train,
        &split.test,
        lasso,
        &[(&predictor.model, &predictor.scaler)],
    )?;

    let keys = load_keys(cfg, &inputs.network)?;
    let log = operator_log(cfg)?;
    let mut factory = forecaster_factory(&predictor, &inputs.network)?;
    let leave_one_out = leave_one_out(
        &inputs.network,
        &inputs.calendar,
        &keys,
        &inputs.feeds,
        &log,
        &mut factory,
        &cfg.associator,
    )?;
    let text = format!(
        "{}\n{}\n{}",
        render_table("RMSE (mph) on test windows", &horizon, Metric::Rmse),
        render_table("MAPE on test windows", &horizon, Metric::Mape),
        loo_text(&leave_one_out)
    );
    let eval = Evaluation { horizon, leave_one_out };
    let dir = &cfg.paths.reports;
    create_dir(dir)?;
    std::fs::write(dir.join(EVALUATION_TEXT), &text).with_context(|| format!("cannot write {}", dir.display()))?;
    write_json(&dir.join(EVALUATION_JSON), &eval)?;
    Ok((eval, text))
}

/// First clock step for `serve`: the configured start, else the day-window
/// start of the first day with speed records.
pub fn default_start(cfg: &Config, feeds: &Feeds) -> Option<Minutes> {
    cfg.service.start.or_else(|| {
        let first = feeds.speeds.iter().map(|r| r.timestamp).min()?;
        Some(day_start(first) + cfg.associator.day_window[0])
    })
}
