//! End-to-end runs: data → spectrograms → training → evaluation, with every
//! artifact written to one run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, TrainMode};
use crate::caloss::{calibrate_threshold, make_centers};
use crate::fedsim::Federation;
use crate::lsnet::{checkpoint, LsNet, ParameterSet};
use crate::metrics::{accuracy_report, auroc, openness, EvaluationReport};
use crate::rfgen::{build_dataset, load_external, LabeledDataset};
use crate::specgram::{to_spectrogram, Spectrogram};
use crate::train::{decide, predict_logits, train_epochs, ImageSet, Sgd};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_MANIFEST_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const KEYS_FILE: &str = "keys.json";

pub mod stage {
    pub const CONFIG: &str = "config";
    pub const DATA: &str = "data";
    pub const SPECTROGRAM: &str = "spectrogram";
    pub const TRAIN: &str = "train";
    pub const FEDERATE: &str = "federate";
    pub const EVALUATE: &str = "evaluate";
    pub const PERSIST: &str = "persist";
    pub const REPORT: &str = "report";
}

/// One row of the long-format metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub stage: String,
    pub metric: String,
    pub group: String,
    pub value: f64,
}

impl MetricRow {
    fn new(run_id: &str, stage: &str, metric: &str, group: impl Into<String>, value: f64) -> Self {
        MetricRow {
            run_id: run_id.into(),
            stage: stage.into(),
            metric: metric.into(),
            group: group.into(),
            value,
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Validation(format!("{}: {e}", path.display()))
}

fn to_csv<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(Path::new("<memory>"), e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn read_csv<R: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Floats use shortest round-trip formatting, so the file is exact.
pub fn metrics_csv(rows: &[MetricRow]) -> Result<String> {
    if rows.is_empty() {
        return Ok("run_id,stage,metric,group,value\n".into());
    }
    to_csv(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    read_csv(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub seed: u64,
    pub mode: String,
    pub code_version: String,
    /// Config snapshot, relative to the run directory.
    pub config: String,
    pub status: RunStatus,
    pub completed_stages: Vec<String>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    /// SHA-256 of each written artifact.
    pub outputs: BTreeMap<String, String>,
    pub elapsed_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RUN_MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Spectrogram images for one experiment.
#[derive(Clone, Debug)]
pub struct PreparedData {
    /// Known classes only, labeled by network index.
    pub train: ImageSet,
    /// Known classes `0..K`, unknown classes `K..K+U`.
    pub test: ImageSet,
    pub known: usize,
}

fn render(ds: &LabeledDataset, cfg: &ExperimentConfig) -> Result<Vec<Spectrogram>> {
    ds.records
        .par_iter()
        .map(|r| to_spectrogram(&r.window()?, &cfg.spectrogram))
        .collect()
}

/// Generate (or load) the dataset and turn it into spectrogram images.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let split = match &cfg.data.external {
        Some(dir) => {
            let report = load_external(dir).map_err(|e| e.at_stage(stage::DATA))?;
            for r in &report.rejected {
                log::warn!("skipped {}: {}", r.file, r.reason);
            }
            report.data
        }
        None => build_dataset(&cfg.dataset_config()).map_err(|e| e.at_stage(stage::DATA))?,
    };
    let wanted = cfg.classes.all();
    let train_ds = split.train.filter(|r| cfg.classes.known_index(r.label).is_some());
    let test_ds = split.test.filter(|r| wanted.contains(&r.label));
    log::info!(
        "rendering {} train / {} test spectrograms",
        train_ds.len(),
        test_ds.len()
    );
    let train_specs = render(&train_ds, cfg).map_err(|e| e.at_stage(stage::SPECTROGRAM))?;
    let test_specs = render(&test_ds, cfg).map_err(|e| e.at_stage(stage::SPECTROGRAM))?;
    let train = ImageSet::from_spectrograms(&train_specs, |s| cfg.classes.known_index(s.label));
    let test = ImageSet::from_spectrograms(&test_specs, |s| cfg.classes.eval_index(s.label));
    if train.is_empty() || test.is_empty() {
        return Err(
            Error::Validation("no training or test samples for the requested classes".into()).at_stage(stage::DATA),
        );
    }
    Ok(PreparedData {
        train,
        test,
        known: cfg.classes.known.len(),
    })
}

/// Per-sample test decision, kept for ROC plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub label: String,
    pub known: bool,
    pub predicted: String,
    pub score: f64,
    pub snr_db: f64,
    pub rejected: bool,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub threshold: f64,
    pub rows: Vec<MetricRow>,
    pub scores: Vec<ScoreRow>,
}

/// Closed-set accuracy and AUROC on the test images only (used per round).
pub fn quick_metrics(
    model: &mut LsNet<f32>,
    cfg: &ExperimentConfig,
    data: &PreparedData,
) -> Result<BTreeMap<String, f64>> {
    let k = data.known;
    let logits = predict_logits(model, &data.test, cfg.eval.batch_size)?;
    let centers = make_centers(k, cfg.train.alpha)?;
    let dec = decide(&logits, &centers, None, cfg.eval.score)?;
    let mut known_scores = Vec::new();
    let mut unknown_scores = Vec::new();
    let mut correct = 0usize;
    for (d, &y) in dec.iter().zip(&data.test.labels) {
        if y < k {
            known_scores.push(d.score);
            correct += (d.class == y) as usize;
        } else {
            unknown_scores.push(d.score);
        }
    }
    let mut m = BTreeMap::new();
    m.insert(
        "accuracy".to_string(),
        correct as f64 / known_scores.len().max(1) as f64,
    );
    if !unknown_scores.is_empty() && !known_scores.is_empty() {
        m.insert("auroc".to_string(), auroc(&known_scores, &unknown_scores)?);
    }
    Ok(m)
}

/// Full evaluation: closed-set report on known test samples, AUROC and
/// openness when unknown classes are present, and the rejection threshold
/// calibrated on known training scores.
pub fn evaluate(
    model: &mut LsNet<f32>,
    cfg: &ExperimentConfig,
    data: &PreparedData,
    run_id: &str,
) -> Result<Evaluation> {
    let k = data.known;
    let centers = make_centers(k, cfg.train.alpha)?;
    let bs = cfg.eval.batch_size;
    let train_dec = decide(&predict_logits(model, &data.train, bs)?, &centers, None, cfg.eval.score)?;
    let train_scores: Vec<f64> = train_dec.iter().map(|d| d.score).collect();
    let train_hits = train_dec
        .iter()
        .zip(&data.train.labels)
        .filter(|(d, &y)| d.class == y)
        .count();
    let threshold = calibrate_threshold(&train_scores, cfg.eval.true_accept_rate)?;
    let test_dec = decide(
        &predict_logits(model, &data.test, bs)?,
        &centers,
        Some(threshold),
        cfg.eval.score,
    )?;

    let name_of = |i: usize| -> String {
        cfg.classes
            .all()
            .get(i)
            .map(|c| c.to_string())
            .unwrap_or_else(|| i.to_string())
    };
    let (mut preds, mut labels, mut snrs) = (Vec::new(), Vec::new(), Vec::new());
    let (mut known_scores, mut unknown_scores) = (Vec::new(), Vec::new());
    let (mut open_correct, mut known_accepted, mut unknown_rejected) = (0usize, 0usize, 0usize);
    let mut scores = Vec::with_capacity(test_dec.len());
    for ((d, &y), &snr) in test_dec.iter().zip(&data.test.labels).zip(&data.test.snrs) {
        let rejected = d.unknown == Some(true);
        if y < k {
            preds.push(d.class);
            labels.push(y);
            snrs.push(snr);
            known_scores.push(d.score);
            known_accepted += !rejected as usize;
            open_correct += (!rejected && d.class == y) as usize;
        } else {
            unknown_scores.push(d.score);
            unknown_rejected += rejected as usize;
            open_correct += rejected as usize;
        }
        scores.push(ScoreRow {
            label: name_of(y),
            known: y < k,
            predicted: name_of(d.class),
            score: d.score,
            snr_db: snr,
            rejected,
        });
    }
    let mut report = accuracy_report(&preds, &labels, &snrs, k)?;
    report.class_names = cfg.classes.known.iter().map(|c| c.to_string()).collect();
    report.n_unknown = unknown_scores.len();
    if !unknown_scores.is_empty() {
        report.auroc = Some(auroc(&known_scores, &unknown_scores)?);
        report.openness = Some(openness(k, k + cfg.classes.unknown.len())?);
    }

    let st = stage::EVALUATE;
    let mut rows = vec![
        MetricRow::new(run_id, st, "accuracy", "all", report.overall_accuracy),
        MetricRow::new(
            run_id,
            st,
            "accuracy",
            "train",
            train_hits as f64 / data.train.len() as f64,
        ),
    ];
    for (snr, acc) in &report.per_snr_accuracy {
        rows.push(MetricRow::new(run_id, st, "accuracy", format!("snr={snr}"), *acc));
    }
    for (i, name) in report.class_names.iter().enumerate() {
        let total: u64 = report.confusion[i].iter().sum();
        if total > 0 {
            rows.push(MetricRow::new(
                run_id,
                st,
                "recall",
                format!("class={name}"),
                report.confusion[i][i] as f64 / total as f64,
            ));
        }
    }
    if let Some(a) = report.auroc {
        rows.push(MetricRow::new(run_id, st, "auroc", "all", a));
    }
    if let Some(o) = report.openness {
        rows.push(MetricRow::new(run_id, st, "openness", "all", o));
    }
    rows.push(MetricRow::new(run_id, st, "threshold", "all", threshold));
    rows.push(MetricRow::new(
        run_id,
        st,
        "true_accept",
        "known",
        known_accepted as f64 / known_scores.len().max(1) as f64,
    ));
    if !unknown_scores.is_empty() {
        rows.push(MetricRow::new(
            run_id,
            st,
            "rejection",
            "unknown",
            unknown_rejected as f64 / unknown_scores.len() as f64,
        ));
    }
    rows.push(MetricRow::new(
        run_id,
        st,
        "open_accuracy",
        "all",
        open_correct as f64 / test_dec.len() as f64,
    ));
    rows.push(MetricRow::new(run_id, st, "count", "known", report.n_known as f64));
    rows.push(MetricRow::new(run_id, st, "count", "unknown", report.n_unknown as f64));
    Ok(Evaluation {
        report,
        threshold,
        rows,
        scores,
    })
}

pub fn scores_csv(scores: &[ScoreRow]) -> Result<String> {
    if scores.is_empty() {
        return Ok("label,known,predicted,score,snr_db,rejected\n".into());
    }
    to_csv(scores)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    read_csv(path)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub run_id: String,
    pub metrics: Vec<MetricRow>,
    pub evaluation: Evaluation,
    pub model: LsNet<f32>,
}

struct Tracker {
    manifest: RunManifest,
    dir: PathBuf,
    started: Instant,
}

impl Tracker {
    fn done(&mut self, stage: &str) -> Result<()> {
        self.manifest.completed_stages.push(stage.to_string());
        self.manifest.elapsed_seconds = self.started.elapsed().as_secs_f64();
        self.manifest.save(&self.dir)
    }

    fn output(&mut self, name: &str) -> Result<()> {
        let h = sha256_file(&self.dir.join(name))?;
        self.manifest.outputs.insert(name.to_string(), h);
        Ok(())
    }
}

/// Execute the configured experiment into `out_dir`. On failure the run
/// manifest names the failing stage and partial outputs are kept.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e).at_stage(stage::CONFIG))?;
    let mut t = Tracker {
        manifest: RunManifest {
            run_id: cfg.run_id(),
            seed: cfg.seed,
            mode: cfg.mode_name().into(),
            code_version: code_version(),
            config: CONFIG_FILE.into(),
            status: RunStatus::Running,
            completed_stages: Vec::new(),
            failed_stage: None,
            error: None,
            outputs: BTreeMap::new(),
            elapsed_seconds: 0.0,
        },
        dir: out_dir.to_path_buf(),
        started: Instant::now(),
    };
    let mut current = stage::CONFIG;
    let result = run_stages(cfg, &mut t, &mut current);
    match result {
        Ok(outcome) => {
            t.manifest.status = RunStatus::Complete;
            t.manifest.elapsed_seconds = t.started.elapsed().as_secs_f64();
            t.manifest.save(out_dir).map_err(|e| e.at_stage(stage::PERSIST))?;
            Ok(outcome)
        }
        Err(e) => {
            let e = e.at_stage(current);
            t.manifest.status = RunStatus::Failed;
            t.manifest.failed_stage = e.stage().map(String::from);
            t.manifest.error = Some(e.to_string());
            t.manifest.elapsed_seconds = t.started.elapsed().as_secs_f64();
            if let Err(save_err) = t.manifest.save(out_dir) {
                log::error!("could not record failure: {save_err}");
            }
            Err(e)
        }
    }
}

fn run_stages(cfg: &ExperimentConfig, t: &mut Tracker, current: &mut &'static str) -> Result<RunOutcome> {
    let dir = t.dir.clone();
    let run_id = cfg.run_id();
    cfg.validate()?;
    write(&dir.join(CONFIG_FILE), &cfg.to_toml()?)?;
    t.output(CONFIG_FILE)?;
    t.done(stage::CONFIG)?;

    *current = stage::DATA;
    let data = prepare_data(cfg)?;
    t.done(stage::DATA)?;
    t.done(stage::SPECTROGRAM)?;

    let mut rows = Vec::new();
    let mut model = LsNet::<f32>::new(cfg.lsnet_config(), cfg.seed)?;
    match cfg.mode {
        TrainMode::Central => {
            *current = stage::TRAIN;
            let losses = train_epochs(
                &mut model,
                &mut Sgd::new(),
                &data.train,
                &cfg.train,
                cfg.train_seed(),
                0,
                cfg.train.epochs,
            )?;
            for (e, l) in losses.iter().enumerate() {
                log::info!("epoch {}/{}: loss {l:.5}", e + 1, losses.len());
                rows.push(MetricRow::new(
                    &run_id,
                    stage::TRAIN,
                    "loss",
                    format!("epoch={}", e + 1),
                    *l,
                ));
            }
            checkpoint::save(&model, &dir.join(CHECKPOINT_FILE))?;
            t.output(CHECKPOINT_FILE)?;
            t.done(stage::TRAIN)?;
        }
        TrainMode::Federated => {
            *current = stage::FEDERATE;
            let template = model.clone();
            let mut fed = Federation::new(model.clone(), &data.train, cfg.fed.clone(), cfg.train.clone(), cfg.seed)?;
            fed.registry().save(&dir.join(KEYS_FILE))?;
            let mut eval_model = template.clone();
            let mut evaluator = |_: usize, p: &ParameterSet<f32>| {
                eval_model.load_parameters(p)?;
                quick_metrics(&mut eval_model, cfg, &data)
            };
            fed.run(&mut evaluator, &mut |_, _| {})?;
            fed.write_history(&dir.join(ROUNDS_FILE))?;
            for r in fed.history() {
                let g = format!("round={}", r.round + 1);
                let accepted = r.verdicts.iter().filter(|v| v.verdict.is_accept()).count();
                rows.push(MetricRow::new(
                    &run_id,
                    stage::FEDERATE,
                    "accepted",
                    g.clone(),
                    accepted as f64,
                ));
                rows.push(MetricRow::new(
                    &run_id,
                    stage::FEDERATE,
                    "update_norm",
                    g.clone(),
                    r.aggregate_norm,
                ));
                for (name, v) in &r.metrics {
                    rows.push(MetricRow::new(&run_id, stage::FEDERATE, name, g.clone(), *v));
                }
            }
            model = fed.global_model()?;
            checkpoint::save(&model, &dir.join(CHECKPOINT_FILE))?;
            t.output(CHECKPOINT_FILE)?;
            t.output(ROUNDS_FILE)?;
            t.done(stage::FEDERATE)?;
        }
    }

    *current = stage::EVALUATE;
    let evaluation = evaluate(&mut model, cfg, &data, &run_id)?;
    rows.extend(evaluation.rows.iter().cloned());
    log::info!(
        "accuracy {:.4}, auroc {}",
        evaluation.report.overall_accuracy,
        evaluation.report.auroc.map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    t.done(stage::EVALUATE)?;

    *current = stage::PERSIST;
    write(&dir.join(METRICS_FILE), &metrics_csv(&rows)?)?;
    write(&dir.join(CONFUSION_FILE), &evaluation.report.confusion_csv())?;
    write(&dir.join(SCORES_FILE), &scores_csv(&evaluation.scores)?)?;
    for f in [METRICS_FILE, CONFUSION_FILE, SCORES_FILE] {
        t.output(f)?;
    }
    t.done(stage::PERSIST)?;
    Ok(RunOutcome {
        run_dir: dir,
        run_id,
        metrics: rows,
        evaluation,
        model,
    })
}

/// Re-execute a run from its manifest and config snapshot.
pub fn rerun_from_manifest(manifest_path: &Path, out_dir: &Path) -> Result<RunOutcome> {
    let manifest = RunManifest::load(manifest_path).map_err(|e| e.at_stage(stage::CONFIG))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let cfg = ExperimentConfig::load(&base.join(&manifest.config)).map_err(|e| e.at_stage(stage::CONFIG))?;
    if cfg.seed != manifest.seed {
        return Err(Error::Config("manifest seed disagrees with its config snapshot".into()).at_stage(stage::CONFIG));
    }
    run_experiment(&cfg, out_dir)
}

/// Evaluate a saved checkpoint on the configured test set.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, checkpoint_path: &Path, out_dir: &Path) -> Result<Evaluation> {
    cfg.validate().map_err(|e| e.at_stage(stage::CONFIG))?;
    let mut model = checkpoint::load(checkpoint_path).map_err(|e| e.at_stage(stage::CONFIG))?;
    if model.num_classes() != cfg.classes.known.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} classes but the config lists {} known classes",
            model.num_classes(),
            cfg.classes.known.len()
        ))
        .at_stage(stage::CONFIG));
    }
    let data = prepare_data(cfg)?;
    let ev = evaluate(&mut model, cfg, &data, &cfg.run_id()).map_err(|e| e.at_stage(stage::EVALUATE))?;
    let persist = || -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        write(&out_dir.join(METRICS_FILE), &metrics_csv(&ev.rows)?)?;
        write(&out_dir.join(CONFUSION_FILE), &ev.report.confusion_csv())?;
        write(&out_dir.join(SCORES_FILE), &scores_csv(&ev.scores)?)
    };
    persist().map_err(|e| e.at_stage(stage::PERSIST))?;
    Ok(ev)
}
