use std::path::{Path, PathBuf};

use cogload::eval::{self, MIN_PERMUTATIONS};
use cogload::model::{self, WorkloadClassifier};
use cogload::sigio::{self, write_atomic, LabelMap};
use cogload::synth::{gen_calibration, gen_use_session};
use cogload::{EpochSet, EventList, Recording, Regularization, TaskIntervals};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Settings;
use crate::error::CliError;
use crate::SynthKind;

type Res<T> = Result<T, CliError>;

fn ensure_dir(dir: &Path) -> Res<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Res<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, &text)?;
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

pub fn synth(s: &Settings, kind: SynthKind) -> Res<Value> {
    let cfg = &s.synth;
    cfg.validate()?;
    let calib = matches!(kind, SynthKind::Calibration | SynthKind::Both)
        .then(|| gen_calibration(cfg))
        .transpose()?;
    let use_session = matches!(kind, SynthKind::Use | SynthKind::Both)
        .then(|| gen_use_session(cfg))
        .transpose()?;

    ensure_dir(&s.out_dir)?;
    let mut summary = json!({
        "seed": cfg.seed,
        "rate_hz": cfg.rate_hz,
        "n_channels": cfg.n_eeg_channels + 2,
    });
    if let Some(c) = calib {
        let rec_path = s.out("calibration_recording.txt");
        let ev_path = s.out("calibration_events.txt");
        let events = c.events.as_ref().expect("calibration sessions carry events");
        sigio::write_recording(&rec_path, &c.recording)?;
        sigio::write_events(&ev_path, events)?;
        summary["calibration"] = json!({
            "recording": display(&rec_path),
            "events": display(&ev_path),
            "n_events": events.len(),
            "duration_s": c.recording.duration_seconds(),
        });
    }
    if let Some(u) = use_session {
        let rec_path = s.out("use_recording.txt");
        let task_path = s.out("use_tasks.txt");
        let tasks = u.tasks.as_ref().expect("use sessions carry tasks");
        sigio::write_recording(&rec_path, &u.recording)?;
        sigio::write_tasks(&task_path, tasks)?;
        summary["use"] = json!({
            "recording": display(&rec_path),
            "tasks": display(&task_path),
            "n_tasks": tasks.len(),
            "task_loads": cfg.task_loads,
            "duration_s": u.recording.duration_seconds(),
        });
    }
    Ok(summary)
}

/// One epoch per event when windows fit between events, otherwise
/// back-to-back windows inside each same-label block.
pub fn calibration_epochs(rec: &Recording, ev: &EventList, window_seconds: f64) -> Res<EpochSet> {
    let map = LabelMap::default();
    let mut gaps: Vec<usize> = ev.events().windows(2).map(|w| w[1].onset - w[0].onset).collect();
    gaps.sort_unstable();
    let width = sigio::window_len(window_seconds, rec.rate_hz());
    let fits = gaps.get(gaps.len() / 2).is_some_and(|&g| width <= g);
    if fits {
        Ok(sigio::epoch(rec, ev, window_seconds, 0.0, &map)?.0)
    } else {
        Ok(sigio::epoch_blocks(rec, ev, window_seconds, &map)?)
    }
}

fn load_calibration(s: &Settings) -> Res<EpochSet> {
    let rec_path = s.paths.require(&s.paths.recording, "recording")?;
    let ev_path = s.paths.require(&s.paths.events, "events")?;
    let rec = sigio::load_recording(&rec_path)?;
    let ev = sigio::load_events(&ev_path)?;
    s.pipeline.validate(rec.rate_hz())?;
    calibration_epochs(&rec, &ev, s.pipeline.window_seconds)
}

fn load_use(s: &Settings) -> Res<Recording> {
    let path = s.paths.require(&s.paths.use_recording, "use-recording")?;
    Ok(sigio::load_recording(path)?)
}

fn load_tasks(s: &Settings) -> Res<TaskIntervals> {
    let path = s.paths.require(&s.paths.tasks, "tasks")?;
    Ok(sigio::load_tasks(path)?)
}

fn context_recording(s: &Settings) -> Res<Option<Recording>> {
    match s.pipeline.regularization {
        Regularization::None => Ok(None),
        Regularization::Invariant { .. } => load_use(s).map(Some),
    }
}

fn model_path(s: &Settings) -> PathBuf {
    s.paths.model.clone().unwrap_or_else(|| s.out("model.json"))
}

pub fn calibrate(s: &Settings) -> Res<Value> {
    let epochs = load_calibration(s)?;
    let use_rec = context_recording(s)?;
    let mut clf = model::train_workload(&epochs, &s.pipeline, use_rec.as_ref())?;
    clf.provenance.seed = Some(s.seed);
    let path = model_path(s);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    clf.save(&path)?;
    Ok(json!({
        "model": display(&path),
        "seed": s.seed,
        "feature_width": clf.lda.input_width,
        "feature_names": clf.feature_names,
        "dropped_features": clf.provenance.dropped_features,
        "gamma": clf.lda.gamma,
        "n_trials": clf.provenance.n_trials,
        "class_counts": clf.provenance.class_counts,
        "pipeline": clf.config,
    }))
}

pub fn cv(s: &Settings, shuffle_labels: bool) -> Res<Value> {
    let mut epochs = load_calibration(s)?;
    if shuffle_labels {
        let mut labels = epochs.labels().expect("calibration epochs are labeled").to_vec();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(s.seed));
        epochs = epochs.with_labels(labels)?;
    }
    let use_rec = context_recording(s)?;
    let res = eval::cross_validate(&epochs, s.folds, &s.pipeline, s.seed, use_rec.as_ref())?;
    let n = epochs.n_epochs() as u64;
    let threshold = eval::chance_level(n, s.alpha).ok();
    let report = json!({
        "seed": s.seed,
        "shuffled_labels": shuffle_labels,
        "folds": s.folds,
        "n_trials": n,
        "class_counts": epochs.class_counts(),
        "fold_counts": res.fold_counts,
        "fold_accuracies": res.fold_accuracies,
        "mean_accuracy": res.mean_accuracy,
        "alpha": s.alpha,
        "chance_threshold": threshold,
        "above_chance": threshold.map(|t| res.mean_accuracy > t),
        "pipeline": s.pipeline,
    });
    ensure_dir(&s.out_dir)?;
    write_json(&s.out("cv_report.json"), &report)?;
    Ok(report)
}

pub fn estimate(s: &Settings) -> Res<Value> {
    let path = model_path(s);
    let clf = WorkloadClassifier::load(&path)?;
    let rec_path = s
        .paths
        .use_recording
        .clone()
        .or_else(|| s.paths.recording.clone())
        .ok_or_else(|| CliError::validation("missing input: pass --use-recording or set it under [paths]"))?;
    let rec = sigio::load_recording(&rec_path)?;
    let tasks = s.paths.tasks.as_ref().map(sigio::load_tasks).transpose()?;
    let window = if s.window_explicit { s.pipeline.window_seconds } else { clf.config.window_seconds };
    let step = if s.step_explicit { s.pipeline.step_seconds } else { clf.config.step_seconds };

    let series = model::estimate_series(&clf, &rec, window, step, s.normalization)?;
    ensure_dir(&s.out_dir)?;
    let series_path = s.out("series.csv");
    write_atomic(&series_path, &series.to_csv())?;

    let mut report = json!({
        "seed": s.seed,
        "model": display(&path),
        "recording": display(&rec_path),
        "series": display(&series_path),
        "n_windows": series.len(),
        "window_seconds": window,
        "step_seconds": step,
        "normalization": s.normalization,
    });
    if let Some(tasks) = tasks {
        let summaries = eval::task_average(&series, &tasks, rec.rate_hz());
        write_atomic(&s.out("task_means.csv"), &eval::task_summaries_csv(&summaries))?;
        let highest = summaries
            .iter()
            .filter_map(|t| t.mean.map(|m| (t.task_id, m)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(id, _)| id);
        report["tasks"] = json!(summaries);
        report["highest_task"] = json!(highest);
        report["quarters"] = match eval::quarter_compare(&series, &tasks, rec.rate_hz()) {
            Ok(q) => {
                write_atomic(&s.out("quarters.csv"), &q.to_csv())?;
                json!(q)
            }
            Err(e) => json!({ "skipped": e.to_string() }),
        };
    }
    write_json(&s.out("estimate_report.json"), &report)?;
    Ok(report)
}

pub fn permtest(s: &Settings) -> Res<Value> {
    if s.n_perm < MIN_PERMUTATIONS {
        return Err(CliError::validation(format!(
            "{} permutations are too few for a stable null fit; use --n-perm {MIN_PERMUTATIONS} or more",
            s.n_perm
        )));
    }
    let epochs = load_calibration(s)?;
    let use_rec = load_use(s)?;
    let tasks = load_tasks(s)?;
    let res = eval::permutation_test(&epochs, &use_rec, &tasks, &s.pipeline, s.n_perm, s.seed, s.normalization)?;
    ensure_dir(&s.out_dir)?;
    let vectors_path = s.out("permutation_vectors.csv");
    write_atomic(&vectors_path, &res.vectors_csv())?;
    let summary = json!({
        "seed": s.seed,
        "n_permutations": res.n_permutations,
        "task_ids": res.task_ids,
        "real": res.real,
        "mahalanobis_sq": res.fit.mahalanobis_sq,
        "p_value": res.p_value(),
        "p_empirical": res.fit.p_empirical,
        "alpha": s.alpha,
        "significant": res.p_value() < s.alpha,
        "vectors": display(&vectors_path),
        "pipeline": s.pipeline,
    });
    let mut report = summary.clone();
    report["result"] = json!(res);
    write_json(&s.out("permtest.json"), &report)?;
    Ok(summary)
}

pub fn chance(n: u64, alpha: f64) -> Res<Value> {
    let threshold = eval::chance_level(n, alpha)?;
    Ok(json!({
        "n_trials": n,
        "alpha": alpha,
        "threshold": threshold,
        "correct_needed": (threshold * n as f64).round() as u64,
    }))
}
