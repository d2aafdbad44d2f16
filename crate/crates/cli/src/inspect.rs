//! Summaries of any file the toolkit reads or writes.

use std::collections::BTreeMap;
use std::path::Path;

use cogload::model::{WorkloadClassifier, MODEL_FORMAT};
use cogload::sigio::{self, EVENTS_MAGIC, RECORDING_MAGIC, TASKS_MAGIC};
use serde_json::{json, Value};

use crate::error::CliError;

pub fn inspect(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let first = text.lines().next().unwrap_or("").trim();
    if first == RECORDING_MAGIC {
        recording(path)
    } else if first == EVENTS_MAGIC {
        events(path)
    } else if first == TASKS_MAGIC {
        tasks(path)
    } else if text.trim_start().starts_with('{') {
        structured(path, &text)
    } else if first.contains(',') {
        csv(path, &text)
    } else {
        Err(CliError::data(format!("{}: not a recognized cogload file", path.display())))
    }
}

fn recording(path: &Path) -> Result<Value, CliError> {
    let rec = sigio::load_recording(path)?;
    let channels: Vec<Value> = rec
        .samples()
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let sd = (row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            json!({
                "label": rec.channels().labels[i],
                "modality": rec.channels().modalities[i],
                "mean": mean,
                "sd": sd,
            })
        })
        .collect();
    Ok(json!({
        "type": "recording",
        "rate_hz": rec.rate_hz(),
        "n_samples": rec.n_samples(),
        "duration_s": rec.duration_seconds(),
        "channels": channels,
    }))
}

fn events(path: &Path) -> Result<Value, CliError> {
    let ev = sigio::load_events(path)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in ev.events() {
        *counts.entry(e.label.as_str()).or_default() += 1;
    }
    Ok(json!({
        "type": "events",
        "n_events": ev.len(),
        "label_counts": counts,
        "first_onset": ev.events().first().map(|e| e.onset),
        "last_onset": ev.events().last().map(|e| e.onset),
    }))
}

fn tasks(path: &Path) -> Result<Value, CliError> {
    let tasks = sigio::load_tasks(path)?;
    Ok(json!({
        "type": "tasks",
        "n_tasks": tasks.len(),
        "tasks": tasks.tasks(),
    }))
}

fn structured(path: &Path, text: &str) -> Result<Value, CliError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if value.get("format").and_then(Value::as_str) != Some(MODEL_FORMAT) {
        return Ok(json!({ "type": "json", "content": value }));
    }
    let clf = WorkloadClassifier::from_json(text)?;
    let (weights, bias) = clf.lda.input_space();
    let weights: BTreeMap<&str, f64> = clf.feature_names.iter().map(String::as_str).zip(weights).collect();
    Ok(json!({
        "type": "model",
        "checksum_ok": true,
        "rate_hz": clf.rate_hz,
        "eeg_channels": clf.eeg_channels,
        "pipeline": clf.config,
        "feature_width": clf.lda.input_width,
        "gamma": clf.lda.gamma,
        "bias": bias,
        "weights": weights,
        "csp_eigenvalues": clf.csp.iter().map(|m| json!({ "band": m.band.name, "eigenvalues": m.eigenvalues })).collect::<Vec<_>>(),
        "provenance": clf.provenance,
    }))
}

fn csv(path: &Path, text: &str) -> Result<Value, CliError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').map(str::trim).collect()).collect();
    if let Some(i) = rows.iter().position(|r| r.len() != header.len()) {
        return Err(CliError::data(format!(
            "{}:{}: expected {} columns, found {}",
            path.display(),
            i + 2,
            header.len(),
            rows[i].len()
        )));
    }
    let columns: Vec<Value> = header
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let nums: Vec<f64> = rows.iter().filter_map(|r| r[j].parse().ok()).collect();
            if nums.is_empty() {
                return json!({ "name": name });
            }
            let min = nums.iter().copied().fold(f64::INFINITY, f64::min);
            let max = nums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            json!({
                "name": name,
                "numeric": nums.len(),
                "min": min,
                "max": max,
                "mean": nums.iter().sum::<f64>() / nums.len() as f64,
            })
        })
        .collect();
    Ok(json!({
        "type": "csv",
        "n_rows": rows.len(),
        "columns": columns,
    }))
}
