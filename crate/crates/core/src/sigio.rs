//! Recordings, event and task markers, epochs, and their text file formats.
//!
//! All three file formats are line-oriented UTF-8 with a `# cogload-<kind> v1`
//! magic line. Floats are written in shortest round-trip form so a write/load
//! cycle reproduces every sample bit-for-bit.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORDING_MAGIC: &str = "# cogload-recording v1";
pub const EVENTS_MAGIC: &str = "# cogload-events v1";
pub const TASKS_MAGIC: &str = "# cogload-tasks v1";

/// The 30 scalp positions of the reference montage, in acquisition order.
pub const DEFAULT_EEG_LABELS: [&str; 30] = [
    "C6", "CP4", "CPz", "CP3", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "PO7", "PO8", "Oz", "F3",
    "Fz", "F4", "FT8", "FC6", "FC4", "FCz", "FC3", "FC5", "FT7", "C5", "C3", "C1", "Cz", "C2", "C4",
];

/// Sensor type of a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Eeg,
    Ecg,
    Gsr,
    Other,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Eeg => "EEG",
            Modality::Ecg => "ECG",
            Modality::Gsr => "GSR",
            Modality::Other => "OTHER",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "EEG" => Ok(Modality::Eeg),
            "ECG" => Ok(Modality::Ecg),
            "GSR" => Ok(Modality::Gsr),
            "OTHER" => Ok(Modality::Other),
            other => Err(Error::data(format!("unknown modality `{other}`"))),
        }
    }
}

/// Per-channel metadata shared by recordings and epoch sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub labels: Vec<String>,
    pub modalities: Vec<Modality>,
}

impl ChannelInfo {
    pub fn new(labels: Vec<String>, modalities: Vec<Modality>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::data("a recording needs at least one channel"));
        }
        if labels.len() != modalities.len() {
            return Err(Error::data(format!(
                "{} channel labels but {} modalities",
                labels.len(),
                modalities.len()
            )));
        }
        if let Some(bad) = labels
            .iter()
            .find(|l| l.trim().is_empty() || l.contains(',') || l.contains('\n'))
        {
            return Err(Error::data(format!("invalid channel label `{bad}`")));
        }
        Ok(ChannelInfo { labels, modalities })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Indices of the channels carrying `modality`, in channel order.
    pub fn indices_of(&self, modality: Modality) -> Vec<usize> {
        self.modalities
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == modality)
            .map(|(i, _)| i)
            .collect()
    }

    /// Position of each requested label, failing on the first one not present.
    pub fn indices_by_label(&self, wanted: &[String]) -> Result<Vec<usize>> {
        wanted
            .iter()
            .map(|w| {
                self.labels
                    .iter()
                    .position(|l| l == w)
                    .ok_or_else(|| Error::data(format!("channel `{w}` not present")))
            })
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> ChannelInfo {
        ChannelInfo {
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            modalities: idx.iter().map(|&i| self.modalities[i]).collect(),
        }
    }
}

/// A multichannel recording, channels × time.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    rate_hz: f64,
    channels: ChannelInfo,
    samples: Array2<f64>,
}

impl Recording {
    pub fn new(rate_hz: f64, channels: ChannelInfo, samples: Array2<f64>) -> Result<Self> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::data(format!("sampling rate must be positive, got {rate_hz}")));
        }
        if samples.nrows() != channels.len() {
            return Err(Error::data(format!(
                "{} channels declared but sample matrix has {} rows",
                channels.len(),
                samples.nrows()
            )));
        }
        if samples.ncols() == 0 {
            return Err(Error::data("recording has no samples"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("recording contains non-finite samples"));
        }
        Ok(Recording {
            rate_hz,
            channels,
            samples,
        })
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn channels(&self) -> &ChannelInfo {
        &self.channels
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_samples() as f64 / self.rate_hz
    }

    /// Keeps only the listed channels, in the listed order.
    pub fn select(&self, idx: &[usize]) -> Recording {
        Recording {
            rate_hz: self.rate_hz,
            channels: self.channels.subset(idx),
            samples: self.samples.select(Axis(0), idx),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub onset: usize,
    pub label: String,
}

/// Stimulus markers with strictly increasing onsets (in samples).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventList {
    events: Vec<Event>,
}

impl EventList {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        for pair in events.windows(2) {
            if pair[1].onset <= pair[0].onset {
                return Err(Error::data(format!(
                    "event onsets must be strictly increasing ({} then {})",
                    pair[0].onset, pair[1].onset
                )));
            }
        }
        if let Some(e) = events.iter().find(|e| e.label.contains(',') || e.label.contains('\n')) {
            return Err(Error::data(format!("invalid event label `{}`", e.label)));
        }
        Ok(EventList { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInterval {
    pub task_id: u32,
    pub start: usize,
    pub end: usize,
    pub included: bool,
}

/// Use-session task boundaries (in samples, end exclusive) with an exclusion mask.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskIntervals {
    tasks: Vec<TaskInterval>,
}

impl TaskIntervals {
    pub fn new(mut tasks: Vec<TaskInterval>) -> Result<Self> {
        for t in &tasks {
            if t.task_id == 0 {
                return Err(Error::data("task ids must be positive"));
            }
            if t.start >= t.end {
                return Err(Error::data(format!(
                    "task {}: start {} is not before end {}",
                    t.task_id, t.start, t.end
                )));
            }
        }
        let mut ids: Vec<u32> = tasks.iter().map(|t| t.task_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::data("task ids must be unique"));
        }
        let mut by_start: Vec<&TaskInterval> = tasks.iter().collect();
        by_start.sort_by_key(|t| t.start);
        for pair in by_start.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(Error::data(format!(
                    "tasks {} and {} overlap",
                    pair[0].task_id, pair[1].task_id
                )));
            }
        }
        tasks.sort_by_key(|t| t.task_id);
        Ok(TaskIntervals { tasks })
    }

    /// Tasks ordered by id.
    pub fn tasks(&self) -> &[TaskInterval] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Fixed-length windows, trials × channels × samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    data: Array3<f64>,
    labels: Option<Vec<u8>>,
    window_seconds: f64,
    rate_hz: f64,
    channels: ChannelInfo,
    starts: Vec<usize>,
}

impl EpochSet {
    pub fn new(
        data: Array3<f64>,
        labels: Option<Vec<u8>>,
        window_seconds: f64,
        rate_hz: f64,
        channels: ChannelInfo,
        starts: Vec<usize>,
    ) -> Result<Self> {
        let (n, c, w) = data.dim();
        if c != channels.len() {
            return Err(Error::data("epoch channel count does not match channel metadata"));
        }
        if !(window_seconds > 0.0 && rate_hz > 0.0) {
            return Err(Error::invalid("window length and rate must be positive"));
        }
        if w != window_len(window_seconds, rate_hz) {
            return Err(Error::data(format!(
                "epoch length {w} does not match round({window_seconds} s × {rate_hz} Hz)"
            )));
        }
        if starts.len() != n {
            return Err(Error::data("one start offset per epoch is required"));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::data(format!("{} labels for {n} epochs", l.len())));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::data("class labels must be 0 (low) or 1 (high)"));
            }
        }
        Ok(EpochSet {
            data,
            labels,
            window_seconds,
            rate_hz,
            channels,
            starts,
        })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn epoch(&self, i: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), i)
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn window_seconds(&self) -> f64 {
        self.window_seconds
    }

    pub fn window_samples(&self) -> usize {
        self.data.dim().2
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn channels(&self) -> &ChannelInfo {
        &self.channels
    }

    pub fn n_epochs(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_channels(&self) -> usize {
        self.data.dim().1
    }

    /// First sample of each epoch in the source recording.
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    /// Epoch start times in seconds.
    pub fn start_times(&self) -> Vec<f64> {
        self.starts.iter().map(|&s| s as f64 / self.rate_hz).collect()
    }

    /// Epochs per class, `[low, high]`. Zero when unlabeled.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0, 0];
        if let Some(l) = &self.labels {
            for &v in l {
                counts[v as usize] += 1;
            }
        }
        counts
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<EpochSet> {
        EpochSet::new(
            self.data.clone(),
            Some(labels),
            self.window_seconds,
            self.rate_hz,
            self.channels.clone(),
            self.starts.clone(),
        )
    }

    /// Subset of epochs, in the given order.
    pub fn select(&self, idx: &[usize]) -> EpochSet {
        EpochSet {
            data: self.data.select(Axis(0), idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            window_seconds: self.window_seconds,
            rate_hz: self.rate_hz,
            channels: self.channels.clone(),
            starts: idx.iter().map(|&i| self.starts[i]).collect(),
        }
    }

    /// Subset of channels, in the given order.
    pub fn select_channels(&self, idx: &[usize]) -> EpochSet {
        EpochSet {
            data: self.data.select(Axis(1), idx),
            labels: self.labels.clone(),
            window_seconds: self.window_seconds,
            rate_hz: self.rate_hz,
            channels: self.channels.subset(idx),
            starts: self.starts.clone(),
        }
    }

    /// Replaces the sample tensor, keeping the epoch layout (same trial count).
    pub(crate) fn with_data(&self, data: Array3<f64>, channels: ChannelInfo) -> EpochSet {
        debug_assert_eq!(data.dim().0, self.n_epochs());
        EpochSet {
            data,
            labels: self.labels.clone(),
            window_seconds: self.window_seconds,
            rate_hz: self.rate_hz,
            channels,
            starts: self.starts.clone(),
        }
    }
}

/// Samples per window for a duration at a rate.
pub fn window_len(window_seconds: f64, rate_hz: f64) -> usize {
    (window_seconds * rate_hz).round() as usize
}

/// Event-label to class mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub entries: Vec<(String, u8)>,
}

impl Default for LabelMap {
    fn default() -> Self {
        LabelMap {
            entries: vec![("0-back".into(), 0), ("2-back".into(), 1)],
        }
    }
}

impl LabelMap {
    pub fn class_of(&self, label: &str) -> Option<u8> {
        self.entries
            .iter()
            .find(|(name, _)| name == label)
            .map(|(_, c)| *c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DropReason {
    OutOfRange,
    UnmappedLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedEvent {
    pub index: usize,
    pub onset: usize,
    pub reason: DropReason,
}

/// Which events were turned into epochs and which were skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EpochReport {
    pub retained: Vec<usize>,
    pub dropped: Vec<DroppedEvent>,
}

fn check_events_bound(rec: &Recording, ev: &EventList) -> Result<()> {
    if let Some(e) = ev.events().iter().find(|e| e.onset >= rec.n_samples()) {
        return Err(Error::data(format!(
            "event `{}` at sample {} lies beyond the recording ({} samples)",
            e.label,
            e.onset,
            rec.n_samples()
        )));
    }
    Ok(())
}

fn stack(rec: &Recording, starts: &[usize], width: usize) -> Array3<f64> {
    let mut data = Array3::zeros((starts.len(), rec.n_channels(), width));
    for (i, &s0) in starts.iter().enumerate() {
        data.slice_mut(s![i, .., ..])
            .assign(&rec.samples().slice(s![.., s0..s0 + width]));
    }
    data
}

/// Cuts one labeled epoch per stimulus event.
///
/// Events whose window would leave the recording, or whose label the map
/// does not know, are dropped and listed in the report.
pub fn epoch(
    rec: &Recording,
    ev: &EventList,
    window_seconds: f64,
    offset_seconds: f64,
    map: &LabelMap,
) -> Result<(EpochSet, EpochReport)> {
    if !(window_seconds > 0.0) || !offset_seconds.is_finite() {
        return Err(Error::invalid(format!(
            "window must be positive and offset finite (window {window_seconds}, offset {offset_seconds})"
        )));
    }
    check_events_bound(rec, ev)?;
    let width = window_len(window_seconds, rec.rate_hz());
    if width == 0 {
        return Err(Error::invalid("window shorter than one sample"));
    }
    let offset = (offset_seconds * rec.rate_hz()).round() as i64;
    let mut report = EpochReport::default();
    let mut starts = Vec::new();
    let mut labels = Vec::new();
    for (i, e) in ev.events().iter().enumerate() {
        let Some(class) = map.class_of(&e.label) else {
            report.dropped.push(DroppedEvent {
                index: i,
                onset: e.onset,
                reason: DropReason::UnmappedLabel,
            });
            continue;
        };
        let start = e.onset as i64 + offset;
        if start < 0 || start as usize + width > rec.n_samples() {
            report.dropped.push(DroppedEvent {
                index: i,
                onset: e.onset,
                reason: DropReason::OutOfRange,
            });
            continue;
        }
        starts.push(start as usize);
        labels.push(class);
        report.retained.push(i);
    }
    if starts.is_empty() {
        return Err(Error::data("no event could be epoched"));
    }
    for d in report.dropped.iter().filter(|d| d.reason == DropReason::OutOfRange) {
        log::warn!("event {} at sample {} dropped: window leaves the recording", d.index, d.onset);
    }
    let data = stack(rec, &starts, width);
    let set = EpochSet::new(
        data,
        Some(labels),
        window_seconds,
        rec.rate_hz(),
        rec.channels().clone(),
        starts,
    )?;
    Ok((set, report))
}

/// Non-overlapping windows inside each block of same-label events.
///
/// A block runs from its first onset to the first onset of the next block;
/// the final block ends one median inter-onset interval after its last event.
/// With 2 s windows on a 2 s stimulus grid this matches [`epoch`]; with 10 s
/// windows each 60-letter block yields 12 windows.
pub fn epoch_blocks(
    rec: &Recording,
    ev: &EventList,
    window_seconds: f64,
    map: &LabelMap,
) -> Result<EpochSet> {
    if !(window_seconds > 0.0) {
        return Err(Error::invalid("window must be positive"));
    }
    check_events_bound(rec, ev)?;
    let width = window_len(window_seconds, rec.rate_hz());
    let mapped: Vec<(usize, u8)> = ev
        .events()
        .iter()
        .filter_map(|e| map.class_of(&e.label).map(|c| (e.onset, c)))
        .collect();
    if mapped.is_empty() {
        return Err(Error::data("no event carries a mapped label"));
    }
    let mut gaps: Vec<usize> = mapped.windows(2).map(|w| w[1].0 - w[0].0).collect();
    gaps.sort_unstable();
    let median_gap = gaps.get(gaps.len() / 2).copied().unwrap_or(width);

    let mut blocks: Vec<(usize, usize, u8)> = Vec::new();
    let mut i = 0;
    while i < mapped.len() {
        let (start, class) = mapped[i];
        let mut j = i;
        while j + 1 < mapped.len() && mapped[j + 1].1 == class {
            j += 1;
        }
        let end = if j + 1 < mapped.len() {
            mapped[j + 1].0
        } else {
            mapped[j].0 + median_gap
        };
        blocks.push((start, end.min(rec.n_samples()), class));
        i = j + 1;
    }

    let mut starts = Vec::new();
    let mut labels = Vec::new();
    for (start, end, class) in blocks {
        let mut s0 = start;
        while s0 + width <= end {
            starts.push(s0);
            labels.push(class);
            s0 += width;
        }
    }
    if starts.is_empty() {
        return Err(Error::data("no block is long enough for one window"));
    }
    let data = stack(rec, &starts, width);
    EpochSet::new(
        data,
        Some(labels),
        window_seconds,
        rec.rate_hz(),
        rec.channels().clone(),
        starts,
    )
}

/// Unlabeled sliding windows at offsets 0, step, 2·step, …
pub fn slide(rec: &Recording, window_seconds: f64, step_seconds: f64) -> Result<EpochSet> {
    if !(step_seconds > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {step_seconds}")));
    }
    if !(window_seconds > 0.0) {
        return Err(Error::invalid(format!("window must be positive, got {window_seconds}")));
    }
    let width = window_len(window_seconds, rec.rate_hz());
    let step = window_len(step_seconds, rec.rate_hz()).max(1);
    if width == 0 || width > rec.n_samples() {
        return Err(Error::data(format!(
            "window of {window_seconds} s does not fit a {:.3} s recording",
            rec.duration_seconds()
        )));
    }
    let starts: Vec<usize> = (0..)
        .map(|k| k * step)
        .take_while(|s| s + width <= rec.n_samples())
        .collect();
    let data = stack(rec, &starts, width);
    EpochSet::new(
        data,
        None,
        window_seconds,
        rec.rate_hz(),
        rec.channels().clone(),
        starts,
    )
}

// ---------------------------------------------------------------------------
// File formats

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `contents` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn expect_magic<'a>(
    path: &Path,
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    magic: &str,
) -> Result<()> {
    match lines.next() {
        Some((_, l)) if l.trim_end() == magic => Ok(()),
        Some((n, l)) => Err(parse_err(path, n, format!("expected `{magic}`, found `{l}`"))),
        None => Err(parse_err(path, 1, "empty file")),
    }
}

fn parse_recording(path: &Path, text: &str) -> Result<Recording> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    expect_magic(path, &mut lines, RECORDING_MAGIC)?;

    let mut rate: Option<f64> = None;
    let mut labels: Option<Vec<String>> = None;
    let mut modalities: Option<Vec<Modality>> = None;
    while let Some(&(n, line)) = lines.peek() {
        let Some(body) = line.strip_prefix('#') else {
            break;
        };
        lines.next();
        let (key, value) = body
            .trim()
            .split_once('=')
            .ok_or_else(|| parse_err(path, n, format!("malformed header line `{line}`")))?;
        let duplicate = || parse_err(path, n, format!("duplicate header key `{key}`"));
        match key.trim() {
            "rate_hz" => {
                if rate.is_some() {
                    return Err(duplicate());
                }
                let v: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(path, n, format!("bad rate `{value}`")))?;
                rate = Some(v);
            }
            "channels" => {
                if labels.is_some() {
                    return Err(duplicate());
                }
                labels = Some(value.split(',').map(|s| s.trim().to_string()).collect());
            }
            "modalities" => {
                if modalities.is_some() {
                    return Err(duplicate());
                }
                modalities = Some(
                    value
                        .split(',')
                        .map(|s| s.parse::<Modality>())
                        .collect::<Result<_>>()
                        .map_err(|e| parse_err(path, n, e.to_string()))?,
                );
            }
            other => return Err(parse_err(path, n, format!("unknown header key `{other}`"))),
        }
    }
    let rate = rate.ok_or_else(|| parse_err(path, 1, "missing header key `rate_hz`"))?;
    let labels = labels.ok_or_else(|| parse_err(path, 1, "missing header key `channels`"))?;
    let modalities =
        modalities.ok_or_else(|| parse_err(path, 1, "missing header key `modalities`"))?;
    let channels = ChannelInfo::new(labels, modalities).map_err(|e| parse_err(path, 1, e.to_string()))?;
    let n_ch = channels.len();

    let mut flat: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let before = flat.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, n, format!("not a number: `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, n, "non-finite sample"));
            }
            flat.push(v);
        }
        if flat.len() - before != n_ch {
            return Err(parse_err(
                path,
                n,
                format!("ragged row: {} values for {n_ch} channels", flat.len() - before),
            ));
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(path, 1, "recording has no samples"));
    }
    // Body is time-major; the in-memory layout is channels × time.
    let time_major = Array2::from_shape_vec((rows, n_ch), flat)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let samples = time_major.t().as_standard_layout().into_owned();
    Recording::new(rate, channels, samples).map_err(|e| parse_err(path, 1, e.to_string()))
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording> {
    let path = path.as_ref();
    parse_recording(path, &read_text(path)?)
}

pub fn recording_to_string(rec: &Recording) -> String {
    let mut out = String::with_capacity(rec.n_samples() * rec.n_channels() * 20 + 256);
    out.push_str(RECORDING_MAGIC);
    out.push('\n');
    let _ = writeln!(out, "# rate_hz={:?}", rec.rate_hz());
    let _ = writeln!(out, "# channels={}", rec.channels().labels.join(","));
    let mods: Vec<&str> = rec.channels().modalities.iter().map(|m| m.as_str()).collect();
    let _ = writeln!(out, "# modalities={}", mods.join(","));
    for col in rec.samples().columns() {
        for (i, v) in col.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn write_recording(path: impl AsRef<Path>, rec: &Recording) -> Result<()> {
    write_atomic(path.as_ref(), &recording_to_string(rec))
}

fn body_lines<'a>(
    path: &'a Path,
    text: &'a str,
    magic: &str,
) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)> + 'a> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    expect_magic(path, &mut lines, magic)?;
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, l)| (n, l.split(',').map(str::trim).collect())))
}

fn parse_field<T: FromStr>(path: &Path, n: usize, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| parse_err(path, n, format!("bad {what} `{field}`")))
}

pub fn load_events(path: impl AsRef<Path>) -> Result<EventList> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut events = Vec::new();
    for (n, fields) in body_lines(path, &text, EVENTS_MAGIC)? {
        if fields.len() != 2 {
            return Err(parse_err(path, n, "expected `onset_sample,label`"));
        }
        events.push(Event {
            onset: parse_field(path, n, fields[0], "onset")?,
            label: fields[1].to_string(),
        });
    }
    EventList::new(events).map_err(|e| parse_err(path, 1, e.to_string()))
}

pub fn events_to_string(ev: &EventList) -> String {
    let mut out = format!("{EVENTS_MAGIC}\n");
    for e in ev.events() {
        let _ = writeln!(out, "{},{}", e.onset, e.label);
    }
    out
}

pub fn write_events(path: impl AsRef<Path>, ev: &EventList) -> Result<()> {
    write_atomic(path.as_ref(), &events_to_string(ev))
}

pub fn load_tasks(path: impl AsRef<Path>) -> Result<TaskIntervals> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut tasks = Vec::new();
    for (n, fields) in body_lines(path, &text, TASKS_MAGIC)? {
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                n,
                "expected `task_id,start_sample,end_sample,included`",
            ));
        }
        let included = match fields[3] {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(path, n, format!("included must be 0 or 1, got `{other}`"))),
        };
        tasks.push(TaskInterval {
            task_id: parse_field(path, n, fields[0], "task id")?,
            start: parse_field(path, n, fields[1], "start sample")?,
            end: parse_field(path, n, fields[2], "end sample")?,
            included,
        });
    }
    TaskIntervals::new(tasks).map_err(|e| parse_err(path, 1, e.to_string()))
}

pub fn tasks_to_string(tasks: &TaskIntervals) -> String {
    let mut out = format!("{TASKS_MAGIC}\n");
    for t in tasks.tasks() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            t.task_id,
            t.start,
            t.end,
            u8::from(t.included)
        );
    }
    out
}

pub fn write_tasks(path: impl AsRef<Path>, tasks: &TaskIntervals) -> Result<()> {
    write_atomic(path.as_ref(), &tasks_to_string(tasks))
}
