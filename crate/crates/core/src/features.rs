//! Feature extraction: EEG band power over spatial filters, ECG and GSR
//! descriptors, and horizontal fusion of feature blocks.
//!
//! Feature order is fixed: EEG bands in ascending frequency, filters in
//! model order within a band; ECG as (HR, HRV_LF, RMSSD); GSR as
//! (mean, SCR, SCL).

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::{band_power, band_power_between, bandpass_epochs, BandDef, BandPass, FilterSpec};
use crate::error::{Error, Result};
use crate::sigio::{write_atomic, EpochSet, Modality};
use crate::spatial::{apply_spatial, CspModel};

/// Feature rows for a set of windows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    data: Array2<f64>,
    labels: Option<Vec<u8>>,
    t_start: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(
        names: Vec<String>,
        data: Array2<f64>,
        labels: Option<Vec<u8>>,
        t_start: Vec<f64>,
    ) -> Result<Self> {
        if names.len() != data.ncols() {
            return Err(Error::data(format!(
                "{} feature names for {} columns",
                names.len(),
                data.ncols()
            )));
        }
        if t_start.len() != data.nrows() {
            return Err(Error::data("one start time per feature row is required"));
        }
        if let Some(l) = &labels {
            if l.len() != data.nrows() {
                return Err(Error::data("one label per feature row is required"));
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("feature values must be finite"));
        }
        Ok(FeatureMatrix {
            names,
            data,
            labels,
            t_start,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn t_start(&self) -> &[f64] {
        &self.t_start
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn with_labels(mut self, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.n_rows() {
                return Err(Error::data("one label per feature row is required"));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            data: self.data.select(Axis(0), idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            t_start: idx.iter().map(|&i| self.t_start[i]).collect(),
        }
    }

    /// CSV with `t_start_s`, optional `label`, then one column per feature.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_start_s");
        if self.labels.is_some() {
            out.push_str(",label");
        }
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, row) in self.data.rows().into_iter().enumerate() {
            let _ = write!(out, "{:?}", self.t_start[i]);
            if let Some(l) = &self.labels {
                let _ = write!(out, ",{}", l[i]);
            }
            for v in row {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::data("empty feature CSV"))?
            .split(',')
            .collect();
        if header.first() != Some(&"t_start_s") {
            return Err(Error::data("feature CSV must start with a t_start_s column"));
        }
        let has_label = header.get(1) == Some(&"label");
        let skip = if has_label { 2 } else { 1 };
        let names: Vec<String> = header[skip..].iter().map(|s| s.to_string()).collect();
        let mut t_start = Vec::new();
        let mut labels = Vec::new();
        let mut flat = Vec::new();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != header.len() {
                return Err(Error::data(format!("feature CSV row {} is ragged", n + 2)));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::data(format!("feature CSV row {}: bad number `{s}`", n + 2)))
            };
            t_start.push(num(fields[0])?);
            if has_label {
                labels.push(
                    fields[1]
                        .parse::<u8>()
                        .map_err(|_| Error::data(format!("feature CSV row {}: bad label", n + 2)))?,
                );
            }
            for f in &fields[skip..] {
                flat.push(num(f)?);
            }
        }
        let data = Array2::from_shape_vec((t_start.len(), names.len()), flat)
            .map_err(|e| Error::data(e.to_string()))?;
        FeatureMatrix::new(names, data, has_label.then_some(labels), t_start)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_csv())
    }
}

/// How band power is turned into a feature value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerScale {
    /// Natural log of the band power.
    Log,
    Raw,
}

impl PowerScale {
    pub fn apply(self, power: f64) -> Result<f64> {
        match self {
            PowerScale::Raw => Ok(power),
            PowerScale::Log => {
                if power > 0.0 {
                    Ok(power.ln())
                } else {
                    Err(Error::numerical(
                        "non-positive band power cannot be log-transformed (all-zero window?)",
                    ))
                }
            }
        }
    }
}

pub fn eeg_feature_names(models: &[CspModel]) -> Vec<String> {
    models
        .iter()
        .flat_map(|m| (0..m.n_filters()).map(move |i| format!("eeg:{}:csp{}", m.band.name, i + 1)))
        .collect()
}

/// Log band power of every spatial filter of every band, one row per epoch.
///
/// `models` must be in the band order of the configured band set and match
/// the epochs' channels.
pub fn eeg_features(
    epochs: &EpochSet,
    models: &[CspModel],
    bands: &[BandDef],
    filter: FilterSpec,
    scale: PowerScale,
) -> Result<FeatureMatrix> {
    if models.len() != bands.len() || models.iter().zip(bands).any(|(m, b)| &m.band != b) {
        return Err(Error::invalid("one spatial model per configured band is required, in band order"));
    }
    let width: usize = models.iter().map(CspModel::n_filters).sum();
    let mut data = Array2::zeros((epochs.n_epochs(), width));
    let mut col = 0;
    for model in models {
        let filtered = bandpass_epochs(epochs, &model.band, filter)?;
        let virt = apply_spatial(model, &filtered)?;
        for i in 0..virt.n_epochs() {
            for (j, p) in band_power(virt.epoch(i))?.into_iter().enumerate() {
                data[[i, col + j]] = scale.apply(p)?;
            }
        }
        col += model.n_filters();
    }
    FeatureMatrix::new(
        eeg_feature_names(models),
        data,
        epochs.labels().map(<[u8]>::to_vec),
        epochs.start_times(),
    )
}

/// Beat times within a window and the intervals between them.
#[derive(Debug, Clone, PartialEq)]
pub struct RrSeries {
    /// Seconds from the window start, strictly increasing.
    pub r_peak_times: Vec<f64>,
    /// Successive differences of `r_peak_times`, seconds.
    pub rr_intervals: Vec<f64>,
}

impl RrSeries {
    pub fn from_peaks(r_peak_times: Vec<f64>) -> Result<Self> {
        if r_peak_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::data("R-peak times must be strictly increasing"));
        }
        let rr_intervals: Vec<f64> = r_peak_times.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(rr) = rr_intervals.iter().find(|&&rr| !(0.3..=2.0).contains(&rr)) {
            log::warn!("RR interval {rr:.3} s outside the 0.3-2.0 s physiological range");
        }
        Ok(RrSeries {
            r_peak_times,
            rr_intervals,
        })
    }

    /// Builds a series from intervals, with the first beat at `t0`.
    pub fn from_intervals(t0: f64, rr: &[f64]) -> Result<Self> {
        if rr.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::data("RR intervals must be positive"));
        }
        let mut times = Vec::with_capacity(rr.len() + 1);
        times.push(t0);
        let mut t = t0;
        for &v in rr {
            t += v;
            times.push(t);
        }
        RrSeries::from_peaks(times)
    }
}

const QRS_BAND: (f64, f64) = (5.0, 20.0);
const REFRACTORY_S: f64 = 0.25;
const ENVELOPE_S: f64 = 2.0;

/// R-peak detection on a single ECG channel.
///
/// The signal is band-passed to 5-20 Hz and squared; a sample is a beat
/// candidate when it is a local maximum above half the centred 2 s rolling
/// maximum. Candidates closer than 250 ms keep the larger one.
pub fn detect_r_peaks(ecg: &[f64], rate_hz: f64) -> Result<RrSeries> {
    let seconds = ecg.len() as f64 / rate_hz;
    if seconds < 3.0 {
        return Err(Error::invalid(format!(
            "R-peak detection needs at least 3 s of ECG, got {seconds:.2} s"
        )));
    }
    let band = BandDef::new("qrs", QRS_BAND.0, QRS_BAND.1);
    let filter = BandPass::design(&band, rate_hz, FilterSpec::default())?;
    let energy: Vec<f64> = filter.filtfilt(ecg).into_iter().map(|v| v * v).collect();
    let n = energy.len();
    let peak_energy = energy.iter().cloned().fold(0.0, f64::max);
    if !(peak_energy > 1e-12) {
        return Err(Error::data("insufficient beats: ECG window is flat"));
    }

    let half = ((ENVELOPE_S * rate_hz) / 2.0).round() as usize;
    let threshold = rolling_max(&energy, half);
    let refractory = (REFRACTORY_S * rate_hz).round() as usize;

    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..n.saturating_sub(1) {
        let e = energy[i];
        if e <= 0.5 * threshold[i] || e < energy[i - 1] || e <= energy[i + 1] {
            continue;
        }
        match peaks.last_mut() {
            Some(last) if i - *last < refractory => {
                if e > energy[*last] {
                    *last = i;
                }
            }
            _ => peaks.push(i),
        }
    }
    if peaks.len() < 2 {
        return Err(Error::data(format!(
            "insufficient beats: {} R-peak(s) detected",
            peaks.len()
        )));
    }
    RrSeries::from_peaks(peaks.into_iter().map(|i| i as f64 / rate_hz).collect())
}

fn rolling_max(x: &[f64], half: usize) -> Vec<f64> {
    // Monotone deque over the centred window [i - half, i + half].
    let n = x.len();
    let mut out = vec![0.0; n];
    let mut dq: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut next = 0;
    for i in 0..n {
        let hi = (i + half).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&b| x[b] <= x[next]) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        let lo = i.saturating_sub(half);
        while dq.front().is_some_and(|&f| f < lo) {
            dq.pop_front();
        }
        out[i] = x[*dq.front().expect("window is never empty")];
    }
    out
}

pub const ECG_FEATURE_NAMES: [&str; 3] = ["ecg:hr_bpm", "ecg:hrv_lf", "ecg:rmssd_ms"];
pub const GSR_FEATURE_NAMES: [&str; 3] = ["gsr:mean", "gsr:scr_power", "gsr:scl_power"];

/// Tachogram resampling rate for HRV_LF.
pub const TACHOGRAM_RATE_HZ: f64 = 4.0;
pub const HRV_LF_BAND: (f64, f64) = (0.003, 0.1);

/// Heart rate (bpm), low-frequency HRV power (s²), and RMSSD (ms).
pub fn ecg_features(rr: &RrSeries, window_seconds: f64) -> Result<[f64; 3]> {
    let intervals = &rr.rr_intervals;
    if intervals.len() < 3 {
        return Err(Error::data(format!(
            "ECG features need at least 3 RR intervals, got {}",
            intervals.len()
        )));
    }
    if window_seconds < 10.0 {
        return Err(Error::invalid(format!(
            "HRV features need a window of at least 10 s, got {window_seconds} s"
        )));
    }
    let mean_rr = intervals.iter().sum::<f64>() / intervals.len() as f64;
    let hr = 60.0 / mean_rr;
    let sq: f64 = intervals.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    let rmssd_ms = (sq / (intervals.len() - 1) as f64).sqrt() * 1000.0;

    let tachogram = resample_tachogram(rr, window_seconds);
    let lf = band_power_between(&tachogram, HRV_LF_BAND.0, HRV_LF_BAND.1, TACHOGRAM_RATE_HZ)?;
    Ok([hr, lf, rmssd_ms])
}

/// RR interval as a function of time, linearly interpolated on a 4 Hz grid
/// spanning the window, held constant beyond the first and last beats, and
/// mean-removed.
fn resample_tachogram(rr: &RrSeries, window_seconds: f64) -> Vec<f64> {
    // Interval i ends at beat i+1.
    let knots: Vec<(f64, f64)> = rr
        .rr_intervals
        .iter()
        .enumerate()
        .map(|(i, &v)| (rr.r_peak_times[i + 1], v))
        .collect();
    let n = (window_seconds * TACHOGRAM_RATE_HZ).round() as usize;
    let mut j = 0;
    let mut out: Vec<f64> = (0..n)
        .map(|k| {
            let t = k as f64 / TACHOGRAM_RATE_HZ;
            if t <= knots[0].0 {
                return knots[0].1;
            }
            while j + 1 < knots.len() && knots[j + 1].0 < t {
                j += 1;
            }
            if j + 1 >= knots.len() {
                return knots[knots.len() - 1].1;
            }
            let (t0, v0) = knots[j];
            let (t1, v1) = knots[j + 1];
            v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    out
}

pub const SCR_BAND: (f64, f64) = (0.5, 2.0);
pub const SCL_BAND: (f64, f64) = (0.1, 0.5);

/// Mean amplitude, SCR band power and SCL band power of a GSR window.
pub fn gsr_features(gsr: &[f64], rate_hz: f64) -> Result<[f64; 3]> {
    let seconds = gsr.len() as f64 / rate_hz;
    if seconds + 1e-9 < 10.0 {
        return Err(Error::invalid(format!(
            "GSR features need a window of at least 10 s, got {seconds:.2} s"
        )));
    }
    let mean = gsr.iter().sum::<f64>() / gsr.len() as f64;
    let scr = band_power_between(gsr, SCR_BAND.0, SCR_BAND.1, rate_hz)?;
    let scl = band_power_between(gsr, SCL_BAND.0, SCL_BAND.1, rate_hz)?;
    Ok([mean, scr, scl])
}

fn first_channel_of(epochs: &EpochSet, modality: Modality) -> Result<usize> {
    epochs
        .channels()
        .indices_of(modality)
        .first()
        .copied()
        .ok_or_else(|| Error::data(format!("no {modality} channel in the recording")))
}

/// ECG features of every epoch, from the first ECG channel.
pub fn ecg_feature_matrix(epochs: &EpochSet) -> Result<FeatureMatrix> {
    let ch = first_channel_of(epochs, Modality::Ecg)?;
    let mut data = Array2::zeros((epochs.n_epochs(), 3));
    for i in 0..epochs.n_epochs() {
        let x: Vec<f64> = epochs.epoch(i).row(ch).to_vec();
        let rr = detect_r_peaks(&x, epochs.rate_hz())?;
        let f = ecg_features(&rr, epochs.window_seconds())?;
        data.row_mut(i).iter_mut().zip(f).for_each(|(d, v)| *d = v);
    }
    FeatureMatrix::new(
        ECG_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        data,
        epochs.labels().map(<[u8]>::to_vec),
        epochs.start_times(),
    )
}

/// GSR features of every epoch, from the first GSR channel.
pub fn gsr_feature_matrix(epochs: &EpochSet) -> Result<FeatureMatrix> {
    let ch = first_channel_of(epochs, Modality::Gsr)?;
    let mut data = Array2::zeros((epochs.n_epochs(), 3));
    for i in 0..epochs.n_epochs() {
        let x: Vec<f64> = epochs.epoch(i).row(ch).to_vec();
        let f = gsr_features(&x, epochs.rate_hz())?;
        data.row_mut(i).iter_mut().zip(f).for_each(|(d, v)| *d = v);
    }
    FeatureMatrix::new(
        GSR_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        data,
        epochs.labels().map(<[u8]>::to_vec),
        epochs.start_times(),
    )
}

/// Horizontal concatenation of feature blocks computed on the same windows.
pub fn fuse(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("nothing to fuse"))?;
    let mut labels = first.labels.clone();
    for p in &parts[1..] {
        if p.n_rows() != first.n_rows() {
            return Err(Error::data(format!(
                "cannot fuse blocks with {} and {} rows",
                first.n_rows(),
                p.n_rows()
            )));
        }
        if p.t_start
            .iter()
            .zip(&first.t_start)
            .any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::data("cannot fuse blocks cut on different window grids"));
        }
        match (&labels, &p.labels) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::data("fused blocks disagree on labels"));
            }
            (None, Some(b)) => labels = Some(b.clone()),
            _ => {}
        }
    }
    let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
    let data = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::data(e.to_string()))?;
    let names = parts.iter().flat_map(|p| p.names.iter().cloned()).collect();
    FeatureMatrix::new(names, data, labels, first.t_start.clone())
}
