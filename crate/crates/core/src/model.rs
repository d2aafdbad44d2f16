//! Shrinkage LDA, the end-to-end workload pipeline, and continuous
//! workload-index estimation.
//!
//! Training, cross-validation and the permutation test all go through
//! [`PreparedEpochs`]: per-band trial covariances (for CSP) and raw second
//! moments `XXᵀ/T` (for band power) are computed once, label-independently,
//! so that refitting on a subset or on shuffled labels never refilters.
//! Band power of a spatially filtered window equals `w·M·wᵀ` exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{filter_epoch_tensor, BandDef, BandPass, BandSet, FilterSpec};
use crate::error::{Error, Result};
use crate::features::{
    ecg_feature_matrix, eeg_feature_names, fuse, gsr_feature_matrix, FeatureMatrix, PowerScale,
};
use crate::sigio::{slide, write_atomic, EpochSet, Modality, Recording};
use crate::spatial::{
    csp_train, csp_train_regularized, mean_covariance, pc_difference, trial_covariance, CspModel,
    PenaltyMatrix, Regularization,
};

/// Shrinkage intensity of the pooled covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shrinkage {
    /// Ledoit–Wolf analytic estimate.
    Auto,
    Fixed { gamma: f64 },
}

/// Two-class linear discriminant on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    /// Weights over the kept, standardized features.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Input columns that survived the zero-variance check.
    pub kept: Vec<usize>,
    pub input_width: usize,
}

impl LdaModel {
    pub fn dropped(&self) -> Vec<usize> {
        (0..self.input_width).filter(|i| !self.kept.contains(i)).collect()
    }

    /// Signed score; positive means class 1 (high workload).
    pub fn score(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.input_width {
            return Err(Error::data(format!(
                "classifier expects {} features, got {}",
                self.input_width,
                x.len()
            )));
        }
        let mut s = self.bias;
        for (j, &col) in self.kept.iter().enumerate() {
            s += self.weights[j] * (x[col] - self.mean[j]) / self.std[j];
        }
        Ok(s)
    }

    pub fn score_batch(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        x.rows().into_iter().map(|r| self.score(r)).collect()
    }

    /// Weights and bias expressed on the unstandardized inputs.
    pub fn input_space(&self) -> (Vec<f64>, f64) {
        let mut w = vec![0.0; self.input_width];
        let mut b = self.bias;
        for (j, &col) in self.kept.iter().enumerate() {
            w[col] = self.weights[j] / self.std[j];
            b -= self.weights[j] * self.mean[j] / self.std[j];
        }
        (w, b)
    }
}

pub fn slda_train(features: &FeatureMatrix, shrinkage: Shrinkage) -> Result<LdaModel> {
    let labels = features
        .labels()
        .ok_or_else(|| Error::data("sLDA training needs labeled features"))?;
    slda_train_rows(features.data(), labels, shrinkage)
}

pub fn slda_train_rows(x: &Array2<f64>, labels: &[u8], shrinkage: Shrinkage) -> Result<LdaModel> {
    let (n, width) = x.dim();
    if width == 0 {
        return Err(Error::invalid("sLDA needs at least one feature"));
    }
    if labels.len() != n {
        return Err(Error::data("one label per feature row is required"));
    }
    for class in [0u8, 1] {
        let count = labels.iter().filter(|&&l| l == class).count();
        if count < 2 {
            return Err(Error::data(format!(
                "class {class} has {count} samples, at least 2 are required"
            )));
        }
    }
    if let Shrinkage::Fixed { gamma } = shrinkage {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::invalid(format!("shrinkage must lie in [0, 1], got {gamma}")));
        }
    }

    let mut kept = Vec::new();
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for (j, col) in x.columns().into_iter().enumerate() {
        let m = col.sum() / n as f64;
        let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        if s > 1e-12 * m.abs().max(1.0) {
            kept.push(j);
            mean.push(m);
            std.push(s);
        }
    }
    if kept.is_empty() {
        return Err(Error::data("every feature has zero variance"));
    }
    let d = kept.len();
    let z = DMatrix::from_fn(n, d, |i, j| (x[[i, kept[j]]] - mean[j]) / std[j]);

    let mut mu = [DVector::zeros(d), DVector::zeros(d)];
    let mut counts = [0usize; 2];
    for (i, &l) in labels.iter().enumerate() {
        let c = usize::from(l != 0);
        mu[c] += z.row(i).transpose();
        counts[c] += 1;
    }
    mu[0] /= counts[0] as f64;
    mu[1] /= counts[1] as f64;
    let mut centered = z;
    for (i, &l) in labels.iter().enumerate() {
        let c = usize::from(l != 0);
        let row = centered.row(i) - mu[c].transpose();
        centered.set_row(i, &row);
    }
    let sigma = centered.transpose() * &centered / n as f64;

    let gamma = match shrinkage {
        Shrinkage::Auto => ledoit_wolf_gamma(&centered),
        Shrinkage::Fixed { gamma } => gamma,
    };
    let nu = sigma.trace() / d as f64;
    let shrunk = &sigma * (1.0 - gamma) + DMatrix::identity(d, d) * (gamma * nu);
    let diff = &mu[1] - &mu[0];
    let w = match shrunk.clone().cholesky() {
        Some(ch) => ch.solve(&diff),
        None => shrunk
            .lu()
            .solve(&diff)
            .ok_or_else(|| Error::numerical("pooled covariance is singular; use shrinkage"))?,
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite discriminant weights"));
    }
    let bias = -w.dot(&(&mu[0] + &mu[1])) / 2.0;
    Ok(LdaModel {
        weights: w.iter().copied().collect(),
        bias,
        gamma,
        mean,
        std,
        kept,
        input_width: width,
    })
}

/// Ledoit–Wolf shrinkage toward a scaled identity for centered samples.
fn ledoit_wolf_gamma(xc: &DMatrix<f64>) -> f64 {
    let (n, d) = xc.shape();
    let (nf, df) = (n as f64, d as f64);
    let x2 = xc.map(|v| v * v);
    let emp_trace: f64 = x2.sum() / nf;
    let mu = emp_trace / df;
    let beta_sum = (x2.transpose() * &x2).sum();
    let delta_sum = (xc.transpose() * xc).map(|v| v * v).sum() / (nf * nf);
    let beta = (beta_sum / nf - delta_sum) / (df * nf);
    let delta = (delta_sum - 2.0 * mu * emp_trace + df * mu * mu) / df;
    let beta = beta.min(delta);
    if beta <= 0.0 || delta <= 0.0 {
        0.0
    } else {
        (beta / delta).clamp(0.0, 1.0)
    }
}

/// Everything that determines how a classifier is trained and applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub band_set: BandSet,
    pub window_seconds: f64,
    pub step_seconds: f64,
    /// Spatial filters per band; half from each end of the spectrum.
    pub n_filters: usize,
    pub filter: FilterSpec,
    pub regularization: Regularization,
    pub modalities: Vec<Modality>,
    pub shrinkage: Shrinkage,
    pub power_scale: PowerScale,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            band_set: BandSet::All5,
            window_seconds: 2.0,
            step_seconds: 1.0,
            n_filters: 6,
            filter: FilterSpec::default(),
            regularization: Regularization::None,
            modalities: vec![Modality::Eeg],
            shrinkage: Shrinkage::Auto,
            power_scale: PowerScale::Log,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, rate_hz: f64) -> Result<()> {
        if !(self.window_seconds > 0.0 && self.window_seconds.is_finite()) {
            return Err(Error::invalid(format!("window must be positive, got {}", self.window_seconds)));
        }
        if !(self.step_seconds > 0.0 && self.step_seconds.is_finite()) {
            return Err(Error::invalid(format!("step must be positive, got {}", self.step_seconds)));
        }
        if self.modalities.is_empty() {
            return Err(Error::invalid("at least one modality is required"));
        }
        if self.uses(Modality::Eeg) {
            if self.n_filters == 0 || self.n_filters % 2 != 0 {
                return Err(Error::invalid(format!(
                    "filters per band must be even and positive, got {}",
                    self.n_filters
                )));
            }
            for band in self.band_set.bands() {
                band.validate(rate_hz)?;
            }
            if self.filter.order == 0 || self.filter.order % 2 != 0 {
                return Err(Error::invalid("filter order must be even and positive"));
            }
        }
        if (self.uses(Modality::Ecg) || self.uses(Modality::Gsr)) && self.window_seconds < 10.0 {
            return Err(Error::invalid(format!(
                "ECG and GSR features need windows of at least 10 s, got {} s",
                self.window_seconds
            )));
        }
        if let Regularization::Invariant { lambda, k } = self.regularization {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
            }
            if k == 0 {
                return Err(Error::invalid("k must be at least 1"));
            }
        }
        if let Shrinkage::Fixed { gamma } = self.shrinkage {
            if !(0.0..=1.0).contains(&gamma) {
                return Err(Error::invalid(format!("shrinkage must lie in [0, 1], got {gamma}")));
            }
        }
        Ok(())
    }

    pub fn uses(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }

    pub fn bands(&self) -> Vec<BandDef> {
        if self.uses(Modality::Eeg) {
            self.band_set.bands()
        } else {
            Vec::new()
        }
    }
}

/// Label-independent per-window quantities reused across refits.
#[derive(Debug, Clone)]
pub struct PreparedEpochs {
    bands: Vec<BandDef>,
    /// `[band][window]`, centered and unit-trace.
    covariances: Vec<Vec<DMatrix<f64>>>,
    /// `[band][window]`, `XXᵀ/T` of the band-passed window.
    moments: Vec<Vec<DMatrix<f64>>>,
    physio: Option<FeatureMatrix>,
    t_start: Vec<f64>,
    labels: Option<Vec<u8>>,
    eeg_labels: Vec<String>,
}

impl PreparedEpochs {
    /// `epochs` may contain any channels; EEG is selected by `eeg_labels`
    /// (or by modality when `None`), physiological channels by modality.
    pub fn new(epochs: &EpochSet, cfg: &PipelineConfig, eeg_labels: Option<&[String]>) -> Result<Self> {
        cfg.validate(epochs.rate_hz())?;
        if epochs.n_epochs() == 0 {
            return Err(Error::data("no epochs"));
        }
        let bands = cfg.bands();
        let eeg_idx = match eeg_labels {
            Some(l) => epochs.channels().indices_by_label(l)?,
            None => epochs.channels().indices_of(Modality::Eeg),
        };
        if !bands.is_empty() && eeg_idx.len() < cfg.n_filters.max(2) {
            return Err(Error::data(format!(
                "{} EEG channels cannot support {} spatial filters",
                eeg_idx.len(),
                cfg.n_filters
            )));
        }
        let eeg = epochs.select_channels(&eeg_idx);
        let mut covariances = Vec::with_capacity(bands.len());
        let mut moments = Vec::with_capacity(bands.len());
        for band in &bands {
            let filter = BandPass::design(band, epochs.rate_hz(), cfg.filter)?;
            let data = filter_epoch_tensor(&filter, eeg.data());
            let per: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..data.len_of(Axis(0)))
                .into_par_iter()
                .map(|i| {
                    let x = data.index_axis(Axis(0), i);
                    let cov = trial_covariance(x)?;
                    let xm = DMatrix::from_row_iterator(x.nrows(), x.ncols(), x.iter().copied());
                    let m = &xm * xm.transpose() / x.ncols() as f64;
                    Ok((cov, m))
                })
                .collect::<Result<_>>()?;
            let (c, m): (Vec<_>, Vec<_>) = per.into_iter().unzip();
            covariances.push(c);
            moments.push(m);
        }
        let mut physio_parts = Vec::new();
        if cfg.uses(Modality::Ecg) {
            physio_parts.push(ecg_feature_matrix(epochs)?);
        }
        if cfg.uses(Modality::Gsr) {
            physio_parts.push(gsr_feature_matrix(epochs)?);
        }
        let physio = if physio_parts.is_empty() {
            None
        } else {
            Some(fuse(&physio_parts)?)
        };
        Ok(PreparedEpochs {
            bands,
            covariances,
            moments,
            physio,
            t_start: epochs.start_times(),
            labels: epochs.labels().map(<[u8]>::to_vec),
            eeg_labels: eeg.channels().labels.clone(),
        })
    }

    pub fn n_windows(&self) -> usize {
        self.t_start.len()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn t_start(&self) -> &[f64] {
        &self.t_start
    }

    pub fn eeg_labels(&self) -> &[String] {
        &self.eeg_labels
    }

    /// Mean trial covariance of each band over the given windows.
    pub fn band_covariances(&self, idx: &[usize]) -> Result<Vec<crate::spatial::CovMatrix>> {
        self.covariances
            .iter()
            .map(|trials| mean_covariance(trials, idx))
            .collect()
    }

    /// Feature rows for the given windows under fitted spatial filters.
    pub fn features(&self, csp: &[CspModel], scale: PowerScale, idx: &[usize]) -> Result<Array2<f64>> {
        let eeg_width: usize = csp.iter().map(CspModel::n_filters).sum();
        let phys_width = self.physio.as_ref().map_or(0, FeatureMatrix::width);
        let mut out = Array2::zeros((idx.len(), eeg_width + phys_width));
        // Filters as contiguous rows for the quadratic forms below.
        let rows: Vec<Vec<Vec<f64>>> = csp
            .iter()
            .map(|m| (0..m.n_filters()).map(|f| m.filters.row(f).iter().copied().collect()).collect())
            .collect();
        for (r, &i) in idx.iter().enumerate() {
            let mut col = 0;
            for (b, filters) in rows.iter().enumerate() {
                let m = self.moments[b][i].as_slice();
                let c = filters.first().map_or(0, Vec::len);
                for w in filters {
                    // M is symmetric, so column-major storage reads as rows.
                    let mut p = 0.0;
                    for (j, wj) in w.iter().enumerate() {
                        let mj = &m[j * c..(j + 1) * c];
                        p += wj * mj.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                    }
                    out[[r, col]] = scale.apply(p)?;
                    col += 1;
                }
            }
            if let Some(ph) = &self.physio {
                for (k, v) in ph.row(i).iter().enumerate() {
                    out[[r, col + k]] = *v;
                }
            }
        }
        Ok(out)
    }

    fn feature_names(&self, csp: &[CspModel]) -> Vec<String> {
        let mut names = eeg_feature_names(csp);
        if let Some(ph) = &self.physio {
            names.extend(ph.names().iter().cloned());
        }
        names
    }
}

/// Context penalties, one per band, from calibration windows `idx` and a
/// prepared use session.
pub fn context_penalties(
    calib: &PreparedEpochs,
    idx: &[usize],
    use_session: &PreparedEpochs,
    k: usize,
) -> Result<Vec<PenaltyMatrix>> {
    let all: Vec<usize> = (0..use_session.n_windows()).collect();
    let c = calib.band_covariances(idx)?;
    let u = use_session.band_covariances(&all)?;
    c.iter().zip(&u).map(|(c, u)| pc_difference(c, u, k)).collect()
}

/// Spatial filters and discriminant fitted on one set of labeled windows.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    pub csp: Vec<CspModel>,
    pub lda: LdaModel,
}

/// Fits CSP and sLDA on windows `train` with the given labels (indexed by window).
pub fn fit_prepared(
    prep: &PreparedEpochs,
    train: &[usize],
    labels: &[u8],
    cfg: &PipelineConfig,
    penalties: Option<&[PenaltyMatrix]>,
) -> Result<FittedPipeline> {
    if labels.len() != prep.n_windows() {
        return Err(Error::data("one label per window is required"));
    }
    let idx1: Vec<usize> = train.iter().copied().filter(|&i| labels[i] == 1).collect();
    let idx0: Vec<usize> = train.iter().copied().filter(|&i| labels[i] == 0).collect();
    for (class, idx) in [(0, &idx0), (1, &idx1)] {
        if idx.len() < 2 {
            return Err(Error::data(format!(
                "class {class} has {} training windows, at least 2 are required",
                idx.len()
            )));
        }
    }
    let mut csp = Vec::with_capacity(prep.bands.len());
    for (b, band) in prep.bands.iter().enumerate() {
        let c1 = mean_covariance(&prep.covariances[b], &idx1)?;
        let c0 = mean_covariance(&prep.covariances[b], &idx0)?;
        let model = match (cfg.regularization, penalties) {
            (Regularization::None, _) => csp_train(&c1, &c0, cfg.n_filters, band.clone())?,
            (Regularization::Invariant { lambda, .. }, Some(p)) => {
                csp_train_regularized(&c1, &c0, &p[b], lambda, cfg.n_filters, band.clone())?
            }
            (Regularization::Invariant { .. }, None) => {
                return Err(Error::invalid("invariant CSP requires use-context data"));
            }
        };
        csp.push(model);
    }
    let x = prep.features(&csp, cfg.power_scale, train)?;
    let y: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
    let lda = slda_train_rows(&x, &y, cfg.shrinkage)?;
    Ok(FittedPipeline { csp, lda })
}

impl FittedPipeline {
    pub fn scores(&self, prep: &PreparedEpochs, idx: &[usize], scale: PowerScale) -> Result<Vec<f64>> {
        let x = prep.features(&self.csp, scale, idx)?;
        self.lda.score_batch(&x)
    }
}

/// What the classifier was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub n_trials: usize,
    pub class_counts: [usize; 2],
    pub dropped_features: Vec<String>,
    pub seed: Option<u64>,
    pub use_context_windows: Option<usize>,
}

/// A sealed, serializable workload classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadClassifier {
    pub config: PipelineConfig,
    pub rate_hz: f64,
    pub eeg_channels: Vec<String>,
    pub csp: Vec<CspModel>,
    pub lda: LdaModel,
    pub feature_names: Vec<String>,
    pub provenance: Provenance,
}

pub const MODEL_FORMAT: &str = "cogload-model v1";

/// Trains the full chain on labeled calibration epochs.
///
/// Invariant CSP needs the use-context recording; its sliding windows
/// supply the use-session covariance.
pub fn train_workload(
    calib: &EpochSet,
    cfg: &PipelineConfig,
    use_recording: Option<&Recording>,
) -> Result<WorkloadClassifier> {
    let labels = calib
        .labels()
        .ok_or_else(|| Error::data("calibration epochs must be labeled"))?
        .to_vec();
    let prep = PreparedEpochs::new(calib, cfg, None)?;
    let all: Vec<usize> = (0..prep.n_windows()).collect();
    let (penalties, use_windows) = match cfg.regularization {
        Regularization::None => (None, None),
        Regularization::Invariant { k, .. } => {
            let rec = use_recording
                .ok_or_else(|| Error::invalid("invariant CSP requires a use-context recording"))?;
            let use_prep = prepare_use_session(rec, cfg, &prep.eeg_labels)?;
            (
                Some(context_penalties(&prep, &all, &use_prep, k)?),
                Some(use_prep.n_windows()),
            )
        }
    };
    let fitted = fit_prepared(&prep, &all, &labels, cfg, penalties.as_deref())?;
    let feature_names = prep.feature_names(&fitted.csp);
    let dropped_features = fitted
        .lda
        .dropped()
        .into_iter()
        .map(|i| feature_names[i].clone())
        .collect();
    let class_counts = calib.class_counts();
    Ok(WorkloadClassifier {
        config: cfg.clone(),
        rate_hz: calib.rate_hz(),
        eeg_channels: prep.eeg_labels.clone(),
        csp: fitted.csp,
        lda: fitted.lda,
        feature_names,
        provenance: Provenance {
            n_trials: calib.n_epochs(),
            class_counts,
            dropped_features,
            seed: None,
            use_context_windows: use_windows,
        },
    })
}

/// Sliding windows of a use session, prepared with the calibration EEG montage.
pub fn prepare_use_session(rec: &Recording, cfg: &PipelineConfig, eeg_labels: &[String]) -> Result<PreparedEpochs> {
    let windows = slide(rec, cfg.window_seconds, cfg.step_seconds)?;
    let labels = (!eeg_labels.is_empty()).then_some(eeg_labels);
    PreparedEpochs::new(&windows, cfg, labels)
}

impl WorkloadClassifier {
    pub fn fitted(&self) -> FittedPipeline {
        FittedPipeline {
            csp: self.csp.clone(),
            lda: self.lda.clone(),
        }
    }

    /// Raw scores of every window of a prepared session.
    pub fn score_prepared(&self, prep: &PreparedEpochs) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..prep.n_windows()).collect();
        self.fitted().scores(prep, &all, self.config.power_scale)
    }

    pub fn score_epochs(&self, epochs: &EpochSet) -> Result<Vec<f64>> {
        self.check_rate(epochs.rate_hz())?;
        let prep = PreparedEpochs::new(epochs, &self.config, Some(&self.eeg_channels))?;
        self.score_prepared(&prep)
    }

    fn check_rate(&self, rate: f64) -> Result<()> {
        if (rate - self.rate_hz).abs() > 1e-9 {
            return Err(Error::data(format!(
                "classifier was trained at {} Hz, recording is {} Hz",
                self.rate_hz, rate
            )));
        }
        Ok(())
    }

    fn body_json(&self) -> Result<(serde_json::Value, String)> {
        let value = serde_json::to_value(self).map_err(|e| Error::data(e.to_string()))?;
        let text = serde_json::to_string(&value).map_err(|e| Error::data(e.to_string()))?;
        Ok((value, text))
    }

    pub fn to_json(&self) -> Result<String> {
        let (value, text) = self.body_json()?;
        let doc = serde_json::json!({
            "format": MODEL_FORMAT,
            "checksum": hex::encode(Sha256::digest(text.as_bytes())),
            "body": value,
        });
        serde_json::to_string_pretty(&doc).map_err(|e| Error::data(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::data(format!("model file: {e}")))?;
        let format = doc.get("format").and_then(|v| v.as_str());
        if format != Some(MODEL_FORMAT) {
            return Err(Error::data(format!(
                "unsupported model format {:?}, expected `{MODEL_FORMAT}`",
                format.unwrap_or("<missing>")
            )));
        }
        let body = doc
            .get("body")
            .ok_or_else(|| Error::data("model file has no body"))?;
        let expected = doc.get("checksum").and_then(|v| v.as_str()).unwrap_or("");
        let text = serde_json::to_string(body).map_err(|e| Error::data(e.to_string()))?;
        if hex::encode(Sha256::digest(text.as_bytes())) != expected {
            return Err(Error::data("model checksum mismatch; the file is corrupted or edited"));
        }
        let clf: WorkloadClassifier =
            serde_json::from_value(body.clone()).map_err(|e| Error::data(format!("model body: {e}")))?;
        clf.check_consistency()?;
        Ok(clf)
    }

    fn check_consistency(&self) -> Result<()> {
        let eeg_width: usize = self.csp.iter().map(CspModel::n_filters).sum();
        if eeg_width > self.lda.input_width || self.feature_names.len() != self.lda.input_width {
            return Err(Error::data("model feature width is inconsistent"));
        }
        if self.csp.iter().any(|m| m.n_channels() != self.eeg_channels.len()) {
            return Err(Error::data("model filters do not match its channel list"));
        }
        let k = self.lda.kept.len();
        if self.lda.weights.len() != k || self.lda.mean.len() != k || self.lda.std.len() != k {
            return Err(Error::data("model discriminant vectors are inconsistent"));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_json()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// How raw scores are mapped onto [−1, +1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Normalization {
    /// Session minimum to −1, maximum to +1.
    #[default]
    MinMax,
    /// Percentiles mapped to ±1 with clipping outside.
    Percentile { low: f64, high: f64 },
}

impl Normalization {
    pub fn robust() -> Self {
        Normalization::Percentile { low: 2.0, high: 98.0 }
    }
}

pub fn normalize_index(raw: &[f64]) -> Result<Vec<f64>> {
    normalize_index_with(raw, Normalization::MinMax)
}

pub fn normalize_index_with(raw: &[f64], how: Normalization) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot normalize an empty score list"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("scores must be finite"));
    }
    let (lo, hi) = match how {
        Normalization::MinMax => (
            raw.iter().copied().fold(f64::INFINITY, f64::min),
            raw.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
        Normalization::Percentile { low, high } => {
            if !(0.0 <= low && low < high && high <= 100.0) {
                return Err(Error::invalid("percentiles must satisfy 0 ≤ low < high ≤ 100"));
            }
            let mut sorted = raw.to_vec();
            sorted.sort_by(f64::total_cmp);
            (percentile(&sorted, low), percentile(&sorted, high))
        }
    };
    if hi <= lo {
        return Ok(vec![0.0; raw.len()]);
    }
    Ok(raw
        .iter()
        .map(|v| (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
        .collect())
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Continuous workload estimate over a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadIndexSeries {
    pub t_start: Vec<f64>,
    pub raw: Vec<f64>,
    pub index: Vec<f64>,
    pub window_seconds: f64,
}

impl WorkloadIndexSeries {
    pub fn new(t_start: Vec<f64>, raw: Vec<f64>, window_seconds: f64, how: Normalization) -> Result<Self> {
        if t_start.len() != raw.len() {
            return Err(Error::data("one start time per score is required"));
        }
        let index = normalize_index_with(&raw, how)?;
        Ok(WorkloadIndexSeries {
            t_start,
            raw,
            index,
            window_seconds,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_start_s,raw_score,workload_index\n");
        for i in 0..self.len() {
            let _ = writeln!(out, "{:?},{:?},{:?}", self.t_start[i], self.raw[i], self.index[i]);
        }
        out
    }

    /// Parses the CSV written by [`to_csv`](Self::to_csv); the window length
    /// is not stored there and must be supplied.
    pub fn from_csv(text: &str, window_seconds: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("t_start_s,raw_score,workload_index") {
            return Err(Error::data("series CSV header must be t_start_s,raw_score,workload_index"));
        }
        let mut s = WorkloadIndexSeries {
            t_start: Vec::new(),
            raw: Vec::new(),
            index: Vec::new(),
            window_seconds,
        };
        for (n, line) in lines.enumerate() {
            let f: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::data(format!("series CSV row {}: bad number", n + 2)))?;
            if f.len() != 3 {
                return Err(Error::data(format!("series CSV row {} is ragged", n + 2)));
            }
            s.t_start.push(f[0]);
            s.raw.push(f[1]);
            s.index.push(f[2]);
        }
        Ok(s)
    }
}

/// Slides a window over the recording, scores each window, and normalizes
/// the scores over the whole session.
pub fn estimate_series(
    clf: &WorkloadClassifier,
    rec: &Recording,
    window_seconds: f64,
    step_seconds: f64,
    how: Normalization,
) -> Result<WorkloadIndexSeries> {
    clf.check_rate(rec.rate_hz())?;
    let mut cfg = clf.config.clone();
    cfg.window_seconds = window_seconds;
    cfg.step_seconds = step_seconds;
    let windows = slide(rec, window_seconds, step_seconds)?;
    let prep = PreparedEpochs::new(&windows, &cfg, Some(&clf.eeg_channels))?;
    let raw = clf.score_prepared(&prep)?;
    WorkloadIndexSeries::new(prep.t_start.clone(), raw, window_seconds, how)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::eeg_features;
    use crate::sigio::ChannelInfo;
    use approx::assert_relative_eq;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn two_class(n: usize, d: usize, sep: f64, seed: u64) -> (Array2<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = Array2::from_shape_fn((n, d), |(i, j)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * (1.0 + j as f64) + if labels[i] == 1 { sep } else { -sep }
        });
        (x, labels)
    }

    #[test]
    fn separable_one_dimensional() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let x = Array2::from_shape_fn((40, 1), |(i, _)| {
            (if labels[i] == 1 { 1.0 } else { -1.0 }) + noise.sample(&mut rng)
        });
        let m = slda_train_rows(&x, &labels, Shrinkage::Auto).unwrap();
        for (s, l) in m.score_batch(&x).unwrap().iter().zip(&labels) {
            assert_eq!(*s > 0.0, *l == 1);
        }
    }

    #[test]
    fn identical_distributions_near_chance() {
        let (x, labels) = two_class(400, 3, 0.0, 2);
        let m = slda_train_rows(&x, &labels, Shrinkage::Auto).unwrap();
        let acc = m
            .score_batch(&x)
            .unwrap()
            .iter()
            .zip(&labels)
            .filter(|(s, l)| (**s > 0.0) == (**l == 1))
            .count() as f64
            / 400.0;
        assert!((acc - 0.5).abs() < 0.1, "{acc}");
    }

    // Plain LDA by explicit inversion of the pooled covariance on raw inputs.
    #[test]
    fn unshrunk_matches_closed_form() {
        let (x, labels) = two_class(200, 2, 0.7, 3);
        let m = slda_train_rows(&x, &labels, Shrinkage::Fixed { gamma: 0.0 }).unwrap();
        let mut mu = [[0.0; 2]; 2];
        let mut cnt = [0.0; 2];
        for i in 0..200 {
            let c = labels[i] as usize;
            cnt[c] += 1.0;
            for j in 0..2 {
                mu[c][j] += x[[i, j]];
            }
        }
        for c in 0..2 {
            for j in 0..2 {
                mu[c][j] /= cnt[c];
            }
        }
        let mut s = [[0.0; 2]; 2];
        for i in 0..200 {
            let c = labels[i] as usize;
            for a in 0..2 {
                for b in 0..2 {
                    s[a][b] += (x[[i, a]] - mu[c][a]) * (x[[i, b]] - mu[c][b]) / 200.0;
                }
            }
        }
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
        let dm = [mu[1][0] - mu[0][0], mu[1][1] - mu[0][1]];
        let w = [
            inv[0][0] * dm[0] + inv[0][1] * dm[1],
            inv[1][0] * dm[0] + inv[1][1] * dm[1],
        ];
        let b = -(w[0] * (mu[0][0] + mu[1][0]) + w[1] * (mu[0][1] + mu[1][1])) / 2.0;
        let (wi, bi) = m.input_space();
        assert_relative_eq!(wi[0], w[0], epsilon = 1e-10);
        assert_relative_eq!(wi[1], w[1], epsilon = 1e-10);
        assert_relative_eq!(bi, b, epsilon = 1e-10);
    }

    #[test]
    fn full_shrinkage_points_along_mean_difference() {
        let (x, labels) = two_class(100, 4, 0.5, 4);
        let m = slda_train_rows(&x, &labels, Shrinkage::Fixed { gamma: 1.0 }).unwrap();
        let mut d = vec![0.0; 4];
        for i in 0..100 {
            let sign = if labels[i] == 1 { 1.0 } else { -1.0 };
            for j in 0..4 {
                d[j] += sign * (x[[i, j]] - m.mean[j]) / m.std[j] / 50.0;
            }
        }
        let dot: f64 = d.iter().zip(&m.weights).map(|(a, b)| a * b).sum();
        let na: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = m.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((dot / (na * nb) - 1.0).abs() < 1e-6);
    }

    // Frozen from sklearn.covariance.ledoit_wolf_shrinkage(X, assume_centered=True),
    // X[i][j] = (7i + 3j) mod 11 − 5 + 0.1·i·j, column-centered.
    #[test]
    fn ledoit_wolf_matches_reference() {
        let raw = DMatrix::from_fn(8, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + 0.1 * (i * j) as f64);
        let means = raw.row_mean();
        let xc = DMatrix::from_fn(8, 3, |i, j| raw[(i, j)] - means[j]);
        assert_relative_eq!(ledoit_wolf_gamma(&xc), 0.7502737410313778, epsilon = 1e-12);
    }

    #[test]
    fn ledoit_wolf_gamma_in_range_and_shrinks_small_samples() {
        let (x, labels) = two_class(12, 10, 0.3, 5);
        let m = slda_train_rows(&x, &labels, Shrinkage::Auto).unwrap();
        assert!(m.gamma > 0.0 && m.gamma <= 1.0, "{}", m.gamma);
        // Strongly correlated features: the identity target is wrong, so a
        // large sample should barely shrink.
        let (mut x, labels) = two_class(4000, 2, 0.3, 6);
        let first = x.column(0).to_owned();
        x.column_mut(1).zip_mut_with(&first, |b, a| *b = 0.2 * *b + 3.0 * a);
        let m = slda_train_rows(&x, &labels, Shrinkage::Auto).unwrap();
        assert!(m.gamma < 0.05, "{}", m.gamma);
    }

    #[test]
    fn midpoint_scores_zero_and_means_separate() {
        let (x, labels) = two_class(60, 3, 1.0, 7);
        let m = slda_train_rows(&x, &labels, Shrinkage::Auto).unwrap();
        let mut mu = [Array2::<f64>::zeros((1, 3)), Array2::zeros((1, 3))];
        for i in 0..60 {
            let c = labels[i] as usize;
            for j in 0..3 {
                mu[c][[0, j]] += x[[i, j]] / 30.0;
            }
        }
        let mid = (&mu[0] + &mu[1]) / 2.0;
        assert!(m.score(mid.row(0)).unwrap().abs() < 1e-10);
        assert!(m.score(mu[1].row(0)).unwrap() > 0.0);
        assert!(m.score(mu[0].row(0)).unwrap() < 0.0);
        assert!(m.score(ndarray::arr1(&[1.0, 2.0]).view()).is_err());
    }

    #[test]
    fn zero_variance_features_dropped() {
        let (mut x, labels) = two_class(40, 3, 1.0, 8);
        x.column_mut(1).fill(5.0);
        let m = slda_train_rows(&x, &labels, Shrinkage::Auto).unwrap();
        assert_eq!(m.kept, vec![0, 2]);
        assert_eq!(m.dropped(), vec![1]);
        assert_eq!(m.input_width, 3);
        x.fill(1.0);
        assert!(slda_train_rows(&x, &labels, Shrinkage::Auto).is_err());
        let one_class = vec![1u8; 40];
        assert!(slda_train_rows(&x, &one_class, Shrinkage::Auto).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn affine_rescaling_keeps_decisions(seed in 0u64..1000, scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
            let (x, labels) = two_class(60, 3, 0.4, seed);
            let (test, _) = two_class(30, 3, 0.4, seed + 1);
            let a = slda_train_rows(&x, &labels, Shrinkage::Auto).unwrap();
            let xs = x.mapv(|v| v * scale + shift);
            let ts = test.mapv(|v| v * scale + shift);
            let b = slda_train_rows(&xs, &labels, Shrinkage::Auto).unwrap();
            let sa = a.score_batch(&test).unwrap();
            let sb = b.score_batch(&ts).unwrap();
            for (p, q) in sa.iter().zip(&sb) {
                prop_assert!(p.abs() < 1e-9 || (*p > 0.0) == (*q > 0.0));
            }
        }

        #[test]
        fn normalization_preserves_order(raw in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
            let z = normalize_index(&raw).unwrap();
            for i in 0..raw.len() {
                prop_assert!((-1.0..=1.0).contains(&z[i]));
                for j in 0..raw.len() {
                    if raw[i] < raw[j] {
                        prop_assert!(z[i] <= z[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_index(&[-3.0, 0.0, 1.0]).unwrap(), vec![-1.0, 0.5, 1.0]);
        assert_eq!(normalize_index(&[2.0; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(normalize_index(&[-2.5, 0.0, 2.5]).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert!(normalize_index(&[]).is_err());
        let mut raw: Vec<f64> = (0..100).map(f64::from).collect();
        raw[99] = 1e6;
        let robust = normalize_index_with(&raw, Normalization::robust()).unwrap();
        assert_eq!(robust[99], 1.0);
        assert!(robust[50].abs() < 0.1);
    }

    fn random_session(n: usize, c: usize, seed: u64) -> EpochSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = 512;
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let data = Array3::from_shape_fn((n, c, t), |(i, ch, _)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if ch == 0 && labels[i] == 1 {
                2.0 * z
            } else {
                z
            }
        });
        let info = ChannelInfo::new((0..c).map(|i| format!("e{i}")).collect(), vec![Modality::Eeg; c]).unwrap();
        EpochSet::new(data, Some(labels), 2.0, 256.0, info, (0..n).map(|i| i * t).collect()).unwrap()
    }

    #[test]
    fn fast_path_matches_explicit_chain() {
        let epochs = random_session(10, 8, 9);
        let cfg = PipelineConfig::default();
        let clf = train_workload(&epochs, &cfg, None).unwrap();
        let prep = PreparedEpochs::new(&epochs, &cfg, None).unwrap();
        let all: Vec<usize> = (0..10).collect();
        let fast = prep.features(&clf.csp, PowerScale::Log, &all).unwrap();
        let slow = eeg_features(&epochs, &clf.csp, &cfg.band_set.bands(), cfg.filter, PowerScale::Log).unwrap();
        for (a, b) in fast.iter().zip(slow.data()) {
            assert_relative_eq!(a, b, epsilon = 1e-9, max_relative = 1e-9);
        }
        assert_eq!(clf.feature_names, slow.names());
    }

    #[test]
    fn classifier_widths_and_round_trip() {
        let epochs = random_session(12, 8, 10);
        for (set, width) in [(BandSet::All5, 30), (BandSet::Low3, 18)] {
            let cfg = PipelineConfig {
                band_set: set,
                ..PipelineConfig::default()
            };
            let clf = train_workload(&epochs, &cfg, None).unwrap();
            assert_eq!(clf.lda.input_width, width);
            let back = WorkloadClassifier::from_json(&clf.to_json().unwrap()).unwrap();
            assert_eq!(back, clf);
            assert_eq!(back.score_epochs(&epochs).unwrap(), clf.score_epochs(&epochs).unwrap());
        }
    }

    #[test]
    fn tampered_model_rejected() {
        let clf = train_workload(&random_session(12, 8, 11), &PipelineConfig::default(), None).unwrap();
        let text = clf.to_json().unwrap();
        let tampered = text.replacen("\"bias\": ", "\"bias\": 1", 1);
        assert!(WorkloadClassifier::from_json(&tampered).is_err());
        let wrong = text.replace(MODEL_FORMAT, "cogload-model v0");
        assert!(WorkloadClassifier::from_json(&wrong).is_err());
    }

    #[test]
    fn invariant_requires_use_context() {
        let cfg = PipelineConfig {
            regularization: Regularization::Invariant { lambda: 1.0, k: 3 },
            ..PipelineConfig::default()
        };
        let err = train_workload(&random_session(12, 8, 12), &cfg, None).unwrap_err();
        assert!(err.to_string().contains("use-context"));
    }

    #[test]
    fn estimate_series_edges() {
        let epochs = random_session(12, 8, 13);
        let clf = train_workload(&epochs, &PipelineConfig::default(), None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let long = Array2::from_shape_fn((8, 256 * 20), |_| StandardNormal.sample(&mut rng));
        let rec = Recording::new(256.0, epochs.channels().clone(), long).unwrap();
        let a = estimate_series(&clf, &rec, 2.0, 1.0, Normalization::MinMax).unwrap();
        let b = estimate_series(&clf, &rec, 2.0, 1.0, Normalization::MinMax).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 19);
        assert_eq!(WorkloadIndexSeries::from_csv(&a.to_csv(), 2.0).unwrap(), a);
        let short = Recording::new(256.0, epochs.channels().clone(), Array2::ones((8, 100))).unwrap();
        assert!(estimate_series(&clf, &short, 2.0, 1.0, Normalization::MinMax).is_err());
    }
}
