//! Butterworth band-pass design, zero-phase filtering, and band power.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigio::{EpochSet, Recording};

/// A named frequency band in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDef {
    pub name: String,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandDef {
    pub fn new(name: impl Into<String>, low_hz: f64, high_hz: f64) -> Self {
        BandDef {
            name: name.into(),
            low_hz,
            high_hz,
        }
    }

    /// Checks `0 < low < high < rate/2`.
    pub fn validate(&self, rate_hz: f64) -> Result<()> {
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < rate_hz / 2.0) {
            return Err(Error::invalid(format!(
                "band {} ({}-{} Hz) is not inside (0, {}) Hz at {} Hz sampling",
                self.name,
                self.low_hz,
                self.high_hz,
                rate_hz / 2.0,
                rate_hz
            )));
        }
        Ok(())
    }

    pub fn delta() -> Self {
        BandDef::new("delta", 1.0, 3.0)
    }

    pub fn theta() -> Self {
        BandDef::new("theta", 4.0, 6.0)
    }

    pub fn alpha() -> Self {
        BandDef::new("alpha", 7.0, 13.0)
    }

    pub fn beta() -> Self {
        BandDef::new("beta", 14.0, 25.0)
    }

    pub fn gamma() -> Self {
        BandDef::new("gamma", 26.0, 40.0)
    }
}

/// Which EEG bands feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandSet {
    /// Delta, theta and alpha.
    Low3,
    /// All five bands; the upper two also pick up facial/neck muscle activity.
    All5,
}

impl BandSet {
    /// Bands in ascending frequency order.
    pub fn bands(self) -> Vec<BandDef> {
        let mut bands = vec![BandDef::delta(), BandDef::theta(), BandDef::alpha()];
        if self == BandSet::All5 {
            bands.push(BandDef::beta());
            bands.push(BandDef::gamma());
        }
        bands
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BandSet::Low3 => "low3",
            BandSet::All5 => "all5",
        }
    }
}

impl std::str::FromStr for BandSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low3" => Ok(BandSet::Low3),
            "all5" => Ok(BandSet::All5),
            other => Err(Error::invalid(format!("band set must be low3 or all5, got `{other}`"))),
        }
    }
}

/// Butterworth band-pass applied forward then backward.
///
/// `order` is the band-pass order (twice the low-pass prototype order).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec { order: 4 }
    }
}

/// One second-order section, `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }

    /// Direct-form-II-transposed state for a unit step already in steady state.
    fn step_state(&self) -> [f64; 2] {
        let gain = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        let z2 = self.b[2] - self.a[1] * gain;
        let z1 = self.b[1] - self.a[0] * gain + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// A designed band-pass filter as a cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPass {
    sections: Vec<Biquad>,
    settling: usize,
}

impl BandPass {
    pub fn design(band: &BandDef, rate_hz: f64, spec: FilterSpec) -> Result<Self> {
        if spec.order < 2 || spec.order % 2 != 0 {
            return Err(Error::invalid(format!(
                "filter order must be an even integer ≥ 2, got {}",
                spec.order
            )));
        }
        band.validate(rate_hz)?;
        let n = spec.order / 2;
        let fs2 = 2.0 * rate_hz;
        // Pre-warped analog edges.
        let w1 = fs2 * (PI * band.low_hz / rate_hz).tan();
        let w2 = fs2 * (PI * band.high_hz / rate_hz).tan();
        let w0 = (w1 * w2).sqrt();
        let bw = w2 - w1;

        let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);
        let to_band = |p: Complex64| {
            let ps = p * (bw / 2.0);
            let root = (ps * ps - w0 * w0).sqrt();
            (ps + root, ps - root)
        };
        let section = |z1: Complex64, z2: Complex64| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-(z1 + z2).re, (z1 * z2).re],
        };

        let mut sections = Vec::with_capacity(n);
        for k in 0..n {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let p = Complex64::from_polar(1.0, theta);
            if p.im.abs() < 1e-12 {
                let (q1, q2) = to_band(Complex64::new(p.re, 0.0));
                sections.push(section(bilinear(q1), bilinear(q2)));
            } else if p.im > 0.0 {
                let (q1, q2) = to_band(p);
                for q in [q1, q2] {
                    let z = bilinear(q);
                    sections.push(section(z, z.conj()));
                }
            }
        }

        // Unit gain at the digital image of the analog centre frequency.
        let wc = 2.0 * (w0 / fs2).atan();
        let mut max_radius: f64 = 0.0;
        for s in &mut sections {
            let g = s.response(wc).norm();
            if !(g.is_finite() && g > 0.0) {
                return Err(unstable(band, rate_hz));
            }
            for b in &mut s.b {
                *b /= g;
            }
            let disc = Complex64::new(s.a[0] * s.a[0] - 4.0 * s.a[1], 0.0).sqrt();
            for r in [(-s.a[0] + disc) / 2.0, (-s.a[0] - disc) / 2.0] {
                max_radius = max_radius.max(r.norm());
            }
        }
        if !(max_radius < 1.0 - 1e-12) {
            return Err(unstable(band, rate_hz));
        }
        // Samples for the slowest pole to decay by 1e-7.
        let tau = -1.0 / max_radius.ln();
        let settling = (tau * 1e7f64.ln()).ceil() as usize;
        Ok(BandPass { sections, settling })
    }

    /// Magnitude response of one forward pass at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / rate_hz;
        self.sections.iter().map(|s| s.response(w)).product::<Complex64>().norm()
    }

    /// Edge padding, in samples, used on each side before two-pass filtering.
    pub fn settling_samples(&self) -> usize {
        self.settling
    }

    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let mut scale = x0;
        for s in &self.sections {
            let [mut z1, mut z2] = s.step_state();
            z1 *= scale;
            z2 *= scale;
            let [b0, b1, b2] = s.b;
            let [a1, a2] = s.a;
            for v in x.iter_mut() {
                let input = *v;
                let y = b0 * input + z1;
                z1 = b1 * input - a1 * y + z2;
                z2 = b2 * input - a2 * y;
                *v = y;
            }
            scale *= s.dc_gain();
        }
    }

    /// Zero-phase filtering with odd reflection padding at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            let mut y = x.to_vec();
            self.run(&mut y);
            y.reverse();
            self.run(&mut y);
            y.reverse();
            return y;
        }
        let pad = self.settling.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (x[0], x[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));
        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }

    /// Filters every row of a channels × samples matrix.
    pub fn filtfilt_rows(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (src, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
            let y = self.filtfilt(&row_vec(src));
            dst.iter_mut().zip(y).for_each(|(d, v)| *d = v);
        }
        out
    }
}

fn row_vec(row: ArrayView1<'_, f64>) -> Vec<f64> {
    row.iter().copied().collect()
}

fn unstable(band: &BandDef, rate_hz: f64) -> Error {
    Error::numerical(format!(
        "unstable band-pass design for band {} ({}-{} Hz) at {} Hz",
        band.name, band.low_hz, band.high_hz, rate_hz
    ))
}

/// Band-pass every channel of a recording.
pub fn bandpass_recording(rec: &Recording, band: &BandDef, spec: FilterSpec) -> Result<Recording> {
    let filter = BandPass::design(band, rec.rate_hz(), spec)?;
    Recording::new(
        rec.rate_hz(),
        rec.channels().clone(),
        filter.filtfilt_rows(rec.samples().view()),
    )
}

/// Band-pass every channel of every epoch independently.
pub fn bandpass_epochs(epochs: &EpochSet, band: &BandDef, spec: FilterSpec) -> Result<EpochSet> {
    let filter = BandPass::design(band, epochs.rate_hz(), spec)?;
    Ok(epochs.with_data(filter_epoch_tensor(&filter, epochs.data()), epochs.channels().clone()))
}

pub(crate) fn filter_epoch_tensor(filter: &BandPass, data: &Array3<f64>) -> Array3<f64> {
    let filtered: Vec<Array2<f64>> = (0..data.dim().0)
        .into_par_iter()
        .map(|i| filter.filtfilt_rows(data.index_axis(Axis(0), i)))
        .collect();
    let mut out = Array3::zeros(data.raw_dim());
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(filtered) {
        dst.assign(&src);
    }
    out
}

/// Mean squared amplitude of each channel over the window.
pub fn band_power(window: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if window.ncols() == 0 || window.nrows() == 0 {
        return Err(Error::invalid("band power of an empty window"));
    }
    let n = window.ncols() as f64;
    Ok(window
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>() / n)
        .collect())
}

/// Shortest window, in seconds, accepted for a band whose lower edge is `low_hz`.
///
/// Two cycles of the lower edge normally; windows of 10 s or more are always
/// accepted, which allows a single 0.1 Hz cycle.
pub fn min_window_seconds(low_hz: f64) -> f64 {
    (2.0 / low_hz).min(10.0)
}

/// Power of a single-channel window inside `[low_hz, high_hz]`.
pub fn band_power_between(window: &[f64], low_hz: f64, high_hz: f64, rate_hz: f64) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::invalid("band power of an empty window"));
    }
    let seconds = window.len() as f64 / rate_hz;
    let needed = min_window_seconds(low_hz);
    if seconds + 1e-9 < needed {
        return Err(Error::invalid(format!(
            "{seconds:.3} s window is too short for a {low_hz} Hz lower edge (needs {needed:.3} s)"
        )));
    }
    let band = BandDef::new(format!("{low_hz}-{high_hz} Hz"), low_hz, high_hz);
    let filter = BandPass::design(&band, rate_hz, FilterSpec::default())?;
    let y = filter.filtfilt(window);
    Ok(y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64)
}
