//! Synthetic calibration and use sessions with known ground truth.
//!
//! EEG is a sum of band-limited Gaussian sources, each projected through a
//! spatial pattern, plus white sensor noise. Workload sources switch their
//! variance with the block class (calibration) or interpolate it by task
//! load (use sessions). ECG is a pulse train with load-dependent RR jitter;
//! GSR is a drifting baseline with skin-conductance responses arriving at a
//! load-dependent rate.
//!
//! Patterns, calibration sessions and use sessions draw from separate
//! streams of one seeded generator, so both sessions of a seed share the
//! same spatial patterns.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{BandDef, BandPass, FilterSpec};
use crate::error::{Error, Result};
use crate::sigio::{
    ChannelInfo, Event, EventList, Modality, Recording, TaskInterval, TaskIntervals, DEFAULT_EEG_LABELS,
};

/// Where a source's spatial pattern comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PatternSpec {
    /// Strong weights on channels whose label starts with the region letter
    /// (`frontal`, `central`, `parietal`, `occipital`), weak elsewhere.
    Region { name: String },
    Random,
    Explicit { weights: Vec<f64> },
    /// The realized pattern of another source in the list.
    Source { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub band: BandDef,
    pub pattern: PatternSpec,
    pub var_low: f64,
    pub var_high: f64,
}

/// Extra activity present only in use sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextShift {
    pub pattern: PatternSpec,
    pub variance: f64,
    /// Band of the shift source; `None` is white (broadband) noise.
    pub band: Option<BandDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcgSpec {
    pub base_rr: f64,
    /// RR standard deviation (s) at load 0 and load 1.
    pub jitter_low: f64,
    pub jitter_high: f64,
    pub amplitude: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsrSpec {
    pub baseline: f64,
    /// Responses per minute at load 0 and load 1.
    pub scr_rate_low: f64,
    pub scr_rate_high: f64,
    pub scr_amplitude: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub rate_hz: f64,
    pub n_eeg_channels: usize,
    pub sources: Vec<SourceSpec>,
    pub noise_variance: f64,
    pub context_shift: Option<ContextShift>,
    pub ecg: EcgSpec,
    pub gsr: GsrSpec,
    /// Load in [0, 1] per use-session task.
    pub task_loads: Vec<f64>,
    pub task_seconds: f64,
    pub n_blocks: usize,
    pub letters_per_block: usize,
    pub letter_seconds: f64,
    /// Band-pass order used to shape the sources.
    pub source_filter_order: usize,
}

pub const DEFAULT_TASK_LOADS: [f64; 7] = [0.2, 0.7, 0.2, 0.25, 1.0, 0.5, 0.35];

fn region(name: &str) -> PatternSpec {
    PatternSpec::Region { name: name.into() }
}

fn source(band: BandDef, pattern: PatternSpec, var_low: f64, var_high: f64) -> SourceSpec {
    SourceSpec {
        band,
        pattern,
        var_low,
        var_high,
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        let fast = BandDef::new("beta-gamma", 13.0, 45.0);
        SynthConfig {
            seed: 1,
            rate_hz: 256.0,
            n_eeg_channels: 30,
            sources: vec![
                // Workload effects.
                source(BandDef::theta(), region("frontal"), 1.0, 2.0),
                source(BandDef::alpha(), region("parietal"), 2.0, 1.0),
                source(fast, region("central"), 0.5, 1.1),
                // Load-independent background.
                source(BandDef::delta(), PatternSpec::Random, 3.0, 3.0),
                source(BandDef::theta(), PatternSpec::Random, 1.0, 1.0),
                source(BandDef::alpha(), PatternSpec::Random, 2.0, 2.0),
                source(BandDef::alpha(), region("occipital"), 2.0, 2.0),
                source(BandDef::beta(), PatternSpec::Random, 0.5, 0.5),
                source(BandDef::gamma(), PatternSpec::Random, 0.3, 0.3),
            ],
            noise_variance: 0.5,
            context_shift: None,
            ecg: EcgSpec {
                base_rr: 0.85,
                jitter_low: 0.05,
                jitter_high: 0.02,
                amplitude: 1.0,
                noise_sd: 0.02,
            },
            gsr: GsrSpec {
                baseline: 5.0,
                scr_rate_low: 2.0,
                scr_rate_high: 6.0,
                scr_amplitude: 0.3,
                noise_sd: 0.005,
            },
            task_loads: DEFAULT_TASK_LOADS.to_vec(),
            task_seconds: 60.0,
            n_blocks: 6,
            letters_per_block: 60,
            letter_seconds: 2.0,
            source_filter_order: 8,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        SynthConfig {
            seed,
            ..SynthConfig::default()
        }
    }

    /// Defaults with every class effect removed.
    pub fn null(seed: u64) -> Self {
        let mut cfg = SynthConfig::with_seed(seed);
        for s in &mut cfg.sources {
            s.var_high = s.var_low;
        }
        cfg.ecg.jitter_high = cfg.ecg.jitter_low;
        cfg.gsr.scr_rate_high = cfg.gsr.scr_rate_low;
        cfg
    }

    /// Defaults plus a strong broadband use-context source sharing the
    /// pattern of the beta/gamma workload source, with alternating
    /// low/high task loads.
    pub fn transfer(seed: u64) -> Self {
        let mut cfg = SynthConfig::with_seed(seed);
        cfg.context_shift = Some(ContextShift {
            pattern: PatternSpec::Source { index: 2 },
            variance: 4.0,
            band: None,
        });
        cfg.task_loads = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        cfg
    }

    pub fn eeg_labels(&self) -> Vec<String> {
        if self.n_eeg_channels == DEFAULT_EEG_LABELS.len() {
            DEFAULT_EEG_LABELS.iter().map(|s| s.to_string()).collect()
        } else {
            (1..=self.n_eeg_channels).map(|i| format!("EEG{i}")).collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz > 80.0 && self.rate_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "sampling rate must exceed 80 Hz to carry the gamma band, got {}",
                self.rate_hz
            )));
        }
        if self.n_eeg_channels < 2 {
            return Err(Error::invalid("at least two EEG channels are required"));
        }
        if self.sources.is_empty() {
            return Err(Error::invalid("at least one EEG source is required"));
        }
        for (i, s) in self.sources.iter().enumerate() {
            s.band.validate(self.rate_hz)?;
            if !(s.var_low >= 0.0 && s.var_high >= 0.0) {
                return Err(Error::invalid(format!("source {i}: variances must be non-negative")));
            }
            self.check_pattern(&s.pattern, Some(i))?;
        }
        if let Some(shift) = &self.context_shift {
            self.check_pattern(&shift.pattern, None)?;
            if !(shift.variance >= 0.0) {
                return Err(Error::invalid("context shift variance must be non-negative"));
            }
            if let Some(b) = &shift.band {
                b.validate(self.rate_hz)?;
            }
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::invalid("noise variance must be non-negative"));
        }
        let e = &self.ecg;
        if !(e.base_rr >= 0.4 && e.base_rr <= 1.5) || e.jitter_low < 0.0 || e.jitter_high < 0.0 {
            return Err(Error::invalid("ECG base RR must lie in [0.4, 1.5] s and jitter be non-negative"));
        }
        let g = &self.gsr;
        if g.scr_rate_low < 0.0 || g.scr_rate_high < 0.0 || g.noise_sd < 0.0 {
            return Err(Error::invalid("GSR rates and noise must be non-negative"));
        }
        if self.task_loads.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::invalid("task loads must lie in [0, 1]"));
        }
        if !(self.task_seconds > 0.0) || !(self.letter_seconds > 0.0) {
            return Err(Error::invalid("task and letter durations must be positive"));
        }
        if self.n_blocks == 0 || self.letters_per_block == 0 {
            return Err(Error::invalid("the protocol needs at least one block and letter"));
        }
        if self.source_filter_order == 0 || self.source_filter_order % 2 != 0 {
            return Err(Error::invalid("source filter order must be even and positive"));
        }
        Ok(())
    }

    fn check_pattern(&self, p: &PatternSpec, own: Option<usize>) -> Result<()> {
        match p {
            PatternSpec::Region { name } => {
                region_prefix(name)?;
            }
            PatternSpec::Random => {}
            PatternSpec::Explicit { weights } => {
                if weights.len() != self.n_eeg_channels || weights.iter().all(|w| *w == 0.0) {
                    return Err(Error::invalid("explicit pattern must be non-zero with one weight per EEG channel"));
                }
            }
            PatternSpec::Source { index } => {
                let ok = match own {
                    Some(i) => *index < i,
                    None => *index < self.sources.len(),
                };
                if !ok || matches!(self.sources[*index].pattern, PatternSpec::Source { .. }) {
                    return Err(Error::invalid(format!(
                        "pattern reference to source {index} must point to an earlier, concrete pattern"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn region_prefix(name: &str) -> Result<char> {
    match name {
        "frontal" => Ok('F'),
        "central" => Ok('C'),
        "parietal" => Ok('P'),
        "occipital" => Ok('O'),
        other => Err(Error::invalid(format!(
            "unknown region `{other}` (frontal, central, parietal, occipital)"
        ))),
    }
}

/// Load level over a span of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSegment {
    pub start: usize,
    pub end: usize,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub recording: Recording,
    pub events: Option<EventList>,
    pub tasks: Option<TaskIntervals>,
    /// Ground-truth load per span; 0/1 for calibration blocks.
    pub levels: Vec<LevelSegment>,
    /// Generated R-peak times in seconds.
    pub r_peaks: Vec<f64>,
    /// Realized unit-norm source patterns, in source order.
    pub patterns: Vec<Vec<f64>>,
}

impl SynthSession {
    pub fn level_at(&self, sample: usize) -> Option<f64> {
        self.levels
            .iter()
            .find(|s| s.start <= sample && sample < s.end)
            .map(|s| s.level)
    }
}

const PATTERN_STREAM: u64 = 0;
const CALIBRATION_STREAM: u64 = 1;
const USE_STREAM: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn realize_patterns(cfg: &SynthConfig) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
    let mut rng = rng_for(cfg.seed, PATTERN_STREAM);
    let labels = cfg.eeg_labels();
    let generic = cfg.n_eeg_channels != DEFAULT_EEG_LABELS.len();
    let mut realize = |p: &PatternSpec, done: &[Vec<f64>]| -> Result<Vec<f64>> {
        let v: Vec<f64> = match p {
            PatternSpec::Region { name } => {
                let prefix = region_prefix(name)?;
                let third = cfg.n_eeg_channels.div_ceil(3);
                let slot = match prefix {
                    'F' => 0,
                    'C' => 1,
                    _ => 2,
                };
                (0..cfg.n_eeg_channels)
                    .map(|i| {
                        let inside = if generic {
                            i / third == slot
                        } else {
                            labels[i].starts_with(prefix)
                        };
                        if inside {
                            1.0 + 0.5 * rng.random::<f64>()
                        } else {
                            0.15 * gauss(&mut rng)
                        }
                    })
                    .collect()
            }
            PatternSpec::Random => (0..cfg.n_eeg_channels).map(|_| gauss(&mut rng)).collect(),
            PatternSpec::Explicit { weights } => weights.clone(),
            PatternSpec::Source { index } => done[*index].clone(),
        };
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::invalid("source pattern is zero"));
        }
        Ok(v.into_iter().map(|x| x / norm).collect())
    };
    let mut patterns: Vec<Vec<f64>> = Vec::with_capacity(cfg.sources.len());
    for s in &cfg.sources {
        let p = realize(&s.pattern, &patterns)?;
        patterns.push(p);
    }
    let shift = cfg
        .context_shift
        .as_ref()
        .map(|c| realize(&c.pattern, &patterns))
        .transpose()?;
    Ok((patterns, shift))
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gauss(rng)).collect()
}

/// Unit-variance band-limited Gaussian noise.
fn band_noise(rng: &mut ChaCha8Rng, n: usize, band: &BandDef, rate: f64, order: usize) -> Result<Vec<f64>> {
    let filter = BandPass::design(band, rate, FilterSpec { order })?;
    let mut x = filter.filtfilt(&white(rng, n));
    let sd = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if sd > 0.0 {
        x.iter_mut().for_each(|v| *v /= sd);
    }
    Ok(x)
}

fn lerp(low: f64, high: f64, level: f64) -> f64 {
    low + level * (high - low)
}

fn render(cfg: &SynthConfig, levels: &[LevelSegment], n: usize, stream: u64, with_shift: bool) -> Result<SynthSession> {
    cfg.validate()?;
    let (patterns, shift_pattern) = realize_patterns(cfg)?;
    let mut rng = rng_for(cfg.seed, stream);
    let rate = cfg.rate_hz;
    let c = cfg.n_eeg_channels;
    let mut data = Array2::<f64>::zeros((c + 2, n));

    let add_source = |signal: &[f64], pattern: &[f64], data: &mut Array2<f64>| {
        for (ch, &w) in pattern.iter().enumerate() {
            let mut row = data.row_mut(ch);
            for (d, s) in row.iter_mut().zip(signal) {
                *d += w * s;
            }
        }
    };

    for (s, pattern) in cfg.sources.iter().zip(&patterns) {
        let mut x = band_noise(&mut rng, n, &s.band, rate, cfg.source_filter_order)?;
        for seg in levels {
            let g = lerp(s.var_low, s.var_high, seg.level).sqrt();
            x[seg.start..seg.end].iter_mut().for_each(|v| *v *= g);
        }
        add_source(&x, pattern, &mut data);
    }
    if with_shift {
        if let (Some(shift), Some(pattern)) = (&cfg.context_shift, &shift_pattern) {
            let mut x = match &shift.band {
                Some(b) => band_noise(&mut rng, n, b, rate, cfg.source_filter_order)?,
                None => white(&mut rng, n),
            };
            let g = shift.variance.sqrt();
            x.iter_mut().for_each(|v| *v *= g);
            add_source(&x, pattern, &mut data);
        }
    }
    let noise_sd = cfg.noise_variance.sqrt();
    for ch in 0..c {
        for v in data.row_mut(ch).iter_mut() {
            *v += noise_sd * gauss(&mut rng);
        }
    }

    let level_of = |t: f64| {
        let i = (t * rate) as usize;
        levels
            .iter()
            .find(|s| s.start <= i && i < s.end)
            .map_or(0.0, |s| s.level)
    };

    // ECG: Gaussian QRS and T waves at jittered beat times.
    let duration = n as f64 / rate;
    let mut r_peaks = Vec::new();
    let mut t = 0.3 + 0.2 * rng.random::<f64>();
    while t < duration - 0.1 {
        r_peaks.push(t);
        let sd = lerp(cfg.ecg.jitter_low, cfg.ecg.jitter_high, level_of(t));
        let z = gauss(&mut rng);
        t += (cfg.ecg.base_rr + sd * z).clamp(0.45, 1.6);
    }
    {
        let mut ecg = data.row_mut(c);
        for &beat in &r_peaks {
            for (offset, width, amp) in [(0.0, 0.01, cfg.ecg.amplitude), (0.25, 0.04, 0.25 * cfg.ecg.amplitude)] {
                let center = beat + offset;
                let lo = ((center - 5.0 * width) * rate).floor().max(0.0) as usize;
                let hi = (((center + 5.0 * width) * rate).ceil() as usize).min(n);
                for i in lo..hi {
                    let dt = i as f64 / rate - center;
                    ecg[i] += amp * (-0.5 * (dt / width).powi(2)).exp();
                }
            }
        }
        for (i, v) in ecg.iter_mut().enumerate() {
            let ti = i as f64 / rate;
            *v += 0.1 * (2.0 * std::f64::consts::PI * 0.2 * ti).sin()
                + cfg.ecg.noise_sd * gauss(&mut rng);
        }
    }

    // GSR: slow drift plus bi-exponential responses from a Poisson process.
    let mut onsets = Vec::new();
    for seg in levels {
        let per_min = lerp(cfg.gsr.scr_rate_low, cfg.gsr.scr_rate_high, seg.level);
        if per_min <= 0.0 {
            continue;
        }
        let gap = Exp::new(per_min / 60.0).map_err(|e| Error::invalid(e.to_string()))?;
        let (s0, s1) = (seg.start as f64 / rate, seg.end as f64 / rate);
        let mut t = s0 + gap.sample(&mut rng);
        while t < s1 {
            onsets.push(t);
            t += gap.sample(&mut rng);
        }
    }
    {
        let (tau_rise, tau_decay): (f64, f64) = (0.7, 2.5);
        let peak_t: f64 = tau_rise * tau_decay / (tau_decay - tau_rise) * (tau_decay / tau_rise).ln();
        let peak = (-peak_t / tau_decay).exp() - (-peak_t / tau_rise).exp();
        let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let mut gsr = data.row_mut(c + 1);
        for (i, v) in gsr.iter_mut().enumerate() {
            let ti = i as f64 / rate;
            *v = cfg.gsr.baseline + 0.2 * (std::f64::consts::TAU * ti / 200.0 + phase).sin();
        }
        for &onset in &onsets {
            let lo = (onset * rate).ceil() as usize;
            let hi = (((onset + 20.0) * rate) as usize).min(n);
            for i in lo..hi {
                let dt = i as f64 / rate - onset;
                gsr[i] += cfg.gsr.scr_amplitude * ((-dt / tau_decay).exp() - (-dt / tau_rise).exp()) / peak;
            }
        }
        for v in gsr.iter_mut() {
            *v += cfg.gsr.noise_sd * gauss(&mut rng);
        }
    }

    let mut labels = cfg.eeg_labels();
    labels.push("ECG".into());
    labels.push("GSR".into());
    let mut modalities = vec![Modality::Eeg; c];
    modalities.push(Modality::Ecg);
    modalities.push(Modality::Gsr);
    let recording = Recording::new(rate, ChannelInfo::new(labels, modalities)?, data)?;
    Ok(SynthSession {
        recording,
        events: None,
        tasks: None,
        levels: levels.to_vec(),
        r_peaks,
        patterns,
    })
}

/// N-back calibration: alternating 0-back/2-back blocks of letter events.
pub fn gen_calibration(cfg: &SynthConfig) -> Result<SynthSession> {
    cfg.validate()?;
    let letter = (cfg.letter_seconds * cfg.rate_hz).round() as usize;
    let block = letter * cfg.letters_per_block;
    let n = block * cfg.n_blocks;
    let levels: Vec<LevelSegment> = (0..cfg.n_blocks)
        .map(|b| LevelSegment {
            start: b * block,
            end: (b + 1) * block,
            level: (b % 2) as f64,
        })
        .collect();
    let mut session = render(cfg, &levels, n, CALIBRATION_STREAM, false)?;
    let events = (0..cfg.n_blocks * cfg.letters_per_block)
        .map(|k| Event {
            onset: k * letter,
            label: if (k / cfg.letters_per_block) % 2 == 0 { "0-back" } else { "2-back" }.into(),
        })
        .collect();
    session.events = Some(EventList::new(events)?);
    Ok(session)
}

/// Use session of consecutive tasks whose load follows `task_loads`.
pub fn gen_use_session(cfg: &SynthConfig) -> Result<SynthSession> {
    cfg.validate()?;
    if cfg.task_loads.is_empty() {
        return Err(Error::invalid("a use session needs at least one task"));
    }
    let len = (cfg.task_seconds * cfg.rate_hz).round() as usize;
    let levels: Vec<LevelSegment> = cfg
        .task_loads
        .iter()
        .enumerate()
        .map(|(i, &level)| LevelSegment {
            start: i * len,
            end: (i + 1) * len,
            level,
        })
        .collect();
    let n = len * cfg.task_loads.len();
    let mut session = render(cfg, &levels, n, USE_STREAM, true)?;
    let tasks = levels
        .iter()
        .enumerate()
        .map(|(i, s)| TaskInterval {
            task_id: i as u32 + 1,
            start: s.start,
            end: s.end,
            included: true,
        })
        .collect();
    session.tasks = Some(TaskIntervals::new(tasks)?);
    Ok(session)
}
