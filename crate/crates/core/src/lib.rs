//! Mental-workload estimation from EEG and physiological signals.
//!
//! The chain is: load a recording ([`sigio`]), cut labeled epochs, band-pass
//! ([`dsp`]), learn spatial filters per band ([`spatial`]), extract log band
//! power and physiological features ([`features`]), classify with shrinkage
//! LDA and estimate a continuous workload index ([`model`]), and evaluate
//! ([`eval`]). [`synth`] generates sessions with known ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::manual_is_multiple_of)]

pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
mod linalg;
pub mod model;
pub mod sigio;
pub mod spatial;
pub mod synth;

pub use dsp::{BandDef, BandSet, FilterSpec};
pub use error::{Error, ErrorKind, Result};
pub use eval::{CvResult, PermutationResult, QuarterResult, TaskSummary, WilcoxonResult};
pub use features::{FeatureMatrix, PowerScale, RrSeries};
pub use model::{
    LdaModel, Normalization, PipelineConfig, Shrinkage, WorkloadClassifier, WorkloadIndexSeries,
};
pub use sigio::{
    ChannelInfo, EpochSet, Event, EventList, LabelMap, Modality, Recording, TaskInterval,
    TaskIntervals,
};
pub use spatial::{CovMatrix, CspModel, PenaltyMatrix, Regularization};
pub use synth::{SynthConfig, SynthSession};
