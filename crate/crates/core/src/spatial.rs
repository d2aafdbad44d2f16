//! Common spatial patterns and the context-invariant regularized variant.
//!
//! Plain CSP solves `C1·w = λ·(C1 + C0)·w`. The invariant variant adds a
//! penalty `λ·P` to the denominator, where `P` projects onto the leading
//! principal directions of the covariance change between calibration and
//! use sessions, so the selected filters ignore context-dependent activity.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::BandDef;
use crate::error::{Error, Result};
use crate::linalg::{canonical_sign, generalized_sym_eigen, ridge_if_needed, sym_eigen_desc};
use crate::sigio::{ChannelInfo, EpochSet, Modality};

/// Relative ridge applied to near-singular composite covariances.
pub const RIDGE_EPS: f64 = 1e-8;

/// Average covariance of a set of windows.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub values: DMatrix<f64>,
    pub n_trials: usize,
}

impl CovMatrix {
    pub fn new(values: DMatrix<f64>, n_trials: usize) -> Result<Self> {
        if !values.is_square() || values.nrows() == 0 {
            return Err(Error::data("covariance must be a non-empty square matrix"));
        }
        let asym = (&values - values.transpose()).amax();
        let scale = values.amax().max(f64::MIN_POSITIVE);
        if asym > 1e-10 * scale {
            return Err(Error::data("covariance is not symmetric"));
        }
        let trace = values.trace();
        if !(trace > 0.0) {
            return Err(Error::data("covariance has non-positive trace"));
        }
        let (eig, _) = sym_eigen_desc(&values);
        if eig.last().copied().unwrap_or(0.0) < -1e-8 * trace {
            return Err(Error::data("covariance is not positive semi-definite"));
        }
        Ok(CovMatrix { values, n_trials })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn trace_normalized(&self) -> DMatrix<f64> {
        &self.values / self.values.trace()
    }
}

/// Mean-removed covariance of one channels × samples window, scaled to unit trace.
pub fn trial_covariance(x: ArrayView2<'_, f64>) -> Result<DMatrix<f64>> {
    let (c, t) = x.dim();
    if t < 2 {
        return Err(Error::data("covariance needs at least two samples"));
    }
    let mut centered = DMatrix::zeros(c, t);
    for (i, row) in x.rows().into_iter().enumerate() {
        let mean = row.sum() / t as f64;
        for (j, v) in row.iter().enumerate() {
            centered[(i, j)] = v - mean;
        }
    }
    let cov = &centered * centered.transpose();
    let trace = cov.trace();
    if !(trace > 0.0) {
        return Err(Error::data("epoch has no variance on any channel"));
    }
    Ok(cov / trace)
}

/// Average of the given per-trial covariances.
pub fn mean_covariance(trials: &[DMatrix<f64>], idx: &[usize]) -> Result<CovMatrix> {
    let first = idx
        .first()
        .ok_or_else(|| Error::data("no trials to average"))?;
    let mut acc = DMatrix::zeros(trials[*first].nrows(), trials[*first].ncols());
    for &i in idx {
        acc += &trials[i];
    }
    CovMatrix::new(acc / idx.len() as f64, idx.len())
}

/// Average unit-trace covariance of the epochs in `class`.
pub fn class_covariance(epochs: &EpochSet, class: u8) -> Result<CovMatrix> {
    let labels = epochs
        .labels()
        .ok_or_else(|| Error::data("class covariance needs labeled epochs"))?;
    if epochs.n_channels() < 2 {
        return Err(Error::data("spatial filtering needs at least two channels"));
    }
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
    if idx.len() < 2 {
        return Err(Error::data(format!(
            "class {class} has {} epochs, at least 2 are required",
            idx.len()
        )));
    }
    let trials = idx
        .iter()
        .map(|&i| trial_covariance(epochs.epoch(i)))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<usize> = (0..trials.len()).collect();
    mean_covariance(&trials, &all)
}

/// Projector onto the principal directions of a covariance change.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub values: DMatrix<f64>,
    pub k_components: usize,
    pub component_eigenvalues: Vec<f64>,
    /// The two covariances were identical; the directions are arbitrary.
    pub no_shift: bool,
}

/// Leading principal components of `C_use − C_calib`, both trace-normalized.
///
/// Components are ranked by absolute eigenvalue; `P = Σ vᵢvᵢᵀ`.
pub fn pc_difference(c_calib: &CovMatrix, c_use: &CovMatrix, k: usize) -> Result<PenaltyMatrix> {
    if c_calib.dim() != c_use.dim() {
        return Err(Error::invalid("covariances differ in dimension"));
    }
    if k == 0 || k > c_calib.dim() {
        return Err(Error::invalid(format!(
            "k must be in 1..={} principal components, got {k}",
            c_calib.dim()
        )));
    }
    let delta = c_use.trace_normalized() - c_calib.trace_normalized();
    let (values, vectors) = sym_eigen_desc(&delta);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));
    let d = c_calib.dim();
    let mut p = DMatrix::zeros(d, d);
    let mut picked = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let v = vectors.column(i);
        p += v * v.transpose();
        picked.push(values[i]);
    }
    let no_shift = values.iter().all(|v| v.abs() <= 1e-12);
    Ok(PenaltyMatrix {
        values: p,
        k_components: k,
        component_eigenvalues: picked,
        no_shift,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regularization {
    None,
    Invariant { lambda: f64, k: usize },
}

/// A bank of spatial filters for one frequency band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CspModel {
    /// n_filters × channels, one filter per row.
    #[serde(with = "matrix_rows")]
    pub filters: DMatrix<f64>,
    /// Class-1 variance ratio `wᵀC1w / wᵀ(C1 + C0 [+ λP])w` per filter.
    pub eigenvalues: Vec<f64>,
    pub band: BandDef,
    pub regularization: Regularization,
}

impl CspModel {
    pub fn n_filters(&self) -> usize {
        self.filters.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.filters.ncols()
    }

    /// Spatially filters a channels × samples window.
    pub fn project(&self, x: ArrayView2<'_, f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.n_channels() {
            return Err(Error::data(format!(
                "model expects {} channels, window has {}",
                self.n_channels(),
                x.nrows()
            )));
        }
        let xm = DMatrix::from_row_iterator(x.nrows(), x.ncols(), x.iter().copied());
        Ok(&self.filters * xm)
    }
}

fn check_filters(c1: &CovMatrix, c0: &CovMatrix, n_filters: usize) -> Result<()> {
    if c1.dim() != c0.dim() {
        return Err(Error::invalid("class covariances differ in dimension"));
    }
    if n_filters == 0 || n_filters % 2 != 0 {
        return Err(Error::invalid(format!(
            "number of filters must be even and positive, got {n_filters}"
        )));
    }
    if n_filters > c1.dim() {
        return Err(Error::invalid(format!(
            "{n_filters} filters requested for {} channels",
            c1.dim()
        )));
    }
    Ok(())
}

fn composite(base: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ridge = ridge_if_needed(&base, RIDGE_EPS);
    let n = base.nrows();
    let b = if ridge > 0.0 {
        base + DMatrix::identity(n, n) * ridge
    } else {
        base
    };
    if b.clone().cholesky().is_none() {
        return Err(Error::numerical(
            "composite covariance is indefinite even after ridge conditioning",
        ));
    }
    Ok(b)
}

fn filter_column(w: &DMatrix<f64>, j: usize) -> DVector<f64> {
    let mut v = w.column(j).into_owned();
    canonical_sign(&mut v);
    v
}

/// Plain CSP with `n_filters/2` filters from each end of the spectrum.
pub fn csp_train(c1: &CovMatrix, c0: &CovMatrix, n_filters: usize, band: BandDef) -> Result<CspModel> {
    check_filters(c1, c0, n_filters)?;
    let b = composite(&c1.values + &c0.values)?;
    let (values, w) = generalized_sym_eigen(&c1.values, &b)?;
    let d = values.len();
    let half = n_filters / 2;
    let picks: Vec<usize> = (0..half).chain((0..half).map(|i| d - 1 - i)).collect();
    let rows: Vec<_> = picks
        .iter()
        .map(|&j| filter_column(&w, j).transpose())
        .collect();
    Ok(CspModel {
        filters: DMatrix::from_rows(&rows),
        eigenvalues: picks.iter().map(|&j| values[j]).collect(),
        band,
        regularization: Regularization::None,
    })
}

/// CSP with the context penalty `λ·P` added to both denominators.
///
/// The first half maximizes `wᵀC1w / wᵀ(C1+C0+λP)w`, the second half
/// maximizes the same ratio with `C0` in the numerator.
pub fn csp_train_regularized(
    c1: &CovMatrix,
    c0: &CovMatrix,
    penalty: &PenaltyMatrix,
    lambda: f64,
    n_filters: usize,
    band: BandDef,
) -> Result<CspModel> {
    check_filters(c1, c0, n_filters)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    if penalty.values.nrows() != c1.dim() {
        return Err(Error::invalid("penalty matrix dimension mismatch"));
    }
    let b = composite(&c1.values + &c0.values + &penalty.values * lambda)?;
    let half = n_filters / 2;
    let (_, w_high) = generalized_sym_eigen(&c1.values, &b)?;
    let (_, w_low) = generalized_sym_eigen(&c0.values, &b)?;
    let mut rows = Vec::with_capacity(n_filters);
    let mut eigenvalues = Vec::with_capacity(n_filters);
    for (w, count) in [(&w_high, half), (&w_low, half)] {
        for j in 0..count {
            let v = filter_column(w, j);
            let num = (v.transpose() * &c1.values * &v)[(0, 0)];
            let den = (v.transpose() * &b * &v)[(0, 0)];
            eigenvalues.push(num / den);
            rows.push(v.transpose());
        }
    }
    Ok(CspModel {
        filters: DMatrix::from_rows(&rows),
        eigenvalues,
        band,
        regularization: Regularization::Invariant {
            lambda,
            k: penalty.k_components,
        },
    })
}

/// Projects every epoch through the model's filters.
pub fn apply_spatial(model: &CspModel, epochs: &EpochSet) -> Result<EpochSet> {
    if epochs.n_channels() != model.n_channels() {
        return Err(Error::data(format!(
            "model expects {} channels, epochs have {}",
            model.n_channels(),
            epochs.n_channels()
        )));
    }
    let (n, _, t) = epochs.data().dim();
    let mut out = Array3::zeros((n, model.n_filters(), t));
    for (i, mut dst) in out.axis_iter_mut(Axis(0)).enumerate() {
        let y = model.project(epochs.epoch(i))?;
        for ((r, c), v) in dst.indexed_iter_mut() {
            *v = y[(r, c)];
        }
    }
    let labels = (0..model.n_filters())
        .map(|i| format!("{}-csp{}", model.band.name, i + 1))
        .collect();
    let channels = ChannelInfo::new(labels, vec![Modality::Eeg; model.n_filters()])?;
    Ok(epochs.with_data(out, channels))
}

pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(
            rows.len(),
            ncols,
            rows.into_iter().flatten(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn band() -> BandDef {
        BandDef::theta()
    }

    fn cov(m: DMatrix<f64>) -> CovMatrix {
        CovMatrix::new(m, 1).unwrap()
    }

    fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
        &g * g.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1
    }

    fn epochs_from(data: Array3<f64>, labels: Vec<u8>) -> EpochSet {
        let (n, c, t) = data.dim();
        let ch = ChannelInfo::new(
            (0..c).map(|i| format!("c{i}")).collect(),
            vec![Modality::Eeg; c],
        )
        .unwrap();
        EpochSet::new(data, Some(labels), t as f64, 1.0, ch, vec![0; n]).unwrap()
    }

    #[test]
    fn iid_channels_give_scaled_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = 4;
        let data = Array3::from_shape_fn((200, c, 256), |_| StandardNormal.sample(&mut rng));
        let set = epochs_from(data, vec![1; 200]);
        let cm = class_covariance(&set, 1).unwrap();
        assert_relative_eq!(cm.values, DMatrix::identity(c, c) / c as f64, epsilon = 0.05);
        assert_eq!(cm.n_trials, 200);
    }

    #[test]
    fn duplicated_channel_is_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut data = Array3::zeros((3, 2, 50));
        for i in 0..3 {
            for t in 0..50 {
                let v: f64 = StandardNormal.sample(&mut rng);
                data[[i, 0, t]] = v;
                data[[i, 1, t]] = v;
            }
        }
        let cm = class_covariance(&epochs_from(data, vec![0; 3]), 0).unwrap();
        for v in cm.values.iter() {
            assert_relative_eq!(*v, 0.5, epsilon = 1e-12);
        }
    }

    // Trial A: x0 = (1, −1, 1, −1), x1 = (1, 1, −1, −1); both zero-mean,
    // XXᵀ = [[4, 0], [0, 4]] → unit trace diag(0.5, 0.5).
    // Trial B: x0 = (2, 0, −2, 0), x1 = (1, 0, −1, 0); XXᵀ = [[8, 4], [4, 2]],
    // trace 10 → [[0.8, 0.4], [0.4, 0.2]].
    // Average: [[0.65, 0.2], [0.2, 0.35]].
    #[test]
    fn hand_built_two_trial_covariance() {
        let data = Array3::from_shape_vec(
            (2, 2, 4),
            vec![
                1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, //
                2.0, 0.0, -2.0, 0.0, 1.0, 0.0, -1.0, 0.0,
            ],
        )
        .unwrap();
        let cm = class_covariance(&epochs_from(data, vec![1, 1]), 1).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.65, 0.2, 0.2, 0.35]);
        assert_relative_eq!(cm.values, expected, epsilon = 1e-14);
    }

    #[test]
    fn class_covariance_errors() {
        let data = Array3::from_elem((3, 2, 10), 1.0);
        let set = epochs_from(data, vec![0, 0, 1]);
        assert!(class_covariance(&set, 1).is_err());
        assert!(class_covariance(&set, 0).is_err());
        let single = epochs_from(Array3::zeros((2, 1, 10)), vec![0, 0]);
        assert!(class_covariance(&single, 0).is_err());
    }

    #[test]
    fn identical_classes_give_half() {
        let i4 = cov(DMatrix::identity(4, 4));
        let m = csp_train(&i4, &i4, 4, band()).unwrap();
        for v in &m.eigenvalues {
            assert_relative_eq!(*v, 0.5, epsilon = 1e-12);
        }
        // Deterministic output on degenerate input.
        assert_eq!(m, csp_train(&i4, &i4, 4, band()).unwrap());
    }

    // C1 = diag(2,1), C0 = diag(1,2): C1+C0 = 3I, so λ = {2/3, 1/3} with
    // axis-aligned eigenvectors e1, e2 scaled by 1/√3.
    #[test]
    fn two_channel_closed_form() {
        let c1 = cov(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])));
        let c0 = cov(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])));
        let m = csp_train(&c1, &c0, 2, band()).unwrap();
        assert_relative_eq!(m.eigenvalues[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(m.eigenvalues[1], 1.0 / 3.0, epsilon = 1e-14);
        let s = 1.0 / 3f64.sqrt();
        assert_relative_eq!(m.filters, DMatrix::from_row_slice(2, 2, &[s, 0.0, 0.0, s]), epsilon = 1e-14);
    }

    #[test]
    fn simultaneous_diagonalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let c1 = cov(random_spd(12, &mut rng));
            let c0 = cov(random_spd(12, &mut rng));
            let m = csp_train(&c1, &c0, 6, band()).unwrap();
            let w = &m.filters;
            let whole = w * (&c1.values + &c0.values) * w.transpose();
            assert_relative_eq!(whole, DMatrix::identity(6, 6), epsilon = 1e-8);
            let d1 = w * &c1.values * w.transpose();
            for i in 0..6 {
                for j in 0..6 {
                    if i != j {
                        assert!(d1[(i, j)].abs() < 1e-8);
                    }
                }
                assert_relative_eq!(d1[(i, i)], m.eigenvalues[i], epsilon = 1e-8);
            }
            assert!(m.eigenvalues[0] >= m.eigenvalues[1] && m.eigenvalues[1] >= m.eigenvalues[2]);
            assert!(m.eigenvalues[3] <= m.eigenvalues[4] && m.eigenvalues[4] <= m.eigenvalues[5]);
        }
    }

    #[test]
    fn scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c1 = random_spd(8, &mut rng);
        let c0 = random_spd(8, &mut rng);
        let a = csp_train(&cov(c1.clone()), &cov(c0.clone()), 4, band()).unwrap();
        let b = csp_train(&cov(&c1 * 37.5), &cov(&c0 * 37.5), 4, band()).unwrap();
        for i in 0..4 {
            assert_relative_eq!(a.eigenvalues[i], b.eigenvalues[i], epsilon = 1e-10);
            let ra = a.filters.row(i) / a.filters.row(i).norm();
            let rb = b.filters.row(i) / b.filters.row(i).norm();
            assert_relative_eq!(ra, rb, epsilon = 1e-8);
        }
    }

    #[test]
    fn filter_count_errors() {
        let i3 = cov(DMatrix::identity(3, 3));
        assert!(csp_train(&i3, &i3, 4, band()).is_err());
        assert!(csp_train(&i3, &i3, 3, band()).is_err());
        assert!(csp_train(&i3, &i3, 0, band()).is_err());
        let i2 = cov(DMatrix::identity(2, 2));
        assert!(csp_train(&i3, &i2, 2, band()).is_err());
    }

    #[test]
    fn rank_deficient_composite_gets_ridge() {
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        let c = cov(m);
        let model = csp_train(&c, &c, 2, band()).unwrap();
        assert!(model.filters.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pc_difference_no_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = cov(random_spd(5, &mut rng));
        let p = pc_difference(&c, &c, 2).unwrap();
        assert!(p.no_shift);
        assert!(p.component_eigenvalues.iter().all(|v| v.abs() < 1e-12));
        // Still a rank-2 projector.
        assert_relative_eq!(p.values.trace(), 2.0, epsilon = 1e-10);
        assert_relative_eq!(&p.values * &p.values, p.values.clone(), epsilon = 1e-10);
    }

    fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(d, |_, _| StandardNormal.sample(rng)).normalize()
    }

    // Unit-trace inputs cannot differ by exactly σvvᵀ, so the use covariance
    // mixes σvvᵀ into a scaled identity: Δ = σ(vvᵀ − I/d), whose dominant
    // eigenvector is v.
    #[test]
    fn pc_difference_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 6;
        let v = random_unit(d, &mut rng);
        let sigma = 0.3;
        let calib = DMatrix::identity(d, d) / d as f64;
        let use_ = &calib * (1.0 - sigma) + &v * v.transpose() * sigma;
        let p = pc_difference(&cov(calib), &cov(use_), 1).unwrap();
        assert_relative_eq!(p.values, &v * v.transpose(), epsilon = 1e-10);
        assert!(!p.no_shift);
    }

    #[test]
    fn pc_difference_recovers_planted_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = 8;
        let v1 = random_unit(d, &mut rng);
        let mut v2 = random_unit(d, &mut rng);
        v2 -= &v1 * v1.dot(&v2);
        let v2 = v2.normalize();
        let planted = &v1 * v1.transpose() + &v2 * v2.transpose();
        let iso = DMatrix::identity(d, d) / d as f64;
        let use_iso = &iso + &v1 * v1.transpose() * 2.0 + &v2 * v2.transpose() * 1.5;
        let p = pc_difference(&cov(iso), &cov(use_iso), 2).unwrap();
        let (_, vecs) = sym_eigen_desc(&p.values);
        let basis = vecs.columns(0, 2).into_owned();
        let cosines = (basis.transpose() * &planted * &basis).symmetric_eigen().eigenvalues;
        for c in cosines.iter() {
            let angle = c.clamp(0.0, 1.0).sqrt().acos();
            assert!(angle < 1e-6, "{angle}");
        }
    }

    #[test]
    fn pc_difference_errors() {
        let a = cov(DMatrix::identity(3, 3));
        let b = cov(DMatrix::identity(2, 2));
        assert!(pc_difference(&a, &b, 1).is_err());
        assert!(pc_difference(&a, &a, 4).is_err());
        assert!(pc_difference(&a, &a, 0).is_err());
    }

    #[test]
    fn regularized_with_zero_lambda_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let c1 = cov(random_spd(10, &mut rng));
            let c0 = cov(random_spd(10, &mut rng));
            let calib = cov(random_spd(10, &mut rng));
            let use_ = cov(random_spd(10, &mut rng));
            let p = pc_difference(&calib, &use_, 3).unwrap();
            let plain = csp_train(&c1, &c0, 6, band()).unwrap();
            let reg = csp_train_regularized(&c1, &c0, &p, 0.0, 6, band()).unwrap();
            assert_relative_eq!(plain.filters, reg.filters, epsilon = 1e-8);
            for (a, b) in plain.eigenvalues.iter().zip(&reg.eigenvalues) {
                assert_relative_eq!(*a, *b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn large_lambda_avoids_penalized_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c1 = cov(random_spd(4, &mut rng));
        let c0 = cov(random_spd(4, &mut rng));
        let v = DVector::from_vec(vec![0.5, -0.5, 0.5, 0.5]);
        let p = PenaltyMatrix {
            values: &v * v.transpose(),
            k_components: 1,
            component_eigenvalues: vec![1.0],
            no_shift: false,
        };
        let m = csp_train_regularized(&c1, &c0, &p, 1e6, 2, band()).unwrap();
        for row in m.filters.row_iter() {
            let cos = (row * &v)[(0, 0)].abs() / row.norm();
            assert!(cos < 1e-3, "{cos}");
        }
    }

    #[test]
    fn regularized_filters_are_rayleigh_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c1 = cov(random_spd(3, &mut rng));
        let c0 = cov(random_spd(3, &mut rng));
        let calib = cov(random_spd(3, &mut rng));
        let use_ = cov(random_spd(3, &mut rng));
        let p = pc_difference(&calib, &use_, 1).unwrap();
        let m = csp_train_regularized(&c1, &c0, &p, 1.0, 2, band()).unwrap();
        let den = &c1.values + &c0.values + &p.values;
        let ratio = |num: &DMatrix<f64>, w: &DVector<f64>| {
            (w.transpose() * num * w)[(0, 0)] / (w.transpose() * &den * w)[(0, 0)]
        };
        let top = m.filters.row(0).transpose();
        let bottom = m.filters.row(1).transpose();
        let best_hi = ratio(&c1.values, &top);
        let best_lo = ratio(&c0.values, &bottom);
        for _ in 0..100_000 {
            let w = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng)).normalize();
            assert!(ratio(&c1.values, &w) <= best_hi + 1e-12);
            assert!(ratio(&c0.values, &w) <= best_lo + 1e-12);
        }
    }

    #[test]
    fn apply_spatial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = Array3::from_shape_fn((3, 2, 20), |_| StandardNormal.sample(&mut rng));
        let set = epochs_from(data.clone(), vec![0, 1, 0]);
        let identity = CspModel {
            filters: DMatrix::identity(2, 2),
            eigenvalues: vec![0.5, 0.5],
            band: band(),
            regularization: Regularization::None,
        };
        assert_eq!(apply_spatial(&identity, &set).unwrap().data(), &data);

        let mut dup = data.clone();
        for i in 0..3 {
            for t in 0..20 {
                dup[[i, 1, t]] = dup[[i, 0, t]];
            }
        }
        let diff = CspModel {
            filters: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            ..identity.clone()
        };
        let out = apply_spatial(&diff, &epochs_from(dup, vec![0, 1, 0])).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));

        let random = CspModel {
            filters: DMatrix::from_fn(4, 2, |_, _| StandardNormal.sample(&mut rng)),
            eigenvalues: vec![0.0; 4],
            ..identity.clone()
        };
        let out = apply_spatial(&random, &set).unwrap();
        for i in 0..3 {
            for f in 0..4 {
                for t in 0..20 {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        acc += random.filters[(f, c)] * data[[i, c, t]];
                    }
                    assert!((out.data()[[i, f, t]] - acc).abs() <= 1e-12);
                }
            }
        }
        let three = epochs_from(Array3::zeros((1, 3, 20)), vec![0]);
        assert!(apply_spatial(&random, &three).is_err());
    }

    #[test]
    fn model_serde_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = CspModel {
            filters: DMatrix::from_fn(2, 3, |_, _| StandardNormal.sample(&mut rng)),
            eigenvalues: vec![0.7, 0.2],
            band: band(),
            regularization: Regularization::Invariant { lambda: 1.0, k: 3 },
        };
        let json = serde_json::to_string(&m).unwrap();
        let back: CspModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
