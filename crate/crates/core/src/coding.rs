//! Feedback coding structures over Gaussian channels with memory.
//!
//! A transmission scheme is an antistable source together with a strictly
//! causal feedback generator. The encoder drives the channel with
//!
//! ```text
//!   u_t = C' A^t W + (G y)_t ,
//! ```
//!
//! where `W` is the standard normal message vector, `A` is the `(n+1) x (n+1)`
//! source matrix, and `G` is a strictly lower triangular map acting on the
//! received sequence. The optimal generator is the one-step predictor of the
//! stacked source and channel state: it subtracts the decoder's best guess of
//! the raw transmission, so only innovation energy is spent.
//!
//! # Error coordinates
//!
//! `C' A^t W` grows geometrically, so simulating the loop literally loses
//! `eps * |lambda|^{2t}` to cancellation. All transmission routines here run
//! the loop in estimation-error coordinates
//!
//! ```text
//!   X_{t+1} = Abb X_t - L_t e_t ,   e_t = Cbb' X_t + N_t ,   u_t = Dbb' X_t ,
//! ```
//!
//! started from `X_0 = (W, 0)`. Every reported signal is reconstructed from
//! bounded quantities; the state covariance equals the filter covariance, so
//! nothing in the recursion can overflow regardless of the horizon.
//!
//! # Covariance parametrizations
//!
//! [`cp_from_structure`] and [`structure_from_cp`] convert between the
//! structural description `(A, C, G)` and the pair `(K_r, B)` of the raw
//! transmission covariance and the strict-past noise predictor. The round trip
//! preserves the closed-loop input map, the mutual information, and the power.

use crate::channel::{channel_state_space, toeplitz_bundle, ChannelSpec};
use crate::kalman::{riccati_run, RiccatiTrajectory};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodingError {
    #[error("source pair (A, C') is numerically unobservable (singular value ratio {ratio:.3e})")]
    NotObservable { ratio: f64 },
    #[error("dimension mismatch: {detail}")]
    DimensionMismatch { detail: String },
    #[error("message index {index} is outside 1..={m_t}")]
    IndexOutOfRange { index: u64, m_t: u64 },
    #[error("covariance is not positive semidefinite (minimum eigenvalue {min_eig:.3e})")]
    NotPSD { min_eig: f64 },
    #[error("invalid parameter: {detail}")]
    InvalidParameter { detail: String },
}

/// Antistable source description: state matrix `A` and output row `C'`.
#[derive(Clone, Debug)]
pub struct EncoderSpec {
    a: DMatrix<f64>,
    c: DVector<f64>,
}

impl EncoderSpec {
    /// Validates dimensions and observability of `(A, C')`. The square
    /// observability matrix must have a singular value ratio above `1e-9`.
    pub fn new(a: DMatrix<f64>, c: DVector<f64>) -> Result<Self, CodingError> {
        if a.nrows() != a.ncols() {
            return Err(CodingError::DimensionMismatch {
                detail: format!("source matrix is {}x{}", a.nrows(), a.ncols()),
            });
        }
        if a.nrows() == 0 || c.len() != a.nrows() {
            return Err(CodingError::DimensionMismatch {
                detail: format!(
                    "output vector has length {} for a {}-dimensional source",
                    c.len(),
                    a.nrows()
                ),
            });
        }
        let spec = EncoderSpec { a, c };
        let obs = spec.observability_matrix(spec.dim());
        let svd = obs.svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        let smin = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let ratio = smin / smax.max(1e-300);
        if !(ratio > 1e-9) {
            return Err(CodingError::NotObservable { ratio });
        }
        Ok(spec)
    }

    /// Builds without the observability check. Only the zero encoder (used to
    /// represent a zero-power, zero-rate scheme) legitimately needs this.
    pub fn new_unchecked(a: DMatrix<f64>, c: DVector<f64>) -> Self {
        EncoderSpec { a, c }
    }

    pub fn scalar(a: f64, c: f64) -> Result<Self, CodingError> {
        EncoderSpec::new(DMatrix::from_element(1, 1, a), DVector::from_element(1, c))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// State dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Stacked rows `C' A^k` for `k = 0 .. rows-1`.
    pub fn observability_matrix(&self, rows: usize) -> DMatrix<f64> {
        let n1 = self.dim();
        let mut out = DMatrix::<f64>::zeros(rows, n1);
        let mut v = self.c.clone();
        for k in 0..rows {
            out.row_mut(k).copy_from(&v.transpose());
            v = self.a.transpose() * v;
        }
        out
    }

    pub fn eigenvalues(&self) -> Vec<nalgebra::Complex<f64>> {
        self.a.complex_eigenvalues().iter().cloned().collect()
    }

    /// Degree of instability: the product of eigenvalue moduli outside the
    /// unit circle, one for a stable source.
    pub fn degree_of_instability(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .map(|l| l.norm())
            .filter(|&n| n > 1.0)
            .product()
    }

    pub fn unstable_count(&self) -> usize {
        self.eigenvalues().iter().filter(|l| l.norm() > 1.0).count()
    }

    /// Real unit eigenvector of the dominant unstable eigenvalue. Fails when
    /// the dominant eigenvalue is complex or not unstable.
    pub fn dominant_unstable_eigenvector(&self) -> Result<DVector<f64>, CodingError> {
        let eigs = self.eigenvalues();
        let lam = eigs
            .iter()
            .cloned()
            .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
            .ok_or_else(|| CodingError::InvalidParameter {
                detail: "empty source".to_string(),
            })?;
        if lam.norm() <= 1.0 {
            return Err(CodingError::InvalidParameter {
                detail: "source has no unstable eigenvalue".to_string(),
            });
        }
        if lam.im.abs() > 1e-9 * (1.0 + lam.norm()) {
            return Err(CodingError::InvalidParameter {
                detail: "dominant unstable eigenvalue is complex".to_string(),
            });
        }
        let n = self.dim();
        let shifted = &self.a - DMatrix::identity(n, n) * lam.re;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.as_ref().expect("SVD with v requested");
        let mut idx = 0;
        for (i, s) in svd.singular_values.iter().enumerate() {
            if s < &svd.singular_values[idx] {
                idx = i;
            }
        }
        let v = v_t.row(idx).transpose();
        Ok(&v / v.norm())
    }
}

/// Per-step predictor gains of the optimal generator, split into source and
/// channel blocks.
#[derive(Clone, Debug)]
pub struct KfGains {
    pub l_src: Vec<DVector<f64>>,
    pub l_ch: Vec<DVector<f64>>,
}

/// Strictly causal feedback map acting on the received sequence.
#[derive(Clone, Debug)]
pub struct FeedbackGenerator {
    g_mat: DMatrix<f64>,
    /// Present when the generator came from the one-step predictor, enabling
    /// the recursive filter form of the same map.
    pub kf_gains: Option<KfGains>,
    horizon: usize,
}

impl FeedbackGenerator {
    /// Wraps a strictly lower triangular matrix. Entries on or above the
    /// diagonal must be exact zeros; feedback that peeks at the present or
    /// the future is rejected rather than silently truncated.
    pub fn from_matrix(g_mat: DMatrix<f64>) -> Result<Self, CodingError> {
        let n = g_mat.nrows();
        if n != g_mat.ncols() || n == 0 {
            return Err(CodingError::DimensionMismatch {
                detail: format!("generator matrix is {}x{}", n, g_mat.ncols()),
            });
        }
        for i in 0..n {
            for j in i..n {
                if g_mat[(i, j)] != 0.0 {
                    return Err(CodingError::InvalidParameter {
                        detail: format!(
                            "generator entry ({i}, {j}) is nonzero; feedback must be strictly causal"
                        ),
                    });
                }
            }
        }
        Ok(FeedbackGenerator {
            g_mat,
            kf_gains: None,
            horizon: n - 1,
        })
    }

    pub fn zero(horizon: usize) -> Self {
        FeedbackGenerator {
            g_mat: DMatrix::zeros(horizon + 1, horizon + 1),
            kf_gains: None,
            horizon,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g_mat
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Applies the generator as a dense matrix.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(y);
        (&self.g_mat * v).iter().cloned().collect()
    }

    /// Applies the generator in its recursive filter form: run the one-step
    /// predictor on `y` and emit the negated prediction of the raw
    /// transmission. Available only for predictor-built generators.
    pub fn apply_kf_form(
        &self,
        y: &[f64],
        encoder: &EncoderSpec,
        channel: &ChannelSpec,
    ) -> Result<Vec<f64>, CodingError> {
        let gains = self
            .kf_gains
            .as_ref()
            .ok_or_else(|| CodingError::InvalidParameter {
                detail: "generator has no filter form".to_string(),
            })?;
        let ss = channel_state_space(channel);
        let n1 = encoder.dim();
        let m = channel.order();
        let mut xh = DVector::<f64>::zeros(n1);
        let mut sh = DVector::<f64>::zeros(m);
        let mut out = Vec::with_capacity(y.len());
        for (t, &yt) in y.iter().enumerate() {
            let rhat = encoder.c().dot(&xh);
            let e = yt - ss.c.dot(&sh);
            out.push(-rhat);
            // The channel-state drive through the input cancels against the
            // filter's own prediction, leaving the pure gain update.
            xh = encoder.a() * xh + &gains.l_src[t] * e;
            sh = &ss.a * sh + &gains.l_ch[t] * e;
        }
        Ok(out)
    }
}

/// Builds the optimal feedback generator for the given source and channel:
/// the strictly causal map sending the received sequence to the negated
/// one-step prediction of the raw transmission.
pub fn optimal_feedback_generator(
    encoder: &EncoderSpec,
    channel: &ChannelSpec,
    horizon: usize,
) -> FeedbackGenerator {
    let traj = riccati_run(encoder, channel, horizon);
    let t1 = horizon + 1;
    let ss = channel_state_space(channel);
    let n1 = encoder.dim();
    let m = channel.order();

    // Estimation-form filter: treats its input as the innovation-bearing
    // sequence, reconstructing the channel state from its own prediction.
    // Column j is the response of the predicted raw transmission to a unit
    // impulse at time j.
    let mut ghat = DMatrix::<f64>::zeros(t1, t1);
    for j in 0..t1 {
        let mut xh = DVector::<f64>::zeros(n1);
        let mut sh = DVector::<f64>::zeros(m);
        for t in 0..t1 {
            let rhat = encoder.c().dot(&xh);
            ghat[(t, j)] = rhat;
            let input = if t == j { 1.0 } else { 0.0 };
            let e = input - rhat - ss.c.dot(&sh);
            xh = encoder.a() * xh + traj.l_src(t) * e;
            sh = &ss.a * sh + &ss.b * rhat + traj.l_ch(t) * e;
        }
    }

    // Convert the estimation form, which sees the feedback-free output, into
    // the map acting on the actual received sequence.
    let bundle = toeplitz_bundle(channel, horizon);
    let closed = DMatrix::identity(t1, t1) - &bundle.zinv * &ghat;
    let g_mat = linalg::rdiv_unit_lower(&(-&ghat), &closed);

    let gains = KfGains {
        l_src: (0..t1).map(|t| traj.l_src(t)).collect(),
        l_ch: (0..t1).map(|t| traj.l_ch(t)).collect(),
    };
    FeedbackGenerator {
        g_mat,
        kf_gains: Some(gains),
        horizon,
    }
}

/// Signals produced by one closed-loop transmission.
#[derive(Clone, Debug)]
pub struct Transcript {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub e: Vec<f64>,
    pub r: Vec<f64>,
    pub rhat: Vec<f64>,
    /// Message estimate after each step.
    pub xhat0: Vec<DVector<f64>>,
    pub w: DVector<f64>,
    pub power_empirical: f64,
    pub horizon: usize,
}

/// Runs the optimal closed loop for a given message and noise realization.
pub fn transmit(
    encoder: &EncoderSpec,
    channel: &ChannelSpec,
    w: &DVector<f64>,
    noise: &[f64],
    horizon: usize,
) -> Result<Transcript, CodingError> {
    let traj = riccati_run(encoder, channel, horizon);
    transmit_with_trajectory(&traj, encoder, channel, w, noise)
}

/// Same as [`transmit`] but reuses a precomputed trajectory, so repeated
/// transmissions over one horizon pay the Riccati cost once.
pub fn transmit_with_trajectory(
    traj: &RiccatiTrajectory,
    encoder: &EncoderSpec,
    channel: &ChannelSpec,
    w: &DVector<f64>,
    noise: &[f64],
) -> Result<Transcript, CodingError> {
    let n1 = encoder.dim();
    let horizon = traj.horizon;
    if w.len() != n1 {
        return Err(CodingError::DimensionMismatch {
            detail: format!("message has length {}, source dimension is {}", w.len(), n1),
        });
    }
    if noise.len() != horizon + 1 {
        return Err(CodingError::DimensionMismatch {
            detail: format!(
                "noise has length {}, horizon needs {}",
                noise.len(),
                horizon + 1
            ),
        });
    }
    let ss = channel_state_space(channel);
    let dim = traj.aug.dim();
    let mut x_err = DVector::<f64>::zeros(dim);
    x_err.rows_mut(0, n1).copy_from(w);
    let mut s = DVector::<f64>::zeros(channel.order());
    let mut x_src = w.clone();
    let mut xhat0 = DVector::<f64>::zeros(n1);

    let t1 = horizon + 1;
    let mut u = Vec::with_capacity(t1);
    let mut y = Vec::with_capacity(t1);
    let mut e = Vec::with_capacity(t1);
    let mut r = Vec::with_capacity(t1);
    let mut rhat = Vec::with_capacity(t1);
    let mut xhat0_path = Vec::with_capacity(t1);
    let mut power = 0.0;

    for (t, &n_t) in noise.iter().enumerate().take(t1) {
        let e_t = traj.aug.cbb.dot(&x_err) + n_t;
        let u_t = traj.aug.dbb.dot(&x_err);
        let y_t = ss.c.dot(&s) + u_t + n_t;
        let r_t = encoder.c().dot(&x_src);
        u.push(u_t);
        y.push(y_t);
        e.push(e_t);
        r.push(r_t);
        rhat.push(r_t - u_t);
        xhat0 += traj.smoother_gain(t) * e_t;
        xhat0_path.push(xhat0.clone());
        power += u_t * u_t;
        x_err = &traj.aug.abb * x_err - &traj.l[t] * e_t;
        s = &ss.a * s + &ss.b * u_t;
        x_src = encoder.a() * x_src;
    }
    Ok(Transcript {
        u,
        y,
        e,
        r,
        rhat,
        xhat0: xhat0_path,
        w: w.clone(),
        power_empirical: power / t1 as f64,
        horizon,
    })
}

/// Classic scalar feedback scheme over the memoryless channel, written in the
/// scaled-error form that stays numerically exact over long horizons.
///
/// The decoder error `delta_t = xhat_{0,t} - x0` obeys
///
/// ```text
///   delta_t = kappa delta_{t-1} + (kappa - 1) x0 - g a^{-t-2} y_t ,
///   kappa   = (g^2 + 1) / a^2 ,
/// ```
///
/// and the input is `u_t = g a^t delta_{t-1}`. At the capacity-achieving gain
/// `g = sqrt(a^2 - 1)` the contraction factor `kappa` equals one exactly, so
/// values within `1e-12` of one are snapped there: otherwise the round-off in
/// `kappa` is amplified by `a^t` when signals are reconstructed.
pub fn sk_transmit(a: f64, g: f64, x0: f64, noise: &[f64], horizon: usize) -> Transcript {
    assert!(
        noise.len() == horizon + 1,
        "noise length must match the horizon"
    );
    let mut kappa = (g * g + 1.0) / (a * a);
    if (kappa - 1.0).abs() <= 1e-12 {
        kappa = 1.0;
    }
    let t1 = horizon + 1;
    let mut delta = -x0;
    let mut u = Vec::with_capacity(t1);
    let mut y = Vec::with_capacity(t1);
    let mut e = Vec::with_capacity(t1);
    let mut r = Vec::with_capacity(t1);
    let mut rhat = Vec::with_capacity(t1);
    let mut xhat0_path = Vec::with_capacity(t1);
    let mut power = 0.0;
    for (t, &n_t) in noise.iter().enumerate().take(t1) {
        let apow = a.powi(t as i32);
        let u_t = g * apow * delta;
        let y_t = u_t + n_t;
        let r_t = -g * apow * x0;
        u.push(u_t);
        y.push(y_t);
        e.push(y_t);
        r.push(r_t);
        rhat.push(r_t - u_t);
        power += u_t * u_t;
        let correction = g * a.powi(-(t as i32) - 2) * y_t;
        delta = if kappa == 1.0 {
            delta - correction
        } else {
            kappa * delta + (kappa - 1.0) * x0 - correction
        };
        xhat0_path.push(DVector::from_element(1, x0 + delta));
    }
    Transcript {
        u,
        y,
        e,
        r,
        rhat,
        xhat0: xhat0_path,
        w: DVector::from_element(1, x0),
        power_empirical: power / t1 as f64,
        horizon,
    }
}

/// Center of message cell `index` out of `m_t`, on `[-1/2, 1/2]`.
pub fn encode_message(index: u64, m_t: u64) -> Result<f64, CodingError> {
    if index == 0 || index > m_t {
        return Err(CodingError::IndexOutOfRange { index, m_t });
    }
    Ok((2 * index - 1) as f64 / (2 * m_t) as f64 - 0.5)
}

/// Nearest-cell decoder, clamped to valid indices; boundary values resolve to
/// the lower cell.
pub fn decode_message(xhat0_final: f64, m_t: u64) -> Result<u64, CodingError> {
    if m_t == 0 {
        return Err(CodingError::InvalidParameter {
            detail: "message count must be positive".to_string(),
        });
    }
    let raw = ((xhat0_final + 0.5) * m_t as f64).ceil();
    let idx = if raw.is_nan() { 1.0 } else { raw };
    Ok((idx.max(1.0).min(m_t as f64)) as u64)
}

/// Which covariance the `cov` field of [`CPParams`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CpView {
    /// `K_r`, the covariance of the raw transmission `r = Gamma W`.
    Source,
    /// `K_v`, the covariance of the exogenous part of the channel input.
    Exogenous,
}

/// Covariance parametrization of a feedback scheme: a source covariance and
/// the strictly causal noise predictor `B`.
#[derive(Clone, Debug)]
pub struct CPParams {
    pub cov: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub view: CpView,
    pub horizon: usize,
}

impl CPParams {
    /// The raw-transmission covariance `K_r`, converting from the exogenous
    /// view when needed: `K_r = (I + B)^{-1} K_v (I + B)^{-T}`.
    pub fn source_covariance(&self) -> DMatrix<f64> {
        match self.view {
            CpView::Source => self.cov.clone(),
            CpView::Exogenous => {
                let n = self.cov.nrows();
                let ipb = DMatrix::identity(n, n) + &self.b_mat;
                let half = linalg::solve_unit_lower(&ipb, &self.cov);
                linalg::solve_unit_lower(&ipb, &half.transpose()).transpose()
            }
        }
    }

    /// The exogenous-input covariance `K_v = (I + B) K_r (I + B)'`.
    pub fn exogenous_covariance(&self) -> DMatrix<f64> {
        match self.view {
            CpView::Exogenous => self.cov.clone(),
            CpView::Source => {
                let n = self.cov.nrows();
                let ipb = DMatrix::identity(n, n) + &self.b_mat;
                &ipb * &self.cov * ipb.transpose()
            }
        }
    }
}

/// Extracts the covariance parametrization of a structural scheme.
///
/// With `M = G Z^{-1}` the noise predictor is `B = M (I - M)^{-1}` and the
/// source covariance is `K_r = Gamma Gamma'`.
pub fn cp_from_structure(
    encoder: &EncoderSpec,
    generator: &FeedbackGenerator,
    channel: &ChannelSpec,
    horizon: usize,
) -> CPParams {
    let t1 = horizon + 1;
    let gamma = encoder.observability_matrix(t1);
    let k_r = &gamma * gamma.transpose();
    let bundle = toeplitz_bundle(channel, horizon);
    let m_mat = generator.matrix() * &bundle.zinv;
    let b_mat = linalg::rdiv_unit_lower(&m_mat, &(DMatrix::identity(t1, t1) - &m_mat));
    CPParams {
        cov: k_r,
        b_mat,
        view: CpView::Source,
        horizon,
    }
}

/// A structural scheme recovered from covariance parameters.
#[derive(Clone, Debug)]
pub struct ReconstructedStructure {
    pub encoder: EncoderSpec,
    pub generator: FeedbackGenerator,
}

/// One regularized reconstruction attempt for a rank-deficient source
/// covariance.
#[derive(Clone, Debug)]
pub struct RidgeAttempt {
    pub ridge: f64,
    pub structure: ReconstructedStructure,
    /// Absolute deviation of the reconstruction's mutual information from the
    /// value implied by the original covariance.
    pub mi_deviation: f64,
}

/// Result of [`structure_from_cp`]: exact when the source covariance has full
/// rank, otherwise a sequence of shrinking-ridge approximations whose
/// information deviation decreases with the ridge.
#[derive(Clone, Debug)]
pub enum CpReconstruction {
    Exact(ReconstructedStructure),
    Regularized(Vec<RidgeAttempt>),
}

fn build_structure(
    k_r: &DMatrix<f64>,
    b_mat: &DMatrix<f64>,
    channel: &ChannelSpec,
    horizon: usize,
) -> Result<ReconstructedStructure, CodingError> {
    let t1 = horizon + 1;
    // Symmetric square root of K_r doubles as the observability matrix of the
    // reconstructed source: with A the conjugated shift and C its first row,
    // C' A^k picks out row k + 1 of the square root.
    let gamma_a = linalg::sym_sqrt_psd(k_r, 1e-10).map_err(|_| CodingError::NotPSD {
        min_eig: linalg::sym_eigenvalues(k_r)
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min),
    })?;
    let mut shift = DMatrix::<f64>::zeros(t1, t1);
    for i in 0..horizon {
        shift[(i, i + 1)] = 1.0;
    }
    let chol = nalgebra::Cholesky::new(linalg::symmetrize(&gamma_a)).ok_or(CodingError::NotPSD {
        min_eig: 0.0,
    })?;
    let a = chol.solve(&(&shift * &gamma_a));
    let c = gamma_a.column(0).into_owned();
    let encoder = EncoderSpec::new(a, c)?;

    let bundle = toeplitz_bundle(channel, horizon);
    let ipb = DMatrix::identity(t1, t1) + b_mat;
    let g_raw = linalg::solve_unit_lower(&ipb, b_mat);
    let g_mat = &g_raw * &bundle.z;
    let generator = FeedbackGenerator::from_matrix(g_mat)?;
    Ok(ReconstructedStructure { encoder, generator })
}

/// Log-determinant information implied by covariance parameters alone:
/// `1/2 logdet(I + Z^{-1} K_r Z^{-T})`.
fn cp_information(k_r: &DMatrix<f64>, channel: &ChannelSpec, horizon: usize) -> f64 {
    let bundle = toeplitz_bundle(channel, horizon);
    let t1 = horizon + 1;
    let inner = DMatrix::identity(t1, t1) + &bundle.zinv * k_r * bundle.zinv.transpose();
    0.5 * linalg::cholesky_logdet(&inner).expect("identity plus a PSD matrix is positive definite")
}

/// Recovers a structural scheme from covariance parameters.
///
/// A genuinely indefinite covariance is rejected. A positive semidefinite but
/// rank-deficient one admits no exact finite-dimensional source over this
/// horizon, so the reconstruction is repeated on `K_r + rho I` for shrinking
/// `rho`, reporting how fast the information deviation closes.
pub fn structure_from_cp(
    cp: &CPParams,
    channel: &ChannelSpec,
    horizon: usize,
) -> Result<CpReconstruction, CodingError> {
    let k_r = cp.source_covariance();
    let eigs = linalg::sym_eigenvalues(&k_r);
    let max_eig = eigs.iter().cloned().fold(0.0_f64, f64::max);
    let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-8 * max_eig.max(1e-300) {
        return Err(CodingError::NotPSD { min_eig });
    }
    if min_eig > 1e-8 * max_eig {
        return Ok(CpReconstruction::Exact(build_structure(
            &k_r, &cp.b_mat, channel, horizon,
        )?));
    }
    let target = cp_information(&k_r, channel, horizon);
    let mut attempts = Vec::new();
    for ridge in [1e-1, 1e-2, 1e-3] {
        let ridged = &k_r + DMatrix::identity(k_r.nrows(), k_r.ncols()) * ridge;
        let structure = build_structure(&ridged, &cp.b_mat, channel, horizon)?;
        let mi = cp_information(&ridged, channel, horizon);
        attempts.push(RidgeAttempt {
            ridge,
            structure,
            mi_deviation: (mi - target).abs(),
        });
    }
    Ok(CpReconstruction::Regularized(attempts))
}

/// Scheme used by the Monte Carlo driver: a scalar source whose growth rate
/// is set by the power budget, or an explicit source override.
#[derive(Clone, Debug)]
pub struct SchemeConfig {
    pub c: f64,
    pub channel: ChannelSpec,
    /// Diagnostic mode: run the loop with the noise forced to zero.
    pub zero_noise: bool,
    /// When present, replaces the scalar source. Messages ride the coordinate
    /// along the dominant unstable eigenvector; the remaining coordinates are
    /// sampled standard normal.
    pub encoder_override: Option<EncoderSpec>,
}

impl SchemeConfig {
    pub fn scalar_over(channel: ChannelSpec) -> Self {
        SchemeConfig {
            c: 1.0,
            channel,
            zero_noise: false,
            encoder_override: None,
        }
    }
}

/// One Monte Carlo summary row.
#[derive(Clone, Debug)]
pub struct McRow {
    pub horizon: usize,
    pub m_t: u64,
    pub pe: f64,
    pub power_hat: f64,
    pub trials: u64,
    pub seed: u64,
}

/// Estimates block error rates of the feedback scheme at rate
/// `(1 - eps) log a` for each horizon in `t_list`.
///
/// The message count is `M_T = floor(a^{(T+1)(1-eps)})` with `a = sqrt(1+p)`.
/// Trials are driven by a counter-based generator: stream `j` of the master
/// seed feeds trial `j`, so results are reproducible and independent of trial
/// order, and the trials execute concurrently.
pub fn monte_carlo_error_rate(
    scheme: &SchemeConfig,
    p: f64,
    eps: f64,
    t_list: &[usize],
    trials: u64,
    master_seed: u64,
) -> Result<Vec<McRow>, CodingError> {
    if !(p > 0.0) {
        return Err(CodingError::InvalidParameter {
            detail: format!("power budget must be positive, got {p}"),
        });
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CodingError::InvalidParameter {
            detail: format!("rate back-off must lie in (0, 1), got {eps}"),
        });
    }
    if trials == 0 {
        return Err(CodingError::InvalidParameter {
            detail: "at least one trial is required".to_string(),
        });
    }
    let a = (1.0 + p).sqrt();
    let mut rows = Vec::with_capacity(t_list.len());
    for (t_idx, &horizon) in t_list.iter().enumerate() {
        let encoder = match &scheme.encoder_override {
            Some(enc) => enc.clone(),
            None => EncoderSpec::scalar(a, scheme.c)?,
        };
        let n1 = encoder.dim();
        let m_t_real = a.powf((horizon as f64 + 1.0) * (1.0 - eps)).floor();
        if !(m_t_real.is_finite() && m_t_real < 9.0e15) {
            return Err(CodingError::InvalidParameter {
                detail: format!("message count overflows at horizon {horizon}"),
            });
        }
        let m_t = (m_t_real as u64).max(1);
        let traj = riccati_run(&encoder, &scheme.channel, horizon);
        let basis = if n1 > 1 {
            Some(linalg::orthonormal_completion(
                &encoder.dominant_unstable_eigenvector()?,
            ))
        } else {
            None
        };
        let run_trial = |trial: u64| -> Result<(bool, f64), CodingError> {
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(((t_idx as u64) << 40) ^ trial);
            let index = rng.random_range(1..=m_t);
            let center = encode_message(index, m_t)?;
            let w = match &basis {
                None => DVector::from_element(1, center),
                Some(q) => {
                    let mut w = q.column(0) * center;
                    for k in 1..n1 {
                        let xi: f64 = rng.sample(StandardNormal);
                        w += q.column(k) * xi;
                    }
                    w
                }
            };
            let noise: Vec<f64> = (0..=horizon)
                .map(|_| {
                    if scheme.zero_noise {
                        0.0
                    } else {
                        rng.sample(StandardNormal)
                    }
                })
                .collect();
            let tr = transmit_with_trajectory(&traj, &encoder, &scheme.channel, &w, &noise)?;
            let estimate = match &basis {
                None => tr.xhat0[horizon][0],
                Some(q) => q.column(0).dot(&tr.xhat0[horizon]),
            };
            Ok((decode_message(estimate, m_t)? != index, tr.power_empirical))
        };

        // Trials are independent, so they run concurrently on contiguous
        // chunks. The chunk count is a constant rather than the machine's
        // core count, and partials are combined in chunk order, so the
        // emitted numbers are byte-identical on every machine.
        const CHUNKS: u64 = 16;
        let chunk_len = trials.div_ceil(CHUNKS);
        let partials = std::thread::scope(|sc| {
            let run_trial = &run_trial;
            let handles: Vec<_> = (0..trials)
                .step_by(chunk_len as usize)
                .map(|start| {
                    let end = (start + chunk_len).min(trials);
                    sc.spawn(move || -> Result<(u64, f64), CodingError> {
                        let mut errs = 0u64;
                        let mut power = 0.0;
                        for trial in start..end {
                            let (erred, p_emp) = run_trial(trial)?;
                            if erred {
                                errs += 1;
                            }
                            power += p_emp;
                        }
                        Ok((errs, power))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("trial worker must not panic"))
                .collect::<Vec<_>>()
        });
        let mut errors = 0u64;
        let mut power_sum = 0.0;
        for partial in partials {
            let (errs, power) = partial?;
            errors += errs;
            power_sum += power;
        }
        rows.push(McRow {
            horizon,
            m_t,
            pe: errors as f64 / trials as f64,
            power_hat: power_sum / trials as f64,
            trials,
            seed: master_seed,
        });
    }
    Ok(rows)
}

/// Linear channel-input policy over a horizon: an exogenous map applied to
/// independent standard normal coordinates plus strictly causal feedback of
/// the received sequence.
#[derive(Clone, Debug)]
pub struct InputPolicy {
    /// `(T+1) x k` map from exogenous coordinates to inputs.
    pub exo: DMatrix<f64>,
    /// `(T+1) x (T+1)` strictly lower triangular feedback map.
    pub fb: DMatrix<f64>,
    pub horizon: usize,
}

impl InputPolicy {
    pub fn new(exo: DMatrix<f64>, fb: DMatrix<f64>, horizon: usize) -> Result<Self, CodingError> {
        let t1 = horizon + 1;
        if exo.nrows() != t1 || fb.nrows() != t1 || fb.ncols() != t1 {
            return Err(CodingError::DimensionMismatch {
                detail: format!(
                    "policy over horizon {horizon} needs {t1} rows, got exo {}x{}, fb {}x{}",
                    exo.nrows(),
                    exo.ncols(),
                    fb.nrows(),
                    fb.ncols()
                ),
            });
        }
        for i in 0..t1 {
            for j in i..t1 {
                if fb[(i, j)] != 0.0 {
                    return Err(CodingError::InvalidParameter {
                        detail: format!("feedback entry ({i}, {j}) violates strict causality"),
                    });
                }
            }
        }
        Ok(InputPolicy { exo, fb, horizon })
    }

    /// Policy of a structural scheme: `u = Gamma W + G y`.
    pub fn from_structure(
        encoder: &EncoderSpec,
        generator: &FeedbackGenerator,
        horizon: usize,
    ) -> Self {
        InputPolicy {
            exo: encoder.observability_matrix(horizon + 1),
            fb: generator.matrix().clone(),
            horizon,
        }
    }

    pub fn open_loop(exo: DMatrix<f64>, horizon: usize) -> Result<Self, CodingError> {
        let t1 = horizon + 1;
        if exo.nrows() != t1 {
            return Err(CodingError::DimensionMismatch {
                detail: format!("open-loop map needs {t1} rows, got {}", exo.nrows()),
            });
        }
        Ok(InputPolicy {
            fb: DMatrix::zeros(t1, t1),
            exo,
            horizon,
        })
    }

    /// Closed-loop maps from `(exogenous coords, noise)` to `(u, y)`.
    pub fn closed_loop_maps(
        &self,
        channel: &ChannelSpec,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let t1 = self.horizon + 1;
        let bundle = toeplitz_bundle(channel, self.horizon);
        let closed = DMatrix::identity(t1, t1) - &bundle.zinv * &self.fb;
        let my_e = linalg::solve_unit_lower(&closed, &(&bundle.zinv * &self.exo));
        let my_n = linalg::solve_unit_lower(&closed, &DMatrix::identity(t1, t1));
        let mu_e = &self.exo + &self.fb * &my_e;
        let mu_n = &self.fb * &my_n;
        (mu_e, mu_n, my_e, my_n)
    }
}

/// Removes the predictable part of a policy's input: subtracts the one-step
/// MMSE prediction of `u_t` from the received past and rewrites the feedback
/// so the closed loop is unchanged.
///
/// The returned policy spends no power on anything the receiver can already
/// infer. Rates are untouched, power can only drop.
pub fn mmse_precode(
    policy: &InputPolicy,
    channel: &ChannelSpec,
    horizon: usize,
) -> Result<InputPolicy, CodingError> {
    if policy.horizon != horizon {
        return Err(CodingError::DimensionMismatch {
            detail: format!(
                "policy horizon {} does not match requested {horizon}",
                policy.horizon
            ),
        });
    }
    let t1 = horizon + 1;
    let (mu_e, mu_n, my_e, my_n) = policy.closed_loop_maps(channel);
    let k_y = &my_e * my_e.transpose() + &my_n * my_n.transpose();
    let k_uy = &mu_e * my_e.transpose() + &mu_n * my_n.transpose();
    let chol = nalgebra::Cholesky::new(linalg::symmetrize(&k_y)).ok_or_else(|| {
        CodingError::InvalidParameter {
            detail: "received-sequence covariance is not positive definite".to_string(),
        }
    })?;
    let r = chol.l();

    // Row t of the predictor solves K_{y^{t-1}} p = K_{y^{t-1}, u_t}; the
    // leading block of the full Cholesky factor is the factor of the leading
    // block, so one factorization serves every t.
    let mut pred = DMatrix::<f64>::zeros(t1, t1);
    for t in 1..t1 {
        let r_lead = r.view((0, 0), (t, t)).into_owned();
        let rhs = DVector::from_fn(t, |j, _| k_uy[(t, j)]);
        let z = linalg::solve_lower_vec(&r_lead, &rhs);
        let p = linalg::solve_lower_transpose_vec(&r_lead, &z);
        for j in 0..t {
            pred[(t, j)] = p[j];
        }
    }

    let bundle = toeplitz_bundle(channel, horizon);
    let rewritten = linalg::rdiv_unit_lower(
        &(&policy.fb - &pred),
        &(DMatrix::identity(t1, t1) - &bundle.zinv * &pred),
    );
    InputPolicy::new(policy.exo.clone(), rewritten, horizon)
}
