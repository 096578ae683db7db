//! One-step prediction for the joint encoder and channel state.
//!
//! The feedback coding loop tracks the source state `x_t = A^t W` together
//! with the channel filter state `s_t`. Stacking the estimation errors of both
//! gives the augmented system
//!
//! ```text
//!   Abb = [ A    0 ]      Cbb = [ C ]      Dbb = [ C ]
//!         [ GC'  F ],           [ H ],           [ 0 ] ,
//! ```
//!
//! driven by unit-variance white noise through the innovation. The filter
//! covariance follows the Riccati recursion
//!
//! ```text
//!   K_e = Cbb' S Cbb + 1
//!   L   = Abb S Cbb / K_e
//!   S'  = Abb S Abb' - K_e L L'
//! ```
//!
//! started from `S_0 = diag(I, 0)`: the message `W` is standard normal and the
//! channel starts at rest. Everything downstream (transmission, smoothing,
//! rate and power accounting) reads gains and covariances from the
//! [`RiccatiTrajectory`] produced here.
//!
//! # Steady state
//!
//! Two independent solvers compute the limiting covariance. [`riccati_steady_iterate`]
//! simply runs the recursion to a fixed point. [`riccati_steady_transform`]
//! splits the source spectrum into stable and antistable parts, absorbs the
//! stable part and the channel into a Sylvester equation, and solves a reduced
//! Riccati equation of dimension equal to the number of unstable eigenvalues.
//! Agreement of the two routes is one of the structural checks this crate
//! exists to make, so they share no code beyond [`riccati_step`].
//!
//! Both solvers require the spectra of `A` and `F` to be disjoint and `A` to
//! have no eigenvalue on the unit circle; [`check_assumption_a2`] enforces
//! this and the observability of `(A, C')`.

use crate::channel::{channel_state_space, ChannelSpec};
use crate::coding::EncoderSpec;
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KalmanError {
    #[error("Riccati iteration did not converge within {max_iter} steps (last delta {last_delta:.3e})")]
    NoConvergence { max_iter: usize, last_delta: f64 },
    #[error("spectral separation assumption violated: {detail}")]
    AssumptionA2Violated { detail: String },
    #[error("Sylvester operator is singular: the spectra of the two coefficient matrices overlap")]
    SingularSylvester,
    #[error("source matrix eigenbasis is numerically degenerate: {detail}")]
    EigenSplitFailed { detail: String },
}

/// Stacked error dynamics of source and channel state.
#[derive(Clone, Debug)]
pub struct AugmentedSystem {
    pub abb: DMatrix<f64>,
    pub cbb: DVector<f64>,
    pub dbb: DVector<f64>,
    /// Source state dimension `n + 1`.
    pub n_src: usize,
    /// Channel state dimension `m`.
    pub m_ch: usize,
}

impl AugmentedSystem {
    pub fn new(encoder: &EncoderSpec, channel: &ChannelSpec) -> Self {
        let ss = channel_state_space(channel);
        let n1 = encoder.dim();
        let m = channel.order();
        let d = n1 + m;
        let mut abb = DMatrix::<f64>::zeros(d, d);
        abb.view_mut((0, 0), (n1, n1)).copy_from(encoder.a());
        if m > 0 {
            abb.view_mut((n1, 0), (m, n1))
                .copy_from(&(&ss.b * encoder.c().transpose()));
            abb.view_mut((n1, n1), (m, m)).copy_from(&ss.a);
        }
        let mut cbb = DVector::<f64>::zeros(d);
        cbb.rows_mut(0, n1).copy_from(encoder.c());
        if m > 0 {
            cbb.rows_mut(n1, m).copy_from(&ss.c);
        }
        let mut dbb = DVector::<f64>::zeros(d);
        dbb.rows_mut(0, n1).copy_from(encoder.c());
        AugmentedSystem {
            abb,
            cbb,
            dbb,
            n_src: n1,
            m_ch: m,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_src + self.m_ch
    }

    /// Initial covariance: standard normal message, channel at rest.
    pub fn initial_covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut s = DMatrix::<f64>::zeros(d, d);
        for i in 0..self.n_src {
            s[(i, i)] = 1.0;
        }
        s
    }
}

/// One Riccati update. Returns the predicted covariance, the gain, and the
/// innovation variance.
pub fn riccati_step(
    sigma: &DMatrix<f64>,
    aug: &AugmentedSystem,
) -> (DMatrix<f64>, DVector<f64>, f64) {
    generic_riccati_step(sigma, &aug.abb, &aug.cbb)
}

fn generic_riccati_step(
    sigma: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>, f64) {
    let sc = sigma * c;
    let ke = c.dot(&sc) + 1.0;
    let l = (a * &sc) / ke;
    let next = a * sigma * a.transpose() - &l * l.transpose() * ke;
    (linalg::symmetrize(&next), l, ke)
}

/// Filter quantities over a finite horizon, indexed so that `sigma[t]` is the
/// covariance entering step `t` and `l[t]`, `ke[t]` are the gain and
/// innovation variance used at step `t`.
#[derive(Clone, Debug)]
pub struct RiccatiTrajectory {
    pub aug: AugmentedSystem,
    /// `sigma[0..=T+1]`, length `T + 2`.
    pub sigma: Vec<DMatrix<f64>>,
    /// `l[0..=T]`.
    pub l: Vec<DVector<f64>>,
    /// `ke[0..=T]`.
    pub ke: Vec<f64>,
    /// `phi[t]` is the closed-loop transition product
    /// `Acl(t-1) Acl(t-2) .. Acl(0)` with `phi[0] = I`, length `T + 2`.
    pub phi: Vec<DMatrix<f64>>,
    /// Impulse response of the inverse channel filter over the horizon.
    pub zinv_impulse: Vec<f64>,
    pub horizon: usize,
}

impl RiccatiTrajectory {
    /// Smoothing gain for the message estimate at step `t`. This is the source
    /// block of `phi[t]' Cbb / ke[t]`, which equals the cross-covariance of
    /// `W` with the innovation at `t` divided by the innovation variance.
    pub fn smoother_gain(&self, t: usize) -> DVector<f64> {
        let v = self.phi[t].transpose() * &self.aug.cbb;
        v.rows(0, self.aug.n_src).into_owned() / self.ke[t]
    }

    /// Source block of the predictor gain at step `t`.
    pub fn l_src(&self, t: usize) -> DVector<f64> {
        self.l[t].rows(0, self.aug.n_src).into_owned()
    }

    /// Channel block of the predictor gain at step `t`.
    pub fn l_ch(&self, t: usize) -> DVector<f64> {
        self.l[t].rows(self.aug.n_src, self.aug.m_ch).into_owned()
    }
}

/// Runs the Riccati recursion for steps `0..=T`.
pub fn riccati_run(
    encoder: &EncoderSpec,
    channel: &ChannelSpec,
    horizon: usize,
) -> RiccatiTrajectory {
    let aug = AugmentedSystem::new(encoder, channel);
    let d = aug.dim();
    let mut sigma = Vec::with_capacity(horizon + 2);
    let mut l = Vec::with_capacity(horizon + 1);
    let mut ke = Vec::with_capacity(horizon + 1);
    let mut phi = Vec::with_capacity(horizon + 2);
    sigma.push(aug.initial_covariance());
    phi.push(DMatrix::identity(d, d));
    for t in 0..=horizon {
        let (next, lt, ket) = riccati_step(&sigma[t], &aug);
        let acl = &aug.abb - &lt * aug.cbb.transpose();
        phi.push(&acl * &phi[t]);
        sigma.push(next);
        l.push(lt);
        ke.push(ket);
    }
    let zinv_impulse = channel_state_space(channel).impulse(horizon + 1);
    RiccatiTrajectory {
        aug,
        sigma,
        l,
        ke,
        phi,
        zinv_impulse,
        horizon,
    }
}

/// Limiting filter covariance, gain, and innovation variance.
#[derive(Clone, Debug)]
pub struct SteadySolution {
    pub sigma: DMatrix<f64>,
    pub l: DVector<f64>,
    pub ke: f64,
    /// Number of iterations the fixed-point run needed.
    pub iterations: usize,
}

fn complex_eigs(m: &DMatrix<f64>) -> Vec<nalgebra::Complex<f64>> {
    // The Schur decomposition underneath cannot handle an empty matrix, which
    // is exactly what the memoryless channel produces.
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().cloned().collect()
}

/// Verifies the spectral conditions the steady-state theory needs: `(A, C')`
/// observable, no eigenvalue of `A` on the unit circle, and the spectra of
/// `A` and the channel matrix `F` disjoint.
pub fn check_assumption_a2(
    encoder: &EncoderSpec,
    channel: &ChannelSpec,
) -> Result<(), KalmanError> {
    let obs = encoder.observability_matrix(encoder.dim());
    let svd = obs.svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(smin > 1e-9 * smax) {
        return Err(KalmanError::AssumptionA2Violated {
            detail: format!(
                "source pair is numerically unobservable (singular value ratio {:.3e})",
                smin / smax.max(1e-300)
            ),
        });
    }
    let a_eigs = complex_eigs(encoder.a());
    for lam in &a_eigs {
        if (lam.norm() - 1.0).abs() < 1e-9 {
            return Err(KalmanError::AssumptionA2Violated {
                detail: format!(
                    "source eigenvalue {:+.6}{:+.6}i lies on the unit circle",
                    lam.re, lam.im
                ),
            });
        }
    }
    let f_eigs = complex_eigs(&channel_state_space(channel).a);
    for la in &a_eigs {
        for lf in &f_eigs {
            if (la - lf).norm() < 1e-9 {
                return Err(KalmanError::AssumptionA2Violated {
                    detail: format!(
                        "source eigenvalue {:+.6}{:+.6}i coincides with a channel mode",
                        la.re, la.im
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Fixed-point steady-state solver: runs the recursion from the initial
/// covariance until the update falls below `tol` in max norm.
pub fn riccati_steady_iterate(
    encoder: &EncoderSpec,
    channel: &ChannelSpec,
    tol: f64,
    max_iter: usize,
) -> Result<SteadySolution, KalmanError> {
    check_assumption_a2(encoder, channel)?;
    let aug = AugmentedSystem::new(encoder, channel);
    let mut sigma = aug.initial_covariance();
    let mut last_delta = f64::INFINITY;
    for it in 1..=max_iter {
        let (next, l, ke) = riccati_step(&sigma, &aug);
        last_delta = linalg::max_abs_diff(&next, &sigma);
        sigma = next;
        if last_delta < tol {
            return Ok(SteadySolution {
                sigma,
                l,
                ke,
                iterations: it,
            });
        }
    }
    Err(KalmanError::NoConvergence {
        max_iter,
        last_delta,
    })
}

/// Solves `F X - X A = -G C'` for `X`.
pub fn sylvester_solve(
    f: &DMatrix<f64>,
    a: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DVector<f64>,
) -> Result<DMatrix<f64>, KalmanError> {
    let q = -g * c.transpose();
    linalg::sylvester(f, a, &q).map_err(|_| KalmanError::SingularSylvester)
}

/// Real invariant-subspace basis of `a`, returned as the column blocks for
/// eigenvalues outside and inside the unit circle.
fn spectral_split(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize), KalmanError> {
    let n = a.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0));
    }
    let eigs = complex_eigs(a);
    let mut unstable: Vec<DVector<f64>> = Vec::new();
    let mut stable: Vec<DVector<f64>> = Vec::new();
    let mut visited = vec![false; n];
    let cluster_tol = 1e-7 * (1.0 + eigs.iter().map(|e| e.norm()).fold(0.0_f64, f64::max));
    for i in 0..n {
        if visited[i] {
            continue;
        }
        let lam = eigs[i];
        let is_real = lam.im.abs() <= cluster_tol;
        // Gather the whole cluster of (numerically) equal eigenvalues, and for
        // complex ones also their conjugates, so repeated roots contribute a
        // full-dimension eigenspace instead of the same vector twice.
        let mut count = 0usize;
        for (j, v) in visited.iter_mut().enumerate().skip(i) {
            if *v {
                continue;
            }
            let e = eigs[j];
            let same = (e - lam).norm() <= cluster_tol
                || (!is_real && (e - lam.conj()).norm() <= cluster_tol);
            if same {
                *v = true;
                count += 1;
            }
        }
        let (op, want) = if is_real {
            (a - DMatrix::identity(n, n) * lam.re, count)
        } else {
            // For a conjugate pair with eigenvalue alpha + i beta the real
            // 2-dimensional invariant subspace is the kernel of
            // (A - alpha I)^2 + beta^2 I.
            let shifted = a - DMatrix::identity(n, n) * lam.re;
            (
                &shifted * &shifted + DMatrix::identity(n, n) * (lam.im * lam.im),
                count,
            )
        };
        let svd = op.svd(false, true);
        let v_t = svd.v_t.as_ref().expect("SVD with v requested");
        let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        // Indices of the `want` smallest singular values.
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&p, &q| {
            svd.singular_values[p]
                .partial_cmp(&svd.singular_values[q])
                .unwrap()
        });
        for &idx in order.iter().take(want) {
            if svd.singular_values[idx] > 1e-7 * smax.max(1.0) {
                return Err(KalmanError::EigenSplitFailed {
                    detail: format!(
                        "eigenvalue {:+.6}{:+.6}i has defective multiplicity",
                        lam.re, lam.im
                    ),
                });
            }
            let col = v_t.row(idx).transpose();
            if lam.norm() > 1.0 {
                unstable.push(col);
            } else {
                stable.push(col);
            }
        }
    }
    let k = unstable.len();
    let cols: Vec<DVector<f64>> = unstable.into_iter().chain(stable).collect();
    let v = DMatrix::from_columns(&cols);
    let svd = v.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(smin > 1e-10 * smax) {
        return Err(KalmanError::EigenSplitFailed {
            detail: "invariant subspace basis is numerically singular".to_string(),
        });
    }
    Ok((v, k))
}

/// Transform-based steady-state solver.
///
/// Diagonalizes the source into stable and antistable blocks, eliminates the
/// stable block and the channel state through a Sylvester equation, solves a
/// reduced Riccati recursion of dimension equal to the number of unstable
/// eigenvalues, and maps the result back. The limiting covariance has rank
/// equal to that dimension.
pub fn riccati_steady_transform(
    encoder: &EncoderSpec,
    channel: &ChannelSpec,
) -> Result<DMatrix<f64>, KalmanError> {
    check_assumption_a2(encoder, channel)?;
    let ss = channel_state_space(channel);
    let n1 = encoder.dim();
    let m = channel.order();
    let dim = n1 + m;

    let (v, k) = spectral_split(encoder.a())?;
    if k == 0 {
        // Fully stable source: the prediction error vanishes asymptotically.
        return Ok(DMatrix::zeros(dim, dim));
    }
    let v_lu = nalgebra::LU::new(v.clone());
    let a_tilde = v_lu
        .solve(&(encoder.a() * &v))
        .ok_or_else(|| KalmanError::EigenSplitFailed {
            detail: "invariant subspace basis is numerically singular".to_string(),
        })?;
    let c_tilde = v.transpose() * encoder.c();
    let ap = a_tilde.view((0, 0), (k, k)).into_owned();
    let am = a_tilde.view((k, k), (n1 - k, n1 - k)).into_owned();
    let cp = c_tilde.rows(0, k).into_owned();
    let cm = c_tilde.rows(k, n1 - k).into_owned();

    // Dynamics of everything that decays: the stable source block stacked on
    // the channel state, driven by the unstable block through C.
    let d_rest = (n1 - k) + m;
    let mut fb = DMatrix::<f64>::zeros(d_rest, d_rest);
    fb.view_mut((0, 0), (n1 - k, n1 - k)).copy_from(&am);
    if m > 0 {
        fb.view_mut((n1 - k, 0), (m, n1 - k))
            .copy_from(&(&ss.b * cm.transpose()));
        fb.view_mut((n1 - k, n1 - k), (m, m)).copy_from(&ss.a);
    }
    let mut g_stack = DVector::<f64>::zeros(d_rest);
    if m > 0 {
        g_stack.rows_mut(n1 - k, m).copy_from(&ss.b);
    }
    let psi = sylvester_solve(&fb, &ap, &g_stack, &cp)?;

    let mut c_rest = DVector::<f64>::zeros(d_rest);
    c_rest.rows_mut(0, n1 - k).copy_from(&cm);
    if m > 0 {
        c_rest.rows_mut(n1 - k, m).copy_from(&ss.c);
    }
    let c_red = &cp + psi.transpose() * &c_rest;

    // Reduced Riccati recursion on the antistable block alone.
    let mut s_red = DMatrix::<f64>::identity(k, k);
    let mut converged = false;
    let max_iter = 20000;
    let mut last_delta = f64::INFINITY;
    for _ in 0..max_iter {
        let (next, _, _) = generic_riccati_step(&s_red, &ap, &c_red);
        last_delta = linalg::max_abs_diff(&next, &s_red);
        s_red = next;
        if last_delta < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(KalmanError::NoConvergence {
            max_iter,
            last_delta,
        });
    }

    // Reassemble in the split coordinates, then undo the transform.
    let mut s_check = DMatrix::<f64>::zeros(dim, dim);
    s_check.view_mut((0, 0), (k, k)).copy_from(&s_red);
    let cross = &s_red * psi.transpose();
    s_check.view_mut((0, k), (k, d_rest)).copy_from(&cross);
    s_check
        .view_mut((k, 0), (d_rest, k))
        .copy_from(&cross.transpose());
    s_check
        .view_mut((k, k), (d_rest, d_rest))
        .copy_from(&(&psi * &s_red * psi.transpose()));

    let mut v_big = DMatrix::<f64>::identity(dim, dim);
    v_big.view_mut((0, 0), (n1, n1)).copy_from(&v);
    Ok(linalg::symmetrize(&(&v_big * s_check * v_big.transpose())))
}

/// Running state of the fixed-point message smoother.
#[derive(Clone, Debug)]
pub struct SmootherState {
    /// Current estimate of the message `W` given observations so far.
    pub xhat0: DVector<f64>,
    /// Current error covariance of that estimate.
    pub mmse_w: DMatrix<f64>,
}

impl SmootherState {
    /// Prior state: zero estimate with identity covariance.
    pub fn initial(n_src: usize) -> Self {
        SmootherState {
            xhat0: DVector::zeros(n_src),
            mmse_w: DMatrix::identity(n_src, n_src),
        }
    }
}

/// Absorbs the innovation at step `t` into the message estimate.
pub fn fixed_point_smoother_step(
    state: &SmootherState,
    traj: &RiccatiTrajectory,
    t: usize,
    e_t: f64,
) -> SmootherState {
    let gamma = traj.smoother_gain(t);
    SmootherState {
        xhat0: &state.xhat0 + &gamma * e_t,
        mmse_w: state.mmse_w.clone(),
    }
}

/// Updates the message error covariance for the innovation at step `t`:
/// observing `e_t` removes `ke[t] gamma_t gamma_t'` of uncertainty.
pub fn mmse_w_update(
    state: &SmootherState,
    traj: &RiccatiTrajectory,
    t: usize,
) -> SmootherState {
    let gamma = traj.smoother_gain(t);
    let next = &state.mmse_w - &gamma * gamma.transpose() * traj.ke[t];
    SmootherState {
        xhat0: state.xhat0.clone(),
        mmse_w: linalg::symmetrize(&next),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::validate_channel;
    use approx::assert_abs_diff_eq;

    fn scalar_encoder(a: f64, c: f64) -> EncoderSpec {
        EncoderSpec::scalar(a, c).unwrap()
    }

    #[test]
    fn scalar_step_matches_hand_values() {
        // a = 2, c = 1, sigma = 1: K_e = 2, L = 1, next sigma = 2.
        let enc = scalar_encoder(2.0, 1.0);
        let aug = AugmentedSystem::new(&enc, &ChannelSpec::awgn());
        let s = DMatrix::from_element(1, 1, 1.0);
        let (next, l, ke) = riccati_step(&s, &aug);
        assert_abs_diff_eq!(ke, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(l[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(next[(0, 0)], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_covariance_is_a_fixed_point_of_the_error_update() {
        let enc = scalar_encoder(0.5, 1.0);
        let aug = AugmentedSystem::new(&enc, &ChannelSpec::awgn());
        let s = DMatrix::from_element(1, 1, 0.0);
        let (next, l, ke) = riccati_step(&s, &aug);
        assert_eq!(next[(0, 0)], 0.0);
        assert_eq!(l[0], 0.0);
        assert_abs_diff_eq!(ke, 1.0, epsilon = 0.0);
    }

    #[test]
    fn scalar_steady_state_is_three() {
        // a = 2, c = 1: steady sigma = a^2 - 1 = 3, L = 1.5, K_e = 4.
        let enc = scalar_encoder(2.0, 1.0);
        let sol = riccati_steady_iterate(&enc, &ChannelSpec::awgn(), 1e-12, 10000).unwrap();
        assert_abs_diff_eq!(sol.sigma[(0, 0)], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.l[0], 1.5, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.ke, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn stable_source_converges_to_zero_covariance() {
        let enc = scalar_encoder(0.5, 1.0);
        let sol = riccati_steady_iterate(&enc, &ChannelSpec::awgn(), 1e-12, 10000).unwrap();
        assert!(sol.sigma[(0, 0)].abs() < 1e-10);
        let tr = riccati_steady_transform(&enc, &ChannelSpec::awgn()).unwrap();
        assert_eq!(tr[(0, 0)], 0.0);
    }

    #[test]
    fn trajectory_shapes_and_psd() {
        let enc = EncoderSpec::new(
            DMatrix::from_row_slice(2, 2, &[1.1, 0.3, 0.0, 0.6]),
            DVector::from_vec(vec![1.0, 0.4]),
        )
        .unwrap();
        let ch = validate_channel(&[0.2], &[0.3]).unwrap();
        let traj = riccati_run(&enc, &ch, 100);
        assert_eq!(traj.sigma.len(), 102);
        assert_eq!(traj.l.len(), 101);
        assert_eq!(traj.ke.len(), 101);
        assert_eq!(traj.phi.len(), 102);
        for s in &traj.sigma {
            let min_eig = linalg::sym_eigenvalues(s)
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(min_eig > -1e-10, "covariance lost positive semidefiniteness");
        }
        for &k in &traj.ke {
            assert!(k >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn unit_circle_eigenvalue_violates_assumptions() {
        let enc = scalar_encoder(1.0, 1.0);
        let err = riccati_steady_iterate(&enc, &ChannelSpec::awgn(), 1e-11, 100).unwrap_err();
        assert!(matches!(err, KalmanError::AssumptionA2Violated { .. }));
    }

    #[test]
    fn shared_mode_with_channel_violates_assumptions() {
        // The channel pole sits at -0.1, matching the source eigenvalue.
        let ch = validate_channel(&[0.1], &[0.2]).unwrap();
        let enc = scalar_encoder(-0.1, 1.0);
        let err = check_assumption_a2(&enc, &ch).unwrap_err();
        assert!(matches!(err, KalmanError::AssumptionA2Violated { .. }));
    }

    #[test]
    fn sylvester_scalar_example() {
        // 0.5 psi - psi 2 = -1 gives psi = 2/3.
        let f = DMatrix::from_element(1, 1, 0.5);
        let a = DMatrix::from_element(1, 1, 2.0);
        let g = DVector::from_element(1, 1.0);
        let c = DVector::from_element(1, 1.0);
        let psi = sylvester_solve(&f, &a, &g, &c).unwrap();
        assert_abs_diff_eq!(psi[(0, 0)], 2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn sylvester_zero_drive_gives_zero() {
        let f = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.0, 0.2]);
        let a = DMatrix::from_element(1, 1, 1.4);
        let g = DVector::zeros(2);
        let c = DVector::from_element(1, 0.7);
        let psi = sylvester_solve(&f, &a, &g, &c).unwrap();
        assert_eq!(linalg::max_abs(&psi), 0.0);
    }

    fn steady_agreement(enc: &EncoderSpec, ch: &ChannelSpec) -> f64 {
        let it = riccati_steady_iterate(enc, ch, 1e-12, 20000).unwrap();
        let tr = riccati_steady_transform(enc, ch).unwrap();
        linalg::max_abs_diff(&it.sigma, &tr) / linalg::max_abs(&it.sigma).max(1.0)
    }

    #[test]
    fn steady_solvers_agree_memoryless() {
        let enc = scalar_encoder(2.0, 1.0);
        assert!(steady_agreement(&enc, &ChannelSpec::awgn()) < 1e-8);
    }

    #[test]
    fn steady_solvers_agree_antistable_with_memory() {
        let enc = scalar_encoder(1.25, 0.8);
        let ch = validate_channel(&[0.1], &[0.2]).unwrap();
        assert!(steady_agreement(&enc, &ch) < 1e-8);
    }

    #[test]
    fn steady_solvers_agree_split_spectrum() {
        let enc = EncoderSpec::new(
            DMatrix::from_row_slice(2, 2, &[1.4, 0.5, 0.0, 0.5]),
            DVector::from_vec(vec![1.0, -0.3]),
        )
        .unwrap();
        let ch = validate_channel(&[0.2], &[0.25]).unwrap();
        assert!(steady_agreement(&enc, &ch) < 1e-8);
    }

    #[test]
    fn steady_solvers_agree_complex_pair() {
        // Complex unstable pair of modulus 1.3 plus one stable real mode.
        let rot = 0.7_f64;
        let (s, c) = rot.sin_cos();
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                1.3 * c,
                -1.3 * s,
                0.0,
                1.3 * s,
                1.3 * c,
                0.0,
                0.0,
                0.0,
                0.4,
            ],
        );
        let enc = EncoderSpec::new(a, DVector::from_vec(vec![1.0, 0.5, 0.7])).unwrap();
        let ch = validate_channel(&[0.3, -0.1], &[0.2, 0.25]).unwrap();
        assert!(steady_agreement(&enc, &ch) < 1e-8);
        let tr = riccati_steady_transform(&enc, &ch).unwrap();
        let eigs = linalg::sym_eigenvalues(&tr);
        let max_eig = eigs.iter().cloned().fold(0.0_f64, f64::max);
        let rank = eigs.iter().filter(|&&v| v > 1e-8 * max_eig).count();
        assert_eq!(rank, 2, "steady covariance rank must match the unstable count");
    }

    #[test]
    fn smoother_gain_matches_memoryless_closed_form() {
        // Without channel memory the innovation cross-covariance collapses to
        // a^{-t-1} L_t for a scalar source.
        let a = 2.0;
        let enc = scalar_encoder(a, -3.0_f64.sqrt());
        let traj = riccati_run(&enc, &ChannelSpec::awgn(), 30);
        for t in 0..=30 {
            let direct = traj.smoother_gain(t)[0];
            let closed = a.powi(-(t as i32) - 1) * traj.l[t][0];
            assert_abs_diff_eq!(direct, closed, epsilon = 1e-10);
        }
    }

    #[test]
    fn smoother_gain_transition_product_matches_inverse_powers() {
        // For invertible A with comfortably large stable modes the two gain
        // expressions agree; the transition-product form is the one that stays
        // stable in general.
        let enc = EncoderSpec::new(
            DMatrix::from_row_slice(2, 2, &[1.08, 0.4, 0.0, 0.85]),
            DVector::from_vec(vec![1.0, 0.5]),
        )
        .unwrap();
        let ch = validate_channel(&[0.2], &[0.3]).unwrap();
        let traj = riccati_run(&enc, &ch, 60);
        let n1 = 2;
        let a_lu = nalgebra::LU::new(enc.a().clone());
        for t in 0..=60 {
            // Closed form: gamma_t = A^{-t-1} L1_t.
            let mut v = traj.l_src(t);
            for _ in 0..=t {
                v = a_lu.solve(&v).unwrap();
            }
            let gamma = traj.smoother_gain(t);
            for i in 0..n1 {
                assert_abs_diff_eq!(gamma[i], v[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn smoother_ignores_zero_innovations() {
        let enc = scalar_encoder(2.0, 1.0);
        let traj = riccati_run(&enc, &ChannelSpec::awgn(), 10);
        let mut st = SmootherState::initial(1);
        for t in 0..=10 {
            st = fixed_point_smoother_step(&st, &traj, t, 0.0);
            st = mmse_w_update(&st, &traj, t);
        }
        assert_eq!(st.xhat0[0], 0.0);
        assert!(st.mmse_w[(0, 0)] > 0.0);
    }

    #[test]
    fn mmse_matches_scalar_closed_form() {
        // Memoryless scalar case: MMSE_T = sigma_{T+1} / a^{2(T+1)}.
        let a = 2.0;
        let enc = scalar_encoder(a, 1.0);
        let horizon = 12;
        let traj = riccati_run(&enc, &ChannelSpec::awgn(), horizon);
        let mut st = SmootherState::initial(1);
        for t in 0..=horizon {
            st = mmse_w_update(&st, &traj, t);
        }
        let expected = traj.sigma[horizon + 1][(0, 0)] / a.powi(2 * (horizon as i32 + 1));
        assert_abs_diff_eq!(st.mmse_w[(0, 0)], expected, epsilon = 1e-12);
    }

    #[test]
    fn mmse_is_monotone_in_loewner_order() {
        let enc = EncoderSpec::new(
            DMatrix::from_row_slice(2, 2, &[1.05, 0.2, 0.0, 0.7]),
            DVector::from_vec(vec![1.0, 0.3]),
        )
        .unwrap();
        let ch = validate_channel(&[0.15], &[0.2]).unwrap();
        let traj = riccati_run(&enc, &ch, 40);
        let mut st = SmootherState::initial(2);
        for t in 0..=40 {
            let next = mmse_w_update(&st, &traj, t);
            let gap = &st.mmse_w - &next.mmse_w;
            let min_eig = linalg::sym_eigenvalues(&gap)
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(min_eig > -1e-10);
            st = next;
        }
    }
}
