//! Fundamental limits computed along independent routes.
//!
//! The point of this module is redundancy. The same scalar admits several
//! definitions, one per field that claims it:
//!
//! ```text
//!   rate_logdetKy   1/2 logdet K_y, Cholesky of the received covariance
//!   rate_toeplitz   1/2 logdet (I + B'B), B = Z^{-1} Gamma, small Gram form
//!   rate_innov      1/2 sum log K_{e,t}, innovation variances
//!   rate_directed   directed information via causal projections
//!   bi              1/2 sum log eig K_y, the sensitivity log-integral
//!   logdet_fim      1/2 logdet (I + Gamma' Z^{-T} Z^{-1} Gamma)
//!   logdet_mmse_inv -1/2 logdet MMSE_W, from the explicit inverse
//!   logdet_crb_inv  -1/2 sum log eig CRB, eigenvalue route
//! ```
//!
//! Each route is assembled with deliberately different arithmetic (different
//! factorizations, different associativity, different source matrices), so
//! their agreement to near machine precision is evidence about the underlying
//! identities rather than about one implementation agreeing with itself.
//!
//! # Numerical domain
//!
//! Routes that assemble `(T+1) x (T+1)` open-loop objects inherit a relative
//! error of order `eps |lambda|^{2T}` divided by what survives cancellation.
//! The small Gram identity `logdet(I + B B') = logdet(I + B'B)` avoids the
//! large matrix entirely, and all closed-loop quantities come from the
//! error-coordinate engine whose entries stay bounded at any scale. Finite
//! horizon chains are exercised with unstable moduli near `1.05` at `T = 50`
//! where every route holds together at `1e-9`; steady-state checks run at the
//! spectral level and have no horizon restriction.

use crate::channel::{channel_state_space, toeplitz_bundle, ChannelSpec};
use crate::coding::{CodingError, EncoderSpec};
use crate::kalman::{
    riccati_run, riccati_steady_iterate, riccati_steady_transform, KalmanError, RiccatiTrajectory,
};
use crate::linalg;
use crate::properties::ClosedLoopMaps;
use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LimitsError {
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Coding(#[from] CodingError),
    #[error("conditional variance is degenerate at step {t}")]
    SingularConditional { t: usize },
    #[error("numerical failure: {detail}")]
    Numerical { detail: String },
}

/// Evaluates `d + c'(zI - a)^{-1} b` at a complex point.
pub fn freq_response(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    d: f64,
    z: Complex<f64>,
) -> Complex<f64> {
    let n = a.nrows();
    let d_c = Complex::new(d, 0.0);
    if n == 0 {
        return d_c;
    }
    let mut zi = a.map(|x| Complex::new(-x, 0.0));
    for i in 0..n {
        zi[(i, i)] += z;
    }
    let rhs = b.map(|x| Complex::new(x, 0.0));
    match nalgebra::LU::new(zi).solve(&rhs) {
        Some(sol) => {
            let mut acc = d_c;
            for i in 0..n {
                acc += Complex::new(c[i], 0.0) * sol[i];
            }
            acc
        }
        None => Complex::new(f64::NAN, 0.0),
    }
}

/// Mutual information between the message and the received sequence, in nats,
/// accumulated over the horizon.
///
/// Computed as `1/2 logdet(I + B'B)` with the tall factor `B = Z^{-1} Gamma`,
/// a Gram matrix of source dimension. The `(T+1)`-dimensional determinant
/// `logdet(I + B B')` is the same number but cannot be formed in floating
/// point once `|lambda|^T` outgrows the precision.
pub fn mutual_information_toeplitz(
    encoder: &EncoderSpec,
    channel: &ChannelSpec,
    horizon: usize,
) -> Result<f64, LimitsError> {
    let bundle = toeplitz_bundle(channel, horizon);
    let gamma = encoder.observability_matrix(horizon + 1);
    let b = &bundle.zinv * gamma;
    let n1 = encoder.dim();
    let gram = DMatrix::identity(n1, n1) + b.transpose() * &b;
    linalg::cholesky_logdet(&gram)
        .map(|v| 0.5 * v)
        .map_err(|_| LimitsError::Numerical {
            detail: "information Gram matrix lost positive definiteness".to_string(),
        })
}

/// Directed information from the input sequence to the received sequence over
/// the closed loop, in nats.
///
/// Each step adds `1/2 log` of the ratio between the variance of `y_t` given
/// `y^{t-1}` and given `(u^t, y^{t-1})`. Conditioning is done by orthonormal
/// projection onto growing subspaces of the underlying Gaussian coordinates,
/// never by inverting a joint covariance: the joint covariance of `(u^t,
/// y^{t-1})` is exactly singular whenever feedback reconstructs inputs from
/// outputs, which is the very regime of interest.
pub fn directed_information(maps: &ClosedLoopMaps, horizon: usize) -> Result<f64, LimitsError> {
    let t1 = horizon + 1;
    assert!(
        maps.mu.nrows() >= t1 && maps.my.nrows() >= t1,
        "maps cover a shorter horizon than requested"
    );

    fn residual(row: &DVector<f64>, basis: &[DVector<f64>]) -> DVector<f64> {
        let mut r = row.clone();
        // One reorthogonalization pass keeps the basis orthonormal to machine
        // precision even for nearly dependent rows.
        for _ in 0..2 {
            for q in basis {
                let proj = q.dot(&r);
                r -= q * proj;
            }
        }
        r
    }

    fn push(row: &DVector<f64>, basis: &mut Vec<DVector<f64>>) {
        let r = residual(row, basis);
        let n = r.norm();
        if n > 1e-10 * row.norm().max(1e-300) {
            basis.push(r / n);
        }
    }

    let mut joint: Vec<DVector<f64>> = Vec::new();
    let mut marginal: Vec<DVector<f64>> = Vec::new();
    let mut di = 0.0;
    for t in 0..t1 {
        let u_row = maps.mu.row(t).transpose();
        push(&u_row, &mut joint);
        let y_row = maps.my.row(t).transpose();
        let var_joint = residual(&y_row, &joint).norm_squared();
        let var_marginal = residual(&y_row, &marginal).norm_squared();
        if !(var_joint > 1e-12 && var_joint.is_finite() && var_marginal.is_finite()) {
            return Err(LimitsError::SingularConditional { t });
        }
        di += 0.5 * (var_marginal.ln() - var_joint.ln());
        push(&y_row, &mut joint);
        push(&y_row, &mut marginal);
    }
    Ok(di)
}

/// Accumulated innovation information `1/2 sum_t log K_{e,t}` over the stored
/// horizon, in nats.
pub fn innovations_rate(traj: &RiccatiTrajectory, horizon: usize) -> f64 {
    assert!(horizon < traj.ke.len(), "horizon exceeds the trajectory");
    0.5 * traj.ke[..=horizon].iter().map(|k| k.ln()).sum::<f64>()
}

/// Sensitivity log-integral `1/2 sum log eig(K_y)` from an explicit received
/// covariance.
pub fn bode_integral_from_ky(k_y: &DMatrix<f64>) -> Result<f64, LimitsError> {
    let eigs = linalg::sym_eigenvalues(k_y);
    let mut acc = 0.0;
    for v in eigs.iter() {
        if !(*v > 0.0) {
            return Err(LimitsError::Numerical {
                detail: format!("received covariance has nonpositive eigenvalue {v:.3e}"),
            });
        }
        acc += v.ln();
    }
    Ok(0.5 * acc)
}

/// Sensitivity log-integral read off the innovation variances of a
/// trajectory. Same value as [`bode_integral_from_ky`] on the corresponding
/// covariance, produced without ever forming it.
pub fn bode_integral_from_traj(traj: &RiccatiTrajectory) -> f64 {
    innovations_rate(traj, traj.horizon)
}

/// Determinant identity behind the finite-horizon sensitivity integral: the
/// closed-loop output map `S = (I - Z^{-1} G)^{-1}` is unit lower triangular,
/// so `1/2 sum log eig(S S')` vanishes for every strictly causal generator.
/// Returns the computed sum, which measures pure round-off.
pub fn sensitivity_sum_check(
    generator: &crate::coding::FeedbackGenerator,
    channel: &ChannelSpec,
    horizon: usize,
) -> Result<f64, LimitsError> {
    let t1 = horizon + 1;
    let bundle = toeplitz_bundle(channel, horizon);
    let closed = DMatrix::identity(t1, t1) - &bundle.zinv * generator.matrix();
    let s = linalg::solve_unit_lower(&closed, &DMatrix::identity(t1, t1));
    let gram = &s * s.transpose();
    let eigs = linalg::sym_eigenvalues(&gram);
    let mut acc = 0.0;
    for v in eigs.iter() {
        if !(*v > 0.0) {
            return Err(LimitsError::Numerical {
                detail: "closed-loop sensitivity Gram lost positive definiteness".to_string(),
            });
        }
        acc += v.ln();
    }
    Ok(0.5 * acc)
}

/// Estimation-side log-determinants and the message error covariance.
#[derive(Clone, Debug)]
pub struct FimReport {
    pub logdet_fim: f64,
    pub logdet_crb_inv: f64,
    pub logdet_mmse_inv: f64,
    pub mmse_w: DMatrix<f64>,
}

/// Fisher information, Cramer-Rao bound, and MMSE of the message after a
/// closed-loop transmission over the horizon.
///
/// The three log-determinants are the same number reached by different
/// arithmetic: `logdet_fim` factors the information matrix itself,
/// `logdet_mmse_inv` factors the explicitly inverted matrix, and
/// `logdet_crb_inv` sums eigenvalue logs of the bound. The error covariance
/// equals the bound here because the whole loop is linear and Gaussian.
pub fn fim_crb_mmse(
    encoder: &EncoderSpec,
    channel: &ChannelSpec,
    horizon: usize,
) -> Result<FimReport, LimitsError> {
    let bundle = toeplitz_bundle(channel, horizon);
    let gamma = encoder.observability_matrix(horizon + 1);
    let n1 = encoder.dim();
    let weights = bundle.zinv.transpose() * &bundle.zinv;
    let fim = DMatrix::identity(n1, n1) + gamma.transpose() * (&weights * &gamma);
    let logdet_fim = 0.5
        * linalg::cholesky_logdet(&fim).map_err(|_| LimitsError::Numerical {
            detail: "Fisher information matrix lost positive definiteness".to_string(),
        })?;
    let chol = nalgebra::Cholesky::new(linalg::symmetrize(&fim)).ok_or_else(|| {
        LimitsError::Numerical {
            detail: "Fisher information matrix lost positive definiteness".to_string(),
        }
    })?;
    let mmse_w = linalg::symmetrize(&chol.inverse());
    let logdet_mmse_inv = -0.5
        * linalg::cholesky_logdet(&mmse_w).map_err(|_| LimitsError::Numerical {
            detail: "message error covariance lost positive definiteness".to_string(),
        })?;
    let eigs = linalg::sym_eigenvalues(&mmse_w);
    let mut acc = 0.0;
    for v in eigs.iter() {
        if !(*v > 0.0) {
            return Err(LimitsError::Numerical {
                detail: "message error covariance has a nonpositive eigenvalue".to_string(),
            });
        }
        acc += v.ln();
    }
    Ok(FimReport {
        logdet_fim,
        logdet_crb_inv: -0.5 * acc,
        logdet_mmse_inv,
        mmse_w,
    })
}

/// Average input power along two routes.
#[derive(Clone, Debug)]
pub struct PowerReport {
    /// Mean of `Dbb' Sigma_t Dbb` over the horizon.
    pub analytic: f64,
    /// Mean of the per-step MMSE increments `v_t' FIM_{t-1}^{-1} v_t` with
    /// `v_t = A'^t C`, accumulated through Cholesky updates of the growing
    /// information matrix.
    pub pmmse: f64,
}

fn pmmse_terms(
    encoder: &EncoderSpec,
    zinv_impulse: &[f64],
    horizon: usize,
) -> Result<Vec<f64>, LimitsError> {
    let n1 = encoder.dim();
    let mut fim = DMatrix::<f64>::identity(n1, n1);
    let mut v = encoder.c().clone();
    let mut vs: Vec<DVector<f64>> = Vec::with_capacity(horizon + 1);
    let mut terms = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        vs.push(v.clone());
        let chol =
            nalgebra::Cholesky::new(linalg::symmetrize(&fim)).ok_or_else(|| LimitsError::Numerical {
                detail: "information recursion lost positive definiteness".to_string(),
            })?;
        let z = linalg::solve_lower_vec(&chol.l(), &v);
        terms.push(z.norm_squared());
        // Row t of Z^{-1} Gamma, accumulated from the impulse response. This
        // is a plain positive accumulation; nothing cancels.
        let mut b = DVector::<f64>::zeros(n1);
        for (k, g) in vs.iter().enumerate() {
            b += g * zinv_impulse[t - k];
        }
        fim += &b * b.transpose();
        v = encoder.a().transpose() * v;
    }
    Ok(terms)
}

/// Average transmit power over the trajectory's horizon, along the filter
/// route and the estimation route. The two agree because the optimal input is
/// exactly the innovation of the raw transmission.
pub fn average_power(
    traj: &RiccatiTrajectory,
    encoder: &EncoderSpec,
) -> Result<PowerReport, LimitsError> {
    let t1 = traj.horizon + 1;
    let mut analytic = 0.0;
    for t in 0..t1 {
        analytic += (&traj.sigma[t] * &traj.aug.dbb).dot(&traj.aug.dbb);
    }
    analytic /= t1 as f64;
    let terms = pmmse_terms(encoder, &traj.zinv_impulse, traj.horizon)?;
    let pmmse = terms.iter().sum::<f64>() / t1 as f64;
    Ok(PowerReport { analytic, pmmse })
}

/// All limit quantities of one scheme, with the cross-route residual matrix.
///
/// Finite-horizon reports fill every field: the `rate_*` fields are per
/// channel use, `bi` and the `logdet_*` fields are totals over the horizon,
/// and the residual matrix compares all eight members after normalizing each
/// to a per-use value. Steady-state reports have no horizon: the five chain
/// members are per-use limits, the finite-horizon-only fields are absent, and
/// `allpass_flatness` reports how far the noise-to-innovation response is
/// from the constant it must equal.
#[derive(Clone, Debug, Serialize)]
pub struct LimitsReport {
    pub mode: String,
    pub horizon: Option<usize>,
    pub units: String,
    #[serde(rename = "rate_logdetKy")]
    pub rate_logdet_ky: f64,
    pub rate_toeplitz: f64,
    pub rate_innov: f64,
    pub rate_directed: f64,
    pub power_analytic: f64,
    pub pmmse_trace: f64,
    pub bi: f64,
    pub logdet_fim: Option<f64>,
    pub logdet_mmse_inv: Option<f64>,
    pub logdet_crb_inv: Option<f64>,
    pub di: Option<f64>,
    pub allpass_flatness: Option<f64>,
    pub chain_labels: Vec<String>,
    pub residual_matrix: Vec<Vec<f64>>,
}

fn residuals(values: &[f64]) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|a| values.iter().map(|b| (a - b).abs()).collect())
        .collect()
}

/// Computes every finite-horizon limit of the optimal scheme and
/// cross-checks the routes against one another.
pub fn limits_report(
    encoder: &EncoderSpec,
    channel: &ChannelSpec,
    horizon: usize,
) -> Result<LimitsReport, LimitsError> {
    let t1f = (horizon + 1) as f64;
    let traj = riccati_run(encoder, channel, horizon);
    let maps = ClosedLoopMaps::from_trajectory(&traj, encoder, channel);
    let k_y = maps.k_y();

    let rate_logdet_ky = 0.5
        * linalg::cholesky_logdet(&k_y).map_err(|_| LimitsError::Numerical {
            detail: "received covariance lost positive definiteness".to_string(),
        })?
        / t1f;
    let bi_total = bode_integral_from_ky(&k_y)?;
    let rate_toeplitz = mutual_information_toeplitz(encoder, channel, horizon)? / t1f;
    let rate_innov = innovations_rate(&traj, horizon) / t1f;
    let rate_directed = directed_information(&maps, horizon)? / t1f;
    let fim = fim_crb_mmse(encoder, channel, horizon)?;
    let power = average_power(&traj, encoder)?;

    let chain = [
        ("rate_logdetKy", rate_logdet_ky),
        ("rate_toeplitz", rate_toeplitz),
        ("rate_innov", rate_innov),
        ("rate_directed", rate_directed),
        ("bi", bi_total / t1f),
        ("logdet_fim", fim.logdet_fim / t1f),
        ("logdet_mmse_inv", fim.logdet_mmse_inv / t1f),
        ("logdet_crb_inv", fim.logdet_crb_inv / t1f),
    ];
    Ok(LimitsReport {
        mode: "finite".to_string(),
        horizon: Some(horizon),
        units: "nats".to_string(),
        rate_logdet_ky,
        rate_toeplitz,
        rate_innov,
        rate_directed,
        power_analytic: power.analytic,
        pmmse_trace: power.pmmse,
        bi: bi_total,
        logdet_fim: Some(fim.logdet_fim),
        logdet_mmse_inv: Some(fim.logdet_mmse_inv),
        logdet_crb_inv: Some(fim.logdet_crb_inv),
        di: Some(encoder.degree_of_instability()),
        allpass_flatness: None,
        chain_labels: chain.iter().map(|(n, _)| n.to_string()).collect(),
        residual_matrix: residuals(&chain.map(|(_, v)| v)),
    })
}

/// Cumulative per-use rate and power after each step, for convergence plots.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub t: usize,
    pub rate_innov: f64,
    pub power_analytic: f64,
}

pub fn convergence_rows(traj: &RiccatiTrajectory) -> Vec<ConvergenceRow> {
    let mut rate_acc = 0.0;
    let mut power_acc = 0.0;
    let mut rows = Vec::with_capacity(traj.horizon + 1);
    for t in 0..=traj.horizon {
        rate_acc += 0.5 * traj.ke[t].ln();
        power_acc += (&traj.sigma[t] * &traj.aug.dbb).dot(&traj.aug.dbb);
        rows.push(ConvergenceRow {
            t,
            rate_innov: rate_acc / (t + 1) as f64,
            power_analytic: power_acc / (t + 1) as f64,
        });
    }
    rows
}

const FREQ_GRID: usize = 512;

fn trapezoid_mean(f: impl Fn(f64) -> f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..FREQ_GRID {
        let theta = std::f64::consts::PI * i as f64 / (FREQ_GRID - 1) as f64;
        let w = if i == 0 || i == FREQ_GRID - 1 { 0.5 } else { 1.0 };
        num += w * f(theta);
        den += w;
    }
    num / den
}

/// Smallest unstable eigenvalue modulus, if any.
fn min_unstable_modulus(encoder: &EncoderSpec) -> Option<f64> {
    encoder
        .eigenvalues()
        .iter()
        .map(|l| l.norm())
        .filter(|&n| n > 1.0)
        .fold(None, |acc, n| Some(acc.map_or(n, |a: f64| a.min(n))))
}

/// Steady-state limits of the scheme: per-use rates along five routes, the
/// limiting power along two, and the all-pass flatness certificate.
///
/// The five rate members of the residual matrix come from genuinely
/// independent machinery: a frequency-domain sensitivity integral, the grid
/// mean of the noise-to-innovation response, the fixed-point Riccati solver,
/// the eigenvalue sum of the source, and the transform-based Riccati solver.
pub fn steady_report(
    encoder: &EncoderSpec,
    channel: &ChannelSpec,
) -> Result<LimitsReport, LimitsError> {
    let sol = riccati_steady_iterate(encoder, channel, 1e-12, 50000)?;
    let sigma_tr = riccati_steady_transform(encoder, channel)?;
    let aug = crate::kalman::AugmentedSystem::new(encoder, channel);
    let ke_tr = (&sigma_tr * &aug.cbb).dot(&aug.cbb) + 1.0;

    let rate_innov = 0.5 * sol.ke.ln();
    let bi = 0.5 * ke_tr.ln();
    let rate_directed: f64 = encoder
        .eigenvalues()
        .iter()
        .map(|l| l.norm())
        .filter(|&n| n > 1.0)
        .map(|n| n.ln())
        .sum();
    let di = rate_directed.exp();

    // Frequency-domain routes. The feedback filter seen from the received
    // sequence has the steady predictor gains baked in.
    let ss = channel_state_space(channel);
    let n1 = encoder.dim();
    let m = channel.order();
    let l1 = sol.l.rows(0, n1).into_owned();
    let l2 = sol.l.rows(n1, m).into_owned();
    let dim = n1 + m;
    let mut ctl_a = DMatrix::<f64>::zeros(dim, dim);
    ctl_a.view_mut((0, 0), (n1, n1)).copy_from(encoder.a());
    if m > 0 {
        ctl_a
            .view_mut((0, n1), (n1, m))
            .copy_from(&(-&l1 * ss.c.transpose()));
        ctl_a
            .view_mut((n1, n1), (m, m))
            .copy_from(&(&ss.a - &l2 * ss.c.transpose()));
    }
    let mut ctl_b = DVector::<f64>::zeros(dim);
    ctl_b.rows_mut(0, n1).copy_from(&l1);
    if m > 0 {
        ctl_b.rows_mut(n1, m).copy_from(&l2);
    }
    let mut ctl_c = DVector::<f64>::zeros(dim);
    ctl_c.rows_mut(0, n1).copy_from(&(-encoder.c()));

    let acl = &aug.abb - &sol.l * aug.cbb.transpose();
    let on_circle = |theta: f64| Complex::new(theta.cos(), theta.sin());
    let sens_log = |theta: f64| {
        let z = on_circle(theta);
        let g = freq_response(&ctl_a, &ctl_b, &ctl_c, 0.0, z);
        let zinv = freq_response(&ss.a, &ss.b, &ss.c, ss.d, z);
        let s = Complex::new(1.0, 0.0) / (Complex::new(1.0, 0.0) - zinv * g);
        s.norm().ln()
    };
    let tne_mag = |theta: f64| {
        let z = on_circle(theta);
        let t = Complex::new(1.0, 0.0) - freq_response(&acl, &sol.l, &aug.cbb, 0.0, z);
        t.norm()
    };
    let rate_logdet_ky = trapezoid_mean(sens_log);
    let rate_toeplitz = trapezoid_mean(|th| tne_mag(th).ln());
    let mut flatness = 0.0_f64;
    for i in 0..FREQ_GRID {
        let theta = std::f64::consts::PI * i as f64 / (FREQ_GRID - 1) as f64;
        flatness = flatness.max((tne_mag(theta) - di).abs());
    }

    let power_analytic = (&sol.sigma * &aug.dbb).dot(&aug.dbb);
    // The estimation-route power term converges like |lambda|^{-2t} while its
    // floating-point corruption grows like eps |lambda|^{2t}; balancing the
    // two puts the best readout near |lambda|^{2t} = 1/sqrt(eps).
    let t_run = match min_unstable_modulus(encoder) {
        Some(lam) => ((9.02 / lam.ln()).ceil() as usize + 20).clamp(60, 6000),
        None => 200,
    };
    let terms = pmmse_terms(encoder, &channel_state_space(channel).impulse(t_run + 1), t_run)?;
    let pmmse_trace = *terms.last().expect("at least one term");

    let chain = [
        ("rate_logdetKy", rate_logdet_ky),
        ("rate_toeplitz", rate_toeplitz),
        ("rate_innov", rate_innov),
        ("rate_directed", rate_directed),
        ("bi", bi),
    ];
    Ok(LimitsReport {
        mode: "steady".to_string(),
        horizon: None,
        units: "nats".to_string(),
        rate_logdet_ky,
        rate_toeplitz,
        rate_innov,
        rate_directed,
        power_analytic,
        pmmse_trace,
        bi,
        logdet_fim: None,
        logdet_mmse_inv: None,
        logdet_crb_inv: None,
        di: Some(di),
        allpass_flatness: Some(flatness),
        chain_labels: chain.iter().map(|(n, _)| n.to_string()).collect(),
        residual_matrix: residuals(&chain.map(|(_, v)| v)),
    })
}

/// Search configuration for the capacity optimizer.
#[derive(Clone, Debug)]
pub struct SearchConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            restarts: 8,
            max_iters: 400,
            seed: 0x5eed_cafe,
            init_scale: 0.7,
        }
    }
}

/// Result of a capacity or power search.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub encoder: EncoderSpec,
    /// Per-use information rate of the best feasible scheme, in nats.
    pub rate: f64,
    pub power: f64,
    /// Numerical rank of the raw-transmission covariance over the horizon.
    pub kr_rank: usize,
    /// Rank the limiting theory predicts for an optimal scheme: channel order
    /// plus one.
    pub kr_rank_bound: usize,
    pub rank_within_bound: bool,
    pub evaluations: usize,
    pub feasible: bool,
}

fn kr_rank(encoder: &EncoderSpec, horizon: usize) -> usize {
    let gamma = encoder.observability_matrix(horizon + 1);
    let k_r = &gamma * gamma.transpose();
    let eigs = linalg::sym_eigenvalues(&k_r);
    let max_eig = eigs.iter().cloned().fold(0.0_f64, f64::max);
    if max_eig <= 0.0 {
        return 0;
    }
    eigs.iter().filter(|&&v| v > 1e-8 * max_eig).count()
}

fn zero_outcome(n: usize, channel: &ChannelSpec) -> SearchOutcome {
    SearchOutcome {
        encoder: EncoderSpec::new_unchecked(DMatrix::zeros(n + 1, n + 1), DVector::zeros(n + 1)),
        rate: 0.0,
        power: 0.0,
        kr_rank: 0,
        kr_rank_bound: channel.order() + 1,
        rank_within_bound: true,
        evaluations: 0,
        feasible: true,
    }
}

fn nelder_mead(
    f: &mut dyn FnMut(&DVector<f64>) -> f64,
    x0: &DVector<f64>,
    scale: f64,
    max_iters: usize,
) {
    let n = x0.len();
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.clone(), f(x0)));
    for i in 0..n {
        let mut p = x0.clone();
        p[i] += scale;
        let fp = f(&p);
        simplex.push((p, fp));
    }
    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() < 1e-12 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let mut centroid = DVector::<f64>::zeros(n);
        for v in simplex.iter().take(n) {
            centroid += &v.0;
        }
        centroid /= n as f64;
        let reflected = &centroid * 2.0 - &simplex[n].0;
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = &centroid * 3.0 - &simplex[n].0 * 2.0;
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let contracted = (&centroid + &simplex[n].0) * 0.5;
            let fc = f(&contracted);
            if fc < simplex[n].1 {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    v.0 = (&v.0 + &best) * 0.5;
                    v.1 = f(&v.0);
                }
            }
        }
    }
}

struct CandidateEval {
    encoder: EncoderSpec,
    rate: f64,
    power: f64,
}

fn eval_params(
    params: &DVector<f64>,
    channel: &ChannelSpec,
    horizon: usize,
    n: usize,
) -> Option<CandidateEval> {
    let n1 = n + 1;
    if params.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut a = DMatrix::<f64>::zeros(n1, n1);
    for j in 0..n1 {
        a[(0, j)] = params[j];
    }
    for i in 1..n1 {
        a[(i, i - 1)] = 1.0;
    }
    let c = DVector::from_fn(n1, |i, _| params[n1 + i]);
    let encoder = EncoderSpec::new(a, c).ok()?;
    let traj = riccati_run(&encoder, channel, horizon);
    let power = average_power(&traj, &encoder).ok()?.analytic;
    let rate = mutual_information_toeplitz(&encoder, channel, horizon).ok()? / (horizon + 1) as f64;
    if !(rate.is_finite() && power.is_finite()) {
        return None;
    }
    Some(CandidateEval {
        encoder,
        rate,
        power,
    })
}

fn run_search(
    channel: &ChannelSpec,
    horizon: usize,
    n: usize,
    cfg: &SearchConfig,
    mut score: impl FnMut(&CandidateEval) -> f64,
    mut is_feasible: impl FnMut(&CandidateEval) -> bool,
    prefer: impl Fn(&CandidateEval, &CandidateEval) -> bool,
) -> (Option<CandidateEval>, usize) {
    use rand::{Rng, SeedableRng};
    let dims = 2 * (n + 1);
    let mut best: Option<CandidateEval> = None;
    let mut evaluations = 0usize;
    for restart in 0..cfg.restarts {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(restart as u64);
        let x0 = DVector::from_fn(dims, |_, _| rng.random_range(-cfg.init_scale..cfg.init_scale));
        let mut objective = |p: &DVector<f64>| -> f64 {
            evaluations += 1;
            match eval_params(p, channel, horizon, n) {
                Some(ev) => {
                    let s = score(&ev);
                    if is_feasible(&ev) {
                        let better = match &best {
                            Some(b) => prefer(&ev, b),
                            None => true,
                        };
                        if better {
                            best = Some(ev);
                        }
                    }
                    s
                }
                None => f64::INFINITY,
            }
        };
        nelder_mead(&mut objective, &x0, cfg.init_scale, cfg.max_iters);
    }
    (best, evaluations)
}

/// Searches over sources of fixed dimension for the highest-rate scheme whose
/// average power stays within the budget.
///
/// The optimizer is a restarted Nelder-Mead over the companion coefficients
/// of `A` and the entries of `C`, with the power constraint handled by an
/// exterior penalty; the best feasible candidate ever evaluated is kept, not
/// merely the final simplex. A nonpositive budget yields the zero scheme.
pub fn capacity_search(
    channel: &ChannelSpec,
    horizon: usize,
    n: usize,
    power_budget: f64,
    cfg: &SearchConfig,
) -> Result<SearchOutcome, LimitsError> {
    if power_budget <= 0.0 {
        return Ok(zero_outcome(n, channel));
    }
    let feas_tol = 1e-9 * power_budget.max(1.0);
    let (best, evaluations) = run_search(
        channel,
        horizon,
        n,
        cfg,
        |ev| {
            let excess = (ev.power - power_budget).max(0.0);
            -ev.rate + 50.0 * excess + 500.0 * excess * excess
        },
        |ev| ev.power <= power_budget + feas_tol,
        |a, b| a.rate > b.rate,
    );
    let outcome = match best {
        Some(ev) => {
            let rank = kr_rank(&ev.encoder, horizon);
            SearchOutcome {
                rate: ev.rate,
                power: ev.power,
                kr_rank: rank,
                kr_rank_bound: channel.order() + 1,
                rank_within_bound: rank <= channel.order() + 1,
                encoder: ev.encoder,
                evaluations,
                feasible: true,
            }
        }
        None => {
            let mut z = zero_outcome(n, channel);
            z.evaluations = evaluations;
            z
        }
    };
    Ok(outcome)
}

/// Dual search: the lowest-power scheme meeting a rate target, in nats per
/// use. Returns an infeasible zero outcome when no candidate reaches the
/// target.
pub fn power_search(
    channel: &ChannelSpec,
    horizon: usize,
    n: usize,
    rate_target: f64,
    cfg: &SearchConfig,
) -> Result<SearchOutcome, LimitsError> {
    if rate_target <= 0.0 {
        return Ok(zero_outcome(n, channel));
    }
    let (best, evaluations) = run_search(
        channel,
        horizon,
        n,
        cfg,
        |ev| {
            let short = (rate_target - ev.rate).max(0.0);
            ev.power + 50.0 * short + 500.0 * short * short
        },
        |ev| ev.rate >= rate_target - 1e-9,
        |a, b| a.power < b.power,
    );
    let outcome = match best {
        Some(ev) => {
            let rank = kr_rank(&ev.encoder, horizon);
            SearchOutcome {
                rate: ev.rate,
                power: ev.power,
                kr_rank: rank,
                kr_rank_bound: channel.order() + 1,
                rank_within_bound: rank <= channel.order() + 1,
                encoder: ev.encoder,
                evaluations,
                feasible: true,
            }
        }
        None => {
            let mut z = zero_outcome(n, channel);
            z.evaluations = evaluations;
            z.feasible = false;
            z
        }
    };
    Ok(outcome)
}
