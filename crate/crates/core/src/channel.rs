//! Gaussian channels with memory.
//!
//! A channel of order `m` is described by a rational noise-shaping filter
//!
//! ```text
//!            z^m + f_{m-1} z^{m-1} + ... + f_0      Z_z(z)
//!   Z(z)  =  ---------------------------------  =  --------
//!            z^m + p_{m-1} z^{m-1} + ... + p_0      Z_p(z)
//! ```
//!
//! with `p = f + g`, normalized so that `Z(inf) = 1`. The channel adds
//! unit-variance white Gaussian noise shaped by `Z`, so the received signal is
//! `y = u + Z N` in operator form. Admissible channels are stable and minimum
//! phase: every root of `Z_z` and of `Z_p` must lie strictly inside the unit
//! circle.
//!
//! # State-space form
//!
//! The inverse filter `Z^{-1}` has the observable canonical realization
//! `(F, G, H', 1)` where `F` carries `-f` in its first column with ones on the
//! superdiagonal, `G = g`, and `H` is the first standard basis vector. All
//! feedback-coding machinery in this crate works with this realization: the
//! channel output then satisfies
//!
//! ```text
//!   s_{t+1} = F s_t + G u_t,      y_t = H' s_t + u_t + N_t .
//! ```
//!
//! # Finite-horizon operators
//!
//! Over a horizon `T` the filters act as lower triangular Toeplitz matrices
//! with unit diagonal. [`toeplitz_bundle`] materializes `Z`, `Z^{-1}`, and the
//! banded polynomial factors `Z_z`, `Z_p`, which satisfy `Z_p Z = Z_z` and
//! `Z Z^{-1} = I` exactly up to round-off.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Margin used when testing roots against the unit circle.
const ROOT_MARGIN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error(
        "numerator root {re:+.6}{im:+.6}i has modulus {modulus:.9}, so the channel is not minimum phase"
    )]
    NotMinimumPhase { re: f64, im: f64, modulus: f64 },
    #[error(
        "denominator root {re:+.6}{im:+.6}i has modulus {modulus:.9}, so the channel is not stable"
    )]
    NotStable { re: f64, im: f64, modulus: f64 },
    #[error("coefficient vectors have lengths {f_len} and {g_len} but must match")]
    MismatchedCoefficients { f_len: usize, g_len: usize },
    #[error("realization with zero direct gain cannot be inverted")]
    NotInvertible,
    #[error("input length {got} does not match noise length {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// Validated channel description. `f` and `g` hold the coefficients
/// `f_{m-1} .. f_0` and `g_{m-1} .. g_0` in descending powers of `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpec {
    m: usize,
    f: Vec<f64>,
    g: Vec<f64>,
    noise_variance: f64,
}

impl ChannelSpec {
    /// Memoryless channel, `Z(z) = 1`.
    pub fn awgn() -> Self {
        ChannelSpec {
            m: 0,
            f: Vec::new(),
            g: Vec::new(),
            noise_variance: 1.0,
        }
    }

    pub fn order(&self) -> usize {
        self.m
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    /// Denominator coefficients `p = f + g`.
    pub fn p(&self) -> Vec<f64> {
        self.f.iter().zip(&self.g).map(|(a, b)| a + b).collect()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }
}

/// Discrete-time state-space quadruple `(A, B, C', D)` realizing
/// `D + C' (zI - A)^{-1} B` with a scalar input and output.
#[derive(Clone, Debug)]
pub struct StateSpaceRealization {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl StateSpaceRealization {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Evaluates the transfer function at a complex point.
    pub fn transfer_at(&self, z: nalgebra::Complex<f64>) -> nalgebra::Complex<f64> {
        crate::limits::freq_response(&self.a, &self.b, &self.c, self.d, z)
    }

    /// First `len` samples of the impulse response: `D, C'B, C'AB, ...`.
    pub fn impulse(&self, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        out.push(self.d);
        let mut x = self.b.clone();
        for _ in 1..len {
            out.push(self.c.dot(&x));
            x = &self.a * x;
        }
        out
    }
}

/// Lower triangular Toeplitz matrices of the channel filters over a fixed
/// horizon, all `(T+1) x (T+1)` with unit diagonal.
#[derive(Clone, Debug)]
pub struct ToeplitzBundle {
    pub z: DMatrix<f64>,
    pub zinv: DMatrix<f64>,
    pub zz: DMatrix<f64>,
    pub zp: DMatrix<f64>,
    pub horizon: usize,
}

/// Roots of the monic polynomial `z^m + c_{m-1} z^{m-1} + ... + c_0` via the
/// companion matrix.
fn monic_roots(coeffs: &[f64]) -> Vec<nalgebra::Complex<f64>> {
    let m = coeffs.len();
    if m == 0 {
        return Vec::new();
    }
    let mut comp = DMatrix::<f64>::zeros(m, m);
    for (j, c) in coeffs.iter().enumerate() {
        comp[(0, j)] = -c;
    }
    for i in 1..m {
        comp[(i, i - 1)] = 1.0;
    }
    comp.complex_eigenvalues().iter().cloned().collect()
}

fn check_roots_inside(
    coeffs: &[f64],
    make_err: impl Fn(f64, f64, f64) -> ChannelError,
) -> Result<(), ChannelError> {
    let mut worst: Option<nalgebra::Complex<f64>> = None;
    for root in monic_roots(coeffs) {
        let better = match worst {
            Some(w) => root.norm() > w.norm(),
            None => true,
        };
        if better {
            worst = Some(root);
        }
    }
    if let Some(w) = worst {
        if w.norm() > 1.0 - ROOT_MARGIN {
            return Err(make_err(w.re, w.im, w.norm()));
        }
    }
    Ok(())
}

/// Checks stability and minimum phase of the filter described by `f` and `g`
/// and returns the validated channel.
///
/// The numerator roots (zeros of `Z`) come from `f`, the denominator roots
/// (poles of `Z`) from `f + g`. A root of modulus greater than `1 - 1e-9` is
/// rejected, and the error names the offending root.
pub fn validate_channel(f: &[f64], g: &[f64]) -> Result<ChannelSpec, ChannelError> {
    if f.len() != g.len() {
        return Err(ChannelError::MismatchedCoefficients {
            f_len: f.len(),
            g_len: g.len(),
        });
    }
    check_roots_inside(f, |re, im, modulus| ChannelError::NotMinimumPhase {
        re,
        im,
        modulus,
    })?;
    let p: Vec<f64> = f.iter().zip(g).map(|(a, b)| a + b).collect();
    check_roots_inside(&p, |re, im, modulus| ChannelError::NotStable { re, im, modulus })?;
    Ok(ChannelSpec {
        m: f.len(),
        f: f.to_vec(),
        g: g.to_vec(),
        noise_variance: 1.0,
    })
}

/// Observable canonical realization `(F, G, H', 1)` of the inverse filter
/// `Z^{-1}(z) = Z_p(z) / Z_z(z)`.
///
/// `F` has `-f_{m-1} .. -f_0` down its first column and ones on the
/// superdiagonal, `G = (g_{m-1} .. g_0)'`, and `H` is the first standard
/// basis vector. The pair `(F, H')` is observable by construction.
pub fn channel_state_space(spec: &ChannelSpec) -> StateSpaceRealization {
    let m = spec.m;
    let mut f_mat = DMatrix::<f64>::zeros(m, m);
    for (i, coef) in spec.f.iter().enumerate() {
        f_mat[(i, 0)] = -coef;
    }
    for i in 0..m.saturating_sub(1) {
        f_mat[(i, i + 1)] = 1.0;
    }
    let g_vec = DVector::from_vec(spec.g.clone());
    let mut h = DVector::zeros(m);
    if m > 0 {
        h[0] = 1.0;
    }
    StateSpaceRealization {
        a: f_mat,
        b: g_vec,
        c: h,
        d: 1.0,
    }
}

/// Realization of the inverse system `1 / (D + C'(zI - A)^{-1} B)`.
///
/// Requires a nonzero direct gain. For `D = 1` the result is
/// `(A - B C', -B, C', 1)`, which realizes the reciprocal transfer function.
pub fn invert_realization(
    ss: &StateSpaceRealization,
) -> Result<StateSpaceRealization, ChannelError> {
    if ss.d == 0.0 {
        return Err(ChannelError::NotInvertible);
    }
    let a = &ss.a - &ss.b * ss.c.transpose() / ss.d;
    Ok(StateSpaceRealization {
        a,
        b: -&ss.b / ss.d,
        c: &ss.c / ss.d,
        d: 1.0 / ss.d,
    })
}

/// Lower triangular Toeplitz matrix whose first column is `col`.
fn toeplitz_from_column(col: &[f64]) -> DMatrix<f64> {
    let n = col.len();
    DMatrix::from_fn(n, n, |i, j| if i >= j { col[i - j] } else { 0.0 })
}

/// Materializes the four channel operators over horizon `T`.
///
/// `zinv` is the impulse-response Toeplitz matrix of `(F, G, H', 1)`, `z` that
/// of its inverse realization, and `zz`, `zp` are banded with first columns
/// `(1, f_{m-1}, .., f_0, 0, ..)` and `(1, p_{m-1}, .., p_0, 0, ..)`. For a
/// memoryless channel all four are the identity.
pub fn toeplitz_bundle(spec: &ChannelSpec, horizon: usize) -> ToeplitzBundle {
    let n = horizon + 1;
    let ss_inv = channel_state_space(spec);
    let ss_fwd = invert_realization(&ss_inv).expect("canonical realization has unit direct gain");
    let zinv = toeplitz_from_column(&ss_inv.impulse(n));
    let z = toeplitz_from_column(&ss_fwd.impulse(n));
    let mut zz_col = vec![0.0; n];
    let mut zp_col = vec![0.0; n];
    zz_col[0] = 1.0;
    zp_col[0] = 1.0;
    let p = spec.p();
    let band = spec.m.min(horizon);
    zz_col[1..=band].copy_from_slice(&spec.f[..band]);
    zp_col[1..=band].copy_from_slice(&p[..band]);
    ToeplitzBundle {
        z,
        zinv,
        zz: toeplitz_from_column(&zz_col),
        zp: toeplitz_from_column(&zp_col),
        horizon,
    }
}

/// Runs the channel open loop: `s_{t+1} = A s_t + B u_t` and
/// `y_t = C' s_t + D u_t + N_t`.
pub fn simulate_channel(
    ss: &StateSpaceRealization,
    u: &[f64],
    noise: &[f64],
) -> Result<Vec<f64>, ChannelError> {
    if u.len() != noise.len() {
        return Err(ChannelError::LengthMismatch {
            got: u.len(),
            expected: noise.len(),
        });
    }
    let mut s = DVector::<f64>::zeros(ss.dim());
    let mut y = Vec::with_capacity(u.len());
    for (ut, nt) in u.iter().zip(noise) {
        y.push(ss.c.dot(&s) + ss.d * ut + nt);
        s = &ss.a * s + &ss.b * *ut;
    }
    Ok(y)
}
