//! Linear-case design: spectral norms, the ISS gain of the closed loop, the
//! minimal grid count for a sampling period, the linear predictor and its
//! a-priori error bound.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::history::{InputHistory, InputWindow};
use crate::system::LinearSystem;

const POWER_REL_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 1_000_000;
/// Largest state dimension accepted by the dense Kronecker Lyapunov solve.
pub const LYAPUNOV_MAX_DIM: usize = 20;
/// Default factor placed above the infimum admissible ISS gain.
pub const DEFAULT_GAMMA_MARGIN: f64 = 1.05;

/// Largest singular value, by power iteration on `A^T A`.
pub fn spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite matrix entry".into()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let scale = a.amax();
    if scale == 0.0 {
        return Ok(0.0);
    }
    // work on A / max|a_ij| to keep A^T A away from overflow
    let a = a / scale;
    let gram = a.transpose() * &a;
    let n = gram.nrows();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = &gram * &v;
        let w_norm = w.norm();
        if w_norm == 0.0 {
            // start vector in the null space; fall back to a dense eigen solve
            let eig = gram.clone().symmetric_eigen();
            let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
            return Ok(scale * top.max(0.0).sqrt());
        }
        let next = v.dot(&w);
        let v_next = w / w_norm;
        let residual = (&gram * &v_next - next * &v_next).norm();
        let settled = (next - lambda).abs() <= POWER_REL_TOL * next;
        v = v_next;
        lambda = next;
        if settled && residual <= 1e-6 * lambda {
            return Ok(scale * lambda.sqrt());
        }
    }
    Err(Error::NonConvergence("spectral norm power iteration"))
}

/// Quadratic ISS certificate of the nominal closed loop `A + BK`.
#[derive(Debug, Clone, Serialize)]
pub struct LinearGainReport {
    /// Row-major `P`.
    pub p_mat: Vec<Vec<f64>>,
    pub mu: f64,
    pub gamma: f64,
    pub margin: f64,
    /// Largest eigenvalue of `P(A+BK) + (A+BK)^T P + 2 mu P`.
    pub lyapunov_max_eig: f64,
    /// Smallest eigenvalue of `P - I`.
    pub p_minus_identity_min_eig: f64,
    /// Infimum admissible gain `sqrt(|B^T P B|) / mu`.
    pub gamma_floor: f64,
}

impl LinearGainReport {
    pub fn p_matrix(&self) -> DMatrix<f64> {
        let n = self.p_mat.len();
        DMatrix::from_fn(n, n, |i, j| self.p_mat[i][j])
    }

    /// All three defining inequalities hold.
    pub fn is_valid(&self) -> bool {
        self.lyapunov_max_eig <= 1e-9 && self.p_minus_identity_min_eig >= -1e-9 && self.gamma > self.gamma_floor
    }
}

/// Spectral abscissa `max Re(lambda)` and the eigenvalue attaining it.
fn spectral_abscissa(m: &DMatrix<f64>) -> (f64, f64) {
    m.complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .fold((f64::NEG_INFINITY, 0.0), |best, z| if z.0 > best.0 { z } else { best })
}

/// Solves `M^T X + X M = -I` through the Kronecker-vectorized system.
fn solve_lyapunov(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n > LYAPUNOV_MAX_DIM {
        return Err(Error::TooLarge {
            n,
            limit: LYAPUNOV_MAX_DIM,
        });
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let mt = m.transpose();
    let op = eye.kronecker(&mt) + mt.kronecker(&eye);
    let rhs = DVector::from_fn(n * n, |k, _| if k % (n + 1) == 0 { -1.0 } else { 0.0 });
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or(Error::NonConvergence("Lyapunov equation solve (singular operator)"))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// Quadratic certificate with decay rate `mu = 0.9 * (-max Re lambda(A+BK))`
/// and ISS gain `margin * sqrt(|B^T P B|) / mu`.
pub fn iss_gain_gamma(lin: &LinearSystem) -> Result<LinearGainReport> {
    iss_gain_gamma_with_margin(lin, DEFAULT_GAMMA_MARGIN)
}

pub fn iss_gain_gamma_with_margin(lin: &LinearSystem, margin: f64) -> Result<LinearGainReport> {
    if !(margin > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gain margin must exceed 1, got {margin}"
        )));
    }
    let n = lin.state_dim();
    if n > LYAPUNOV_MAX_DIM {
        return Err(Error::TooLarge {
            n,
            limit: LYAPUNOV_MAX_DIM,
        });
    }
    let acl = lin.closed_loop();
    let (re, im) = spectral_abscissa(&acl);
    if !(re < 0.0) {
        return Err(Error::NotHurwitz { re, im });
    }
    let mu = -0.9 * re;
    let shifted = &acl + DMatrix::<f64>::identity(n, n) * mu;
    let p0 = solve_lyapunov(&shifted)?;
    let p0_min = p0.clone().symmetric_eigen().eigenvalues.min();
    if !(p0_min > 0.0) {
        return Err(Error::NonConvergence("Lyapunov solution is not positive definite"));
    }
    let p = p0 / p0_min;
    let btpb = lin.b.transpose() * &p * &lin.b;
    let gamma_floor = spectral_norm(&btpb)?.sqrt() / mu;

    let lhs = &p * &acl + acl.transpose() * &p + &p * (2.0 * mu);
    let lhs = (&lhs + lhs.transpose()) * 0.5;
    let lyapunov_max_eig = lhs.symmetric_eigen().eigenvalues.max();
    let p_minus_identity_min_eig = (&p - DMatrix::<f64>::identity(n, n))
        .symmetric_eigen()
        .eigenvalues
        .min();
    Ok(LinearGainReport {
        p_mat: (0..n).map(|i| (0..n).map(|j| p[(i, j)]).collect()).collect(),
        mu,
        gamma: margin * gamma_floor,
        margin,
        lyapunov_max_eig,
        p_minus_identity_min_eig,
        gamma_floor,
    })
}

/// Left-hand side of the grid-count criterion; `N*` is the smallest integer
/// with `lhs < 2 N*`.
pub fn grid_criterion_lhs(lin: &LinearSystem, r: f64, gamma: f64) -> Result<f64> {
    let a = spectral_norm(&lin.a)?;
    let b = spectral_norm(&lin.b)?;
    let k = spectral_norm(&lin.k)?;
    let tau = lin.tau;
    let eat = (a * tau).exp();
    let lhs = tau * k * (a * r).exp() * (a * gamma * eat + b * (a * tau * eat + 1.0) * (1.0 + gamma * k)) * (eat - 1.0);
    if !lhs.is_finite() {
        return Err(Error::Overflow("grid criterion left-hand side"));
    }
    Ok(lhs)
}

/// Smallest `N*` satisfying the strict grid-count criterion for sampling
/// period `r` and ISS gain `gamma`.
pub fn min_grid_count(lin: &LinearSystem, r: f64, gamma: f64) -> Result<u64> {
    if !(r > 0.0) || !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "r and gamma must be positive, got r = {r}, gamma = {gamma}"
        )));
    }
    let lhs = grid_criterion_lhs(lin, r, gamma)?;
    let n = (lhs / 2.0).floor() + 1.0;
    if n >= u64::MAX as f64 {
        return Err(Error::Overflow("minimal grid count"));
    }
    Ok((n as u64).max(1))
}

/// Scalar example cost `f(p)` for `a = b = 1`, `k = -p`, `tau = 1`.
pub fn f_value(r: f64, p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!("p must exceed 1, got {p}")));
    }
    let e = std::f64::consts::E;
    Ok(p * r.exp() * (e + (e + 1.0) * (2.0 * p - 1.0)) * (e - 1.0) / (2.0 * (p - 1.0)))
}

#[derive(Debug, Clone, Serialize)]
pub struct FSweep {
    pub rows: Vec<(f64, f64)>,
    pub argmin_p: f64,
    pub min_f: f64,
}

impl FSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("p,f\n");
        for (p, f) in &self.rows {
            s.push_str(&format!("{p},{f}\n"));
        }
        s
    }
}

/// The grid `p = 1.01, 1.02, ..., 10.00`, built from integers to avoid
/// accumulated rounding.
pub fn default_p_grid() -> Vec<f64> {
    (101..=1000).map(|k| k as f64 / 100.0).collect()
}

pub fn f_sweep(r: f64, p_grid: &[f64]) -> Result<FSweep> {
    if p_grid.is_empty() {
        return Err(Error::InvalidArgument("empty p grid".into()));
    }
    let rows = p_grid
        .iter()
        .map(|&p| f_value(r, p).map(|f| (p, f)))
        .collect::<Result<Vec<_>>>()?;
    let (argmin_p, min_f) =
        rows.iter().cloned().fold(
            (f64::NAN, f64::INFINITY),
            |best, row| if row.1 < best.1 { row } else { best },
        );
    Ok(FSweep { rows, argmin_p, min_f })
}

/// Linear Euler predictor over an already re-based input window.
pub fn linear_predict_window(lin: &LinearSystem, x: &[f64], window: &InputWindow, n_grid: u64) -> Result<Vec<f64>> {
    let n = lin.state_dim();
    let m = lin.input_dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            what: "state",
            expected: n,
            got: x.len(),
        });
    }
    if window.input_dim() != m {
        return Err(Error::DimensionMismatch {
            what: "input window",
            expected: m,
            got: window.input_dim(),
        });
    }
    if n_grid == 0 {
        return Err(Error::InvalidArgument("grid count must be positive".into()));
    }
    let h = lin.tau / n_grid as f64;
    let mut z = x.to_vec();
    let mut next = vec![0.0; n];
    let mut int_u = vec![0.0; m];
    let mut up = vec![0.0; m];
    let mut uq = vec![0.0; m];
    let mut cursor = 0;
    for j in 0..n_grid {
        let a = j as f64 * h;
        let b = if j + 1 == n_grid { lin.tau } else { (j + 1) as f64 * h };
        int_u.iter_mut().for_each(|v| *v = 0.0);
        window.pieces(a, b, &mut cursor, &mut up, &mut uq, |len, p, q| {
            for i in 0..m {
                int_u[i] += 0.5 * len * (p[i] + q[i]);
            }
        });
        for i in 0..n {
            let mut acc = z[i];
            for c in 0..n {
                acc += h * lin.a[(i, c)] * z[c];
            }
            for c in 0..m {
                acc += lin.b[(i, c)] * int_u[c];
            }
            next[i] = acc;
        }
        std::mem::swap(&mut z, &mut next);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteStep { step: j as usize + 1 });
        }
    }
    Ok(z)
}

/// `z_N` of the linear Euler recursion over the history window `[t - tau, t)`.
pub fn linear_predict(lin: &LinearSystem, x: &[f64], hist: &InputHistory, t: f64, n_grid: u64) -> Result<Vec<f64>> {
    if (hist.window() - lin.tau).abs() > 1e-12 * lin.tau {
        return Err(Error::InvalidArgument(format!(
            "history window {} differs from the delay {}",
            hist.window(),
            lin.tau
        )));
    }
    let window = hist.window_at(t)?;
    linear_predict_window(lin, x, &window, n_grid)
}

/// A-priori bound on `|z_N - x(tau)|` for the linear predictor, with
/// `a = |A|`, `b = |B|`.
pub fn linear_error_bound(a: f64, b: f64, tau: f64, n_grid: u64, x0_norm: f64, u_sup: f64) -> f64 {
    let h = tau / n_grid.max(1) as f64;
    let eat = (a * tau).exp();
    0.5 * h * a * (eat - 1.0) * eat * x0_norm + 0.5 * h * b * (a * tau * eat + 1.0) * (eat - 1.0) * u_sup
}
