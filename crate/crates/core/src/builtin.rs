//! Built-in plants and their certificates.
//!
//! The cubic example is `x' = x - x^3 + u` with feedback `k(x) = -2x`, so the
//! delay-free closed loop is `x' = -x - x^3`.

use std::sync::Arc;

use crate::design::{CompletenessCertificate, FeedbackCertificate};
use crate::error::Result;
use crate::func::{ClassKInf, ScalarFn};
use crate::linear::spectral_norm;
use crate::system::{norm, LinearSystem, NonlinearSystem};

/// Largest real root of `y^3 - y = 1`.
const PLASTIC: f64 = 1.324_717_957_244_746;

/// Growth envelope of the cubic field:
/// `|1 - (x^2 + xy + y^2)| <= max(1, (|x| + |y|)^2 - 1)`.
pub fn cubic_envelope() -> ScalarFn {
    ScalarFn::new(|s| (s * s - 1.0).max(1.0))
}

pub fn cubic_system() -> NonlinearSystem {
    cubic_system_with_envelope(cubic_envelope())
}

/// The cubic plant with a caller-chosen growth envelope, for testing the
/// envelope validator.
pub fn cubic_system_with_envelope(growth: ScalarFn) -> NonlinearSystem {
    NonlinearSystem::new(
        "cubic",
        1,
        1,
        |x, u, out| out[0] = x[0] - x[0] * x[0] * x[0] + u[0],
        |x, out| out[0] = -2.0 * x[0],
        growth,
    )
    .expect("cubic example satisfies the construction checks")
}

/// `f = 0`, `k = 0`, `L = 1`.
pub fn zero_system(n: usize, m: usize) -> NonlinearSystem {
    NonlinearSystem::new(
        "zero",
        n,
        m,
        |_, _, out| out.iter_mut().for_each(|v| *v = 0.0),
        |_, out| out.iter_mut().for_each(|v| *v = 0.0),
        ScalarFn::constant(1.0),
    )
    .expect("zero system satisfies the construction checks")
}

/// Tunable constants of the documented cubic certificates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicParams {
    /// Weight in `W(x) = 1 + kappa x^2`.
    pub kappa: f64,
    /// Young's-inequality split `2xu <= alpha x^2 + u^2 / alpha`.
    pub alpha: f64,
    /// Radius of the ball where the quadratic Lyapunov bounds are used.
    pub eps: f64,
}

impl Default for CubicParams {
    fn default() -> Self {
        CubicParams {
            kappa: 1e4,
            alpha: 0.5,
            eps: 0.4,
        }
    }
}

impl CubicParams {
    /// Smallest `c` with `2 kappa x (x - x^3 + u) <= c (1 + kappa x^2) + kappa u^2 / alpha`.
    ///
    /// After Young's inequality the claim is that the quadratic
    /// `2 kappa y^2 - kappa (2 + alpha - c) y + c` in `y = x^2` stays
    /// nonnegative, i.e. its discriminant vanishes.
    pub fn completeness_rate(&self) -> f64 {
        let (k, d) = (self.kappa, 2.0 + self.alpha);
        let b = 2.0 * k * d + 8.0;
        (b - (b * b - 4.0 * k * k * d * d).sqrt()) / (2.0 * k)
    }
}

/// Reachable-set bound of the cubic plant over a horizon `t`.
///
/// Solutions satisfy `|x(t)| <= e^t |x0| + (e^t - 1) |u|` and also never
/// leave `max(|x0|, xi(|u|))` where `xi(v)` solves `y^3 - y = v`. With
/// `xi(v) <= xi(1) v^{1/3}` for `v >= 1`, the bound below is linear on
/// `[0, 1]` and dominates both estimates.
pub fn cubic_flow_bound(name: &str, t: f64) -> (ClassKInf, f64) {
    let slope = t.exp().max(PLASTIC);
    let f = ClassKInf::new(name, f64::INFINITY, move |s: f64| {
        if s <= 1.0 {
            slope * s
        } else {
            s.max(slope * s.cbrt())
        }
    });
    (f, slope)
}

/// `W = 1 + kappa x^2` with the rate from [`CubicParams::completeness_rate`].
pub fn cubic_completeness(params: &CubicParams, tau: f64, r: f64) -> CompletenessCertificate {
    let kappa = params.kappa;
    let alpha = params.alpha;
    let (a_tau, m_tau) = cubic_flow_bound("a_tau", tau);
    let (a_r, _) = cubic_flow_bound("a_r", r);
    CompletenessCertificate {
        w: Arc::new(move |x: &[f64]| 1.0 + kappa * x[0] * x[0]),
        grad_w: Arc::new(move |x: &[f64], g: &mut [f64]| g[0] = 2.0 * kappa * x[0]),
        hessian_envelope: ScalarFn::constant(2.0 * kappa),
        c: params.completeness_rate(),
        p: ClassKInf::quadratic("p", kappa / alpha),
        sublevel_radius: ScalarFn::new(move |t: f64| ((t - 1.0).max(0.0) / kappa).sqrt()),
        w_envelope: Some(ScalarFn::new(move |s| 1.0 + kappa * s * s)),
        a_tau,
        a_r,
        m_tau,
    }
}

/// `V = x^2` with `rho(v) = 2v + 2v^2`, `mu = 2` and `M = 2`.
pub fn cubic_feedback(params: &CubicParams) -> FeedbackCertificate {
    FeedbackCertificate {
        v: Arc::new(|x: &[f64]| x[0] * x[0]),
        grad_v: Arc::new(|x: &[f64], g: &mut [f64]| g[0] = 2.0 * x[0]),
        rho: ClassKInf::new("rho", f64::INFINITY, |v| 2.0 * v + 2.0 * v * v),
        eps: params.eps,
        k_quad: 1.0,
        mu: 2.0,
        a1: ClassKInf::quadratic("a1", 1.0),
        a2: ClassKInf::quadratic("a2", 1.0),
        a3: ClassKInf::linear("a3", 2.0),
        a4: ClassKInf::linear("a4", 2.0),
        k1: 1.0,
        k2: 1.0,
        k3: 2.0,
        k4: 2.0,
        m: ScalarFn::constant(2.0),
    }
}

/// `W = 1 + |x|^2` for `x' = Ax + Bu`:
/// `2x.(Ax + Bu) <= (2|A| + 1)|x|^2 + |B|^2 |u|^2`, and the flow obeys
/// `|x(t)| <= e^{|A| t} (|x0| + t |B| |u|)`.
pub fn linear_completeness(lin: &LinearSystem, r: f64) -> Result<CompletenessCertificate> {
    let a = spectral_norm(&lin.a)?;
    let b = spectral_norm(&lin.b)?;
    let tau = lin.tau;
    let m_tau = (a * tau).exp() * (tau * b).max(1.0);
    let m_r = (a * r).exp() * (r * b).max(1.0);
    Ok(CompletenessCertificate {
        w: Arc::new(|x: &[f64]| 1.0 + x.iter().map(|v| v * v).sum::<f64>()),
        grad_w: Arc::new(|x: &[f64], g: &mut [f64]| {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = 2.0 * xi;
            }
        }),
        hessian_envelope: ScalarFn::constant(2.0),
        c: 2.0 * a + 1.0,
        p: ClassKInf::quadratic("p", b * b),
        sublevel_radius: ScalarFn::new(|t: f64| (t - 1.0).max(0.0).sqrt()),
        w_envelope: Some(ScalarFn::new(|s| 1.0 + s * s)),
        a_tau: ClassKInf::linear("a_tau", m_tau),
        a_r: ClassKInf::linear("a_r", m_r),
        m_tau,
    })
}

/// Completeness data for [`zero_system`]: states never move.
pub fn zero_completeness() -> CompletenessCertificate {
    CompletenessCertificate {
        w: Arc::new(|x: &[f64]| 1.0 + norm(x).powi(2)),
        grad_w: Arc::new(|x: &[f64], g: &mut [f64]| {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = 2.0 * xi;
            }
        }),
        hessian_envelope: ScalarFn::constant(2.0),
        c: 1.0,
        p: ClassKInf::quadratic("p", 1.0),
        sublevel_radius: ScalarFn::new(|t: f64| (t - 1.0).max(0.0).sqrt()),
        w_envelope: Some(ScalarFn::new(|s| 1.0 + s * s)),
        a_tau: ClassKInf::linear("a_tau", 1.0),
        a_r: ClassKInf::linear("a_r", 1.0),
        m_tau: 1.0,
    }
}

/// Accuracy target used by the bound-dominance sweeps: `R(s) = s / 2`.
///
/// The grid count is valid for any positive target; this one keeps the
/// number of Euler steps moderate so that the error bound itself, rather
/// than the design's tight target, is what gets tested.
pub fn verification_accuracy() -> ScalarFn {
    ScalarFn::new(|s| 0.5 * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::func::log_grid;

    #[test]
    fn completeness_rate_closes_the_quadratic() {
        for (kappa, alpha) in [(1.0, 1.0), (1e4, 0.5), (64.0, 0.5)] {
            let p = CubicParams { kappa, alpha, eps: 0.4 };
            let c = p.completeness_rate();
            let d = 2.0 + alpha;
            assert!(c > 0.0 && c < d);
            // the quadratic 2k y^2 - k (d - c) y + c has nonnegative minimum
            let ymin = (d - c) / 4.0;
            let val = 2.0 * kappa * ymin * ymin - kappa * (d - c) * ymin + c;
            assert!(val >= -1e-9 * c, "kappa={kappa}: {val}");
        }
    }

    #[test]
    fn plastic_constant_is_the_root() {
        assert!((PLASTIC.powi(3) - PLASTIC - 1.0).abs() < 1e-14);
    }

    #[test]
    fn flow_bound_is_continuous_and_increasing() {
        for t in [0.1, 0.25, 0.5, 2.0] {
            let (a, slope) = cubic_flow_bound("a", t);
            assert!((a.eval(1.0) - slope).abs() < 1e-15);
            assert!((a.eval(1.0 + 1e-12) - slope).abs() < 1e-9);
            let g = log_grid(1e-6, 1e6, 500);
            assert!(g.windows(2).all(|w| a.eval(w[1]) > a.eval(w[0])));
        }
    }

    #[test]
    fn cubic_envelope_validates() {
        let sys = cubic_system();
        for radius in [0.5, 2.0, 10.0] {
            let rep = sys.check_growth_envelope(20_000, radius, 17);
            assert!(rep.passes, "radius {radius}: {rep:?}");
        }
    }

    #[test]
    fn linear_certificate_validates() {
        let lin = LinearSystem::scalar(1.0, 1.0, -2.0, 1.0).unwrap();
        let sys = crate::system::linear_as_nonlinear(&lin).unwrap();
        let cc = linear_completeness(&lin, 1.0).unwrap();
        let rep = cc.validate(&sys, 1.0, 4000, 3.0, 5);
        assert!(rep.passes, "{:?}", rep.failures());
    }

    #[test]
    fn zero_certificate_validates() {
        let rep = zero_completeness().validate(&zero_system(2, 1), 1.0, 1000, 3.0, 5);
        assert!(rep.passes, "{:?}", rep.failures());
    }
}
