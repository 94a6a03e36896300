//! User-supplied completeness and Lyapunov certificates, the bound functions
//! they generate, and the constant-selection pipeline that produces the
//! accuracy function `R`.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::func::{is_nondecreasing, log_grid, ClassKInf, ScalarFn};
use crate::oracle::rk4_run;
use crate::system::{norm, sample_ball, NonlinearSystem};

/// A scalar function of the state, such as `W` or `V`.
pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `(x, out)`: writes a gradient into `out`.
pub type GradFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

const CHECK_TOL: f64 = 1e-9;
const DELTA_REL_TOL: f64 = 1e-10;
/// Safety factor applied to the supremum of admissible `R~`.
pub const RTILDE_MARGIN: f64 = 0.9;

/// Result of one sampled inequality check. `worst_excess` is the largest
/// `(lhs - rhs) / max(1, |rhs|)` seen; the check passes when it stays below
/// `1e-9`.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub samples: usize,
    pub worst_excess: f64,
    pub worst_point: Option<Vec<f64>>,
    pub passes: bool,
}

impl Check {
    fn new(name: &str) -> Self {
        Check {
            name: name.to_string(),
            samples: 0,
            worst_excess: f64::NEG_INFINITY,
            worst_point: None,
            passes: true,
        }
    }

    fn record(&mut self, lhs: f64, rhs: f64, point: &[f64]) {
        self.samples += 1;
        let excess = if lhs.is_nan() || rhs.is_nan() {
            f64::INFINITY
        } else {
            (lhs - rhs) / rhs.abs().max(1.0)
        };
        if excess > self.worst_excess {
            self.worst_excess = excess;
            self.worst_point = Some(point.to_vec());
        }
        self.passes = self.worst_excess <= CHECK_TOL;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub checks: Vec<Check>,
    pub passes: bool,
}

impl CertificateReport {
    fn from_checks(checks: Vec<Check>) -> Self {
        let passes = checks.iter().all(|c| c.passes);
        CertificateReport { checks, passes }
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passes)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Forward-completeness data: `W >= 1` with `grad W . f <= c W + p(|u|)`,
/// over-estimates of its sublevel sets and of its max over balls, a
/// Hessian envelope, and reachable-set bounds `a_tau`, `a_r`.
#[derive(Clone)]
pub struct CompletenessCertificate {
    pub w: StateFn,
    pub grad_w: GradFn,
    pub hessian_envelope: ScalarFn,
    pub c: f64,
    pub p: ClassKInf,
    /// Upper bound on `max { |x| : W(x) <= T }` for levels `T >= 1`.
    pub sublevel_radius: ScalarFn,
    /// Upper bound on `max_{|y| <= s} W(y)`.
    pub w_envelope: Option<ScalarFn>,
    pub a_tau: ClassKInf,
    pub a_r: ClassKInf,
    /// Slope with `a_tau(s) = m_tau * s` on `[0, 1]`.
    pub m_tau: f64,
}

impl fmt::Debug for CompletenessCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompletenessCertificate")
            .field("c", &self.c)
            .field("m_tau", &self.m_tau)
            .finish()
    }
}

impl CompletenessCertificate {
    /// Sampling checks of the certificate against `sys` in the ball of the
    /// given radius. `tau` is the horizon that `a_tau` is meant for; the
    /// reachable-set bound is checked along RK4 flows under constant and
    /// sinusoidal inputs.
    pub fn validate(
        &self,
        sys: &NonlinearSystem,
        tau: f64,
        samples: usize,
        radius: f64,
        seed: u64,
    ) -> CertificateReport {
        let n = sys.state_dim();
        let m = sys.input_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w_floor = Check::new("W >= 1");
        let mut dissip = Check::new("grad W . f <= c W + p(|u|)");
        let mut env = Check::new("W(x) <= W_env(|x|)");
        let mut sub = Check::new("|x| <= sublevel_radius(W(x))");
        let mut grad = vec![0.0; n];
        let mut fx = vec![0.0; n];

        let zero = vec![0.0; n];
        w_floor.record(1.0, (self.w)(&zero), &zero);
        for _ in 0..samples {
            let x = sample_ball(&mut rng, n, radius);
            let u = sample_ball(&mut rng, m, radius);
            let w = (self.w)(&x);
            w_floor.record(1.0, w, &x);
            (self.grad_w)(&x, &mut grad);
            sys.eval_into(&x, &u, &mut fx);
            let lhs: f64 = grad.iter().zip(&fx).map(|(a, b)| a * b).sum();
            dissip.record(lhs, self.c * w + self.p.eval(norm(&u)), &[x.clone(), u].concat());
            if let Some(env_fn) = &self.w_envelope {
                env.record(w, env_fn.eval(norm(&x)), &x);
            }
            sub.record(norm(&x), self.sublevel_radius.eval(w), &x);
        }

        let mut p_shape = Check::new("p(0) = 0 and p increasing");
        p_shape.record(self.p.eval(0.0).abs(), 0.0, &[0.0]);
        let grid = log_grid(1e-6, radius.max(1e-5), 400);
        let pv: Vec<f64> = grid.iter().map(|&s| self.p.eval(s)).collect();
        for w in pv.windows(2).zip(&grid) {
            p_shape.record(w.0[0], w.0[1] - f64::MIN_POSITIVE, &[*w.1]);
        }

        let mut small = Check::new("a_tau(s) = M_tau s on [0, 1]");
        for i in 0..=100 {
            let s = i as f64 / 100.0;
            let diff = (self.a_tau.eval(s) - self.m_tau * s).abs();
            small.record(diff, 1e-12 * s.max(1.0), &[s]);
        }

        let mut reach = Check::new("|x(t)| <= a_tau(|x0| + |u|) on [0, tau]");
        let flow_samples = (samples / 20).clamp(1, 200);
        for k in 0..flow_samples {
            let x0 = sample_ball(&mut rng, n, radius);
            let u0 = sample_ball(&mut rng, m, radius);
            let bound = self.a_tau.eval(norm(&x0) + norm(&u0));
            let oscillate = k % 2 == 1;
            let input = |t: f64, out: &mut [f64]| {
                let g = if oscillate { (7.0 * t).cos() } else { 1.0 };
                for (o, v) in out.iter_mut().zip(&u0) {
                    *o = g * v;
                }
            };
            let mut worst: f64 = 0.0;
            let run = rk4_run(sys, &x0, &input, 0.0, tau, 400, |_, x| worst = worst.max(norm(x)));
            if run.is_err() {
                worst = f64::INFINITY;
            }
            reach.record(worst, bound, &[x0, u0].concat());
        }

        let mut checks = vec![w_floor, dissip, sub, p_shape, small, reach];
        if self.w_envelope.is_some() {
            checks.insert(2, env);
        }
        CertificateReport::from_checks(checks)
    }
}

/// Lyapunov data for the delay-free closed loop `x' = f(x, k(x))`.
#[derive(Clone)]
pub struct FeedbackCertificate {
    pub v: StateFn,
    pub grad_v: GradFn,
    pub rho: ClassKInf,
    pub eps: f64,
    pub k_quad: f64,
    pub mu: f64,
    pub a1: ClassKInf,
    pub a2: ClassKInf,
    pub a3: ClassKInf,
    pub a4: ClassKInf,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    /// Lipschitz envelope of `z -> f(x, k(z))` around `z = x`; at least 1.
    pub m: ScalarFn,
}

impl fmt::Debug for FeedbackCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeedbackCertificate")
            .field("eps", &self.eps)
            .field("k_quad", &self.k_quad)
            .field("mu", &self.mu)
            .field("k", &[self.k1, self.k2, self.k3, self.k4])
            .finish()
    }
}

impl FeedbackCertificate {
    /// Sampling checks of every defining inequality, globally in the ball of
    /// the given radius and locally in the `eps`-ball.
    pub fn validate(&self, sys: &NonlinearSystem, samples: usize, radius: f64, seed: u64) -> CertificateReport {
        let n = sys.state_dim();
        let m = sys.input_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut decrease = Check::new("grad V . f(x, k(x)) <= -rho(V)");
        let mut quad = Check::new("|x|^2 <= V <= K |x|^2 near 0");
        let mut quad_grad = Check::new("|grad V| <= 2K |x| near 0");
        let mut local_decay = Check::new("grad V . f(x, k(x)) <= -mu |x|^2 near 0");
        let mut sandwich = Check::new("a1(|x|) <= V <= a2(|x|)");
        let mut growth = Check::new("|grad V| <= a3(|x|), |k| <= a4(|x|)");
        let mut lip = Check::new("|f(x, k(z)) - f(x, k(x))| <= M(|x| + |z|) |z - x|");
        let mut grad = vec![0.0; n];
        let mut kx = vec![0.0; m];
        let mut kz = vec![0.0; m];
        let mut f1 = vec![0.0; n];
        let mut f2 = vec![0.0; n];

        for i in 0..samples {
            let local = i % 2 == 1;
            let x = sample_ball(&mut rng, n, if local { self.eps } else { radius });
            let nx = norm(&x);
            let v = (self.v)(&x);
            (self.grad_v)(&x, &mut grad);
            sys.feedback_into(&x, &mut kx);
            sys.eval_into(&x, &kx, &mut f1);
            let dv: f64 = grad.iter().zip(&f1).map(|(a, b)| a * b).sum();
            decrease.record(dv, -self.rho.eval(v), &x);
            sandwich.record(self.a1.eval(nx), v, &x);
            sandwich.record(v, self.a2.eval(nx), &x);
            growth.record(norm(&grad), self.a3.eval(nx), &x);
            growth.record(norm(&kx), self.a4.eval(nx), &x);
            if nx <= self.eps {
                quad.record(nx * nx, v, &x);
                quad.record(v, self.k_quad * nx * nx, &x);
                quad_grad.record(norm(&grad), 2.0 * self.k_quad * nx, &x);
                local_decay.record(dv, -self.mu * nx * nx, &x);
            }

            let z = sample_ball(&mut rng, n, if local { self.eps } else { radius });
            sys.feedback_into(&z, &mut kz);
            sys.eval_into(&x, &kz, &mut f2);
            let lhs = crate::system::dist(&f1, &f2);
            lip.record(
                lhs,
                self.m.eval(nx + norm(&z)) * crate::system::dist(&x, &z),
                &[x, z].concat(),
            );
        }

        let mut small = Check::new("a_i agree with k_i forms on [0, eps]");
        for i in 0..=100 {
            let s = self.eps * i as f64 / 100.0;
            let pairs = [
                (self.a1.eval(s), self.k1 * s * s),
                (self.a2.eval(s), self.k2 * s * s),
                (self.a3.eval(s), self.k3 * s),
                (self.a4.eval(s), self.k4 * s),
            ];
            for (got, want) in pairs {
                small.record((got - want).abs(), 1e-12 * want.abs().max(1.0), &[s]);
            }
        }
        let mut m_floor = Check::new("M >= 1");
        for s in log_grid(1e-6, radius.max(1e-5), 200) {
            m_floor.record(1.0, self.m.eval(s), &[s]);
        }

        CertificateReport::from_checks(vec![
            decrease,
            quad,
            quad_grad,
            local_decay,
            sandwich,
            growth,
            lip,
            small,
            m_floor,
        ])
    }
}

/// The bound functions `P`, `Q`, `A`, `B` for delay `tau`.
#[derive(Clone)]
pub struct BoundsPack {
    tau: f64,
    cert: CompletenessCertificate,
    w_env: ScalarFn,
    growth: ScalarFn,
}

impl fmt::Debug for BoundsPack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundsPack")
            .field("tau", &self.tau)
            .field("cert", &self.cert)
            .finish()
    }
}

/// Assembles the bound functions from a completeness certificate and the
/// growth envelope `L`.
pub fn build_bounds_pack(cc: &CompletenessCertificate, growth: &ScalarFn, tau: f64) -> Result<BoundsPack> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("delay must be positive, got {tau}")));
    }
    if !(cc.c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "completeness constant c must be positive, got {}",
            cc.c
        )));
    }
    let w_env = cc
        .w_envelope
        .clone()
        .ok_or_else(|| Error::InvalidArgument("completeness certificate lacks the W envelope".into()))?;
    Ok(BoundsPack {
        tau,
        cert: cc.clone(),
        w_env,
        growth: growth.clone(),
    })
}

impl BoundsPack {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn c(&self) -> f64 {
        self.cert.c
    }

    pub fn certificate(&self) -> &CompletenessCertificate {
        &self.cert
    }

    pub fn growth(&self) -> &ScalarFn {
        &self.growth
    }

    pub fn a_tau(&self, s: f64) -> f64 {
        self.cert.a_tau.eval(s)
    }

    /// `P(s) = s^2 L(s)^2 H(s)`.
    pub fn p(&self, s: f64) -> f64 {
        let l = self.growth.eval(s);
        s * s * l * l * self.cert.hessian_envelope.eval(s)
    }

    /// `Q(s) = 1 + sublevel_radius(e^{2c tau} W_env(s) + (e^{2c tau} - 1) p(s) / (2c))`.
    pub fn q(&self, s: f64) -> f64 {
        let c = self.cert.c;
        let g = (2.0 * c * self.tau).exp();
        let level = g * self.w_env.eval(s) + (g - 1.0) / (2.0 * c) * self.cert.p.eval(s);
        1.0 + self.cert.sublevel_radius.eval(level)
    }

    /// `A(s) = L(Q(s) + a_tau(s) + s)`.
    pub fn a(&self, s: f64) -> f64 {
        self.growth.eval(self.q(s) + self.a_tau(s) + s)
    }

    /// `B(s) = A(s) (a_tau(s) + s) L(a_tau(s) + s)`.
    pub fn b(&self, s: f64) -> f64 {
        let reach = self.a_tau(s) + s;
        self.a(s) * reach * self.growth.eval(reach)
    }

    /// Level bounding `W` along Euler iterates from data of size `s`.
    pub fn w_level(&self, s: f64) -> f64 {
        let c = self.cert.c;
        let g = (2.0 * c * self.tau).exp();
        g * self.w_env.eval(s) + (g - 1.0) / (2.0 * c) * self.cert.p.eval(s)
    }

    /// Nondecreasing check of `P, Q, A, B` on a log grid.
    pub fn monotonicity(&self, lo: f64, hi: f64, count: usize) -> Vec<(String, bool)> {
        let grid = log_grid(lo, hi, count);
        let table: [(&str, &dyn Fn(f64) -> f64); 4] = [
            ("P", &|s| self.p(s)),
            ("Q", &|s| self.q(s)),
            ("A", &|s| self.a(s)),
            ("B", &|s| self.b(s)),
        ];
        table
            .iter()
            .map(|(name, f)| {
                let vals: Vec<f64> = grid.iter().map(|&s| f(s)).collect();
                (name.to_string(), is_nondecreasing(&vals, 1e-12))
            })
            .collect()
    }
}

/// Constants and functions selected by the design pipeline.
#[derive(Clone)]
pub struct DerivedDesign {
    pub r: f64,
    pub tau: f64,
    pub delta: f64,
    pub gamma: f64,
    pub ltilde: f64,
    pub phi: f64,
    pub rtilde: f64,
    fc: FeedbackCertificate,
    pack: BoundsPack,
}

impl fmt::Debug for DerivedDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DerivedDesign")
            .field("r", &self.r)
            .field("tau", &self.tau)
            .field("delta", &self.delta)
            .field("gamma", &self.gamma)
            .field("ltilde", &self.ltilde)
            .field("phi", &self.phi)
            .field("rtilde", &self.rtilde)
            .finish()
    }
}

/// `a1^{-1}(a2(2 a1^{-1}(delta)))`, the radius the local argument needs.
fn delta_radius(fc: &FeedbackCertificate, delta: f64) -> Result<f64> {
    let inner = 2.0 * fc.a1.inverse(delta)?;
    fc.a1.inverse(fc.a2.eval(inner))
}

/// Runs the constant-selection pipeline for sampling period `r`.
pub fn derive_design(fc: &FeedbackCertificate, pack: &BoundsPack, r: f64) -> Result<DerivedDesign> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sampling period must be positive, got {r}"
        )));
    }
    if !(fc.eps > 0.0) || !(fc.mu > 0.0) || !(fc.k1 > 0.0) || !(fc.k2 > 0.0) || !(fc.k3 > 0.0) || !(fc.k4 > 0.0) {
        return Err(Error::InvalidArgument(
            "feedback certificate constants must be positive".into(),
        ));
    }

    // largest delta in [0, a1(eps)] with delta_radius(delta) <= eps
    let mut hi = fc.a1.eval(fc.eps);
    let delta = if delta_radius(fc, hi)? <= fc.eps {
        hi
    } else {
        let mut lo = 0.0;
        while hi - lo > DELTA_REL_TOL * hi {
            let mid = 0.5 * (lo + hi);
            if delta_radius(fc, mid)? <= fc.eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    if !(delta > 0.0) {
        return Err(Error::Bracket {
            handle: "delta".into(),
            target: fc.eps,
        });
    }

    let a1_inv_delta = fc.a1.inverse(delta)?;
    let gamma = a1_inv_delta.min(0.5 * fc.rho.eval(0.5 * delta));
    let radius = delta_radius(fc, delta)?;
    let growth = pack.growth();
    let ltilde = growth.eval((1.0 + fc.k4) * radius + a1_inv_delta);
    let phi = fc.k3 * fc.m.eval(radius + a1_inv_delta) * (r * ltilde).exp();
    let (k1, k2, k4, mu) = (fc.k1, fc.k2, fc.k4, fc.mu);
    let first = (k1 / k2).sqrt() / k4;
    let second =
        mu * k1 * k1.sqrt() / (2f64.sqrt() * k2 * phi * (k1.sqrt() + k4 * k2.sqrt()) + mu * k1 * k4 * k2.sqrt());
    let rtilde = RTILDE_MARGIN * first.min(second);
    if !(rtilde > 0.0) || !gamma.is_finite() {
        return Err(Error::Overflow("design constants"));
    }

    Ok(DerivedDesign {
        r,
        tau: pack.tau(),
        delta,
        gamma,
        ltilde,
        phi,
        rtilde,
        fc: fc.clone(),
        pack: pack.clone(),
    })
}

impl DerivedDesign {
    pub fn pack(&self) -> &BoundsPack {
        &self.pack
    }

    pub fn feedback_certificate(&self) -> &FeedbackCertificate {
        &self.fc
    }

    /// `D_r(s) = a3(a_r(s) + s) M(a_r(s) + s) exp(r L(a_r(s) + s))`.
    pub fn d_r(&self, s: f64) -> f64 {
        let arg = self.pack.certificate().a_r.eval(s) + s;
        self.fc.a3.eval(arg) * self.fc.m.eval(arg) * (self.r * self.pack.growth().eval(arg)).exp()
    }

    /// `q(s) = a4(a1^{-1}(a2(s))) + a1^{-1}(a2(s))`.
    pub fn q_map(&self, s: f64) -> Result<f64> {
        let y = self.fc.a1.inverse(self.fc.a2.eval(s))?;
        Ok(self.fc.a4.eval(y) + y)
    }

    /// The three-way minimum defining the accuracy function `R(s)`.
    pub fn accuracy(&self, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Ok(0.0);
        }
        let arg = self.pack.a_tau(s) + self.q_map(self.pack.q(s))?;
        let first = self.gamma / self.d_r(arg).max(1.0);
        let second = self.rtilde * s;
        let third = 0.5 * self.fc.a2.inverse(self.fc.a1.eval(self.fc.a4.inverse(0.5 * s)?))?;
        Ok(first.min(second).min(third))
    }

    /// `R` as a plain function handle; inversion failures map to NaN, which
    /// the grid count rejects.
    pub fn accuracy_fn(&self) -> ScalarFn {
        let me = self.clone();
        ScalarFn::new(move |s| me.accuracy(s).unwrap_or(f64::NAN))
    }

    /// `min(R~, sqrt(k1/k2) / (4 k4))`, the small-signal slope of `R`.
    pub fn liminf_ratio(&self) -> f64 {
        self.rtilde.min((self.fc.k1 / self.fc.k2).sqrt() / (4.0 * self.fc.k4))
    }

    /// Threshold below which `R(s) = liminf_ratio * s`: the quadratic forms
    /// of the comparison functions apply and the `D_r` branch is inactive.
    pub fn small_signal_threshold(&self) -> Result<f64> {
        let floor = self.gamma / self.d_r(self.pack.a_tau(1.0) + self.q_map(self.pack.q(1.0))?).max(1.0);
        Ok(1f64
            .min(2.0 * self.fc.k4 * self.fc.eps)
            .min(floor / self.liminf_ratio()))
    }

    /// Ultimate bound on `V`, `rho^{-1}(2 gamma)`.
    pub fn ultimate_bound(&self) -> Result<f64> {
        self.fc.rho.inverse(2.0 * self.gamma)
    }

    /// Substitutes the selected constants back into their defining
    /// inequalities.
    pub fn constraint_report(&self) -> Result<DesignConstraints> {
        let (k1, k2, k4, mu, phi) = (self.fc.k1, self.fc.k2, self.fc.k4, self.fc.mu, self.phi);
        let first = k4 * (k2 / k1).sqrt() * self.rtilde;
        let second = (2f64.sqrt() * k2 * phi * (k1.sqrt() + k4 * k2.sqrt()) + mu * k1 * k4 * k2.sqrt())
            / (mu * k1 * k1.sqrt())
            * self.rtilde;
        Ok(DesignConstraints {
            delta_radius: delta_radius(&self.fc, self.delta)?,
            eps: self.fc.eps,
            gamma_cap: self
                .fc
                .a1
                .inverse(self.delta)?
                .min(0.5 * self.fc.rho.eval(0.5 * self.delta)),
            rtilde_first: first,
            rtilde_second: second,
        })
    }

    /// Nondecreasing check of `D_r` and `q` on a log grid.
    pub fn monotonicity(&self, lo: f64, hi: f64, count: usize) -> Result<Vec<(String, bool)>> {
        let grid = log_grid(lo, hi, count);
        let dr: Vec<f64> = grid.iter().map(|&s| self.d_r(s)).collect();
        let q = grid.iter().map(|&s| self.q_map(s)).collect::<Result<Vec<_>>>()?;
        Ok(vec![
            ("D_r".to_string(), is_nondecreasing(&dr, 1e-12)),
            ("q".to_string(), is_nondecreasing(&q, 1e-12)),
        ])
    }

    /// Audit record with all constants and `R` tabulated on a log grid.
    pub fn report(&self) -> Result<DesignReport> {
        let grid = log_grid(1e-8, 10.0, 91);
        let r_table = grid
            .iter()
            .map(|&s| self.accuracy(s).map(|v| (s, v)))
            .collect::<Result<Vec<_>>>()?;
        Ok(DesignReport {
            tau: self.tau,
            r: self.r,
            c: self.pack.c(),
            m_tau: self.pack.certificate().m_tau,
            eps: self.fc.eps,
            k_quad: self.fc.k_quad,
            mu: self.fc.mu,
            k: [self.fc.k1, self.fc.k2, self.fc.k3, self.fc.k4],
            delta: self.delta,
            gamma: self.gamma,
            ltilde: self.ltilde,
            phi: self.phi,
            rtilde: self.rtilde,
            liminf_ratio: self.liminf_ratio(),
            small_signal_threshold: self.small_signal_threshold()?,
            ultimate_bound: self.ultimate_bound()?,
            constraints: self.constraint_report()?,
            r_table,
        })
    }
}

/// Left-hand sides of the selection constraints at the chosen constants.
#[derive(Debug, Clone, Serialize)]
pub struct DesignConstraints {
    /// Must not exceed `eps`.
    pub delta_radius: f64,
    pub eps: f64,
    /// `gamma` must not exceed this.
    pub gamma_cap: f64,
    /// Both must be strictly below 1.
    pub rtilde_first: f64,
    pub rtilde_second: f64,
}

impl DesignConstraints {
    pub fn hold(&self, gamma: f64) -> bool {
        self.delta_radius <= self.eps * (1.0 + 1e-12)
            && gamma <= self.gamma_cap
            && self.rtilde_first < 1.0
            && self.rtilde_second < 1.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignReport {
    pub tau: f64,
    pub r: f64,
    pub c: f64,
    pub m_tau: f64,
    pub eps: f64,
    pub k_quad: f64,
    pub mu: f64,
    pub k: [f64; 4],
    pub delta: f64,
    pub gamma: f64,
    pub ltilde: f64,
    pub phi: f64,
    pub rtilde: f64,
    pub liminf_ratio: f64,
    pub small_signal_threshold: f64,
    pub ultimate_bound: f64,
    pub constraints: DesignConstraints,
    pub r_table: Vec<(f64, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::{cubic_completeness, cubic_feedback, cubic_system, CubicParams};

    fn cubic_design(tau: f64, r: f64) -> (BoundsPack, DerivedDesign) {
        let params = CubicParams::default();
        let sys = cubic_system();
        let cc = cubic_completeness(&params, tau, r);
        let pack = build_bounds_pack(&cc, sys.growth(), tau).unwrap();
        let design = derive_design(&cubic_feedback(&params), &pack, r).unwrap();
        (pack, design)
    }

    #[test]
    fn unit_quadratic_w_gives_closed_form_p_and_q() {
        let tau: f64 = 0.5;
        let c = 9.0 / 8.0;
        let cc = CompletenessCertificate {
            w: Arc::new(|x: &[f64]| 1.0 + x[0] * x[0]),
            grad_w: Arc::new(|x: &[f64], g: &mut [f64]| g[0] = 2.0 * x[0]),
            hessian_envelope: ScalarFn::constant(2.0),
            c,
            p: ClassKInf::quadratic("p", 1.0),
            sublevel_radius: ScalarFn::new(|t: f64| (t - 1.0).max(0.0).sqrt()),
            w_envelope: Some(ScalarFn::new(|s| 1.0 + s * s)),
            a_tau: ClassKInf::linear("a_tau", tau.exp()),
            a_r: ClassKInf::linear("a_r", 1.0),
            m_tau: tau.exp(),
        };
        let growth = ScalarFn::new(|s| 1.0 + s * s);
        let pack = build_bounds_pack(&cc, &growth, tau).unwrap();
        let g = (2.0 * c * tau).exp();
        for s in log_grid(1e-3, 10.0, 20) {
            let l = 1.0 + s * s;
            assert!((pack.p(s) - 2.0 * s * s * l * l).abs() <= 1e-12 * pack.p(s));
            let q = 1.0 + (g * (1.0 + s * s) + (g - 1.0) * s * s / (2.0 * c) - 1.0).sqrt();
            assert!((pack.q(s) - q).abs() <= 1e-12 * q);
        }
        assert!(pack.a(0.0) >= 1.0);
        assert!((pack.a(0.0) - growth.eval(pack.q(0.0))).abs() < 1e-15);
    }

    #[test]
    fn missing_envelope_is_an_error() {
        let mut cc = cubic_completeness(&CubicParams::default(), 0.5, 0.25);
        cc.w_envelope = None;
        assert!(build_bounds_pack(&cc, cubic_system().growth(), 0.5).is_err());
    }

    #[test]
    fn quadratic_forms_give_quarter_eps_squared() {
        let mut fc = cubic_feedback(&CubicParams::default());
        for eps in [0.1, 0.4, 1.3] {
            fc.eps = eps;
            let cc = cubic_completeness(&CubicParams::default(), 0.5, 0.25);
            let pack = build_bounds_pack(&cc, cubic_system().growth(), 0.5).unwrap();
            let d = derive_design(&fc, &pack, 0.25).unwrap();
            assert!((d.delta - eps * eps / 4.0).abs() <= 1e-9 * eps * eps, "eps={eps}");
        }
    }

    #[test]
    fn rtilde_respects_first_bound_when_k1_equals_k2() {
        let (_, d) = cubic_design(0.5, 0.25);
        let fc = d.feedback_certificate();
        assert!(d.rtilde <= RTILDE_MARGIN / fc.k4 + 1e-15);
        let c = d.constraint_report().unwrap();
        assert!(c.hold(d.gamma), "{c:?}");
    }

    #[test]
    fn cubic_pipeline_is_positive_and_consistent() {
        let (pack, d) = cubic_design(0.5, 0.25);
        assert!(d.delta > 0.0 && d.gamma > 0.0 && d.rtilde > 0.0);
        // beyond s = 1 the first branch falls below the smallest double
        for s in log_grid(1e-3, 1.0, 60) {
            let r = d.accuracy(s).unwrap();
            assert!(r > 0.0 && r <= d.rtilde * s * (1.0 + 1e-15), "s={s}");
        }
        assert_eq!(d.accuracy(0.0).unwrap(), 0.0);
        assert!(pack.monotonicity(1e-6, 1e3, 1000).iter().all(|(_, ok)| *ok));
        assert!(d.monotonicity(1e-6, 1e3, 1000).unwrap().iter().all(|(_, ok)| *ok));
        assert!(pack.q(0.0) >= 1.0);
    }

    #[test]
    fn small_signal_slope_matches_liminf() {
        let (_, d) = cubic_design(0.5, 0.25);
        let s_small = d.small_signal_threshold().unwrap();
        assert!(s_small > 0.0);
        let bound = RTILDE_MARGIN * d.liminf_ratio();
        for s in log_grid(1e-6 * s_small, s_small, 50) {
            assert!(d.accuracy(s).unwrap() / s >= bound, "s={s}");
        }
    }

    #[test]
    fn larger_hessian_envelope_never_shrinks_p() {
        let params = CubicParams::default();
        let cc = cubic_completeness(&params, 0.5, 0.25);
        let mut wider = cc.clone();
        let h = cc.hessian_envelope.clone();
        wider.hessian_envelope = ScalarFn::new(move |s| 1.5 * h.eval(s) + s);
        let growth = cubic_system().growth().clone();
        let a = build_bounds_pack(&cc, &growth, 0.5).unwrap();
        let b = build_bounds_pack(&wider, &growth, 0.5).unwrap();
        for s in log_grid(1e-4, 100.0, 100) {
            assert!(b.p(s) >= a.p(s));
        }
    }

    #[test]
    fn cubic_certificates_validate() {
        let params = CubicParams::default();
        let sys = cubic_system();
        let cc = cubic_completeness(&params, 0.5, 0.25);
        let rep = cc.validate(&sys, 0.5, 4000, 5.0, 7);
        assert!(rep.passes, "{:?}", rep.failures());
        let fc = cubic_feedback(&params);
        let rep = fc.validate(&sys, 4000, 5.0, 7);
        assert!(rep.passes, "{:?}", rep.failures());
    }

    #[test]
    fn broken_certificate_is_detected() {
        let params = CubicParams::default();
        let sys = cubic_system();
        let mut cc = cubic_completeness(&params, 0.5, 0.25);
        cc.c = 0.01;
        let rep = cc.validate(&sys, 0.5, 2000, 5.0, 7);
        assert!(rep.failures().contains(&"grad W . f <= c W + p(|u|)"));
        let mut fc = cubic_feedback(&params);
        fc.mu = 10.0;
        let rep = fc.validate(&sys, 2000, 5.0, 7);
        assert!(!rep.passes);
    }
}
