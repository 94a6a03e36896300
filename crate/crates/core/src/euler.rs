//! Explicit Euler scheme with inputs, the predictor built on it, the grid
//! count that certifies its accuracy, and runtime checks of the intermediate
//! estimates along a run.

use serde::Serialize;

use crate::design::BoundsPack;
use crate::error::{Error, Result};
use crate::func::ScalarFn;
use crate::history::{InputHistory, InputWindow};
use crate::oracle::rk4_run;
use crate::system::{dist, norm, NonlinearSystem};

/// Default cap on the number of Euler steps per prediction.
pub const DEFAULT_N_MAX: u64 = 10_000_000;

/// Number of Euler steps for data of size `x0_norm + u_sup`, capped at
/// [`DEFAULT_N_MAX`].
pub fn grid_count(pack: &BoundsPack, accuracy: &ScalarFn, x0_norm: f64, u_sup: f64) -> Result<u64> {
    grid_count_capped(pack, accuracy, x0_norm, u_sup, DEFAULT_N_MAX)
}

/// `1 + floor(tau * max(B(s)(e^{tau A(s)} - 1) / (2 R(s) A(s)), P(Q(s) + u) / (2c)))`
/// for `s = x0_norm + u_sup > 0`, and 1 at the origin.
pub fn grid_count_capped(pack: &BoundsPack, accuracy: &ScalarFn, x0_norm: f64, u_sup: f64, n_max: u64) -> Result<u64> {
    if !(x0_norm >= 0.0) || !(u_sup >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "norms must be nonnegative, got {x0_norm} and {u_sup}"
        )));
    }
    let s = x0_norm + u_sup;
    if s == 0.0 {
        return Ok(1);
    }
    let target = accuracy.eval(s);
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "accuracy target R({s}) = {target} is not positive"
        )));
    }
    let tau = pack.tau();
    let a = pack.a(s);
    let accuracy_branch = pack.b(s) * (tau * a).exp_m1() / (2.0 * target * a);
    let stability_branch = pack.p(pack.q(s) + u_sup) / (2.0 * pack.c());
    let required = (tau * accuracy_branch.max(stability_branch)).floor() + 1.0;
    if !required.is_finite() || required > n_max as f64 {
        return Err(Error::GridCountExceeded { required, cap: n_max });
    }
    Ok(required as u64)
}

/// Right-hand side of the a-priori error bound for `n_grid` steps.
pub fn apriori_bound(pack: &BoundsPack, s: f64, n_grid: u64) -> f64 {
    let tau = pack.tau();
    let a = pack.a(s);
    tau * pack.b(s) * (tau * a).exp_m1() / (2.0 * n_grid as f64 * a)
}

fn check_window(sys: &NonlinearSystem, x0: &[f64], window: &InputWindow, n_grid: u64) -> Result<()> {
    sys.check_state(x0)?;
    if window.input_dim() != sys.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "input window",
            expected: sys.input_dim(),
            got: window.input_dim(),
        });
    }
    if n_grid == 0 {
        return Err(Error::InvalidArgument("grid count must be positive".into()));
    }
    Ok(())
}

/// Runs the scheme over the window and calls `visit(i, x_i)` for
/// `i = 0..=N`. Returns `x_N`.
pub fn euler_visit(
    sys: &NonlinearSystem,
    x0: &[f64],
    window: &InputWindow,
    n_grid: u64,
    mut visit: impl FnMut(u64, &[f64]),
) -> Result<Vec<f64>> {
    check_window(sys, x0, window, n_grid)?;
    let n = sys.state_dim();
    let m = sys.input_dim();
    let tau = window.len();
    let h = tau / n_grid as f64;
    let mut x = x0.to_vec();
    let mut incr = vec![0.0; n];
    let mut fp = vec![0.0; n];
    let mut fq = vec![0.0; n];
    let mut up = vec![0.0; m];
    let mut uq = vec![0.0; m];
    let mut cursor = 0;
    visit(0, &x);
    for i in 0..n_grid {
        let a = i as f64 * h;
        let b = if i + 1 == n_grid { tau } else { (i + 1) as f64 * h };
        incr.iter_mut().for_each(|v| *v = 0.0);
        window.pieces(a, b, &mut cursor, &mut up, &mut uq, |len, p, q| {
            sys.eval_into(&x, p, &mut fp);
            sys.eval_into(&x, q, &mut fq);
            for k in 0..n {
                incr[k] += 0.5 * len * (fp[k] + fq[k]);
            }
        });
        for k in 0..n {
            x[k] += incr[k];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteStep { step: i as usize + 1 });
        }
        visit(i + 1, &x);
    }
    Ok(x)
}

/// The states `x_0, ..., x_N` of the scheme with `h = len(window) / N`.
pub fn euler_trajectory(sys: &NonlinearSystem, x0: &[f64], window: &InputWindow, n_grid: u64) -> Result<Vec<Vec<f64>>> {
    let mut states = Vec::with_capacity(n_grid as usize + 1);
    euler_visit(sys, x0, window, n_grid, |_, x| states.push(x.to_vec()))?;
    Ok(states)
}

/// One prediction and the quantities that certify it.
#[derive(Debug, Clone, Serialize)]
pub struct PredictorOutput {
    pub z: Vec<f64>,
    #[serde(rename = "N")]
    pub n: u64,
    pub h: f64,
    pub apriori_bound: f64,
    pub accuracy_target: f64,
    /// `min(R(s) + a_tau(s), Q(s))`.
    pub state_bound: f64,
}

/// Predictor configuration: plant, bound functions, accuracy target and cap.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub sys: NonlinearSystem,
    pub pack: BoundsPack,
    pub accuracy: ScalarFn,
    pub n_max: u64,
}

impl Predictor {
    pub fn new(sys: NonlinearSystem, pack: BoundsPack, accuracy: ScalarFn) -> Self {
        Predictor {
            sys,
            pack,
            accuracy,
            n_max: DEFAULT_N_MAX,
        }
    }

    /// Predicts `tau` ahead from `x0` and a re-based input window. With
    /// `forced_n` the grid count is overridden and the bound reported for it.
    pub fn predict_window(&self, x0: &[f64], window: &InputWindow, forced_n: Option<u64>) -> Result<PredictorOutput> {
        if (window.len() - self.pack.tau()).abs() > 1e-12 * self.pack.tau() {
            return Err(Error::InvalidArgument(format!(
                "window length {} differs from the delay {}",
                window.len(),
                self.pack.tau()
            )));
        }
        self.sys.check_state(x0)?;
        let x0_norm = norm(x0);
        let u_sup = window.sup_norm();
        let s = x0_norm + u_sup;
        let n_grid = match forced_n {
            Some(n) => n,
            None => grid_count_capped(&self.pack, &self.accuracy, x0_norm, u_sup, self.n_max)?,
        };
        let z = euler_visit(&self.sys, x0, window, n_grid, |_, _| {})?;
        let accuracy_target = if s > 0.0 { self.accuracy.eval(s) } else { 0.0 };
        let bound = if s > 0.0 {
            apriori_bound(&self.pack, s, n_grid)
        } else {
            0.0
        };
        Ok(PredictorOutput {
            z,
            n: n_grid,
            h: self.pack.tau() / n_grid as f64,
            apriori_bound: bound,
            accuracy_target,
            state_bound: (accuracy_target + self.pack.a_tau(s)).min(self.pack.q(s)),
        })
    }

    /// Predicts from the open history `[t - tau, t)`.
    pub fn predict(&self, x0: &[f64], hist: &InputHistory, t: f64) -> Result<PredictorOutput> {
        let window = hist.window_at(t)?;
        self.predict_window(x0, &window, None)
    }
}

/// Free-function form of [`Predictor::predict`] with the default cap.
pub fn predict(
    sys: &NonlinearSystem,
    pack: &BoundsPack,
    accuracy: &ScalarFn,
    x0: &[f64],
    hist: &InputHistory,
    t: f64,
) -> Result<PredictorOutput> {
    Predictor::new(sys.clone(), pack.clone(), accuracy.clone()).predict(x0, hist, t)
}

/// RK4 solution of the plant at the Euler grid points, with `substeps` RK4
/// steps per Euler step; the budget is the largest difference from a run
/// with half as many steps.
pub fn reference_on_grid(
    sys: &NonlinearSystem,
    x0: &[f64],
    window: &InputWindow,
    n_grid: u64,
    substeps: usize,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let substeps = substeps.max(2) & !1;
    let input = |s: f64, out: &mut [f64]| window.value_into(s, out);
    let total = n_grid as usize * substeps;
    let mut fine = Vec::with_capacity(n_grid as usize + 1);
    rk4_run(sys, x0, &input, 0.0, window.len(), total, |i, x| {
        if i % substeps == 0 {
            fine.push(x.to_vec());
        }
    })?;
    let half = substeps / 2;
    let mut budget: f64 = 0.0;
    let mut j = 0;
    rk4_run(sys, x0, &input, 0.0, window.len(), total / 2, |i, x| {
        if i % half == 0 {
            budget = budget.max(dist(x, &fine[j]));
            j += 1;
        }
    })?;
    Ok((fine, budget))
}

/// Worst normalized slack `(rhs - lhs) / max(1, |rhs|)` per inequality.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub steps: u64,
    pub h: f64,
    pub s: f64,
    /// Growth of `W` along the iterates against the integrated bound.
    pub w_growth_slack: f64,
    /// Error recursion bound against the measured global error.
    pub error_slack: f64,
    /// `Q(s) - |x_i|`.
    pub state_slack: f64,
    pub oracle_budget: f64,
    pub passes: bool,
}

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

fn slack(lhs: f64, rhs: f64) -> f64 {
    (rhs - lhs) / rhs.abs().max(1.0)
}

/// Checks, at every Euler step of `states` (from [`euler_trajectory`]),
/// the integrated growth bound on `W`, the recursive error bound against
/// `reference` (plus `oracle_budget`), and `|x_i| <= Q(s)`.
pub fn lemma_oracles(
    sys: &NonlinearSystem,
    pack: &BoundsPack,
    window: &InputWindow,
    states: &[Vec<f64>],
    reference: &[Vec<f64>],
    oracle_budget: f64,
) -> Result<OracleReport> {
    if states.len() < 2 || reference.len() != states.len() {
        return Err(Error::InvalidArgument(format!(
            "need matching runs, got {} states and {} reference points",
            states.len(),
            reference.len()
        )));
    }
    let n_grid = (states.len() - 1) as u64;
    let tau = pack.tau();
    let h = tau / n_grid as f64;
    let u_sup = window.sup_norm();
    let s = norm(&states[0]) + u_sup;
    let c = pack.c();
    let q = pack.q(s);
    let step_cap = 2.0 * c / pack.p(q + u_sup);
    if h > step_cap {
        return Err(Error::StepTooLarge { h, bound: step_cap });
    }
    let cert = pack.certificate();
    let a = pack.a(s);
    let b = pack.b(s);
    let eha = (h * a).exp_m1();

    let mut up = vec![0.0; sys.input_dim()];
    let mut uq = vec![0.0; sys.input_dim()];
    let mut u = vec![0.0; sys.input_dim()];
    let mut cursor = 0;
    let mut level = (cert.w)(&states[0]);
    let mut w_slack = f64::INFINITY;
    let mut e_slack = f64::INFINITY;
    let mut x_slack = slack(norm(&states[0]), q);
    for i in 1..=n_grid as usize {
        let lo = (i - 1) as f64 * h;
        let hi = if i as u64 == n_grid { tau } else { i as f64 * h };
        let mut inflow = 0.0;
        let mut pos = lo;
        window.pieces(lo, hi, &mut cursor, &mut up, &mut uq, |len, p, qv| {
            for (node, weight) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
                let w = 0.5 * (node + 1.0);
                for k in 0..u.len() {
                    u[k] = p[k] * (1.0 - w) + qv[k] * w;
                }
                let discount = (2.0 * c * (hi - (pos + w * len))).exp();
                inflow += 0.5 * len * weight * discount * cert.p.eval(norm(&u));
            }
            pos += len;
        });
        level = (2.0 * c * (hi - lo)).exp() * level + inflow;
        w_slack = w_slack.min(slack((cert.w)(&states[i]), level));

        let t = i as f64 * h;
        let err_bound = if eha > 0.0 {
            0.5 * h * h * b * (t * a).exp_m1() / eha
        } else {
            0.0
        };
        e_slack = e_slack.min(slack(dist(&states[i], &reference[i]), err_bound + oracle_budget));
        x_slack = x_slack.min(slack(norm(&states[i]), q));
    }
    let passes = w_slack >= -1e-12 && e_slack >= 0.0 && x_slack >= 0.0;
    Ok(OracleReport {
        steps: n_grid,
        h,
        s,
        w_growth_slack: w_slack,
        error_slack: e_slack,
        state_slack: x_slack,
        oracle_budget,
        passes,
    })
}
