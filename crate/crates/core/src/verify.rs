//! Seeded bound-dominance sweeps: the linear Euler error bound and the
//! nonlinear a-priori bound, state bound and step-wise estimates, each
//! measured against the RK4 reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::design::BoundsPack;
use crate::error::Result;
use crate::euler::{euler_trajectory, lemma_oracles, reference_on_grid, Predictor};
use crate::func::ScalarFn;
use crate::history::InputWindow;
use crate::linear::{linear_error_bound, linear_predict_window, spectral_norm};
use crate::oracle::rk4_reference;
use crate::system::{dist, linear_as_nonlinear, norm, LinearSystem, NonlinearSystem};

/// Random continuous piecewise-linear input on `[0, len]` whose largest
/// knot norm, and hence its sup norm, equals `amp`.
pub fn random_pwl_window(rng: &mut impl Rng, m: usize, len: f64, amp: f64) -> Result<InputWindow> {
    let knots = rng.random_range(1..=8usize);
    let mut times: Vec<f64> = (0..knots).map(|_| rng.random_range(0.0..len)).collect();
    times.push(0.0);
    times.push(len);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut samples: Vec<(f64, Vec<f64>)> = times
        .into_iter()
        .map(|t| (t, (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect()))
        .collect();
    let peak = samples.iter().map(|(_, u)| norm(u)).fold(0.0, f64::max);
    let scale = if peak > 0.0 { amp / peak } else { 0.0 };
    for (_, u) in &mut samples {
        u.iter_mut().for_each(|v| *v *= scale);
    }
    InputWindow::from_samples(&samples)
}

/// One linear case and its outcome.
#[derive(Debug, Clone, Serialize)]
pub struct LinearCase {
    /// `|A|` and `|B|`; the signed entries for random scalar cases.
    pub a: f64,
    pub b: f64,
    #[serde(rename = "N")]
    pub n: u64,
    pub x0: Vec<f64>,
    pub u_sup: f64,
    pub error: f64,
    pub oracle_budget: f64,
    pub bound: f64,
    /// `bound + oracle_budget - error`.
    pub slack: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearSweepReport {
    pub cases: Vec<LinearCase>,
    pub violations: usize,
    pub min_slack: f64,
}

/// Which plants the linear sweep draws.
#[derive(Debug, Clone)]
pub enum LinearCases {
    /// Scalar `x' = a x + b u` with `|a|, |b| <= 2` and delay 1.
    RandomScalar,
    /// A fixed plant with random data.
    Fixed(LinearSystem),
}

/// `N in {8, 16, ..., 256}`, `|x0| <= 1` and inputs with sup norm at most
/// 1; the Euler error is compared with the a-priori bound.
pub fn linear_bound_sweep(
    plants: &LinearCases,
    cases: usize,
    seed: u64,
    oracle_steps: usize,
) -> Result<LinearSweepReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = (0..cases)
        .map(|_| {
            let lin = match plants {
                LinearCases::RandomScalar => {
                    let a = rng.random_range(-2.0..=2.0);
                    let b = rng.random_range(-2.0..=2.0);
                    LinearSystem::scalar(a, b, 0.0, 1.0)?
                }
                LinearCases::Fixed(lin) => lin.clone(),
            };
            let n = 8u64 << rng.random_range(0..6u32);
            let dir: Vec<f64> = (0..lin.state_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let scale = rng.random_range(0.0..=1.0) / norm(&dir).max(1.0);
            let x0: Vec<f64> = dir.iter().map(|v| v * scale).collect();
            let amp = rng.random_range(0.0..=1.0);
            let w = random_pwl_window(&mut rng, lin.input_dim(), lin.tau, amp)?;
            Ok((lin, n, x0, w))
        })
        .collect::<Result<Vec<_>>>()?;
    let results = draws
        .into_par_iter()
        .map(|(lin, n, x0, w)| {
            let sys = linear_as_nonlinear(&lin)?;
            let z = linear_predict_window(&lin, &x0, &w, n)?;
            let exact = rk4_reference(&sys, &x0, |t, u| w.value_into(t, u), 0.0, lin.tau, oracle_steps)?;
            let error = dist(&z, &exact.state);
            let u_sup = w.sup_norm();
            let a = spectral_norm(&lin.a)?;
            let b = spectral_norm(&lin.b)?;
            let bound = linear_error_bound(a, b, lin.tau, n, norm(&x0), u_sup);
            let (a, b) = match plants {
                LinearCases::RandomScalar => (lin.a[(0, 0)], lin.b[(0, 0)]),
                LinearCases::Fixed(_) => (a, b),
            };
            Ok(LinearCase {
                a,
                b,
                n,
                x0,
                u_sup,
                error,
                oracle_budget: exact.error_estimate,
                bound,
                slack: bound + exact.error_estimate - error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = results.iter().filter(|c| !(c.slack >= 0.0)).count();
    let min_slack = min_of(results.iter().map(|c| c.slack));
    Ok(LinearSweepReport {
        cases: results,
        violations,
        min_slack,
    })
}

/// One nonlinear case and its outcome.
#[derive(Debug, Clone, Serialize)]
pub struct NonlinearCase {
    pub x0: Vec<f64>,
    pub u_sup: f64,
    pub s: f64,
    #[serde(rename = "N")]
    pub n: u64,
    pub error: f64,
    pub oracle_budget: f64,
    pub apriori_bound: f64,
    /// `apriori_bound + oracle_budget - error`.
    pub apriori_slack: f64,
    /// `Q(s) - max_i |x_i|`.
    pub state_slack: f64,
    pub w_growth_slack: f64,
    pub error_recursion_slack: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NonlinearSweepReport {
    pub cases: Vec<NonlinearCase>,
    pub violations: usize,
    pub min_apriori_slack: f64,
    pub min_state_slack: f64,
    pub min_w_growth_slack: f64,
    pub min_error_recursion_slack: f64,
    pub max_n: u64,
}

/// Settings of [`nonlinear_bound_sweep`].
#[derive(Debug, Clone)]
pub struct NonlinearSweep {
    pub cases: usize,
    pub seed: u64,
    /// Data sizes `|x0| + |u|` are drawn from `[0, s_max]`.
    pub s_max: f64,
    /// Lower bound on the reference run's RK4 steps over the horizon.
    pub oracle_steps: usize,
}

fn min_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::INFINITY, f64::min)
}

/// Predicts random cases with the grid count for `accuracy` and checks the
/// a-priori bound on the final error, `|x_i| <= Q(s)` and the step-wise
/// estimates along every run.
pub fn nonlinear_bound_sweep(
    sys: &NonlinearSystem,
    pack: &BoundsPack,
    accuracy: &ScalarFn,
    cfg: &NonlinearSweep,
) -> Result<NonlinearSweepReport> {
    let tau = pack.tau();
    let n = sys.state_dim();
    let m = sys.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draws = (0..cfg.cases)
        .map(|_| {
            let s = rng.random_range(0.0..=cfg.s_max);
            let split = rng.random_range(0.0..=1.0);
            let dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let dn = norm(&dir);
            let x0: Vec<f64> = if dn > 0.0 {
                dir.iter().map(|v| v / dn * split * s).collect()
            } else {
                vec![0.0; n]
            };
            let w = random_pwl_window(&mut rng, m, tau, (1.0 - split) * s)?;
            Ok((x0, w))
        })
        .collect::<Result<Vec<_>>>()?;
    let predictor = Predictor::new(sys.clone(), pack.clone(), accuracy.clone());
    let cases = draws
        .into_par_iter()
        .map(|(x0, w)| {
            let out = predictor.predict_window(&x0, &w, None)?;
            let states = euler_trajectory(sys, &x0, &w, out.n)?;
            let substeps = (2 * cfg.oracle_steps.div_ceil(out.n as usize)).max(4);
            let (reference, budget) = reference_on_grid(sys, &x0, &w, out.n, substeps)?;
            let rep = lemma_oracles(sys, pack, &w, &states, &reference, budget)?;
            let error = dist(&out.z, &reference[reference.len() - 1]);
            let u_sup = w.sup_norm();
            let s = norm(&x0) + u_sup;
            let q = pack.q(s);
            let state_slack = min_of(states.iter().map(|x| q - norm(x)));
            let apriori_slack = out.apriori_bound + budget - error;
            Ok(NonlinearCase {
                x0,
                u_sup,
                s,
                n: out.n,
                error,
                oracle_budget: budget,
                apriori_bound: out.apriori_bound,
                apriori_slack,
                state_slack,
                w_growth_slack: rep.w_growth_slack,
                error_recursion_slack: rep.error_slack,
                passes: apriori_slack >= 0.0 && state_slack >= 0.0 && rep.passes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NonlinearSweepReport {
        violations: cases.iter().filter(|c| !c.passes).count(),
        min_apriori_slack: min_of(cases.iter().map(|c| c.apriori_slack)),
        min_state_slack: min_of(cases.iter().map(|c| c.state_slack)),
        min_w_growth_slack: min_of(cases.iter().map(|c| c.w_growth_slack)),
        min_error_recursion_slack: min_of(cases.iter().map(|c| c.error_recursion_slack)),
        max_n: cases.iter().map(|c| c.n).max().unwrap_or(0),
        cases,
    })
}
