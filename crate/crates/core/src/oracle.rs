//! Fixed-step classical Runge-Kutta reference integrator.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::system::{dist, NonlinearSystem};

/// Scratch space for RK4 steps of an `n`-dimensional ODE.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Rk4 {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    /// Advances `x` from `t` to `t + h` for `x' = rhs(t, x)`.
    #[inline]
    pub fn step(&mut self, mut rhs: impl FnMut(f64, &[f64], &mut [f64]), t: f64, x: &mut [f64], h: f64) {
        let n = x.len();
        rhs(t, x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        rhs(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        rhs(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        rhs(t + h, &self.tmp, &mut self.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    /// State from the run with `2 * steps` steps.
    pub state: Vec<f64>,
    /// `|x_steps - x_{2 steps}|`.
    pub error_estimate: f64,
    pub steps: usize,
}

/// Integrates `x' = f(x, u(t))` on `[t0, t1]` with `steps` RK4 steps and
/// again with `2 * steps`; `input(t, out)` writes `u(t)`.
pub fn rk4_reference(
    sys: &NonlinearSystem,
    x0: &[f64],
    input: impl Fn(f64, &mut [f64]),
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<OracleResult> {
    sys.check_state(x0)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("oracle needs at least one step".into()));
    }
    if !(t1 >= t0) {
        return Err(Error::InvalidArgument(format!("oracle interval [{t0}, {t1}] reversed")));
    }
    let coarse = rk4_run(sys, x0, &input, t0, t1, steps, |_, _| {})?;
    let fine = rk4_run(sys, x0, &input, t0, t1, 2 * steps, |_, _| {})?;
    Ok(OracleResult {
        error_estimate: dist(&coarse, &fine),
        state: fine,
        steps,
    })
}

/// One RK4 run; `visit(i, x_i)` sees every grid state including the first.
pub fn rk4_run(
    sys: &NonlinearSystem,
    x0: &[f64],
    input: &impl Fn(f64, &mut [f64]),
    t0: f64,
    t1: f64,
    steps: usize,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    let h = (t1 - t0) / steps as f64;
    let mut x = x0.to_vec();
    let mut u = vec![0.0; sys.input_dim()];
    let mut rk = Rk4::new(x.len());
    visit(0, &x);
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        rk.step(
            |s, y, out| {
                input(s, &mut u);
                sys.eval_into(y, &u, out);
            },
            t,
            &mut x,
            h,
        );
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteTime { time: t + h });
        }
        visit(i + 1, &x);
    }
    Ok(x)
}
