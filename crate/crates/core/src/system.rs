//! Plant and feedback abstractions, plus sampling validation of the growth
//! envelope `L`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::func::ScalarFn;
use crate::linear::spectral_norm;

/// `(x, u, out)`: writes `f(x, u)` into `out`.
pub type VectorField = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(x, out)`: writes `k(x)` into `out`.
pub type FeedbackLaw = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

const ORIGIN_TOL: f64 = 1e-12;
const ENVELOPE_TOL: f64 = 1e-9;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A time-invariant plant `x' = f(x, u)` with a nominal feedback `u = k(x)`
/// and a growth envelope `L >= 1`.
#[derive(Clone)]
pub struct NonlinearSystem {
    name: String,
    n: usize,
    m: usize,
    f: VectorField,
    k: FeedbackLaw,
    growth: ScalarFn,
}

impl fmt::Debug for NonlinearSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .finish()
    }
}

impl NonlinearSystem {
    /// Builds a system, checking `f(0,0) = 0`, `k(0) = 0` and `L >= 1` on a
    /// sample grid.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m: usize,
        f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        k: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        growth: ScalarFn,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument(
                "state and input dimensions must be positive".into(),
            ));
        }
        let sys = NonlinearSystem {
            name: name.into(),
            n,
            m,
            f: Arc::new(f),
            k: Arc::new(k),
            growth,
        };
        let f00 = sys.eval_dynamics(&vec![0.0; n], &vec![0.0; m])?;
        if norm(&f00) > ORIGIN_TOL {
            return Err(Error::InvalidArgument(format!("f(0,0) = {f00:?} is not zero")));
        }
        let k0 = sys.feedback(&vec![0.0; n])?;
        if norm(&k0) > ORIGIN_TOL {
            return Err(Error::InvalidArgument(format!("k(0) = {k0:?} is not zero")));
        }
        let mut probes = vec![0.0];
        probes.extend(crate::func::log_grid(1e-6, 1e4, 100));
        for s in probes {
            let l = sys.growth.eval(s);
            if !(l >= 1.0) {
                return Err(Error::InvalidArgument(format!("growth envelope L({s}) = {l} < 1")));
            }
        }
        Ok(sys)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn growth(&self) -> &ScalarFn {
        &self.growth
    }

    /// Unchecked hot-path evaluation of `f(x, u)` into `out`.
    #[inline]
    pub fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.f)(x, u, out)
    }

    #[inline]
    pub fn feedback_into(&self, x: &[f64], out: &mut [f64]) {
        (self.k)(x, out)
    }

    pub fn eval_dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        if u.len() != self.m {
            return Err(Error::DimensionMismatch {
                what: "input",
                expected: self.m,
                got: u.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        self.eval_into(x, u, &mut out);
        Ok(out)
    }

    pub fn feedback(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let mut out = vec![0.0; self.m];
        self.feedback_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Falsification check of the Lipschitz and linear-growth inequalities
    /// by sampling `x, y, u` uniformly in a ball, plus the origin and the
    /// axis-aligned unit vectors.
    pub fn check_growth_envelope(&self, sample_count: usize, radius: f64, seed: u64) -> GrowthReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = GrowthReport::default();
        let mut fx = vec![0.0; self.n];
        let mut fy = vec![0.0; self.n];

        let mut special_x = vec![vec![0.0; self.n]];
        for i in 0..self.n {
            let mut e = vec![0.0; self.n];
            e[i] = 1.0;
            special_x.push(e);
        }
        let mut special_u = vec![vec![0.0; self.m]];
        for i in 0..self.m {
            let mut e = vec![0.0; self.m];
            e[i] = 1.0;
            special_u.push(e);
        }
        for x in &special_x {
            for y in &special_x {
                for u in &special_u {
                    self.score_triple(x, y, u, &mut fx, &mut fy, &mut report);
                }
            }
        }
        for _ in 0..sample_count {
            let x = sample_ball(&mut rng, self.n, radius);
            let y = sample_ball(&mut rng, self.n, radius);
            let u = sample_ball(&mut rng, self.m, radius);
            self.score_triple(&x, &y, &u, &mut fx, &mut fy, &mut report);
        }
        report.passes = report.lipschitz_ratio <= 1.0 + ENVELOPE_TOL && report.growth_ratio <= 1.0 + ENVELOPE_TOL;
        report
    }

    fn score_triple(&self, x: &[f64], y: &[f64], u: &[f64], fx: &mut [f64], fy: &mut [f64], report: &mut GrowthReport) {
        report.samples += 1;
        self.eval_into(x, u, fx);
        self.eval_into(y, u, fy);
        let (nx, ny, nu) = (norm(x), norm(y), norm(u));

        let dxy = dist(x, y);
        if dxy > 0.0 {
            let lhs = dist(fx, fy);
            let rhs = self.growth.eval(nx + ny + nu) * dxy;
            let ratio = lhs / rhs;
            if ratio > report.lipschitz_ratio {
                report.lipschitz_ratio = ratio;
                report.worst_lipschitz = Some((x.to_vec(), y.to_vec(), u.to_vec()));
            }
        }

        let lhs = norm(fx);
        let rhs = (nx + nu) * self.growth.eval(nx + nu);
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs <= ORIGIN_TOL {
            0.0
        } else {
            f64::INFINITY
        };
        if ratio > report.growth_ratio {
            report.growth_ratio = ratio;
            report.worst_growth = Some((x.to_vec(), u.to_vec()));
        }
    }
}

/// Maximum observed `lhs / rhs` per growth inequality.
#[derive(Debug, Clone, Default, Serialize)]
pub struct GrowthReport {
    pub samples: usize,
    pub lipschitz_ratio: f64,
    pub growth_ratio: f64,
    pub passes: bool,
    pub worst_lipschitz: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    pub worst_growth: Option<(Vec<f64>, Vec<f64>)>,
}

/// Uniform sample from the closed Euclidean ball of the given radius.
pub(crate) fn sample_ball<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
    let len = norm(&v);
    let scale = if len > 0.0 {
        radius * rng.random::<f64>().powf(1.0 / dim as f64) / len
    } else {
        0.0
    };
    v.iter_mut().for_each(|a| *a *= scale);
    v
}

pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; 1 - U keeps the log argument in (0, 1]
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `x' = Ax + Bu(t - tau)` with linear feedback `u = Kx`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub tau: f64,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, k: DMatrix<f64>, tau: f64) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::InvalidArgument("A must be square and nonempty".into()));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                what: "rows of B",
                expected: n,
                got: b.nrows(),
            });
        }
        let m = b.ncols();
        if k.nrows() != m || k.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "K must be {m}x{n}, got {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidArgument(format!("delay must be positive, got {tau}")));
        }
        if a.iter().chain(b.iter()).chain(k.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(LinearSystem { a, b, k, tau })
    }

    /// Scalar plant `x' = a x + b u(t - tau)`, `u = k x`.
    pub fn scalar(a: f64, b: f64, k: f64, tau: f64) -> Result<Self> {
        LinearSystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, k),
            tau,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a + &self.b * &self.k
    }
}

/// Views a linear system as a nonlinear one with constant envelope
/// `L = max(1, |A| + |B|)`.
pub fn linear_as_nonlinear(lin: &LinearSystem) -> Result<NonlinearSystem> {
    let n = lin.state_dim();
    let m = lin.input_dim();
    let envelope = (spectral_norm(&lin.a)? + spectral_norm(&lin.b)?).max(1.0);
    let (a, b, k) = (lin.a.clone(), lin.b.clone(), lin.k.clone());
    NonlinearSystem::new(
        "linear",
        n,
        m,
        move |x, u, out| {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a[(i, j)] * x[j];
                }
                for j in 0..m {
                    acc += b[(i, j)] * u[j];
                }
                out[i] = acc;
            }
        },
        move |x, out| {
            for i in 0..m {
                out[i] = (0..n).map(|j| k[(i, j)] * x[j]).sum();
            }
        },
        ScalarFn::constant(envelope),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    #[test]
    fn cubic_arithmetic() {
        let sys = builtin::cubic_system();
        assert_eq!(sys.eval_dynamics(&[2.0], &[0.0]).unwrap(), vec![-6.0]);
        assert_eq!(sys.eval_dynamics(&[0.0], &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(sys.feedback(&[1.5]).unwrap(), vec![-3.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let sys = builtin::cubic_system();
        assert!(matches!(
            sys.eval_dynamics(&[1.0, 2.0], &[0.0]),
            Err(Error::DimensionMismatch { what: "state", .. })
        ));
        assert!(matches!(
            sys.eval_dynamics(&[1.0], &[]),
            Err(Error::DimensionMismatch { what: "input", .. })
        ));
    }

    #[test]
    fn double_integrator_zero_velocity() {
        let lin = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[-1.0, -2.0]),
            1.0,
        )
        .unwrap();
        let sys = linear_as_nonlinear(&lin).unwrap();
        assert_eq!(sys.eval_dynamics(&[1.0, 0.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_linear_view() {
        let sys = linear_as_nonlinear(&LinearSystem::scalar(1.0, 1.0, -2.0, 1.0).unwrap()).unwrap();
        assert_eq!(sys.eval_dynamics(&[3.0], &[1.0]).unwrap(), vec![4.0]);
        assert_eq!(sys.feedback(&[3.0]).unwrap(), vec![-6.0]);
    }

    #[test]
    fn zero_linear_system_has_unit_envelope() {
        let sys = linear_as_nonlinear(&LinearSystem::scalar(0.0, 0.0, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!(sys.growth().eval(5.0), 1.0);
        assert_eq!(sys.eval_dynamics(&[3.0], &[7.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn rejects_nonzero_origin() {
        let err = NonlinearSystem::new(
            "shifted",
            1,
            1,
            |x, u, out| out[0] = x[0] + u[0] + 1.0,
            |_, out| out[0] = 0.0,
            ScalarFn::constant(1.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn rejects_envelope_below_one() {
        let err = NonlinearSystem::new(
            "lin",
            1,
            1,
            |x, u, out| out[0] = x[0] + u[0],
            |_, out| out[0] = 0.0,
            ScalarFn::constant(0.5),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn zero_system_passes_envelope_check() {
        let sys = builtin::zero_system(1, 1);
        assert!(sys.check_growth_envelope(1000, 10.0, 3).passes);
    }

    #[test]
    fn cubic_with_quadratic_envelope_passes() {
        let sys = builtin::cubic_system_with_envelope(ScalarFn::new(|s| 1.0 + s * s));
        let report = sys.check_growth_envelope(10_000, 10.0, 11);
        assert!(report.passes, "{report:?}");
    }

    #[test]
    fn cubic_with_unit_envelope_fails() {
        let sys = builtin::cubic_system_with_envelope(ScalarFn::constant(1.0));
        let report = sys.check_growth_envelope(10_000, 10.0, 11);
        assert!(!report.passes);
        let (x, _, _) = report.worst_lipschitz.unwrap();
        assert!(norm(&x) > 1.0);
    }

    #[test]
    fn envelope_check_is_deterministic() {
        let sys = builtin::cubic_system();
        let a = sys.check_growth_envelope(500, 3.0, 99);
        let b = sys.check_growth_envelope(500, 3.0, 99);
        assert_eq!(a.lipschitz_ratio.to_bits(), b.lipschitz_ratio.to_bits());
        assert_eq!(a.growth_ratio.to_bits(), b.growth_ratio.to_bits());
    }

    #[test]
    fn random_linear_systems_pass_envelope_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=4 {
            for m in 1..=2 {
                let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-3.0..3.0));
                let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-3.0..3.0));
                let k = DMatrix::from_fn(m, n, |_, _| rng.random_range(-3.0..3.0));
                let lin = LinearSystem::new(a, b, k, 1.0).unwrap();
                let sys = linear_as_nonlinear(&lin).unwrap();
                for radius in [0.1, 10.0, 1e3] {
                    assert!(sys.check_growth_envelope(300, radius, 1).passes);
                }
            }
        }
    }
}
