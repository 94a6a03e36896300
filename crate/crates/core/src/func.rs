//! Scalar function handles used by the certificates and bound functions.

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

/// A shareable `f64 -> f64` function.
#[derive(Clone)]
pub struct ScalarFn(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl ScalarFn {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFn(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        ScalarFn::new(move |_| c)
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.0)(s)
    }
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScalarFn(..)")
    }
}

const INVERSE_REL_TOL: f64 = 1e-12;
const MAX_BRACKET_DOUBLINGS: usize = 1100;

/// Inverts a nondecreasing function on `[0, inf)` by bracketing and bisection.
///
/// Returns the smallest-bracket midpoint `s` with `g(s) ~= y`; fails when `g`
/// never reaches `y` or produces non-finite values.
pub fn invert_monotone(name: &str, g: impl Fn(f64) -> f64, y: f64) -> Result<f64> {
    if !(y.is_finite()) || y < 0.0 {
        return Err(Error::Bracket {
            handle: name.to_string(),
            target: y,
        });
    }
    let g0 = g(0.0);
    if y <= g0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    loop {
        let v = g(hi);
        if !v.is_finite() {
            return Err(Error::Bracket {
                handle: name.to_string(),
                target: y,
            });
        }
        if v >= y {
            break;
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS {
            return Err(Error::Bracket {
                handle: name.to_string(),
                target: y,
            });
        }
    }
    // shrink a too-generous initial bracket from below
    if lo == 0.0 {
        let mut probe = hi;
        for _ in 0..MAX_BRACKET_DOUBLINGS {
            let half = probe * 0.5;
            if half == 0.0 || g(half) >= y {
                probe = half;
            } else {
                lo = half;
                break;
            }
        }
        hi = probe.max(lo);
        if hi == 0.0 {
            return Ok(0.0);
        }
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let v = g(mid);
        if v.is_nan() {
            return Err(Error::Bracket {
                handle: name.to_string(),
                target: y,
            });
        }
        if v < y {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= INVERSE_REL_TOL * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// A class-K-infinity handle with a declared domain limit.
///
/// Beyond `domain_max` the function is continued along the secant over the
/// last percent of its domain, and a warning is logged once.
#[derive(Clone)]
pub struct ClassKInf {
    name: String,
    f: ScalarFn,
    domain_max: f64,
    warned: Arc<AtomicBool>,
}

impl fmt::Debug for ClassKInf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassKInf")
            .field("name", &self.name)
            .field("domain_max", &self.domain_max)
            .finish()
    }
}

impl ClassKInf {
    pub fn new(name: impl Into<String>, domain_max: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ClassKInf {
            name: name.into(),
            f: ScalarFn::new(f),
            domain_max,
            warned: Arc::new(AtomicBool::new(false)),
        }
    }

    /// `s -> slope * s` on the whole half-line.
    pub fn linear(name: impl Into<String>, slope: f64) -> Self {
        ClassKInf::new(name, f64::INFINITY, move |s| slope * s)
    }

    /// `s -> coef * s^2` on the whole half-line.
    pub fn quadratic(name: impl Into<String>, coef: f64) -> Self {
        ClassKInf::new(name, f64::INFINITY, move |s| coef * s * s)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain_max(&self) -> f64 {
        self.domain_max
    }

    pub fn eval(&self, s: f64) -> f64 {
        if s <= self.domain_max {
            return self.f.eval(s);
        }
        if !self.warned.swap(true, Ordering::Relaxed) {
            log::warn!(
                "{}: argument {s} beyond declared domain {}; extending by secant",
                self.name,
                self.domain_max
            );
        }
        let d = self.domain_max;
        let d0 = 0.99 * d;
        let top = self.f.eval(d);
        let slope = (top - self.f.eval(d0)) / (d - d0);
        top + slope * (s - d)
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        invert_monotone(&self.name, |s| self.eval(s), y)
    }

    pub fn as_scalar_fn(&self) -> ScalarFn {
        let me = self.clone();
        ScalarFn::new(move |s| me.eval(s))
    }
}

/// Checks `values` is nondecreasing up to a relative tolerance.
pub(crate) fn is_nondecreasing(values: &[f64], rel_tol: f64) -> bool {
    values
        .windows(2)
        .all(|w| w[1] >= w[0] || w[1] >= w[0] - rel_tol * w[0].abs().max(1.0))
}

/// `count` points logarithmically spaced on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_square() {
        let g = ClassKInf::quadratic("sq", 1.0);
        for y in [0.0, 1e-8, 0.25, 4.0, 1e6] {
            let s = g.inverse(y).unwrap();
            assert!((g.eval(s) - y).abs() <= 1e-10 * y.max(1e-300), "y={y}");
        }
    }

    #[test]
    fn inverse_round_trip_on_log_grid() {
        let g = ClassKInf::new("cubic+lin", f64::INFINITY, |s| s + s.powi(3));
        for y in log_grid(1e-9, 1e9, 200) {
            let s = g.inverse(y).unwrap();
            assert!(((g.eval(s) - y) / y).abs() <= 1e-10);
        }
    }

    #[test]
    fn bounded_function_fails_to_bracket() {
        let err = invert_monotone("sat", |s: f64| s / (1.0 + s), 2.0).unwrap_err();
        assert!(matches!(err, Error::Bracket { ref handle, .. } if handle == "sat"));
    }

    #[test]
    fn secant_extension_beyond_domain() {
        let g = ClassKInf::new("sq", 10.0, |s| s * s);
        assert_eq!(g.eval(10.0), 100.0);
        // slope of the secant over [9.9, 10] is 19.9
        assert!((g.eval(11.0) - (100.0 + 19.9)).abs() < 1e-9);
    }
}
