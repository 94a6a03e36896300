//! C ABI over `delaypred`.
//!
//! Objects cross the boundary as opaque handles created by a `*_new`
//! function and released by the matching `*_free`. Every fallible call
//! returns a [`DpStatus`]; on failure the message is kept per thread and can
//! be copied out with [`dp_last_error_message`]. Matrices are dense and
//! row-major. Panics never unwind into the caller; they surface as
//! [`DpStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use delaypred::cli::{run, Overrides};
use delaypred::history::InputHistory;
use delaypred::linear::{
    f_value, iss_gain_gamma_with_margin, linear_error_bound, linear_predict, min_grid_count, spectral_norm,
};
use delaypred::sim::{decay_fit, make_schedule, simulate_linear, ScheduleKind, SimOptions, Trajectory};
use delaypred::system::LinearSystem;
use delaypred::Error;
use nalgebra::DMatrix;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// A state or intermediate value became non-finite or overflowed, or an
    /// iteration failed to converge.
    Numeric = 4,
    /// The required Euler grid count exceeds the cap.
    GridCountExceeded = 5,
    /// `A + BK` is not Hurwitz.
    NotHurwitz = 6,
    /// A history query or append fell outside the recorded span.
    Coverage = 7,
    Config = 8,
    Io = 9,
    Panic = 10,
}

/// Sampling schedule families for [`dp_linear_simulate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpSchedule {
    Uniform = 0,
    Jittered = 1,
    SeededRandom = 2,
}

/// Exponential fit `m(t) ~ prefactor * exp(-rate * t)` of a run's tail.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DpDecayFit {
    pub rate: f64,
    pub prefactor: f64,
    /// Largest ratio of `m(t)` to the fitted curve over the fit window.
    pub envelope_ratio: f64,
    /// Nonzero when `m` fell below the fit floor everywhere.
    pub degenerate: i32,
}

/// A linear plant `x' = A x + B u(t - tau)` with nominal feedback `u = K x`.
pub struct DpLinearSystem(LinearSystem);

/// A recorded input signal with a sliding window of length `tau`.
pub struct DpHistory(InputHistory);

/// A simulated closed-loop run.
pub struct DpTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> DpStatus {
    match e {
        Error::DimensionMismatch { .. } => DpStatus::DimensionMismatch,
        Error::InvalidArgument(_) | Error::TooLarge { .. } | Error::TrajectoryTooShort { .. } => {
            DpStatus::InvalidArgument
        }
        Error::HistoryGap { .. } | Error::Coverage { .. } => DpStatus::Coverage,
        Error::GridCountExceeded { .. } => DpStatus::GridCountExceeded,
        Error::NotHurwitz { .. } => DpStatus::NotHurwitz,
        Error::Config(_) => DpStatus::Config,
        Error::Io(_) => DpStatus::Io,
        Error::NonFiniteStep { .. }
        | Error::NonFiniteTime { .. }
        | Error::Bracket { .. }
        | Error::NonConvergence(_)
        | Error::Overflow(_)
        | Error::StepTooLarge { .. } => DpStatus::Numeric,
    }
}

struct Fail(DpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DpStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            DpStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>, Fail> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Fail(DpStatus::InvalidArgument, format!("{what} is too large")))?;
    Ok(DMatrix::from_row_slice(rows, cols, slice(p, len, what)?))
}

fn put<T>(dst: *mut *mut T, value: T) {
    // SAFETY: callers check `dst` for null before building `value`.
    unsafe { *dst = Box::into_raw(Box::new(value)) };
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len` bytes. Returns the buffer size
/// needed for the full message including the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Largest singular value of the `rows x cols` matrix `data`.
///
/// # Safety
/// `data` must point to `rows * cols` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_spectral_norm(data: *const f64, rows: usize, cols: usize, out: *mut f64) -> DpStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        *out = spectral_norm(&matrix(data, rows, cols, "data")?)?;
        Ok(())
    })
}

/// Creates a linear plant from `A` (`n x n`), `B` (`n x m`) and `K` (`m x n`).
///
/// # Safety
/// The matrix pointers must hold the stated number of doubles and `out` must
/// be writable. Release the handle with [`dp_linear_system_free`].
#[no_mangle]
pub unsafe extern "C" fn dp_linear_system_new(
    a: *const f64,
    b: *const f64,
    k: *const f64,
    n: usize,
    m: usize,
    tau: f64,
    out: *mut *mut DpLinearSystem,
) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let lin = LinearSystem::new(matrix(a, n, n, "A")?, matrix(b, n, m, "B")?, matrix(k, m, n, "K")?, tau)?;
        put(out, DpLinearSystem(lin));
        Ok(())
    })
}

/// Releases a plant. Null is ignored.
///
/// # Safety
/// `sys` must come from [`dp_linear_system_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dp_linear_system_free(sys: *mut DpLinearSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// State and input dimensions of a plant.
///
/// # Safety
/// `sys` must be a live handle; `n` and `m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_linear_system_dims(sys: *const DpLinearSystem, n: *mut usize, m: *mut usize) -> DpStatus {
    guard(|| {
        let sys = handle(sys, "sys")?;
        *out(n, "n")? = sys.0.state_dim();
        *out(m, "m")? = sys.0.input_dim();
        Ok(())
    })
}

/// Certified gain `gamma` of the closed loop `A + BK`: `margin` (> 1) times
/// the infimum admissible gain of its quadratic certificate.
///
/// # Safety
/// `sys` must be a live handle; `gamma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_iss_gain(sys: *const DpLinearSystem, margin: f64, gamma: *mut f64) -> DpStatus {
    guard(|| {
        let sys = handle(sys, "sys")?;
        let gamma = out(gamma, "gamma")?;
        *gamma = iss_gain_gamma_with_margin(&sys.0, margin)?.gamma;
        Ok(())
    })
}

/// Smallest Euler grid count that keeps the sampled loop stable for
/// sampling gaps up to `r` and gain `gamma`.
///
/// # Safety
/// `sys` must be a live handle; `n_grid` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_min_grid_count(
    sys: *const DpLinearSystem,
    r: f64,
    gamma: f64,
    n_grid: *mut u64,
) -> DpStatus {
    guard(|| {
        let sys = handle(sys, "sys")?;
        let n_grid = out(n_grid, "n_grid")?;
        *n_grid = min_grid_count(&sys.0, r, gamma)?;
        Ok(())
    })
}

/// The scalar design objective `f(p)` for sampling period `r`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_f_value(r: f64, p: f64, out: *mut f64) -> DpStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        *out = f_value(r, p)?;
        Ok(())
    })
}

/// A-priori bound on the linear predictor error, with `a = |A|`, `b = |B|`,
/// `x0_norm = |x0|` and `u_sup` the sup norm of the input window.
#[no_mangle]
pub extern "C" fn dp_linear_error_bound(a: f64, b: f64, tau: f64, n_grid: u64, x0_norm: f64, u_sup: f64) -> f64 {
    linear_error_bound(a, b, tau, n_grid, x0_norm, u_sup)
}

/// Creates a history holding the constant input `c` (length `m`) on
/// `[-window, 0]`, recorded every `dt_rec`.
///
/// # Safety
/// `c` must hold `m` doubles and `out` must be writable. Release the handle
/// with [`dp_history_free`].
#[no_mangle]
pub unsafe extern "C" fn dp_history_constant_initial(
    window: f64,
    dt_rec: f64,
    c: *const f64,
    m: usize,
    out: *mut *mut DpHistory,
) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let hist = InputHistory::constant_initial(window, dt_rec, slice(c, m, "c")?)?;
        put(out, DpHistory(hist));
        Ok(())
    })
}

/// Releases a history. Null is ignored.
///
/// # Safety
/// `hist` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dp_history_free(hist: *mut DpHistory) {
    if !hist.is_null() {
        drop(Box::from_raw(hist));
    }
}

/// Appends `u` at time `t`, at most one recording step past the end.
///
/// # Safety
/// `hist` must be a live handle and `u` must hold `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn dp_history_push(hist: *mut DpHistory, t: f64, u: *const f64, m: usize) -> DpStatus {
    guard(|| {
        let hist = hist.as_mut().ok_or_else(|| null("hist"))?;
        hist.0.push(t, slice(u, m, "u")?)?;
        Ok(())
    })
}

/// Sets a new right value at the current end, producing a jump there.
///
/// # Safety
/// `hist` must be a live handle and `u` must hold `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn dp_history_set_jump(hist: *mut DpHistory, u: *const f64, m: usize) -> DpStatus {
    guard(|| {
        let hist = hist.as_mut().ok_or_else(|| null("hist"))?;
        hist.0.set_jump(slice(u, m, "u")?)?;
        Ok(())
    })
}

/// Right-continuous value of the recorded input at `t`, written to `u`.
///
/// # Safety
/// `hist` must be a live handle and `u` must have room for `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn dp_history_value_at(hist: *const DpHistory, t: f64, u: *mut f64, m: usize) -> DpStatus {
    guard(|| {
        let hist = handle(hist, "hist")?;
        let dst = slice_mut(u, m, "u")?;
        let v = hist.0.value_at(t)?;
        if v.len() != m {
            return Err(Error::DimensionMismatch {
                what: "input buffer",
                expected: v.len(),
                got: m,
            }
            .into());
        }
        dst.copy_from_slice(&v);
        Ok(())
    })
}

/// Sup norm of the recorded input over `[t - window, t)`.
///
/// # Safety
/// `hist` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_history_sup_norm_window(hist: *const DpHistory, t: f64, out: *mut f64) -> DpStatus {
    guard(|| {
        let hist = handle(hist, "hist")?;
        let out = self::out(out, "out")?;
        *out = hist.0.sup_norm_window(t)?;
        Ok(())
    })
}

/// Euler prediction `z_N` of `x(t + tau)` from the state `x` (length `n`)
/// and the input recorded on `[t - tau, t)`, written to `z`.
///
/// # Safety
/// Handles must be live; `x` and `z` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn dp_linear_predict(
    sys: *const DpLinearSystem,
    hist: *const DpHistory,
    x: *const f64,
    n: usize,
    t: f64,
    n_grid: u64,
    z: *mut f64,
) -> DpStatus {
    guard(|| {
        let sys = handle(sys, "sys")?;
        let hist = handle(hist, "hist")?;
        let x = slice(x, n, "x")?;
        let dst = slice_mut(z, n, "z")?;
        let pred = linear_predict(&sys.0, x, &hist.0, t, n_grid)?;
        dst.copy_from_slice(&pred);
        Ok(())
    })
}

/// Simulates the sampled closed loop with the linear predictor at grid
/// count `n_grid`, from state `x0` (length `n`) and constant initial input
/// `u0` (length `m`), up to `t_end`. `plant_steps_per_unit` of 0 selects the
/// default.
///
/// # Safety
/// `sys` must be live, `x0`/`u0` must hold `n`/`m` doubles and `out` must be
/// writable. Release the run with [`dp_trajectory_free`].
#[no_mangle]
pub unsafe extern "C" fn dp_linear_simulate(
    sys: *const DpLinearSystem,
    n_grid: u64,
    schedule: DpSchedule,
    r: f64,
    seed: u64,
    x0: *const f64,
    n: usize,
    u0: *const f64,
    m: usize,
    t_end: f64,
    plant_steps_per_unit: u32,
    out: *mut *mut DpTrajectory,
) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let sys = handle(sys, "sys")?;
        let kind = match schedule {
            DpSchedule::Uniform => ScheduleKind::Uniform,
            DpSchedule::Jittered => ScheduleKind::Jittered,
            DpSchedule::SeededRandom => ScheduleKind::SeededRandom,
        };
        let sched = make_schedule(kind, r, t_end, seed)?;
        let tau = sys.0.tau;
        let mut opts = SimOptions::default();
        if plant_steps_per_unit > 0 {
            opts.plant_steps_per_unit = plant_steps_per_unit;
        }
        let dt_rec = InputHistory::default_resolution(tau, r);
        let u0 = InputHistory::constant_initial(tau, dt_rec, slice(u0, m, "u0")?)?;
        let traj = simulate_linear(&sys.0, n_grid, &sched, slice(x0, n, "x0")?, &u0, t_end, &opts)?;
        put(out, DpTrajectory(traj));
        Ok(())
    })
}

/// Releases a run. Null is ignored.
///
/// # Safety
/// `traj` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_free(traj: *mut DpTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of logged points; 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_len(traj: *const DpTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.len())
}

/// Time and state (length `n`) of logged point `i`.
///
/// # Safety
/// `traj` must be live, `t` writable and `x` must have room for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_point(
    traj: *const DpTrajectory,
    i: usize,
    t: *mut f64,
    x: *mut f64,
    n: usize,
) -> DpStatus {
    guard(|| {
        let traj = &handle(traj, "traj")?.0;
        if i >= traj.len() {
            return Err(Fail(
                DpStatus::InvalidArgument,
                format!("index {i} out of range for {} points", traj.len()),
            ));
        }
        if n != traj.n {
            return Err(Error::DimensionMismatch {
                what: "state buffer",
                expected: traj.n,
                got: n,
            }
            .into());
        }
        *out(t, "t")? = traj.t[i];
        slice_mut(x, n, "x")?.copy_from_slice(traj.x_at(i));
        Ok(())
    })
}

/// Exponential fit of `|x(t)| + sup_{[t - tau, t)} |u|` over the run's tail.
///
/// # Safety
/// `traj` must be live and `fit` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_decay_fit(traj: *const DpTrajectory, fit: *mut DpDecayFit) -> DpStatus {
    guard(|| {
        let traj = handle(traj, "traj")?;
        let fit = out(fit, "fit")?;
        let f = decay_fit(&traj.0)?;
        *fit = DpDecayFit {
            rate: f.rate,
            prefactor: f.prefactor,
            envelope_ratio: f.envelope_ratio,
            degenerate: f.degenerate as i32,
        };
        Ok(())
    })
}

/// Runs a JSON config file as the command-line tool would and returns its
/// exit code: 0 success, 1 bound violations, 2 invalid config, 3 numeric
/// failure. `out_dir` may be null to keep the config's `output_dir`. On a
/// nonzero code the message is available from [`dp_last_error_message`].
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out_dir` must be null or
/// NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dp_run_config(config_path: *const c_char, out_dir: *const c_char) -> i32 {
    let result = catch_unwind(AssertUnwindSafe(|| {
        if config_path.is_null() {
            set_error("config_path is null".into());
            return delaypred::cli::EXIT_INVALID;
        }
        let path = PathBuf::from(CStr::from_ptr(config_path).to_string_lossy().into_owned());
        let out = (!out_dir.is_null()).then(|| PathBuf::from(CStr::from_ptr(out_dir).to_string_lossy().into_owned()));
        let outcome = run(&path, &Overrides { out, seed: None });
        if outcome.exit_code != 0 {
            set_error(outcome.message);
        }
        outcome.exit_code
    }));
    result.unwrap_or_else(|_| {
        set_error("panic in dp_run_config".into());
        delaypred::cli::EXIT_NUMERIC
    })
}
