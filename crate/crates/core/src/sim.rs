//! Hybrid sampled-data closed loop: the plant reads the input delayed by
//! `tau`; at each sampling instant the controller resets its state to a
//! prediction of the plant `tau` ahead, and in between runs the delay-free
//! closed loop, applying `u = k(z)`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{DerivedDesign, FeedbackCertificate};
use crate::error::{Error, Result};
use crate::euler::{Predictor, PredictorOutput};
use crate::history::InputHistory;
use crate::linear::linear_predict_window;
use crate::oracle::Rk4;
use crate::system::{linear_as_nonlinear, norm, LinearSystem, NonlinearSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `T_i = i r`.
    Uniform,
    /// Gaps uniform in `[r/2, r]`.
    Jittered,
    /// Gaps uniform in `(0, r]`.
    SeededRandom,
}

/// Sampling instants `T_0 = 0 < T_1 < ...` with gaps at most `r`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingSchedule {
    pub kind: ScheduleKind,
    pub r: f64,
    pub times: Vec<f64>,
}

/// Builds a schedule whose last instant is at or beyond `horizon`.
pub fn make_schedule(kind: ScheduleKind, r: f64, horizon: f64, seed: u64) -> Result<SamplingSchedule> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sampling period must be positive, got {r}"
        )));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "horizon must be nonnegative, got {horizon}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = vec![0.0];
    let mut i = 0u64;
    while *times.last().unwrap() < horizon {
        i += 1;
        let next = match kind {
            ScheduleKind::Uniform => i as f64 * r,
            ScheduleKind::Jittered => times[times.len() - 1] + rng.random_range(0.5 * r..=r),
            // 1 - U with U in [0, 1) lies in (0, 1]
            ScheduleKind::SeededRandom => times[times.len() - 1] + r * (1.0 - rng.random::<f64>()),
        };
        times.push(next);
    }
    Ok(SamplingSchedule { kind, r, times })
}

impl SamplingSchedule {
    /// Largest gap between consecutive instants.
    pub fn max_gap(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// Integration and logging settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// RK4 steps per unit time for plant and controller.
    pub plant_steps_per_unit: u32,
    /// Recording resolution of the input history; `None` means
    /// `min(tau, r) / 1000`.
    pub dt_rec: Option<f64>,
    /// Log every `log_stride`-th integration step (sampling instants are
    /// always logged).
    pub log_stride: usize,
    /// Overrides the grid count at every sample (nonlinear loop only).
    pub forced_n: Option<u64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            plant_steps_per_unit: 1000,
            dt_rec: None,
            log_stride: 1,
            forced_n: None,
        }
    }
}

/// What happened at one sampling instant.
#[derive(Debug, Clone, Serialize)]
pub struct SampleRecord {
    pub t: f64,
    pub x: Vec<f64>,
    #[serde(rename = "N")]
    pub n_used: u64,
    pub z: Vec<f64>,
    pub prediction: Option<PredictorOutput>,
}

/// Logged closed-loop run. States are stored row-major per logged time.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub n: usize,
    pub m: usize,
    pub tau: f64,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub is_sample: Vec<bool>,
    pub n_used: Vec<u64>,
    pub samples: Vec<SampleRecord>,
    /// Applied input from `-tau` to the end of the run.
    pub history: InputHistory,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x[i * self.n..(i + 1) * self.n]
    }

    pub fn z_at(&self, i: usize) -> &[f64] {
        &self.z[i * self.n..(i + 1) * self.n]
    }

    pub fn u_at(&self, i: usize) -> &[f64] {
        &self.u[i * self.m..(i + 1) * self.m]
    }

    pub fn t_end(&self) -> f64 {
        self.t.last().copied().unwrap_or(0.0)
    }

    /// `m(t) = |x(t)| + sup_{[t - tau, t)} |u|` at every logged time.
    pub fn magnitude(&self) -> Result<Vec<f64>> {
        let sups = self.history.sup_norm_series(&self.t)?;
        Ok((0..self.len()).map(|i| norm(self.x_at(i)) + sups[i]).collect())
    }

    /// Logged index with time closest to `t`.
    pub fn index_near(&self, t: f64) -> usize {
        let j = self.t.partition_point(|&s| s < t);
        if j == 0 {
            0
        } else if j >= self.len() {
            self.len() - 1
        } else if (self.t[j] - t).abs() < (t - self.t[j - 1]).abs() {
            j
        } else {
            j - 1
        }
    }

    /// Columns `t, x_1..x_n, z_1..z_n, u_1..u_m, is_sample_instant, N_used`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for i in 1..=self.n {
            let _ = write!(s, ",x_{i}");
        }
        for i in 1..=self.n {
            let _ = write!(s, ",z_{i}");
        }
        for i in 1..=self.m {
            let _ = write!(s, ",u_{i}");
        }
        s.push_str(",is_sample_instant,N_used\n");
        for i in 0..self.len() {
            let _ = write!(s, "{}", self.t[i]);
            for v in self.x_at(i).iter().chain(self.z_at(i)).chain(self.u_at(i)) {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(s, ",{},{}", u8::from(self.is_sample[i]), self.n_used[i]);
        }
        s
    }

    fn log(&mut self, t: f64, x: &[f64], z: &[f64], u: &[f64], sample: bool, n_used: u64) {
        self.t.push(t);
        self.x.extend_from_slice(x);
        self.z.extend_from_slice(z);
        self.u.extend_from_slice(u);
        self.is_sample.push(sample);
        self.n_used.push(n_used);
    }
}

/// Sample-time behavior of a controller; flows between samples are those of
/// the plant's delay-free closed loop.
trait Sampler {
    fn sample(&self, x: &[f64], hist: &InputHistory, t: f64) -> Result<(Vec<f64>, u64, Option<PredictorOutput>)>;
}

struct NonlinearSampler<'a> {
    predictor: &'a Predictor,
    forced_n: Option<u64>,
}

impl Sampler for NonlinearSampler<'_> {
    fn sample(&self, x: &[f64], hist: &InputHistory, t: f64) -> Result<(Vec<f64>, u64, Option<PredictorOutput>)> {
        let window = hist.window_at(t)?;
        let out = self.predictor.predict_window(x, &window, self.forced_n)?;
        Ok((out.z.clone(), out.n, Some(out)))
    }
}

struct LinearSampler<'a> {
    lin: &'a LinearSystem,
    n_grid: u64,
}

impl Sampler for LinearSampler<'_> {
    fn sample(&self, x: &[f64], hist: &InputHistory, t: f64) -> Result<(Vec<f64>, u64, Option<PredictorOutput>)> {
        let window = hist.window_at(t)?;
        let z = linear_predict_window(self.lin, x, &window, self.n_grid)?;
        Ok((z, self.n_grid, None))
    }
}

fn check_initial(
    sys: &NonlinearSystem,
    tau: f64,
    sched: &SamplingSchedule,
    x0: &[f64],
    u0: &InputHistory,
    t_end: f64,
) -> Result<()> {
    sys.check_state(x0)?;
    if u0.input_dim() != sys.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "initial input",
            expected: sys.input_dim(),
            got: u0.input_dim(),
        });
    }
    if (u0.window() - tau).abs() > 1e-12 * tau {
        return Err(Error::InvalidArgument(format!(
            "initial input window {} differs from the delay {tau}",
            u0.window()
        )));
    }
    match u0.span() {
        Some((a, b)) if a <= -tau + 1e-12 * tau && b.abs() <= 1e-12 => {}
        span => {
            return Err(Error::InvalidArgument(format!(
                "initial input must cover [-tau, 0], got {span:?}"
            )))
        }
    }
    if !(t_end >= tau) {
        return Err(Error::InvalidArgument(format!(
            "t_end = {t_end} is shorter than the delay {tau}"
        )));
    }
    if sched.times.first() != Some(&0.0) || sched.times.last().map_or(true, |&t| t < t_end) {
        return Err(Error::InvalidArgument(
            "schedule must start at 0 and cover the horizon".into(),
        ));
    }
    Ok(())
}

fn run_loop(
    sys: &NonlinearSystem,
    sampler: &dyn Sampler,
    tau: f64,
    sched: &SamplingSchedule,
    x0: &[f64],
    u0: &InputHistory,
    t_end: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    check_initial(sys, tau, sched, x0, u0, t_end)?;
    if opts.plant_steps_per_unit == 0 || opts.log_stride == 0 {
        return Err(Error::InvalidArgument("step counts must be positive".into()));
    }
    let n = sys.state_dim();
    let m = sys.input_dim();
    let dt_rec = opts
        .dt_rec
        .unwrap_or_else(|| InputHistory::default_resolution(tau, sched.r));
    let step = (1.0 / opts.plant_steps_per_unit as f64).min(dt_rec);

    // re-record the initial segment at the loop's resolution, keeping it all
    let mut hist = InputHistory::from_fn(m, tau, dt_rec, -tau, 0.0, |s| {
        u0.value_at(s).expect("initial input covers [-tau, 0]")
    })?
    .with_retention(f64::INFINITY)?;

    let mut traj = Trajectory {
        n,
        m,
        tau,
        t: Vec::new(),
        x: Vec::new(),
        z: Vec::new(),
        u: Vec::new(),
        is_sample: Vec::new(),
        n_used: Vec::new(),
        samples: Vec::new(),
        history: InputHistory::new(m, tau, dt_rec)?,
    };

    let mut x = x0.to_vec();
    let mut u = vec![0.0; m];
    let mut ud = vec![0.0; m];
    let mut kz = vec![0.0; m];
    let mut rk_x = Rk4::new(n);
    let mut rk_z = Rk4::new(n);

    let instants: Vec<f64> = sched.times.iter().cloned().filter(|&t| t < t_end).collect();
    for (i, &t_i) in instants.iter().enumerate() {
        let t_next = instants.get(i + 1).copied().unwrap_or(t_end);
        let (mut z, n_used, prediction) = sampler.sample(&x, &hist, t_i)?;
        sys.feedback_into(&z, &mut u);
        hist.set_jump(&u)?;
        traj.samples.push(SampleRecord {
            t: t_i,
            x: x.clone(),
            n_used,
            z: z.clone(),
            prediction,
        });
        traj.log(t_i, &x, &z, &u, true, n_used);

        let gap = t_next - t_i;
        let k = ((gap / step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let hs = gap / k as f64;
        for j in 0..k {
            let t = t_i + j as f64 * hs;
            let t1 = if j + 1 == k { t_next } else { t_i + (j + 1) as f64 * hs };
            let h = t1 - t;
            rk_z.step(
                |_, y, out| {
                    sys.feedback_into(y, &mut kz);
                    sys.eval_into(y, &kz, out);
                },
                t,
                &mut z,
                h,
            );
            rk_x.step(
                |s, y, out| {
                    // the end stage sees the input before any jump there
                    if s > t + 0.75 * h {
                        hist.value_left_into(s - tau, &mut ud);
                    } else {
                        hist.value_into(s - tau, &mut ud);
                    }
                    sys.eval_into(y, &ud, out);
                },
                t,
                &mut x,
                h,
            );
            if x.iter().chain(&z).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteTime { time: t1 });
            }
            sys.feedback_into(&z, &mut u);
            hist.push(t1, &u)?;
            let last = j + 1 == k && i + 1 == instants.len();
            if last || (j + 1 < k && (j + 1) % opts.log_stride == 0) {
                traj.log(t1, &x, &z, &u, false, n_used);
            }
        }
    }
    traj.history = hist;
    Ok(traj)
}

/// Closed loop with the nonlinear predictor; the grid count follows the
/// design's accuracy function unless `opts.forced_n` is set.
pub fn simulate_nonlinear(
    predictor: &Predictor,
    sched: &SamplingSchedule,
    x0: &[f64],
    u0: &InputHistory,
    t_end: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let sampler = NonlinearSampler {
        predictor,
        forced_n: opts.forced_n,
    };
    run_loop(
        &predictor.sys,
        &sampler,
        predictor.pack.tau(),
        sched,
        x0,
        u0,
        t_end,
        opts,
    )
}

/// Closed loop with the linear predictor at a fixed grid count.
pub fn simulate_linear(
    lin: &LinearSystem,
    n_grid: u64,
    sched: &SamplingSchedule,
    x0: &[f64],
    u0: &InputHistory,
    t_end: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    if n_grid == 0 {
        return Err(Error::InvalidArgument("grid count must be positive".into()));
    }
    let sys = linear_as_nonlinear(lin)?;
    let sampler = LinearSampler { lin, n_grid };
    run_loop(&sys, &sampler, lin.tau, sched, x0, u0, t_end, opts)
}

/// Least-squares exponential fit of `m(t)` over the tail of a run.
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    /// Fitted `sigma` in `m(t) ~ C exp(-sigma t)`.
    pub rate: f64,
    pub prefactor: f64,
    /// Largest `m(t) / (C exp(-sigma t))` over the fit window.
    pub envelope_ratio: f64,
    pub envelope_ok: bool,
    pub fit_start: f64,
    pub points: usize,
    /// All of `m` was below the floor: nothing to fit.
    pub degenerate: bool,
    pub m_start: f64,
    pub m_end: f64,
}

const DECAY_FLOOR: f64 = 1e-14;
const ENVELOPE_SLACK: f64 = 1.1;

/// Fits `log m(t)` on the last 60% of the run, ignoring values below 1e-14,
/// and checks `m <= 1.1 C exp(-sigma t)` there.
pub fn decay_fit(traj: &Trajectory) -> Result<DecayFit> {
    let m = traj.magnitude()?;
    fit_series(&traj.t, &m, 5.0 * traj.tau)
}

/// [`decay_fit`] on an explicit series; `min_span` is the shortest
/// acceptable time span.
pub fn fit_series(t: &[f64], m: &[f64], min_span: f64) -> Result<DecayFit> {
    let (t0, t1) = match (t.first(), t.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => {
            return Err(Error::TrajectoryTooShort {
                span: 0.0,
                needed: min_span,
            })
        }
    };
    if t1 - t0 < min_span {
        return Err(Error::TrajectoryTooShort {
            span: t1 - t0,
            needed: min_span,
        });
    }
    let fit_start = t0 + 0.4 * (t1 - t0);
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(m)
        .filter(|(&ti, &mi)| ti >= fit_start && mi >= DECAY_FLOOR)
        .map(|(&ti, &mi)| (ti, mi.ln()))
        .collect();
    let m_start = m[0];
    let m_end = m[m.len() - 1];
    if pts.len() < 2 {
        return Ok(DecayFit {
            rate: 0.0,
            prefactor: 0.0,
            envelope_ratio: 0.0,
            envelope_ok: true,
            fit_start,
            points: pts.len(),
            degenerate: true,
            m_start,
            m_end,
        });
    }
    let k = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let stt: f64 = pts.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let intercept = mean_y - slope * mean_t;
    let envelope_ratio = pts
        .iter()
        .map(|&(ti, yi)| (yi - intercept - slope * ti).exp())
        .fold(0.0, f64::max);
    Ok(DecayFit {
        rate: -slope,
        prefactor: intercept.exp(),
        envelope_ratio,
        envelope_ok: envelope_ratio <= ENVELOPE_SLACK,
        fit_start,
        points: pts.len(),
        degenerate: false,
        m_start,
        m_end,
    })
}

/// Empirical checks of the ultimate bound, the local exponential decay and
/// the boundedness of the closed loop.
#[derive(Debug, Clone, Serialize)]
pub struct ClaimReport {
    pub ultimate_level: f64,
    /// First logged time with `V(x) <= level + tol`.
    pub entered_at: Option<f64>,
    /// Largest `V(x)` after entry.
    pub max_v_after_entry: f64,
    pub ultimate_bound_ok: bool,
    /// First sampling time `T_j` with `V(x(T_j + tau)) <= delta`.
    pub local_entry: Option<f64>,
    pub state_rate: Option<f64>,
    pub input_rate: Option<f64>,
    pub local_decay_ok: bool,
    /// `sup_t |x(t)| + sup_{[t - tau, t)} |u|`.
    pub magnitude_sup: f64,
    pub bounded_ok: bool,
    pub passes: bool,
}

/// Tolerance on `V` for the ultimate-bound check.
pub const ULTIMATE_TOL: f64 = 1e-6;

fn tail_rate(t: &[f64], v: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(v)
        .filter(|(_, &vi)| vi >= DECAY_FLOOR)
        .map(|(&ti, &vi)| (ti, vi.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let stt: f64 = pts.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    Some(if stt > 0.0 { -sty / stt } else { 0.0 })
}

pub fn claim_checks(traj: &Trajectory, design: &DerivedDesign, fc: &FeedbackCertificate) -> Result<ClaimReport> {
    let level = design.ultimate_bound()?;
    let v: Vec<f64> = (0..traj.len()).map(|i| (fc.v)(traj.x_at(i))).collect();

    let entry = v.iter().position(|&vi| vi <= level + ULTIMATE_TOL);
    let max_after = entry.map_or(f64::INFINITY, |j| v[j..].iter().cloned().fold(0.0, f64::max));
    let ultimate_ok = entry.is_some() && max_after <= level + ULTIMATE_TOL;

    let t_end = traj.t_end();
    let local_entry = traj
        .samples
        .iter()
        .map(|s| s.t)
        .filter(|&tj| tj + traj.tau <= t_end)
        .find(|&tj| v[traj.index_near(tj + traj.tau)] <= design.delta);
    let mag = traj.magnitude()?;
    let (state_rate, input_rate, local_ok) = match local_entry {
        Some(tj) => {
            let j = traj.index_near(tj);
            let xs: Vec<f64> = (j..traj.len()).map(|i| norm(traj.x_at(i))).collect();
            let sups = traj.history.sup_norm_series(&traj.t[j..])?;
            let sr = tail_rate(&traj.t[j..], &xs);
            let ir = tail_rate(&traj.t[j..], &sups);
            // an exactly vanishing signal decays trivially
            let ok = sr.map_or(true, |r| r > 0.0) && ir.map_or(true, |r| r > 0.0);
            (sr, ir, ok)
        }
        None => (None, None, false),
    };
    let magnitude_sup = mag.iter().cloned().fold(0.0, f64::max);
    let bounded_ok = magnitude_sup.is_finite();
    Ok(ClaimReport {
        ultimate_level: level,
        entered_at: entry.map(|j| traj.t[j]),
        max_v_after_entry: if max_after.is_finite() { max_after } else { f64::NAN },
        ultimate_bound_ok: ultimate_ok,
        local_entry,
        state_rate,
        input_rate,
        local_decay_ok: local_ok,
        magnitude_sup,
        bounded_ok,
        passes: ultimate_ok && local_ok && bounded_ok,
    })
}
