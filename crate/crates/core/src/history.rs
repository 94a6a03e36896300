//! Sampled record of the applied input over a sliding window.
//!
//! The signal is piecewise linear between recorded samples. A sample may
//! carry a jump: its left value closes the segment arriving from the left and
//! its right value opens the next one, so the signal is right-continuous at
//! sampling instants. All sup-norms are taken over this stored signal.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::system::norm;

fn coverage_tol(t: f64) -> f64 {
    1e-12 * t.abs().max(1.0)
}

/// Read-only view of a piecewise-linear signal with jumps.
#[derive(Clone, Copy)]
struct Pwl<'a> {
    m: usize,
    times: &'a [f64],
    left: &'a [f64],
    right: &'a [f64],
}

impl<'a> Pwl<'a> {
    fn left_at(&self, j: usize) -> &'a [f64] {
        &self.left[j * self.m..(j + 1) * self.m]
    }

    fn right_at(&self, j: usize) -> &'a [f64] {
        &self.right[j * self.m..(j + 1) * self.m]
    }

    fn last(&self) -> usize {
        self.times.len() - 1
    }

    /// Value at `t` on segment `j` (`times[j] <= t <= times[j+1]`), using the
    /// right value at the segment start and the left value at its end.
    fn interp(&self, j: usize, t: f64, out: &mut [f64]) {
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let a = self.right_at(j);
        let b = self.left_at(j + 1);
        for i in 0..self.m {
            out[i] = a[i] * (1.0 - w) + b[i] * w;
        }
    }

    /// Right-continuous value.
    fn value_at(&self, t: f64, out: &mut [f64]) {
        let last = self.last();
        let j = self.times.partition_point(|&s| s <= t);
        if j == 0 {
            out.copy_from_slice(self.right_at(0));
        } else if j > last {
            out.copy_from_slice(self.right_at(last));
        } else {
            self.interp(j - 1, t, out);
        }
    }

    /// Left limit at `t`.
    fn value_left(&self, t: f64, out: &mut [f64]) {
        let j = self.times.partition_point(|&s| s < t);
        if j == 0 {
            out.copy_from_slice(self.left_at(0));
        } else if j > self.last() {
            out.copy_from_slice(self.left_at(self.last()));
        } else {
            self.interp(j - 1, t, out);
        }
    }

    /// Sup of `|u|` over `[a, b)`: the right value at `a`, both one-sided
    /// values of every sample strictly inside, and the left limit at `b`.
    fn sup_norm(&self, a: f64, b: f64) -> f64 {
        let mut buf = vec![0.0; self.m];
        self.value_at(a, &mut buf);
        let mut best = norm(&buf);
        if b <= a {
            return best;
        }
        let lo = self.times.partition_point(|&s| s <= a);
        let hi = self.times.partition_point(|&s| s < b);
        for j in lo..hi {
            best = best.max(norm(self.left_at(j))).max(norm(self.right_at(j)));
        }
        self.value_left(b, &mut buf);
        best.max(norm(&buf))
    }

    /// Walks the linear pieces of `[a, b]`, starting the search at `*cursor`
    /// and leaving it on the segment containing `b`.
    fn pieces(
        &self,
        a: f64,
        b: f64,
        cursor: &mut usize,
        up: &mut [f64],
        uq: &mut [f64],
        mut visit: impl FnMut(f64, &[f64], &[f64]),
    ) {
        let last_seg = self.last() - 1;
        let mut j = (*cursor).min(last_seg);
        if self.times[j] > a {
            j = self.times.partition_point(|&s| s <= a).saturating_sub(1).min(last_seg);
        }
        while j < last_seg && self.times[j + 1] <= a {
            j += 1;
        }
        let mut p = a;
        loop {
            let q = b.min(self.times[j + 1]);
            if q > p {
                self.interp(j, p, up);
                self.interp(j, q, uq);
                visit(q - p, up, uq);
            }
            if q >= b || j == last_seg {
                break;
            }
            p = q;
            j += 1;
        }
        *cursor = j;
    }

    fn integral_into(&self, a: f64, b: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if b <= a {
            return;
        }
        let mut cursor = 0;
        let mut up = vec![0.0; self.m];
        let mut uq = vec![0.0; self.m];
        self.pieces(a, b, &mut cursor, &mut up, &mut uq, |len, p, q| {
            for i in 0..out.len() {
                out[i] += 0.5 * len * (p[i] + q[i]);
            }
        });
    }
}

/// Applied input on a sliding window `[t_now - retention, t_now]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputHistory {
    m: usize,
    window: f64,
    retention: f64,
    dt_rec: f64,
    times: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl InputHistory {
    /// Empty history for an `m`-dimensional input with window `tau`,
    /// retention `tau` and recording resolution `dt_rec`.
    pub fn new(m: usize, window: f64, dt_rec: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("input dimension must be positive".into()));
        }
        if !(window > 0.0 && window.is_finite()) {
            return Err(Error::InvalidArgument(format!("window must be positive, got {window}")));
        }
        if !(dt_rec > 0.0 && dt_rec.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "recording resolution must be positive, got {dt_rec}"
            )));
        }
        Ok(InputHistory {
            m,
            window,
            retention: window,
            dt_rec,
            times: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
        })
    }

    /// Default recording resolution `min(tau, r) / 1000`.
    pub fn default_resolution(tau: f64, r: f64) -> f64 {
        tau.min(r) / 1000.0
    }

    pub fn with_retention(mut self, retention: f64) -> Result<Self> {
        if !(retention >= self.window) {
            return Err(Error::InvalidArgument(format!(
                "retention {retention} shorter than window {}",
                self.window
            )));
        }
        self.retention = retention;
        Ok(self)
    }

    /// History on `[start, end]` sampled from `f` at resolution `dt_rec`.
    pub fn from_fn(
        m: usize,
        window: f64,
        dt_rec: f64,
        start: f64,
        end: f64,
        f: impl Fn(f64) -> Vec<f64>,
    ) -> Result<Self> {
        let mut h = InputHistory::new(m, window, dt_rec)?.with_retention((end - start).max(window))?;
        if !(end > start) {
            return Err(Error::InvalidArgument(format!("empty span [{start}, {end}]")));
        }
        let cells = ((end - start) / dt_rec).ceil().max(1.0) as usize;
        for i in 0..=cells {
            let t = if i == cells {
                end
            } else {
                start + (end - start) * i as f64 / cells as f64
            };
            h.push(t, &f(t))?;
        }
        Ok(h)
    }

    /// Constant input `c` on `[-tau, 0]`, the usual initial segment `u0`.
    pub fn constant_initial(window: f64, dt_rec: f64, c: &[f64]) -> Result<Self> {
        let c = c.to_vec();
        let h = InputHistory::from_fn(c.len(), window, dt_rec, -window, 0.0, |_| c.clone())?;
        h.with_retention(window)
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn resolution(&self) -> f64 {
        self.dt_rec
    }

    pub fn retention(&self) -> f64 {
        self.retention
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `(first, last)` stored timestamps.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((*self.times.first()?, *self.times.last()?))
    }

    pub fn end(&self) -> Option<f64> {
        self.times.last().copied()
    }

    pub fn sample_times(&self) -> &[f64] {
        &self.times
    }

    fn view(&self) -> Pwl<'_> {
        Pwl {
            m: self.m,
            times: &self.times,
            left: &self.left,
            right: &self.right,
        }
    }

    fn check_input(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.m {
            return Err(Error::DimensionMismatch {
                what: "input",
                expected: self.m,
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Appends a sample at `t`, continuous with the stored signal.
    pub fn push(&mut self, t: f64, u: &[f64]) -> Result<()> {
        self.check_input(u)?;
        if let Some(&end) = self.times.last() {
            if !(t > end) {
                return Err(Error::InvalidArgument(format!(
                    "sample time {t} does not advance past {end}"
                )));
            }
            if t - end > self.dt_rec * (1.0 + 1e-9) {
                return Err(Error::HistoryGap { expected: end, got: t });
            }
        }
        self.times.push(t);
        self.left.extend_from_slice(u);
        self.right.extend_from_slice(u);
        self.evict();
        Ok(())
    }

    /// Replaces the right value at the current end, creating a jump there.
    pub fn set_jump(&mut self, u: &[f64]) -> Result<()> {
        self.check_input(u)?;
        let last = self
            .times
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::InvalidArgument("jump on an empty history".into()))?;
        self.right[last * self.m..(last + 1) * self.m].copy_from_slice(u);
        Ok(())
    }

    /// Extends the record by `samples`, which must start at the current end
    /// `t0` (where a differing value is stored as a jump) and finish at `t1`.
    pub fn record(&mut self, t0: f64, t1: f64, samples: &[(f64, Vec<f64>)]) -> Result<()> {
        if let Some(end) = self.end() {
            if (t0 - end).abs() > coverage_tol(end) {
                return Err(Error::HistoryGap { expected: end, got: t0 });
            }
        }
        let (first, last) = match (samples.first(), samples.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::InvalidArgument("no samples to record".into())),
        };
        if (first.0 - t0).abs() > coverage_tol(t0) {
            return Err(Error::HistoryGap {
                expected: t0,
                got: first.0,
            });
        }
        if (last.0 - t1).abs() > coverage_tol(t1) {
            return Err(Error::InvalidArgument(format!(
                "samples end at {} instead of {t1}",
                last.0
            )));
        }
        let mut rest = samples;
        if !self.is_empty() {
            self.set_jump(&first.1)?;
            rest = &samples[1..];
        }
        for (t, u) in rest {
            self.push(*t, u)?;
        }
        Ok(())
    }

    fn evict(&mut self) {
        let end = match self.times.last() {
            Some(&e) => e,
            None => return,
        };
        let cutoff = end - self.retention;
        // keep the last sample at or before the cutoff so interpolation
        // inside the retention horizon is unchanged
        let keep_from = self.times.partition_point(|&s| s <= cutoff).saturating_sub(1);
        if keep_from > 4096 && keep_from * 2 > self.times.len() {
            self.times.drain(..keep_from);
            self.left.drain(..keep_from * self.m);
            self.right.drain(..keep_from * self.m);
        }
    }

    fn check_coverage(&self, a: f64, b: f64) -> Result<()> {
        let (s0, s1) = self.span().ok_or(Error::Coverage {
            start: a,
            end: b,
            stored_start: f64::NAN,
            stored_end: f64::NAN,
        })?;
        if a < s0 - coverage_tol(s0) || b > s1 + coverage_tol(s1) || self.times.len() < 2 {
            return Err(Error::Coverage {
                start: a,
                end: b,
                stored_start: s0,
                stored_end: s1,
            });
        }
        Ok(())
    }

    /// Right-continuous value at `t`.
    pub fn value_at(&self, t: f64) -> Result<Vec<f64>> {
        self.check_coverage(t, t)?;
        let mut out = vec![0.0; self.m];
        self.view().value_at(t, &mut out);
        Ok(out)
    }

    /// Left limit at `t`.
    pub fn value_left(&self, t: f64) -> Result<Vec<f64>> {
        self.check_coverage(t, t)?;
        let mut out = vec![0.0; self.m];
        self.view().value_left(t, &mut out);
        Ok(out)
    }

    /// Unchecked right-continuous interpolation, clamped to the stored span.
    #[inline]
    pub(crate) fn value_into(&self, t: f64, out: &mut [f64]) {
        self.view().value_at(t, out)
    }

    /// Unchecked left limit, clamped to the stored span.
    #[inline]
    pub(crate) fn value_left_into(&self, t: f64, out: &mut [f64]) {
        self.view().value_left(t, out)
    }

    /// `sup |u(s)|` over the open history `[t - tau, t)`.
    pub fn sup_norm_window(&self, t: f64) -> Result<f64> {
        self.sup_norm_range(t - self.window, t)
    }

    /// `sup |u(s)|` over `[a, b)`.
    pub fn sup_norm_range(&self, a: f64, b: f64) -> Result<f64> {
        self.check_coverage(a, b)?;
        Ok(self.view().sup_norm(a, b))
    }

    /// Componentwise `int_a^b u(s) ds`, exact for the stored signal.
    pub fn integral(&self, a: f64, b: f64) -> Result<Vec<f64>> {
        if b < a {
            return Err(Error::InvalidArgument(format!("integral bounds reversed: [{a}, {b}]")));
        }
        self.check_coverage(a, b)?;
        let mut out = vec![0.0; self.m];
        self.view().integral_into(a, b, &mut out);
        Ok(out)
    }

    /// The open history `[t - tau, t)` shifted onto `[0, tau)`.
    pub fn window_at(&self, t: f64) -> Result<InputWindow> {
        let start = t - self.window;
        self.check_coverage(start, t)?;
        let view = self.view();
        let m = self.m;
        let lo = self.times.partition_point(|&s| s <= start);
        let hi = self.times.partition_point(|&s| s < t);
        let count = hi.saturating_sub(lo) + 2;
        let mut times = Vec::with_capacity(count);
        let mut left = Vec::with_capacity(count * m);
        let mut right = Vec::with_capacity(count * m);

        let mut buf = vec![0.0; m];
        view.value_at(start, &mut buf);
        times.push(0.0);
        left.extend_from_slice(&buf);
        right.extend_from_slice(&buf);
        for j in lo..hi {
            times.push(self.times[j] - start);
            left.extend_from_slice(view.left_at(j));
            right.extend_from_slice(view.right_at(j));
        }
        view.value_left(t, &mut buf);
        times.push(self.window);
        left.extend_from_slice(&buf);
        right.extend_from_slice(&buf);
        Ok(InputWindow {
            m,
            len: self.window,
            times,
            left,
            right,
        })
    }

    /// Window sup-norms `sup_{[t - tau, t)} |u|` at each of the sorted
    /// query times, computed with a sliding maximum.
    pub fn sup_norm_series(&self, queries: &[f64]) -> Result<Vec<f64>> {
        if let (Some(&a), Some(&b)) = (queries.first(), queries.last()) {
            self.check_coverage(a - self.window, b)?;
        }
        let view = self.view();
        let sample_norm: Vec<f64> = (0..self.times.len())
            .map(|j| norm(view.left_at(j)).max(norm(view.right_at(j))))
            .collect();
        let mut deque: VecDeque<usize> = VecDeque::new();
        let mut next = 0usize;
        let mut buf = vec![0.0; self.m];
        let mut out = Vec::with_capacity(queries.len());
        for &t in queries {
            let start = t - self.window;
            while next < self.times.len() && self.times[next] < t {
                while let Some(&back) = deque.back() {
                    if sample_norm[back] <= sample_norm[next] {
                        deque.pop_back();
                    } else {
                        break;
                    }
                }
                deque.push_back(next);
                next += 1;
            }
            while let Some(&front) = deque.front() {
                if self.times[front] <= start {
                    deque.pop_front();
                } else {
                    break;
                }
            }
            let mut best = deque.front().map_or(0.0, |&j| sample_norm[j]);
            view.value_at(start, &mut buf);
            best = best.max(norm(&buf));
            view.value_left(t, &mut buf);
            best = best.max(norm(&buf));
            out.push(best);
        }
        Ok(out)
    }

    /// CSV with columns `time,u_1..u_m`; a jump is written as two rows with
    /// the same time (left value first).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time");
        for i in 1..=self.m {
            let _ = write!(s, ",u_{i}");
        }
        s.push('\n');
        let view = self.view();
        for (j, &t) in self.times.iter().enumerate() {
            let l = view.left_at(j);
            let r = view.right_at(j);
            if j > 0 && l != r {
                write_row(&mut s, t, l);
            }
            write_row(&mut s, t, r);
        }
        s
    }

    /// Parses the format written by [`InputHistory::to_csv`].
    pub fn from_csv(text: &str, window: f64, dt_rec: f64) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty history CSV".into()))?;
        let m = header.split(',').count().saturating_sub(1);
        let mut h = InputHistory::new(m, window, dt_rec)?.with_retention(f64::INFINITY)?;
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", lineno + 2)))?;
            if vals.len() != m + 1 {
                return Err(Error::DimensionMismatch {
                    what: "history CSV row",
                    expected: m + 1,
                    got: vals.len(),
                });
            }
            if h.end() == Some(vals[0]) {
                h.set_jump(&vals[1..])?;
            } else {
                h.push(vals[0], &vals[1..])?;
            }
        }
        Ok(h)
    }
}

fn write_row(s: &mut String, t: f64, u: &[f64]) {
    let _ = write!(s, "{t}");
    for v in u {
        let _ = write!(s, ",{v}");
    }
    s.push('\n');
}

/// An input segment re-based onto `[0, len)`: the argument consumed by the
/// Euler predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct InputWindow {
    m: usize,
    len: f64,
    times: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl InputWindow {
    /// Continuous piecewise-linear window through `(time, value)` samples
    /// with `times[0] = 0` and `times[last] = len`.
    pub fn from_samples(samples: &[(f64, Vec<f64>)]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidArgument("window needs at least two samples".into()));
        }
        let m = samples[0].1.len();
        if samples[0].0 != 0.0 {
            return Err(Error::InvalidArgument("window must start at 0".into()));
        }
        let mut times = Vec::with_capacity(samples.len());
        let mut values = Vec::with_capacity(samples.len() * m);
        for (t, u) in samples {
            if u.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "window sample",
                    expected: m,
                    got: u.len(),
                });
            }
            if let Some(&prev) = times.last() {
                if !(*t > prev) {
                    return Err(Error::InvalidArgument("window times must increase".into()));
                }
            }
            times.push(*t);
            values.extend_from_slice(u);
        }
        Ok(InputWindow {
            m,
            len: *times.last().unwrap(),
            times,
            left: values.clone(),
            right: values,
        })
    }

    pub fn constant(len: f64, c: &[f64]) -> Self {
        InputWindow {
            m: c.len(),
            len,
            times: vec![0.0, len],
            left: [c, c].concat(),
            right: [c, c].concat(),
        }
    }

    /// Samples `f` at `cells + 1` equispaced points on `[0, len]`.
    pub fn from_fn(len: f64, cells: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let cells = cells.max(1);
        let samples: Vec<_> = (0..=cells)
            .map(|i| {
                let t = if i == cells { len } else { len * i as f64 / cells as f64 };
                (t, f(t))
            })
            .collect();
        InputWindow::from_samples(&samples)
    }

    fn view(&self) -> Pwl<'_> {
        Pwl {
            m: self.m,
            times: &self.times,
            left: &self.left,
            right: &self.right,
        }
    }

    pub fn len(&self) -> f64 {
        self.len
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.times
    }

    /// `sup |u|` over `[0, len)`.
    pub fn sup_norm(&self) -> f64 {
        self.view().sup_norm(0.0, self.len)
    }

    pub fn value_at(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.view().value_at(s, &mut out);
        out
    }

    #[inline]
    pub fn value_into(&self, s: f64, out: &mut [f64]) {
        self.view().value_at(s, out)
    }

    pub fn integral(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.view().integral_into(a.max(0.0), b.min(self.len), &mut out);
        out
    }

    /// Visits the linear pieces of `[a, b]` as `(length, u(start), u(end))`.
    /// `cursor` carries the segment position between monotone calls.
    pub(crate) fn pieces(
        &self,
        a: f64,
        b: f64,
        cursor: &mut usize,
        up: &mut [f64],
        uq: &mut [f64],
        visit: impl FnMut(f64, &[f64], &[f64]),
    ) {
        self.view().pieces(a, b, cursor, up, uq, visit)
    }
}
