//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p delaypred --test acceptance`.

use std::fs;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use delaypred::builtin::{cubic_completeness, cubic_feedback, cubic_system, verification_accuracy, CubicParams};
use delaypred::cli::{run_config, Overrides};
use delaypred::config::RunConfig;
use delaypred::design::{build_bounds_pack, derive_design};
use delaypred::euler::{euler_visit, Predictor};
use delaypred::history::{InputHistory, InputWindow};
use delaypred::linear::{default_p_grid, f_sweep, min_grid_count};
use delaypred::oracle::rk4_reference;
use delaypred::sim::{
    claim_checks, decay_fit, fit_series, make_schedule, simulate_linear, simulate_nonlinear, ScheduleKind, SimOptions,
};
use delaypred::system::{dist, linear_as_nonlinear, LinearSystem, NonlinearSystem};
use delaypred::verify::{linear_bound_sweep, nonlinear_bound_sweep, LinearCases, NonlinearSweep};
use nalgebra::DMatrix;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(id: u32, title: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    timed_after(id, title, budget, Duration::ZERO, f)
}

/// Like `timed`, with `spent` already used up by shared work done beforehand.
fn timed_after(id: u32, title: &str, budget: Duration, spent: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = spent + start.elapsed();
    let in_time = elapsed <= budget;
    let pass = out.pass && in_time;
    println!(
        "[{}] criterion {id}: {title} ({:.2}s of {:.0}s{}) {}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64(),
        if in_time { "" } else { ", over budget" },
        out.detail
    );
    pass
}

fn scalar_design_example() -> Outcome {
    let sweep = f_sweep(1.0, &default_p_grid()).expect("sweep");
    let p = sweep.argmin_p;
    let lin = LinearSystem::scalar(1.0, 1.0, -p, 1.0).expect("plant");
    let n_star = min_grid_count(&lin, 1.0, 1.0 / (p - 1.0)).expect("grid count");
    let pass = (p - 1.93).abs() < 1e-12 && (sweep.min_f - 64.71).abs() <= 0.05 && n_star == 65;
    outcome(pass, format!("argmin p = {p}, f = {:.4}, N* = {n_star}", sweep.min_f))
}

fn linear_dominance() -> Outcome {
    match linear_bound_sweep(&LinearCases::RandomScalar, 100, 20_240_601, 100_000) {
        Ok(rep) => outcome(
            rep.violations == 0,
            format!(
                "{} cases, {} violations, min slack {:.3e}",
                rep.cases.len(),
                rep.violations,
                rep.min_slack
            ),
        ),
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

/// The cubic sweep behind criteria 3 and 4. The documented certificate at
/// `tau = 0.25` keeps every grid count below the cap for data up to 1.
fn cubic_sweep() -> delaypred::Result<delaypred::verify::NonlinearSweepReport> {
    let tau = 0.25;
    let sys = cubic_system();
    let cc = cubic_completeness(&CubicParams::default(), tau, tau);
    let pack = build_bounds_pack(&cc, sys.growth(), tau)?;
    let cfg = NonlinearSweep {
        cases: 100,
        seed: 20_240_602,
        s_max: 1.0,
        oracle_steps: 100_000,
    };
    nonlinear_bound_sweep(&sys, &pack, &verification_accuracy(), &cfg)
}

fn linear_loop() -> Outcome {
    let lin = LinearSystem::scalar(1.0, 1.0, -1.93, 1.0).expect("plant");
    let u0 = InputHistory::constant_initial(1.0, 1e-3, &[0.0]).expect("u0");
    let opts = SimOptions {
        log_stride: 10,
        ..SimOptions::default()
    };
    let mut schedules = vec![make_schedule(ScheduleKind::Uniform, 1.0, 30.0, 0).expect("schedule")];
    for seed in 0..20 {
        schedules.push(make_schedule(ScheduleKind::SeededRandom, 1.0, 30.0, seed).expect("schedule"));
    }
    let mut failures = Vec::new();
    let mut worst_rate = f64::INFINITY;
    let mut worst_envelope: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for (i, sched) in schedules.iter().enumerate() {
        let traj = match simulate_linear(&lin, 65, sched, &[1.0], &u0, 30.0, &opts) {
            Ok(t) => t,
            Err(e) => {
                failures.push(format!("run {i}: {e}"));
                continue;
            }
        };
        let fit = decay_fit(&traj).expect("fit");
        let m = traj.magnitude().expect("magnitude");
        let ratio = m[m.len() - 1] / m[0];
        worst_rate = worst_rate.min(fit.rate);
        worst_envelope = worst_envelope.max(fit.envelope_ratio);
        worst_ratio = worst_ratio.max(ratio);
        if !(fit.rate > 0.0 && fit.envelope_ok && ratio < 1e-3) {
            failures.push(format!(
                "run {i}: rate {:.3}, envelope {:.3}, m ratio {ratio:.2e}",
                fit.rate, fit.envelope_ratio
            ));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "21 runs, min rate {worst_rate:.3}, max envelope ratio {worst_envelope:.3}, max m(30)/m(0) {worst_ratio:.2e}{}",
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join("; ")) }
        ),
    )
}

fn nonlinear_loop() -> Outcome {
    let (tau, r, t_end) = (0.5, 0.25, 20.0);
    let params = CubicParams::default();
    let sys = cubic_system();
    let cc = cubic_completeness(&params, tau, r);
    let pack = build_bounds_pack(&cc, sys.growth(), tau).expect("pack");
    let fc = cubic_feedback(&params);
    let design = derive_design(&fc, &pack, r).expect("design");
    let predictor = Predictor::new(sys, pack, design.accuracy_fn());
    let opts = SimOptions {
        log_stride: 10,
        ..SimOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_606);
    let mut ok = 0;
    let mut notes = Vec::new();
    for i in 0..10 {
        let s: f64 = rng.random_range(0.0..=1.0);
        let split: f64 = rng.random_range(0.0..=1.0);
        let x0 = s * split * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let u = s * (1.0 - split) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let u0 = InputHistory::constant_initial(tau, InputHistory::default_resolution(tau, r), &[u]).expect("u0");
        let sched = make_schedule(ScheduleKind::SeededRandom, r, t_end, i).expect("schedule");
        let traj = match simulate_nonlinear(&predictor, &sched, &[x0], &u0, t_end, &opts) {
            Ok(t) => t,
            Err(e) => {
                notes.push(format!("IC {i} (x0 {x0:.3}, u0 {u:.3}): {e}"));
                continue;
            }
        };
        let claims = claim_checks(&traj, &design, &fc).expect("claims");
        let decays = claims.entered_at.is_some_and(|t0| {
            let j = traj.index_near(t0);
            let m = traj.magnitude().expect("magnitude");
            fit_series(&traj.t[j..], &m[j..], 0.0).is_ok_and(|f| f.degenerate || f.rate > 0.0)
        });
        if claims.ultimate_bound_ok && decays {
            ok += 1;
        } else {
            notes.push(format!(
                "IC {i}: ultimate bound {}, decay {decays}",
                claims.ultimate_bound_ok
            ));
        }
    }
    outcome(
        ok == 10,
        format!(
            "{ok}/10 runs reach and keep V <= {:.4e}{}",
            design.ultimate_bound().expect("level") + 1e-6,
            if notes.is_empty() {
                String::new()
            } else {
                format!("; {}", notes.join("; "))
            }
        ),
    )
}

struct OrderCase {
    name: &'static str,
    sys: NonlinearSystem,
    x0: Vec<f64>,
    tau: f64,
    input: fn(f64) -> f64,
}

fn order_cases() -> Vec<OrderCase> {
    let scalar = LinearSystem::scalar(-1.0, 1.0, 0.0, 1.0).expect("plant");
    let osc = LinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, -0.2]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[0.0, 0.0]),
        1.0,
    )
    .expect("plant");
    vec![
        OrderCase {
            name: "scalar",
            sys: linear_as_nonlinear(&scalar).expect("sys"),
            x0: vec![1.0],
            tau: 1.0,
            input: |t| (3.0 * t).sin(),
        },
        OrderCase {
            name: "oscillator",
            sys: linear_as_nonlinear(&osc).expect("sys"),
            x0: vec![0.5, -0.3],
            tau: 1.0,
            input: |t| (2.0 * t).cos(),
        },
        OrderCase {
            name: "cubic",
            sys: cubic_system(),
            x0: vec![0.5],
            tau: 0.5,
            input: |t| 0.3 * (2.0 * t).cos(),
        },
    ]
}

fn convergence_order() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for case in order_cases() {
        let input = case.input;
        // piecewise-linear input whose knots align with the reference steps
        let cells = 8192;
        let w = InputWindow::from_fn(case.tau, cells, |t| vec![input(t)]).expect("window");
        let reference = rk4_reference(
            &case.sys,
            &case.x0,
            |t, u| w.value_into(t, u),
            0.0,
            case.tau,
            cells * 16,
        )
        .expect("reference")
        .state;
        let euler_err = |n: u64| {
            let z = euler_visit(&case.sys, &case.x0, &w, n, |_, _| {}).expect("euler");
            dist(&z, &reference)
        };
        let euler: Vec<f64> = [128u64, 256, 512, 1024]
            .windows(2)
            .map(|p| euler_err(p[1]) / euler_err(p[0]))
            .collect();
        let smooth = rk4_reference(&case.sys, &case.x0, |t, u| u[0] = input(t), 0.0, case.tau, 8192)
            .expect("reference")
            .state;
        let rk_err = |n: usize| {
            let x = rk4_reference(&case.sys, &case.x0, |t, u| u[0] = input(t), 0.0, case.tau, n)
                .expect("rk4")
                .state;
            dist(&x, &smooth)
        };
        // the reported state comes from the run with 2n steps
        let rk: Vec<f64> = [8usize, 16, 32]
            .windows(2)
            .map(|p| rk_err(p[1]) / rk_err(p[0]))
            .collect();
        let euler_ok = euler.iter().all(|q| (q - 0.5).abs() <= 0.1);
        let rk_ok = rk.iter().all(|q| (1.0 / 22.0..=1.0 / 10.0).contains(q));
        ok &= euler_ok && rk_ok;
        parts.push(format!(
            "{}: euler {}, rk4 {}",
            case.name,
            euler.iter().map(|q| format!("{q:.3}")).collect::<Vec<_>>().join("/"),
            rk.iter()
                .map(|q| format!("1/{:.1}", 1.0 / q))
                .collect::<Vec<_>>()
                .join("/")
        ));
    }
    outcome(ok, parts.join("; "))
}

fn equilibrium_and_determinism() -> Outcome {
    let (tau, r) = (0.5, 0.25);
    let params = CubicParams::default();
    let sys = cubic_system();
    let pack = build_bounds_pack(&cubic_completeness(&params, tau, r), sys.growth(), tau).expect("pack");
    let design = derive_design(&cubic_feedback(&params), &pack, r).expect("design");
    let predictor = Predictor::new(sys, pack, design.accuracy_fn());
    let u0 = InputHistory::constant_initial(tau, 2.5e-4, &[0.0]).expect("u0");
    let sched = make_schedule(ScheduleKind::SeededRandom, r, 5.0, 3).expect("schedule");
    let traj = simulate_nonlinear(&predictor, &sched, &[0.0], &u0, 5.0, &SimOptions::default()).expect("sim");
    let zero = traj.x.iter().chain(&traj.z).chain(&traj.u).all(|&v| v == 0.0);
    let n_one = traj.samples.iter().all(|s| s.n_used == 1);

    let configs = [
        r#"{"mode": "simulate", "system": {"linear": {"a": [[1.0]], "b": [[1.0]], "k": [[-1.93]]}},
            "tau": 1.0, "r": 1.0, "horizon": 30.0, "N": 65, "schedule": {"kind": "seeded-random"},
            "seed": 5, "x0": [1.0], "integrator": {"log_stride": 10}}"#,
        r#"{"mode": "simulate", "system": {"cubic": {}}, "tau": 0.5, "r": 0.25, "horizon": 5.0,
            "schedule": {"kind": "jittered"}, "seed": 9, "x0": [0.003], "u0": [0.001],
            "integrator": {"log_stride": 20}}"#,
        r#"{"mode": "sweep-f", "r": 1.0}"#,
    ];
    let mut identical = true;
    let mut files = 0;
    for text in configs {
        let cfg = RunConfig::from_json(text).expect("config");
        let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().expect("tempdir")).collect();
        let outs: Vec<_> = dirs
            .iter()
            .map(|d| {
                run_config(
                    cfg.clone(),
                    &Overrides {
                        out: Some(d.path().to_path_buf()),
                        seed: None,
                    },
                )
            })
            .collect();
        if outs.iter().any(|o| o.exit_code != 0) {
            identical = false;
            continue;
        }
        for (a, b) in outs[0].files.iter().zip(&outs[1].files) {
            files += 1;
            identical &= fs::read(a).ok() == fs::read(b).ok() && a.file_name() == b.file_name();
        }
    }
    outcome(
        zero && n_one && identical,
        format!(
            "zero trajectory {zero}, N = 1 at all {} samples {n_one}, {files} output files byte-identical {identical}",
            traj.samples.len()
        ),
    )
}

fn main() {
    let mut all = true;
    all &= timed(
        1,
        "f(p) sweep and minimal grid count",
        Duration::from_secs(1),
        scalar_design_example,
    );
    all &= timed(
        2,
        "linear error bound dominance",
        Duration::from_secs(30),
        linear_dominance,
    );

    let start = Instant::now();
    let sweep = cubic_sweep();
    let sweep_time = start.elapsed();
    all &= timed_after(
        3,
        "nonlinear a-priori and state bounds",
        Duration::from_secs(120),
        sweep_time,
        || match &sweep {
            Ok(rep) => {
                let apriori = rep.cases.iter().filter(|c| c.apriori_slack < 0.0).count();
                let state = rep.cases.iter().filter(|c| c.state_slack < 0.0).count();
                outcome(
                    apriori == 0 && state == 0,
                    format!(
                        "{} cases, max N {}, violations: bound {apriori}, state {state}; min slacks {:.3e} / {:.3e}",
                        rep.cases.len(),
                        rep.max_n,
                        rep.min_apriori_slack,
                        rep.min_state_slack
                    ),
                )
            }
            Err(e) => outcome(false, format!("error: {e}")),
        },
    );
    all &= timed(
        4,
        "step-wise estimates along every run",
        Duration::from_secs(1),
        || match &sweep {
            Ok(rep) => {
                let w_bad = rep.cases.iter().filter(|c| c.w_growth_slack < 0.0).count();
                let e_bad = rep.cases.iter().filter(|c| c.error_recursion_slack < 0.0).count();
                outcome(
                w_bad == 0 && e_bad == 0,
                format!(
                    "min slacks: W growth {:.3e}, error recursion {:.3e}; runs with a negative slack: {w_bad} / {e_bad}",
                    rep.min_w_growth_slack, rep.min_error_recursion_slack
                ),
            )
            }
            Err(e) => outcome(false, format!("error: {e}")),
        },
    );
    all &= timed(5, "linear closed-loop decay", Duration::from_secs(60), linear_loop);
    all &= timed(
        6,
        "nonlinear closed-loop ultimate bound and decay",
        Duration::from_secs(300),
        nonlinear_loop,
    );
    all &= timed(7, "convergence order", Duration::from_secs(30), convergence_order);
    all &= timed(
        8,
        "equilibrium and determinism",
        Duration::from_secs(60),
        equilibrium_and_determinism,
    );
    if !all {
        std::process::exit(1);
    }
}
