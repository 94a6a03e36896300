use delaypred::euler::euler_visit;
use delaypred::history::{InputHistory, InputWindow};
use delaypred::linear::{linear_error_bound, linear_predict_window};
use delaypred::sim::{make_schedule, ScheduleKind};
use delaypred::system::{dist, linear_as_nonlinear, LinearSystem};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn window(len: f64, cells: usize, amp: f64, freq: f64) -> InputWindow {
    InputWindow::from_fn(len, cells, |t| vec![amp * (freq * t).sin(), amp * (freq * t).cos() - t]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_integral_is_additive(
        len in 0.1f64..3.0,
        cells in 1usize..60,
        amp in -5.0f64..5.0,
        freq in 0.0f64..10.0,
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
        c in 0.0f64..1.0,
    ) {
        let w = window(len, cells, amp, freq);
        let mut cuts = [a * len, b * len, c * len];
        cuts.sort_by(f64::total_cmp);
        let [p, q, r] = cuts;
        let left = w.integral(p, q);
        let right = w.integral(q, r);
        let whole = w.integral(p, r);
        for i in 0..2 {
            prop_assert!((left[i] + right[i] - whole[i]).abs() <= 1e-12 * (1.0 + whole[i].abs()));
        }
    }

    #[test]
    fn window_integral_is_bounded_by_sup_norm(
        len in 0.1f64..3.0,
        cells in 1usize..60,
        amp in -5.0f64..5.0,
        freq in 0.0f64..10.0,
    ) {
        let w = window(len, cells, amp, freq);
        let total = w.integral(0.0, len);
        let mag = total.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(mag <= w.sup_norm() * len * (1.0 + 1e-12));
    }

    #[test]
    fn linear_predictor_matches_generic_scheme(
        a11 in -2.0f64..2.0, a12 in -2.0f64..2.0, a21 in -2.0f64..2.0, a22 in -2.0f64..2.0,
        b1 in -1.0f64..1.0, b2 in -1.0f64..1.0,
        x1 in -3.0f64..3.0, x2 in -3.0f64..3.0,
        tau in 0.05f64..2.0,
        n_grid in 1u64..300,
    ) {
        let lin = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[a11, a12, a21, a22]),
            DMatrix::from_row_slice(2, 1, &[b1, b2]),
            DMatrix::from_row_slice(1, 2, &[-1.0, 0.5]),
            tau,
        ).unwrap();
        let sys = linear_as_nonlinear(&lin).unwrap();
        let w = InputWindow::from_fn(tau, 23, |t| vec![(3.0 * t).cos() + t]).unwrap();
        let generic = euler_visit(&sys, &[x1, x2], &w, n_grid, |_, _| {}).unwrap();
        let linear = linear_predict_window(&lin, &[x1, x2], &w, n_grid).unwrap();
        let scale = 1.0 + generic.iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(dist(&generic, &linear) <= 1e-11 * scale);
    }

    #[test]
    fn scalar_error_bound_dominates_exact_error(
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        x0 in -3.0f64..3.0,
        u in -2.0f64..2.0,
        tau in 0.05f64..1.5,
        n_grid in 1u64..500,
    ) {
        prop_assume!(a.abs() > 1e-3);
        let lin = LinearSystem::scalar(a, b, -1.0, tau).unwrap();
        let w = InputWindow::constant(tau, &[u]);
        let z = linear_predict_window(&lin, &[x0], &w, n_grid).unwrap();
        let e = (a * tau).exp();
        let exact = e * x0 + (e - 1.0) / a * b * u;
        let bound = linear_error_bound(a.abs(), b.abs(), tau, n_grid, x0.abs(), u.abs());
        prop_assert!((z[0] - exact).abs() <= bound * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn scalar_error_bound_shrinks_with_the_grid(
        a in 0.0f64..2.0,
        b in 0.0f64..2.0,
        x0 in 0.0f64..3.0,
        u in 0.0f64..2.0,
        tau in 0.05f64..1.5,
        n_grid in 1u64..10_000,
    ) {
        let coarse = linear_error_bound(a, b, tau, n_grid, x0, u);
        let fine = linear_error_bound(a, b, tau, 2 * n_grid, x0, u);
        prop_assert!(fine <= coarse * (1.0 + 1e-12));
    }

    #[test]
    fn schedules_respect_the_gap_bound(
        kind in prop_oneof![
            Just(ScheduleKind::Uniform),
            Just(ScheduleKind::Jittered),
            Just(ScheduleKind::SeededRandom),
        ],
        r in 0.01f64..2.0,
        horizon in 0.0f64..40.0,
        seed in any::<u64>(),
    ) {
        let sched = make_schedule(kind, r, horizon, seed).unwrap();
        prop_assert_eq!(sched.times[0], 0.0);
        prop_assert!(*sched.times.last().unwrap() >= horizon);
        prop_assert!(sched.times.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(sched.max_gap() <= r * (1.0 + 1e-12));
        prop_assert_eq!(&sched, &make_schedule(kind, r, horizon, seed).unwrap());
    }

    #[test]
    fn history_window_sup_covers_point_values(
        steps in 5usize..200,
        amp in 0.1f64..5.0,
        freq in 0.0f64..8.0,
        frac in 0.0f64..1.0,
    ) {
        let tau = 0.5;
        let dt = 0.01;
        let mut hist = InputHistory::constant_initial(tau, dt, &[0.0]).unwrap();
        for i in 1..=steps {
            let t = i as f64 * dt;
            hist.push(t, &[amp * (freq * t).sin()]).unwrap();
        }
        let t = steps as f64 * dt;
        let sup = hist.sup_norm_window(t).unwrap();
        let s = t - tau + frac * tau * 0.999;
        let v = hist.value_at(s).unwrap();
        prop_assert!(v[0].abs() <= sup * (1.0 + 1e-12) + 1e-15);
    }
}
