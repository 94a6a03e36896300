//! Batch runner behind the `delaypred` binary: loads a [`RunConfig`],
//! dispatches on its mode and writes the run directory.
//!
//! Exit codes: 0 success, 1 verification found a violation, 2 invalid
//! configuration, 3 numeric failure during the run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{GridSpec, Mode, Plant, RunConfig};
use crate::error::{Error, Result};
use crate::history::InputHistory;
use crate::linear::{
    f_sweep, grid_criterion_lhs, iss_gain_gamma_with_margin, linear_error_bound, linear_predict_window, min_grid_count,
    spectral_norm, DEFAULT_GAMMA_MARGIN,
};
use crate::sim::{claim_checks, decay_fit, make_schedule, simulate_linear, simulate_nonlinear, Trajectory};
use crate::system::norm;
use crate::verify::{linear_bound_sweep, nonlinear_bound_sweep, LinearCases, NonlinearSweep};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub message: String,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    fn failed(code: i32, e: &Error) -> Self {
        RunOutcome {
            exit_code: code,
            message: e.to_string(),
            files: Vec::new(),
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_INVALID,
        _ => EXIT_NUMERIC,
    }
}

/// Reads, validates and runs the configuration at `path`.
pub fn run(path: &Path, overrides: &Overrides) -> RunOutcome {
    let cfg = match fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        .and_then(|text| RunConfig::from_json(&text))
    {
        Ok(cfg) => cfg,
        Err(e) => return RunOutcome::failed(EXIT_INVALID, &e),
    };
    run_config(cfg, overrides)
}

/// Runs an already parsed configuration.
pub fn run_config(mut cfg: RunConfig, overrides: &Overrides) -> RunOutcome {
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Err(e) = cfg.validate() {
        return RunOutcome::failed(EXIT_INVALID, &e);
    }
    let Some(dir) = cfg.output_dir.clone() else {
        return RunOutcome::failed(
            EXIT_INVALID,
            &Error::Config("no output directory (set `output_dir` or --out)".into()),
        );
    };
    match execute(&cfg, &dir) {
        Ok((exit_code, files, message)) => RunOutcome {
            exit_code,
            message,
            files,
        },
        Err(e) => RunOutcome::failed(exit_code_for(&e), &e),
    }
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body)?;
        log::debug!("wrote {}", path.display());
        self.files.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        body.push('\n');
        self.text(name, &body)
    }
}

fn execute(cfg: &RunConfig, dir: &Path) -> Result<(i32, Vec<PathBuf>, String)> {
    log::info!("running {:?} into {}", cfg.mode, dir.display());
    fs::create_dir_all(dir)?;
    let mut w = Writer {
        dir: dir.to_path_buf(),
        files: Vec::new(),
    };
    // the echo leaves out the output location so reruns elsewhere match
    let mut echo = cfg.clone();
    echo.output_dir = None;
    w.json("config.json", &echo)?;
    let (code, summary_name, summary) = match cfg.mode {
        Mode::DesignLinear => (EXIT_OK, "summary.json", design_linear(cfg)?),
        Mode::Predict => (EXIT_OK, "summary.json", predict(cfg)?),
        Mode::Simulate => {
            let (summary, traj) = simulate(cfg)?;
            w.text("trajectory.csv", &traj.to_csv())?;
            (EXIT_OK, "summary.json", summary)
        }
        Mode::SweepF => {
            let r = cfg.r()?;
            let sweep = f_sweep(r, &cfg.sweep.grid())?;
            w.text("sweep.csv", &sweep.to_csv())?;
            let summary = json!({
                "mode": cfg.mode,
                "r": r,
                "argmin_p": sweep.argmin_p,
                "min_f": sweep.min_f,
                "points": sweep.rows.len(),
            });
            (EXIT_OK, "summary.json", summary)
        }
        Mode::VerifyBounds => {
            let (violations, report) = verify_bounds(cfg)?;
            let code = if violations == 0 { EXIT_OK } else { EXIT_VIOLATION };
            (code, "report.json", report)
        }
    };
    w.json(summary_name, &summary)?;
    let message = match code {
        EXIT_OK => format!("wrote {} files to {}", w.files.len(), dir.display()),
        _ => format!("bound violations found; see {}", dir.join(summary_name).display()),
    };
    Ok((code, w.files, message))
}

/// `(gamma, gain report)` for a linear plant: the configured gain or the
/// margin times the infimum.
fn linear_gamma(cfg: &RunConfig, lin: &crate::system::LinearSystem) -> Result<(f64, Value)> {
    let margin = cfg.gamma_margin.unwrap_or(DEFAULT_GAMMA_MARGIN);
    let report = iss_gain_gamma_with_margin(lin, margin)?;
    let gamma = cfg.gamma.unwrap_or(report.gamma);
    let value = serde_json::to_value(&report).map_err(|e| Error::Io(e.to_string()))?;
    Ok((gamma, value))
}

fn linear_plant(cfg: &RunConfig) -> Result<Option<crate::system::LinearSystem>> {
    Ok(match cfg.build_plant()? {
        Plant::Linear(lin) => Some(lin),
        _ => None,
    })
}

fn design_linear(cfg: &RunConfig) -> Result<Value> {
    let lin = linear_plant(cfg)?.ok_or_else(|| Error::Config("design-linear needs a linear system".into()))?;
    let r = cfg.r()?;
    let (gamma, gain) = linear_gamma(cfg, &lin)?;
    let n_star = min_grid_count(&lin, r, gamma)?;
    Ok(json!({
        "mode": cfg.mode,
        "tau": lin.tau,
        "r": r,
        "gain": gain,
        "gamma": gamma,
        "gamma_from_config": cfg.gamma.is_some(),
        "criterion_lhs": grid_criterion_lhs(&lin, r, gamma)?,
        "N_star": n_star,
    }))
}

fn predict(cfg: &RunConfig) -> Result<Value> {
    let tau = cfg.tau()?;
    let x0 = cfg.x0()?;
    let hist = cfg.initial_input(InputHistory::default_resolution(tau, cfg.r.unwrap_or(tau)))?;
    let window = hist.window_at(0.0)?;
    if let Some(lin) = linear_plant(cfg)? {
        let n = match cfg.n_grid {
            GridSpec::Fixed(n) => n,
            GridSpec::Auto => {
                let (gamma, _) = linear_gamma(cfg, &lin)?;
                min_grid_count(&lin, cfg.r()?, gamma)?
            }
        };
        let z = linear_predict_window(&lin, &x0, &window, n)?;
        let bound = linear_error_bound(
            spectral_norm(&lin.a)?,
            spectral_norm(&lin.b)?,
            tau,
            n,
            norm(&x0),
            window.sup_norm(),
        );
        return Ok(json!({
            "mode": cfg.mode,
            "z": z,
            "N": n,
            "h": tau / n as f64,
            "error_bound": bound,
        }));
    }
    let plant = cfg.build_plant()?;
    let setup = plant.nonlinear_setup(tau, cfg.r.unwrap_or(tau))?;
    let forced = match cfg.n_grid {
        GridSpec::Fixed(n) => Some(n),
        GridSpec::Auto => None,
    };
    let out = setup.predictor.predict_window(&x0, &window, forced)?;
    Ok(json!({
        "mode": cfg.mode,
        "prediction": out,
        "design": setup.design.as_ref().map(|(d, _)| d.report()).transpose()?,
    }))
}

fn simulate(cfg: &RunConfig) -> Result<(Value, Trajectory)> {
    let tau = cfg.tau()?;
    let r = cfg.r()?;
    let horizon = cfg.horizon.ok_or_else(|| Error::Config("missing `horizon`".into()))?;
    let x0 = cfg.x0()?;
    let opts = cfg.integrator.clone();
    let dt_rec = opts.dt_rec.unwrap_or_else(|| InputHistory::default_resolution(tau, r));
    let u0 = cfg.initial_input(dt_rec)?;
    let sched = make_schedule(cfg.schedule.kind, r, horizon, cfg.seed)?;
    let (traj, claims, n_info) = if let Some(lin) = linear_plant(cfg)? {
        let (n, source) = match cfg.n_grid {
            GridSpec::Fixed(n) => (n, "config"),
            GridSpec::Auto => {
                let (gamma, _) = linear_gamma(cfg, &lin)?;
                (min_grid_count(&lin, r, gamma)?, "min_grid_count")
            }
        };
        let traj = simulate_linear(&lin, n, &sched, &x0, &u0, horizon, &opts)?;
        (traj, Value::Null, json!({"N": n, "source": source}))
    } else {
        let setup = cfg.build_plant()?.nonlinear_setup(tau, r)?;
        let mut opts = opts.clone();
        if let GridSpec::Fixed(n) = cfg.n_grid {
            opts.forced_n = Some(n);
        }
        let traj = simulate_nonlinear(&setup.predictor, &sched, &x0, &u0, horizon, &opts)?;
        let claims = match &setup.design {
            Some((d, fc)) => serde_json::to_value(claim_checks(&traj, d, fc)?).map_err(|e| Error::Io(e.to_string()))?,
            None => Value::Null,
        };
        let ns: Vec<u64> = traj.samples.iter().map(|s| s.n_used).collect();
        let info = json!({
            "N_min": ns.iter().min(),
            "N_max": ns.iter().max(),
            "source": if opts.forced_n.is_some() { "config" } else { "grid_count" },
        });
        (traj, claims, info)
    };
    let fit = match decay_fit(&traj) {
        Ok(f) => serde_json::to_value(f).map_err(|e| Error::Io(e.to_string()))?,
        Err(e @ Error::TrajectoryTooShort { .. }) => json!({"skipped": e.to_string()}),
        Err(e) => return Err(e),
    };
    let m = traj.magnitude()?;
    let summary = json!({
        "mode": cfg.mode,
        "schedule": {"kind": sched.kind, "r": r, "instants": sched.times.len(), "max_gap": sched.max_gap()},
        "grid": n_info,
        "m_start": m[0],
        "m_end": m[m.len() - 1],
        "m_ratio": if m[0] > 0.0 { Some(m[m.len() - 1] / m[0]) } else { None },
        "decay_fit": fit,
        "claims": claims,
        "samples": traj.samples,
    });
    Ok((summary, traj))
}

fn verify_bounds(cfg: &RunConfig) -> Result<(usize, Value)> {
    let v = &cfg.verify;
    let mut violations = 0;
    let mut report = json!({"mode": cfg.mode, "seed": cfg.seed});
    let plant = cfg.build_plant()?;
    if let Plant::Linear(lin) = &plant {
        let lin_rep = linear_bound_sweep(&LinearCases::Fixed(lin.clone()), v.cases, cfg.seed, v.oracle_steps)?;
        violations += lin_rep.violations;
        report["linear_error_bound"] = json!({
            "cases": lin_rep.cases.len(),
            "violations": lin_rep.violations,
            "min_slack": lin_rep.min_slack,
        });
    }
    let tau = cfg.tau.unwrap_or(1.0);
    let pack = plant.bounds_pack(tau, cfg.r.unwrap_or(tau))?;
    let sys = plant.system()?;
    let sweep = NonlinearSweep {
        cases: v.cases,
        seed: cfg.seed,
        s_max: v.s_max,
        oracle_steps: v.oracle_steps,
    };
    let rep = nonlinear_bound_sweep(&sys, &pack, &crate::builtin::verification_accuracy(), &sweep)?;
    violations += rep.violations;
    report["apriori_bound"] = json!({"min_slack": rep.min_apriori_slack});
    report["state_bound"] = json!({"min_slack": rep.min_state_slack});
    report["w_growth"] = json!({"min_slack": rep.min_w_growth_slack});
    report["error_recursion"] = json!({"min_slack": rep.min_error_recursion_slack});
    report["nonlinear_cases"] = json!(rep.cases.len());
    report["nonlinear_violations"] = json!(rep.violations);
    report["max_N"] = json!(rep.max_n);
    report["violations"] = json!(violations);
    Ok((violations, report))
}
