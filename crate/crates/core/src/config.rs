//! JSON run configuration and the objects it describes.

use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::builtin::{
    cubic_completeness, cubic_feedback, cubic_system, linear_completeness, verification_accuracy, zero_completeness,
    zero_system, CubicParams,
};
use crate::design::{build_bounds_pack, derive_design, BoundsPack, DerivedDesign, FeedbackCertificate};
use crate::error::{Error, Result};
use crate::euler::Predictor;
use crate::history::InputHistory;
use crate::sim::{ScheduleKind, SimOptions};
use crate::system::{linear_as_nonlinear, LinearSystem, NonlinearSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    DesignLinear,
    Predict,
    Simulate,
    SweepF,
    VerifyBounds,
}

/// Named plant or explicit matrices (row-major nested arrays).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Cubic {
        #[serde(default)]
        kappa: Option<f64>,
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        eps: Option<f64>,
    },
    Zero {
        n: usize,
        m: usize,
    },
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        k: Vec<Vec<f64>>,
    },
}

/// Grid count: a fixed integer or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GridSpec {
    #[default]
    Auto,
    Fixed(u64),
}

impl Serialize for GridSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GridSpec::Auto => s.serialize_str("auto"),
            GridSpec::Fixed(n) => s.serialize_u64(*n),
        }
    }
}

impl<'de> Deserialize<'de> for GridSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(0) => Err(serde::de::Error::custom("grid count must be positive")),
            Raw::Num(n) => Ok(GridSpec::Fixed(n)),
            Raw::Str(s) if s == "auto" => Ok(GridSpec::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a positive integer or \"auto\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Uniform,
        }
    }
}

/// Initial input on `[-tau, 0]`: a constant vector or `(t, u...)` rows
/// interpolated linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialInput {
    Constant(Vec<f64>),
    Samples { samples: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub p_min: f64,
    pub p_max: f64,
    pub p_step: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            p_min: 1.01,
            p_max: 10.0,
            p_step: 0.01,
        }
    }
}

impl SweepSpec {
    /// `p_min + k p_step` up to `p_max`. When `1 / p_step` is an integer
    /// the points are formed as ratios of integers, so `1.93` prints as
    /// `1.93`.
    pub fn grid(&self) -> Vec<f64> {
        let count = ((self.p_max - self.p_min) / self.p_step + 1e-9).floor() as usize;
        let inv = 1.0 / self.p_step;
        let start = self.p_min * inv;
        if (inv - inv.round()).abs() < 1e-9 && (start - start.round()).abs() < 1e-6 {
            let (inv, start) = (inv.round(), start.round());
            (0..=count).map(|k| (start + k as f64) / inv).collect()
        } else {
            (0..=count).map(|k| self.p_min + k as f64 * self.p_step).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub cases: usize,
    /// Largest `|x0| + |u|` in the nonlinear sweep.
    pub s_max: f64,
    pub oracle_steps: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            cases: 100,
            s_max: 1.0,
            oracle_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Not needed by `sweep-f`.
    #[serde(default)]
    pub system: Option<SystemSpec>,
    pub tau: Option<f64>,
    pub r: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default, rename = "N")]
    pub n_grid: GridSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub u0: Option<InitialInput>,
    #[serde(default)]
    pub integrator: SimOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Explicit ISS gain for the linear pipeline; by default the gain is
    /// the infimum times the margin.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub gamma_margin: Option<f64>,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub verify: VerifySpec,
}

fn positive(name: &str, v: Option<f64>) -> Result<f64> {
    match v {
        None => Err(Error::Config(format!("missing `{name}`"))),
        Some(x) if x > 0.0 && x.is_finite() => Ok(x),
        Some(x) => Err(Error::Config(format!("`{name}` must be positive, got {x}"))),
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("`{name}` must be a nonempty rectangular array")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tau(&self) -> Result<f64> {
        positive("tau", self.tau)
    }

    pub fn r(&self) -> Result<f64> {
        positive("r", self.r)
    }

    /// Checks the fields each mode needs.
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            Mode::SweepF => {
                self.r()?;
                let s = &self.sweep;
                if !(s.p_min > 1.0 && s.p_max >= s.p_min && s.p_step > 0.0) {
                    return Err(Error::Config("sweep needs 1 < p_min <= p_max and p_step > 0".into()));
                }
                return Ok(());
            }
            Mode::DesignLinear => {
                self.tau()?;
                self.r()?;
                if !matches!(self.system, Some(SystemSpec::Linear { .. })) {
                    return Err(Error::Config("design-linear needs a linear system".into()));
                }
            }
            Mode::Predict => {
                self.tau()?;
                self.x0_checked()?;
            }
            Mode::Simulate => {
                let tau = self.tau()?;
                self.r()?;
                let h = positive("horizon", self.horizon)?;
                if h < tau {
                    return Err(Error::Config(format!("horizon {h} is shorter than tau {tau}")));
                }
                self.x0_checked()?;
            }
            Mode::VerifyBounds => {
                if self.verify.cases == 0 || self.verify.oracle_steps == 0 || !(self.verify.s_max > 0.0) {
                    return Err(Error::Config(
                        "verify needs positive cases, oracle_steps and s_max".into(),
                    ));
                }
                if !matches!(self.system, Some(SystemSpec::Linear { .. })) {
                    self.tau()?;
                }
            }
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("`gamma` must be positive, got {g}")));
            }
        }
        if let Some(m) = self.gamma_margin {
            if !(m > 1.0 && m.is_finite()) {
                return Err(Error::Config(format!("`gamma_margin` must exceed 1, got {m}")));
            }
        }
        self.build_plant()?;
        Ok(())
    }

    fn x0_checked(&self) -> Result<&[f64]> {
        self.x0.as_deref().ok_or_else(|| Error::Config("missing `x0`".into()))
    }

    /// The plant described by `system`; linear plants need `tau`.
    pub fn build_plant(&self) -> Result<Plant> {
        let spec = self
            .system
            .as_ref()
            .ok_or_else(|| Error::Config("missing `system`".into()))?;
        match spec {
            SystemSpec::Cubic { kappa, alpha, eps } => {
                let d = CubicParams::default();
                let params = CubicParams {
                    kappa: kappa.unwrap_or(d.kappa),
                    alpha: alpha.unwrap_or(d.alpha),
                    eps: eps.unwrap_or(d.eps),
                };
                if !(params.kappa > 0.0 && params.alpha > 0.0 && params.eps > 0.0) {
                    return Err(Error::Config("cubic parameters must be positive".into()));
                }
                Ok(Plant::Cubic(params))
            }
            SystemSpec::Zero { n, m } => {
                if *n == 0 || *m == 0 {
                    return Err(Error::Config("zero system needs positive dimensions".into()));
                }
                Ok(Plant::Zero { n: *n, m: *m })
            }
            SystemSpec::Linear { a, b, k } => {
                let tau = self.tau.unwrap_or(1.0);
                let lin = LinearSystem::new(matrix("a", a)?, matrix("b", b)?, matrix("k", k)?, tau)
                    .map_err(|e| Error::Config(e.to_string()))?;
                Ok(Plant::Linear(lin))
            }
        }
    }

    pub fn state_dim(&self) -> Result<usize> {
        Ok(match self.build_plant()? {
            Plant::Cubic(_) => 1,
            Plant::Zero { n, .. } => n,
            Plant::Linear(lin) => lin.state_dim(),
        })
    }

    pub fn input_dim(&self) -> Result<usize> {
        Ok(match self.build_plant()? {
            Plant::Cubic(_) => 1,
            Plant::Zero { m, .. } => m,
            Plant::Linear(lin) => lin.input_dim(),
        })
    }

    /// `x0`, checked against the state dimension.
    pub fn x0(&self) -> Result<Vec<f64>> {
        let x0 = self.x0_checked()?.to_vec();
        let n = self.state_dim()?;
        if x0.len() != n {
            return Err(Error::Config(format!("`x0` has length {}, expected {n}", x0.len())));
        }
        Ok(x0)
    }

    /// The initial input segment on `[-tau, 0]` at resolution `dt_rec`;
    /// zero when absent.
    pub fn initial_input(&self, dt_rec: f64) -> Result<InputHistory> {
        let tau = self.tau()?;
        let m = self.input_dim()?;
        match &self.u0 {
            None => InputHistory::constant_initial(tau, dt_rec, &vec![0.0; m]),
            Some(InitialInput::Constant(c)) => {
                if c.len() != m {
                    return Err(Error::Config(format!("`u0` has length {}, expected {m}", c.len())));
                }
                InputHistory::constant_initial(tau, dt_rec, c)
            }
            Some(InitialInput::Samples { samples }) => {
                if samples.iter().any(|row| row.len() != m + 1) {
                    return Err(Error::Config(format!("`u0` rows must be (t, u_1..u_{m})")));
                }
                let pts: Vec<(f64, Vec<f64>)> = samples.iter().map(|row| (row[0] + tau, row[1..].to_vec())).collect();
                let w =
                    crate::history::InputWindow::from_samples(&pts).map_err(|e| Error::Config(format!("`u0`: {e}")))?;
                if (w.len() - tau).abs() > 1e-12 * tau {
                    return Err(Error::Config("`u0` samples must span [-tau, 0]".into()));
                }
                InputHistory::from_fn(m, tau, dt_rec, -tau, 0.0, |t| w.value_at(t + tau))
            }
        }
    }
}

/// A plant resolved from the configuration.
#[derive(Debug, Clone)]
pub enum Plant {
    Cubic(CubicParams),
    Zero { n: usize, m: usize },
    Linear(LinearSystem),
}

/// Everything the nonlinear predictor needs.
pub struct NonlinearSetup {
    pub predictor: Predictor,
    /// Present for plants with a feedback certificate.
    pub design: Option<(DerivedDesign, FeedbackCertificate)>,
}

impl Plant {
    pub fn system(&self) -> Result<NonlinearSystem> {
        match self {
            Plant::Cubic(_) => Ok(cubic_system()),
            Plant::Zero { n, m } => Ok(zero_system(*n, *m)),
            Plant::Linear(lin) => linear_as_nonlinear(lin),
        }
    }

    pub fn bounds_pack(&self, tau: f64, r: f64) -> Result<BoundsPack> {
        let sys = self.system()?;
        let cc = match self {
            Plant::Cubic(p) => cubic_completeness(p, tau, r),
            Plant::Zero { .. } => zero_completeness(),
            Plant::Linear(lin) => linear_completeness(lin, r)?,
        };
        build_bounds_pack(&cc, sys.growth(), tau)
    }

    /// Predictor with the design accuracy for the cubic plant and the
    /// verification accuracy otherwise.
    pub fn nonlinear_setup(&self, tau: f64, r: f64) -> Result<NonlinearSetup> {
        let sys = self.system()?;
        let pack = self.bounds_pack(tau, r)?;
        match self {
            Plant::Cubic(p) => {
                let fc = cubic_feedback(p);
                let design = derive_design(&fc, &pack, r)?;
                Ok(NonlinearSetup {
                    predictor: Predictor::new(sys, pack, design.accuracy_fn()),
                    design: Some((design, fc)),
                })
            }
            _ => Ok(NonlinearSetup {
                predictor: Predictor::new(sys, pack, verification_accuracy()),
                design: None,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> String {
        r#"{
            "mode": "simulate",
            "system": {"linear": {"a": [[1.0]], "b": [[1.0]], "k": [[-1.93]]}},
            "tau": 1.0, "r": 1.0, "horizon": 30.0, "N": 65,
            "x0": [1.0]
        }"#
        .to_string()
    }

    #[test]
    fn parses_the_linear_example() {
        let cfg = RunConfig::from_json(&example()).unwrap();
        assert_eq!(cfg.n_grid, GridSpec::Fixed(65));
        assert_eq!(cfg.schedule.kind, ScheduleKind::Uniform);
        assert!(matches!(cfg.build_plant().unwrap(), Plant::Linear(_)));
    }

    #[test]
    fn missing_tau_is_a_config_error() {
        let text = example().replace("\"tau\": 1.0,", "");
        assert!(matches!(RunConfig::from_json(&text), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_mode_is_rejected() {
        let text = example().replace("simulate", "dance");
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn grid_spec_forms() {
        let auto: GridSpec = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(auto, GridSpec::Auto);
        assert!(serde_json::from_str::<GridSpec>("0").is_err());
        assert!(serde_json::from_str::<GridSpec>("\"many\"").is_err());
        assert_eq!(serde_json::to_string(&GridSpec::Fixed(7)).unwrap(), "7");
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        let text = example().replace("[[1.0]], \"b\"", "[[1.0], [2.0, 3.0]], \"b\"");
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn sweep_grid_matches_default() {
        let g = SweepSpec::default().grid();
        assert_eq!(g.len(), 900);
        assert_eq!(g, crate::linear::default_p_grid());
    }

    #[test]
    fn sampled_initial_input_is_interpolated() {
        let text = example().replace(
            "\"x0\": [1.0]",
            "\"x0\": [1.0], \"u0\": {\"samples\": [[-1.0, 0.0], [0.0, 2.0]]}",
        );
        let cfg = RunConfig::from_json(&text).unwrap();
        let h = cfg.initial_input(1e-3).unwrap();
        assert!((h.value_at(-0.5).unwrap()[0] - 1.0).abs() < 1e-12);
    }
}
