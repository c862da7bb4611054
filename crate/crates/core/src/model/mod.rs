//! Signal/observation model, schedules and scenario configuration.
//!
//! The signal solves `dX = a(X) dt + b(X) dB` between the predictable times
//! `T_i`, where it moves to `J(X_{T_i-}, Y_{T_i-}, xi_i)` (by default
//! `X + c(X) xi`). The observation is a pure-jump process with increments
//! `dY_{T_i} = f(X_{T_i-}, Y_{T_i-}) + eta_i`, and `Z_i = (xi_i, eta_i)` are
//! i.i.d. with law [`JumpLaw`].

pub mod functions;
pub mod gaussian;
pub mod jump_law;
pub mod presets;
pub mod schedule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use functions::{Expr, JumpMap, MatrixField, ObservationFn, Rows, VectorField};
pub use jump_law::{JumpLaw, MarkLaw, XiDistribution};
pub use schedule::{resolve_threshold_times, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
}

/// The tuple `(a, b, c, f, F_Z, x0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dims: Dims,
    pub drift: VectorField,
    pub diffusion: MatrixField,
    pub jump: JumpMap,
    pub observation: ObservationFn,
    pub jump_law: JumpLaw,
    pub x0: Vec<f64>,
}

/// A validated model with its compiled mark law.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub law: MarkLaw,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let Dims { m, n } = spec.dims;
        let law = spec.jump_law.compile(m, n)?;
        Ok(Self { spec, law })
    }

    pub fn m(&self) -> usize {
        self.spec.dims.m
    }

    pub fn n(&self) -> usize {
        self.spec.dims.n
    }

    pub fn is_scalar(&self) -> bool {
        self.m() == 1 && self.n() == 1
    }

    /// Scalar drift and diffusion for one-dimensional models.
    pub fn drift_scalar(&self, x: f64) -> f64 {
        let mut out = [0.0];
        self.spec.drift.eval(&[x], &mut out);
        out[0]
    }

    pub fn diffusion_scalar(&self, x: f64) -> f64 {
        let mut out = [0.0];
        self.spec.diffusion.eval(&[x], &mut out);
        out[0]
    }

    /// `ln dF(eta)` at `eta = dy - f(x, y_pre)`.
    pub fn log_likelihood(&self, x: &[f64], y_pre: &[f64], dy: &[f64], scratch: &mut [f64]) -> f64 {
        self.spec.observation.eval(x, y_pre, scratch);
        for (s, d) in scratch.iter_mut().zip(dy) {
            *s = d - *s;
        }
        self.law.eta_log_density(scratch)
    }
}

/// Order of the Bayesian update and the signal jump at an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrdering {
    /// Condition on `dY` using the pre-jump state, then apply the jump.
    #[default]
    ObserveThenJump,
    /// Inflate by the jump covariance first, then condition.
    JumpThenObserve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    pub nodes: usize,
    /// Half-width of the domain in predictive standard deviations.
    pub width_sds: f64,
    /// Explicit domain, overriding the pilot-based one.
    pub bounds: Option<[f64; 2]>,
    pub pilot_paths: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { nodes: 2000, width_sds: 8.0, bounds: None, pilot_paths: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSettings {
    pub particles: usize,
    pub resample_threshold: f64,
    pub report_dt: f64,
    pub ordering: UpdateOrdering,
    pub grid: GridSettings,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            particles: 10_000,
            resample_threshold: 0.5,
            report_dt: 0.1,
            ordering: UpdateOrdering::ObserveThenJump,
            grid: GridSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    OuKalman,
    Medical,
    CreditRisk,
    NjodeStyle,
    Custom,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::OuKalman => "ou_kalman",
            Preset::Medical => "medical",
            Preset::CreditRisk => "credit_risk",
            Preset::NjodeStyle => "njode_style",
            Preset::Custom => "custom",
        }
    }

    pub fn all() -> [Preset; 4] {
        [Preset::OuKalman, Preset::Medical, Preset::CreditRisk, Preset::NjodeStyle]
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Parse(format!("unknown preset `{s}`")))
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub preset: Preset,
    pub model: ModelSpec,
    pub schedule: Schedule,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub filter: FilterSettings,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn preset(p: Preset) -> Self {
        presets::build(p)
    }

    /// All violations found; empty when the scenario is valid.
    pub fn violations(&self) -> Vec<Error> {
        let mut errs = Vec::new();
        let mut cfg = self.clone();
        let Dims { m, n } = cfg.model.dims;
        if m == 0 || n == 0 {
            errs.push(Error::InvalidScenario("dimensions must be at least 1".into()));
            return errs;
        }
        cfg.model.jump_law.normalize(m, n);
        let spec = &cfg.model;
        if spec.x0.len() != m || spec.x0.iter().any(|v| !v.is_finite()) {
            errs.push(Error::InvalidScenario("x0 must be a finite vector of length m".into()));
        }
        let shape_checks = [
            spec.drift.check(m),
            spec.diffusion.check(m, "diffusion"),
            spec.jump.check(m),
            spec.observation.check(m, n),
        ];
        let shapes_ok = shape_checks.iter().all(Result::is_ok);
        errs.extend(shape_checks.into_iter().filter_map(Result::err));
        if let Err(e) = spec.jump_law.check(m, n) {
            errs.push(e);
        }
        if let Err(e) = cfg.schedule.check() {
            errs.push(e);
        }
        if !(cfg.dt > 0.0) || !cfg.dt.is_finite() {
            errs.push(Error::InvalidScenario(format!("dt must be positive, got {}", cfg.dt)));
        }
        if !(cfg.horizon > 0.0) || !cfg.horizon.is_finite() {
            errs.push(Error::InvalidScenario(format!("horizon must be positive, got {}", cfg.horizon)));
        }
        if let Some(last) = cfg.schedule.last_deterministic_time() {
            if cfg.horizon < last {
                errs.push(Error::HorizonTooShort { horizon: cfg.horizon, last });
            }
        }
        let f = &cfg.filter;
        if f.particles < 2 {
            errs.push(Error::InvalidScenario("particle count must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&f.resample_threshold) {
            errs.push(Error::InvalidScenario("resample_threshold must lie in [0, 1]".into()));
        }
        if !(f.report_dt > 0.0) {
            errs.push(Error::InvalidScenario("report_dt must be positive".into()));
        }
        if f.grid.nodes < 16 || !(f.grid.width_sds > 0.0) {
            errs.push(Error::InvalidScenario("grid needs >= 16 nodes and a positive width".into()));
        }
        if let Some([lo, hi]) = f.grid.bounds {
            if !(lo < hi) {
                errs.push(Error::InvalidScenario("grid bounds must satisfy lo < hi".into()));
            }
        }
        if let JumpMap::LogLoss { beta, .. } = &spec.jump {
            let cap = 1.0 / (1.0 + beta);
            let ok = match &spec.jump_law {
                JumpLaw::DiscreteXiGaussianEta { xi_atoms, .. } => {
                    xi_atoms.iter().all(|a| a[0] >= 0.0 && a[0] < cap)
                }
                JumpLaw::Discrete { atoms, .. } => atoms.iter().all(|a| a[0] >= 0.0 && a[0] < cap),
                JumpLaw::DegenerateXiZero { .. } => true,
                _ => false,
            };
            if !ok {
                errs.push(Error::InvalidScenario(format!(
                    "log_loss jumps need discrete loss proportions in [0, {cap})"
                )));
            }
        }
        if errs.is_empty() && shapes_ok {
            if let Err(e) = check_finite_on_grid(spec) {
                errs.push(e);
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<ValidatedScenario> {
        if let Some(e) = self.violations().into_iter().next() {
            return Err(e);
        }
        let mut config = self.clone();
        let Dims { m, n } = config.model.dims;
        config.model.jump_law.normalize(m, n);
        let model = Model::new(config.model.clone())?;
        Ok(ValidatedScenario { config, model })
    }
}

/// Evaluates every coefficient on a small lattice around `x0`.
fn check_finite_on_grid(spec: &ModelSpec) -> Result<()> {
    let Dims { m, n } = spec.dims;
    let mut out_v = vec![0.0; m];
    let mut out_m = vec![0.0; m * m];
    let mut out_n = vec![0.0; n];
    let mut x = spec.x0.clone();
    let y = vec![0.0; n];
    let xi = vec![0.0; m];
    for axis in 0..m {
        let step = 0.1 * spec.x0[axis].abs().max(1.0);
        for k in -4i32..=4 {
            x.copy_from_slice(&spec.x0);
            x[axis] += f64::from(k) * step;
            spec.drift.eval(&x, &mut out_v);
            let mut ok = out_v.iter().all(|v| v.is_finite());
            spec.diffusion.eval(&x, &mut out_m);
            ok &= out_m.iter().all(|v| v.is_finite());
            spec.jump.apply(&x, &y, &xi, &mut out_m, &mut out_v);
            ok &= out_v.iter().all(|v| v.is_finite());
            spec.observation.eval(&x, &y, &mut out_n);
            ok &= out_n.iter().all(|v| v.is_finite());
            if !ok {
                return Err(Error::InvalidScenario(format!(
                    "coefficients are not finite near x = {x:?}"
                )));
            }
        }
    }
    Ok(())
}

/// A normalized, validated scenario; immutable and shareable across workers.
#[derive(Debug, Clone)]
pub struct ValidatedScenario {
    config: ScenarioConfig,
    model: Model,
}

impl ValidatedScenario {
    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn schedule(&self) -> &Schedule {
        &self.config.schedule
    }

    pub fn horizon(&self) -> f64 {
        self.config.horizon
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn filter(&self) -> &FilterSettings {
        &self.config.filter
    }

    pub fn to_json(&self) -> String {
        self.config.to_json()
    }

    /// Returns a modified copy, re-validated.
    pub fn with(&self, edit: impl FnOnce(&mut ScenarioConfig)) -> Result<Self> {
        let mut cfg = self.config.clone();
        edit(&mut cfg);
        cfg.validate()
    }

    /// Reporting grid `0, report_dt, 2 report_dt, ...` up to the horizon.
    pub fn report_times(&self) -> Vec<f64> {
        let h = self.config.filter.report_dt;
        let count = (self.horizon() / h + 1e-9).floor() as usize;
        let mut times: Vec<f64> = (0..=count).map(|k| (k as f64 * h * 1e12).round() / 1e12).collect();
        if (times.last().copied().unwrap_or(0.0) - self.horizon()).abs() > 1e-9 {
            times.push(self.horizon());
        }
        times
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in Preset::all() {
            let cfg = ScenarioConfig::preset(p);
            assert!(cfg.violations().is_empty(), "{}: {:?}", p.name(), cfg.violations());
        }
    }

    #[test]
    fn negative_noise_variance_is_rejected() {
        let mut cfg = ScenarioConfig::preset(Preset::OuKalman);
        if let JumpLaw::GaussianProduct { eta_cov, .. } = &mut cfg.model.jump_law {
            eta_cov[0][0] = -0.01;
        }
        assert!(matches!(cfg.validate(), Err(Error::NonPsdCovariance(_))));
    }

    #[test]
    fn unordered_times_are_rejected() {
        let mut cfg = ScenarioConfig::preset(Preset::OuKalman);
        cfg.schedule = Schedule::Deterministic { times: vec![1.0, 0.5] };
        assert!(matches!(cfg.validate(), Err(Error::NonIncreasingTimes(_))));
    }

    #[test]
    fn short_horizon_is_rejected() {
        let mut cfg = ScenarioConfig::preset(Preset::OuKalman);
        cfg.horizon = 1.0;
        assert!(matches!(cfg.validate(), Err(Error::HorizonTooShort { .. })));
    }

    #[test]
    fn bad_descriptor_is_rejected() {
        let mut cfg = ScenarioConfig::preset(Preset::OuKalman);
        cfg.model.drift = VectorField::Components { exprs: vec![Expr::var(3)] };
        assert!(matches!(cfg.validate(), Err(Error::UnknownFunctionDescriptor(_))));
    }

    #[test]
    fn non_finite_coefficients_are_rejected() {
        let mut cfg = ScenarioConfig::preset(Preset::OuKalman);
        cfg.model.drift = VectorField::Components {
            exprs: vec![Expr::Log { arg: Box::new(Expr::Add { terms: vec![Expr::var(0), Expr::constant(-1.0)] }) }],
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn empty_schedule_is_accepted() {
        let mut cfg = ScenarioConfig::preset(Preset::OuKalman);
        cfg.schedule = Schedule::Deterministic { times: vec![] };
        let v = cfg.validate().unwrap();
        assert_eq!(v.schedule().max_jumps(), 0);
    }

    #[test]
    fn violations_are_collected() {
        let mut cfg = ScenarioConfig::preset(Preset::OuKalman);
        cfg.dt = -1.0;
        cfg.filter.particles = 1;
        cfg.schedule = Schedule::Deterministic { times: vec![1.0, 0.5] };
        assert!(cfg.violations().len() >= 3);
    }

    #[test]
    fn report_grid_includes_horizon() {
        let v = ScenarioConfig::preset(Preset::OuKalman).validate().unwrap();
        let t = v.report_times();
        assert_eq!(t.len(), 21);
        assert!((t[20] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn preset_names_parse() {
        for p in Preset::all() {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("nope".parse::<Preset>().is_err());
    }
}
