//! Monte Carlo and quadrature checks of the structural identities behind the
//! filters: the compensator of the observation measure, the `M^phi`
//! martingale, the termwise Kushner–Stratonovich residual on the grid
//! oracle, and the Zakai-side identities (`Delta B~ = 0`, the `rho(1)` jump,
//! and the reference-measure martingale).
//!
//! Every check returns [`CheckReport`]s whose pass flag is a pure function of
//! the recorded statistic, standard error and rule.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kalman_jump::{self as kalman, GaussianBelief, LinearModelParams};
use crate::model::ValidatedScenario;
use crate::oracle_grid::{self, grid_expectation, GridDensity, SFunctional};
use crate::particle::phi::xi_nodes;
use crate::particle::{gamma_gaussian, Mode, ParticleEnsemble, TestFunction};
use crate::quadrature::GaussHermite;
use crate::rng::{stream, Purpose};
use crate::simulate::{compensator_data_scaled, simulate_path_id, MarkWeight, ObservationEvent, Simulation};

/// Acceptance rule applied to `(statistic, se)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    /// `|statistic| <= k * se`
    WithinSe { k: f64 },
    /// `|statistic| <= tol`
    AbsTol { tol: f64 },
    /// `lo <= statistic <= hi`
    Range { lo: f64, hi: f64 },
}

impl Rule {
    pub fn passes(&self, statistic: f64, se: f64) -> bool {
        match *self {
            Rule::WithinSe { k } => statistic.abs() <= k * se,
            Rule::AbsTol { tol } => statistic.abs() <= tol,
            Rule::Range { lo, hi } => statistic >= lo && statistic <= hi,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Rule::WithinSe { k } => format!("|stat| <= {k} se"),
            Rule::AbsTol { tol } => format!("|stat| <= {tol:e}"),
            Rule::Range { lo, hi } => format!("{lo} <= stat <= {hi}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub name: String,
    pub statistic: f64,
    pub se: f64,
    pub rule: Rule,
    pub pass: bool,
    pub n_paths: usize,
    pub particles: Option<usize>,
    pub quadrature_order: Option<usize>,
    pub seed: u64,
    /// Deliberately corrupted variant that is expected to fail.
    pub negative_control: bool,
}

impl CheckReport {
    pub fn new(check: &str, name: impl Into<String>, statistic: f64, se: f64, rule: Rule, seed: u64) -> Self {
        Self {
            check: check.to_string(),
            name: name.into(),
            statistic,
            se,
            rule,
            pass: rule.passes(statistic, se),
            n_paths: 0,
            particles: None,
            quadrature_order: None,
            seed,
            negative_control: false,
        }
    }

    fn paths(mut self, n: usize) -> Self {
        self.n_paths = n;
        self
    }

    fn with_particles(mut self, n: usize) -> Self {
        self.particles = Some(n);
        self
    }

    fn order(mut self, n: usize) -> Self {
        self.quadrature_order = Some(n);
        self
    }

    fn negative(mut self, yes: bool) -> Self {
        self.negative_control = yes;
        self
    }

    /// Recomputes the pass flag from the recorded numbers.
    pub fn consistent(&self) -> bool {
        self.pass == self.rule.passes(self.statistic, self.se)
    }
}

/// Fixed-width table of reports for terminal output.
pub fn render_table(reports: &[CheckReport]) -> String {
    let mut out = format!(
        "{:<12} {:<44} {:>14} {:>12} {:<22} {}\n",
        "check", "name", "statistic", "se", "rule", "result"
    );
    for r in reports {
        let verdict = match (r.pass, r.negative_control) {
            (true, false) => "pass",
            (false, false) => "FAIL",
            (true, true) => "pass (negative control)",
            (false, true) => "FAIL (negative control)",
        };
        out.push_str(&format!(
            "{:<12} {:<44} {:>14.6e} {:>12.4e} {:<22} {}\n",
            r.check,
            r.name,
            r.statistic,
            r.se,
            r.rule.describe(),
            verdict
        ));
    }
    out
}

/// Which identity to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Compensator,
    Martingale,
    KsResidual,
    Zakai,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::Compensator => "compensator",
            Check::Martingale => "martingale",
            Check::KsResidual => "ks-residual",
            Check::Zakai => "zakai",
        }
    }

    pub fn all() -> [Check; 4] {
        [Check::Compensator, Check::Martingale, Check::KsResidual, Check::Zakai]
    }
}

impl std::str::FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Check::all()
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown check `{s}`")))
    }
}

/// Sample sizes and switches shared by the checks.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSettings {
    pub seed: u64,
    /// Paths for the compensator and martingale checks.
    pub n_paths: usize,
    pub checkpoints: Vec<f64>,
    /// Grid-oracle runs of the KS residual check.
    pub ks_runs: usize,
    /// Runs of the `Delta B~` quadrature.
    pub zakai_runs: usize,
    /// Particle runs and particles for the `rho(1)` jump.
    pub rho_runs: usize,
    pub particles: usize,
    /// Reference-measure runs and particles per run.
    pub reference_runs: usize,
    pub reference_particles: usize,
    pub quadrature_order: usize,
    /// Also run the corrupted variants.
    pub negative_control: bool,
}

impl CheckSettings {
    pub fn for_scenario(sc: &ValidatedScenario) -> Self {
        let h = sc.horizon();
        Self {
            seed: sc.seed(),
            n_paths: 10_000,
            checkpoints: [0.2, 0.45, 0.7, 1.0].iter().map(|f| round12(f * h)).collect(),
            ks_runs: 20,
            zakai_runs: 100,
            rho_runs: 50,
            particles: 100_000,
            reference_runs: 2_000,
            reference_particles: 32,
            quadrature_order: 40,
            negative_control: false,
        }
    }
}

fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

/// Test functions of the martingale and residual checks: `tanh(x_1)` and a
/// Gaussian bump around `x_1 = 0.5`.
pub fn martingale_functions(m: usize) -> Vec<TestFunction> {
    let mut alpha = vec![0.0; m];
    alpha[0] = 1.0;
    let mut center = vec![0.0; m];
    center[0] = 0.5;
    vec![TestFunction::Tanh { alpha, beta: 0.0 }, TestFunction::Bump { center, scale: 0.5 }]
}

/// Runs the requested checks in order.
pub fn run_checks(sc: &ValidatedScenario, checks: &[Check], settings: &CheckSettings) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for check in checks {
        let reports = match check {
            Check::Compensator => check_compensator(sc, &MarkWeight::battery(), settings)?,
            Check::Martingale => {
                let mut variants = Vec::new();
                for phi in martingale_functions(sc.model().m()) {
                    variants.push((phi.clone(), false));
                    if settings.negative_control {
                        variants.push((phi, true));
                    }
                }
                check_martingale_battery(sc, &variants, &settings.checkpoints, settings.n_paths, settings.seed)?
            }
            Check::KsResidual => check_ks_residual_battery(
                sc,
                &martingale_functions(sc.model().m()),
                settings.ks_runs,
                settings.seed,
                settings.quadrature_order,
            )?,
            Check::Zakai => check_zakai(sc, settings)?,
        };
        out.extend(reports);
    }
    Ok(out)
}

/// Exit status convention: every ordinary check must pass.
pub fn all_pass(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.pass || r.negative_control)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// ---------------------------------------------------------------------------
// compensator

/// `mean (W*mu)_inf - mean (W*nu)_inf` against the two-sample pooled SE for
/// each weight; `W = 1` must agree exactly. The negative control doubles
/// every predictive variance and is reported for `W = y^2`.
pub fn check_compensator(sc: &ValidatedScenario, weights: &[MarkWeight], settings: &CheckSettings) -> Result<Vec<CheckReport>> {
    let n = settings.n_paths;
    let sc = sc.with(|c| c.seed = settings.seed)?;
    let mut out = Vec::new();
    let one = |w: MarkWeight, scale: f64, negative: bool| -> Result<CheckReport> {
        let data = compensator_data_scaled(&sc, w, n, scale)?;
        let mu: Vec<f64> = data.iter().map(|d| d.0).collect();
        let nu: Vec<f64> = data.iter().map(|d| d.1).collect();
        let (m_mu, se_mu) = mean_se(&mu);
        let (m_nu, se_nu) = mean_se(&nu);
        let rule = if w.power == 0 && !w.first_only { Rule::AbsTol { tol: 1e-12 } } else { Rule::WithinSe { k: 3.0 } };
        let name = if negative { format!("W={} nu var x{scale}", w.name()) } else { format!("W={}", w.name()) };
        Ok(CheckReport::new("compensator", name, m_mu - m_nu, se_mu.hypot(se_nu), rule, settings.seed)
            .paths(n)
            .order(24)
            .negative(negative))
    };
    for w in weights {
        out.push(one(*w, 1.0, false)?);
    }
    if settings.negative_control {
        out.push(one(MarkWeight::Y2, 2.0, true)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// martingale M^phi

/// `M^phi` along one simulated path at every grid row: trapezoidal time
/// integral of `L phi` (pre-jump value at event rows) and the expected jump
/// increment `A phi` at each realized jump, evaluated at the state just
/// before that jump. With `drop_jump_term` the jump compensator is omitted.
pub fn martingale_path(
    sc: &ValidatedScenario,
    sim: &Simulation,
    phi: &TestFunction,
    nodes: &[(Vec<f64>, f64)],
    drop_jump_term: bool,
) -> Vec<f64> {
    let model = sc.model();
    let path = &sim.path;
    let m = path.m;
    let phi0 = phi.eval(path.x_row(0));
    let mut out = Vec::with_capacity(path.len());
    out.push(0.0);
    let mut integral = 0.0;
    let mut jumps = 0.0;
    let mut l_prev = phi.generator(model, path.x_row(0));
    let mut scratch = vec![0.0; m * m];
    let mut next = vec![0.0; m];
    for k in 1..path.len() {
        let h = path.times[k] - path.times[k - 1];
        match path.event_at[k] {
            Some(i) => {
                let pre = &path.pre_jump[i - 1];
                integral += 0.5 * h * (l_prev + phi.generator(model, pre));
                if !drop_jump_term {
                    let y_pre = &sim.events[i - 1].y_pre;
                    let mut state = pre.clone();
                    for xi in &path.marks[i - 1].xi {
                        jumps += phi.jump_operator(model, &state, y_pre, nodes);
                        model.spec.jump.apply(&state, y_pre, xi, &mut scratch, &mut next);
                        state.copy_from_slice(&next);
                    }
                }
                l_prev = phi.generator(model, path.x_row(k));
            }
            None => {
                let l = phi.generator(model, path.x_row(k));
                integral += 0.5 * h * (l_prev + l);
                l_prev = l;
            }
        }
        out.push(phi.eval(path.x_row(k)) - phi0 - integral - jumps);
    }
    out
}

struct MartingaleSample {
    values: Vec<f64>,
    /// `(phi(X_s), X_s, Y_s)` at each checkpoint.
    features: Vec<[f64; 3]>,
}

/// Mean of `M^phi_t` at each checkpoint within 3 SE, plus regressions of
/// consecutive increments `M_t - M_s` on `(1, phi(X_s), X_s, Y_s)` whose
/// coefficients must each be within 3 robust SE of zero.
pub fn check_martingale_mphi(
    sc: &ValidatedScenario,
    phi: &TestFunction,
    checkpoints: &[f64],
    n_paths: usize,
    seed: u64,
    drop_jump_term: bool,
) -> Result<Vec<CheckReport>> {
    check_martingale_battery(sc, &[(phi.clone(), drop_jump_term)], checkpoints, n_paths, seed)
}

/// [`check_martingale_mphi`] for several `(phi, drop_jump_term)` variants
/// sharing one set of simulated paths.
pub fn check_martingale_battery(
    sc: &ValidatedScenario,
    variants: &[(TestFunction, bool)],
    checkpoints: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<CheckReport>> {
    let nodes = xi_nodes(sc.model(), 32);
    let samples: Vec<Vec<MartingaleSample>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|id| {
            let sim = simulate_path_id(sc, seed, id)?;
            let rows: Vec<usize> = checkpoints.iter().map(|t| sim.path.row_at(*t)).collect();
            Ok(variants
                .iter()
                .map(|(phi, drop)| {
                    let mpath = martingale_path(sc, &sim, phi, &nodes, *drop);
                    let values = rows.iter().map(|k| mpath[*k]).collect();
                    let features = rows
                        .iter()
                        .map(|k| {
                            let x = sim.path.x_row(*k);
                            [phi.eval(x), x[0], sim.path.y_row(*k)[0]]
                        })
                        .collect();
                    MartingaleSample { values, features }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (v, (phi, drop)) in variants.iter().enumerate() {
        let tag = if *drop { " (A phi term dropped)" } else { "" };
        let column = |f: &dyn Fn(&MartingaleSample) -> f64| -> Vec<f64> { samples.iter().map(|s| f(&s[v])).collect() };
        for (c, t) in checkpoints.iter().enumerate() {
            let (mean, se) = mean_se(&column(&|s| s.values[c]));
            out.push(
                CheckReport::new("martingale", format!("{} mean t={t}{tag}", phi.name()), mean, se, Rule::WithinSe { k: 3.0 }, seed)
                    .paths(n_paths)
                    .order(32)
                    .negative(*drop),
            );
        }
        if *drop {
            continue;
        }
        for c in 1..checkpoints.len() {
            let y = column(&|s| s.values[c] - s.values[c - 1]);
            let x: Vec<Vec<f64>> = samples.iter().map(|s| s[v].features[c - 1].to_vec()).collect();
            if let Some((beta, se)) = ols_hc0(&x, &y) {
                let (j, _) = beta
                    .iter()
                    .zip(&se)
                    .enumerate()
                    .map(|(j, (b, s))| (j, (b / s).abs()))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
                out.push(
                    CheckReport::new(
                        "martingale",
                        format!("{} increment {}..{}", phi.name(), checkpoints[c - 1], checkpoints[c]),
                        beta[j],
                        se[j],
                        Rule::WithinSe { k: 3.0 },
                        seed,
                    )
                    .paths(n_paths)
                    .order(32),
                );
            }
        }
    }
    Ok(out)
}

/// Least squares of `y` on an intercept and the columns of `x` that vary,
/// with heteroskedasticity-robust (HC0) standard errors.
fn ols_hc0(x: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = y.len();
    let p_all = x.first()?.len();
    let keep: Vec<usize> = (0..p_all)
        .filter(|&j| {
            let mean = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() > 1e-20 * n as f64
        })
        .collect();
    let p = keep.len() + 1;
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x[i][keep[j - 1]] });
    let yv = DVector::from_column_slice(y);
    let xtx_inv = (design.transpose() * &design).try_inverse()?;
    let beta = &xtx_inv * design.transpose() * &yv;
    let resid = &yv - &design * &beta;
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..n {
        let row = design.row(i).transpose();
        meat += &row * row.transpose() * resid[i].powi(2);
    }
    let cov = &xtx_inv * meat * &xtx_inv;
    Some((beta.iter().copied().collect(), (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect()))
}

// ---------------------------------------------------------------------------
// Kushner–Stratonovich residual on the grid oracle

fn require_1d(sc: &ValidatedScenario) -> Result<()> {
    if !sc.model().is_scalar() {
        return Err(Error::UnsupportedScenario(
            "the residual check needs the grid oracle, which is one-dimensional".into(),
        ));
    }
    Ok(())
}

/// `pi_{t+h}(phi) - pi_t(phi) - h pi_t(L phi)` with the density pushed
/// through 64 Euler substeps.
pub fn interior_residual(p: &GridDensity, sc: &ValidatedScenario, phi: &TestFunction, h: f64) -> Result<f64> {
    let model = sc.model();
    let later = oracle_grid::grid_propagate(p, model, h, h / 64.0)?;
    let drift = p.integrate(|x| phi.generator(model, &[x])) / p.mass();
    Ok(grid_expectation(&later, phi) - grid_expectation(p, phi) - h * drift)
}

/// Jump residual `Delta pi(phi) - pi_-(A phi) - S(phi)(dY) + int S(phi) dF^i`
/// at one event, from the pre-event grid density.
pub fn jump_residual(p_pre: &GridDensity, sc: &ValidatedScenario, phi: &TestFunction, event: &ObservationEvent, order: usize) -> Result<f64> {
    let model = sc.model();
    let post = oracle_grid::grid_event_update(p_pre, event, model)?;
    let delta = grid_expectation(&post, phi) - grid_expectation(p_pre, phi);
    let nodes = xi_nodes(model, order);
    let a_phi = p_pre.integrate(|x| phi.jump_operator_n(model, &[x], &event.y_pre, &nodes, event.jumps)) / p_pre.mass();
    let s = SFunctional::new(p_pre, model, phi, &event.y_pre, event.jumps)?;
    Ok(delta - a_phi - s.eval(event.dy[0])? + s.integral_nu(order)?)
}

/// Interior slope test (ratio of residuals at `h` and `h/2`, expected near
/// 4) after the first event, and the largest jump residual over `n_runs`
/// simulated paths.
pub fn check_ks_residual(sc: &ValidatedScenario, phi: &TestFunction, n_runs: usize, seed: u64, order: usize) -> Result<Vec<CheckReport>> {
    check_ks_residual_battery(sc, std::slice::from_ref(phi), n_runs, seed, order)
}

/// [`check_ks_residual`] for several test functions sharing the grid runs.
/// The grid filter stops at the last event, past which nothing is checked.
pub fn check_ks_residual_battery(
    sc: &ValidatedScenario,
    phis: &[TestFunction],
    n_runs: usize,
    seed: u64,
    order: usize,
) -> Result<Vec<CheckReport>> {
    require_1d(sc)?;
    let tol = if sc.model().law.xi_is_zero() { 1e-6 } else { 1e-3 };
    let (lo, hi) = oracle_grid::grid_domain(sc)?;
    let g = &sc.filter().grid;
    // (jump residuals per phi, interior pair per phi)
    type RunOut = (Vec<Vec<f64>>, Vec<Option<(f64, f64)>>);
    let runs: Vec<RunOut> = (0..n_runs as u64)
        .into_par_iter()
        .map(|run| {
            let sim = simulate_path_id(sc, seed, run)?;
            let last = sim.events.last().map_or(sc.horizon(), |e| e.time);
            let short = sc.with(|c| c.horizon = last.max(0.1f64.min(c.horizon)))?;
            let traj = oracle_grid::run_grid_filter_on(&short, &sim.events, lo, hi, g.nodes, sc.dt(), false)?;
            let mut res = vec![Vec::with_capacity(sim.events.len()); phis.len()];
            let mut interior = vec![None; phis.len()];
            for (i, phi) in phis.iter().enumerate() {
                for (ev, p_pre) in sim.events.iter().zip(&traj.pre_event) {
                    res[i].push(jump_residual(p_pre, sc, phi, ev, order)?);
                }
                if run == 0 {
                    interior[i] = interior_pair(sc, &sim.events, &traj, phi, lo, hi)?;
                }
            }
            Ok((res, interior))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, phi) in phis.iter().enumerate() {
        if let Some((r1, r2)) = runs.first().and_then(|r| r.1[i]) {
            out.push(
                CheckReport::new("ks-residual", format!("{} interior h-halving ratio", phi.name()), r1 / r2, 0.0, Rule::Range { lo: 3.2, hi: 4.8 }, seed)
                    .paths(1),
            );
        }
        let worst = runs
            .iter()
            .flat_map(|r| r.0[i].iter().copied())
            .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        out.push(
            CheckReport::new("ks-residual", format!("{} max jump residual", phi.name()), worst, 0.0, Rule::AbsTol { tol }, seed)
                .paths(n_runs)
                .order(order),
        );
    }
    Ok(out)
}

/// Interior residuals at `h0 = 0.04` and `h0 / 2`, starting right after the
/// first event (or at `0.1` without events) on a jump-free stretch.
fn interior_pair(
    sc: &ValidatedScenario,
    events: &[ObservationEvent],
    traj: &oracle_grid::GridTrajectory,
    phi: &TestFunction,
    lo: f64,
    hi: f64,
) -> Result<Option<(f64, f64)>> {
    let h0 = 0.04;
    let model = sc.model();
    let (start, next_event) = match events.first() {
        Some(ev) => {
            let post = oracle_grid::grid_event_update(&traj.pre_event[0], ev, model)?;
            (post, events.get(1).map_or(sc.horizon(), |e| e.time))
        }
        None => {
            let t = 0.1f64.min(sc.horizon());
            let run = oracle_grid::run_grid_filter_on(
                &sc.with(|c| c.horizon = t)?,
                &[],
                lo,
                hi,
                sc.filter().grid.nodes,
                sc.dt(),
                true,
            )?;
            let d = run.densities.last().map(|d| d.2.clone());
            match d {
                Some(d) => (d, sc.horizon()),
                None => return Ok(None),
            }
        }
    };
    if next_event - start.t < h0 {
        return Ok(None);
    }
    let r1 = interior_residual(&start, sc, phi, h0)?;
    let r2 = interior_residual(&start, sc, phi, h0 / 2.0)?;
    Ok(Some((r1, r2)))
}

// ---------------------------------------------------------------------------
// Zakai identities

fn linear_gaussian(sc: &ValidatedScenario) -> Result<LinearModelParams> {
    let params = LinearModelParams::from_scenario(sc)
        .map_err(|e| Error::UnsupportedScenario(format!("no closed-form predictive law: {e}")))?;
    if sc.model().n() != 1 {
        return Err(Error::UnsupportedScenario("the closed-form Gamma is scalar in the observation".into()));
    }
    Ok(params)
}

fn log_normal(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (y - mean).powi(2) / (2.0 * var)
}

/// `Gamma` for the predictive law `N(pred_mean, s)` against `F = N(mu, r)`.
fn gamma_at(pred_mean: f64, s: f64, mu: f64, r: f64, y: f64) -> Result<f64> {
    gamma_gaussian(pred_mean - mu, s - r, r, y - mu)
}

/// `int (e^Gamma - 1) dF^i` with `Gamma` from [`gamma_gaussian`]. The
/// exponential term is integrated as `E_F[e^Gamma f^i / f]`, i.e. with the
/// Gauss–Hermite rule anchored at `F`, where `e^Gamma dF^i` puts its mass;
/// `f^i / f` is formed from the two log densities directly.
/// `integrate_var_scale` rescales the variance of the law integrated
/// against (1 for the identity itself).
pub fn delta_b_tilde(pred_mean: f64, s: f64, mu: f64, r: f64, gh: &GaussHermite, integrate_var_scale: f64) -> Result<f64> {
    let s_int = s * integrate_var_scale;
    let mut total = 0.0;
    for (z, w) in gh.nodes.iter().zip(&gh.weights) {
        let y = mu + r.sqrt() * z;
        let g = gamma_at(pred_mean, s, mu, r, y)?;
        total += w * (g + log_normal(y, pred_mean, s_int) - log_normal(y, mu, r)).exp();
    }
    Ok(total - 1.0)
}

struct RhoJump {
    index: usize,
    estimate: f64,
    se: f64,
    target: f64,
    target_wrong: f64,
}

/// Pre-event particle estimate of `rho_{T-}` weighted mean of `dF(dY - f(x)) / dF(dY)`, which is
/// the `rho(1)` jump ratio, next to the closed form `e^{-Gamma(dY)}`.
fn rho_jumps_one_run(
    sc: &ValidatedScenario,
    params: &LinearModelParams,
    sim: &Simulation,
    particles: usize,
    seed: u64,
    run: u64,
) -> Result<Vec<RhoJump>> {
    let model = sc.model();
    let x0 = &model.spec.x0;
    let traj = kalman::run_filter_with(params, GaussianBelief::point(0.0, x0), &sim.events, &[], sc.horizon(), sc.filter().ordering)?;
    let mut ens = ParticleEnsemble::from_point(
        x0,
        particles,
        Mode::Unnormalized,
        sc.filter().resample_threshold,
        stream(seed, Purpose::Particles, run),
    );
    let (mu, r) = (params.eta_mean[0], params.r[(0, 0)]);
    let mut scratch = vec![0.0; model.n()];
    let mut out = Vec::with_capacity(sim.events.len());
    for (ev, law) in sim.events.iter().zip(&traj.predictive) {
        ens.propagate(model, ev.time - ens.t, sc.dt())?;
        ens.t = ev.time;
        let reference = model.law.eta_log_density(&ev.dy);
        let ratios: Vec<f64> = ens
            .positions
            .chunks_exact(ens.m)
            .map(|x| (model.log_likelihood(x, &ev.y_pre, &ev.dy, &mut scratch) - reference).exp())
            .collect();
        let (estimate, se) = ens.weighted_mean_se(&ratios);
        let s = law.s[(0, 0)];
        let pm = law.pred_mean[0];
        let y = ev.dy[0];
        out.push(RhoJump {
            index: ev.index,
            estimate,
            se,
            target: (-gamma_at(pm, s, mu, r, y)?).exp(),
            target_wrong: (-gamma_at(pm, 2.0 * s, mu, r, y)?).exp(),
        });
        ens.zakai_update(ev, model)?;
    }
    Ok(out)
}

/// `E_{P'}`-mean of the Zakai martingale `M_t(phi)` at the checkpoints from
/// one reference-measure run: increments drawn i.i.d. from `F`, the signal
/// represented by an unnormalized particle system.
fn reference_run(
    sc: &ValidatedScenario,
    phi: &TestFunction,
    checkpoints: &[f64],
    particles: usize,
    seed: u64,
    run: u64,
) -> Result<Vec<f64>> {
    let model = sc.model();
    let (m, n) = (model.m(), model.n());
    let mut aux = stream(seed, Purpose::Auxiliary, run);
    let mut xi = vec![0.0; m];
    let mut eta = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut tracker = sc.schedule().tracker();
    let threshold = matches!(sc.schedule(), crate::model::Schedule::Threshold { .. });
    let mut events = Vec::new();
    for (k, t) in sc.schedule().event_times(sc.horizon()).into_iter().enumerate() {
        model.law.sample_mark(&mut aux, &mut xi, &mut eta);
        let y_pre = y.clone();
        y.iter_mut().zip(&eta).for_each(|(a, b)| *a += b);
        let jumps = if threshold { tracker.observe(y[0]) } else { 1 };
        events.push(ObservationEvent { index: k + 1, time: t, y_pre, dy: eta.clone(), jumps });
    }
    let nodes = xi_nodes(model, 32);
    let mut ens = ParticleEnsemble::from_point(
        &model.spec.x0,
        particles,
        Mode::Unnormalized,
        sc.filter().resample_threshold,
        stream(seed, Purpose::Particles, run),
    );
    let rho_of = |ens: &ParticleEnsemble, f: &dyn Fn(&[f64]) -> f64| -> f64 {
        ens.positions.chunks_exact(m).zip(&ens.log_w).map(|(x, l)| l.exp() * f(x)).sum()
    };
    let gen = |x: &[f64]| phi.generator(model, x);
    let rho0 = ens.rho(phi);
    let mut integral = 0.0;
    let mut jumps = 0.0;
    let mut l_prev = rho_of(&ens, &gen);
    let mut stops: Vec<(f64, Option<usize>)> = events.iter().enumerate().map(|(k, e)| (e.time, Some(k))).collect();
    stops.extend(checkpoints.iter().map(|t| (*t, None)));
    // events before checkpoints at equal times
    stops.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.is_some().cmp(&a.1.is_some())));
    let dt = sc.dt();
    let mut out = Vec::with_capacity(checkpoints.len());
    for (t, ev) in stops {
        let delta = t - ens.t;
        if delta > 1e-12 {
            let steps = ((delta / dt) - 1e-9).ceil().max(1.0) as usize;
            let h = delta / steps as f64;
            for _ in 0..steps {
                ens.propagate(model, h, h)?;
                let l = rho_of(&ens, &gen);
                integral += 0.5 * h * (l_prev + l);
                l_prev = l;
            }
        }
        ens.t = t;
        match ev {
            Some(k) => {
                let e = &events[k];
                jumps += rho_of(&ens, &|x| phi.jump_operator_n(model, x, &e.y_pre, &nodes, e.jumps));
                ens.zakai_update(e, model)?;
                l_prev = rho_of(&ens, &gen);
            }
            None => out.push(ens.rho(phi) - rho0 - integral - jumps),
        }
    }
    Ok(out)
}

/// The three Zakai-side checks on a linear-Gaussian scenario:
/// (a) `int (e^Gamma - 1) dF^i = 0` per event, (b) the particle `rho(1)`
/// jump ratio against `e^{-Gamma(dY)}` per event index, (c) the
/// reference-measure mean of `M_t(phi)` at the checkpoints.
pub fn check_zakai(sc: &ValidatedScenario, settings: &CheckSettings) -> Result<Vec<CheckReport>> {
    let params = linear_gaussian(sc)?;
    if !sc.model().law.eta_has_density() {
        return Err(Error::UnsupportedScenario("the noise law has no density".into()));
    }
    let seed = settings.seed;
    let (mu, r) = (params.eta_mean[0], params.r[(0, 0)]);
    let x0 = sc.model().spec.x0.clone();
    let gh = GaussHermite::new(settings.quadrature_order);
    let mut out = Vec::new();

    // (a)
    let per_run: Vec<Vec<(f64, f64)>> = (0..settings.zakai_runs as u64)
        .into_par_iter()
        .map(|run| {
            let sim = simulate_path_id(sc, seed, run)?;
            let traj = kalman::run_filter_with(&params, GaussianBelief::point(0.0, &x0), &sim.events, &[], sc.horizon(), sc.filter().ordering)?;
            traj.predictive
                .iter()
                .map(|law| {
                    let (pm, s) = (law.pred_mean[0], law.s[(0, 0)]);
                    Ok((delta_b_tilde(pm, s, mu, r, &gh, 1.0)?, delta_b_tilde(pm, s, mu, r, &gh, 2.0)?))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n_events = per_run.iter().map(|v| v.len()).max().unwrap_or(0);
    for i in 0..n_events {
        let pick = |f: &dyn Fn(&(f64, f64)) -> f64| {
            per_run.iter().filter_map(|v| v.get(i)).map(f).fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a })
        };
        out.push(
            CheckReport::new("zakai", format!("dB~ quadrature event {}", i + 1), pick(&|p| p.0), 0.0, Rule::AbsTol { tol: 1e-10 }, seed)
                .paths(settings.zakai_runs)
                .order(gh.order()),
        );
        if settings.negative_control {
            out.push(
                CheckReport::new("zakai", format!("dB~ under F^i var x2 event {}", i + 1), pick(&|p| p.1), 0.0, Rule::AbsTol { tol: 1e-10 }, seed)
                    .paths(settings.zakai_runs)
                    .order(gh.order())
                    .negative(true),
            );
        }
    }

    // (b)
    if settings.rho_runs > 0 {
        let jumps: Vec<Vec<RhoJump>> = (0..settings.rho_runs as u64)
            .into_par_iter()
            .map(|run| {
                let sim = simulate_path_id(sc, seed, run)?;
                rho_jumps_one_run(sc, &params, &sim, settings.particles, seed, run)
            })
            .collect::<Result<_>>()?;
        let max_index = jumps.iter().flat_map(|v| v.iter().map(|j| j.index)).max().unwrap_or(0);
        for i in 1..=max_index {
            let hits: Vec<&RhoJump> = jumps.iter().flat_map(|v| v.iter().filter(|j| j.index == i)).collect();
            let k = hits.len() as f64;
            let se = hits.iter().map(|j| (j.se / j.target).powi(2)).sum::<f64>().sqrt() / k;
            let stat = hits.iter().map(|j| j.estimate / j.target - 1.0).sum::<f64>() / k;
            out.push(
                CheckReport::new("zakai", format!("rho(1) jump ratio event {i} (relative)"), stat, se, Rule::WithinSe { k: 3.0 }, seed)
                    .paths(hits.len())
                    .with_particles(settings.particles),
            );
            if settings.negative_control {
                let se_w = hits.iter().map(|j| (j.se / j.target_wrong).powi(2)).sum::<f64>().sqrt() / k;
                let stat_w = hits.iter().map(|j| j.estimate / j.target_wrong - 1.0).sum::<f64>() / k;
                out.push(
                    CheckReport::new("zakai", format!("rho(1) jump vs F^i var x2 event {i}"), stat_w, se_w, Rule::WithinSe { k: 3.0 }, seed)
                        .paths(hits.len())
                        .with_particles(settings.particles)
                        .negative(true),
                );
            }
        }
    }

    // (c)
    if settings.reference_runs > 0 {
        let phi = TestFunction::tanh_1d();
        let values: Vec<Vec<f64>> = (0..settings.reference_runs as u64)
            .into_par_iter()
            .map(|run| reference_run(sc, &phi, &settings.checkpoints, settings.reference_particles, seed, run))
            .collect::<Result<_>>()?;
        for (c, t) in settings.checkpoints.iter().enumerate() {
            let v: Vec<f64> = values.iter().map(|r| r[c]).collect();
            let (mean, se) = mean_se(&v);
            out.push(
                CheckReport::new("zakai", format!("reference-measure mean M_t(tanh) t={t}"), mean, se, Rule::WithinSe { k: 3.0 }, seed)
                    .paths(settings.reference_runs)
                    .with_particles(settings.reference_particles),
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MatrixField, Preset, ScenarioConfig};

    fn ou() -> ValidatedScenario {
        ScenarioConfig::preset(Preset::OuKalman).validate().unwrap()
    }

    #[test]
    fn pass_flag_follows_rule() {
        let r = CheckReport::new("x", "y", 0.5, 0.2, Rule::WithinSe { k: 3.0 }, 1);
        assert!(r.pass && r.consistent());
        let r = CheckReport::new("x", "y", 0.7, 0.2, Rule::WithinSe { k: 3.0 }, 1);
        assert!(!r.pass && r.consistent());
        assert!(Rule::Range { lo: 3.2, hi: 4.8 }.passes(4.0, f64::NAN));
        assert!(!Rule::AbsTol { tol: 1e-10 }.passes(f64::NAN, 0.0));
    }

    #[test]
    fn check_names_round_trip() {
        for c in Check::all() {
            assert_eq!(c.name().parse::<Check>().unwrap(), c);
        }
        assert!("nope".parse::<Check>().is_err());
    }

    #[test]
    fn deterministic_signal_has_euler_sized_martingale() {
        let sc = ou()
            .with(|c| {
                c.model.diffusion = MatrixField::Constant { matrix: vec![vec![0.0]] };
                c.model.jump = crate::model::JumpMap::none();
            })
            .unwrap();
        let sim = simulate_path_id(&sc, 3, 0).unwrap();
        let nodes = xi_nodes(sc.model(), 8);
        let m = martingale_path(&sc, &sim, &TestFunction::tanh_1d(), &nodes, false);
        let worst = m.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(worst < 1e-3, "{worst}");
        assert!(worst > 0.0);
    }

    #[test]
    fn ols_recovers_planted_coefficients() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![(i as f64 * 0.37).sin(), 0.0, (i as f64).sqrt()]).collect();
        let y: Vec<f64> = x.iter().map(|r| 0.5 - 2.0 * r[0] + 0.1 * r[2]).collect();
        let (beta, se) = ols_hc0(&x, &y).unwrap();
        assert_eq!(beta.len(), 3, "the constant column is dropped");
        for (b, want) in beta.iter().zip([0.5, -2.0, 0.1]) {
            assert!((b - want).abs() < 1e-10);
        }
        assert!(se.iter().all(|s| *s < 1e-8));
    }

    #[test]
    fn delta_b_tilde_vanishes_and_detects_wrong_law() {
        let gh = GaussHermite::new(40);
        for (m, p) in [(0.8, 0.05), (0.6, 0.1), (1.2, 0.2), (2.0, 0.3), (0.0, 0.0)] {
            let d = delta_b_tilde(m, p + 0.01, 0.0, 0.01, &gh, 1.0).unwrap();
            assert!(d.abs() <= 1e-12, "{m} {p}: {d:e}");
        }
        let bad = delta_b_tilde(0.8, 0.06, 0.0, 0.01, &gh, 2.0).unwrap();
        assert!(bad.abs() > 1e-2);
    }

    #[test]
    fn degenerate_prior_keeps_rho1_constant() {
        // P_{T-} = 0 and a zero predictive mean make F^i = F
        let sc = ou()
            .with(|c| {
                c.model.diffusion = MatrixField::Constant { matrix: vec![vec![0.0]] };
                c.model.x0 = vec![0.0];
            })
            .unwrap();
        let params = linear_gaussian(&sc).unwrap();
        let sim = simulate_path_id(&sc, 5, 0).unwrap();
        let jumps = rho_jumps_one_run(&sc, &params, &sim, 50, 5, 0).unwrap();
        assert!((jumps[0].estimate - 1.0).abs() < 1e-14);
        assert_eq!(jumps[0].target, 1.0);
        assert!(jumps[0].se < 1e-14);
    }
}
