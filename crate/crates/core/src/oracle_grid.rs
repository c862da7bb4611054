//! Deterministic grid filter for one-dimensional scenarios.
//!
//! The conditional density lives on `G` uniform nodes. Between events it is
//! pushed through the Euler transition kernel
//! `N(x + a(x) h, b(x)^2 h)` one step at a time; at an event it is multiplied
//! by the noise likelihood, renormalized, and convolved with the jump kernel
//! of `x -> J(x, Y_-, xi)`, `xi ~ F_{xi|eta}`.

use crate::error::{Error, Result};
use crate::kalman_jump::Side;
use crate::model::{Model, ValidatedScenario, XiDistribution};
use crate::particle::TestFunction;
use crate::quadrature::GaussHermite;
use crate::simulate::{simulate_many, timeline, ObservationEvent, Stop};

/// Kernels narrower than this many cells are deposited by linear splitting.
const NARROW: f64 = 0.75;
/// Gaussian kernels are truncated at this many standard deviations.
const BAND: f64 = 8.0;
/// Share of nodes on each side counted as boundary region.
const EDGE_SHARE: f64 = 0.02;
pub const BOUNDARY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub lo: f64,
    pub hi: f64,
    pub t: f64,
    pub p: Vec<f64>,
}

impl GridDensity {
    pub fn zeros(lo: f64, hi: f64, nodes: usize, t: f64) -> Self {
        Self { lo, hi, t, p: vec![0.0; nodes] }
    }

    pub fn from_fn(lo: f64, hi: f64, nodes: usize, t: f64, f: impl Fn(f64) -> f64) -> Self {
        let mut g = Self::zeros(lo, hi, nodes, t);
        for k in 0..nodes {
            g.p[k] = f(g.x(k));
        }
        g
    }

    pub fn gaussian(lo: f64, hi: f64, nodes: usize, mean: f64, var: f64) -> Self {
        let c = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
        Self::from_fn(lo, hi, nodes, 0.0, |x| c * (-(x - mean).powi(2) / (2.0 * var)).exp())
    }

    pub fn nodes(&self) -> usize {
        self.p.len()
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.p.len() - 1) as f64
    }

    pub fn x(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.dx()
    }

    /// Trapezoidal integral of `g(x) p(x)`.
    pub fn integrate(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        let n = self.p.len();
        let dx = self.dx();
        let mut s = 0.0;
        for k in 0..n {
            let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            if self.p[k] != 0.0 {
                s += w * self.p[k] * g(self.x(k));
            }
        }
        s * dx
    }

    pub fn mass(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|x| x) / self.mass()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.integrate(|x| (x - m) * (x - m)) / self.mass()
    }

    /// Mass in the outer `EDGE_SHARE` of nodes on both sides.
    pub fn boundary_mass(&self) -> f64 {
        let n = self.p.len();
        let edge = ((n as f64 * EDGE_SHARE).ceil() as usize).max(1);
        let dx = self.dx();
        let left: f64 = self.p[..edge].iter().sum();
        let right: f64 = self.p[n - edge..].iter().sum();
        (left + right) * dx
    }

    fn normalize(&mut self) -> f64 {
        let mass = self.mass();
        if mass > 0.0 && mass.is_finite() {
            self.p.iter_mut().for_each(|v| *v /= mass);
        }
        mass
    }

    fn check_boundary(&self) -> Result<()> {
        let b = self.boundary_mass();
        if b > BOUNDARY_TOL {
            return Err(Error::BoundaryLeak { t: self.t, mass: b });
        }
        Ok(())
    }
}

/// Adds `mass` spread as `N(mean, sd^2)` (or split linearly between the two
/// nearest nodes when narrow) to the density values `out`.
fn deposit(out: &mut [f64], lo: f64, dx: f64, mean: f64, sd: f64, mass: f64) {
    if mass == 0.0 {
        return;
    }
    let n = out.len() as isize;
    let pos = (mean - lo) / dx;
    if !(sd > NARROW * dx) {
        let k = pos.floor();
        let frac = pos - k;
        let k = k as isize;
        if (0..n).contains(&k) {
            out[k as usize] += mass * (1.0 - frac) / dx;
        }
        if (0..n).contains(&(k + 1)) {
            out[(k + 1) as usize] += mass * frac / dx;
        }
        return;
    }
    let reach = BAND * sd / dx;
    let first = (pos - reach).floor() as isize;
    let last = (pos + reach).ceil() as isize;
    // Gaussian weights by recurrence: w_{j+1} = w_j r_j, r_{j+1} = r_j q
    let u = (first as f64 - pos) * dx / sd;
    let h = dx / sd;
    let mut w = (-0.5 * u * u).exp();
    let mut r = (-(u * h) - 0.5 * h * h).exp();
    let q = (-h * h).exp();
    let mut weights = Vec::with_capacity((last - first + 1) as usize);
    let mut total = 0.0;
    for _ in first..=last {
        weights.push(w);
        total += w;
        w *= r;
        r *= q;
    }
    let scale = mass / (total * dx);
    for (j, wj) in (first..=last).zip(weights) {
        if (0..n).contains(&j) {
            out[j as usize] += wj * scale;
        }
    }
}

fn require_scalar(model: &Model) -> Result<()> {
    if !model.is_scalar() {
        return Err(Error::incompatible("grid", "the grid oracle handles one-dimensional signals and observations only"));
    }
    Ok(())
}

/// One Euler transition of length `h` applied to a point mass at `x`.
fn euler_kernel(model: &Model, x: f64, h: f64) -> (f64, f64) {
    (x + model.drift_scalar(x) * h, model.diffusion_scalar(x).abs() * h.sqrt())
}

/// Chapman–Kolmogorov with the Euler kernel in steps no longer than `dt`.
pub fn grid_propagate(p: &GridDensity, model: &Model, delta: f64, dt: f64) -> Result<GridDensity> {
    require_scalar(model)?;
    if delta < 0.0 {
        return Err(Error::NegativeDt(delta));
    }
    if delta == 0.0 {
        return Ok(p.clone());
    }
    let steps = ((delta / dt) - 1e-9).ceil().max(1.0) as usize;
    let h = delta / steps as f64;
    let dx = p.dx();
    let mut cur = p.clone();
    let mut next = vec![0.0; p.nodes()];
    for _ in 0..steps {
        next.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..cur.nodes() {
            let pk = cur.p[k];
            if pk < 1e-300 {
                continue;
            }
            let (mean, sd) = euler_kernel(model, cur.x(k), h);
            deposit(&mut next, cur.lo, dx, mean, sd, pk * dx);
        }
        std::mem::swap(&mut cur.p, &mut next);
        cur.t += h;
    }
    cur.normalize();
    cur.check_boundary()?;
    Ok(cur)
}

/// Pointwise multiplication by the noise likelihood, renormalized.
pub fn grid_bayes(p: &GridDensity, event: &ObservationEvent, model: &Model) -> Result<GridDensity> {
    require_scalar(model)?;
    let mut out = p.clone();
    for k in 0..out.nodes() {
        if out.p[k] == 0.0 {
            continue;
        }
        let x = out.x(k);
        let eta = event.dy[0] - model.spec.observation.eval_scalar(x, &event.y_pre);
        let ll = model.law.eta_log_density(&[eta]);
        out.p[k] *= if ll.is_nan() { 0.0 } else { ll.exp() };
    }
    let mass = out.normalize();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::ZeroLikelihoodMass(event.index));
    }
    Ok(out)
}

/// Convolution with the signal-jump kernel; the first jump uses
/// `F_{xi|eta}` at each node's implied noise, further ones the marginal.
pub fn grid_jump(p: &GridDensity, event: &ObservationEvent, model: &Model) -> Result<GridDensity> {
    require_scalar(model)?;
    let mut cur = p.clone();
    if event.jumps == 0 || model.spec.jump.is_identity() {
        return Ok(cur);
    }
    let dx = cur.dx();
    for j in 0..event.jumps {
        let mut next = vec![0.0; cur.nodes()];
        for k in 0..cur.nodes() {
            let pk = cur.p[k];
            if pk == 0.0 {
                continue;
            }
            let x = cur.x(k);
            let dist = if j == 0 {
                let eta = event.dy[0] - model.spec.observation.eval_scalar(x, &event.y_pre);
                match model.law.conditional(&[eta]) {
                    Ok(d) => d,
                    // no compatible atom: this node carries no posterior mass
                    Err(Error::ZeroConditionalMass(_)) => continue,
                    Err(e) => return Err(e),
                }
            } else {
                model.law.xi_marginal()
            };
            push_jump(&mut next, &cur, model, x, &event.y_pre, &dist, pk * dx)?;
        }
        cur.p = next;
    }
    cur.normalize();
    cur.check_boundary()?;
    Ok(cur)
}

fn push_jump(
    out: &mut [f64],
    grid: &GridDensity,
    model: &Model,
    x: f64,
    y_pre: &[f64],
    dist: &XiDistribution,
    mass: f64,
) -> Result<()> {
    let (lo, dx) = (grid.lo, grid.dx());
    let jump = &model.spec.jump;
    match dist {
        XiDistribution::PointMass(z) => deposit(out, lo, dx, jump.apply_scalar(x, y_pre, z[0]), 0.0, mass),
        XiDistribution::Atoms(a) => {
            for (pt, w) in a.points.iter().zip(&a.probs) {
                deposit(out, lo, dx, jump.apply_scalar(x, y_pre, pt[0]), 0.0, mass * w);
            }
        }
        XiDistribution::Gaussian(g) => {
            let Some(c) = jump.scalar_loading(x) else {
                return Err(Error::incompatible("grid", "Gaussian marks need an additive jump map"));
            };
            let sd = (c * c * g.cov[(0, 0)]).max(0.0).sqrt();
            deposit(out, lo, dx, x + c * g.mean[0], sd, mass);
        }
    }
    Ok(())
}

/// Bayes update followed by the jump convolution.
pub fn grid_event_update(p: &GridDensity, event: &ObservationEvent, model: &Model) -> Result<GridDensity> {
    grid_jump(&grid_bayes(p, event, model)?, event, model)
}

pub fn grid_expectation(p: &GridDensity, phi: &TestFunction) -> f64 {
    p.integrate(|x| phi.eval(&[x])) / p.mass()
}

fn event_at(y_pre: &[f64], y: f64, jumps: usize) -> ObservationEvent {
    ObservationEvent { index: 0, time: f64::NAN, y_pre: y_pre.to_vec(), dy: vec![y], jumps }
}

/// `S(phi)(y) = E[phi(X_{T}) | pre-event law, dY = y] - pi_{T-}(phi)`:
/// the filter's change at an event if the increment were `y`.
pub fn grid_s_phi(p_pre: &GridDensity, model: &Model, phi: &TestFunction, y_pre: &[f64], y: f64, jumps: usize) -> Result<f64> {
    let post = grid_event_update(p_pre, &event_at(y_pre, y, jumps), model)?;
    Ok(grid_expectation(&post, phi) - grid_expectation(p_pre, phi))
}

/// `E[phi(X_T) - phi(X_{T-}) | dY = y]`: the expected change of the signal
/// itself, which vanishes when the signal does not jump.
pub fn grid_conditional_jump(p_pre: &GridDensity, model: &Model, phi: &TestFunction, y_pre: &[f64], y: f64, jumps: usize) -> Result<f64> {
    let ev = event_at(y_pre, y, jumps);
    let bayes = grid_bayes(p_pre, &ev, model)?;
    let post = grid_jump(&bayes, &ev, model)?;
    Ok(grid_expectation(&post, phi) - grid_expectation(&bayes, phi))
}

/// Density of `F^i` at `y`: `int p(x) g(y - f(x, Y_-)) dx`.
pub fn predictive_density(p_pre: &GridDensity, model: &Model, y_pre: &[f64], y: f64) -> f64 {
    p_pre.integrate(|x| {
        let eta = y - model.spec.observation.eval_scalar(x, y_pre);
        let ll = model.law.eta_log_density(&[eta]);
        if ll.is_nan() { 0.0 } else { ll.exp() }
    }) / p_pre.mass()
}

/// Mean and variance of `F^i`.
pub fn predictive_moments(p_pre: &GridDensity, model: &Model, y_pre: &[f64]) -> Result<(f64, f64)> {
    let (eta_mean, eta_var) = match &model.law.eta {
        crate::model::jump_law::EtaLaw::Gaussian(g) => (g.mean[0], g.cov[(0, 0)]),
        _ => return Err(Error::UnsupportedScenario("the predictive law needs a Gaussian noise".into())),
    };
    let mass = p_pre.mass();
    let f = |x: f64| model.spec.observation.eval_scalar(x, y_pre);
    let mf = p_pre.integrate(f) / mass;
    let vf = p_pre.integrate(|x| (f(x) - mf).powi(2)) / mass;
    Ok((mf + eta_mean, vf + eta_var))
}

/// `int S(phi)(y) F^i(dy)` by Gauss–Hermite in `y`, anchored at the moments
/// of `F^i` and importance-corrected by its grid density.
pub fn grid_s_phi_nu(
    p_pre: &GridDensity,
    model: &Model,
    phi: &TestFunction,
    y_pre: &[f64],
    jumps: usize,
    order: usize,
) -> Result<f64> {
    SFunctional::new(p_pre, model, phi, y_pre, jumps)?.integral_nu(order)
}

/// `S(phi)` at one event, prepared for many evaluations. When the marks do
/// not depend on the noise, the jump kernel is folded into per-node tables
/// so each evaluation costs one pass over the grid.
pub struct SFunctional<'a> {
    p_pre: &'a GridDensity,
    model: &'a Model,
    phi: &'a TestFunction,
    y_pre: Vec<f64>,
    jumps: usize,
    base: f64,
    /// `(g, mass)`: post-event expectation is `sum c g / sum c mass` with
    /// `c` the Bayes-updated density values.
    tables: Option<(Vec<f64>, Vec<f64>)>,
}

impl<'a> SFunctional<'a> {
    pub fn new(p_pre: &'a GridDensity, model: &'a Model, phi: &'a TestFunction, y_pre: &[f64], jumps: usize) -> Result<Self> {
        require_scalar(model)?;
        let n = p_pre.nodes();
        let dx = p_pre.dx();
        let trap = |k: usize| if k == 0 || k == n - 1 { 0.5 * dx } else { dx };
        let no_jump = jumps == 0 || model.spec.jump.is_identity();
        let tables = if no_jump {
            let g = (0..n).map(|k| trap(k) * phi.eval(&[p_pre.x(k)])).collect();
            Some((g, (0..n).map(trap).collect()))
        } else if model.law.xi_independent_of_eta() {
            let dist = model.law.xi_marginal();
            let mut kernel = vec![0.0; n];
            let mut g = (0..n).map(|k| trap(k) * phi.eval(&[p_pre.x(k)])).collect::<Vec<_>>();
            let mut mass = (0..n).map(trap).collect::<Vec<_>>();
            for _ in 0..jumps {
                let mut g_next = vec![0.0; n];
                let mut mass_next = vec![0.0; n];
                for k in 0..n {
                    kernel.iter_mut().for_each(|v| *v = 0.0);
                    push_jump(&mut kernel, p_pre, model, p_pre.x(k), y_pre, &dist, 1.0)?;
                    let (mut a, mut b) = (0.0, 0.0);
                    for ((kv, gv), mv) in kernel.iter().zip(&g).zip(&mass) {
                        if *kv != 0.0 {
                            a += kv * gv;
                            b += kv * mv;
                        }
                    }
                    g_next[k] = a;
                    mass_next[k] = b;
                }
                g = g_next;
                mass = mass_next;
            }
            Some((g, mass))
        } else {
            None
        };
        Ok(Self { p_pre, model, phi, y_pre: y_pre.to_vec(), jumps, base: grid_expectation(p_pre, phi), tables })
    }

    /// `S(phi)(y)`.
    pub fn eval(&self, y: f64) -> Result<f64> {
        let Some((g, mass)) = &self.tables else {
            return grid_s_phi(self.p_pre, self.model, self.phi, &self.y_pre, y, self.jumps);
        };
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..self.p_pre.nodes() {
            let pk = self.p_pre.p[k];
            if pk == 0.0 {
                continue;
            }
            let eta = y - self.model.spec.observation.eval_scalar(self.p_pre.x(k), &self.y_pre);
            let ll = self.model.law.eta_log_density(&[eta]);
            if ll.is_nan() {
                continue;
            }
            let c = pk * ll.exp();
            num += c * g[k];
            den += c * mass[k];
        }
        if !(den > 0.0) {
            return Err(Error::ZeroLikelihoodMass(0));
        }
        Ok(num / den - self.base)
    }

    /// `int S(phi)(y) F^i(dy)` by a Gauss–Hermite rule of the given order.
    pub fn integral_nu(&self, order: usize) -> Result<f64> {
        let (mean, var) = predictive_moments(self.p_pre, self.model, &self.y_pre)?;
        let gh = GaussHermite::new(order);
        let sd = var.sqrt();
        let norm = |y: f64| (-(y - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let mut total = 0.0;
        for (z, w) in gh.nodes.iter().zip(&gh.weights) {
            let y = mean + sd * z;
            let ratio = predictive_density(self.p_pre, self.model, &self.y_pre, y) / norm(y);
            if ratio == 0.0 || *w < 1e-300 {
                continue;
            }
            total += w * ratio * self.eval(y)?;
        }
        Ok(total)
    }
}

/// Domain from the explicit bounds or from a pilot simulation: the union of
/// `mean_t +- width_sds sd_t` over the simulation grid.
pub fn grid_domain(sc: &ValidatedScenario) -> Result<(f64, f64)> {
    require_scalar(sc.model())?;
    let g = &sc.filter().grid;
    if let Some([lo, hi]) = g.bounds {
        return Ok((lo, hi));
    }
    let sims = simulate_many(sc, sc.seed() ^ 0x9e37_79b9_7f4a_7c15, g.pilot_paths.max(2))?;
    let rows = sims[0].path.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..rows {
        let n = sims.len() as f64;
        let mean = sims.iter().map(|s| s.path.x[k]).sum::<f64>() / n;
        let var = sims.iter().map(|s| (s.path.x[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt().max(0.05 * mean.abs().max(1.0));
        lo = lo.min(mean - g.width_sds * sd);
        hi = hi.max(mean + g.width_sds * sd);
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub t: f64,
    pub side: Side,
    pub event_index: Option<usize>,
    pub mean: f64,
    pub var: f64,
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct GridTrajectory {
    pub rows: Vec<GridRow>,
    /// Densities at the rows, when requested.
    pub densities: Vec<(f64, Side, GridDensity)>,
    /// Pre-event densities, one per event.
    pub pre_event: Vec<GridDensity>,
}

/// Full grid filter from a point mass at `x0`. The first Euler step from the
/// point mass is taken analytically so the grid never holds a Dirac.
pub fn run_grid_filter(sc: &ValidatedScenario, events: &[ObservationEvent], keep_densities: bool) -> Result<GridTrajectory> {
    let (lo, hi) = grid_domain(sc)?;
    run_grid_filter_on(sc, events, lo, hi, sc.filter().grid.nodes, sc.dt(), keep_densities)
}

pub fn run_grid_filter_on(
    sc: &ValidatedScenario,
    events: &[ObservationEvent],
    lo: f64,
    hi: f64,
    nodes: usize,
    dt: f64,
    keep_densities: bool,
) -> Result<GridTrajectory> {
    let model = sc.model();
    require_scalar(model)?;
    let x0 = model.spec.x0[0];
    let mut out = GridTrajectory { rows: Vec::new(), densities: Vec::new(), pre_event: Vec::new() };
    let mut density: Option<GridDensity> = None;
    let advance = |density: Option<GridDensity>, t: f64| -> Result<GridDensity> {
        match density {
            Some(d) => grid_propagate(&d, model, t - d.t, dt),
            None => {
                let h = dt.min(t);
                let mut d = GridDensity::zeros(lo, hi, nodes, h);
                let (mean, sd) = euler_kernel(model, x0, h);
                let dx = d.dx();
                deposit(&mut d.p, lo, dx, mean, sd, 1.0);
                d.normalize();
                d.check_boundary()?;
                grid_propagate(&d, model, t - h, dt)
            }
        }
    };
    let push = |out: &mut GridTrajectory, d: Option<&GridDensity>, t: f64, side: Side, idx: Option<usize>| {
        let (mean, var, mass) = match d {
            Some(d) => (d.mean(), d.variance(), d.mass()),
            None => (x0, 0.0, 1.0),
        };
        out.rows.push(GridRow { t, side, event_index: idx, mean, var, mass });
        if keep_densities {
            if let Some(d) = d {
                out.densities.push((t, side, d.clone()));
            }
        }
    };
    for stop in timeline(&sc.report_times(), events, sc.horizon()) {
        match stop {
            Stop::Report(t) => {
                if t > 0.0 {
                    density = Some(advance(density.take(), t)?);
                    density.as_mut().unwrap().t = t;
                }
                push(&mut out, density.as_ref(), t, Side::Interior, None);
            }
            Stop::Event(k) => {
                let ev = &events[k];
                let mut d = advance(density.take(), ev.time)?;
                d.t = ev.time;
                push(&mut out, Some(&d), ev.time, Side::Pre, Some(ev.index));
                out.pre_event.push(d.clone());
                let post = grid_event_update(&d, ev, model)?;
                push(&mut out, Some(&post), ev.time, Side::Post, Some(ev.index));
                density = Some(post);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman_jump::{self, GaussianBelief, LinearModelParams};
    use crate::model::{JumpLaw, JumpMap, MatrixField, Preset, ScenarioConfig, VectorField};

    fn ou() -> ValidatedScenario {
        ScenarioConfig::preset(Preset::OuKalman).validate().unwrap()
    }

    fn event(dy: f64) -> ObservationEvent {
        ObservationEvent { index: 1, time: 0.5, y_pre: vec![0.0], dy: vec![dy], jumps: 1 }
    }

    #[test]
    fn deposit_conserves_mass_and_moments() {
        let mut out = vec![0.0; 401];
        deposit(&mut out, -2.0, 0.01, 0.123, 0.05, 1.0);
        let g = GridDensity { lo: -2.0, hi: 2.0, t: 0.0, p: out };
        assert!((g.mass() - 1.0).abs() < 1e-12);
        assert!((g.mean() - 0.123).abs() < 1e-12);
        assert!((g.variance() - 0.0025).abs() < 1e-10);
        let mut hat = vec![0.0; 401];
        deposit(&mut hat, -2.0, 0.01, 0.1234, 0.0, 1.0);
        let h = GridDensity { lo: -2.0, hi: 2.0, t: 0.0, p: hat };
        assert!((h.mean() - 0.1234).abs() < 1e-12);
    }

    #[test]
    fn zero_step_is_identity() {
        let g = GridDensity::gaussian(-3.0, 3.0, 601, 0.0, 0.2);
        assert_eq!(grid_propagate(&g, ou().model(), 0.0, 1e-3).unwrap(), g);
    }

    #[test]
    fn heat_kernel_variance_growth() {
        let sc = ou().with(|c| c.model.drift = VectorField::Constant { value: vec![0.0] }).unwrap();
        let g = GridDensity::gaussian(-4.0, 4.0, 2001, 0.0, 0.1);
        let out = grid_propagate(&g, sc.model(), 0.2, 1e-3).unwrap();
        assert!((out.variance() - (0.1 + 0.25 * 0.2)).abs() < 1e-6);
        assert!(out.mean().abs() < 1e-12);
        assert!((out.mass() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn ou_moments_from_narrow_prior() {
        let sc = ou();
        let g = GridDensity::gaussian(-2.5, 3.5, 2000, 1.0, 1e-4);
        // the kernel reproduces the Euler chain exactly ...
        let out = grid_propagate(&g, sc.model(), 0.4, 1e-3).unwrap();
        let euler = 0.999f64.powi(400);
        assert!((out.mean() - euler).abs() < 1e-10);
        let v_euler = 0.998001f64.powi(400) * 1e-4
            + 0.25e-3 * (1.0 - 0.998001f64.powi(400)) / (1.0 - 0.998001);
        assert!((out.variance() - v_euler).abs() < 1e-10);
        // ... whose O(dt) bias against the exact flow is below 1e-4 up to t = 0.2
        let out = grid_propagate(&g, sc.model(), 0.2, 1e-3).unwrap();
        let m = (-0.2f64).exp();
        let v = 0.125 * (1.0 - (-0.4f64).exp()) + 1e-4 * (-0.4f64).exp();
        assert!((out.mean() - m).abs() < 1e-4, "{}", out.mean() - m);
        assert!((out.variance() - v).abs() < 1e-4, "{}", out.variance() - v);
    }

    #[test]
    fn flat_likelihood_without_jumps_is_identity() {
        let sc = ou()
            .with(|c| {
                c.model.jump_law = JumpLaw::DegenerateXiZero { eta_mean: vec![0.0], eta_cov: vec![vec![1e12]] };
            })
            .unwrap();
        let g = GridDensity::gaussian(-3.0, 3.0, 601, 0.2, 0.1);
        let out = grid_event_update(&g, &event(0.4), sc.model()).unwrap();
        for (a, b) in out.p.iter().zip(&g.p) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn linear_gaussian_update_matches_kalman() {
        let sc = ou();
        let g = GridDensity::gaussian(-2.0, 3.5, 2000, 0.8, 0.05);
        let out = grid_event_update(&g, &event(0.9), sc.model()).unwrap();
        let kf = kalman_jump::jump_update(
            &GaussianBelief::scalar(0.5, 0.8, 0.05),
            &event(0.9),
            &LinearModelParams::scalar(1.0, 0.5, 1.0, 0.0, 0.04, 0.01),
            crate::model::UpdateOrdering::ObserveThenJump,
        )
        .unwrap();
        assert!((out.mean() - kf.belief.mean[0]).abs() < 1e-3);
        assert!((out.variance() - kf.belief.cov[(0, 0)]).abs() < 1e-3);
    }

    #[test]
    fn bump_masses_follow_bayes_weights() {
        let sc = ou()
            .with(|c| {
                c.model.jump_law = JumpLaw::DegenerateXiZero { eta_mean: vec![0.0], eta_cov: vec![vec![0.09]] };
            })
            .unwrap();
        let (a, b, pa) = (-0.5f64, 0.7f64, 0.3f64);
        let s2 = 1e-4;
        let bump = |x: f64, c: f64| (-(x - c).powi(2) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();
        let g = GridDensity::from_fn(-2.0, 2.0, 4001, 0.0, |x| pa * bump(x, a) + (1.0 - pa) * bump(x, b));
        let y = 0.4;
        let out = grid_event_update(&g, &event(y), sc.model()).unwrap();
        let like = |c: f64| (-(y - c).powi(2) / 0.18).exp();
        let want = pa * like(a) / (pa * like(a) + (1.0 - pa) * like(b));
        let left = out.integrate(|x| if x < 0.1 { 1.0 } else { 0.0 });
        assert!((left - want).abs() < 1e-4, "{left} vs {want}");
    }

    #[test]
    fn s_phi_trivial_cases() {
        let sc = ou();
        let g = GridDensity::gaussian(-2.0, 3.5, 1500, 0.8, 0.05);
        let one = TestFunction::Bump { center: vec![0.0], scale: f64::INFINITY };
        for y in [-0.5, 0.3, 1.2] {
            assert!(grid_s_phi(&g, sc.model(), &one, &[0.0], y, 1).unwrap().abs() < 1e-14);
        }
        let still = sc.with(|c| c.model.jump = JumpMap::none()).unwrap();
        let phi = TestFunction::tanh_1d();
        for y in [-0.5, 0.3, 1.2] {
            assert!(grid_conditional_jump(&g, still.model(), &phi, &[0.0], y, 1).unwrap().abs() < 1e-14);
        }
    }

    #[test]
    fn s_phi_matches_kalman_mean_change() {
        let sc = ou();
        let g = GridDensity::gaussian(-2.0, 3.5, 2000, 0.8, 0.05);
        let phi = TestFunction::clipped_identity();
        let params = LinearModelParams::scalar(1.0, 0.5, 1.0, 0.0, 0.04, 0.01);
        for y in [0.4, 0.8, 1.1] {
            let kf = kalman_jump::jump_update(
                &GaussianBelief::scalar(0.5, 0.8, 0.05),
                &event(y),
                &params,
                crate::model::UpdateOrdering::ObserveThenJump,
            )
            .unwrap();
            let s = grid_s_phi(&g, sc.model(), &phi, &[0.0], y, 1).unwrap();
            assert!((s - (kf.belief.mean[0] - 0.8)).abs() < 1e-3);
        }
    }

    #[test]
    fn tabulated_s_phi_matches_direct_update() {
        let phi = TestFunction::tanh_1d();
        for (sc, y_pre, jumps) in [(ou(), 0.0, 1), (ou(), 0.0, 2), (ScenarioConfig::preset(Preset::CreditRisk).validate().unwrap(), -0.1, 1)] {
            let g = GridDensity::gaussian(-2.0, 3.5, 1200, 0.3, 0.05);
            let s = SFunctional::new(&g, sc.model(), &phi, &[y_pre], jumps).unwrap();
            for y in [0.1, 0.35, 0.6] {
                let direct = grid_s_phi(&g, sc.model(), &phi, &[y_pre], y, jumps).unwrap();
                assert!((s.eval(y).unwrap() - direct).abs() < 1e-12, "{y}");
            }
        }
    }

    #[test]
    fn s_phi_integrates_to_expected_jump() {
        // tower property: int S dF^i = pi_-(A phi)
        let sc = ou();
        let g = GridDensity::gaussian(-2.5, 4.0, 2000, 0.8, 0.05);
        let phi = TestFunction::tanh_1d();
        let nodes = crate::particle::phi::xi_nodes(sc.model(), 40);
        let want = g.integrate(|x| phi.jump_operator(sc.model(), &[x], &[0.0], &nodes)) / g.mass();
        let got = grid_s_phi_nu(&g, sc.model(), &phi, &[0.0], 1, 40).unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn rejects_multivariate_models() {
        let sc = ou()
            .with(|c| {
                c.model.dims = crate::model::Dims { m: 2, n: 1 };
                c.model.drift = VectorField::Linear { matrix: vec![vec![-1.0, 0.0], vec![0.0, -1.0]] };
                c.model.diffusion = MatrixField::Constant { matrix: vec![vec![0.5, 0.0], vec![0.0, 0.5]] };
                c.model.jump = JumpMap::none();
                c.model.observation = crate::model::ObservationFn::Linear { a: vec![vec![1.0, 0.0]], c: vec![vec![0.0]] };
                c.model.jump_law = JumpLaw::DegenerateXiZero { eta_mean: vec![0.0], eta_cov: vec![vec![0.01]] };
                c.model.x0 = vec![1.0, 0.0];
            })
            .unwrap();
        assert!(matches!(grid_domain(&sc), Err(Error::IncompatibleMethod { .. })));
    }
}
