//! Euler–Maruyama simulation of `(X, Y)` with the predictable times inserted
//! exactly into the time grid.
//!
//! At each event the increment `dY = f(X_-, Y_-) + eta` is formed from the
//! pre-jump state, then the signal jumps. Brownian increments and marks come
//! from separate per-path streams so refining `dt` leaves the marks alone.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kalman_jump as kalman;
use crate::model::{Schedule, ValidatedScenario};
use crate::quadrature::GaussHermite;
use crate::rng::{stream, Purpose};

/// One observation `(T_i, dY_{T_i})`. `index` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationEvent {
    pub index: usize,
    pub time: f64,
    pub y_pre: Vec<f64>,
    pub dy: Vec<f64>,
    /// Number of signal jumps applied after the observation (always 1 for
    /// deterministic schedules; 0 or more on a threshold grid).
    pub jumps: usize,
}

/// Realized marks of one event: the observation noise and one `xi` per
/// signal jump.
#[derive(Debug, Clone, PartialEq)]
pub struct EventMarks {
    pub eta: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
}

/// A simulated trajectory on the merged grid. `x` and `y` are row-major
/// (`m` resp. `n` values per grid point); rows at event times hold the
/// post-event values.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPath {
    pub m: usize,
    pub n: usize,
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// 1-based event index for rows that are event times.
    pub event_at: Vec<Option<usize>>,
    pub pre_jump: Vec<Vec<f64>>,
    pub marks: Vec<EventMarks>,
}

impl SignalPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn x_row(&self, k: usize) -> &[f64] {
        &self.x[k * self.m..(k + 1) * self.m]
    }

    pub fn y_row(&self, k: usize) -> &[f64] {
        &self.y[k * self.n..(k + 1) * self.n]
    }

    /// Row index of the last grid point at or before `t`.
    pub fn row_at(&self, t: f64) -> usize {
        self.times.partition_point(|s| *s <= t + 1e-12).saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub path: SignalPath,
    pub events: Vec<ObservationEvent>,
    pub warnings: Vec<String>,
}

/// Source of Brownian increments over `[t, t + h]`.
pub trait Noise {
    fn increment(&mut self, t: f64, h: f64, out: &mut [f64]);
}

/// Independent Gaussian increments from a seeded stream.
pub struct StreamNoise<R: Rng>(pub R);

impl<R: Rng> Noise for StreamNoise<R> {
    fn increment(&mut self, _t: f64, h: f64, out: &mut [f64]) {
        let s = h.sqrt();
        for v in out.iter_mut() {
            let z: f64 = self.0.sample(StandardNormal);
            *v = s * z;
        }
    }
}

/// A Brownian path sampled on a fine uniform grid. Increments over any
/// interval whose endpoints lie on that grid are exact sums, so schemes
/// with different step sizes see the same Brownian motion.
pub struct BrownianTape {
    step: f64,
    m: usize,
    cumulative: Vec<f64>,
}

impl BrownianTape {
    pub fn new<R: Rng>(m: usize, step: f64, horizon: f64, rng: &mut R) -> Self {
        let count = (horizon / step).round() as usize;
        let mut cumulative = vec![0.0; (count + 1) * m];
        let s = step.sqrt();
        for k in 1..=count {
            for j in 0..m {
                let z: f64 = rng.sample(StandardNormal);
                cumulative[k * m + j] = cumulative[(k - 1) * m + j] + s * z;
            }
        }
        Self { step, m, cumulative }
    }

    fn node(&self, t: f64) -> usize {
        let k = (t / self.step).round();
        assert!(
            (t - k * self.step).abs() <= 1e-9 * self.step.max(t),
            "time {t} is not on the Brownian tape grid"
        );
        k as usize
    }

    pub fn value(&self, t: f64) -> &[f64] {
        let k = self.node(t);
        &self.cumulative[k * self.m..(k + 1) * self.m]
    }
}

impl Noise for BrownianTape {
    fn increment(&mut self, t: f64, h: f64, out: &mut [f64]) {
        let (a, b) = (self.node(t), self.node(t + h));
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.cumulative[b * self.m + j] - self.cumulative[a * self.m + j];
        }
    }
}

/// Grid of the simulation: multiples of `dt`, the horizon, and the event
/// times, each tagged with its position in `event_times`.
fn merged_grid(dt: f64, horizon: f64, event_times: &[f64]) -> Vec<(f64, Option<usize>)> {
    let count = (horizon / dt + 1e-9).floor() as usize;
    let mut out: Vec<(f64, Option<usize>)> = Vec::with_capacity(count + event_times.len() + 2);
    let tol = 1e-9 * dt;
    let mut e = 0;
    let push = |t: f64, tag: Option<usize>, out: &mut Vec<(f64, Option<usize>)>| match out.last_mut() {
        Some(last) if (last.0 - t).abs() <= tol => {
            if tag.is_some() {
                *last = (t, tag);
            }
        }
        _ => out.push((t, tag)),
    };
    for k in 0..=count {
        let t = k as f64 * dt;
        while e < event_times.len() && event_times[e] <= t + tol {
            push(event_times[e], Some(e), &mut out);
            e += 1;
        }
        push(t, None, &mut out);
    }
    while e < event_times.len() {
        push(event_times[e], Some(e), &mut out);
        e += 1;
    }
    push(horizon, None, &mut out);
    out
}

/// Simulates path 0 of the scenario with the given seed.
pub fn simulate_path(sc: &ValidatedScenario, seed: u64) -> Result<Simulation> {
    simulate_path_id(sc, seed, 0)
}

/// Simulates path `path_id`; paths with distinct ids use independent streams.
pub fn simulate_path_id(sc: &ValidatedScenario, seed: u64, path_id: u64) -> Result<Simulation> {
    let mut noise = StreamNoise(stream(seed, Purpose::Diffusion, path_id));
    simulate_with_noise(sc, seed, path_id, &mut noise)
}

/// Simulation driven by an arbitrary Brownian source; marks still come from
/// the `(seed, path_id)` mark stream.
pub fn simulate_with_noise(
    sc: &ValidatedScenario,
    seed: u64,
    path_id: u64,
    noise: &mut dyn Noise,
) -> Result<Simulation> {
    let model = sc.model();
    let spec = &model.spec;
    let (m, n) = (model.m(), model.n());
    let horizon = sc.horizon();
    let schedule = sc.schedule();
    let event_times = schedule.event_times(horizon);
    let warnings: Vec<String> = schedule
        .dropped_times(horizon)
        .iter()
        .map(|t| format!("scheduled time {t} lies beyond the horizon {horizon} and was dropped"))
        .collect();
    let grid = merged_grid(sc.dt(), horizon, &event_times);
    let mut marks_rng = stream(seed, Purpose::Marks, path_id);
    let mut tracker = schedule.tracker();
    let threshold = matches!(schedule, Schedule::Threshold { .. });

    let mut x = spec.x0.clone();
    let mut y = vec![0.0; n];
    let mut drift = vec![0.0; m];
    let mut diff = vec![0.0; m * m];
    let mut dw = vec![0.0; m];
    let mut fx = vec![0.0; n];
    let mut xi = vec![0.0; m];
    let mut eta = vec![0.0; n];
    let mut next = vec![0.0; m];

    let mut path = SignalPath {
        m,
        n,
        times: Vec::with_capacity(grid.len()),
        x: Vec::with_capacity(grid.len() * m),
        y: Vec::with_capacity(grid.len() * n),
        event_at: Vec::with_capacity(grid.len()),
        pre_jump: Vec::with_capacity(event_times.len()),
        marks: Vec::with_capacity(event_times.len()),
    };
    let mut events = Vec::with_capacity(event_times.len());
    let mut t = 0.0;
    for (k, &(s, tag)) in grid.iter().enumerate() {
        if k > 0 {
            let h = s - t;
            spec.drift.eval(&x, &mut drift);
            spec.diffusion.eval(&x, &mut diff);
            noise.increment(t, h, &mut dw);
            for i in 0..m {
                let mut v = x[i] + drift[i] * h;
                for j in 0..m {
                    v += diff[i * m + j] * dw[j];
                }
                next[i] = v;
            }
            std::mem::swap(&mut x, &mut next);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalBlowup(s));
            }
        }
        t = s;
        let mut event_index = None;
        if tag.is_some() {
            let index = events.len() + 1;
            let y_pre = y.clone();
            spec.observation.eval(&x, &y_pre, &mut fx);
            model.law.sample_mark(&mut marks_rng, &mut xi, &mut eta);
            let dy: Vec<f64> = fx.iter().zip(&eta).map(|(f, e)| f + e).collect();
            for (yy, d) in y.iter_mut().zip(&dy) {
                *yy += d;
            }
            let jumps = if threshold { tracker.observe(y[0]) } else { 1 };
            path.pre_jump.push(x.clone());
            let mut xis = Vec::with_capacity(jumps);
            for j in 0..jumps {
                if j > 0 {
                    // simultaneous threshold crossings carry further marks
                    // whose noise component is not observed
                    model.law.sample_xi(&mut marks_rng, &mut xi);
                }
                spec.jump.apply(&x, &y_pre, &xi, &mut diff, &mut next);
                std::mem::swap(&mut x, &mut next);
                xis.push(xi.clone());
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalBlowup(s));
            }
            path.marks.push(EventMarks { eta: eta.clone(), xi: xis });
            events.push(ObservationEvent { index, time: s, y_pre, dy, jumps });
            event_index = Some(index);
        }
        path.times.push(s);
        path.x.extend_from_slice(&x);
        path.y.extend_from_slice(&y);
        path.event_at.push(event_index);
    }
    Ok(Simulation { path, events, warnings })
}

/// A point at which a filter stops: a reporting time or an event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stop {
    Report(f64),
    Event(usize),
}

/// Reporting times and events merged in time order. Reporting times that
/// coincide with an event are dropped since both sides of the event are
/// reported anyway.
pub fn timeline(report_times: &[f64], events: &[ObservationEvent], horizon: f64) -> Vec<Stop> {
    let mut out = Vec::with_capacity(report_times.len() + events.len());
    let mut reports = report_times.iter().copied().filter(|t| *t <= horizon + 1e-12).peekable();
    for (k, ev) in events.iter().enumerate().filter(|(_, e)| e.time <= horizon) {
        while let Some(&t) = reports.peek() {
            if t > ev.time + 1e-12 {
                break;
            }
            reports.next();
            if (t - ev.time).abs() > 1e-9 {
                out.push(Stop::Report(t));
            }
        }
        out.push(Stop::Event(k));
    }
    out.extend(reports.map(Stop::Report));
    out
}

/// Simulates paths `0..n_paths` in parallel; output order is by path id.
pub fn simulate_many(sc: &ValidatedScenario, seed: u64, n_paths: usize) -> Result<Vec<Simulation>> {
    (0..n_paths as u64).into_par_iter().map(|id| simulate_path_id(sc, seed, id)).collect()
}

/// Integrand `W(t, y) = y_1^power`, optionally restricted to `t <= T_1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkWeight {
    pub power: u32,
    pub first_only: bool,
}

impl MarkWeight {
    pub const ONE: MarkWeight = MarkWeight { power: 0, first_only: false };
    pub const Y: MarkWeight = MarkWeight { power: 1, first_only: false };
    pub const Y2: MarkWeight = MarkWeight { power: 2, first_only: false };
    pub const Y_FIRST: MarkWeight = MarkWeight { power: 1, first_only: true };

    pub fn battery() -> [MarkWeight; 4] {
        [Self::ONE, Self::Y, Self::Y2, Self::Y_FIRST]
    }

    pub fn name(&self) -> String {
        let base = match self.power {
            0 => "1".to_string(),
            1 => "y".to_string(),
            p => format!("y^{p}"),
        };
        if self.first_only {
            format!("1{{t<=T1}}*{base}")
        } else {
            base
        }
    }

    /// `W(T_i, y)` for the event with 1-based index `i`.
    pub fn eval(&self, i: usize, y: f64) -> f64 {
        if self.first_only && i > 1 {
            return 0.0;
        }
        y.powi(self.power as i32)
    }
}

/// Per-path `((W*mu)_inf, (W*nu)_inf)` on a linear-Gaussian scenario, with
/// `F^i` taken from the exact filter.
pub fn empirical_compensator_check_data(
    sc: &ValidatedScenario,
    w: MarkWeight,
    n_paths: usize,
) -> Result<Vec<(f64, f64)>> {
    compensator_data_scaled(sc, w, n_paths, 1.0)
}

/// As [`empirical_compensator_check_data`] with the predictive variance of
/// every `F^i` multiplied by `variance_scale` (a deliberately wrong
/// compensator when the scale differs from 1).
pub fn compensator_data_scaled(
    sc: &ValidatedScenario,
    w: MarkWeight,
    n_paths: usize,
    variance_scale: f64,
) -> Result<Vec<(f64, f64)>> {
    let params = kalman::LinearModelParams::from_scenario(sc)
        .map_err(|e| Error::UnsupportedScenario(format!("no closed-form predictive law: {e}")))?;
    let gh = GaussHermite::new(24);
    let x0 = sc.model().spec.x0.clone();
    let seed = sc.seed();
    (0..n_paths as u64)
        .into_par_iter()
        .map(|id| {
            let sim = simulate_path_id(sc, seed, id)?;
            let start = kalman::GaussianBelief::point(0.0, &x0);
            let traj = kalman::run_filter_with(&params, start, &sim.events, &[], sc.horizon(), sc.filter().ordering)?;
            let mut mu = 0.0;
            let mut nu = 0.0;
            for (ev, law) in sim.events.iter().zip(&traj.predictive) {
                mu += w.eval(ev.index, ev.dy[0]);
                let var = law.s[(0, 0)] * variance_scale;
                nu += gh.expect(law.pred_mean[0], var, |y| w.eval(ev.index, y));
            }
            Ok((mu, nu))
        })
        .collect()
}
