//! Particle approximations of the conditional law.
//!
//! In normalized mode the ensemble approximates `pi_t`: between events the
//! particles follow Euler–Maruyama, and at an event the weights are
//! multiplied by the noise density of `dY - f(x, Y_-)` and renormalized,
//! after which every particle draws its jump from `F_{xi|eta}`. In
//! unnormalized mode the weights approximate `rho_t` under the reference
//! measure: the likelihood is divided by the reference density of `dY` and
//! never renormalized, so `ln rho_t(1)` accumulates exactly in log space.

pub mod phi;
pub mod resample;
pub mod zakai;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kalman_jump::Side;
use crate::model::{Model, ValidatedScenario};
use crate::rng::{stream, Purpose};
use crate::simulate::{timeline, ObservationEvent, Stop};

pub use phi::TestFunction;
pub use resample::{ess, log_sum_exp, systematic};
pub use zakai::gamma_gaussian;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Normalized,
    Unnormalized,
}

/// One ESS evaluation at an event.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleRecord {
    pub t: f64,
    pub event_index: usize,
    pub ess: f64,
    pub resampled: bool,
}

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub m: usize,
    pub t: f64,
    /// Row-major positions, `m` values per particle.
    pub positions: Vec<f64>,
    pub log_w: Vec<f64>,
    pub mode: Mode,
    /// `ln sum w`; zero in normalized mode.
    pub log_rho1: f64,
    /// Index of each particle's time-zero ancestor.
    pub eve: Vec<usize>,
    pub threshold: f64,
    pub trace: Vec<ResampleRecord>,
    rng: ChaCha8Rng,
}

impl ParticleEnsemble {
    /// `n` equally weighted copies of `x0` (total mass one).
    pub fn from_point(x0: &[f64], n: usize, mode: Mode, threshold: f64, rng: ChaCha8Rng) -> Self {
        let positions = x0.iter().copied().cycle().take(n * x0.len()).collect();
        Self::from_weighted(x0.len(), positions, vec![1.0 / n as f64; n], mode, threshold, rng)
    }

    /// Arbitrary positions with linear weights; normalized mode rescales them.
    pub fn from_weighted(
        m: usize,
        positions: Vec<f64>,
        weights: Vec<f64>,
        mode: Mode,
        threshold: f64,
        rng: ChaCha8Rng,
    ) -> Self {
        let n = weights.len();
        assert_eq!(positions.len(), n * m);
        let mut log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        let lse = log_sum_exp(&log_w);
        let log_rho1 = match mode {
            Mode::Normalized => {
                log_w.iter_mut().for_each(|l| *l -= lse);
                0.0
            }
            Mode::Unnormalized => lse,
        };
        Self {
            m,
            t: 0.0,
            positions,
            log_w,
            mode,
            log_rho1,
            eve: (0..n).collect(),
            threshold,
            trace: Vec::new(),
            rng,
        }
    }

    pub fn len(&self) -> usize {
        self.log_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_w.is_empty()
    }

    pub fn particle(&self, j: usize) -> &[f64] {
        &self.positions[j * self.m..(j + 1) * self.m]
    }

    pub fn ess(&self) -> f64 {
        ess(&self.log_w)
    }

    /// Weights normalized to sum to one.
    pub fn weights(&self) -> Vec<f64> {
        resample::normalized(&self.log_w)
    }

    /// Euler–Maruyama over `delta` in steps no longer than `step`; no event
    /// may fall inside the interval.
    pub fn propagate(&mut self, model: &Model, delta: f64, step: f64) -> Result<()> {
        if delta < 0.0 {
            return Err(Error::NegativeDt(delta));
        }
        if delta == 0.0 {
            return Ok(());
        }
        let steps = ((delta / step) - 1e-9).ceil().max(1.0) as usize;
        let h = delta / steps as f64;
        let sq = h.sqrt();
        let m = self.m;
        let spec = &model.spec;
        let mut a = vec![0.0; m];
        let mut b = vec![0.0; m * m];
        let mut z = vec![0.0; m];
        let constant_b = spec.diffusion.constant_matrix(m);
        if let Some(c) = &constant_b {
            for i in 0..m {
                for j in 0..m {
                    b[i * m + j] = c[i][j];
                }
            }
        }
        for _ in 0..steps {
            for x in self.positions.chunks_exact_mut(m) {
                spec.drift.eval(x, &mut a);
                if constant_b.is_none() {
                    spec.diffusion.eval(x, &mut b);
                }
                for v in z.iter_mut() {
                    *v = self.rng.sample::<f64, _>(StandardNormal) * sq;
                }
                for i in 0..m {
                    let mut d = a[i] * h;
                    for j in 0..m {
                        d += b[i * m + j] * z[j];
                    }
                    x[i] += d;
                }
            }
            self.t += h;
        }
        if self.positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup(self.t));
        }
        Ok(())
    }

    fn add_log_likelihoods(&mut self, event: &ObservationEvent, model: &Model, offset: f64) {
        let mut scratch = vec![0.0; model.n()];
        for (j, x) in self.positions.chunks_exact(self.m).enumerate() {
            let ll = model.log_likelihood(x, &event.y_pre, &event.dy, &mut scratch);
            self.log_w[j] += if ll.is_nan() { f64::NEG_INFINITY } else { ll - offset };
        }
    }

    fn maybe_resample(&mut self, event_index: usize) {
        let n = self.len();
        let e = self.ess();
        let resampled = e < self.threshold * n as f64;
        self.trace.push(ResampleRecord { t: self.t, event_index, ess: e, resampled });
        if !resampled {
            return;
        }
        let u: f64 = self.rng.random();
        let idx = systematic(&self.weights(), u);
        let m = self.m;
        let mut pos = Vec::with_capacity(self.positions.len());
        for &j in &idx {
            pos.extend_from_slice(&self.positions[j * m..(j + 1) * m]);
        }
        self.positions = pos;
        self.eve = idx.iter().map(|&j| self.eve[j]).collect();
        let level = match self.mode {
            Mode::Normalized => -(n as f64).ln(),
            Mode::Unnormalized => self.log_rho1 - (n as f64).ln(),
        };
        self.log_w = vec![level; n];
    }

    /// Signal jumps: the first `xi` of each particle comes from
    /// `F_{xi|eta}` at the particle's implied noise, further ones from the
    /// `xi` marginal.
    fn apply_jumps(&mut self, event: &ObservationEvent, model: &Model) -> Result<()> {
        if event.jumps == 0 || model.spec.jump.is_identity() {
            return Ok(());
        }
        let (m, n) = (self.m, model.n());
        let spec = &model.spec;
        let mut eta = vec![0.0; n];
        let mut xi = vec![0.0; m];
        let mut scratch = vec![0.0; m * m];
        let mut next = vec![0.0; m];
        for (j, x) in self.positions.chunks_exact_mut(m).enumerate() {
            for k in 0..event.jumps {
                if k == 0 && self.log_w[j] > f64::NEG_INFINITY {
                    spec.observation.eval(x, &event.y_pre, &mut eta);
                    for (e, d) in eta.iter_mut().zip(&event.dy) {
                        *e = d - *e;
                    }
                    model.law.sample_xi_given_eta(&eta, &mut self.rng, &mut xi)?;
                } else {
                    model.law.sample_xi(&mut self.rng, &mut xi);
                }
                spec.jump.apply(x, &event.y_pre, &xi, &mut scratch, &mut next);
                x.copy_from_slice(&next);
            }
        }
        if self.positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup(self.t));
        }
        Ok(())
    }

    /// Exact Bayes at a predictable time followed by conditional jump
    /// sampling (normalized mode).
    pub fn ks_update(&mut self, event: &ObservationEvent, model: &Model) -> Result<()> {
        debug_assert_eq!(self.mode, Mode::Normalized);
        self.add_log_likelihoods(event, model, 0.0);
        let lse = log_sum_exp(&self.log_w);
        if !lse.is_finite() {
            return Err(Error::WeightCollapse(event.index));
        }
        self.log_w.iter_mut().for_each(|l| *l -= lse);
        self.maybe_resample(event.index);
        self.apply_jumps(event, model)
    }

    /// Likelihood-ratio reweighting against the reference law of `dY`
    /// (unnormalized mode).
    pub fn zakai_update(&mut self, event: &ObservationEvent, model: &Model) -> Result<()> {
        debug_assert_eq!(self.mode, Mode::Unnormalized);
        if !model.law.eta_has_density() {
            return Err(Error::incompatible(
                "zakai-particle",
                "the noise law has no density, so no reference measure exists",
            ));
        }
        let reference = model.law.eta_log_density(&event.dy);
        if !reference.is_finite() {
            return Err(Error::ZeroReferenceDensity(event.index));
        }
        self.add_log_likelihoods(event, model, reference);
        self.log_rho1 = log_sum_exp(&self.log_w);
        if !self.log_rho1.is_finite() {
            return Err(Error::ZeroMass);
        }
        self.maybe_resample(event.index);
        self.apply_jumps(event, model)
    }

    /// `sum w phi / sum w`; for unnormalized ensembles this is the
    /// Kallianpur–Striebel estimate.
    pub fn estimate(&self, phi: &TestFunction) -> f64 {
        let w = self.weights();
        self.positions.chunks_exact(self.m).zip(&w).map(|(x, w)| w * phi.eval(x)).sum()
    }

    /// `pi(phi) = rho(phi) / rho(1)`.
    pub fn kallianpur_striebel(&self, phi: &TestFunction) -> Result<f64> {
        if !self.log_rho1.is_finite() {
            return Err(Error::ZeroMass);
        }
        Ok(self.estimate(phi))
    }

    /// Unnormalized `rho(phi) = sum w phi` (equals `pi(phi)` in normalized
    /// mode).
    pub fn rho(&self, phi: &TestFunction) -> f64 {
        self.positions
            .chunks_exact(self.m)
            .zip(&self.log_w)
            .map(|(x, l)| l.exp() * phi.eval(x))
            .sum()
    }

    /// Standard error of [`Self::estimate`] from the ancestral-lineage
    /// variance estimator: contributions are pooled by time-zero ancestor.
    pub fn standard_error(&self, phi: &TestFunction) -> f64 {
        let values: Vec<f64> = self.positions.chunks_exact(self.m).map(|x| phi.eval(x)).collect();
        self.weighted_mean_se(&values).1
    }

    /// Normalized weighted mean of per-particle `values` and its
    /// lineage-pooled standard error.
    pub fn weighted_mean_se(&self, values: &[f64]) -> (f64, f64) {
        let w = self.weights();
        let est: f64 = values.iter().zip(&w).map(|(v, w)| v * w).sum();
        let mut pooled = vec![0.0; self.len()];
        for ((v, w), e) in values.iter().zip(&w).zip(&self.eve) {
            pooled[*e] += w * (v - est);
        }
        (est, pooled.iter().map(|p| p * p).sum::<f64>().sqrt())
    }
}

/// Settings of a particle run.
#[derive(Debug, Clone)]
pub struct ParticleOptions {
    pub particles: usize,
    pub mode: Mode,
    pub seed: u64,
    /// Stream index; independent runs with the same seed use distinct values.
    pub run: u64,
    pub functions: Vec<TestFunction>,
    pub snapshots: bool,
}

impl ParticleOptions {
    pub fn from_scenario(sc: &ValidatedScenario, mode: Mode) -> Self {
        Self {
            particles: sc.filter().particles,
            mode,
            seed: sc.seed(),
            run: 0,
            functions: TestFunction::battery(sc.model().m()),
            snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: f64,
    pub side: Side,
    pub phi: String,
    pub estimate: f64,
    pub se: f64,
    pub ess: f64,
    pub log_rho1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub index: usize,
    pub t: f64,
    pub log_rho1_pre: f64,
    pub log_rho1_post: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub side: Side,
    pub positions: Vec<f64>,
    pub log_w: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ParticleRun {
    pub summary: Vec<SummaryRow>,
    pub events: Vec<EventRecord>,
    pub snapshots: Vec<Snapshot>,
    pub trace: Vec<ResampleRecord>,
    pub ensemble: ParticleEnsemble,
}

impl ParticleRun {
    /// Rows for one test function.
    pub fn series(&self, phi_name: &str) -> Vec<&SummaryRow> {
        self.summary.iter().filter(|r| r.phi == phi_name).collect()
    }
}

/// Runs a particle filter over the events from a point mass at `x0`.
pub fn run_particle_filter(
    sc: &ValidatedScenario,
    events: &[ObservationEvent],
    opts: &ParticleOptions,
) -> Result<ParticleRun> {
    let model = sc.model();
    if opts.mode == Mode::Unnormalized && !model.law.eta_has_density() {
        return Err(Error::incompatible(
            "zakai-particle",
            "the noise law has no density, so no reference measure exists",
        ));
    }
    let rng = stream(opts.seed, Purpose::Particles, opts.run);
    let mut ens = ParticleEnsemble::from_point(
        &model.spec.x0,
        opts.particles,
        opts.mode,
        sc.filter().resample_threshold,
        rng,
    );
    let mut summary = Vec::new();
    let mut snapshots = Vec::new();
    let mut records = Vec::new();
    let mut report = |ens: &ParticleEnsemble, t: f64, side: Side, summary: &mut Vec<SummaryRow>| {
        let e = ens.ess();
        for phi in &opts.functions {
            summary.push(SummaryRow {
                t,
                side,
                phi: phi.name(),
                estimate: ens.estimate(phi),
                se: ens.standard_error(phi),
                ess: e,
                log_rho1: ens.log_rho1,
            });
        }
        if opts.snapshots {
            snapshots.push(Snapshot { t, side, positions: ens.positions.clone(), log_w: ens.log_w.clone() });
        }
    };
    let dt = sc.dt();
    for stop in timeline(&sc.report_times(), events, sc.horizon()) {
        match stop {
            Stop::Report(t) => {
                ens.propagate(model, t - ens.t, dt)?;
                ens.t = t;
                report(&ens, t, Side::Interior, &mut summary);
            }
            Stop::Event(k) => {
                let ev = &events[k];
                ens.propagate(model, ev.time - ens.t, dt)?;
                ens.t = ev.time;
                report(&ens, ev.time, Side::Pre, &mut summary);
                let pre = ens.log_rho1;
                match opts.mode {
                    Mode::Normalized => ens.ks_update(ev, model)?,
                    Mode::Unnormalized => ens.zakai_update(ev, model)?,
                }
                records.push(EventRecord { index: ev.index, t: ev.time, log_rho1_pre: pre, log_rho1_post: ens.log_rho1 });
                report(&ens, ev.time, Side::Post, &mut summary);
            }
        }
    }
    Ok(ParticleRun { summary, events: records, snapshots, trace: ens.trace.clone(), ensemble: ens })
}
