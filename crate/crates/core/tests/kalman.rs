use pjfilter::kalman_jump::{run_filter, Side};
use pjfilter::model::JumpLaw;
use pjfilter::simulate::{simulate_many, simulate_path_id, ObservationEvent};
use rayon::prelude::*;
use pjfilter::{Preset, ScenarioConfig, ValidatedScenario};

const LAMBDA: f64 = 1.0;
const SIGMA: f64 = 0.5;
const R: f64 = 0.01;

fn without_signal_jumps() -> ValidatedScenario {
    let mut c = ScenarioConfig::preset(Preset::OuKalman);
    c.model.jump_law = JumpLaw::GaussianProduct {
        xi_mean: vec![0.0],
        xi_cov: vec![vec![0.0]],
        eta_mean: vec![0.0],
        eta_cov: vec![vec![R]],
    };
    c.validate().unwrap()
}

/// Discrete-time Kalman filter on the event times with exact OU transition
/// moments in between; reports `(t, mean, var)` before and after each event.
fn textbook(x0: f64, events: &[ObservationEvent]) -> Vec<(f64, f64, f64)> {
    let (mut t, mut m, mut p) = (0.0, x0, 0.0);
    let mut out = Vec::new();
    for ev in events {
        let d = ev.time - t;
        let decay = (-LAMBDA * d).exp();
        m *= decay;
        p = p * decay * decay + SIGMA * SIGMA / (2.0 * LAMBDA) * (1.0 - decay * decay);
        out.push((ev.time, m, p));
        let s = p + R;
        let k = p / s;
        m += k * (ev.dy[0] - m);
        p *= 1.0 - k;
        out.push((ev.time, m, p));
        t = ev.time;
    }
    out
}

#[test]
fn without_jumps_the_filter_is_the_textbook_kalman_filter() {
    let sc = without_signal_jumps();
    for sim in simulate_many(&sc, 3, 20).unwrap() {
        let traj = run_filter(&sc, &sim.events).unwrap();
        let rows: Vec<_> = traj.rows.iter().filter(|r| r.side != Side::Interior).collect();
        let oracle = textbook(1.0, &sim.events);
        assert_eq!(rows.len(), oracle.len());
        for (r, (t, m, p)) in rows.iter().zip(oracle) {
            assert!((r.t - t).abs() < 1e-15);
            assert!((r.mean[0] - m).abs() <= 1e-12, "{} vs {m}", r.mean[0]);
            assert!((r.cov[(0, 0)] - p).abs() <= 1e-12);
        }
    }
}

#[test]
fn innovations_are_white_and_the_mean_is_a_martingale_at_events() {
    let sc = ScenarioConfig::preset(Preset::OuKalman).validate().unwrap();
    let n = 10_000;
    // events at 0.5, 1.0, 1.5
    let k = 3;
    let per_path: Vec<Vec<(f64, f64)>> = (0..n as u64)
        .into_par_iter()
        .map(|id| {
            let sim = simulate_path_id(&sc, 11, id).unwrap();
            let traj = run_filter(&sc, &sim.events).unwrap();
            traj.predictive
                .iter()
                .map(|law| (law.innovation[0] / law.s[(0, 0)].sqrt(), law.posterior.mean[0] - law.prior.mean[0]))
                .collect()
        })
        .collect();
    let mut z = vec![Vec::with_capacity(n); k];
    let mut jump = vec![Vec::with_capacity(n); k];
    for path in &per_path {
        assert_eq!(path.len(), k);
        for (i, (zi, ji)) in path.iter().enumerate() {
            z[i].push(*zi);
            jump[i].push(*ji);
        }
    }
    let se_of = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var, (var / n).sqrt())
    };
    for i in 0..k {
        let (m, var, se) = se_of(&z[i]);
        assert!(m.abs() <= 3.0 * se, "event {i}: innovation mean {m}");
        let sq: Vec<f64> = z[i].iter().map(|v| v * v).collect();
        let (m2, _, se2) = se_of(&sq);
        assert!((m2 - 1.0).abs() <= 3.0 * se2, "event {i}: innovation variance {var}");
        let (dm, _, sed) = se_of(&jump[i]);
        assert!(dm.abs() <= 3.0 * sed, "event {i}: mean change {dm}");
    }
}
