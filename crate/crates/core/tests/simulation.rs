use pjfilter::model::Schedule;
use pjfilter::rng::{stream, Purpose};
use pjfilter::simulate::{simulate_path_id, simulate_with_noise, BrownianTape};
use pjfilter::{Preset, ScenarioConfig, ValidatedScenario};
use rayon::prelude::*;

fn ou_without_events(horizon: f64, dt: f64) -> ValidatedScenario {
    let mut c = ScenarioConfig::preset(Preset::OuKalman);
    c.schedule = Schedule::Deterministic { times: vec![] };
    c.horizon = horizon;
    c.dt = dt;
    c.validate().unwrap()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn ou_moments_before_the_first_event() {
    // lambda = 1, sigma = 0.5, x0 = 1; the first event is at 0.5.
    let sc = ScenarioConfig::preset(Preset::OuKalman).validate().unwrap();
    let t = 0.4;
    let n = 100_000u64;
    let x: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|id| {
            let sim = simulate_path_id(&sc, 77, id).unwrap();
            let p = &sim.path;
            p.x_row(p.row_at(t))[0]
        })
        .collect();
    let (m, v) = mean_var(&x);
    let m_exact = (-t).exp();
    let v_exact = 0.25 / 2.0 * (1.0 - (-2.0 * t).exp());
    let fourth = x.iter().map(|y| (y - m).powi(4)).sum::<f64>() / n as f64;
    let se_m = (v / n as f64).sqrt();
    let se_v = ((fourth - v * v) / n as f64).sqrt();
    assert!((m - m_exact).abs() <= 3.0 * se_m, "mean {m} vs {m_exact} (se {se_m})");
    assert!((v - v_exact).abs() <= 3.0 * se_v, "var {v} vs {v_exact} (se {se_v})");
}

#[test]
fn euler_error_halves_with_the_step() {
    // Coupled paths: every step size reads the same Brownian tape, and the
    // finest one stands in for the exact solution.
    let horizon = 1.0;
    let steps = [0.02, 0.01];
    let fine = 0.02 / 64.0;
    let n = 10_000u64;
    let errs: Vec<[f64; 2]> = (0..n)
        .into_par_iter()
        .map(|id| {
            let mut rng = stream(5, Purpose::Auxiliary, id);
            let mut tape = BrownianTape::new(1, fine, horizon, &mut rng);
            let end = |dt: f64, tape: &mut BrownianTape| {
                let sc = ou_without_events(horizon, dt);
                let sim = simulate_with_noise(&sc, 5, id, tape).unwrap();
                *sim.path.x.last().unwrap()
            };
            let reference = end(fine, &mut tape);
            [(end(steps[0], &mut tape) - reference).abs(), (end(steps[1], &mut tape) - reference).abs()]
        })
        .collect();
    let e0 = errs.iter().map(|e| e[0]).sum::<f64>() / n as f64;
    let e1 = errs.iter().map(|e| e[1]).sum::<f64>() / n as f64;
    let ratio = e1 / e0;
    assert!((0.3..=0.7).contains(&ratio), "errors {e0:e} -> {e1:e}, ratio {ratio}");
}

#[test]
fn marks_do_not_depend_on_the_step() {
    let sc = ScenarioConfig::preset(Preset::OuKalman).validate().unwrap();
    let coarse = sc.with(|c| c.dt = 0.01).unwrap();
    let a = simulate_path_id(&sc, 9, 4).unwrap();
    let b = simulate_path_id(&coarse, 9, 4).unwrap();
    assert_eq!(a.path.marks, b.path.marks);
    assert_eq!(a.events.len(), b.events.len());
}
