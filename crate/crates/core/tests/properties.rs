use pjfilter::particle::resample::systematic;
use pjfilter::particle::{Mode, ParticleEnsemble, TestFunction};
use pjfilter::rng::{stream, Purpose};
use pjfilter::simulate::ObservationEvent;
use pjfilter::{Preset, ScenarioConfig};
use proptest::prelude::*;
use rand::Rng;

fn preset() -> impl Strategy<Value = Preset> {
    prop_oneof![Just(Preset::OuKalman), Just(Preset::Medical), Just(Preset::CreditRisk), Just(Preset::NjodeStyle)]
}

fn event(dy: f64) -> ObservationEvent {
    ObservationEvent { index: 1, time: 0.5, y_pre: vec![0.0], dy: vec![dy], jumps: 1 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenarios_round_trip_bit_exactly(
        p in preset(),
        seed in any::<u64>(),
        dt in 1e-5f64..0.1,
        x0 in -1e3f64..1e3,
        report in 1e-3f64..0.5,
    ) {
        let mut c = ScenarioConfig::preset(p);
        c.seed = seed;
        c.dt = dt;
        c.model.x0[0] = x0;
        c.filter.report_dt = report;
        let back = ScenarioConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(back.dt.to_bits(), dt.to_bits());
        prop_assert_eq!(back.model.x0[0].to_bits(), x0.to_bits());
        prop_assert_eq!(back, c);
    }

    #[test]
    fn weighted_sums_are_linear(
        log_w in prop::collection::vec(-30.0f64..5.0, 2..200),
        alpha in -10.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let n = log_w.len();
        let mut rng = stream(seed, Purpose::Auxiliary, 0);
        let f1: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let f2: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w: Vec<f64> = log_w.iter().map(|l| l.exp()).collect();
        let e = ParticleEnsemble::from_weighted(1, vec![0.0; n], w, Mode::Unnormalized, 0.5, stream(seed, Purpose::Particles, 0));
        let mix: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| alpha * a + b).collect();
        let (m1, _) = e.weighted_mean_se(&f1);
        let (m2, _) = e.weighted_mean_se(&f2);
        let (mm, _) = e.weighted_mean_se(&mix);
        let scale = 1.0 + alpha.abs() * 3.0;
        prop_assert!((mm - (alpha * m1 + m2)).abs() <= 1e-12 * scale);
    }

    #[test]
    fn normalized_weights_sum_to_one_after_updates(
        dys in prop::collection::vec(-2.0f64..3.0, 1..4),
        seed in any::<u64>(),
    ) {
        let sc = ScenarioConfig::preset(Preset::OuKalman).validate().unwrap();
        let mut e = ParticleEnsemble::from_point(&[1.0], 2_000, Mode::Normalized, 0.5, stream(seed, Purpose::Particles, 0));
        for (k, dy) in dys.iter().enumerate() {
            e.propagate(sc.model(), 0.1, 0.01).unwrap();
            e.t += 0.1;
            let mut ev = event(*dy);
            ev.index = k + 1;
            ev.time = e.t;
            e.ks_update(&ev, sc.model()).unwrap();
            let total: f64 = e.weights().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            let rec = e.trace.last().unwrap();
            prop_assert_eq!(rec.resampled, rec.ess < 0.5 * 2_000.0);
        }
    }
}

#[test]
fn systematic_resampling_is_unbiased() {
    let n = 500;
    let mut rng = stream(21, Purpose::Auxiliary, 0);
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0f64..1.0).powi(4)).collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let phi = TestFunction::tanh_1d();
    let x: Vec<f64> = (0..n).map(|k| -2.0 + 4.0 * k as f64 / n as f64).collect();
    let target: f64 = w.iter().zip(&x).map(|(w, x)| w * phi.eval(&[*x])).sum();
    let reps = 1_000;
    let est: Vec<f64> = (0..reps)
        .map(|_| {
            let idx = systematic(&w, rng.random_range(0.0..1.0));
            assert_eq!(idx.len(), n);
            idx.iter().map(|&j| phi.eval(&[x[j]])).sum::<f64>() / n as f64
        })
        .collect();
    let mean = est.iter().sum::<f64>() / reps as f64;
    let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    assert!((mean - target).abs() <= 3.0 * se.max(1e-15), "{mean} vs {target} (se {se})");
}
