//! One pass/fail line per acceptance criterion at pinned tolerances.
//! Runs as a plain binary (`harness = false`) so the lines always print.

use std::time::Instant;

use pjfilter::diagnostics::{
    check_compensator, check_ks_residual_battery, check_martingale_battery, check_zakai, martingale_functions,
    martingale_path, CheckReport, CheckSettings,
};
use pjfilter::io;
use pjfilter::kalman_jump::{run_filter, FilterTrajectory};
use pjfilter::model::{JumpLaw, Schedule};
use pjfilter::oracle_grid::run_grid_filter;
use pjfilter::particle::phi::xi_nodes;
use pjfilter::particle::{gamma_gaussian, run_particle_filter, Mode, ParticleOptions, ParticleRun, TestFunction};
use pjfilter::simulate::{simulate_many, simulate_path, MarkWeight};
use pjfilter::{Preset, ScenarioConfig, ValidatedScenario};

/// Particle runs of the rho(1) jump check; the full design uses 50.
const RHO_RUNS: usize = 8;
/// Independent particle runs per size in the RMSE scaling check.
const RMSE_RUNS: u64 = 16;

/// Below this the ensemble is still the point mass at `x0` and the SE is
/// rounding noise; such rows are compared exactly instead.
const DEGENERATE_SE: f64 = 1e-12;

struct Verdict {
    pass: bool,
    detail: String,
}

fn ou() -> ValidatedScenario {
    ScenarioConfig::preset(Preset::OuKalman).validate().unwrap()
}

fn ordinary(reports: &[CheckReport]) -> impl Iterator<Item = &CheckReport> {
    reports.iter().filter(|r| !r.negative_control)
}

fn particles(sc: &ValidatedScenario, ev: &[pjfilter::simulate::ObservationEvent], mode: Mode, n: usize, run: u64) -> ParticleRun {
    let mut o = ParticleOptions::from_scenario(sc, mode);
    o.particles = n;
    o.run = run;
    o.functions = vec![TestFunction::Coordinate { axis: 0 }];
    run_particle_filter(sc, ev, &o).unwrap()
}

fn kalman_means(k: &FilterTrajectory) -> Vec<(f64, f64)> {
    k.rows.iter().map(|r| (r.t, r.mean[0])).collect()
}

fn criterion_1() -> Verdict {
    let sc = ou();
    let start = Instant::now();
    let sim = simulate_path(&sc, sc.seed()).unwrap();
    let k = run_filter(&sc, &sim.events).unwrap();
    let g = run_grid_filter(&sc, &sim.events, false).unwrap();
    let secs = start.elapsed().as_secs_f64();
    assert_eq!(k.rows.len(), g.rows.len());
    let (mut dm, mut dp) = (0.0f64, 0.0f64);
    for (a, b) in k.rows.iter().zip(&g.rows) {
        assert!((a.t - b.t).abs() < 1e-12 && a.side == b.side);
        dm = dm.max((a.mean[0] - b.mean).abs());
        dp = dp.max((a.cov[(0, 0)] - b.var).abs());
    }
    Verdict {
        pass: dm <= 1e-3 && dp <= 1e-3 && secs <= 60.0,
        detail: format!("max|dm| = {dm:.2e}, max|dP| = {dp:.2e} (tol 1e-3), runtime {secs:.1} s (limit 60 s)"),
    }
}

fn criterion_2() -> Verdict {
    let sc = ou();
    let sim = simulate_path(&sc, sc.seed()).unwrap();
    let k = kalman_means(&run_filter(&sc, &sim.events).unwrap());
    let mut worst = 0.0f64;
    for (mode, run) in [(Mode::Normalized, 0), (Mode::Unnormalized, 1)] {
        let p = particles(&sc, &sim.events, mode, 100_000, run);
        for ((t, m), row) in k.iter().zip(&p.summary) {
            assert!((t - row.t).abs() < 1e-12);
            if row.se > DEGENERATE_SE {
                worst = worst.max((row.estimate - m).abs() / row.se);
            } else {
                assert!((row.estimate - m).abs() < 1e-9);
            }
        }
    }
    let rmse = |n: usize| -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for run in 0..RMSE_RUNS {
            let p = particles(&sc, &sim.events, Mode::Normalized, n, 100 + run);
            for ((_, m), row) in k.iter().zip(&p.summary) {
                sum += (row.estimate - m).powi(2);
                count += 1;
            }
        }
        (sum / count as f64).sqrt()
    };
    let (small, large) = (rmse(10_000), rmse(40_000));
    let ratio = small / large;
    Verdict {
        pass: worst <= 3.0 && (1.4..=2.6).contains(&ratio),
        detail: format!(
            "KS and Zakai/KS vs Kalman at N=1e5: max |err|/SE = {worst:.2} (<= 3); RMSE 1e4 -> 4e4: {small:.2e} -> {large:.2e}, ratio {ratio:.2} (2 +- 30%, {RMSE_RUNS} runs each)"
        ),
    }
}

fn criterion_3() -> Verdict {
    let sc = ou();
    let mut settings = CheckSettings::for_scenario(&sc);
    settings.n_paths = 10_000;
    settings.negative_control = true;
    let r = check_compensator(&sc, &MarkWeight::battery(), &settings).unwrap();
    let ok = ordinary(&r).all(|r| r.pass);
    let one = r.iter().find(|r| r.name == "W=1" && !r.negative_control).unwrap();
    let neg = r.iter().find(|r| r.negative_control && r.name.contains("y^2")).unwrap();
    let zs: Vec<String> = ordinary(&r).filter(|r| r.se > 0.0).map(|r| format!("{} z={:.2}", r.name, r.statistic / r.se)).collect();
    Verdict {
        pass: ok && one.statistic == 0.0 && !neg.pass,
        detail: format!(
            "{}; W=1 diff {} (exact); negative control z = {:.1} fails: {}",
            zs.join(", "),
            one.statistic,
            neg.statistic / neg.se,
            !neg.pass
        ),
    }
}

fn criterion_4() -> Verdict {
    let sc = ou();
    let settings = CheckSettings::for_scenario(&sc);
    let mut variants = Vec::new();
    for phi in martingale_functions(1) {
        variants.push((phi.clone(), false));
        variants.push((phi, true));
    }
    let r = check_martingale_battery(&sc, &variants, &settings.checkpoints, 10_000, sc.seed()).unwrap();
    let means_ok = ordinary(&r).filter(|r| r.name.contains("mean")).all(|r| r.pass);
    let incr_ok = ordinary(&r).filter(|r| r.name.contains("increment")).all(|r| r.pass);
    let t1 = 0.5;
    let after: Vec<&CheckReport> = r
        .iter()
        .filter(|r| r.negative_control && r.name.contains("mean"))
        .filter(|r| {
            let t = r.name.rsplit("t=").next().and_then(|s| s.split_whitespace().next());
            t.and_then(|t| t.parse::<f64>().ok()).is_some_and(|t| t > t1)
        })
        .collect();
    let neg_ok = !after.is_empty() && after.iter().all(|r| !r.pass);
    let worst = ordinary(&r).filter(|r| r.name.contains("mean")).map(|r| r.statistic.abs() / r.se).fold(0.0, f64::max);
    Verdict {
        pass: means_ok && incr_ok && neg_ok,
        detail: format!(
            "tanh, bump: max |mean|/SE = {worst:.2} at {:?}; increments pass: {incr_ok}; dropped-jump control fails at all {} checkpoints after T1: {neg_ok}",
            settings.checkpoints,
            after.len()
        ),
    }
}

fn criterion_5() -> Verdict {
    let sc = ou();
    let r = check_ks_residual_battery(&sc, &martingale_functions(1), 20, sc.seed(), 40).unwrap();
    let ratios: Vec<f64> = r.iter().filter(|r| r.name.contains("interior")).map(|r| r.statistic).collect();
    let jumps: Vec<&CheckReport> = r.iter().filter(|r| r.name.contains("jump")).collect();
    let worst = jumps.iter().map(|r| r.statistic.abs()).fold(0.0, f64::max);
    let pass = r.iter().all(|r| r.pass) && !ratios.is_empty() && !jumps.is_empty();
    Verdict {
        pass,
        detail: format!(
            "interior halving ratios {:?} (in [3.2, 4.8]); max jump residual {worst:.2e} over 20 runs (tol 1e-3)",
            ratios.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>()
        ),
    }
}

fn log_normal(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (y - mean).powi(2) / (2.0 * var)
}

fn criterion_6() -> Verdict {
    let sc = ou();
    let mut settings = CheckSettings::for_scenario(&sc);
    settings.zakai_runs = 100;
    settings.rho_runs = RHO_RUNS;
    settings.particles = 100_000;
    settings.reference_runs = 20;
    let r = check_zakai(&sc, &settings).unwrap();
    let quad: Vec<&CheckReport> = ordinary(&r).filter(|r| r.name.starts_with("dB~")).collect();
    let rho: Vec<&CheckReport> = ordinary(&r).filter(|r| r.name.starts_with("rho(1)")).collect();
    let quad_ok = !quad.is_empty() && quad.iter().all(|r| r.pass && r.statistic.abs() <= 1e-10);
    let rho_ok = !rho.is_empty() && rho.iter().all(|r| r.pass);
    let quad_worst = quad.iter().map(|r| r.statistic.abs()).fold(0.0, f64::max);
    let rho_worst = rho.iter().map(|r| r.statistic.abs() / r.se).fold(0.0, f64::max);

    let mut gamma_worst = 0.0f64;
    for &(pm, pv) in &[(0.8, 0.05), (0.0, 0.0), (-1.3, 0.4), (2.5, 1e-3), (0.1, 3.0)] {
        for &r in &[0.01, 0.25, 1.0] {
            for k in -20..=20 {
                let y = pm + 0.15 * k as f64;
                let direct = log_normal(y, 0.0, r) - log_normal(y, pm, pv + r);
                let g = gamma_gaussian(pm, pv, r, y).unwrap();
                gamma_worst = gamma_worst.max((g - direct).abs());
            }
        }
    }
    Verdict {
        pass: quad_ok && rho_ok && gamma_worst <= 1e-12,
        detail: format!(
            "dB~ quadrature max {quad_worst:.1e} (tol 1e-10, 100 runs); rho(1) jump max |stat|/SE = {rho_worst:.2} ({RHO_RUNS} runs, N=1e5); gamma vs density ratio {gamma_worst:.1e} (tol 1e-12)"
        ),
    }
}

fn criterion_7() -> Verdict {
    // K = 0: every filter reduces to the unconditioned OU moments.
    let sc = ou().with(|c| c.schedule = Schedule::Deterministic { times: vec![] }).unwrap();
    let (lambda, sigma, x0): (f64, f64, f64) = (1.0, 0.5, 1.0);
    let exact = |t: f64| (x0 * (-lambda * t).exp(), sigma * sigma / (2.0 * lambda) * (1.0 - (-2.0 * lambda * t).exp()));
    let k = run_filter(&sc, &[]).unwrap();
    let g = run_grid_filter(&sc, &[], false).unwrap();
    let mut kal = 0.0f64;
    for r in &k.rows {
        let (m, v) = exact(r.t);
        kal = kal.max((r.mean[0] - m).abs()).max((r.cov[(0, 0)] - v).abs());
    }
    let mut grid = 0.0f64;
    for r in &g.rows {
        let (m, v) = exact(r.t);
        grid = grid.max((r.mean - m).abs()).max((r.var - v).abs());
    }
    let mut z = 0.0f64;
    for mode in [Mode::Normalized, Mode::Unnormalized] {
        let p = particles(&sc, &[], mode, 100_000, 0);
        for row in &p.summary {
            let err = (row.estimate - exact(row.t).0).abs();
            if row.se > DEGENERATE_SE {
                z = z.max(err / row.se);
            } else {
                assert!(err < 1e-9);
            }
        }
    }
    let k0 = kal <= 1e-3 && grid <= 1e-3 && z <= 3.0;

    // xi = 0: the jump operator vanishes along paths and the KS identity is
    // exact up to rounding.
    let mut cfg = ScenarioConfig::preset(Preset::OuKalman);
    cfg.model.jump_law = JumpLaw::DegenerateXiZero { eta_mean: vec![0.0], eta_cov: vec![vec![0.01]] };
    let flat = cfg.validate().unwrap();
    let nodes = xi_nodes(flat.model(), 32);
    let mut path_gap = 0.0f64;
    for sim in simulate_many(&flat, 5, 200).unwrap() {
        for phi in martingale_functions(1) {
            let with = martingale_path(&flat, &sim, &phi, &nodes, false);
            let without = martingale_path(&flat, &sim, &phi, &nodes, true);
            path_gap = with.iter().zip(&without).map(|(a, b)| (a - b).abs()).fold(path_gap, f64::max);
        }
    }
    let r = check_ks_residual_battery(&flat, &martingale_functions(1), 5, flat.seed(), 40).unwrap();
    let jumps: Vec<&CheckReport> = r.iter().filter(|r| r.name.contains("jump")).collect();
    let worst = jumps.iter().map(|r| r.statistic.abs()).fold(0.0, f64::max);
    let xi0 = path_gap == 0.0 && !jumps.is_empty() && worst <= 1e-6;
    Verdict {
        pass: k0 && xi0,
        detail: format!(
            "K=0: Kalman {kal:.1e}, grid {grid:.1e} (tol 1e-3), particles max z {z:.2} (<= 3); xi=0: A-phi path term {path_gap:e}, KS jump residual {worst:.1e} (tol 1e-6)"
        ),
    }
}

fn criterion_8() -> Verdict {
    fn outputs(sc: &ValidatedScenario) -> Vec<Vec<u8>> {
        let sims = simulate_many(sc, sc.seed(), 4).unwrap();
        let mut files = Vec::new();
        for (id, s) in sims.iter().enumerate() {
            let mut b = Vec::new();
            io::write_paths(&mut b, id as u64, s).unwrap();
            files.push(b);
        }
        let ev = &sims[0].events;
        let mut b = Vec::new();
        io::write_kalman(&mut b, &run_filter(sc, ev).unwrap(), 1, 1).unwrap();
        files.push(b);
        for mode in [Mode::Normalized, Mode::Unnormalized] {
            let mut b = Vec::new();
            io::write_particle_summary(&mut b, &particles(sc, ev, mode, 5_000, 0)).unwrap();
            files.push(b);
        }
        let mut b = Vec::new();
        io::write_grid_summary(&mut b, &run_grid_filter(sc, ev, false).unwrap()).unwrap();
        files.push(b);
        let mut settings = CheckSettings::for_scenario(sc);
        settings.n_paths = 500;
        let reports = check_compensator(sc, &MarkWeight::battery(), &settings).unwrap();
        files.push(serde_json::to_vec(&reports).unwrap());
        files
    }
    let sc = ou();
    let a = outputs(&sc);
    let b = outputs(&sc);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = pool.install(|| outputs(&sc));
    let same = a == b && a == c;
    Verdict {
        pass: same,
        detail: format!(
            "{} artifacts (paths, kalman, ks/zakai particles, grid, compensator report) identical across re-runs and 1 vs 3 threads: {same}",
            a.len()
        ),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("Kalman-oracle agreement", criterion_1),
        ("particle consistency", criterion_2),
        ("compensator identity", criterion_3),
        ("martingale property", criterion_4),
        ("KS residuals", criterion_5),
        ("Zakai structure", criterion_6),
        ("degenerate reductions", criterion_7),
        ("determinism", criterion_8),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let v = f();
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {} {:<24} {}  {} [{:.1} s]",
            i + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
