//! Built-in scenarios.

use super::*;

fn scalar(v: f64) -> Rows {
    vec![vec![v]]
}

fn ou_model(lambda: f64, sigma: f64, jump: JumpMap, law: JumpLaw, x0: f64) -> ModelSpec {
    ModelSpec {
        dims: Dims { m: 1, n: 1 },
        drift: VectorField::Linear { matrix: scalar(-lambda) },
        diffusion: MatrixField::Constant { matrix: scalar(sigma) },
        jump,
        observation: ObservationFn::Linear { a: scalar(1.0), c: scalar(0.0) },
        jump_law: law,
        x0: vec![x0],
    }
}

/// Ornstein–Uhlenbeck signal with additive Gaussian jumps at three fixed
/// dates and noisy linear observations; the exact Kalman filter applies.
pub fn ou_kalman() -> ScenarioConfig {
    let law = JumpLaw::GaussianProduct {
        xi_mean: vec![0.0],
        xi_cov: scalar(0.04),
        eta_mean: vec![0.0],
        eta_cov: scalar(0.01),
    };
    ScenarioConfig {
        preset: Preset::OuKalman,
        model: ou_model(1.0, 0.5, JumpMap::Loading { c: MatrixField::Constant { matrix: scalar(1.0) } }, law, 1.0),
        schedule: Schedule::Deterministic { times: vec![0.5, 1.0, 1.5] },
        horizon: 2.0,
        dt: 1e-3,
        seed: 20_240_501,
        filter: FilterSettings::default(),
    }
}

/// Health state as a geometric Brownian motion; the score is observed on a
/// quarterly grid and interventions (multiplicative improvements) happen
/// when it first falls below each of three thresholds.
pub fn medical() -> ScenarioConfig {
    let model = ModelSpec {
        dims: Dims { m: 1, n: 1 },
        drift: VectorField::Linear { matrix: scalar(-0.3) },
        diffusion: MatrixField::Multiplicative { matrix: scalar(0.2) },
        jump: JumpMap::Loading { c: MatrixField::Multiplicative { matrix: scalar(1.0) } },
        // dY = X - Y + eta, so Y_{s_j} is a noisy reading of X_{s_j-}
        observation: ObservationFn::Linear { a: scalar(1.0), c: scalar(1.0) },
        jump_law: JumpLaw::GaussianProduct {
            xi_mean: vec![0.3],
            xi_cov: scalar(0.01),
            eta_mean: vec![0.0],
            eta_cov: scalar(0.0025),
        },
        x0: vec![1.0],
    };
    ScenarioConfig {
        preset: Preset::Medical,
        model,
        schedule: Schedule::Threshold {
            grid: (1..=12).map(|j| 0.25 * j as f64).collect(),
            thresholds: vec![0.8, 0.65, 0.5],
        },
        horizon: 3.0,
        dt: 1e-3,
        seed: 20_240_502,
        filter: FilterSettings::default(),
    }
}

/// Log-asset value relative to its initial level, with quarterly
/// announcements that may write assets down; losses are amplified when the
/// last disclosure was weak.
pub fn credit_risk() -> ScenarioConfig {
    let (mu_v, sigma_v) = (0.05, 0.2);
    let model = ModelSpec {
        dims: Dims { m: 1, n: 1 },
        drift: VectorField::Constant { value: vec![mu_v - 0.5 * sigma_v * sigma_v] },
        diffusion: MatrixField::Constant { matrix: scalar(sigma_v) },
        jump: JumpMap::LogLoss { beta: 0.5, y_bar: -0.05 },
        // f(x, y) = x + alpha_y y with alpha_y = -1
        observation: ObservationFn::Linear { a: scalar(1.0), c: scalar(1.0) },
        jump_law: JumpLaw::DiscreteXiGaussianEta {
            xi_atoms: vec![vec![0.0], vec![0.02], vec![0.1]],
            xi_probs: vec![0.7, 0.2, 0.1],
            eta_mean: vec![0.0],
            eta_cov: scalar(0.0004),
        },
        x0: vec![0.0],
    };
    ScenarioConfig {
        preset: Preset::CreditRisk,
        model,
        schedule: Schedule::Deterministic { times: vec![0.25, 0.5, 0.75, 1.0] },
        horizon: 1.0,
        dt: 1e-3,
        seed: 20_240_503,
        filter: FilterSettings::default(),
    }
}

/// Non-jumping signal with a cubic restoring drift observed with Gaussian
/// noise at fixed dates.
pub fn njode_style() -> ScenarioConfig {
    let x = Expr::var(0);
    let drift = Expr::Add {
        terms: vec![
            Expr::Mul { factors: vec![Expr::constant(-1.0), x.clone()] },
            Expr::Mul {
                factors: vec![Expr::constant(-0.2), Expr::Pow { base: Box::new(x), exponent: 3 }],
            },
        ],
    };
    let model = ModelSpec {
        dims: Dims { m: 1, n: 1 },
        drift: VectorField::Components { exprs: vec![drift] },
        diffusion: MatrixField::Constant { matrix: scalar(0.5) },
        jump: JumpMap::none(),
        observation: ObservationFn::Linear { a: scalar(1.0), c: scalar(0.0) },
        jump_law: JumpLaw::DegenerateXiZero { eta_mean: vec![0.0], eta_cov: scalar(0.01) },
        x0: vec![1.0],
    };
    ScenarioConfig {
        preset: Preset::NjodeStyle,
        model,
        schedule: Schedule::Deterministic { times: vec![0.5, 1.0, 1.5] },
        horizon: 2.0,
        dt: 1e-3,
        seed: 20_240_504,
        filter: FilterSettings::default(),
    }
}

pub fn build(p: Preset) -> ScenarioConfig {
    match p {
        Preset::OuKalman => ou_kalman(),
        Preset::Custom => ScenarioConfig { preset: Preset::Custom, ..ou_kalman() },
        Preset::Medical => medical(),
        Preset::CreditRisk => credit_risk(),
        Preset::NjodeStyle => njode_style(),
    }
}
