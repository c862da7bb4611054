//! Bounded smooth test functions with coded derivatives, and the two
//! operators built from them: the diffusion generator
//! `L phi = a . grad phi + 1/2 tr(b b^T hess phi)` and the expected jump
//! increment `A phi(x) = E[phi(J(x, y, xi)) - phi(x)]` under the `xi` marginal.

use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::quadrature::GaussHermite;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `tanh(alpha . x + beta)`
    Tanh { alpha: Vec<f64>, beta: f64 },
    /// `exp(-|x - center|^2 / scale)`
    Bump { center: Vec<f64>, scale: f64 },
    /// `level * tanh(x_axis / level)`: the identity near zero, bounded by
    /// `level`.
    SmoothClip { axis: usize, level: f64 },
    /// `p(x_axis) exp(-x_axis^2 / (2 width^2))` with `p` given by its
    /// coefficients in increasing degree.
    PolyCutoff { axis: usize, coeffs: Vec<f64>, width: f64 },
    /// `x_axis` itself; unbounded, used only as an estimator target.
    Coordinate { axis: usize },
}

impl TestFunction {
    pub fn tanh_1d() -> Self {
        TestFunction::Tanh { alpha: vec![1.0], beta: 0.0 }
    }

    pub fn bump_1d(center: f64, scale: f64) -> Self {
        TestFunction::Bump { center: vec![center], scale }
    }

    pub fn clipped_identity() -> Self {
        TestFunction::SmoothClip { axis: 0, level: 100.0 }
    }

    /// Default reporting battery for an `m`-dimensional state.
    pub fn battery(m: usize) -> Vec<TestFunction> {
        let mut alpha = vec![0.0; m];
        alpha[0] = 1.0;
        vec![
            TestFunction::Coordinate { axis: 0 },
            TestFunction::Tanh { alpha, beta: 0.0 },
            TestFunction::Bump { center: vec![0.0; m], scale: 1.0 },
            TestFunction::PolyCutoff { axis: 0, coeffs: vec![0.0, 0.0, 1.0], width: 2.0 },
        ]
    }

    pub fn name(&self) -> String {
        match self {
            TestFunction::Tanh { .. } => "tanh".into(),
            TestFunction::Bump { .. } => "bump".into(),
            TestFunction::SmoothClip { axis, .. } => format!("clip_x{}", axis + 1),
            TestFunction::PolyCutoff { .. } => "poly_cutoff".into(),
            TestFunction::Coordinate { axis } => format!("x{}", axis + 1),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Tanh { alpha, beta } => (dot(alpha, x) + beta).tanh(),
            TestFunction::Bump { center, scale } => (-dist2(x, center) / scale).exp(),
            TestFunction::SmoothClip { axis, level } => level * (x[*axis] / level).tanh(),
            TestFunction::PolyCutoff { axis, coeffs, width } => {
                let u = x[*axis];
                poly(coeffs, u) * (-u * u / (2.0 * width * width)).exp()
            }
            TestFunction::Coordinate { axis } => x[*axis],
        }
    }

    /// Writes the gradient into `grad` and the row-major Hessian into `hess`.
    pub fn derivatives(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        let m = x.len();
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        match self {
            TestFunction::Tanh { alpha, beta } => {
                let t = (dot(alpha, x) + beta).tanh();
                let d1 = 1.0 - t * t;
                let d2 = -2.0 * t * d1;
                for i in 0..m {
                    grad[i] = d1 * alpha[i];
                    for j in 0..m {
                        hess[i * m + j] = d2 * alpha[i] * alpha[j];
                    }
                }
            }
            TestFunction::Bump { center, scale } => {
                let v = (-dist2(x, center) / scale).exp();
                for i in 0..m {
                    let di = x[i] - center[i];
                    grad[i] = -2.0 * di / scale * v;
                    for j in 0..m {
                        let dj = x[j] - center[j];
                        let delta = if i == j { 1.0 } else { 0.0 };
                        hess[i * m + j] = v * (4.0 * di * dj / (scale * scale) - 2.0 * delta / scale);
                    }
                }
            }
            TestFunction::SmoothClip { axis, level } => {
                let t = (x[*axis] / level).tanh();
                let s = 1.0 - t * t;
                grad[*axis] = s;
                hess[axis * m + axis] = -2.0 * t * s / level;
            }
            TestFunction::PolyCutoff { axis, coeffs, width } => {
                let u = x[*axis];
                let w2 = width * width;
                let g = (-u * u / (2.0 * w2)).exp();
                let g1 = -u / w2 * g;
                let g2 = (u * u / (w2 * w2) - 1.0 / w2) * g;
                let (p, p1, p2) = poly_derivs(coeffs, u);
                grad[*axis] = p1 * g + p * g1;
                hess[axis * m + axis] = p2 * g + 2.0 * p1 * g1 + p * g2;
            }
            TestFunction::Coordinate { axis } => grad[*axis] = 1.0,
        }
    }

    /// `L phi(x)` for the model's drift and diffusion.
    pub fn generator(&self, model: &Model, x: &[f64]) -> f64 {
        let m = x.len();
        if m <= 3 {
            let mut buf = [0.0; 3 + 3 + 9 + 9];
            let (a, rest) = buf.split_at_mut(3);
            let (grad, rest) = rest.split_at_mut(3);
            let (b, hess) = rest.split_at_mut(9);
            return self.generator_in(model, x, &mut a[..m], &mut grad[..m], &mut b[..m * m], &mut hess[..m * m]);
        }
        let (mut a, mut grad) = (vec![0.0; m], vec![0.0; m]);
        let (mut b, mut hess) = (vec![0.0; m * m], vec![0.0; m * m]);
        self.generator_in(model, x, &mut a, &mut grad, &mut b, &mut hess)
    }

    fn generator_in(&self, model: &Model, x: &[f64], a: &mut [f64], grad: &mut [f64], b: &mut [f64], hess: &mut [f64]) -> f64 {
        let m = x.len();
        model.spec.drift.eval(x, a);
        model.spec.diffusion.eval(x, b);
        self.derivatives(x, grad, hess);
        let mut out = dot(a, grad);
        // 1/2 sum_ij (b b^T)_ij H_ij
        for i in 0..m {
            for j in 0..m {
                let sigma_ij: f64 = (0..m).map(|k| b[i * m + k] * b[j * m + k]).sum();
                out += 0.5 * sigma_ij * hess[i * m + j];
            }
        }
        out
    }

    /// `A phi(x)` given the pre-event observation `y_pre`, integrating over
    /// the `xi` marginal with the supplied quadrature nodes.
    pub fn jump_operator(&self, model: &Model, x: &[f64], y_pre: &[f64], nodes: &[(Vec<f64>, f64)]) -> f64 {
        let m = x.len();
        let mut scratch = vec![0.0; m * m];
        let mut out = vec![0.0; m];
        let base = self.eval(x);
        nodes
            .iter()
            .map(|(xi, w)| {
                model.spec.jump.apply(x, y_pre, xi, &mut scratch, &mut out);
                w * (self.eval(&out) - base)
            })
            .sum()
    }
}

impl TestFunction {
    /// `E[phi(J^k(x))] - phi(x)` for `k` successive independent jumps
    /// (nested quadrature; `k = 1` is [`Self::jump_operator`]).
    pub fn jump_operator_n(&self, model: &Model, x: &[f64], y_pre: &[f64], nodes: &[(Vec<f64>, f64)], k: usize) -> f64 {
        fn after(phi: &TestFunction, model: &Model, x: &[f64], y_pre: &[f64], nodes: &[(Vec<f64>, f64)], k: usize) -> f64 {
            if k == 0 {
                return phi.eval(x);
            }
            let m = x.len();
            let mut scratch = vec![0.0; m * m];
            let mut out = vec![0.0; m];
            nodes
                .iter()
                .map(|(xi, w)| {
                    model.spec.jump.apply(x, y_pre, xi, &mut scratch, &mut out);
                    w * after(phi, model, &out, y_pre, nodes, k - 1)
                })
                .sum()
        }
        if k == 0 || model.spec.jump.is_identity() {
            return 0.0;
        }
        after(self, model, x, y_pre, nodes, k) - self.eval(x)
    }
}

/// Quadrature nodes of the `xi` marginal used by [`TestFunction::jump_operator`].
pub fn xi_nodes(model: &Model, order: usize) -> Vec<(Vec<f64>, f64)> {
    model.law.xi_quadrature(&GaussHermite::new(order))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn poly(c: &[f64], u: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, k| acc * u + k)
}

fn poly_derivs(c: &[f64], u: f64) -> (f64, f64, f64) {
    let d1: Vec<f64> = c.iter().enumerate().skip(1).map(|(k, v)| k as f64 * v).collect();
    let d2: Vec<f64> = d1.iter().enumerate().skip(1).map(|(k, v)| k as f64 * v).collect();
    (poly(c, u), poly(&d1, u), poly(&d2, u))
}
