//! Gauss–Hermite rules for expectations under Gaussian laws.

use std::f64::consts::PI;

/// Nodes and weights for `E[g(Z)]`, `Z ~ N(0, 1)`.
///
/// Weights are rescaled to sum to one so that constants integrate without
/// rounding drift.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Hermite order must be positive");
        let (x, w) = physicists(order);
        let mut nodes: Vec<f64> = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
        let mut weights: Vec<f64> = w.iter().map(|v| v / PI.sqrt()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|v| *v /= total);
        // ascending order
        nodes.reverse();
        weights.reverse();
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `E[g(Y)]` for `Y ~ N(mean, var)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mean: f64, var: f64, mut g: F) -> f64 {
        let sd = var.max(0.0).sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * g(mean + sd * z))
            .sum()
    }
}

/// Physicists' Gauss–Hermite nodes (descending) and weights for the
/// weight function `exp(-x^2)`, by Newton iteration on the orthonormal
/// Hermite recurrence.
fn physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(k: u32) -> f64 {
        (1..=k).rev().step_by(2).map(f64::from).product()
    }

    #[test]
    fn integrates_gaussian_moments_exactly() {
        for order in [5usize, 20, 40, 80, 120] {
            let gh = GaussHermite::new(order);
            for p in 0..(2 * order as u32).min(16) {
                let got = gh.expect(0.0, 1.0, |z| z.powi(p as i32));
                let want = if p % 2 == 1 { 0.0 } else if p == 0 { 1.0 } else { double_factorial(p - 1) };
                assert!((got - want).abs() <= 1e-9 * want.max(1.0), "order {order} p {p}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn shifted_and_scaled() {
        let gh = GaussHermite::new(40);
        let m = gh.expect(0.3, 0.04, |y| y);
        let v = gh.expect(0.3, 0.04, |y| (y - 0.3).powi(2));
        assert!((m - 0.3).abs() < 1e-14);
        assert!((v - 0.04).abs() < 1e-14);
        let e = gh.expect(0.1, 0.5, f64::exp);
        assert!((e - (0.1f64 + 0.25).exp()).abs() < 1e-12);
    }

    #[test]
    fn nodes_are_sorted_and_symmetric() {
        let gh = GaussHermite::new(41);
        assert!(gh.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(gh.nodes[20].abs() < 1e-14);
        assert!((gh.nodes[0] + gh.nodes[40]).abs() < 1e-12);
        assert!((gh.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
