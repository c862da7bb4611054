//! Joint law of the marks `Z = (xi, eta)` and its conditionals.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::functions::Rows;
use crate::model::gaussian::{check_psd, to_matrix, Gaussian};
use crate::quadrature::GaussHermite;

fn default_match_tol() -> f64 {
    1e-9
}

/// Serializable description of `F_Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpLaw {
    /// Independent `xi ~ N(xi_mean, Q)` and `eta ~ N(eta_mean, R)`.
    GaussianProduct {
        #[serde(default)]
        xi_mean: Vec<f64>,
        xi_cov: Rows,
        #[serde(default)]
        eta_mean: Vec<f64>,
        eta_cov: Rows,
    },
    /// `(xi, eta)` jointly Gaussian with an `(m + n)`-square covariance.
    GaussianJoint {
        #[serde(default)]
        mean: Vec<f64>,
        cov: Rows,
    },
    /// Finitely many atoms in `R^{m+n}`.
    Discrete {
        atoms: Vec<Vec<f64>>,
        probs: Vec<f64>,
        #[serde(default = "default_match_tol")]
        match_tol: f64,
    },
    /// The signal never jumps; only observation noise.
    DegenerateXiZero {
        #[serde(default)]
        eta_mean: Vec<f64>,
        eta_cov: Rows,
    },
    /// Discrete marks for the signal, independent Gaussian noise.
    DiscreteXiGaussianEta {
        xi_atoms: Vec<Vec<f64>>,
        xi_probs: Vec<f64>,
        #[serde(default)]
        eta_mean: Vec<f64>,
        eta_cov: Rows,
    },
}

fn fill_mean(v: &mut Vec<f64>, d: usize) {
    if v.is_empty() {
        *v = vec![0.0; d];
    }
}

fn check_probs(probs: &[f64], what: &str) -> Result<()> {
    if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidScenario(format!("{what}: probabilities must be nonnegative")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidScenario(format!("{what}: probabilities sum to {total}")));
    }
    Ok(())
}

fn check_len(v: &[f64], d: usize, what: &str) -> Result<()> {
    if v.len() != d {
        return Err(Error::InvalidScenario(format!("{what}: expected length {d}")));
    }
    Ok(())
}

fn check_cov(rows: &Rows, d: usize, name: &str) -> Result<()> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidScenario(format!("{name}: expected {d}x{d}")));
    }
    check_psd(&to_matrix(rows), name)
}

impl JumpLaw {
    /// Fills defaulted means with zeros.
    pub fn normalize(&mut self, m: usize, n: usize) {
        match self {
            JumpLaw::GaussianProduct { xi_mean, eta_mean, .. } => {
                fill_mean(xi_mean, m);
                fill_mean(eta_mean, n);
            }
            JumpLaw::GaussianJoint { mean, .. } => fill_mean(mean, m + n),
            JumpLaw::Discrete { .. } => {}
            JumpLaw::DegenerateXiZero { eta_mean, .. }
            | JumpLaw::DiscreteXiGaussianEta { eta_mean, .. } => fill_mean(eta_mean, n),
        }
    }

    pub fn check(&self, m: usize, n: usize) -> Result<()> {
        match self {
            JumpLaw::GaussianProduct { xi_mean, xi_cov, eta_mean, eta_cov } => {
                check_len(xi_mean, m, "xi_mean")?;
                check_len(eta_mean, n, "eta_mean")?;
                check_cov(xi_cov, m, "Q")?;
                check_cov(eta_cov, n, "R")
            }
            JumpLaw::GaussianJoint { mean, cov } => {
                check_len(mean, m + n, "mean")?;
                check_cov(cov, m + n, "joint covariance")
            }
            JumpLaw::Discrete { atoms, probs, match_tol } => {
                if atoms.len() != probs.len() || atoms.iter().any(|a| a.len() != m + n) {
                    return Err(Error::InvalidScenario("discrete atoms: shape".into()));
                }
                if !(*match_tol >= 0.0) {
                    return Err(Error::InvalidScenario("discrete match_tol".into()));
                }
                check_probs(probs, "discrete law")
            }
            JumpLaw::DegenerateXiZero { eta_mean, eta_cov } => {
                check_len(eta_mean, n, "eta_mean")?;
                check_cov(eta_cov, n, "R")
            }
            JumpLaw::DiscreteXiGaussianEta { xi_atoms, xi_probs, eta_mean, eta_cov } => {
                if xi_atoms.len() != xi_probs.len() || xi_atoms.iter().any(|a| a.len() != m) {
                    return Err(Error::InvalidScenario("xi atoms: shape".into()));
                }
                check_probs(xi_probs, "xi atoms")?;
                check_len(eta_mean, n, "eta_mean")?;
                check_cov(eta_cov, n, "R")
            }
        }
    }

    /// `(xi_mean, Q, eta_mean, R)` when `xi` and `eta` are independent
    /// Gaussians (a vanishing `xi` counts, with `Q = 0`).
    pub fn gaussian_product_parts(&self, m: usize) -> Option<(Vec<f64>, Rows, Vec<f64>, Rows)> {
        match self {
            JumpLaw::GaussianProduct { xi_mean, xi_cov, eta_mean, eta_cov } => {
                Some((xi_mean.clone(), xi_cov.clone(), eta_mean.clone(), eta_cov.clone()))
            }
            JumpLaw::DegenerateXiZero { eta_mean, eta_cov } => {
                Some((vec![0.0; m], vec![vec![0.0; m]; m], eta_mean.clone(), eta_cov.clone()))
            }
            _ => None,
        }
    }

    pub fn compile(&self, m: usize, n: usize) -> Result<MarkLaw> {
        let mut law = self.clone();
        law.normalize(m, n);
        law.check(m, n)?;
        let zero_xi = XiLaw::Zero(vec![0.0; m]);
        let compiled = match law {
            JumpLaw::GaussianProduct { xi_mean, xi_cov, eta_mean, eta_cov } => MarkLaw {
                m,
                n,
                eta: EtaLaw::Gaussian(Gaussian::new(eta_mean, to_matrix(&eta_cov))),
                xi: XiLaw::Gaussian(Gaussian::new(xi_mean, to_matrix(&xi_cov))),
                coupling: Coupling::Independent,
            },
            JumpLaw::GaussianJoint { mean, cov } => {
                let full = to_matrix(&cov);
                let sxx = full.view((0, 0), (m, m)).into_owned();
                let sxe = full.view((0, m), (m, n)).into_owned();
                let see = full.view((m, m), (n, n)).into_owned();
                let mu_x = mean[..m].to_vec();
                let mu_e = mean[m..].to_vec();
                let joint = Gaussian::new(mean.clone(), full);
                let eta = Gaussian::new(mu_e.clone(), see.clone());
                let xi = Gaussian::new(mu_x.clone(), sxx.clone());
                let see_inv = see.clone().pseudo_inverse(1e-14).map_err(|e| {
                    Error::InvalidScenario(format!("eta covariance not invertible: {e}"))
                })?;
                let gain = &sxe * see_inv;
                let cond_cov = &sxx - &gain * sxe.transpose();
                let cond_cov = 0.5 * (&cond_cov + cond_cov.transpose());
                MarkLaw {
                    m,
                    n,
                    eta: EtaLaw::Gaussian(eta),
                    xi: XiLaw::Gaussian(xi),
                    coupling: Coupling::Gaussian {
                        joint,
                        gain,
                        mu_xi: mu_x,
                        mu_eta: mu_e,
                        cond: Gaussian::new(vec![0.0; m], cond_cov),
                    },
                }
            }
            JumpLaw::Discrete { atoms, probs, match_tol } => {
                let eta_points: Vec<Vec<f64>> = atoms.iter().map(|a| a[m..].to_vec()).collect();
                let xi_points: Vec<Vec<f64>> = atoms.iter().map(|a| a[..m].to_vec()).collect();
                MarkLaw {
                    m,
                    n,
                    eta: EtaLaw::Atoms { points: eta_points, probs: probs.clone(), tol: match_tol },
                    xi: XiLaw::Atoms(Atoms::new(xi_points, probs.clone())),
                    coupling: Coupling::Discrete { atoms, probs, tol: match_tol },
                }
            }
            JumpLaw::DegenerateXiZero { eta_mean, eta_cov } => MarkLaw {
                m,
                n,
                eta: EtaLaw::Gaussian(Gaussian::new(eta_mean, to_matrix(&eta_cov))),
                xi: zero_xi,
                coupling: Coupling::Independent,
            },
            JumpLaw::DiscreteXiGaussianEta { xi_atoms, xi_probs, eta_mean, eta_cov } => MarkLaw {
                m,
                n,
                eta: EtaLaw::Gaussian(Gaussian::new(eta_mean, to_matrix(&eta_cov))),
                xi: XiLaw::Atoms(Atoms::new(xi_atoms, xi_probs)),
                coupling: Coupling::Independent,
            },
        };
        Ok(compiled)
    }
}

/// Finite distribution with cached cumulative weights.
#[derive(Debug, Clone)]
pub struct Atoms {
    pub points: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Atoms {
    pub fn new(points: Vec<Vec<f64>>, probs: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { points, probs, cumulative }
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap_or(&1.0);
        let u: f64 = rng.random::<f64>() * total;
        self.cumulative.iter().position(|c| u < *c).unwrap_or(self.points.len() - 1)
    }
}

/// Law of the observation noise `eta` (the measure `F`).
#[derive(Debug, Clone)]
pub enum EtaLaw {
    Gaussian(Gaussian),
    Atoms { points: Vec<Vec<f64>>, probs: Vec<f64>, tol: f64 },
}

/// Marginal law of the signal mark `xi`.
#[derive(Debug, Clone)]
pub enum XiLaw {
    Zero(Vec<f64>),
    Gaussian(Gaussian),
    Atoms(Atoms),
}

#[derive(Debug, Clone)]
enum Coupling {
    Independent,
    Gaussian { joint: Gaussian, gain: DMatrix<f64>, mu_xi: Vec<f64>, mu_eta: Vec<f64>, cond: Gaussian },
    Discrete { atoms: Vec<Vec<f64>>, probs: Vec<f64>, tol: f64 },
}

/// A sampleable, density-evaluable distribution over `R^m`.
#[derive(Debug, Clone)]
pub enum XiDistribution {
    PointMass(Vec<f64>),
    Gaussian(Gaussian),
    Atoms(Atoms),
}

impl XiDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            XiDistribution::PointMass(p) => out.copy_from_slice(p),
            XiDistribution::Gaussian(g) => g.sample(rng, out),
            XiDistribution::Atoms(a) => out.copy_from_slice(&a.points[a.sample_index(rng)]),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            XiDistribution::PointMass(p) => p.clone(),
            XiDistribution::Gaussian(g) => g.mean.clone(),
            XiDistribution::Atoms(a) => {
                let d = a.points[0].len();
                (0..d).map(|k| a.points.iter().zip(&a.probs).map(|(p, w)| p[k] * w).sum()).collect()
            }
        }
    }

    /// Density (Gaussian) or probability mass (atoms, point mass).
    pub fn density(&self, x: &[f64]) -> f64 {
        match self {
            XiDistribution::PointMass(p) => f64::from(u8::from(p.as_slice() == x)),
            XiDistribution::Gaussian(g) => g.log_density(x).map_or(f64::NAN, f64::exp),
            XiDistribution::Atoms(a) => {
                a.points.iter().zip(&a.probs).filter(|(p, _)| p.as_slice() == x).map(|(_, w)| w).sum()
            }
        }
    }
}

/// Runtime form of a [`JumpLaw`].
#[derive(Debug, Clone)]
pub struct MarkLaw {
    pub m: usize,
    pub n: usize,
    pub eta: EtaLaw,
    pub xi: XiLaw,
    coupling: Coupling,
}

fn within(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(p, q)| (p - q).abs() <= tol)
}

impl MarkLaw {
    pub fn xi_is_zero(&self) -> bool {
        matches!(self.xi, XiLaw::Zero(_))
    }

    /// True when `F` has a Lebesgue density everywhere (Gaussian, non-singular).
    pub fn eta_has_density(&self) -> bool {
        matches!(&self.eta, EtaLaw::Gaussian(g) if g.has_density())
    }

    pub fn xi_independent_of_eta(&self) -> bool {
        matches!(self.coupling, Coupling::Independent)
    }

    /// `ln dF/dLeb(eta)`, or the log probability of matching atoms for
    /// discrete laws. `-inf` when incompatible.
    pub fn eta_log_density(&self, eta: &[f64]) -> f64 {
        match &self.eta {
            EtaLaw::Gaussian(g) => g.log_density(eta).unwrap_or(f64::NAN),
            EtaLaw::Atoms { points, probs, tol } => {
                let p: f64 = points
                    .iter()
                    .zip(probs)
                    .filter(|(pt, _)| within(pt, eta, *tol))
                    .map(|(_, w)| w)
                    .sum();
                p.ln()
            }
        }
    }

    pub fn sample_mark<R: Rng + ?Sized>(&self, rng: &mut R, xi: &mut [f64], eta: &mut [f64]) {
        match &self.coupling {
            Coupling::Independent => {
                self.sample_xi(rng, xi);
                match &self.eta {
                    EtaLaw::Gaussian(g) => g.sample(rng, eta),
                    EtaLaw::Atoms { .. } => unreachable!("discrete eta is always coupled"),
                }
            }
            Coupling::Gaussian { joint, .. } => {
                let mut z = vec![0.0; self.m + self.n];
                joint.sample(rng, &mut z);
                xi.copy_from_slice(&z[..self.m]);
                eta.copy_from_slice(&z[self.m..]);
            }
            Coupling::Discrete { atoms, .. } => {
                let XiLaw::Atoms(a) = &self.xi else { unreachable!() };
                let k = a.sample_index(rng);
                xi.copy_from_slice(&atoms[k][..self.m]);
                eta.copy_from_slice(&atoms[k][self.m..]);
            }
        }
    }

    /// Draw from the `xi` marginal.
    pub fn sample_xi<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match &self.xi {
            XiLaw::Zero(z) => out.copy_from_slice(z),
            XiLaw::Gaussian(g) => g.sample(rng, out),
            XiLaw::Atoms(a) => out.copy_from_slice(&a.points[a.sample_index(rng)]),
        }
    }

    /// Draw `xi ~ F_{xi|eta}(. | eta)` without allocating the distribution.
    pub fn sample_xi_given_eta<R: Rng + ?Sized>(
        &self,
        eta: &[f64],
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        match &self.coupling {
            Coupling::Independent => {
                self.sample_xi(rng, out);
                Ok(())
            }
            Coupling::Gaussian { gain, mu_xi, mu_eta, cond, .. } => {
                let mean = conditional_mean(gain, mu_xi, mu_eta, eta);
                cond.sample_shifted(&mean, rng, out);
                Ok(())
            }
            Coupling::Discrete { .. } => {
                let dist = self.conditional(eta)?;
                dist.sample(rng, out);
                Ok(())
            }
        }
    }

    /// The `xi` marginal as a distribution.
    pub fn xi_marginal(&self) -> XiDistribution {
        match &self.xi {
            XiLaw::Zero(z) => XiDistribution::PointMass(z.clone()),
            XiLaw::Gaussian(g) => XiDistribution::Gaussian(g.clone()),
            XiLaw::Atoms(a) => XiDistribution::Atoms(a.clone()),
        }
    }

    /// The conditional law `F_{xi|eta}(. | eta0)`.
    pub fn conditional(&self, eta0: &[f64]) -> Result<XiDistribution> {
        match &self.coupling {
            Coupling::Independent => Ok(match &self.xi {
                XiLaw::Zero(z) => XiDistribution::PointMass(z.clone()),
                XiLaw::Gaussian(g) => XiDistribution::Gaussian(g.clone()),
                XiLaw::Atoms(a) => XiDistribution::Atoms(a.clone()),
            }),
            Coupling::Gaussian { gain, mu_xi, mu_eta, cond, .. } => {
                let mean = conditional_mean(gain, mu_xi, mu_eta, eta0);
                Ok(XiDistribution::Gaussian(Gaussian::new(mean, cond.cov.clone())))
            }
            Coupling::Discrete { atoms, probs, tol } => {
                let mut pts = Vec::new();
                let mut ws = Vec::new();
                for (a, p) in atoms.iter().zip(probs) {
                    if within(&a[self.m..], eta0, *tol) && *p > 0.0 {
                        pts.push(a[..self.m].to_vec());
                        ws.push(*p);
                    }
                }
                let total: f64 = ws.iter().sum();
                if pts.is_empty() || total <= 0.0 {
                    return Err(Error::ZeroConditionalMass(eta0.to_vec()));
                }
                ws.iter_mut().for_each(|w| *w /= total);
                Ok(XiDistribution::Atoms(Atoms::new(pts, ws)))
            }
        }
    }

    /// Quadrature nodes of the `xi` marginal (tensor Gauss–Hermite for
    /// Gaussians, exact atoms otherwise).
    pub fn xi_quadrature(&self, gh: &GaussHermite) -> Vec<(Vec<f64>, f64)> {
        match &self.xi {
            XiLaw::Zero(z) => vec![(z.clone(), 1.0)],
            XiLaw::Gaussian(g) => g.quadrature(gh),
            XiLaw::Atoms(a) => a.points.iter().cloned().zip(a.probs.iter().copied()).collect(),
        }
    }

    /// Quadrature nodes of `F_{xi|eta}(. | eta)`.
    pub fn conditional_quadrature(&self, eta: &[f64], gh: &GaussHermite) -> Result<Vec<(Vec<f64>, f64)>> {
        match &self.coupling {
            Coupling::Independent => Ok(self.xi_quadrature(gh)),
            Coupling::Gaussian { gain, mu_xi, mu_eta, cond, .. } => {
                let mean = conditional_mean(gain, mu_xi, mu_eta, eta);
                Ok(cond.quadrature_at(&mean, gh))
            }
            Coupling::Discrete { .. } => match self.conditional(eta)? {
                XiDistribution::Atoms(a) => Ok(a.points.into_iter().zip(a.probs).collect()),
                _ => unreachable!(),
            },
        }
    }

    /// Mean and covariance of `F_{xi|eta}` when it is Gaussian (or a point mass).
    pub fn conditional_gaussian(&self, eta: &[f64]) -> Option<(Vec<f64>, DMatrix<f64>)> {
        match (&self.coupling, &self.xi) {
            (Coupling::Independent, XiLaw::Gaussian(g)) => Some((g.mean.clone(), g.cov.clone())),
            (Coupling::Independent, XiLaw::Zero(z)) => {
                Some((z.clone(), DMatrix::zeros(self.m, self.m)))
            }
            (Coupling::Gaussian { gain, mu_xi, mu_eta, cond, .. }, _) => {
                Some((conditional_mean(gain, mu_xi, mu_eta, eta), cond.cov.clone()))
            }
            _ => None,
        }
    }
}

fn conditional_mean(gain: &DMatrix<f64>, mu_xi: &[f64], mu_eta: &[f64], eta: &[f64]) -> Vec<f64> {
    let m = mu_xi.len();
    (0..m)
        .map(|i| {
            mu_xi[i]
                + (0..eta.len()).map(|j| gain[(i, j)] * (eta[j] - mu_eta[j])).sum::<f64>()
        })
        .collect()
}
