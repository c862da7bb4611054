//! Serializable catalogue of the coefficient functions `a`, `b`, `c`, `f`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix as nested arrays.
pub type Rows = Vec<Vec<f64>>;

/// Scalar expression over a variable vector.
///
/// For `a`, `b` and `c` the variables are the signal coordinates
/// `x_0..x_{m-1}`; for `f` they are `x_0..x_{m-1}` followed by
/// `y_0..y_{n-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Expr {
    Const { value: f64 },
    Var { index: usize },
    Add { terms: Vec<Expr> },
    Mul { factors: Vec<Expr> },
    Pow { base: Box<Expr>, exponent: i32 },
    Exp { arg: Box<Expr> },
    Log { arg: Box<Expr> },
    Tanh { arg: Box<Expr> },
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const { value }
    }

    pub fn var(index: usize) -> Self {
        Expr::Var { index }
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Const { value } => *value,
            Expr::Var { index } => vars[*index],
            Expr::Add { terms } => terms.iter().map(|t| t.eval(vars)).sum(),
            Expr::Mul { factors } => factors.iter().map(|t| t.eval(vars)).product(),
            Expr::Pow { base, exponent } => base.eval(vars).powi(*exponent),
            Expr::Exp { arg } => arg.eval(vars).exp(),
            Expr::Log { arg } => arg.eval(vars).ln(),
            Expr::Tanh { arg } => arg.eval(vars).tanh(),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const { .. } => None,
            Expr::Var { index } => Some(*index),
            Expr::Add { terms } => terms.iter().filter_map(Expr::max_var).max(),
            Expr::Mul { factors } => factors.iter().filter_map(Expr::max_var).max(),
            Expr::Pow { base, .. } => base.max_var(),
            Expr::Exp { arg } | Expr::Log { arg } | Expr::Tanh { arg } => arg.max_var(),
        }
    }

    pub(crate) fn check_arity(&self, nvars: usize, what: &str) -> Result<()> {
        match self.max_var() {
            Some(i) if i >= nvars => Err(Error::UnknownFunctionDescriptor(format!(
                "{what}: variable index {i} out of range for {nvars} variables"
            ))),
            _ => Ok(()),
        }
    }
}

fn check_shape(rows: &Rows, nrows: usize, ncols: usize, what: &str) -> Result<()> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::UnknownFunctionDescriptor(format!(
            "{what}: expected a {nrows}x{ncols} matrix"
        )));
    }
    Ok(())
}

fn mat_vec(rows: &Rows, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(rows) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// Drift `a: R^m -> R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VectorField {
    /// `a(x) = M x`
    Linear { matrix: Rows },
    /// `a(x) = M x + b`
    Affine { matrix: Rows, offset: Vec<f64> },
    Constant { value: Vec<f64> },
    Components { exprs: Vec<Expr> },
}

impl VectorField {
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            VectorField::Linear { matrix } => mat_vec(matrix, x, out),
            VectorField::Affine { matrix, offset } => {
                mat_vec(matrix, x, out);
                out.iter_mut().zip(offset).for_each(|(o, b)| *o += b);
            }
            VectorField::Constant { value } => out.copy_from_slice(value),
            VectorField::Components { exprs } => {
                for (o, e) in out.iter_mut().zip(exprs) {
                    *o = e.eval(x);
                }
            }
        }
    }

    /// `Some(M)` when `a(x) = M x` exactly.
    pub fn linear_matrix(&self) -> Option<&Rows> {
        match self {
            VectorField::Linear { matrix } => Some(matrix),
            VectorField::Affine { matrix, offset } if offset.iter().all(|v| *v == 0.0) => {
                Some(matrix)
            }
            _ => None,
        }
    }

    pub(crate) fn check(&self, m: usize) -> Result<()> {
        match self {
            VectorField::Linear { matrix } => check_shape(matrix, m, m, "drift"),
            VectorField::Affine { matrix, offset } => {
                check_shape(matrix, m, m, "drift")?;
                if offset.len() != m {
                    return Err(Error::UnknownFunctionDescriptor("drift offset length".into()));
                }
                Ok(())
            }
            VectorField::Constant { value } if value.len() == m => Ok(()),
            VectorField::Constant { .. } => {
                Err(Error::UnknownFunctionDescriptor("drift constant length".into()))
            }
            VectorField::Components { exprs } => {
                if exprs.len() != m {
                    return Err(Error::UnknownFunctionDescriptor("drift component count".into()));
                }
                exprs.iter().try_for_each(|e| e.check_arity(m, "drift"))
            }
        }
    }
}

/// Matrix-valued coefficient `R^m -> R^{m x m}` used for `b` and `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixField {
    Zero,
    Constant { matrix: Rows },
    /// `diag(x) M`, e.g. `b(x) = beta x` for a geometric Brownian motion.
    Multiplicative { matrix: Rows },
    Components { exprs: Vec<Vec<Expr>> },
}

impl MatrixField {
    /// Writes the row-major `m x m` value into `out`.
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let m = x.len();
        match self {
            MatrixField::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            MatrixField::Constant { matrix } => {
                for (i, row) in matrix.iter().enumerate() {
                    out[i * m..(i + 1) * m].copy_from_slice(row);
                }
            }
            MatrixField::Multiplicative { matrix } => {
                for (i, row) in matrix.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        out[i * m + j] = x[i] * v;
                    }
                }
            }
            MatrixField::Components { exprs } => {
                for (i, row) in exprs.iter().enumerate() {
                    for (j, e) in row.iter().enumerate() {
                        out[i * m + j] = e.eval(x);
                    }
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            MatrixField::Zero => true,
            MatrixField::Constant { matrix } | MatrixField::Multiplicative { matrix } => {
                matrix.iter().flatten().all(|v| *v == 0.0)
            }
            MatrixField::Components { .. } => false,
        }
    }

    /// `Some(M)` when the field does not depend on the state.
    pub fn constant_matrix(&self, m: usize) -> Option<Rows> {
        match self {
            MatrixField::Zero => Some(vec![vec![0.0; m]; m]),
            MatrixField::Constant { matrix } => Some(matrix.clone()),
            _ => None,
        }
    }

    pub(crate) fn check(&self, m: usize, what: &str) -> Result<()> {
        match self {
            MatrixField::Zero => Ok(()),
            MatrixField::Constant { matrix } | MatrixField::Multiplicative { matrix } => {
                check_shape(matrix, m, m, what)
            }
            MatrixField::Components { exprs } => {
                if exprs.len() != m || exprs.iter().any(|r| r.len() != m) {
                    return Err(Error::UnknownFunctionDescriptor(format!("{what}: shape")));
                }
                exprs.iter().flatten().try_for_each(|e| e.check_arity(m, what))
            }
        }
    }
}

/// How a mark `xi` moves the signal at a jump time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpMap {
    /// `x + c(x) xi`
    Loading { c: MatrixField },
    /// Scalar write-down `x + ln(1 - xi (1 + beta 1{y < y_bar}))` where `y`
    /// is the pre-event observation; used by the credit-risk scenario.
    LogLoss { beta: f64, y_bar: f64 },
}

impl JumpMap {
    pub fn none() -> Self {
        JumpMap::Loading { c: MatrixField::Zero }
    }

    /// `out = J(x, y_pre, xi)`; `scratch` must hold `m * m` values.
    pub fn apply(&self, x: &[f64], y_pre: &[f64], xi: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let m = x.len();
        match self {
            JumpMap::Loading { c: MatrixField::Zero } => out.copy_from_slice(x),
            JumpMap::Loading { c } => {
                c.eval(x, scratch);
                for i in 0..m {
                    let mut acc = x[i];
                    for j in 0..m {
                        acc += scratch[i * m + j] * xi[j];
                    }
                    out[i] = acc;
                }
            }
            JumpMap::LogLoss { beta, y_bar } => {
                let amp = if y_pre[0] < *y_bar { 1.0 + beta } else { 1.0 };
                out[0] = x[0] + (1.0 - xi[0] * amp).ln();
            }
        }
    }

    /// Scalar convenience for one-dimensional models.
    pub fn apply_scalar(&self, x: f64, y_pre: &[f64], xi: f64) -> f64 {
        let mut scratch = [0.0];
        let mut out = [0.0];
        self.apply(&[x], y_pre, &[xi], &mut scratch, &mut out);
        out[0]
    }

    /// Scalar loading `c(x)` when the map is `x + c(x) xi` on a 1-D state.
    pub fn scalar_loading(&self, x: f64) -> Option<f64> {
        match self {
            JumpMap::Loading { c } => {
                let mut out = [0.0];
                c.eval(&[x], &mut out);
                Some(out[0])
            }
            JumpMap::LogLoss { .. } => None,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, JumpMap::Loading { c } if c.is_zero())
    }

    pub(crate) fn check(&self, m: usize) -> Result<()> {
        match self {
            JumpMap::Loading { c } => c.check(m, "jump coefficient"),
            JumpMap::LogLoss { beta, .. } => {
                if m != 1 {
                    return Err(Error::UnknownFunctionDescriptor(
                        "log_loss jump map requires a scalar signal".into(),
                    ));
                }
                if !(*beta >= 0.0) {
                    return Err(Error::InvalidScenario("log_loss beta must be >= 0".into()));
                }
                Ok(())
            }
        }
    }
}

/// Observation function `f: R^m x R^n -> R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationFn {
    /// `f(x, y) = A x - C y`
    Linear { a: Rows, c: Rows },
    Zero,
    /// One expression per output over `(x_0.., y_0..)`.
    Components { exprs: Vec<Expr> },
}

impl ObservationFn {
    pub fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self {
            ObservationFn::Linear { a, c } => {
                for (k, o) in out.iter_mut().enumerate() {
                    let ax: f64 = a[k].iter().zip(x).map(|(p, q)| p * q).sum();
                    let cy: f64 = c[k].iter().zip(y).map(|(p, q)| p * q).sum();
                    *o = ax - cy;
                }
            }
            ObservationFn::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            ObservationFn::Components { exprs } => {
                let mut vars = Vec::with_capacity(x.len() + y.len());
                vars.extend_from_slice(x);
                vars.extend_from_slice(y);
                for (o, e) in out.iter_mut().zip(exprs) {
                    *o = e.eval(&vars);
                }
            }
        }
    }

    pub fn eval_scalar(&self, x: f64, y: &[f64]) -> f64 {
        let mut out = [0.0];
        self.eval(&[x], y, &mut out);
        out[0]
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ObservationFn::Zero => true,
            ObservationFn::Linear { a, c } => a.iter().chain(c).flatten().all(|v| *v == 0.0),
            ObservationFn::Components { .. } => false,
        }
    }

    pub(crate) fn check(&self, m: usize, n: usize) -> Result<()> {
        match self {
            ObservationFn::Linear { a, c } => {
                check_shape(a, n, m, "observation A")?;
                check_shape(c, n, n, "observation C")
            }
            ObservationFn::Zero => Ok(()),
            ObservationFn::Components { exprs } => {
                if exprs.len() != n {
                    return Err(Error::UnknownFunctionDescriptor("observation output count".into()));
                }
                exprs.iter().try_for_each(|e| e.check_arity(m + n, "observation"))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expr_evaluates_polynomial_and_exp() {
        // -x - 0.2 x^3 + exp(y)
        let e = Expr::Add {
            terms: vec![
                Expr::Mul { factors: vec![Expr::constant(-1.0), Expr::var(0)] },
                Expr::Mul {
                    factors: vec![
                        Expr::constant(-0.2),
                        Expr::Pow { base: Box::new(Expr::var(0)), exponent: 3 },
                    ],
                },
                Expr::Exp { arg: Box::new(Expr::var(1)) },
            ],
        };
        let v = e.eval(&[2.0, 0.0]);
        assert!((v - (-2.0 - 1.6 + 1.0)).abs() < 1e-15);
        assert!(e.check_arity(2, "t").is_ok());
        assert!(matches!(e.check_arity(1, "t"), Err(Error::UnknownFunctionDescriptor(_))));
    }

    #[test]
    fn loading_jump_is_affine_in_mark() {
        let j = JumpMap::Loading { c: MatrixField::Multiplicative { matrix: vec![vec![1.0]] } };
        assert_eq!(j.apply_scalar(2.0, &[0.0], 0.25), 2.5);
        assert_eq!(j.scalar_loading(2.0), Some(2.0));
        assert!(JumpMap::none().is_identity());
        assert_eq!(JumpMap::none().apply_scalar(1.5, &[0.0], 9.0), 1.5);
    }

    #[test]
    fn log_loss_amplifies_under_weak_sentiment() {
        let j = JumpMap::LogLoss { beta: 0.5, y_bar: 0.0 };
        let strong = j.apply_scalar(0.0, &[0.1], 0.1);
        let weak = j.apply_scalar(0.0, &[-0.1], 0.1);
        assert!((strong - 0.9f64.ln()).abs() < 1e-15);
        assert!((weak - 0.85f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn linear_observation() {
        let f = ObservationFn::Linear { a: vec![vec![2.0]], c: vec![vec![0.5]] };
        assert_eq!(f.eval_scalar(1.0, &[2.0]), 1.0);
        assert!(!f.is_zero());
        assert!(ObservationFn::Zero.is_zero());
    }

    #[test]
    fn serde_tags_are_stable() {
        let f = VectorField::Linear { matrix: vec![vec![-1.0]] };
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"kind":"linear","matrix":[[-1.0]]}"#);
        let bad = serde_json::from_str::<VectorField>(r#"{"kind":"spline"}"#);
        assert!(bad.is_err());
    }
}
