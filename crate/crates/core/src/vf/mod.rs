//! Vector fields `f(x, u)`: parsing, evaluation and Jacobians.

pub mod dual;
pub mod expr;
pub mod parse;

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use dual::{Dual, Number};
use expr::{Expr, Fault};

pub use parse::{parse_expr, parse_system};

/// A parsed system `ẋ = f(x, u)` with `f: ℝⁿ × ℝᵐ → ℝⁿ`.
///
/// Immutable once built; every evaluation is pure.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDef {
    name: String,
    n: usize,
    m: usize,
    exprs: Vec<Expr>,
}

/// Value and full Jacobian `[∂f/∂x | ∂f/∂u]` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVec {
    pub value: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

fn fault_to_error(component: usize, fault: Fault) -> Error {
    match fault {
        Fault::NotDifferentiable(function) => Error::NonDifferentiable { component, function },
        other => Error::Domain {
            component,
            message: other.to_string(),
        },
    }
}

impl SystemDef {
    /// `m = 0` is allowed and describes a plain map `G: ℝⁿ → ℝⁿ`.
    pub fn new(name: impl Into<String>, n: usize, m: usize, exprs: Vec<Expr>) -> Result<Self> {
        if n == 0 {
            return Err(Error::dim("state dimension must be positive"));
        }
        if exprs.len() != n {
            return Err(Error::dim(format!(
                "declared n = {n} but got {} expression(s)",
                exprs.len()
            )));
        }
        for (k, e) in exprs.iter().enumerate() {
            let (mx, mu) = e.max_indices();
            if mx > n || mu > m {
                return Err(Error::dim(format!(
                    "component f{} references x{mx}/u{mu} outside n = {n}, m = {m}",
                    k + 1
                )));
            }
        }
        Ok(SystemDef { name: name.into(), n, m, exprs })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.exprs
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn check_point(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.n || u.len() != self.m {
            return Err(Error::dim(format!(
                "point has dim(x) = {}, dim(u) = {}; system expects {} and {}",
                x.len(),
                u.len(),
                self.n,
                self.m
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        self.check_point(x, u)?;
        let mut out = DVector::zeros(self.n);
        for (k, e) in self.exprs.iter().enumerate() {
            out[k] = e.eval::<f64>(x, u).map_err(|f| fault_to_error(k + 1, f))?;
        }
        Ok(out)
    }

    /// Exact Jacobian by forward-mode dual numbers, one pass per input.
    pub fn jacobian(&self, x: &[f64], u: &[f64]) -> Result<DualVec> {
        let value = self.eval(x, u)?;
        let (n, m) = (self.n, self.m);
        let mut jac = DMatrix::zeros(n, n + m);
        let mut xd: Vec<Dual> = x.iter().map(|&v| Dual::from_f64(v)).collect();
        let mut ud: Vec<Dual> = u.iter().map(|&v| Dual::from_f64(v)).collect();
        for col in 0..n + m {
            let seed = |v: &mut Dual, on: bool| v.eps = if on { 1.0 } else { 0.0 };
            for (i, v) in xd.iter_mut().enumerate() {
                seed(v, i == col);
            }
            for (j, v) in ud.iter_mut().enumerate() {
                seed(v, n + j == col);
            }
            for (k, e) in self.exprs.iter().enumerate() {
                jac[(k, col)] = e
                    .eval::<Dual>(&xd, &ud)
                    .map_err(|f| fault_to_error(k + 1, f))?
                    .eps;
            }
        }
        Ok(DualVec { value, jacobian: jac })
    }

    /// Central finite-difference Jacobian; a validation oracle for [`jacobian`](Self::jacobian).
    pub fn jacobian_fd(&self, x: &[f64], u: &[f64], step: f64) -> Result<DMatrix<f64>> {
        if !(step > 0.0) {
            return Err(Error::pre("finite-difference step must be positive"));
        }
        self.check_point(x, u)?;
        let (n, m) = (self.n, self.m);
        let mut jac = DMatrix::zeros(n, n + m);
        let mut z: Vec<f64> = x.iter().chain(u.iter()).copied().collect();
        for col in 0..n + m {
            let orig = z[col];
            z[col] = orig + step;
            let plus = self.eval(&z[..n], &z[n..])?;
            z[col] = orig - step;
            let minus = self.eval(&z[..n], &z[n..])?;
            z[col] = orig;
            jac.set_column(col, &((plus - minus) / (2.0 * step)));
        }
        Ok(jac)
    }
}

impl fmt::Display for SystemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n={} m={}", self.n, self.m)?;
        writeln!(f, "name={}", self.name)?;
        for (k, e) in self.exprs.iter().enumerate() {
            writeln!(f, "f{} = {}", k + 1, e)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(text: &str) -> SystemDef {
        parse_system(text).unwrap()
    }

    #[test]
    fn eval_examples() {
        let sontag = sys("n=1 m=1; f1 = x1 + u1^3");
        assert_eq!(sontag.eval(&[1.0], &[1.0]).unwrap()[0], 2.0);
        let coron = sys("n=3 m=1; f1=x2^3 - 3*(x1-x3)^2*x2; f2=(x1-x3)^3 - 3*(x1-x3)^2*x2; f3=u1");
        assert_eq!(coron.eval(&[0.0; 3], &[0.0]).unwrap(), DVector::zeros(3));
        let xsqr = sys("n=1 m=1; f1 = x1^2 - u1^2");
        assert_eq!(xsqr.eval(&[2.0], &[1.0]).unwrap()[0], 3.0);
    }

    #[test]
    fn eval_domain_errors_name_the_component() {
        let s = sys("n=2 m=1; f1 = x1; f2 = sqrt(x2) + 1/u1");
        match s.eval(&[0.0, -1.0], &[1.0]) {
            Err(Error::Domain { component, .. }) => assert_eq!(component, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(s.eval(&[0.0, 1.0], &[0.0]), Err(Error::Domain { component: 2, .. })));
        assert!(matches!(s.eval(&[0.0], &[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn jacobian_examples() {
        let sontag = sys("n=1 m=1; f1 = x1 + u1^3");
        let j = sontag.jacobian(&[0.0], &[0.0]).unwrap().jacobian;
        assert_eq!(j, DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));

        let coron = sys("n=3 m=1; f1=x2^3 - 3*(x1-x3)^2*x2; f2=(x1-x3)^3 - 3*(x1-x3)^2*x2; f3=u1");
        for a in [-1.0, 0.0, 0.7] {
            let j = coron.jacobian(&[a, 0.0, a], &[0.0]).unwrap().jacobian;
            let mut expect = DMatrix::zeros(3, 4);
            expect[(2, 3)] = 1.0;
            assert_eq!(j, expect);
        }

        let xsqr = sys("n=1 m=1; f1 = x1^2 - u1^2");
        let j = xsqr.jacobian(&[0.3], &[-1.5]).unwrap().jacobian;
        assert_eq!(j, DMatrix::from_row_slice(1, 2, &[0.6, 3.0]));
    }

    #[test]
    fn jacobian_flags_nonsmooth_points() {
        let s = sys("n=1 m=1; f1 = abs(x1) + u1");
        assert!(matches!(
            s.jacobian(&[0.0], &[0.0]),
            Err(Error::NonDifferentiable { component: 1, function: "abs" })
        ));
        assert!(s.eval(&[0.0], &[0.0]).is_ok());
    }

    #[test]
    fn finite_differences_match() {
        let sontag = sys("n=1 m=1; f1 = x1 + u1^3");
        let fd = sontag.jacobian_fd(&[0.0], &[0.0], 1e-6).unwrap();
        assert!((fd[(0, 0)] - 1.0).abs() <= 1e-8 && fd[(0, 1)].abs() <= 1e-8);

        let xsqr = sys("n=1 m=1; f1 = x1^2 - u1^2");
        let fd = xsqr.jacobian_fd(&[1.0], &[1.0], 1e-6).unwrap();
        assert!((fd[(0, 0)] - 2.0).abs() <= 1e-8 && (fd[(0, 1)] + 2.0).abs() <= 1e-8);

        let constant = sys("n=1 m=1; f1 = 1");
        assert_eq!(constant.jacobian_fd(&[0.3], &[0.1], 1e-6).unwrap(), DMatrix::zeros(1, 2));
        assert!(constant.jacobian_fd(&[0.3], &[0.1], 0.0).is_err());
    }

    #[test]
    fn display_round_trips() {
        let text = "n=3 m=1; name=coron; f1=x2^3 - 3*(x1-x3)^2*x2; f2=(x1-x3)^3 - 3*(x1-x3)^2*x2; f3=-u1^2/-(x1+2.5e-3)";
        let s = sys(text);
        assert_eq!(parse_system(&s.to_string()).unwrap(), s);
    }
}
