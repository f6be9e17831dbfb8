//! Linear composition operator `h(x, u) = Hx·x + (0; u)` with `Hx = −J⁺`,
//! which turns `f` into `T_h f = f ∘ h` with spatial linearization `−I`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_ext;
use crate::variational::{self, JacobianSplit};
use crate::vf::expr::Expr;
use crate::vf::SystemDef;

/// Tolerance on `f(0, 0) = 0`.
const EQUILIBRIUM_TOL: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionOperator {
    /// `(n+m)×n` spatial block.
    #[serde(with = "serde_ext::matrix")]
    pub hx: DMatrix<f64>,
    pub base_x: Vec<f64>,
    pub base_u: Vec<f64>,
}

impl CompositionOperator {
    pub fn n(&self) -> usize {
        self.hx.ncols()
    }

    pub fn m(&self) -> usize {
        self.hx.nrows() - self.hx.ncols()
    }

    /// `h(x, u) = Hx·x + (0; u)`.
    pub fn apply(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.n() || u.len() != self.m() {
            return Err(Error::dim(format!(
                "h expects dim(x) = {}, dim(u) = {}",
                self.n(),
                self.m()
            )));
        }
        let mut out = &self.hx * DVector::from_column_slice(x);
        for (k, &v) in u.iter().enumerate() {
            out[self.n() + k] += v;
        }
        Ok(out)
    }

    /// The modified system `T_h f(x, u) = f(h(x, u))` as an expression system.
    pub fn modified_system(&self, sys: &SystemDef) -> Result<SystemDef> {
        let (n, m) = (self.n(), self.m());
        if sys.n() != n || sys.m() != m {
            return Err(Error::dim(format!(
                "composition operator is {n}×{m} but the system is {}×{}",
                sys.n(),
                sys.m()
            )));
        }
        let row = |r: usize| -> Vec<(f64, Expr)> { (0..n).map(|j| (self.hx[(r, j)], Expr::X(j))).collect() };
        let xs = |i: usize| Expr::linear_combination(row(i), 0.0);
        let us = |l: usize| {
            let mut terms = row(n + l);
            terms.push((1.0, Expr::U(l)));
            Expr::linear_combination(terms, 0.0)
        };
        let exprs = sys.exprs().iter().map(|e| e.substitute(&xs, &us)).collect();
        SystemDef::new(format!("{}_composed", sys.name()), n, m, exprs)
    }
}

/// `Hx = −(J_f(0,0))⁺`.
pub fn build_composition_h(sys: &SystemDef) -> Result<CompositionOperator> {
    let (n, m) = (sys.n(), sys.m());
    let (x0, u0) = (vec![0.0; n], vec![0.0; m]);
    let split = JacobianSplit::of_system(sys, &x0, &u0)?;
    let drift = split_value(sys, &x0, &u0)?;
    if drift > EQUILIBRIUM_TOL {
        return Err(Error::pre(format!(
            "the origin is not an equilibrium: ‖f(0,0)‖∞ = {drift:e}"
        )));
    }
    if variational::banach_constant(&split.j) <= 0.0 {
        return Err(Error::NotLinearlyOpen);
    }
    // `+ 0.0` keeps exact zeros from serializing as -0.0.
    let hx = variational::right_pseudoinverse(&split.j)?.map(|v| -v + 0.0);
    let gap = (&split.j * &hx + DMatrix::identity(n, n)).norm();
    if gap > IDENTITY_TOL {
        return Err(Error::InternalConsistency(format!("J·Hx deviates from −I by {gap:e}")));
    }
    if variational::numerical_rank(&hx) != n {
        return Err(Error::InternalConsistency("Hx lost full column rank".into()));
    }
    Ok(CompositionOperator { hx, base_x: x0, base_u: u0 })
}

fn split_value(sys: &SystemDef, x: &[f64], u: &[f64]) -> Result<f64> {
    Ok(sys.eval(x, u)?.amax())
}
