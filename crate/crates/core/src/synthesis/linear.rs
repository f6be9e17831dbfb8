//! Linear feedback laws `u = Kx` that place the closed-loop linearization at `−I`.

use nalgebra::DMatrix;

use super::{FeedbackLaw, LawKind, Provenance, Shift};
use crate::error::{Error, Result};
use crate::transversality::{self, DEFAULT_TOL};
use crate::variational::{self, JacobianSplit};
use crate::vf::expr::Expr;
use crate::vf::SystemDef;

/// `‖A + BK + I‖_F`.
pub fn closed_loop_gap(split: &JacobianSplit, k: &DMatrix<f64>) -> f64 {
    let n = split.n();
    (&split.a + &split.b * k + DMatrix::identity(n, n)).norm()
}

fn require_open(split: &JacobianSplit) -> Result<()> {
    if variational::banach_constant(&split.j) > 0.0 {
        Ok(())
    } else {
        Err(Error::NotLinearlyOpen)
    }
}

/// `K = −L·B*·(AA* + BB*)⁻¹·(I + A)`.
///
/// The inverse is applied by a Cholesky solve; if that fails and
/// `allow_pinv` is set the SVD pseudoinverse is used instead.
fn gain(split: &JacobianSplit, left: &DMatrix<f64>, allow_pinv: bool) -> Result<DMatrix<f64>> {
    let n = split.n();
    let (a, b) = (&split.a, &split.b);
    let gram = a * a.transpose() + b * b.transpose();
    let rhs = DMatrix::identity(n, n) + a;
    let y = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None if allow_pinv => variational::svd_pseudoinverse(&gram) * &rhs,
        None => {
            return Err(Error::InternalConsistency(
                "AA* + BB* is singular although cov > 0".into(),
            ))
        }
    };
    Ok(-(left * b.transpose() * y))
}

fn linear_law(split: &JacobianSplit, k: DMatrix<f64>, provenance: Provenance) -> FeedbackLaw {
    let check = closed_loop_gap(split, &k);
    let mut law = FeedbackLaw::new(split.n(), split.m(), LawKind::Linear { k }, provenance);
    law.closed_loop_check = Some(check);
    law
}

pub fn law_transversal(split: &JacobianSplit, c: f64) -> Result<FeedbackLaw> {
    if split.n() != split.m() {
        return Err(Error::dim("the transversality-constant law needs n = m"));
    }
    if !(c >= 0.0) {
        return Err(Error::pre(format!("transversality constant must be ≥ 0, got {c}")));
    }
    let residual = (&split.a + &split.b * c).norm();
    if residual > DEFAULT_TOL * (1.0 + split.a.norm()) {
        return Err(Error::pre(format!("‖A + cB‖_F = {residual:e} for c = {c}")));
    }
    require_open(split)?;
    let left = DMatrix::identity(split.m(), split.m()) * (c * c + 1.0);
    Ok(linear_law(split, gain(split, &left, false)?, Provenance::TI))
}

pub fn law_semitransversal_1(split: &JacobianSplit, q: &DMatrix<f64>) -> Result<FeedbackLaw> {
    if q.nrows() != split.m() || q.ncols() != split.n() {
        return Err(Error::dim(format!(
            "transverse factor must be {}×{}, got {}×{}",
            split.m(),
            split.n(),
            q.nrows(),
            q.ncols()
        )));
    }
    let residual = (&split.a + &split.b * q).norm();
    if residual > DEFAULT_TOL * (1.0 + split.a.norm()) {
        return Err(Error::pre(format!("‖A + BQ‖_F = {residual:e}")));
    }
    require_open(split)?;
    let left = q * q.transpose() + DMatrix::identity(split.m(), split.m());
    Ok(linear_law(split, gain(split, &left, false)?, Provenance::STI))
}

fn b_plus(b: &DMatrix<f64>) -> DMatrix<f64> {
    variational::right_pseudoinverse(b).unwrap_or_else(|_| variational::svd_pseudoinverse(b))
}

fn qt1_left(split: &JacobianSplit) -> DMatrix<f64> {
    let bp = b_plus(&split.b);
    &bp * &split.a * split.a.transpose() * bp.transpose() + DMatrix::identity(split.m(), split.m())
}

fn require_type2(split: &JacobianSplit) -> Result<()> {
    let t2 = transversality::type2_check(split, DEFAULT_TOL);
    if t2.holds {
        Ok(())
    } else {
        Err(Error::pre(format!(
            "projection condition fails: ‖P·AA*·P − AA*‖_F = {:e}",
            t2.residual
        )))
    }
}

pub fn law_semitransversal_2(split: &JacobianSplit) -> Result<FeedbackLaw> {
    require_open(split)?;
    require_type2(split)?;
    let left = qt1_left(split);
    Ok(linear_law(split, gain(split, &left, false)?, Provenance::QTI))
}

/// `F(x, u) = f(x + x1, u + u1) − f(x1, u1)`.
pub fn shifted_system(sys: &SystemDef, x1: &[f64], u1: &[f64]) -> Result<SystemDef> {
    let offset = sys.eval(x1, u1)?;
    let xs = |i: usize| Expr::linear_combination(vec![(1.0, Expr::X(i))], x1[i]);
    let us = |l: usize| Expr::linear_combination(vec![(1.0, Expr::U(l))], u1[l]);
    let exprs = sys
        .exprs()
        .iter()
        .zip(offset.iter())
        .map(|(e, &c)| {
            let moved = e.substitute(&xs, &us);
            if c == 0.0 {
                moved
            } else {
                Expr::sub(moved, Expr::Const(c))
            }
        })
        .collect();
    SystemDef::new(format!("{}_shifted", sys.name()), sys.n(), sys.m(), exprs)
}

/// Projection-condition law for the system re-centred at `(x1, u1)`; the
/// Gram inverse falls back to a pseudoinverse when it is singular.
pub fn law_shifted(sys: &SystemDef, x1: &[f64], u1: &[f64]) -> Result<FeedbackLaw> {
    let split = JacobianSplit::of_system(sys, x1, u1)?;
    law_shifted_split(&split)
}

/// Same as [`law_shifted`] given the split at the shift point.
pub fn law_shifted_split(split: &JacobianSplit) -> Result<FeedbackLaw> {
    require_open(split)?;
    require_type2(split)?;
    let left = qt1_left(split);
    let mut law = linear_law(split, gain(split, &left, true)?, Provenance::STLIII);
    law.shift = Some(Shift {
        x1: split.x.iter().copied().collect(),
        u1: split.u.iter().copied().collect(),
    });
    Ok(law)
}

/// `F(x, w) = G(x) − G(0) + c·f(w)` with `w = (y, u) ∈ ℝⁿ × ℝᵐ`.
#[allow(non_snake_case)]
pub fn family_F(sys: &SystemDef, g: &SystemDef, c: f64) -> Result<SystemDef> {
    if c == 0.0 || !c.is_finite() {
        return Err(Error::pre(format!("scale c must be finite and nonzero, got {c}")));
    }
    let (n, m) = (sys.n(), sys.m());
    if g.n() != n || g.m() != 0 {
        return Err(Error::dim(format!(
            "G must map ℝ^{n} → ℝ^{n} with no controls, got n = {}, m = {}",
            g.n(),
            g.m()
        )));
    }
    let split = JacobianSplit::of_system(sys, &vec![0.0; n], &vec![0.0; m])?;
    require_open(&split)?;
    let g0 = g.eval(&vec![0.0; n], &[])?;
    let xs = |i: usize| Expr::U(i);
    let us = |l: usize| Expr::U(n + l);
    let exprs = g
        .exprs()
        .iter()
        .zip(sys.exprs())
        .zip(g0.iter())
        .map(|((ge, fe), &g0k)| {
            let fw = fe.substitute(&xs, &us);
            let fw = if c == 1.0 { fw } else { Expr::mul(Expr::Const(c), fw) };
            match ge {
                Expr::Const(_) => fw,
                _ if g0k == 0.0 => Expr::add(ge.clone(), fw),
                _ => Expr::add(Expr::sub(ge.clone(), Expr::Const(g0k)), fw),
            }
        })
        .collect();
    SystemDef::new(format!("{}_family", sys.name()), n, n + m, exprs)
}
