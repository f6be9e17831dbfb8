//! Transversality classification of a system at a point: transversality
//! constant `c` (`A = −cB`), transverse factor `Q` (`A = −BQ`) and the
//! projection identity `P·AA*·P = AA*` with `P` the projection onto `range(B)`.
//!
//! When the Jacobian is surjective the last two conditions and
//! `rank B = n` are equivalent; [`classify`] checks that they agree.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_ext;
use crate::variational::{self, JacobianSplit};
use crate::vf::SystemDef;

pub const DEFAULT_TOL: f64 = 1e-8;

/// Residual cut-off for the exact right-pseudoinverse factor.
const FACTOR_EXACT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransversalityConstant {
    pub c: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransverseFactor {
    #[serde(with = "serde_ext::matrix")]
    pub q: DMatrix<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Type2Check {
    pub holds: bool,
    pub residual: f64,
    /// `‖AA* − ½(P·AA* + AA*·P)‖_F`.
    pub lemma_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalityReport {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    #[serde(with = "serde_ext::ext_f64")]
    pub cov: f64,
    pub tc: Option<TransversalityConstant>,
    pub type1: Option<TransverseFactor>,
    pub type2: Type2Check,
    pub lemma_qtli_lhs_rhs_gap: f64,
    /// `rank B = n`.
    pub equivalent_rank_condition: bool,
}

fn frob(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Least-squares `c` in `min ‖A + cB‖_F`, accepted when `c ≥ 0` (up to `tol`)
/// and the residual is at most `tol·(1 + ‖A‖_F)`.
pub fn transversality_constant(split: &JacobianSplit, tol: f64) -> Result<Option<TransversalityConstant>> {
    if split.n() != split.m() {
        return Err(Error::dim(format!(
            "transversality constant needs n = m, got n = {}, m = {}",
            split.n(),
            split.m()
        )));
    }
    let (a, b) = (&split.a, &split.b);
    let bb = b.dot(b);
    let c_ls = if bb == 0.0 { 0.0 } else { -a.dot(b) / bb };
    if c_ls < -tol {
        return Ok(None);
    }
    let c = c_ls.max(0.0);
    let residual = frob(&(a + b * c));
    if residual <= tol * (1.0 + frob(a)) {
        Ok(Some(TransversalityConstant { c, residual }))
    } else {
        Ok(None)
    }
}

/// Minimum-norm `Q` with `A = −BQ`, i.e. `Q = −B⁺A`.
pub fn transverse_factor(split: &JacobianSplit, tol: f64) -> Option<TransverseFactor> {
    let (a, b) = (&split.a, &split.b);
    let scale = 1.0 + frob(a);
    if variational::numerical_rank(b) == split.n() {
        if let Ok(pinv) = variational::right_pseudoinverse(b) {
            let q = -(pinv * a);
            let residual = frob(&(a + b * &q));
            if residual <= FACTOR_EXACT_TOL.max(tol) * scale {
                return Some(TransverseFactor { q, residual });
            }
        }
    }
    let q = -(variational::svd_pseudoinverse(b) * a);
    let residual = frob(&(a + b * &q));
    (residual <= tol * scale).then_some(TransverseFactor { q, residual })
}

pub fn type2_check(split: &JacobianSplit, tol: f64) -> Type2Check {
    let p = variational::range_projection(&split.b);
    let aa = &split.a * split.a.transpose();
    let residual = frob(&(&p * &aa * &p - &aa));
    let lemma_gap = frob(&(&aa - (&p * &aa + &aa * &p) * 0.5));
    Type2Check {
        holds: residual <= tol * (1.0 + frob(&aa)),
        residual,
        lemma_gap,
    }
}

/// Run every check on an already-computed split.
pub fn classify_split(split: &JacobianSplit, tol: f64) -> Result<TransversalityReport> {
    let cov = variational::banach_constant(&split.j);
    let tc = if split.n() == split.m() {
        transversality_constant(split, tol)?
    } else {
        None
    };
    let type1 = transverse_factor(split, tol);
    let type2 = type2_check(split, tol);
    let rank_ok = variational::numerical_rank(&split.b) == split.n();

    if cov > 0.0 && !(type1.is_some() == type2.holds && type2.holds == rank_ok) {
        return Err(Error::InternalConsistency(format!(
            "with cov = {cov:e} the factor ({}), projection ({}) and rank ({}) conditions disagree; \
             check the tolerance ({tol:e})",
            type1.is_some(),
            type2.holds,
            rank_ok
        )));
    }
    Ok(TransversalityReport {
        x: split.x.iter().copied().collect(),
        u: split.u.iter().copied().collect(),
        cov,
        tc,
        type1,
        type2,
        lemma_qtli_lhs_rhs_gap: type2.lemma_gap,
        equivalent_rank_condition: rank_ok,
    })
}

pub fn classify(sys: &SystemDef, x: &[f64], u: &[f64], tol: f64) -> Result<TransversalityReport> {
    let split = JacobianSplit::of_system(sys, x, u)?;
    classify_split(&split, tol)
}
