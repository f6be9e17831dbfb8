//! Linear-algebra layer: Jacobian splits, Banach constants, covering and
//! regularity bounds, right pseudoinverses and range projections.

use nalgebra::linalg::Schur;
use nalgebra::{Complex, DMatrix, DVector, SVD};
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_ext;
use crate::vf::SystemDef;

/// Partial Jacobians `A = ∂f/∂x`, `B = ∂f/∂u` and the full `J = [A | B]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianSplit {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
}

impl JacobianSplit {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Split assembled from explicit blocks, taken at the origin.
    pub fn from_blocks(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let (n, m) = (a.nrows(), b.ncols());
        if a.ncols() != n || b.nrows() != n {
            return Err(Error::dim(format!(
                "A is {}×{}, B is {}×{}; need n×n and n×m",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        let mut j = DMatrix::zeros(n, n + m);
        j.view_mut((0, 0), (n, n)).copy_from(&a);
        j.view_mut((0, n), (n, m)).copy_from(&b);
        Ok(JacobianSplit {
            a,
            b,
            j,
            x: DVector::zeros(n),
            u: DVector::zeros(m),
        })
    }

    /// Split of `sys` at `(x, u)`.
    pub fn of_system(sys: &SystemDef, x: &[f64], u: &[f64]) -> Result<Self> {
        let jac = sys.jacobian(x, u)?.jacobian;
        let mut split = split_jacobian(&jac, sys.n(), sys.m())?;
        split.x = DVector::from_column_slice(x);
        split.u = DVector::from_column_slice(u);
        Ok(split)
    }
}

pub fn split_jacobian(j: &DMatrix<f64>, n: usize, m: usize) -> Result<JacobianSplit> {
    if j.nrows() != n || j.ncols() != n + m {
        return Err(Error::dim(format!(
            "Jacobian is {}×{}, expected {n}×{}",
            j.nrows(),
            j.ncols(),
            n + m
        )));
    }
    Ok(JacobianSplit {
        a: j.columns(0, n).into_owned(),
        b: j.columns(n, m).into_owned(),
        j: j.clone(),
        x: DVector::zeros(n),
        u: DVector::zeros(m),
    })
}

/// Relative machine-epsilon cut-off: `σ` counts as nonzero iff
/// `σ > max(rows, cols) · σ_max · 2⁻⁵²`.
pub fn rank_threshold(t: &DMatrix<f64>, sigma_max: f64) -> f64 {
    t.nrows().max(t.ncols()) as f64 * sigma_max * f64::EPSILON
}

pub fn singular_values(t: &DMatrix<f64>) -> DVector<f64> {
    if t.is_empty() {
        return DVector::zeros(0);
    }
    SVD::new(t.clone(), false, false).singular_values
}

pub fn numerical_rank(t: &DMatrix<f64>) -> usize {
    let sv = singular_values(t);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let thr = rank_threshold(t, smax);
    sv.iter().filter(|&&s| s > thr).count()
}

/// Spectral norm `‖T‖₂`.
pub fn operator_norm(t: &DMatrix<f64>) -> f64 {
    singular_values(t).iter().copied().fold(0.0, f64::max)
}

/// `Γ(T) = inf{‖T*y‖ : ‖y‖ = 1}` for `T: ℝˡ → ℝⁿ`.
///
/// Equals the `n`-th largest singular value when `rank T = n` and exactly
/// zero otherwise.
pub fn banach_constant(t: &DMatrix<f64>) -> f64 {
    let n = t.nrows();
    if n == 0 {
        return 0.0;
    }
    if t.ncols() < n {
        return 0.0;
    }
    let sv = singular_values(t);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let thr = rank_threshold(t, smax);
    if sv.iter().filter(|&&s| s > thr).count() < n {
        return 0.0;
    }
    sv.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Pointwise linear-openness data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpennessReport {
    #[serde(with = "serde_ext::ext_f64")]
    pub gamma: f64,
    #[serde(with = "serde_ext::ext_f64")]
    pub cov: f64,
    #[serde(with = "serde_ext::ext_f64")]
    pub reg: f64,
    pub rank: usize,
    #[serde(with = "serde_ext::ext_f64")]
    pub eta: f64,
    /// Eigenvalues of `A` with nonnegative real part, as `[re, im]`.
    pub lambda_plus: Vec<[f64; 2]>,
    pub gjkm_ok: bool,
}

/// Eigenvalues closer than this (relative to `max(1, ‖A‖_F)`) to the real axis
/// or the imaginary axis are snapped onto it.
const SPECTRAL_SNAP: f64 = 1e-12;

/// Relative slack used when testing the strict inequality `cov > η`.
const SPECTRAL_GAP_TOL: f64 = 1e-12;

/// Iteration budget for one Schur decomposition.
const SCHUR_MAX_ITER: usize = 10_000;

/// Shifts (in units of `max(1, ‖A‖_F)`) tried when the QR iteration stalls,
/// as it does on nilpotent blocks where every Francis shift is zero.
const SCHUR_SHIFTS: [f64; 4] = [0.0, 0.37, -0.61, 1.13];

fn schur_eigenvalues(a: DMatrix<f64>, scale: f64) -> Result<Vec<Complex<f64>>> {
    let k = a.nrows();
    for shift in SCHUR_SHIFTS.map(|s| s * scale) {
        let shifted = &a + DMatrix::identity(k, k) * shift;
        if let Some(schur) = Schur::try_new(shifted, f64::EPSILON, SCHUR_MAX_ITER) {
            return Ok(schur.complex_eigenvalues().iter().map(|z| z - shift).collect());
        }
    }
    Err(Error::Degenerate(format!("Schur iteration did not converge on a {k}×{k} block")))
}

/// Eigenvalues of a square matrix. The matrix is first split into the
/// strongly connected blocks of its sparsity graph; 1×1 blocks contribute
/// their diagonal entry exactly and only irreducible blocks go to Schur.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let n = a.nrows();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * n);
    (0..n).for_each(|_| {
        graph.add_node(());
    });
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i && a[(i, j)] != 0.0) {
            graph.add_edge(NodeIndex::new(i), NodeIndex::new(j), ());
        }
    }
    let scale = a.norm().max(1.0);
    let snap = |v: f64| if v.abs() <= SPECTRAL_SNAP * scale { 0.0 } else { v };
    let mut out = Vec::with_capacity(n);
    for block in tarjan_scc(&graph) {
        let mut block: Vec<usize> = block.into_iter().map(NodeIndex::index).collect();
        if let [i] = block[..] {
            out.push(Complex::new(a[(i, i)], 0.0));
            continue;
        }
        block.sort_unstable();
        let sub = a.select_rows(&block).select_columns(&block);
        out.extend(schur_eigenvalues(sub, scale)?);
    }
    Ok(out.into_iter().map(|z| Complex::new(snap(z.re), snap(z.im))).collect())
}

pub fn cov_reg(split: &JacobianSplit) -> Result<OpennessReport> {
    let gamma = banach_constant(&split.j);
    let cov = gamma;
    let reg = if cov > 0.0 { 1.0 / cov } else { f64::INFINITY };
    let rank = numerical_rank(&split.j);

    let lambda_plus: Vec<Complex<f64>> = eigenvalues(&split.a)?.into_iter().filter(|z| z.re >= 0.0).collect();
    let eta = lambda_plus.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let all_real = lambda_plus.iter().all(|z| z.im == 0.0);
    let gap_ok = if eta == f64::NEG_INFINITY {
        true
    } else {
        cov > eta + SPECTRAL_GAP_TOL * eta.abs().max(1.0)
    };
    Ok(OpennessReport {
        gamma,
        cov,
        reg,
        rank,
        eta,
        lambda_plus: lambda_plus.iter().map(|z| [z.re, z.im]).collect(),
        gjkm_ok: all_real && cov > 0.0 && gap_ok,
    })
}

/// `T⁺ = T*(TT*)⁻¹` for `T` of full row rank.
pub fn right_pseudoinverse(t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    let rank = numerical_rank(t);
    if rank != n {
        return Err(Error::RankDeficient(format!(
            "right pseudoinverse needs row rank {n}, got {rank}"
        )));
    }
    let gram = t * t.transpose();
    let solved = match gram.clone().cholesky() {
        Some(ch) => ch.solve(t),
        None => gram
            .lu()
            .solve(t)
            .ok_or_else(|| Error::RankDeficient("TT* is singular".into()))?,
    };
    Ok(solved.transpose())
}

/// Moore–Penrose pseudoinverse of any matrix via SVD.
pub fn svd_pseudoinverse(t: &DMatrix<f64>) -> DMatrix<f64> {
    if t.is_empty() {
        return DMatrix::zeros(t.ncols(), t.nrows());
    }
    let svd = SVD::new(t.clone(), true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let thr = rank_threshold(t, smax);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(t.ncols(), t.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > thr {
            out += v_t.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// Orthogonal projection onto `range(B) = ker(B*)⊥`.
pub fn range_projection(b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.nrows();
    if b.ncols() == 0 {
        return DMatrix::zeros(n, n);
    }
    if numerical_rank(b) == n {
        if let Ok(pinv) = right_pseudoinverse(b) {
            return b * pinv;
        }
    }
    let svd = SVD::new(b.clone(), true, false);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let thr = rank_threshold(b, smax);
    let u = svd.u.as_ref().expect("u requested");
    let mut p = DMatrix::zeros(n, n);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > thr {
            let col = u.column(k);
            p += col * col.transpose();
        }
    }
    p
}

/// Covering estimates for `f ∘ h` at a stationary point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositionBounds {
    /// `Γ(J_f)·Γ(J_h)`.
    pub lower: f64,
    /// `Γ(J_f·J_h)`.
    pub exact: f64,
    /// `‖J_f‖·Γ(J_h)`.
    pub upper: f64,
    /// Whether `exact ≤ upper` held for this pair.
    pub upper_holds: bool,
    /// `‖J_h‖·Γ(J_f)`, an upper estimate that always holds.
    pub norm_upper: f64,
}

pub fn composition_cov_bounds(f_split: &JacobianSplit, h_jac: &DMatrix<f64>) -> Result<CompositionBounds> {
    let l = f_split.j.ncols();
    if h_jac.nrows() != l || h_jac.ncols() != l {
        return Err(Error::dim(format!(
            "J_h is {}×{}, expected {l}×{l}",
            h_jac.nrows(),
            h_jac.ncols()
        )));
    }
    let gamma_f = banach_constant(&f_split.j);
    let gamma_h = banach_constant(h_jac);
    let exact = banach_constant(&(&f_split.j * h_jac));
    let lower = gamma_f * gamma_h;
    let upper = operator_norm(&f_split.j) * gamma_h;
    let norm_upper = operator_norm(h_jac) * gamma_f;

    let slack = |v: f64| 1e-10 * v.abs().max(1.0);
    if lower > exact + slack(exact) || exact > norm_upper + slack(norm_upper) {
        return Err(Error::InternalConsistency(format!(
            "covering chain broken: lower {lower}, exact {exact}, norm bound {norm_upper}"
        )));
    }
    Ok(CompositionBounds {
        lower,
        exact,
        upper,
        upper_holds: exact <= upper + slack(upper),
        norm_upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn split_examples() {
        let s = split_jacobian(&m(1, 2, &[1.0, 0.0]), 1, 1).unwrap();
        assert_eq!((s.a.clone(), s.b.clone()), (m(1, 1, &[1.0]), m(1, 1, &[0.0])));

        let mut j = DMatrix::zeros(3, 4);
        j[(2, 3)] = 1.0;
        let s = split_jacobian(&j, 3, 1).unwrap();
        assert_eq!(s.a, DMatrix::zeros(3, 3));
        assert_eq!(s.b, m(3, 1, &[0.0, 0.0, 1.0]));

        let mut j = DMatrix::zeros(2, 4);
        j.view_mut((0, 0), (2, 2)).fill_with_identity();
        let s = split_jacobian(&j, 2, 2).unwrap();
        assert_eq!(s.a, DMatrix::identity(2, 2));
        assert_eq!(s.b, DMatrix::zeros(2, 2));

        assert!(split_jacobian(&j, 2, 1).is_err());
    }

    #[test]
    fn banach_constant_examples() {
        assert_eq!(banach_constant(&DMatrix::identity(2, 2)), 1.0);
        assert_eq!(banach_constant(&m(1, 2, &[1.0, 0.0])), 1.0);
        assert_abs_diff_eq!(banach_constant(&m(2, 3, &[3.0, 0.0, 0.0, 0.0, 2.0, 0.0])), 2.0, epsilon = 1e-14);
        assert_eq!(banach_constant(&m(2, 2, &[1.0, 2.0, 2.0, 4.0])), 0.0);
        assert_eq!(banach_constant(&m(2, 1, &[1.0, 1.0])), 0.0);
        assert_eq!(banach_constant(&DMatrix::zeros(2, 3)), 0.0);
    }

    #[test]
    fn cov_reg_examples() {
        let sontag = split_jacobian(&m(1, 2, &[1.0, 0.0]), 1, 1).unwrap();
        let r = cov_reg(&sontag).unwrap();
        assert_eq!((r.cov, r.reg, r.eta, r.gjkm_ok), (1.0, 1.0, 1.0, false));

        let mut j = DMatrix::zeros(3, 4);
        j[(2, 3)] = 1.0;
        let r = cov_reg(&split_jacobian(&j, 3, 1).unwrap()).unwrap();
        assert_eq!(r.cov, 0.0);
        assert_eq!(r.reg, f64::INFINITY);
        assert_eq!(r.rank, 1);

        let modified = split_jacobian(&m(1, 2, &[-1.0, 0.0]), 1, 1).unwrap();
        let r = cov_reg(&modified).unwrap();
        assert_eq!((r.cov, r.eta, r.gjkm_ok), (1.0, f64::NEG_INFINITY, true));
        assert!(r.lambda_plus.is_empty());
    }

    #[test]
    fn complex_unstable_pair_fails_spectral_condition() {
        // A = [[0, 1], [-1, 0]] has eigenvalues ±i; B = I keeps cov large.
        let s = JacobianSplit::from_blocks(m(2, 2, &[0.0, 1.0, -1.0, 0.0]), DMatrix::identity(2, 2) * 10.0).unwrap();
        let r = cov_reg(&s).unwrap();
        assert_eq!(r.lambda_plus.len(), 2);
        assert_eq!(r.eta, 0.0);
        assert!(!r.gjkm_ok);
    }

    #[test]
    fn pseudoinverse_examples() {
        assert_eq!(right_pseudoinverse(&m(1, 2, &[1.0, 0.0])).unwrap(), m(2, 1, &[1.0, 0.0]));
        assert_eq!(right_pseudoinverse(&DMatrix::identity(3, 3)).unwrap(), DMatrix::identity(3, 3));
        assert!(matches!(
            right_pseudoinverse(&m(2, 2, &[1.0, 2.0, 2.0, 4.0])),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let p = range_projection(&m(3, 1, &[0.0, 0.0, 1.0]));
        assert_abs_diff_eq!(p, DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.0, 1.0])), epsilon = 1e-15);
        let p = range_projection(&m(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0]));
        assert_abs_diff_eq!(p, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_eq!(range_projection(&DMatrix::zeros(2, 2)), DMatrix::zeros(2, 2));
    }

    #[test]
    fn composition_with_identity() {
        let s = split_jacobian(&m(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 1.0]), 2, 1).unwrap();
        let b = composition_cov_bounds(&s, &DMatrix::identity(3, 3)).unwrap();
        assert_abs_diff_eq!(b.lower, b.exact, epsilon = 1e-14);
        assert_abs_diff_eq!(b.exact, banach_constant(&s.j), epsilon = 1e-14);
        assert!(b.upper_holds && b.exact <= b.upper);
        assert!(composition_cov_bounds(&s, &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn stated_upper_estimate_can_fail() {
        // J_f = [1 | 0], J_h = diag(1, 1e-3): Γ(J_f J_h) = 1 but ‖J_f‖·Γ(J_h) = 1e-3.
        let s = split_jacobian(&m(1, 2, &[1.0, 0.0]), 1, 1).unwrap();
        let h = m(2, 2, &[1.0, 0.0, 0.0, 1e-3]);
        let b = composition_cov_bounds(&s, &h).unwrap();
        assert_eq!(b.exact, 1.0);
        assert!(!b.upper_holds);
        assert!(b.lower <= b.exact && b.exact <= b.norm_upper);
    }

    fn sorted(mut v: Vec<Complex<f64>>) -> Vec<(f64, f64)> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v.into_iter().map(|z| (z.re, z.im)).collect()
    }

    #[test]
    fn nilpotent_chains_have_zero_spectrum() {
        let chain = m(3, 3, &[0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(sorted(eigenvalues(&chain).unwrap()), vec![(0.0, 0.0); 3]);
        let upper = m(4, 4, &[0.0, 2.0, 0.0, 5.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(sorted(eigenvalues(&upper).unwrap()), vec![(0.0, 0.0); 4]);
    }

    #[test]
    fn block_triangular_spectrum() {
        // A rotation block coupled one way into a scalar block.
        let a = m(3, 3, &[0.0, -2.0, 0.0, 2.0, 0.0, 0.0, 1.0, 4.0, -3.0]);
        let ev = sorted(eigenvalues(&a).unwrap());
        assert_eq!(ev[0], (-3.0, 0.0));
        assert_abs_diff_eq!(ev[1].0, 0.0);
        assert_abs_diff_eq!(ev[1].1, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[2].1, 2.0, epsilon = 1e-12);
    }
}
