//! Random systems, splits and matrices shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use openstab_core::vf::expr::{Expr, Func};
use openstab_core::variational::{self, JacobianSplit};
use openstab_core::SystemDef;
use rand::rngs::StdRng;
use rand::Rng;

pub fn uniform_matrix(rng: &mut StdRng, r: usize, c: usize, half: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-half..=half))
}

/// Random expression over `x1..xn`, `u1..um` that is smooth wherever it is
/// evaluated: denominators and radicands are bounded away from zero.
pub fn random_expr(rng: &mut StdRng, n: usize, m: usize, depth: usize) -> Expr {
    if depth == 0 || rng.random_bool(0.25) {
        let pick = rng.random_range(0..(n + m + 1));
        return if pick < n {
            Expr::X(pick)
        } else if pick < n + m {
            Expr::U(pick - n)
        } else {
            Expr::Const((rng.random_range(-2.0f64..2.0) * 100.0).round() / 100.0)
        };
    }
    let sub = |rng: &mut StdRng| Box::new(random_expr(rng, n, m, depth - 1));
    let positive = |e: Box<Expr>| {
        Box::new(Expr::Add(
            Box::new(Expr::Const(1.5)),
            Box::new(Expr::Pow(e, 2)),
        ))
    };
    match rng.random_range(0..12) {
        0 => Expr::Add(sub(rng), sub(rng)),
        1 => Expr::Sub(sub(rng), sub(rng)),
        2 | 3 => Expr::Mul(sub(rng), sub(rng)),
        4 => Expr::Div(sub(rng), positive(sub(rng))),
        5 => Expr::Pow(sub(rng), rng.random_range(2..=3)),
        6 => Expr::Pow(positive(sub(rng)), -1),
        7 => Expr::Call(if rng.random_bool(0.5) { Func::Sin } else { Func::Cos }, sub(rng)),
        8 => Expr::Call(Func::Exp, Box::new(Expr::Call(Func::Sin, sub(rng)))),
        9 => Expr::Call(Func::Sqrt, positive(sub(rng))),
        10 => Expr::Call(Func::Cbrt, positive(sub(rng))),
        _ => Expr::Neg(sub(rng)),
    }
}

pub fn random_system(rng: &mut StdRng) -> SystemDef {
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=2);
    let exprs = (0..n).map(|_| random_expr(rng, n, m, 4)).collect();
    SystemDef::new("random", n, m, exprs).expect("generator respects dimensions")
}

/// `n×m` block of full row rank with σ_min ≥ 0.01, entries in `[-2, 2]`.
pub fn full_rank_b(rng: &mut StdRng, n: usize, m: usize) -> DMatrix<f64> {
    loop {
        let b = uniform_matrix(rng, n, m, 2.0);
        if variational::numerical_rank(&b) == n && variational::banach_constant(&b) >= 1e-2 {
            return b;
        }
    }
}

/// `n×m` block whose rank deficiency is exact in floating point: some rows
/// are zero or exact multiples (±1, ±2) of other rows.
pub fn deficient_b(rng: &mut StdRng, n: usize, m: usize) -> DMatrix<f64> {
    let keep = rng.random_range(0..n);
    let mut b = DMatrix::zeros(n, m);
    let base = uniform_matrix(rng, keep.max(1), m, 2.0);
    for i in 0..n {
        if i < keep {
            b.set_row(i, &base.row(i));
        } else if keep > 0 && rng.random_bool(0.5) {
            let src = rng.random_range(0..keep);
            let factor = [1.0, -1.0, 2.0, -2.0][rng.random_range(0..4)];
            let row = base.row(src) * factor;
            b.set_row(i, &row);
        }
    }
    // Shuffle rows so the deficient ones are not always last.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        b.swap_rows(i, j);
    }
    b
}

pub fn split(a: DMatrix<f64>, b: DMatrix<f64>) -> JacobianSplit {
    JacobianSplit::from_blocks(a, b).expect("consistent blocks")
}
