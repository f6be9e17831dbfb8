//! Nonlinear feedback as a fixed point of
//! `(Tu)(x) = ∫₀¹ U(s·x, x) ds`, `U(y, x) = −f_u(y, u(y))⁺·(I + f_x(y, u(y)))·x`,
//! solved by damped Picard iteration on a grid.
//!
//! The `s`-integral uses tanh-sinh quadrature near `s = 0`, where the
//! integrand typically has an integrable singularity.

use std::f64::consts::FRAC_PI_2;
use std::thread;

use nalgebra::DVector;

use super::grid::{FixpointStats, GridControl, OriginProfile};
use super::{FeedbackLaw, Provenance};
use crate::error::{Error, Result};
use crate::transversality;
use crate::variational::{self, JacobianSplit};
use crate::vf::SystemDef;

#[derive(Debug, Clone, PartialEq)]
pub struct FixpointConfig {
    pub radius: f64,
    /// Cells per axis.
    pub grid_n: usize,
    pub damping: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Grid box; defaults to the cube inscribed in the ball of `radius`.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Constant initial control; defaults to zero.
    pub u0: Option<Vec<f64>>,
}

impl Default for FixpointConfig {
    fn default() -> Self {
        FixpointConfig {
            radius: 0.5,
            grid_n: 64,
            damping: 0.5,
            max_iter: 200,
            tol: 1e-8,
            lower: None,
            upper: None,
            u0: None,
        }
    }
}

/// Tanh-sinh nodes and weights on `[a, b]`, skipping nodes that round onto
/// an endpoint.
fn tanh_sinh(a: f64, b: f64) -> Vec<(f64, f64)> {
    const H: f64 = 1.0 / 32.0;
    const TAU_MAX: f64 = 4.5;
    let half = 0.5 * (b - a);
    let steps = (TAU_MAX / H) as i32;
    let mut out = Vec::with_capacity(2 * steps as usize + 1);
    for k in -steps..=steps {
        let tau = k as f64 * H;
        let v = FRAC_PI_2 * tau.sinh();
        let w = H * half * FRAC_PI_2 * tau.cosh() / v.cosh().powi(2);
        // Distance to the nearer endpoint, computed without cancellation.
        let d = (b - a) / ((2.0 * v.abs()).exp() + 1.0);
        let s = match k.signum() {
            -1 => a + d,
            1 => b - d,
            _ => a + half,
        };
        if s > a && s < b && w > 0.0 {
            out.push((s, w));
        }
    }
    out
}

fn integrand(
    sys: &SystemDef,
    u: &dyn Fn(&[f64]) -> Result<DVector<f64>>,
    x: &DVector<f64>,
    s: f64,
) -> Result<DVector<f64>> {
    let y: Vec<f64> = x.iter().map(|v| s * v).collect();
    let uy = u(&y)?;
    let split = JacobianSplit::of_system(sys, &y, uy.as_slice())?;
    let bp = variational::right_pseudoinverse(&split.b)
        .map_err(|_| Error::RankDeficient(format!("∂f/∂u loses row rank at y = {y:?}, u = {:?}", uy.as_slice())))?;
    Ok(-(bp * (x + &split.a * x)))
}

/// `(Tu)(x)` for a control given as a closure, by tanh-sinh over `[0, 1]`.
/// Suited to smooth closed forms with endpoint singularities.
pub fn apply_operator(
    sys: &SystemDef,
    u: &dyn Fn(&[f64]) -> Result<DVector<f64>>,
    x: &[f64],
) -> Result<DVector<f64>> {
    check_point(sys, x)?;
    let mut acc = DVector::zeros(sys.m());
    if x.iter().all(|&v| v == 0.0) {
        return Ok(acc);
    }
    let xv = DVector::from_column_slice(x);
    for (s, w) in tanh_sinh(0.0, 1.0) {
        acc += integrand(sys, u, &xv, s)? * w;
    }
    Ok(acc)
}

fn check_point(sys: &SystemDef, x: &[f64]) -> Result<()> {
    if x.len() != sys.n() {
        return Err(Error::dim(format!("operator expects dim(x) = {}, got {}", sys.n(), x.len())));
    }
    Ok(())
}

/// Five-point Gauss–Legendre rule on `[-1, 1]`.
const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

/// Values of `s ∈ (0, 1)` where the ray `s·x` crosses a grid line.
fn ray_breakpoints(grid: &GridControl, x: &[f64]) -> Vec<f64> {
    let mut cuts: Vec<f64> = grid
        .axes
        .iter()
        .zip(x)
        .filter(|(_, &v)| v != 0.0)
        .flat_map(|(ax, &v)| ax.iter().map(move |&a| a / v))
        .filter(|&s| s > 0.0 && s < 1.0)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-13);
    cuts.retain(|&s| s < 1.0 - 1e-13);
    cuts
}

/// `(Tu)(x)` for a grid control. The ray is split at cell crossings; the
/// segment through the origin cells gets tanh-sinh, the rest Gauss–Legendre.
pub fn apply_operator_on_grid(sys: &SystemDef, grid: &GridControl, x: &[f64]) -> Result<DVector<f64>> {
    apply_on_grid(sys, grid, x, &tanh_sinh(0.0, 1.0))
}

fn apply_on_grid(sys: &SystemDef, grid: &GridControl, x: &[f64], ts: &[(f64, f64)]) -> Result<DVector<f64>> {
    check_point(sys, x)?;
    let mut acc = DVector::zeros(sys.m());
    if x.iter().all(|&v| v == 0.0) {
        return Ok(acc);
    }
    let u = |y: &[f64]| grid.eval(y);
    let xv = DVector::from_column_slice(x);
    let mut cuts = ray_breakpoints(grid, x);
    cuts.push(1.0);
    let first = cuts[0];
    for &(s, w) in ts {
        acc += integrand(sys, &u, &xv, first * s)? * (first * w);
    }
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for (t, w) in GAUSS5 {
            acc += integrand(sys, &u, &xv, mid + half * t)? * (half * w);
        }
    }
    Ok(acc)
}

fn default_box(n: usize, radius: f64) -> (Vec<f64>, Vec<f64>) {
    let half = radius / (n as f64).sqrt();
    (vec![-half; n], vec![half; n])
}

fn preflight(sys: &SystemDef, grid: &GridControl, u0: &[f64], tol: f64) -> Result<()> {
    let origin = grid.origin_index();
    for k in (0..grid.len()).filter(|&k| k != origin) {
        let node = grid.node(k);
        let split = JacobianSplit::of_system(sys, &node, u0)?;
        let cov = variational::banach_constant(&split.j);
        if cov <= 0.0 {
            return Err(Error::pre(format!("preflight: cov = 0 at node x = {node:?}, u = {u0:?}")));
        }
        let t2 = transversality::type2_check(&split, tol);
        if !t2.holds {
            return Err(Error::pre(format!(
                "preflight: projection condition fails at node x = {node:?}, u = {u0:?} (residual {:e})",
                t2.residual
            )));
        }
    }
    Ok(())
}

/// `Tu` at every node, split over the available threads.
fn sweep(sys: &SystemDef, grid: &GridControl, ts: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
    let origin = grid.origin_index();
    let total = grid.len();
    let workers = thread::available_parallelism().map_or(1, |p| p.get()).min(total.div_ceil(16)).max(1);
    let chunk = total.div_ceil(workers);
    let run = |range: std::ops::Range<usize>| -> Result<Vec<Vec<f64>>> {
        range
            .map(|k| {
                if k == origin {
                    Ok(vec![0.0; grid.m])
                } else {
                    Ok(apply_on_grid(sys, grid, &grid.node(k), ts)?.as_slice().to_vec())
                }
            })
            .collect()
    };
    if workers == 1 {
        return run(0..total);
    }
    let parts: Vec<Result<Vec<Vec<f64>>>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let range = (w * chunk).min(total)..((w + 1) * chunk).min(total);
                let run = &run;
                scope.spawn(move || run(range))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(total);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Damped Picard iteration for the fixed-point control. A run that hits
/// `max_iter` still returns its best iterate, flagged as not converged.
pub fn fixpoint_control(sys: &SystemDef, cfg: &FixpointConfig) -> Result<GridControl> {
    let (n, m) = (sys.n(), sys.m());
    if m == 0 {
        return Err(Error::dim("system has no controls"));
    }
    if !(cfg.radius > 0.0) || cfg.grid_n == 0 || !(cfg.damping > 0.0 && cfg.damping <= 1.0) || !(cfg.tol > 0.0) {
        return Err(Error::pre("need radius > 0, grid_n ≥ 1, damping in (0, 1] and tol > 0"));
    }
    let (dlo, dhi) = default_box(n, cfg.radius);
    let lower = cfg.lower.clone().unwrap_or(dlo);
    let upper = cfg.upper.clone().unwrap_or(dhi);
    if lower.len() != n || upper.len() != n {
        return Err(Error::dim(format!("grid box must have {n} coordinates")));
    }
    let u0 = cfg.u0.clone().unwrap_or_else(|| vec![0.0; m]);
    if u0.len() != m {
        return Err(Error::dim(format!("initial control must have {m} components")));
    }
    let mut grid = GridControl::on_box(cfg.radius, &lower, &upper, cfg.grid_n, &u0)?;
    grid.origin_profile = OriginProfile::Power;
    preflight(sys, &grid, &u0, cfg.tol)?;

    let nodes = tanh_sinh(0.0, 1.0);
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let t = sweep(sys, &grid, &nodes)?;
        let residual = sup_diff(&grid.values, &t);
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, grid.values.clone()));
        }
        for (cur, new) in grid.values.iter_mut().zip(&t) {
            for (c, v) in cur.iter_mut().zip(new) {
                *c = (1.0 - cfg.damping) * *c + cfg.damping * v;
            }
        }
        if cfg.damping * residual < cfg.tol {
            converged = true;
            break;
        }
    }
    let residual = if converged {
        let t = sweep(sys, &grid, &nodes)?;
        sup_diff(&grid.values, &t)
    } else {
        let (r, values) = best.expect("at least one iteration");
        grid.values = values;
        r
    };
    grid.stats = Some(FixpointStats { converged, iterations, residual });
    Ok(grid)
}

pub fn fixpoint_law(sys: &SystemDef, cfg: &FixpointConfig) -> Result<FeedbackLaw> {
    Ok(FeedbackLaw::grid(fixpoint_control(sys, cfg)?, Provenance::STII))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vf::parse_system;

    #[test]
    fn quadrature_handles_endpoint_singularities() {
        let nodes = tanh_sinh(0.0, 1.0);
        let q = |f: &dyn Fn(f64) -> f64| nodes.iter().map(|&(s, w)| w * f(s)).sum::<f64>();
        assert!((q(&|s| s * s) - 1.0 / 3.0).abs() < 1e-14);
        assert!((q(&|s| s.powf(-0.5)) - 2.0).abs() < 1e-12);
        assert!((q(&|s| s.powf(-2.0 / 3.0)) - 3.0).abs() < 1e-10);
    }

    #[test]
    fn closed_forms_are_fixed_points() {
        let xsqr = parse_system("n=1 m=1; f1 = x1^2 - u1^2").unwrap();
        let u = |y: &[f64]| Ok(DVector::from_element(1, (y[0] * y[0] + y[0]).sqrt()));
        for x in [0.01, 0.1, 0.5] {
            let t = apply_operator(&xsqr, &u, &[x]).unwrap()[0];
            assert!((t - (x * x + x).sqrt()).abs() < 1e-9, "{x}");
        }
        let sontag = parse_system("n=1 m=1; f1 = x1 + u1^3").unwrap();
        let u = |y: &[f64]| Ok(DVector::from_element(1, (-2.0 * y[0]).cbrt()));
        for x in [0.01, 0.3] {
            let t = apply_operator(&sontag, &u, &[x]).unwrap()[0];
            assert!((t - (-2.0 * x).cbrt()).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn linear_system_converges_to_minus_two_x() {
        let lin = parse_system("n=1 m=1; f1 = x1 + u1").unwrap();
        let cfg = FixpointConfig { radius: 0.5, max_iter: 50, ..FixpointConfig::default() };
        let g = fixpoint_control(&lin, &cfg).unwrap();
        let stats = g.stats.clone().unwrap();
        assert!(stats.converged && stats.iterations <= 50);
        for k in 0..g.len() {
            let x = g.node(k)[0];
            assert!((g.values[k][0] + 2.0 * x).abs() <= 1e-8);
        }
    }

    #[test]
    fn iterates_track_the_closed_forms() {
        let cases = [
            ("n=1 m=1; f1 = x1^2 - u1^2", 0.5, 0.1, (|x: f64| (x * x + x).sqrt()) as fn(f64) -> f64),
            ("n=1 m=1; f1 = x1 + u1^3", 0.3, -0.5, |x: f64| (-2.0 * x).cbrt()),
        ];
        for (text, hi, u0, exact) in cases {
            let sys = parse_system(text).unwrap();
            let cfg = FixpointConfig {
                lower: Some(vec![0.0]),
                upper: Some(vec![hi]),
                u0: Some(vec![u0]),
                ..FixpointConfig::default()
            };
            let g = fixpoint_control(&sys, &cfg).unwrap();
            let stats = g.stats.clone().unwrap();
            assert!(stats.converged && stats.residual <= 1e-4, "{text}: {stats:?}");
            for k in 1..g.len() {
                let x = g.node(k)[0];
                let err = (g.values[k][0] - exact(x)).abs();
                assert!(err <= 1e-2 * exact(x).abs(), "{text} at {x}: {err:e}");
            }
        }
    }

    #[test]
    fn grid_operator_is_exact_on_linear_data() {
        let lin = parse_system("n=2 m=2; f1 = x1 + u1; f2 = x2 - x1 + u2").unwrap();
        let mut g = GridControl::on_box(1.0, &[-0.5, -0.5], &[0.5, 0.5], 6, &[0.0, 0.0]).unwrap();
        g.origin_profile = OriginProfile::Power;
        let t = apply_operator_on_grid(&lin, &g, &[0.3, -0.2]).unwrap();
        assert!((t[0] + 0.6).abs() < 1e-13 && (t[1] - (0.4 + 0.3)).abs() < 1e-13, "{t}");
    }

    #[test]
    fn preflight_names_the_node() {
        let xsqr = parse_system("n=1 m=1; f1 = x1^2 - u1^2").unwrap();
        let cfg = FixpointConfig { lower: Some(vec![0.0]), upper: Some(vec![0.5]), grid_n: 4, ..FixpointConfig::default() };
        match fixpoint_control(&xsqr, &cfg) {
            Err(Error::Precondition(msg)) => assert!(msg.contains("x = [0.125]"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
