//! Tabulated controls on a rectilinear grid with multilinear interpolation.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on the node count so a careless `grid_n` in high dimension fails fast.
pub const MAX_NODES: usize = 4_000_000;

/// Exponent used by [`OriginProfile::Power`] when the data shows no growth
/// away from the origin.
const MIN_EXPONENT: f64 = 0.1;

/// How the control is extended inside the cells that touch the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginProfile {
    #[default]
    Multilinear,
    /// `u(y) = u(y')·ρ^p` where `y' = y/ρ` lies on the boundary of the
    /// origin cells and `p` is read off `u(y')` and `u(2y')` per component.
    /// Keeps root-like controls (`√x`, `∛x`) from degenerating to linear ones.
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixpointStats {
    pub converged: bool,
    pub iterations: usize,
    /// `‖u − Tu‖∞` over the grid nodes for the returned control.
    pub residual: f64,
}

/// Control values at the nodes of a rectilinear grid. Node order is
/// row-major with the last state coordinate varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridControl {
    pub radius: f64,
    pub axes: Vec<Vec<f64>>,
    pub m: usize,
    /// One `m`-vector per node.
    pub values: Vec<Vec<f64>>,
    #[serde(default)]
    pub origin_profile: OriginProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<FixpointStats>,
}

/// Axis nodes on `[lo, hi]` with `cells` intervals, always containing 0.
pub fn axis_nodes(lo: f64, hi: f64, cells: usize) -> Result<Vec<f64>> {
    if !(lo <= 0.0 && 0.0 <= hi && lo < hi) || cells == 0 {
        return Err(Error::pre(format!(
            "grid axis [{lo}, {hi}] with {cells} cell(s) must be nonempty and contain 0"
        )));
    }
    let lin = |a: f64, b: f64, k: usize| (0..=k).map(move |i| a + (b - a) * i as f64 / k as f64);
    if lo == 0.0 || hi == 0.0 {
        let mut v: Vec<f64> = lin(lo, hi, cells).collect();
        // Pin the origin exactly.
        if lo == 0.0 {
            v[0] = 0.0;
        } else {
            v[cells] = 0.0;
        }
        return Ok(v);
    }
    let left = ((cells as f64 * -lo / (hi - lo)).round() as usize).clamp(1, cells.max(2) - 1);
    let right = cells.max(2) - left;
    let mut v: Vec<f64> = lin(lo, 0.0, left).collect();
    v.pop();
    v.extend(lin(0.0, hi, right));
    let zero = left;
    v[zero] = 0.0;
    Ok(v)
}

impl GridControl {
    pub fn new(radius: f64, axes: Vec<Vec<f64>>, m: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        let g = GridControl {
            radius,
            axes,
            m,
            values,
            origin_profile: OriginProfile::Multilinear,
            stats: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// Build from per-axis boxes, filling every node but the origin with `init`.
    pub fn on_box(radius: f64, lower: &[f64], upper: &[f64], cells: usize, init: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::dim("grid box bounds must have equal, positive length"));
        }
        let axes = lower
            .iter()
            .zip(upper)
            .map(|(&lo, &hi)| axis_nodes(lo, hi, cells))
            .collect::<Result<Vec<_>>>()?;
        let count = node_count(&axes)?;
        let mut g = GridControl {
            radius,
            axes,
            m: init.len(),
            values: vec![init.to_vec(); count],
            origin_profile: OriginProfile::Multilinear,
            stats: None,
        };
        let origin = g.origin_index();
        g.values[origin].fill(0.0);
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::dim("grid needs at least one axis"));
        }
        for (k, ax) in self.axes.iter().enumerate() {
            if ax.len() < 2 || ax.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::pre(format!("grid axis {} must be strictly increasing with ≥ 2 nodes", k + 1)));
            }
            if !ax.contains(&0.0) {
                return Err(Error::pre(format!("grid axis {} must contain the origin", k + 1)));
            }
        }
        let count = node_count(&self.axes)?;
        if self.values.len() != count || self.values.iter().any(|v| v.len() != self.m) {
            return Err(Error::dim(format!(
                "grid has {count} nodes of control dimension {} but {} value rows",
                self.m,
                self.values.len()
            )));
        }
        if self.values[self.origin_index()].iter().any(|&v| v != 0.0) {
            return Err(Error::pre("grid control must vanish at the origin node"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a[0]).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a[a.len() - 1]).collect()
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.n()];
        for k in (0..self.n().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.axes[k + 1].len();
        }
        s
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let strides = self.strides();
        self.axes
            .iter()
            .zip(&strides)
            .map(|(ax, &s)| ax[(flat / s) % ax.len()])
            .collect()
    }

    pub fn origin_index(&self) -> usize {
        let strides = self.strides();
        self.axes
            .iter()
            .zip(&strides)
            .map(|(ax, &s)| s * ax.iter().position(|&v| v == 0.0).expect("validated"))
            .sum()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.n()
            && self.axes.iter().zip(x).all(|(ax, &v)| {
                let (lo, hi) = (ax[0], ax[ax.len() - 1]);
                let slack = 1e-12 * (hi - lo);
                v >= lo - slack && v <= hi + slack
            })
    }

    /// Width of the cell adjacent to the origin on the side of `v` along `axis`.
    fn origin_cell(&self, axis: usize, v: f64) -> Option<f64> {
        let ax = &self.axes[axis];
        let z = ax.iter().position(|&a| a == 0.0)?;
        if v > 0.0 {
            ax.get(z + 1).copied()
        } else {
            z.checked_sub(1).map(|i| -ax[i])
        }
    }

    /// `max_i |y_i| / h_i` with `h_i` the origin-adjacent cell width; values
    /// below 1 mean `y` lies in a cell touching the origin.
    pub fn origin_ratio(&self, y: &[f64]) -> f64 {
        y.iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| self.origin_cell(i, v).map_or(f64::INFINITY, |h| v.abs() / h))
            .fold(0.0, f64::max)
    }

    /// Interpolated control; errors outside the grid box.
    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.n() {
            return Err(Error::dim(format!("grid control expects dim(x) = {}, got {}", self.n(), x.len())));
        }
        if !self.contains(x) {
            return Err(Error::OutOfDomain(format!(
                "x = {x:?} lies outside the grid box {:?} .. {:?}",
                self.lower(),
                self.upper()
            )));
        }
        if self.origin_profile == OriginProfile::Power {
            let rho = self.origin_ratio(x);
            if rho > 0.0 && rho < 1.0 {
                return Ok(self.eval_power(x, rho));
            }
        }
        Ok(self.eval_multilinear(x))
    }

    fn eval_power(&self, x: &[f64], rho: f64) -> DVector<f64> {
        let edge: Vec<f64> = x.iter().map(|v| v / rho).collect();
        let outer: Vec<f64> = edge.iter().map(|v| 2.0 * v).collect();
        let a = self.eval_multilinear(&edge);
        let b = self.contains(&outer).then(|| self.eval_multilinear(&outer));
        DVector::from_iterator(
            self.m,
            (0..self.m).map(|j| {
                let p = match &b {
                    Some(b) if a[j] != 0.0 && b[j] / a[j] > 1.0 => (b[j] / a[j]).log2().clamp(MIN_EXPONENT, 3.0),
                    Some(_) => MIN_EXPONENT,
                    None => 1.0,
                };
                a[j] * rho.powf(p)
            }),
        )
    }

    fn eval_multilinear(&self, x: &[f64]) -> DVector<f64> {
        let strides = self.strides();
        let mut cell = Vec::with_capacity(self.n());
        for (ax, &v) in self.axes.iter().zip(x) {
            let v = v.clamp(ax[0], ax[ax.len() - 1]);
            let i = match ax.partition_point(|&a| a <= v) {
                0 => 0,
                p => (p - 1).min(ax.len() - 2),
            };
            let t = (v - ax[i]) / (ax[i + 1] - ax[i]);
            cell.push((i, t));
        }
        let mut out = DVector::zeros(self.m);
        for corner in 0..(1usize << self.n()) {
            let mut w = 1.0;
            let mut flat = 0;
            for (k, &(i, t)) in cell.iter().enumerate() {
                if corner >> k & 1 == 1 {
                    w *= t;
                    flat += (i + 1) * strides[k];
                } else {
                    w *= 1.0 - t;
                    flat += i * strides[k];
                }
            }
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(&self.values[flat]) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// CSV with columns `x1..xn, u1..um`, one row per node.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let head: Vec<String> = (1..=self.n())
            .map(|i| format!("x{i}"))
            .chain((1..=self.m).map(|j| format!("u{j}")))
            .collect();
        s.push_str(&head.join(","));
        s.push('\n');
        for (flat, vals) in self.values.iter().enumerate() {
            let row: Vec<String> = self
                .node(flat)
                .iter()
                .chain(vals)
                .map(|v| format!("{v:?}"))
                .collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

fn node_count(axes: &[Vec<f64>]) -> Result<usize> {
    axes.iter().try_fold(1usize, |acc, ax| {
        acc.checked_mul(ax.len())
            .filter(|&c| c <= MAX_NODES)
            .ok_or_else(|| Error::pre(format!("grid exceeds {MAX_NODES} nodes")))
    })
}
