//! Feedback synthesis: composition operator, linear laws, the augmented
//! family and fixed-point grid controls.

pub mod composition;
pub mod fixpoint;
pub mod grid;
pub mod linear;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_ext;
use crate::vf::expr::Expr;
use crate::vf::SystemDef;

pub use composition::{build_composition_h, CompositionOperator};
pub use fixpoint::{apply_operator, apply_operator_on_grid, fixpoint_control, fixpoint_law, FixpointConfig};
pub use grid::{FixpointStats, GridControl, OriginProfile};
pub use linear::{
    closed_loop_gap, family_F, law_semitransversal_1, law_semitransversal_2, law_shifted, law_shifted_split,
    law_transversal, shifted_system,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "T_I")]
    TI,
    #[serde(rename = "ST_I")]
    STI,
    #[serde(rename = "QT_I")]
    QTI,
    #[serde(rename = "ST_LIII")]
    STLIII,
    #[serde(rename = "ST_II")]
    STII,
    #[serde(rename = "trivial")]
    Trivial,
    #[serde(rename = "closed_form")]
    ClosedForm,
    #[serde(rename = "composition")]
    Composition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LawKind {
    Linear {
        #[serde(with = "serde_ext::matrix")]
        k: DMatrix<f64>,
    },
    Grid {
        grid: GridControl,
    },
    /// Explicit components `u_j(x)`; only state variables may appear.
    Expression {
        #[serde(with = "expr_list")]
        components: Vec<Expr>,
    },
}

/// Shift point of a re-centred law: the law acts on `ξ = x − x1` and the
/// deployed control is `u1 + K·ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub x1: Vec<f64>,
    pub u1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLaw {
    pub n: usize,
    pub m: usize,
    #[serde(flatten)]
    pub kind: LawKind,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Shift>,
    /// When present the law drives `T_h f` rather than `f`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition: Option<CompositionOperator>,
    /// `‖A + BK + I‖_F` of the system the law drives, when it was computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_loop_check: Option<f64>,
}

mod expr_list {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::vf::expr::Expr;
    use crate::vf::parse_expr;

    pub fn serialize<S: Serializer>(v: &[Expr], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|e| e.to_string()).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Expr>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|t| parse_expr(t, usize::MAX, 0).map_err(D::Error::custom))
            .collect()
    }
}

impl FeedbackLaw {
    pub fn new(n: usize, m: usize, kind: LawKind, provenance: Provenance) -> Self {
        FeedbackLaw {
            n,
            m,
            kind,
            provenance,
            shift: None,
            composition: None,
            closed_loop_check: None,
        }
    }

    /// `u ≡ 0`.
    pub fn trivial(n: usize, m: usize) -> Self {
        FeedbackLaw::new(n, m, LawKind::Linear { k: DMatrix::zeros(m, n) }, Provenance::Trivial)
    }

    pub fn linear(k: DMatrix<f64>, provenance: Provenance) -> Self {
        FeedbackLaw::new(k.ncols(), k.nrows(), LawKind::Linear { k }, provenance)
    }

    pub fn expression(n: usize, components: Vec<Expr>, provenance: Provenance) -> Result<Self> {
        let law = FeedbackLaw::new(n, components.len(), LawKind::Expression { components }, provenance);
        law.validate()?;
        Ok(law)
    }

    pub fn grid(grid: GridControl, provenance: Provenance) -> Self {
        FeedbackLaw::new(grid.n(), grid.m, LawKind::Grid { grid }, provenance)
    }

    /// Zero law on the modified system `T_h f`.
    pub fn composition(op: CompositionOperator) -> Self {
        let mut law = FeedbackLaw::new(op.n(), op.m(), LawKind::Linear { k: DMatrix::zeros(op.m(), op.n()) }, Provenance::Composition);
        law.composition = Some(op);
        law
    }

    pub fn gain(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            LawKind::Linear { k } => Some(k),
            _ => None,
        }
    }

    pub fn grid_control(&self) -> Option<&GridControl> {
        match &self.kind {
            LawKind::Grid { grid } => Some(grid),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::dim(what));
        match &self.kind {
            LawKind::Linear { k } => {
                if k.nrows() != self.m || k.ncols() != self.n {
                    return bad(format!("gain is {}×{} but the law is declared {}×{}", k.nrows(), k.ncols(), self.m, self.n));
                }
            }
            LawKind::Grid { grid } => {
                grid.validate()?;
                if grid.n() != self.n || grid.m != self.m {
                    return bad(format!("grid is {}→{} but the law is declared {}→{}", grid.n(), grid.m, self.n, self.m));
                }
            }
            LawKind::Expression { components } => {
                if components.len() != self.m {
                    return bad(format!("{} component(s) for m = {}", components.len(), self.m));
                }
                for (j, c) in components.iter().enumerate() {
                    let (mx, mu) = c.max_indices();
                    if mx > self.n || mu > 0 {
                        return bad(format!("control component u{} references variables outside x1..x{}", j + 1, self.n));
                    }
                }
            }
        }
        if let Some(s) = &self.shift {
            if s.x1.len() != self.n || s.u1.len() != self.m {
                return bad("shift point has the wrong dimensions".into());
            }
        }
        if let Some(op) = &self.composition {
            if op.n() != self.n || op.m() != self.m {
                return bad("composition operator has the wrong dimensions".into());
            }
        }
        Ok(())
    }

    /// Whether `x` (in the coordinates the law acts on) is inside its domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.kind {
            LawKind::Grid { grid } => grid.contains(x),
            _ => x.len() == self.n,
        }
    }

    /// Radius of the law's domain, if it is bounded.
    pub fn domain_radius(&self) -> Option<f64> {
        self.grid_control().map(|g| g.radius)
    }

    /// Control in the coordinates of [`effective_system`](Self::effective_system).
    pub fn control(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.n {
            return Err(Error::dim(format!("law expects dim(x) = {}, got {}", self.n, x.len())));
        }
        match &self.kind {
            LawKind::Linear { k } => Ok(k * DVector::from_column_slice(x)),
            LawKind::Grid { grid } => grid.eval(x),
            LawKind::Expression { components } => {
                let mut out = DVector::zeros(self.m);
                for (j, c) in components.iter().enumerate() {
                    out[j] = c.eval::<f64>(x, &[]).map_err(|f| Error::Domain {
                        component: j + 1,
                        message: format!("control law: {f}"),
                    })?;
                }
                Ok(out)
            }
        }
    }

    /// Control in original coordinates: `u1 + u(x − x1)` for shifted laws.
    pub fn deployed_control(&self, x: &[f64]) -> Result<DVector<f64>> {
        match &self.shift {
            Some(s) => {
                let xi: Vec<f64> = x.iter().zip(&s.x1).map(|(a, b)| a - b).collect();
                Ok(self.control(&xi)? + DVector::from_column_slice(&s.u1))
            }
            None => self.control(x),
        }
    }

    /// The system whose state the law feeds back: `T_h f` for composition
    /// laws, the re-centred system for shifted laws, otherwise `sys` itself.
    pub fn effective_system(&self, sys: &SystemDef) -> Result<SystemDef> {
        self.validate()?;
        if sys.n() != self.n || sys.m() != self.m {
            return Err(Error::dim(format!(
                "law is for n = {}, m = {} but the system has n = {}, m = {}",
                self.n,
                self.m,
                sys.n(),
                sys.m()
            )));
        }
        let mut eff = sys.clone();
        if let Some(s) = &self.shift {
            eff = shifted_system(&eff, &s.x1, &s.u1)?;
        }
        if let Some(op) = &self.composition {
            eff = op.modified_system(&eff)?;
        }
        Ok(eff)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("law serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let law: FeedbackLaw = serde_json::from_str(text).map_err(|e| Error::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        law.validate()?;
        Ok(law)
    }
}

/// `ẋ = F_u(x) = f(x, u(x))` for the effective system of a law.
#[derive(Debug, Clone)]
pub struct ClosedLoop<'a> {
    pub system: SystemDef,
    pub law: &'a FeedbackLaw,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(sys: &SystemDef, law: &'a FeedbackLaw) -> Result<Self> {
        Ok(ClosedLoop {
            system: law.effective_system(sys)?,
            law,
        })
    }

    pub fn n(&self) -> usize {
        self.system.n()
    }

    pub fn rhs(&self, x: &[f64]) -> Result<DVector<f64>> {
        let u = self.law.control(x)?;
        self.system.eval(x, u.as_slice())
    }

    /// `(v, v̇)` with `v = ½‖F_u‖²` and `v̇ = ⟨J_{F_u}·F_u, F_u⟩`, the
    /// directional derivative taken by central differences along `F_u`.
    pub fn lyapunov(&self, x: &[f64]) -> Result<(f64, f64)> {
        let f = self.rhs(x)?;
        let norm = f.norm();
        let v = 0.5 * norm * norm;
        if norm == 0.0 {
            return Ok((0.0, 0.0));
        }
        let xn = DVector::from_column_slice(x).norm();
        let t = 1e-6 * (1.0 + xn) / norm;
        let at = |sgn: f64| -> Option<DVector<f64>> {
            let y: Vec<f64> = x.iter().zip(f.iter()).map(|(a, d)| a + sgn * t * d).collect();
            if !self.law.contains(&y) {
                return None;
            }
            self.rhs(&y).ok()
        };
        let jf = match (at(1.0), at(-1.0)) {
            (Some(p), Some(m)) => (p - m) / (2.0 * t),
            (Some(p), None) => (p - &f) / t,
            (None, Some(m)) => (&f - m) / t,
            (None, None) => {
                return Err(Error::OutOfDomain(format!(
                    "no room for a difference step around x = {x:?}"
                )))
            }
        };
        Ok((v, jf.dot(&f)))
    }
}

pub fn lyapunov_value(sys: &SystemDef, law: &FeedbackLaw, x: &[f64]) -> Result<(f64, f64)> {
    if !law.contains(x) {
        return Err(Error::OutOfDomain(format!("x = {x:?} is outside the law's domain")));
    }
    ClosedLoop::new(sys, law)?.lyapunov(x)
}
