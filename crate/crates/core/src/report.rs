//! Aggregated analysis of a system at a point, with the list of synthesis
//! routes whose preconditions hold there.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::serde_ext;
use crate::synthesis::{self, Provenance};
use crate::transversality::{self, TransversalityReport};
use crate::variational::{self, JacobianSplit, OpennessReport};
use crate::vf::SystemDef;

pub const NOT_LINEARLY_OPEN: &str = "system is not linearly open here";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Applicable {
    /// CLI method name.
    pub method: String,
    pub provenance: Provenance,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSummary {
    #[serde(with = "serde_ext::matrix")]
    pub hx: DMatrix<f64>,
    /// Components of `T_h f`.
    pub modified_system: Vec<String>,
    /// Openness of `T_h f` at the origin.
    pub modified_openness: OpennessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub system: String,
    pub n: usize,
    pub m: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    #[serde(with = "serde_ext::vector")]
    pub f_value: nalgebra::DVector<f64>,
    pub openness: OpennessReport,
    pub transversality: TransversalityReport,
    pub applicable_theorems: Vec<Applicable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition: Option<CompositionSummary>,
    pub warnings: Vec<String>,
    pub suggestions: Vec<String>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    pub fn lists(&self, p: Provenance) -> bool {
        self.applicable_theorems.iter().any(|a| a.provenance == p)
    }
}

fn entry(method: &str, provenance: Provenance, reason: impl Into<String>) -> Applicable {
    Applicable {
        method: method.into(),
        provenance,
        reason: reason.into(),
    }
}

pub fn analyze(sys: &SystemDef, x: &[f64], u: &[f64]) -> Result<AnalysisReport> {
    let split = JacobianSplit::of_system(sys, x, u)?;
    let f_value = sys.eval(x, u)?;
    let openness = variational::cov_reg(&split)?;
    let tr = transversality::classify_split(&split, transversality::DEFAULT_TOL)?;
    let cov = openness.cov;
    let at_origin = x.iter().chain(u).all(|&v| v == 0.0);
    let equilibrium = f_value.amax() <= 1e-12;

    let mut applicable = Vec::new();
    let mut warnings = Vec::new();
    let mut suggestions = Vec::new();

    if cov > 0.0 {
        if let Some(tc) = &tr.tc {
            applicable.push(entry("t1", Provenance::TI, format!("A = −cB with c = {} and cov = {cov:.6} > 0", tc.c)));
        }
        if tr.type1.is_some() {
            applicable.push(entry("st1", Provenance::STI, "a transverse factor Q with A = −BQ exists and cov > 0"));
        }
        if tr.type2.holds {
            applicable.push(entry("qt1", Provenance::QTI, "P·AA*·P = AA* holds and cov > 0"));
            if !at_origin {
                applicable.push(entry(
                    "shift",
                    Provenance::STLIII,
                    "the projection condition holds at this point; the re-centred system can be stabilized",
                ));
            }
        }
    }

    let mut composition = None;
    if at_origin && equilibrium && cov > 0.0 {
        let op = synthesis::build_composition_h(sys)?;
        let modified = op.modified_system(sys)?;
        let msplit = JacobianSplit::of_system(&modified, x, u)?;
        let mopen = variational::cov_reg(&msplit)?;
        applicable.push(entry(
            "composition",
            Provenance::Composition,
            "cov > 0 at an equilibrium: h = −J⁺ gives T_h f with spatial linearization −I and u = 0",
        ));
        composition = Some(CompositionSummary {
            hx: op.hx.clone(),
            modified_system: modified.exprs().iter().map(|e| e.to_string()).collect(),
            modified_openness: mopen,
        });
    }

    if cov == 0.0 {
        warnings.push(format!(
            "{NOT_LINEARLY_OPEN} (cov = 0, rank [A|B] = {} < n = {}); no linearization-based law applies and \
             a continuous stabilizing feedback at this point is ruled out by Brockett's condition",
            openness.rank, sys.n()
        ));
        suggestions.push(
            "try the fixed-point route on a punctured neighbourhood where cov > 0 and the projection condition hold".into(),
        );
    }
    if openness.gjkm_ok {
        warnings.push(format!(
            "spectral condition holds: Λ₊ ⊆ ℝ and cov = {cov:.6} > η = {}",
            fmt_ext(openness.eta)
        ));
    } else {
        warnings.push(format!(
            "spectral condition fails: cov = {cov:.6}, η = {}{}",
            fmt_ext(openness.eta),
            if openness.lambda_plus.iter().any(|l| l[1] != 0.0) {
                ", and Λ₊ has non-real eigenvalues"
            } else {
                ""
            }
        ));
        if cov > 0.0 && !tr.type2.holds && composition.is_some() {
            suggestions.push("use the composition-operator route (method `composition`)".into());
        }
    }
    if !equilibrium {
        warnings.push(format!("the point is not an equilibrium: ‖f‖∞ = {:e}", f_value.amax()));
    }

    Ok(AnalysisReport {
        system: sys.name().to_string(),
        n: sys.n(),
        m: sys.m(),
        x: x.to_vec(),
        u: u.to_vec(),
        f_value,
        openness,
        transversality: tr,
        applicable_theorems: applicable,
        composition,
        warnings,
        suggestions,
    })
}

fn fmt_ext(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "−∞".into()
    } else {
        format!("{v:.6}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vf::parse_system;

    #[test]
    fn sontag_report() {
        let sys = parse_system("n=1 m=1; name=sontag; f1 = x1 + u1^3").unwrap();
        let r = analyze(&sys, &[0.0], &[0.0]).unwrap();
        assert_eq!((r.openness.cov, r.openness.eta, r.openness.gjkm_ok), (1.0, 1.0, false));
        assert!(r.transversality.type1.is_none());
        assert!(!r.lists(Provenance::QTI) && r.lists(Provenance::Composition));
        let c = r.composition.as_ref().unwrap();
        assert_eq!(c.modified_system, vec!["-x1 + u1^3".to_string()]);
        assert_eq!((c.modified_openness.cov, c.modified_openness.eta), (1.0, f64::NEG_INFINITY));
        assert!(r.suggestions.iter().any(|s| s.contains("composition")));
        let json = r.to_json();
        assert_eq!(json["composition"]["modified_openness"]["eta"], "-inf");
    }

    #[test]
    fn coron_report_warns() {
        let sys = parse_system("n=3 m=1; f1=x2^3 - 3*(x1-x3)^2*x2; f2=(x1-x3)^3 - 3*(x1-x3)^2*x2; f3=u1").unwrap();
        let r = analyze(&sys, &[0.0; 3], &[0.0]).unwrap();
        assert_eq!(r.openness.cov, 0.0);
        assert!(r.warnings.iter().any(|w| w.contains(NOT_LINEARLY_OPEN)));
        assert!(r.applicable_theorems.is_empty());
        assert_eq!(r.to_json()["openness"]["reg"], "inf");
    }

    #[test]
    fn stable_scalar_report() {
        let sys = parse_system("n=1 m=1; f1 = -x1 + u1").unwrap();
        let r = analyze(&sys, &[0.0], &[0.0]).unwrap();
        assert!((r.openness.cov - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.openness.eta, f64::NEG_INFINITY);
        assert!(r.openness.gjkm_ok);
        for p in [Provenance::TI, Provenance::STI, Provenance::QTI] {
            assert!(r.lists(p));
        }
    }
}
