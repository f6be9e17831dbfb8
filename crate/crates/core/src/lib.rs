//! Open-map stabilization toolkit: covering bounds, transversality checks,
//! feedback synthesis and closed-loop simulation for `ẋ = f(x, u)`.

pub mod error;
pub mod report;
pub mod serde_ext;
pub mod simulation;
pub mod synthesis;
pub mod transversality;
pub mod variational;
pub mod vf;

pub use error::{Error, Result};
pub use report::{analyze, AnalysisReport};
pub use synthesis::{FeedbackLaw, Provenance};
pub use variational::{JacobianSplit, OpennessReport};
pub use vf::{parse_system, SystemDef};

/// Example systems shipped with the crate, as `(file name, source)`.
pub const BUNDLED_SYSTEMS: [(&str, &str); 3] = [
    ("sontag.sys", include_str!("../systems/sontag.sys")),
    ("coron.sys", include_str!("../systems/coron.sys")),
    ("xsqr.sys", include_str!("../systems/xsqr.sys")),
];
