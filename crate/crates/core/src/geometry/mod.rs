//! Planar conic geometry: coefficients, curve models, least-squares fitters,
//! the synthetic scene generators and the sequential RANSAC baseline.

mod conic;
mod fit;
mod scene;
mod sequential;

pub use conic::{algebraic_residual, conic_residual, Conic, Curve};
pub use fit::{fit_circle_algebraic, fit_conic_general, fit_ellipse_direct, fit_line_tls};
pub use scene::{
    generate_scene, make_lce_instance, make_multimodel_instance, DomainBox, Scene, SceneSpec,
    StructureSpec, DEFAULT_POINTS_PER_STRUCTURE, LCE_NOISE_SIGMA, RETRY_BUDGET,
};
pub use sequential::{sequential_fit, SequentialModel};

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid conic: {0}")]
    InvalidConic(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("generation failed: {0}")]
    Generation(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Model family of a planar structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Line,
    Circle,
    Ellipse,
    /// Unconstrained conic, only meaningful for fitting.
    #[serde(alias = "conic-general")]
    Conic,
}

impl StructureKind {
    /// Points needed to determine one model of this kind.
    pub fn minimal_support(self) -> usize {
        match self {
            StructureKind::Line => 2,
            StructureKind::Circle => 3,
            StructureKind::Ellipse | StructureKind::Conic => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StructureKind::Line => "line",
            StructureKind::Circle => "circle",
            StructureKind::Ellipse => "ellipse",
            StructureKind::Conic => "conic",
        }
    }
}

impl std::str::FromStr for StructureKind {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(StructureKind::Line),
            "circle" => Ok(StructureKind::Circle),
            "ellipse" => Ok(StructureKind::Ellipse),
            "conic" | "conic-general" => Ok(StructureKind::Conic),
            other => Err(GeometryError::InvalidSpec(format!("unknown structure kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for StructureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
