use std::path::PathBuf;

use crate::geometry::{MeshQualityReport, Point};

/// Errors raised by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("point ({}, {}) is outside the mesh", .0[0], .0[1])]
    PointLocation(Point),

    #[error("field has {found} coefficients, mesh requires {expected}")]
    MeshMismatch { expected: usize, found: usize },

    #[error("non-finite value {value} at ({}, {})", .at[0], .at[1])]
    NonFinite { value: f64, at: Point },

    #[error("linear solver stopped after {iterations} iterations with relative residual {residual:e}")]
    Solver { iterations: usize, residual: f64 },

    #[error("fixed-point iteration did not converge in {} steps (last increment {:e})", .increments.len(), .increments.last().copied().unwrap_or(f64::NAN))]
    Picard { increments: Vec<f64> },

    #[error("adjoint solve for active point {node} failed: {source}")]
    ActivePoint {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("min-norm point iteration cap {cap} reached (kkt residual {kkt_residual:e})")]
    QpIterationCap {
        cap: usize,
        weights: Vec<f64>,
        kkt_residual: f64,
    },

    #[error("deformed mesh is invalid (min area {:e}, min angle {:.3e} rad)", .0.min_area, .0.min_angle)]
    InvalidMesh(MeshQualityReport),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
