use serde::{Deserialize, Serialize};

use super::{Mesh, MeshQualityReport, QualityFloors};
use crate::error::Result;
use crate::fem::{assemble_operator, DiffusionWeight, SparseSymSystem, VecField};

/// How interior nodes follow a displacement field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeformMode {
    /// Every node moves to `x + t g(x)`.
    Direct,
    /// Boundary nodes move to `x + t g(x)`; interior displacement is the
    /// discrete harmonic extension of the boundary displacement.
    #[default]
    Harmonic,
}

#[derive(Debug, Clone)]
pub enum Deformed {
    Valid(Mesh),
    Invalid(MeshQualityReport),
}

impl Deformed {
    pub fn valid(self) -> Option<Mesh> {
        match self {
            Deformed::Valid(m) => Some(m),
            Deformed::Invalid(_) => None,
        }
    }
}

const HARMONIC_TOL: f64 = 1e-10;

/// Applies `id + t g` to the mesh. Connectivity and markers are kept; the
/// result is rejected when it falls below the quality floors or its
/// boundary self-intersects.
pub fn deform_mesh(mesh: &Mesh, g: &VecField, t: f64, mode: DeformMode, floors: &QualityFloors) -> Result<Deformed> {
    g.check(mesh)?;
    if t == 0.0 {
        return Ok(Deformed::Valid(mesh.clone()));
    }
    let n = mesh.n_nodes();
    let (dx, dy) = match mode {
        DeformMode::Direct => {
            let (x, y) = g.components();
            (x.iter().map(|v| t * v).collect(), y.iter().map(|v| t * v).collect())
        }
        DeformMode::Harmonic => {
            let laplace = assemble_operator(mesh, &DiffusionWeight::Scalar(1.0), 0.0)?;
            let extend = |c: usize| -> Result<Vec<f64>> {
                let dirichlet = mesh
                    .boundary_nodes()
                    .iter()
                    .map(|&i| (i, t * g.0[2 * i + c]))
                    .collect();
                SparseSymSystem::new(laplace.clone(), vec![0.0; n])
                    .with_dirichlet(dirichlet)
                    .solve(HARMONIC_TOL)
            };
            (extend(0)?, extend(1)?)
        }
    };
    let nodes = mesh
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, p)| [p[0] + dx[i], p[1] + dy[i]])
        .collect();
    let moved = mesh.with_nodes(nodes);
    let report = moved.quality(floors);
    if report.is_valid && report.boundary_simple {
        Ok(Deformed::Valid(moved))
    } else {
        Ok(Deformed::Invalid(report))
    }
}
