//! The data of one optimization problem: source, cost, diffusion law and
//! solver tolerances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{ScalarField, VecField};
use crate::functions::{self, sine_bump, sine_bump_source, SmoothFn};
use crate::geometry::Mesh;
use crate::pde::{solve_state, DiffusionLaw, LinearizedOperator, SolveOptions};
use crate::shape_deriv::{assemble_dj, CostSpec};

/// Named choices for the problem data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// Right-hand side `f`.
    pub source: String,
    /// Tracking target `u_d`; the cost is `Psi(x, z) = (z - u_d(x))^2`.
    pub target: String,
    /// `constant` (beta = 1) or `saturating`.
    pub law: String,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            source: "sine_bump_source".into(),
            target: "sine_bump".into(),
            law: "constant".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub f: SmoothFn,
    pub spec: CostSpec,
    pub law: DiffusionLaw,
    pub opts: SolveOptions,
}

impl Problem {
    /// Manufactured tracking problem: `beta = 1`, target `sin(pi x1) sin(pi x2)`
    /// and the source that makes the target the state on the unit square.
    pub fn toy() -> Self {
        Self {
            f: sine_bump_source(),
            spec: CostSpec::tracking(sine_bump()),
            law: DiffusionLaw::constant(1.0),
            opts: SolveOptions::default(),
        }
    }

    pub fn from_config(cfg: &ProblemConfig, opts: SolveOptions) -> Result<Self> {
        let lookup = |what: &str, name: &str| {
            functions::by_name(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown {what} `{name}` (expected one of {})",
                    functions::FUNCTION_NAMES.join(", ")
                ))
            })
        };
        Ok(Self {
            f: lookup("source", &cfg.source)?,
            spec: CostSpec::tracking(lookup("target", &cfg.target)?),
            law: DiffusionLaw::by_name(&cfg.law)?,
            opts,
        })
    }

    pub fn with_opts(mut self, opts: SolveOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn state(&self, mesh: &Mesh) -> Result<ScalarField> {
        Ok(solve_state(mesh, &self.f, &self.law, &self.opts)?.u)
    }

    /// Adjoint of the point value at `node`; zero on Dirichlet nodes.
    pub fn point_adjoint(&self, mesh: &Mesh, u: &ScalarField, node: usize) -> Result<ScalarField> {
        if mesh.is_dirichlet(node) {
            return Ok(ScalarField::zeros(mesh));
        }
        let y = mesh.node(node);
        let psi_u = self.spec.psi_zeta(y, u.0[node]);
        LinearizedOperator::new(mesh, u, &self.law, self.opts.linear_tol)?.solve_point(y, -psi_u)
    }

    /// `dj(Omega^y)(X)` for `y` the given node.
    pub fn point_derivative(&self, mesh: &Mesh, u: &ScalarField, node: usize, x: &VecField) -> Result<f64> {
        let p = self.point_adjoint(mesh, u, node)?;
        Ok(assemble_dj(mesh, u, &p, mesh.node(node), &self.f, &self.spec, &self.law)?.apply(x))
    }
}
