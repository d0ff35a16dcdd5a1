//! State and adjoint solves for `-div(beta(|grad u|^2) grad u) + u = f` with
//! homogeneous Dirichlet data on the marked boundary.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_load, assemble_load_with, assemble_operator, eval_local, grad_on_element, homogeneous_dirichlet,
    point_source_vector, CsrMatrix, DiffusionWeight, ScalarField, SparseSymSystem, DEFAULT_SOLVER_TOL,
};
use crate::functions::SmoothFn;
use crate::geometry::{Mesh, Point};

type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Diffusion coefficient `beta(|grad u|^2)` with its derivative and the
/// bounds it is expected to satisfy.
#[derive(Clone)]
pub struct DiffusionLaw {
    name: String,
    beta: ScalarMap,
    dbeta: ScalarMap,
    constant: bool,
    /// Lower and upper bound of `beta`.
    pub beta_bounds: (f64, f64),
    /// Ellipticity bounds `k, K` of the linearized coefficient.
    pub ellipticity: (f64, f64),
}

impl fmt::Debug for DiffusionLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionLaw")
            .field("name", &self.name)
            .field("beta_bounds", &self.beta_bounds)
            .field("ellipticity", &self.ellipticity)
            .finish()
    }
}

impl DiffusionLaw {
    pub fn new(
        name: impl Into<String>,
        beta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dbeta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        beta_bounds: (f64, f64),
        ellipticity: (f64, f64),
    ) -> Self {
        Self {
            name: name.into(),
            beta: Arc::new(beta),
            dbeta: Arc::new(dbeta),
            constant: false,
            beta_bounds,
            ellipticity,
        }
    }

    /// `beta == c`; the state equation is linear.
    pub fn constant(c: f64) -> Self {
        Self {
            name: if c == 1.0 { "constant".into() } else { format!("constant({c})") },
            beta: Arc::new(move |_| c),
            dbeta: Arc::new(|_| 0.0),
            constant: true,
            beta_bounds: (c, c),
            ellipticity: (c, c),
        }
    }

    /// `beta(s) = 1 + s / (1 + s)`: bounded in [1, 2], nondecreasing, with
    /// `beta(s) + 2 beta'(s) s <= 2.5`.
    pub fn saturating() -> Self {
        Self::new(
            "saturating",
            |s| 1.0 + s / (1.0 + s),
            |s| 1.0 / ((1.0 + s) * (1.0 + s)),
            (1.0, 2.0),
            (1.0, 2.5),
        )
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "constant" => Ok(Self::constant(1.0)),
            "saturating" => Ok(Self::saturating()),
            other => Err(Error::Config(format!("unknown diffusion law `{other}`"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn beta(&self, s: f64) -> f64 {
        (self.beta)(s)
    }

    pub fn dbeta(&self, s: f64) -> f64 {
        (self.dbeta)(s)
    }

    /// `beta I + 2 beta' grad_u (x) grad_u`, the gradient block of the
    /// linearized flux.
    pub fn linearized_tensor(&self, grad_u: [f64; 2]) -> [[f64; 2]; 2] {
        let s = grad_u[0] * grad_u[0] + grad_u[1] * grad_u[1];
        let (b, db) = (self.beta(s), 2.0 * self.dbeta(s));
        [
            [b + db * grad_u[0] * grad_u[0], db * grad_u[0] * grad_u[1]],
            [db * grad_u[1] * grad_u[0], b + db * grad_u[1] * grad_u[1]],
        ]
    }

    /// Sampled check of boundedness, monotonicity and the ellipticity bounds
    /// of the linearized coefficient.
    pub fn check_invariants(&self) -> Result<()> {
        let (lo, hi) = self.beta_bounds;
        let (k, big_k) = self.ellipticity;
        let tol = 1e-12;
        let samples: Vec<f64> = (0..200).map(|i| (i as f64 * 0.1).powi(2)).collect();
        let mut prev = f64::NEG_INFINITY;
        for &s in &samples {
            let b = self.beta(s);
            if !(b >= lo - tol && b <= hi + tol) {
                return Err(Error::Config(format!("{}: beta({s}) = {b} outside [{lo}, {hi}]", self.name)));
            }
            if b < prev - tol {
                return Err(Error::Config(format!("{}: beta decreases at s = {s}", self.name)));
            }
            prev = b;
        }
        for i in 0..40 {
            let r = i as f64 * 0.25;
            for j in 0..16 {
                let a = j as f64 * std::f64::consts::PI / 8.0;
                let p = [r, 0.0];
                let eta = [a.cos(), a.sin()];
                let s = r * r;
                let pe = p[0] * eta[0] + p[1] * eta[1];
                let q = self.beta(s) + 2.0 * self.dbeta(s) * pe * pe;
                if !(q >= k - tol && q <= big_k + tol) {
                    return Err(Error::Config(format!(
                        "{}: linearized coefficient {q} outside [{k}, {big_k}] at |p| = {r}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Tolerances for state and adjoint solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Relative residual of each linear solve.
    pub linear_tol: f64,
    /// Relative H1 increment that stops the fixed-point iteration.
    pub picard_tol: f64,
    pub max_picard: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            linear_tol: DEFAULT_SOLVER_TOL,
            picard_tol: 1e-9,
            max_picard: 100,
        }
    }
}

impl SolveOptions {
    pub fn with_linear_tol(mut self, tol: f64) -> Self {
        self.linear_tol = tol;
        self
    }
}

#[derive(Debug, Clone)]
pub struct StateSolution {
    pub u: ScalarField,
    pub picard_iterations: usize,
    pub final_increment: f64,
    pub increments: Vec<f64>,
}

fn dirichlet_or_err(mesh: &Mesh) -> Result<Vec<(usize, f64)>> {
    let d = homogeneous_dirichlet(mesh);
    if d.is_empty() {
        return Err(Error::InvalidArgument("state equation needs Dirichlet nodes".into()));
    }
    Ok(d)
}

fn frozen_weight(mesh: &Mesh, u: &[f64], law: &DiffusionLaw) -> DiffusionWeight {
    DiffusionWeight::PerElement(
        (0..mesh.n_triangles())
            .map(|k| {
                let g = grad_on_element(mesh, u, k);
                law.beta(g[0] * g[0] + g[1] * g[1])
            })
            .collect(),
    )
}

/// Solves the state equation; frozen-coefficient (Picard) iteration when
/// `beta` is not constant.
pub fn solve_state(mesh: &Mesh, f: &SmoothFn, law: &DiffusionLaw, opts: &SolveOptions) -> Result<StateSolution> {
    let dirichlet = dirichlet_or_err(mesh)?;
    let b = assemble_load(mesh, |x| f.eval(x))?;
    if law.is_constant() {
        let a = assemble_operator(mesh, &DiffusionWeight::Scalar(law.beta(0.0)), 1.0)?;
        let u = SparseSymSystem::new(a, b).with_dirichlet(dirichlet).solve(opts.linear_tol)?;
        return Ok(StateSolution {
            u: ScalarField(u),
            picard_iterations: 1,
            final_increment: 0.0,
            increments: vec![],
        });
    }

    let h1 = assemble_operator(mesh, &DiffusionWeight::Scalar(1.0), 1.0)?;
    let mut u = vec![0.0; mesh.n_nodes()];
    let mut increments = Vec::new();
    for it in 1..=opts.max_picard {
        let a = assemble_operator(mesh, &frozen_weight(mesh, &u, law), 1.0)?;
        let next = SparseSymSystem::new(a, b.clone())
            .with_dirichlet(dirichlet.clone())
            .solve(opts.linear_tol)?;
        let diff: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let norm_next = h1.bilinear(&next, &next).sqrt();
        let inc = if norm_next > 0.0 {
            h1.bilinear(&diff, &diff).max(0.0).sqrt() / norm_next
        } else {
            0.0
        };
        increments.push(inc);
        u = next;
        if inc <= opts.picard_tol {
            return Ok(StateSolution {
                u: ScalarField(u),
                picard_iterations: it,
                final_increment: inc,
                increments,
            });
        }
    }
    Err(Error::Picard { increments })
}

/// Relative residual of the nonlinear state equation tested against all
/// free basis functions.
pub fn state_residual(mesh: &Mesh, u: &ScalarField, f: &SmoothFn, law: &DiffusionLaw) -> Result<f64> {
    u.check(mesh)?;
    let b = assemble_load(mesh, |x| f.eval(x))?;
    let a = assemble_operator(mesh, &frozen_weight(mesh, &u.0, law), 1.0)?;
    let au = a.mul_vec(&u.0);
    let (mut r2, mut b2) = (0.0, 0.0);
    for i in 0..mesh.n_nodes() {
        if !mesh.is_dirichlet(i) {
            r2 += (au[i] - b[i]).powi(2);
            b2 += b[i] * b[i];
        }
    }
    Ok(if b2 > 0.0 { (r2 / b2).sqrt() } else { r2.sqrt() })
}

/// The state operator linearized at `u`, with zero Dirichlet data. Shared by
/// all adjoint solves at one iterate.
#[derive(Debug, Clone)]
pub struct LinearizedOperator<'m> {
    mesh: &'m Mesh,
    matrix: CsrMatrix,
    dirichlet: Vec<(usize, f64)>,
    tol: f64,
}

impl<'m> LinearizedOperator<'m> {
    pub fn new(mesh: &'m Mesh, u: &ScalarField, law: &DiffusionLaw, tol: f64) -> Result<Self> {
        u.check(mesh)?;
        let weight = if law.is_constant() {
            DiffusionWeight::Scalar(law.beta(0.0))
        } else {
            DiffusionWeight::Tensor(
                (0..mesh.n_triangles())
                    .map(|k| law.linearized_tensor(grad_on_element(mesh, &u.0, k)))
                    .collect(),
            )
        };
        Ok(Self {
            mesh,
            matrix: assemble_operator(mesh, &weight, 1.0)?,
            dirichlet: dirichlet_or_err(mesh)?,
            tol,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn solve(&self, rhs: Vec<f64>) -> Result<ScalarField> {
        SparseSymSystem::new(self.matrix.clone(), rhs)
            .with_dirichlet(self.dirichlet.clone())
            .solve(self.tol)
            .map(ScalarField)
    }

    /// Solution for the point load `scale * delta_y`.
    pub fn solve_point(&self, y: Point, scale: f64) -> Result<ScalarField> {
        self.solve(point_source_vector(self.mesh, y, scale)?)
    }
}

/// Adjoint for the point value `Psi(y, u(y))`: load `-psi_u delta_y`.
pub fn solve_adjoint_point(
    mesh: &Mesh,
    u: &ScalarField,
    y: Point,
    law: &DiffusionLaw,
    psi_u: f64,
    opts: &SolveOptions,
) -> Result<ScalarField> {
    LinearizedOperator::new(mesh, u, law, opts.linear_tol)?.solve_point(y, -psi_u)
}

/// Load `-2 (u_h - u_d)` tested against the basis by the edge-midpoint rule.
pub fn l2_adjoint_load(mesh: &Mesh, u: &ScalarField, u_d: &SmoothFn) -> Result<Vec<f64>> {
    u.check(mesh)?;
    assemble_load_with(mesh, |q| -2.0 * (eval_local(mesh, &u.0, q.element, q.bary) - u_d.eval(q.x)))
}

/// Adjoint of `J2 = int |u - u_d|^2`.
pub fn solve_adjoint_l2(
    mesh: &Mesh,
    u: &ScalarField,
    u_d: &SmoothFn,
    law: &DiffusionLaw,
    opts: &SolveOptions,
) -> Result<ScalarField> {
    let b = l2_adjoint_load(mesh, u, u_d)?;
    LinearizedOperator::new(mesh, u, law, opts.linear_tol)?.solve(b)
}
