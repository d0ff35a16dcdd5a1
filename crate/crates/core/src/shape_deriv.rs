//! Cost functionals, their volume-form shape derivatives, and the metrics
//! turning derivative functionals into gradient fields.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_operator, dot, eval_local, grad_on_element, point_source_vector, quadrature_points, CsrMatrix,
    DiffusionWeight, ScalarField, SparseSymSystem, VecField,
};
use crate::functions::SmoothFn;
use crate::geometry::{Mesh, Point};
use crate::pde::DiffusionLaw;

type PsiFn = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;
type PsiGradFn = Arc<dyn Fn(Point, f64) -> [f64; 2] + Send + Sync>;

/// Pointwise cost `Psi(x, zeta)` with its partial derivatives.
#[derive(Clone)]
pub enum CostSpec {
    /// `Psi(x, zeta) = |zeta - u_d(x)|^2`.
    Tracking(SmoothFn),
    Custom {
        psi: PsiFn,
        psi_zeta: PsiFn,
        psi_x: PsiGradFn,
    },
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostSpec::Tracking(t) => f.debug_tuple("Tracking").field(t).finish(),
            CostSpec::Custom { .. } => f.write_str("Custom"),
        }
    }
}

impl CostSpec {
    pub fn tracking(target: SmoothFn) -> Self {
        CostSpec::Tracking(target)
    }

    pub fn custom(
        psi: impl Fn(Point, f64) -> f64 + Send + Sync + 'static,
        psi_zeta: impl Fn(Point, f64) -> f64 + Send + Sync + 'static,
        psi_x: impl Fn(Point, f64) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        CostSpec::Custom {
            psi: Arc::new(psi),
            psi_zeta: Arc::new(psi_zeta),
            psi_x: Arc::new(psi_x),
        }
    }

    pub fn target(&self) -> Option<&SmoothFn> {
        match self {
            CostSpec::Tracking(t) => Some(t),
            CostSpec::Custom { .. } => None,
        }
    }

    pub fn psi(&self, x: Point, z: f64) -> f64 {
        match self {
            CostSpec::Tracking(t) => (z - t.eval(x)).powi(2),
            CostSpec::Custom { psi, .. } => psi(x, z),
        }
    }

    pub fn psi_zeta(&self, x: Point, z: f64) -> f64 {
        match self {
            CostSpec::Tracking(t) => 2.0 * (z - t.eval(x)),
            CostSpec::Custom { psi_zeta, .. } => psi_zeta(x, z),
        }
    }

    /// `grad_x Psi`; `fd_step` is used when the target has no analytic gradient.
    pub fn psi_x(&self, x: Point, z: f64, fd_step: f64) -> [f64; 2] {
        match self {
            CostSpec::Tracking(t) => {
                let g = t.grad(x, fd_step);
                let r = -2.0 * (z - t.eval(x));
                [r * g[0], r * g[1]]
            }
            CostSpec::Custom { psi_x, .. } => psi_x(x, z),
        }
    }

    /// Compares the supplied partial derivatives with central differences.
    pub fn check_consistency(&self, samples: &[(Point, f64)], tol: f64) -> Result<()> {
        let h = 1e-5;
        for &(x, z) in samples {
            let dz = (self.psi(x, z + h) - self.psi(x, z - h)) / (2.0 * h);
            let dx = [
                (self.psi([x[0] + h, x[1]], z) - self.psi([x[0] - h, x[1]], z)) / (2.0 * h),
                (self.psi([x[0], x[1] + h], z) - self.psi([x[0], x[1] - h], z)) / (2.0 * h),
            ];
            let pz = self.psi_zeta(x, z);
            let px = self.psi_x(x, z, h);
            let scale = 1.0 + pz.abs().max(px[0].abs()).max(px[1].abs());
            if (dz - pz).abs() > tol * scale || (dx[0] - px[0]).abs() > tol * scale || (dx[1] - px[1]).abs() > tol * scale {
                return Err(Error::Config(format!(
                    "cost derivatives inconsistent at ({}, {}), zeta = {z}",
                    x[0], x[1]
                )));
            }
        }
        Ok(())
    }
}

/// Values of a derivative on the 2N vector basis fields, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeFunctional(pub Vec<f64>);

impl DerivativeFunctional {
    /// Action on a nodal vector field.
    pub fn apply(&self, x: &VecField) -> f64 {
        dot(&self.0, &x.0)
    }
}

/// `max_i Psi(x_i, u_i)` over mesh nodes and every node attaining it.
pub fn cost_linfty(mesh: &Mesh, u: &ScalarField, spec: &CostSpec) -> Result<(f64, Vec<usize>)> {
    u.check(mesh)?;
    let values = nodal_costs(mesh, u, spec);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let argmax = (0..values.len()).filter(|&i| values[i] == max).collect();
    Ok((max, argmax))
}

pub(crate) fn nodal_costs(mesh: &Mesh, u: &ScalarField, spec: &CostSpec) -> Vec<f64> {
    mesh.nodes()
        .iter()
        .zip(&u.0)
        .map(|(&x, &z)| spec.psi(x, z))
        .collect()
}

/// `int |u_h - u_d|^2` by the edge-midpoint rule.
pub fn cost_l2(mesh: &Mesh, u: &ScalarField, spec: &CostSpec) -> Result<f64> {
    u.check(mesh)?;
    let target = spec
        .target()
        .ok_or_else(|| Error::Config("the L2 cost needs a tracking target".into()))?;
    let mut total = 0.0;
    for k in 0..mesh.n_triangles() {
        for q in quadrature_points(mesh, k) {
            let r = eval_local(mesh, &u.0, k, q.bary) - target.eval(q.x);
            total += q.weight * r * r;
        }
    }
    Ok(total)
}

/// `int S1 : dV + S0 . V` over all basis fields `V`, where
/// `S1 = (beta gu.gp + u p - f p + extra) I - beta (gu (x) gp + gp (x) gu)
///       - 2 beta' (gu.gp) gu (x) gu`
/// and `S0 = -grad f p + extra_vec`. Element-constant tensors; the remaining
/// terms use the edge-midpoint rule, matching the load assembly.
fn tensor_form(
    mesh: &Mesh,
    u: &ScalarField,
    p: &ScalarField,
    f: &SmoothFn,
    law: &DiffusionLaw,
    tracking: Option<&SmoothFn>,
) -> Result<Vec<f64>> {
    u.check(mesh)?;
    p.check(mesh)?;
    let fd_step = mesh.h_max().powi(2);
    let mut out = vec![0.0; 2 * mesh.n_nodes()];
    let p_zero = p.0.iter().all(|&v| v == 0.0);
    if p_zero && tracking.is_none() {
        return Ok(out);
    }
    for k in 0..mesh.n_triangles() {
        let e = mesh.element(k);
        let gu = grad_on_element(mesh, &u.0, k);
        let gp = grad_on_element(mesh, &p.0, k);
        let s = gu[0] * gu[0] + gu[1] * gu[1];
        let (beta, dbeta) = (law.beta(s), law.dbeta(s));
        let gugp = gu[0] * gp[0] + gu[1] * gp[1];
        let mut tensor = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                tensor[a][b] = -beta * (gu[a] * gp[b] + gp[a] * gu[b]) - 2.0 * dbeta * gugp * gu[a] * gu[b];
            }
        }
        let mut trace_int = e.area * beta * gugp;
        let mut vec_int = [[0.0; 2]; 3];
        for q in quadrature_points(mesh, k) {
            let uq = eval_local(mesh, &u.0, k, q.bary);
            let pq = eval_local(mesh, &p.0, k, q.bary);
            let mut sq = 0.0;
            let mut vq = [0.0; 2];
            if pq != 0.0 {
                let fq = f.eval(q.x);
                let gf = f.grad(q.x, fd_step);
                sq += uq * pq - fq * pq;
                vq = [-gf[0] * pq, -gf[1] * pq];
            }
            if let Some(t) = tracking {
                let r = uq - t.eval(q.x);
                let gt = t.grad(q.x, fd_step);
                sq += r * r;
                vq[0] -= 2.0 * gt[0] * r;
                vq[1] -= 2.0 * gt[1] * r;
            }
            trace_int += q.weight * sq;
            for i in 0..3 {
                vec_int[i][0] += q.weight * vq[0] * q.bary[i];
                vec_int[i][1] += q.weight * vq[1] * q.bary[i];
            }
        }
        for i in 0..3 {
            let g = e.grads[i];
            for c in 0..2 {
                out[2 * e.nodes[i] + c] += trace_int * g[c]
                    + e.area * (tensor[c][0] * g[0] + tensor[c][1] * g[1])
                    + vec_int[i][c];
            }
        }
    }
    Ok(out)
}

/// Shape derivative of `j(y) = Psi(y, u(y))` on every basis field, given the
/// adjoint `p` for this `y`.
pub fn assemble_dj(
    mesh: &Mesh,
    u: &ScalarField,
    p: &ScalarField,
    y: Point,
    f: &SmoothFn,
    spec: &CostSpec,
    law: &DiffusionLaw,
) -> Result<DerivativeFunctional> {
    let mut out = tensor_form(mesh, u, p, f, law, None)?;
    let phi = point_source_vector(mesh, y, 1.0)?;
    let uy: f64 = phi.iter().zip(&u.0).map(|(a, b)| a * b).sum();
    let px = spec.psi_x(y, uy, mesh.h_max().powi(2));
    for (i, &w) in phi.iter().enumerate() {
        if w != 0.0 {
            out[2 * i] += w * px[0];
            out[2 * i + 1] += w * px[1];
        }
    }
    Ok(DerivativeFunctional(out))
}

/// Shape derivative of `J2 = int |u - u_d|^2` given its adjoint `p_hat`.
pub fn assemble_dj2(
    mesh: &Mesh,
    u: &ScalarField,
    p_hat: &ScalarField,
    f: &SmoothFn,
    spec: &CostSpec,
    law: &DiffusionLaw,
) -> Result<DerivativeFunctional> {
    let target = spec
        .target()
        .ok_or_else(|| Error::Config("the L2 cost derivative needs a tracking target".into()))?;
    tensor_form(mesh, u, p_hat, f, law, Some(target)).map(DerivativeFunctional)
}

/// Inner product on the P1 vector field space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// `int dV:dW + V.W`.
    #[default]
    Sobolev,
    /// Coefficient dot product in the nodal basis.
    Euclidean,
}

const GRADIENT_TOL: f64 = 1e-12;

/// A metric bound to a mesh. For the Sobolev metric the scalar `K + M`
/// matrix is assembled once; the vector Gram matrix is its componentwise copy.
#[derive(Debug, Clone)]
pub struct MetricSpace {
    metric: Metric,
    n_nodes: usize,
    gram: Option<CsrMatrix>,
}

impl MetricSpace {
    pub fn new(mesh: &Mesh, metric: Metric) -> Result<Self> {
        let gram = match metric {
            Metric::Sobolev => Some(assemble_operator(mesh, &DiffusionWeight::Scalar(1.0), 1.0)?),
            Metric::Euclidean => None,
        };
        Ok(Self {
            metric,
            n_nodes: mesh.n_nodes(),
            gram,
        })
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    fn check(&self, len: usize) -> Result<()> {
        if len == 2 * self.n_nodes {
            Ok(())
        } else {
            Err(Error::MeshMismatch {
                expected: 2 * self.n_nodes,
                found: len,
            })
        }
    }

    /// Riesz representative of `dj`: `(grad, phi) = dj(phi)` for all `phi`.
    pub fn gradient(&self, dj: &DerivativeFunctional) -> Result<VecField> {
        self.check(dj.0.len())?;
        match &self.gram {
            None => Ok(VecField(dj.0.clone())),
            Some(m) => {
                let (bx, by) = VecField(dj.0.clone()).components();
                let gx = SparseSymSystem::new(m.clone(), bx).solve(GRADIENT_TOL)?;
                let gy = SparseSymSystem::new(m.clone(), by).solve(GRADIENT_TOL)?;
                Ok(VecField::from_components(&gx, &gy))
            }
        }
    }

    /// `G x`, so that `inner(x, y) = x . apply(y)`.
    pub fn apply(&self, x: &VecField) -> Result<Vec<f64>> {
        self.check(x.0.len())?;
        match &self.gram {
            None => Ok(x.0.clone()),
            Some(m) => {
                let (cx, cy) = x.components();
                let (mx, my) = (m.mul_vec(&cx), m.mul_vec(&cy));
                Ok(VecField::from_components(&mx, &my).0)
            }
        }
    }

    pub fn inner(&self, x: &VecField, y: &VecField) -> Result<f64> {
        self.check(x.0.len())?;
        Ok(dot(&x.0, &self.apply(y)?))
    }

    pub fn norm(&self, x: &VecField) -> Result<f64> {
        Ok(self.inner(x, x)?.max(0.0).sqrt())
    }
}

/// Gradient of `dj` in `metric` on `mesh`.
pub fn gradient(mesh: &Mesh, metric: Metric, dj: &DerivativeFunctional) -> Result<VecField> {
    MetricSpace::new(mesh, metric)?.gradient(dj)
}

/// `(x, y)` in `metric` on `mesh`.
pub fn inner(mesh: &Mesh, metric: Metric, x: &VecField, y: &VecField) -> Result<f64> {
    MetricSpace::new(mesh, metric)?.inner(x, y)
}
