//! P1 finite elements on triangles: operator and load assembly, point
//! sources, field evaluation and SPD solves.

mod sparse;

use crate::error::{Error, Result};
use crate::geometry::{Locator, Mesh, Point};

pub use sparse::{solve_spd, CsrMatrix, SolveStats, SparseSymSystem, DEFAULT_SOLVER_TOL};
pub(crate) use sparse::dot;

/// Nodal coefficients of a scalar P1 function.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField(pub Vec<f64>);

/// Nodal coefficients of a vector P1 function, node-major:
/// `[x_0, y_0, x_1, y_1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VecField(pub Vec<f64>);

impl ScalarField {
    pub fn zeros(mesh: &Mesh) -> Self {
        Self(vec![0.0; mesh.n_nodes()])
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Self {
        Self(mesh.nodes().iter().map(|&p| f(p)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn check(&self, mesh: &Mesh) -> Result<()> {
        check_len(mesh.n_nodes(), self.0.len())
    }
}

impl VecField {
    pub fn zeros(mesh: &Mesh) -> Self {
        Self(vec![0.0; 2 * mesh.n_nodes()])
    }

    pub fn interpolate(mesh: &Mesh, f: impl Fn(Point) -> [f64; 2]) -> Self {
        Self(mesh.nodes().iter().flat_map(|&p| f(p)).collect())
    }

    pub fn at(&self, node: usize) -> [f64; 2] {
        [self.0[2 * node], self.0[2 * node + 1]]
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn check(&self, mesh: &Mesh) -> Result<()> {
        check_len(2 * mesh.n_nodes(), self.0.len())
    }

    /// Splits into the x and y component coefficient vectors.
    pub fn components(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.0.iter().step_by(2).copied().collect(),
            self.0.iter().skip(1).step_by(2).copied().collect(),
        )
    }

    pub fn from_components(x: &[f64], y: &[f64]) -> Self {
        Self(x.iter().zip(y).flat_map(|(&a, &b)| [a, b]).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|v| v * s).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::MeshMismatch { expected, found })
    }
}

/// Diffusion coefficient entering the stiffness part of an operator.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionWeight {
    Scalar(f64),
    PerElement(Vec<f64>),
    /// Symmetric 2x2 tensor per element.
    Tensor(Vec<[[f64; 2]; 2]>),
}

impl DiffusionWeight {
    fn tensor(&self, k: usize) -> [[f64; 2]; 2] {
        match self {
            DiffusionWeight::Scalar(w) => [[*w, 0.0], [0.0, *w]],
            DiffusionWeight::PerElement(w) => [[w[k], 0.0], [0.0, w[k]]],
            DiffusionWeight::Tensor(w) => w[k],
        }
    }
}

/// `M_ij = sum_K int_K (W grad phi_j) . grad phi_i + mass_coeff phi_i phi_j`,
/// with the exact P1 element mass matrix.
pub fn assemble_operator(mesh: &Mesh, weight: &DiffusionWeight, mass_coeff: f64) -> Result<CsrMatrix> {
    let nt = mesh.n_triangles();
    match weight {
        DiffusionWeight::PerElement(w) => check_len(nt, w.len())?,
        DiffusionWeight::Tensor(w) => check_len(nt, w.len())?,
        DiffusionWeight::Scalar(_) => {}
    }
    if !(mass_coeff >= 0.0) {
        return Err(Error::InvalidArgument(format!("mass coefficient {mass_coeff} is negative")));
    }
    let mut triplets = Vec::with_capacity(9 * nt);
    for k in 0..nt {
        let e = mesh.element(k);
        if !(e.area > 0.0) {
            return Err(Error::Geometry(format!("element {k} has area {:e}", e.area)));
        }
        let w = weight.tensor(k);
        for i in 0..3 {
            let gi = e.grads[i];
            for j in 0..3 {
                let gj = e.grads[j];
                let wgj = [w[0][0] * gj[0] + w[0][1] * gj[1], w[1][0] * gj[0] + w[1][1] * gj[1]];
                let stiff = e.area * (wgj[0] * gi[0] + wgj[1] * gi[1]);
                let mass = mass_coeff * e.area / 12.0 * if i == j { 2.0 } else { 1.0 };
                triplets.push((e.nodes[i], e.nodes[j], stiff + mass));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(mesh.n_nodes(), triplets))
}

/// Quadrature point of the three-point edge-midpoint rule (exact for
/// quadratics on a triangle).
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub element: usize,
    pub x: Point,
    pub bary: [f64; 3],
    pub weight: f64,
}

const EDGE_MIDPOINTS: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];

/// Edge-midpoint quadrature points of element `k`.
pub fn quadrature_points(mesh: &Mesh, k: usize) -> [QuadPoint; 3] {
    let e = mesh.element(k);
    let p = e.nodes.map(|v| mesh.node(v));
    EDGE_MIDPOINTS.map(|bary| QuadPoint {
        element: k,
        x: [
            bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
            bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
        ],
        bary,
        weight: e.area / 3.0,
    })
}

/// Value of a P1 field inside element `k` at barycentric coordinates `bary`.
pub fn eval_local(mesh: &Mesh, field: &[f64], k: usize, bary: [f64; 3]) -> f64 {
    let t = mesh.triangles()[k];
    bary[0] * field[t[0]] + bary[1] * field[t[1]] + bary[2] * field[t[2]]
}

/// `b_i = sum_K quad(g * phi_i)` where `g` may depend on the element and
/// barycentric position (to evaluate P1 fields exactly at quadrature points).
pub fn assemble_load_with(mesh: &Mesh, g: impl Fn(&QuadPoint) -> f64) -> Result<Vec<f64>> {
    let mut b = vec![0.0; mesh.n_nodes()];
    for k in 0..mesh.n_triangles() {
        let t = mesh.triangles()[k];
        for q in quadrature_points(mesh, k) {
            let v = g(&q);
            if !v.is_finite() {
                return Err(Error::NonFinite { value: v, at: q.x });
            }
            for i in 0..3 {
                b[t[i]] += q.weight * v * q.bary[i];
            }
        }
    }
    Ok(b)
}

/// `b_i = int f phi_i` by the edge-midpoint rule.
pub fn assemble_load(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Result<Vec<f64>> {
    assemble_load_with(mesh, |q| f(q.x))
}

/// Basis functions evaluated at `y`: `b_i = scale * phi_i(y)`.
pub fn point_source_vector(mesh: &Mesh, y: Point, scale: f64) -> Result<Vec<f64>> {
    let mut b = vec![0.0; mesh.n_nodes()];
    if let Some(v) = mesh.node_at(y) {
        b[v] = scale;
        return Ok(b);
    }
    let loc = mesh.locate(y)?;
    let t = mesh.triangles()[loc.triangle];
    for i in 0..3 {
        b[t[i]] += scale * loc.bary[i];
    }
    Ok(b)
}

/// Interpolated value of `field` at `x`.
pub fn eval_field(mesh: &Mesh, field: &ScalarField, x: Point) -> Result<f64> {
    field.check(mesh)?;
    if let Some(v) = mesh.node_at(x) {
        return Ok(field.0[v]);
    }
    let loc = mesh.locate(x)?;
    Ok(eval_local(mesh, &field.0, loc.triangle, loc.bary))
}

/// Same as [`eval_field`] but reuses a walking locator across calls.
pub fn eval_field_with(locator: &Locator<'_>, mesh: &Mesh, field: &ScalarField, x: Point) -> Result<f64> {
    let loc = locator.locate(x)?;
    Ok(eval_local(mesh, &field.0, loc.triangle, loc.bary))
}

/// Constant gradient of a P1 field on element `k`.
pub fn grad_on_element(mesh: &Mesh, field: &[f64], k: usize) -> [f64; 2] {
    let e = mesh.element(k);
    // differences against node 0 (the barycentric gradients sum to zero),
    // so constants have exactly zero gradient
    let d1 = field[e.nodes[1]] - field[e.nodes[0]];
    let d2 = field[e.nodes[2]] - field[e.nodes[0]];
    [
        d1 * e.grads[1][0] + d2 * e.grads[2][0],
        d1 * e.grads[1][1] + d2 * e.grads[2][1],
    ]
}

/// Zero Dirichlet data on every Dirichlet-marked node.
pub fn homogeneous_dirichlet(mesh: &Mesh) -> Vec<(usize, f64)> {
    mesh.dirichlet_nodes().map(|i| (i, 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_disk_mesh, make_square_mesh};

    #[test]
    fn mass_matrix_sums_to_area() {
        let mesh = make_disk_mesh([0.0, 0.0], 1.0, 16, 0.3).unwrap();
        let m = assemble_operator(&mesh, &DiffusionWeight::Scalar(0.0), 1.0).unwrap();
        let total: f64 = (0..m.dim()).flat_map(|r| m.row(r).map(|(_, v)| v).collect::<Vec<_>>()).sum();
        assert!((total - mesh.total_area()).abs() < 1e-13);
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let mesh = make_disk_mesh([0.0, 0.0], 1.0, 16, 0.3).unwrap();
        let k = assemble_operator(&mesh, &DiffusionWeight::Scalar(1.0), 0.0).unwrap();
        let y = k.mul_vec(&vec![1.0; mesh.n_nodes()]);
        assert!(y.iter().all(|v| v.abs() < 1e-13));
        assert!(k.asymmetry() < 1e-13);
    }

    #[test]
    fn center_diagonal_of_coarse_square() {
        let mesh = make_square_mesh(2).unwrap();
        let k = assemble_operator(&mesh, &DiffusionWeight::Scalar(1.0), 0.0).unwrap();
        assert!((k.get(4, 4) - 4.0).abs() < 1e-14);
        // independent check: finite-difference gradients of the hat function
        // integrated by the centroid rule
        let h = 1e-6;
        let oracle: f64 = (0..mesh.n_triangles())
            .filter_map(|k| mesh.triangles()[k].iter().position(|&v| v == 4).map(|i| (k, i)))
            .map(|(k, i)| {
                let t = mesh.triangles()[k];
                let c = t.iter().fold([0.0, 0.0], |a, &v| {
                    [a[0] + mesh.node(v)[0] / 3.0, a[1] + mesh.node(v)[1] / 3.0]
                });
                let phi = |x: Point| mesh.barycentric(k, x)[i];
                let gx = (phi([c[0] + h, c[1]]) - phi([c[0] - h, c[1]])) / (2.0 * h);
                let gy = (phi([c[0], c[1] + h]) - phi([c[0], c[1] - h])) / (2.0 * h);
                mesh.element(k).area * (gx * gx + gy * gy)
            })
            .sum();
        assert!((oracle - 4.0).abs() < 1e-8);
    }

    #[test]
    fn load_vectors() {
        let mesh = make_square_mesh(4).unwrap();
        assert!(assemble_load(&mesh, |_| 0.0).unwrap().iter().all(|&v| v == 0.0));
        let b1: f64 = assemble_load(&mesh, |_| 1.0).unwrap().iter().sum();
        assert!((b1 - 1.0).abs() < 1e-14);
        let bx: f64 = assemble_load(&mesh, |p| p[0]).unwrap().iter().sum();
        assert!((bx - 0.5).abs() < 1e-14);
        assert!(matches!(
            assemble_load(&mesh, |p| if p[0] > 0.9 { f64::NAN } else { 0.0 }),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn point_sources() {
        let mesh = make_square_mesh(2).unwrap();
        let b = point_source_vector(&mesh, [0.5, 0.5], 2.0).unwrap();
        assert_eq!(b[4], 2.0);
        assert_eq!(b.iter().sum::<f64>(), 2.0);

        let k = 3;
        let t = mesh.triangles()[k];
        let c = t.iter().fold([0.0, 0.0], |a, &v| [a[0] + mesh.node(v)[0] / 3.0, a[1] + mesh.node(v)[1] / 3.0]);
        let b = point_source_vector(&mesh, c, 1.0).unwrap();
        for v in t {
            assert!((b[v] - 1.0 / 3.0).abs() < 1e-14);
        }

        // midpoint of the diagonal edge between nodes 0 and 4
        let b = point_source_vector(&mesh, [0.25, 0.25], 1.0).unwrap();
        assert!((b[0] - 0.5).abs() < 1e-15 && (b[4] - 0.5).abs() < 1e-15);
        assert_eq!(b.iter().filter(|&&v| v != 0.0).count(), 2);

        assert!(matches!(point_source_vector(&mesh, [1.5, 0.5], 1.0), Err(Error::PointLocation(_))));
    }

    #[test]
    fn linear_fields_are_reproduced() {
        let mesh = make_disk_mesh([0.0, 0.0], 1.0, 12, 0.4).unwrap();
        let lin = |p: Point| 0.5 - 2.0 * p[0] + 3.0 * p[1];
        let u = ScalarField::interpolate(&mesh, lin);
        for k in 0..mesh.n_triangles() {
            let g = grad_on_element(&mesh, &u.0, k);
            assert!((g[0] + 2.0).abs() < 1e-12 && (g[1] - 3.0).abs() < 1e-12);
        }
        for p in [[0.1, 0.2], [-0.3, 0.4], [0.0, -0.7]] {
            assert!((eval_field(&mesh, &u, p).unwrap() - lin(p)).abs() < 1e-13);
        }
        let v0 = mesh.node(5);
        assert_eq!(eval_field(&mesh, &u, v0).unwrap(), u.0[5]);
        let c = ScalarField(vec![2.0; mesh.n_nodes()]);
        assert!((0..mesh.n_triangles()).all(|k| grad_on_element(&mesh, &c.0, k) == [0.0, 0.0]));
    }
}
