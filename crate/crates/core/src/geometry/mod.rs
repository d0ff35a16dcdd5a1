//! Planar triangulations: construction, quality control, point location and
//! deformation under displacement fields.

mod delaunay;
mod deform;
mod generate;

use std::cell::Cell;
use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use deform::{deform_mesh, DeformMode, Deformed};
pub use generate::{disk_spacing, make_disk_mesh, make_square_mesh};

/// A point in the plane.
pub type Point = [f64; 2];

/// Barycentric coordinates at or above `-BARY_TOL` count as inside a triangle.
pub(crate) const BARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeMarker {
    Interior,
    Dirichlet,
}

/// Validity floors applied to meshes produced by deformation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityFloors {
    pub area_floor: f64,
    /// Radians.
    pub angle_floor: f64,
}

impl Default for QualityFloors {
    fn default() -> Self {
        Self {
            area_floor: 1e-10,
            angle_floor: 1f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshQualityReport {
    pub min_area: f64,
    /// Radians.
    pub min_angle: f64,
    /// Largest ratio of element diameter to inscribed-circle diameter.
    pub max_aspect: f64,
    pub boundary_simple: bool,
    pub is_valid: bool,
}

/// Connectivity shared between a mesh and all of its deformations.
#[derive(Debug)]
struct Topology {
    triangles: Vec<[usize; 3]>,
    /// `neighbors[k][i]` is the triangle across the edge opposite local vertex `i`.
    neighbors: Vec<[Option<usize>; 3]>,
    boundary: Vec<usize>,
    markers: Vec<NodeMarker>,
}

/// Per-element geometric data of a P1 triangle.
#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub nodes: [usize; 3],
    pub area: f64,
    /// Gradients of the three barycentric coordinate functions.
    pub grads: [[f64; 2]; 3],
}

/// Containing triangle and barycentric coordinates of a located point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub triangle: usize,
    pub bary: [f64; 3],
}

/// A conforming triangulation with counterclockwise elements and an ordered,
/// counterclockwise boundary polygon.
#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Point>,
    topology: Arc<Topology>,
    h_max: f64,
}

impl Mesh {
    /// Builds a mesh from nodes and triangles. The boundary polygon is derived
    /// from edges that belong to exactly one triangle and every boundary node
    /// is marked Dirichlet.
    pub fn new(nodes: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::Geometry("mesh has no triangles".into()));
        }
        let n = nodes.len();
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(Error::Geometry(format!("triangle {k} references a missing node")));
            }
            let a = signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]);
            if !(a > 0.0) {
                return Err(Error::Geometry(format!(
                    "triangle {k} has non-positive signed area {a:e}"
                )));
            }
        }

        let mut edge_owner: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        let mut neighbors = vec![[None; 3]; triangles.len()];
        for (k, t) in triangles.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = (t[(i + 1) % 3], t[(i + 2) % 3]);
                let key = (a.min(b), a.max(b));
                match edge_owner.remove(&key) {
                    Some((other, j)) => {
                        if neighbors[other][j].is_some() {
                            return Err(Error::Geometry(format!(
                                "edge ({a}, {b}) is shared by more than two triangles"
                            )));
                        }
                        neighbors[other][j] = Some(k);
                        neighbors[k][i] = Some(other);
                    }
                    None => {
                        edge_owner.insert(key, (k, i));
                    }
                }
            }
        }

        // Remaining edges lie on the boundary; orient them as in their triangle.
        let mut next: HashMap<usize, usize> = HashMap::new();
        for (&_, &(k, i)) in &edge_owner {
            let t = triangles[k];
            let (a, b) = (t[(i + 1) % 3], t[(i + 2) % 3]);
            if next.insert(a, b).is_some() {
                return Err(Error::Geometry(format!("boundary is not a simple loop at node {a}")));
            }
        }
        let start = *next
            .keys()
            .min()
            .ok_or_else(|| Error::Geometry("mesh has no boundary".into()))?;
        let mut boundary = vec![start];
        let mut cur = next[&start];
        while cur != start {
            if boundary.len() > next.len() {
                return Err(Error::Geometry("boundary edges do not close".into()));
            }
            boundary.push(cur);
            cur = *next
                .get(&cur)
                .ok_or_else(|| Error::Geometry(format!("boundary chain breaks at node {cur}")))?;
        }
        if boundary.len() != next.len() {
            return Err(Error::Geometry(
                "boundary consists of more than one loop".into(),
            ));
        }

        let mut markers = vec![NodeMarker::Interior; n];
        for &b in &boundary {
            markers[b] = NodeMarker::Dirichlet;
        }
        let mesh = Mesh {
            h_max: compute_h_max(&nodes, &triangles),
            nodes,
            topology: Arc::new(Topology {
                triangles,
                neighbors,
                boundary,
                markers,
            }),
        };
        if !polygon_is_simple(&mesh.boundary_points()) {
            return Err(Error::Geometry("boundary polygon self-intersects".into()));
        }
        Ok(mesh)
    }

    /// Same connectivity, new node positions. Validity is the caller's concern.
    pub(crate) fn with_nodes(&self, nodes: Vec<Point>) -> Mesh {
        debug_assert_eq!(nodes.len(), self.nodes.len());
        Mesh {
            h_max: compute_h_max(&nodes, &self.topology.triangles),
            nodes,
            topology: Arc::clone(&self.topology),
        }
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Point {
        self.nodes[i]
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.topology.triangles
    }

    pub fn n_triangles(&self) -> usize {
        self.topology.triangles.len()
    }

    /// Boundary node indices in counterclockwise order; the polygon closes
    /// implicitly from the last node back to the first.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.topology.boundary
    }

    pub fn boundary_points(&self) -> Vec<Point> {
        self.topology.boundary.iter().map(|&i| self.nodes[i]).collect()
    }

    pub fn markers(&self) -> &[NodeMarker] {
        &self.topology.markers
    }

    pub fn is_dirichlet(&self, node: usize) -> bool {
        self.topology.markers[node] == NodeMarker::Dirichlet
    }

    pub fn dirichlet_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.topology
            .markers
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == NodeMarker::Dirichlet)
            .map(|(i, _)| i)
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    /// Shares connectivity with `other` (same node count and triangles).
    pub fn same_topology(&self, other: &Mesh) -> bool {
        Arc::ptr_eq(&self.topology, &other.topology)
            || (self.topology.triangles == other.topology.triangles
                && self.topology.markers == other.topology.markers)
    }

    pub fn element(&self, k: usize) -> Element {
        let t = self.topology.triangles[k];
        let [p0, p1, p2] = [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]];
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        // grad(lambda_i) = rot90(p_{i+2} - p_{i+1}) / det
        let g = |a: Point, b: Point| [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
        Element {
            nodes: t,
            area: 0.5 * det,
            grads: [g(p1, p2), g(p2, p0), g(p0, p1)],
        }
    }

    pub fn elements(&self) -> impl Iterator<Item = Element> + '_ {
        (0..self.n_triangles()).map(move |k| self.element(k))
    }

    pub fn total_area(&self) -> f64 {
        self.elements().map(|e| e.area).sum()
    }

    /// Barycentric coordinates of `p` with respect to triangle `k`.
    pub fn barycentric(&self, k: usize, p: Point) -> [f64; 3] {
        let t = self.topology.triangles[k];
        let [a, b, c] = [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]];
        let det = signed_area(a, b, c);
        [
            signed_area(p, b, c) / det,
            signed_area(a, p, c) / det,
            signed_area(a, b, p) / det,
        ]
    }

    /// Brute-force point location; on shared edges or vertices the lowest
    /// triangle index wins.
    pub fn locate(&self, p: Point) -> Result<Location> {
        for k in 0..self.n_triangles() {
            let bary = self.barycentric(k, p);
            if bary.iter().all(|&l| l >= -BARY_TOL) {
                return Ok(Location {
                    triangle: k,
                    bary: clean_bary(bary),
                });
            }
        }
        Err(Error::PointLocation(p))
    }

    /// Index of the node located exactly at `p`, if any.
    pub fn node_at(&self, p: Point) -> Option<usize> {
        self.nodes.iter().position(|q| q[0] == p[0] && q[1] == p[1])
    }

    pub fn quality(&self, floors: &QualityFloors) -> MeshQualityReport {
        let mut min_area = f64::INFINITY;
        let mut min_angle = f64::INFINITY;
        let mut max_aspect = 0.0f64;
        for t in self.triangles() {
            let [a, b, c] = [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]];
            let area = signed_area(a, b, c);
            min_area = min_area.min(area);
            let (la, lb, lc) = (dist(b, c), dist(c, a), dist(a, b));
            if area > 0.0 {
                for (opp, s1, s2) in [(la, lb, lc), (lb, lc, la), (lc, la, lb)] {
                    let cos = ((s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2)).clamp(-1.0, 1.0);
                    min_angle = min_angle.min(cos.acos());
                }
                let diameter = la.max(lb).max(lc);
                let inscribed = 4.0 * area / (la + lb + lc);
                max_aspect = max_aspect.max(diameter / inscribed);
            } else {
                min_angle = 0.0;
                max_aspect = f64::INFINITY;
            }
        }
        let boundary_simple = polygon_is_simple(&self.boundary_points());
        MeshQualityReport {
            min_area,
            min_angle,
            max_aspect,
            boundary_simple,
            is_valid: min_area > floors.area_floor && min_angle > floors.angle_floor,
        }
    }
}

/// Point locator that walks from the previously found triangle and falls
/// back to the brute-force scan. Results match [`Mesh::locate`].
pub struct Locator<'a> {
    mesh: &'a Mesh,
    hint: Cell<usize>,
}

impl<'a> Locator<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
        Self {
            mesh,
            hint: Cell::new(0),
        }
    }

    pub fn locate(&self, p: Point) -> Result<Location> {
        let mesh = self.mesh;
        let mut k = self.hint.get().min(mesh.n_triangles() - 1);
        for _ in 0..mesh.n_triangles() {
            let bary = mesh.barycentric(k, p);
            let (imin, lmin) = bary
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, l)| if l < acc.1 { (i, l) } else { acc });
            if lmin >= -BARY_TOL {
                if lmin <= BARY_TOL {
                    // on an edge or vertex: defer to the lowest-index rule
                    break;
                }
                self.hint.set(k);
                return Ok(Location {
                    triangle: k,
                    bary: clean_bary(bary),
                });
            }
            match mesh.topology.neighbors[k][imin] {
                Some(next) => k = next,
                None => break,
            }
        }
        let loc = mesh.locate(p)?;
        self.hint.set(loc.triangle);
        Ok(loc)
    }
}

fn clean_bary(mut bary: [f64; 3]) -> [f64; 3] {
    for l in &mut bary {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    let s: f64 = bary.iter().sum();
    for l in &mut bary {
        *l /= s;
    }
    bary
}

fn compute_h_max(nodes: &[Point], triangles: &[[usize; 3]]) -> f64 {
    triangles
        .iter()
        .flat_map(|t| {
            [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]
                .map(|(a, b)| dist(nodes[a], nodes[b]))
        })
        .fold(0.0, f64::max)
}

pub(crate) fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Shoelace area of a closed polygon (positive when counterclockwise).
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = signed_area(q1, q2, p1);
    let d2 = signed_area(q1, q2, p2);
    let d3 = signed_area(p1, p2, q1);
    let d4 = signed_area(p1, p2, q2);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0
}

/// True when no two non-adjacent edges of the closed polygon intersect.
pub fn polygon_is_simple(poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    // bounding boxes are checked first; polygons here have at most a few
    // hundred vertices
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if a[0].max(b[0]) < c[0].min(d[0])
                || c[0].max(d[0]) < a[0].min(b[0])
                || a[1].max(b[1]) < c[1].min(d[1])
                || c[1].max(d[1]) < a[1].min(b[1])
            {
                continue;
            }
            if segments_cross(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + s * dx, a[1] + s * dy])
}

/// Distance from a point to a closed polygonal curve.
pub fn distance_to_polygon(p: Point, poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| point_segment_distance(p, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Hausdorff distance between two closed polygonal curves, with edges
/// sampled at spacing `resolution`.
pub fn hausdorff_distance(a: &[Point], b: &[Point], resolution: f64) -> f64 {
    directed_hausdorff(a, b, resolution).max(directed_hausdorff(b, a, resolution))
}

fn directed_hausdorff(from: &[Point], to: &[Point], resolution: f64) -> f64 {
    let n = from.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        let (a, b) = (from[i], from[(i + 1) % n]);
        let steps = ((dist(a, b) / resolution).ceil() as usize).max(1);
        for s in 0..steps {
            let w = s as f64 / steps as f64;
            let p = [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])];
            worst = worst.max(distance_to_polygon(p, to));
        }
    }
    worst
}

/// Counterclockwise corners of an axis-aligned rectangle.
pub fn rectangle(lo: Point, hi: Point) -> Vec<Point> {
    vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]]
}
