use std::f64::consts::PI;

use super::{delaunay, Mesh, Point};
use crate::error::{Error, Result};

/// Uniform right-triangle mesh of the unit square with `n` cells per side.
pub fn make_square_mesh(n: usize) -> Result<Mesh> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "square mesh needs at least 2 subdivisions, got {n}"
        )));
    }
    let h = 1.0 / n as f64;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 * h, j as f64 * h]);
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Mesh::new(nodes, triangles)
}

/// Lattice spacing for which a disk mesh has roughly `target_nodes` nodes.
pub fn disk_spacing(radius: f64, n_boundary: usize, target_nodes: usize) -> f64 {
    let interior = target_nodes.saturating_sub(n_boundary).max(1) as f64;
    (PI * radius * radius / (interior * 3f64.sqrt() / 2.0)).sqrt()
}

/// Triangulates the regular `n_boundary`-gon inscribed in the circle of the
/// given center and radius. Interior nodes come from a triangular lattice of
/// spacing `target_h` clipped away from the boundary, smoothed, and
/// Delaunay-triangulated.
pub fn make_disk_mesh(center: Point, radius: f64, n_boundary: usize, target_h: f64) -> Result<Mesh> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!("disk radius must be positive, got {radius}")));
    }
    if n_boundary < 8 {
        return Err(Error::InvalidArgument(format!(
            "disk mesh needs at least 8 boundary nodes, got {n_boundary}"
        )));
    }
    if !(target_h > 0.0) || !target_h.is_finite() {
        return Err(Error::InvalidArgument(format!("target_h must be positive, got {target_h}")));
    }

    let boundary: Vec<Point> = (0..n_boundary)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n_boundary as f64;
            [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
        })
        .collect();
    let chord = 2.0 * radius * (PI / n_boundary as f64).sin();
    let apothem = radius * (PI / n_boundary as f64).cos();
    let keep_within = apothem - (0.6 * target_h).max(0.5 * chord);

    let mut interior = Vec::new();
    let dy = target_h * 3f64.sqrt() / 2.0;
    let rows = (radius / dy).ceil() as i64 + 1;
    let cols = (radius / target_h).ceil() as i64 + 1;
    for r in -rows..=rows {
        let shift = if r.rem_euclid(2) == 1 { 0.5 * target_h } else { 0.0 };
        for c in -cols..=cols {
            let p = [c as f64 * target_h + shift, r as f64 * dy];
            if p[0].hypot(p[1]) < keep_within {
                interior.push([center[0] + p[0], center[1] + p[1]]);
            }
        }
    }

    // boundary nodes first in the node list, but inserted last
    let nb = boundary.len();
    let mut nodes = boundary;
    nodes.extend_from_slice(&interior);
    let order: Vec<usize> = (nb..nodes.len()).chain(0..nb).collect();
    let mut triangles = triangulate_in_order(&nodes, &order);

    // a few Laplacian sweeps to even out the clipped layer, then re-triangulate
    for _ in 0..5 {
        let mut sum = vec![[0.0f64; 2]; nodes.len()];
        let mut cnt = vec![0usize; nodes.len()];
        for t in &triangles {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                sum[a][0] += nodes[b][0];
                sum[a][1] += nodes[b][1];
                cnt[a] += 1;
            }
        }
        for v in nb..nodes.len() {
            if cnt[v] > 0 {
                nodes[v] = [sum[v][0] / cnt[v] as f64, sum[v][1] / cnt[v] as f64];
            }
        }
        triangles = triangulate_in_order(&nodes, &order);
    }
    Mesh::new(nodes, triangles)
}

fn triangulate_in_order(nodes: &[Point], order: &[usize]) -> Vec<[usize; 3]> {
    let pts: Vec<Point> = order.iter().map(|&i| nodes[i]).collect();
    delaunay::triangulate(&pts)
        .into_iter()
        .map(|t| t.map(|i| order[i]))
        .collect()
}
