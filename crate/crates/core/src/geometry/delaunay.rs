//! Incremental Bowyer-Watson Delaunay triangulation of a point set.

use std::collections::HashMap;

use super::{signed_area, Point};

#[derive(Clone, Copy)]
struct Tri {
    v: [usize; 3],
    center: Point,
    radius2: f64,
}

impl Tri {
    fn new(v: [usize; 3], pts: &[Point]) -> Self {
        let (center, radius2) = circumcircle(pts[v[0]], pts[v[1]], pts[v[2]]);
        Tri { v, center, radius2 }
    }

    fn encloses(&self, p: Point) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        dx * dx + dy * dy < self.radius2 * (1.0 - 1e-12)
    }
}

fn circumcircle(a: Point, b: Point, c: Point) -> (Point, f64) {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    ([a[0] + ux, a[1] + uy], ux * ux + uy * uy)
}

/// Delaunay triangulation of `points`, counterclockwise triangles indexing
/// into `points`. Points are inserted in the given order.
pub(crate) fn triangulate(points: &[Point]) -> Vec<[usize; 3]> {
    let n = points.len();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-300);
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let mut pts = points.to_vec();
    pts.push([mid[0] - 50.0 * span, mid[1] - 40.0 * span]);
    pts.push([mid[0] + 50.0 * span, mid[1] - 40.0 * span]);
    pts.push([mid[0], mid[1] + 50.0 * span]);

    let mut tris = vec![Tri::new([n, n + 1, n + 2], &pts)];
    let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        let mut bad = Vec::new();
        let mut k = 0;
        while k < tris.len() {
            if tris[k].encloses(p) {
                bad.push(tris.swap_remove(k));
            } else {
                k += 1;
            }
        }
        edge_count.clear();
        for t in &bad {
            for j in 0..3 {
                let (a, b) = (t.v[j], t.v[(j + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        for t in &bad {
            for j in 0..3 {
                let (a, b) = (t.v[j], t.v[(j + 1) % 3]);
                if edge_count[&(a.min(b), a.max(b))] == 1 {
                    // cavity edges keep the ccw orientation of the removed triangle
                    tris.push(Tri::new([a, b, i], &pts));
                }
            }
        }
    }

    tris.into_iter()
        .filter(|t| t.v.iter().all(|&v| v < n))
        .map(|t| {
            let v = t.v;
            if signed_area(points[v[0]], points[v[1]], points[v[2]]) < 0.0 {
                [v[0], v[2], v[1]]
            } else {
                v
            }
        })
        .collect()
}
