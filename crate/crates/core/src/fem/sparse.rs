use crate::error::{Error, Result};

/// Row-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yr = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `x . (A y)`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n)
            .map(|r| x[r] * self.row(r).map(|(c, v)| v * y[c]).sum::<f64>())
            .sum()
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst / scale
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                d[r][c] = v;
            }
        }
        d
    }
}

/// Symmetric operator with right-hand side and Dirichlet constraints.
#[derive(Debug, Clone)]
pub struct SparseSymSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Constrained nodes and their prescribed values.
    pub dirichlet: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;

impl SparseSymSystem {
    pub fn new(matrix: CsrMatrix, rhs: Vec<f64>) -> Self {
        Self {
            matrix,
            rhs,
            dirichlet: Vec::new(),
        }
    }

    pub fn with_dirichlet(mut self, dirichlet: Vec<(usize, f64)>) -> Self {
        self.dirichlet = dirichlet;
        self
    }

    pub fn solve(&self, tol: f64) -> Result<Vec<f64>> {
        solve_spd(self, tol).map(|(x, _)| x)
    }
}

/// Diagonally preconditioned conjugate gradients on the free nodes after
/// symmetric elimination of the Dirichlet rows and columns.
pub fn solve_spd(system: &SparseSymSystem, tol: f64) -> Result<(Vec<f64>, SolveStats)> {
    let a = &system.matrix;
    let n = a.dim();
    if system.rhs.len() != n {
        return Err(Error::MeshMismatch {
            expected: n,
            found: system.rhs.len(),
        });
    }
    let mut free = vec![true; n];
    let mut x = vec![0.0; n];
    for &(i, v) in &system.dirichlet {
        free[i] = false;
        x[i] = v;
    }

    // r = b - A x_D on free rows
    let mut r = a.mul_vec(&x);
    for i in 0..n {
        r[i] = if free[i] { system.rhs[i] - r[i] } else { 0.0 };
    }
    let b_norm = norm(&r);
    let n_free = free.iter().filter(|&&f| f).count();
    if b_norm == 0.0 || n_free == 0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }

    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .zip(&free)
        .map(|(&d, &f)| if f && d > 0.0 { 1.0 / d } else { 0.0 })
        .collect();
    let cap = ((20.0 * (n_free as f64).sqrt()).ceil() as usize).max(20);

    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut dx = vec![0.0; n];
    let mut rel = 1.0;
    for it in 1..=cap {
        a.mul_vec_into(&p, &mut ap);
        for i in 0..n {
            if !free[i] {
                ap[i] = 0.0;
            }
        }
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver {
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            dx[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = norm(&r) / b_norm;
        if rel <= tol {
            for i in 0..n {
                x[i] += dx[i];
            }
            return Ok((
                x,
                SolveStats {
                    iterations: it,
                    relative_residual: rel,
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver {
        iterations: cap,
        residual: rel,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
