//! Active sets, gradient bundles, the min-norm-point problem on the convex
//! hull of a bundle, and the resulting steepest-descent direction.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{ScalarField, VecField};
use crate::functions::SmoothFn;
use crate::geometry::Mesh;
use crate::pde::{DiffusionLaw, LinearizedOperator, SolveOptions};
use crate::shape_deriv::{assemble_dj, nodal_costs, CostSpec, MetricSpace};

/// Nodes whose cost is within `epsilon` of the maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    /// Sorted by gap, then by node index.
    pub nodes: Vec<usize>,
    pub gaps: Vec<f64>,
    pub epsilon: f64,
    pub j_inf: f64,
    /// Number of nodes attaining the maximum exactly.
    pub n_argmax: usize,
}

impl ActiveSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Active set from nodal cost values: with `m` exact maximizers, `epsilon`
/// is the `(m + n2)`-th smallest gap and every node with gap `<= epsilon`
/// is a member.
pub fn select_active_values(values: &[f64], n2: usize) -> ActiveSet {
    if values.is_empty() {
        return ActiveSet {
            nodes: vec![],
            gaps: vec![],
            epsilon: 0.0,
            j_inf: f64::NEG_INFINITY,
            n_argmax: 0,
        };
    }
    let j_inf = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<(f64, usize)> = values.iter().enumerate().map(|(i, &v)| (j_inf - v, i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n_argmax = order.iter().take_while(|g| g.0 == 0.0).count();
    let rank = (n_argmax + n2).min(order.len());
    let epsilon = if rank == 0 { 0.0 } else { order[rank - 1].0 };
    let members: Vec<_> = order.into_iter().take_while(|g| g.0 <= epsilon).collect();
    ActiveSet {
        nodes: members.iter().map(|g| g.1).collect(),
        gaps: members.iter().map(|g| g.0).collect(),
        epsilon,
        j_inf,
        n_argmax,
    }
}

/// Active set of the nodal costs `Psi(x_i, u_i)`.
pub fn select_active(mesh: &Mesh, u: &ScalarField, spec: &CostSpec, n2: usize) -> Result<ActiveSet> {
    u.check(mesh)?;
    Ok(select_active_values(&nodal_costs(mesh, u, spec), n2))
}

/// Gradients of the pointwise costs at the active nodes and their Gram matrix.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub nodes: Vec<usize>,
    pub gradients: Vec<VecField>,
    pub gram: DMatrix<f64>,
    /// Number of adjoint systems actually solved.
    pub adjoint_solves: usize,
}

impl GradientBundle {
    /// Bundle from given fields; `space` supplies the inner product.
    pub fn from_gradients(nodes: Vec<usize>, gradients: Vec<VecField>, space: &MetricSpace) -> Result<Self> {
        if nodes.len() != gradients.len() || nodes.is_empty() {
            return Err(Error::InvalidArgument("bundle needs one gradient per node".into()));
        }
        let applied: Vec<Vec<f64>> = gradients.iter().map(|x| space.apply(x)).collect::<Result<_>>()?;
        let n = gradients.len();
        let mut gram = DMatrix::zeros(n, n);
        for k in 0..n {
            for l in 0..=k {
                let v: f64 = gradients[k].0.iter().zip(&applied[l]).map(|(a, b)| a * b).sum();
                gram[(k, l)] = v;
                gram[(l, k)] = v;
            }
        }
        Ok(Self {
            nodes,
            gradients,
            gram,
            adjoint_solves: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.gradients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradients.is_empty()
    }

    /// Smallest Gram eigenvalue relative to `-1e-10 trace`; `true` if PSD within that floor.
    pub fn gram_is_psd(&self) -> bool {
        let floor = -1e-10 * self.gram.trace().abs();
        self.gram.clone().symmetric_eigenvalues().iter().all(|&e| e >= floor)
    }

    /// `max_k (X_k, x)` for an arbitrary field.
    pub fn max_inner(&self, space: &MetricSpace, x: &VecField) -> Result<f64> {
        let gx = space.apply(x)?;
        Ok(self
            .gradients
            .iter()
            .map(|xk| xk.0.iter().zip(&gx).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Pointwise gradients at the active nodes. Adjoint solves run in parallel;
/// Dirichlet nodes use `p = 0` without solving.
#[allow(clippy::too_many_arguments)]
pub fn build_bundle(
    mesh: &Mesh,
    u: &ScalarField,
    active: &ActiveSet,
    space: &MetricSpace,
    spec: &CostSpec,
    law: &DiffusionLaw,
    f: &SmoothFn,
    opts: &SolveOptions,
) -> Result<GradientBundle> {
    if active.is_empty() {
        return Err(Error::InvalidArgument("empty active set".into()));
    }
    let needs_solve = active.nodes.iter().any(|&y| !mesh.is_dirichlet(y));
    let op = if needs_solve {
        Some(LinearizedOperator::new(mesh, u, law, opts.linear_tol)?)
    } else {
        None
    };
    let solves = AtomicUsize::new(0);
    let gradients: Vec<VecField> = active
        .nodes
        .par_iter()
        .map(|&y| {
            let x = mesh.node(y);
            let wrap = |e| Error::ActivePoint {
                node: y,
                source: Box::new(e),
            };
            let p = match &op {
                Some(op) if !mesh.is_dirichlet(y) => {
                    solves.fetch_add(1, Ordering::Relaxed);
                    op.solve_point(x, -spec.psi_zeta(x, u.0[y])).map_err(wrap)?
                }
                _ => ScalarField::zeros(mesh),
            };
            let dj = assemble_dj(mesh, u, &p, x, f, spec, law).map_err(wrap)?;
            space.gradient(&dj).map_err(wrap)
        })
        .collect::<Result<_>>()?;
    let mut bundle = GradientBundle::from_gradients(active.nodes.clone(), gradients, space)?;
    bundle.adjoint_solves = solves.into_inner();
    Ok(bundle)
}

/// Minimizer of `a^T Q a` over the unit simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    pub weights: Vec<f64>,
    /// `a^T Q a`, the squared norm of the min-norm point.
    pub value: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl QpResult {
    pub fn norm(&self) -> f64 {
        self.value.max(0.0).sqrt()
    }
}

/// Largest violation of the simplex KKT conditions at `a`: feasibility,
/// `(Qa)_k >= a^T Q a` for all `k`, equality on the support.
pub fn kkt_residual(q: &DMatrix<f64>, a: &[f64]) -> f64 {
    let av = DVector::from_column_slice(a);
    let qa = q * &av;
    let value = av.dot(&qa);
    let mut r = (a.iter().sum::<f64>() - 1.0).abs();
    for (k, &ak) in a.iter().enumerate() {
        r = r.max(-ak).max(value - qa[k]);
        if ak > 0.0 {
            r = r.max((qa[k] - value).abs());
        }
    }
    r
}

// Minimizer of mu^T Q_SS mu with sum(mu) = 1 through the KKT system.
fn affine_minimizer(q: &DMatrix<f64>, support: &[usize]) -> Vec<f64> {
    let m = support.len();
    let mut kkt = DMatrix::zeros(m + 1, m + 1);
    for (i, &si) in support.iter().enumerate() {
        for (j, &sj) in support.iter().enumerate() {
            kkt[(i, j)] = q[(si, sj)];
        }
        kkt[(i, m)] = 1.0;
        kkt[(m, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(m + 1);
    rhs[m] = 1.0;
    let solved = kkt.clone().lu().solve(&rhs).filter(|x| x.iter().all(|v| v.is_finite()));
    let x = solved.unwrap_or_else(|| {
        kkt.svd(true, true)
            .solve(&rhs, 1e-14)
            .unwrap_or_else(|_| DVector::from_element(m + 1, 1.0 / m as f64))
    });
    x.rows(0, m).iter().copied().collect()
}

/// Wolfe's method on the Gram matrix: keep a corral of vertices, minimize
/// over its affine hull, drop vertices whose weight would turn negative, and
/// add the vertex most violating the optimality condition. Ties go to the
/// lowest index.
pub fn min_norm_point(q: &DMatrix<f64>) -> Result<QpResult> {
    let n = q.nrows();
    if n == 0 || q.ncols() != n {
        return Err(Error::InvalidArgument(format!("Gram matrix must be square and nonempty, got {}x{}", n, q.ncols())));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("Gram matrix has non-finite entries".into()));
    }
    let scale = (0..n).map(|i| q[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-13 * scale;
    let cap = 50 * n;

    let start = (0..n).fold(0, |best, i| if q[(i, i)] < q[(best, best)] { i } else { best });
    let mut support = vec![start];
    let mut lambda = vec![0.0; n];
    lambda[start] = 1.0;
    let mut iterations = 0;

    let finish = |lambda: Vec<f64>, iterations| {
        let av = DVector::from_column_slice(&lambda);
        let value = av.dot(&(q * &av));
        QpResult {
            kkt_residual: kkt_residual(q, &lambda),
            weights: lambda,
            value,
            iterations,
        }
    };

    loop {
        // Major cycle: optimality test and vertex insertion.
        let av = DVector::from_column_slice(&lambda);
        let qa = q * &av;
        let value = av.dot(&qa);
        let entering = (0..n).fold(0, |best, i| if qa[i] < qa[best] { i } else { best });
        if qa[entering] >= value - tol || support.contains(&entering) {
            return Ok(finish(lambda, iterations));
        }
        support.push(entering);

        // Minor cycles: project onto the affine hull, trimming the corral.
        loop {
            iterations += 1;
            if iterations > cap {
                let result = finish(lambda, iterations);
                return Err(Error::QpIterationCap {
                    cap,
                    weights: result.weights,
                    kkt_residual: result.kkt_residual,
                });
            }
            let mu = affine_minimizer(q, &support);
            if mu.iter().all(|&m| m > 0.0) {
                for l in lambda.iter_mut() {
                    *l = 0.0;
                }
                for (&s, &m) in support.iter().zip(&mu) {
                    lambda[s] = m;
                }
                break;
            }
            let mut theta = 1.0f64;
            for (&s, &m) in support.iter().zip(&mu) {
                if m <= 0.0 {
                    let l = lambda[s];
                    theta = theta.min(if l - m > 0.0 { l / (l - m) } else { 0.0 });
                }
            }
            for (&s, &m) in support.iter().zip(&mu) {
                lambda[s] += theta * (m - lambda[s]);
            }
            // Drop the vertices that reached zero; always drop at least one.
            let mut drop = support
                .iter()
                .copied()
                .filter(|&s| lambda[s] <= 1e-15)
                .collect::<Vec<_>>();
            if drop.is_empty() {
                let (&s, _) = support
                    .iter()
                    .zip(&mu)
                    .filter(|(_, &m)| m <= 0.0)
                    .min_by(|a, b| lambda[*a.0].total_cmp(&lambda[*b.0]))
                    .expect("a nonpositive weight exists");
                drop.push(s);
            }
            for s in drop {
                lambda[s] = 0.0;
                support.retain(|&x| x != s);
            }
            let total: f64 = support.iter().map(|&s| lambda[s]).sum();
            for &s in &support {
                lambda[s] /= total;
            }
        }
    }
}

/// Normalized steepest-descent direction from a bundle.
#[derive(Debug, Clone)]
pub enum Direction {
    /// `0` lies in the hull of the bundle within the tolerance.
    Stationary { min_norm: f64, qp: QpResult },
    Descent {
        /// `-g_hat / |g_hat|`, unit in the metric.
        g: VecField,
        /// `max_k (X_k, g) = -|g_hat|`.
        psi: f64,
        min_norm: f64,
        qp: QpResult,
    },
}

impl Direction {
    pub fn is_stationary(&self) -> bool {
        matches!(self, Direction::Stationary { .. })
    }

    pub fn min_norm(&self) -> f64 {
        match self {
            Direction::Stationary { min_norm, .. } | Direction::Descent { min_norm, .. } => *min_norm,
        }
    }

    pub fn qp(&self) -> &QpResult {
        match self {
            Direction::Stationary { qp, .. } | Direction::Descent { qp, .. } => qp,
        }
    }
}

/// Default stationarity tolerance `1e-8 (1 + |X_1|)`.
pub fn default_stat_tol(bundle: &GradientBundle) -> f64 {
    1e-8 * (1.0 + bundle.gram[(0, 0)].max(0.0).sqrt())
}

/// Solve the min-norm problem and normalize. `psi` is read off the Gram
/// matrix as `-min_k (Q a)_k / |g_hat|`.
pub fn steepest_direction(bundle: &GradientBundle, stat_tol: f64) -> Result<Direction> {
    if bundle.is_empty() {
        return Err(Error::InvalidArgument("empty bundle".into()));
    }
    let qp = min_norm_point(&bundle.gram)?;
    let len = bundle.gradients[0].0.len();
    let mut g_hat = vec![0.0; len];
    for (a, x) in qp.weights.iter().zip(&bundle.gradients) {
        if *a != 0.0 {
            for (g, v) in g_hat.iter_mut().zip(&x.0) {
                *g += a * v;
            }
        }
    }
    let min_norm = qp.norm();
    if min_norm <= stat_tol {
        return Ok(Direction::Stationary { min_norm, qp });
    }
    let g = VecField(g_hat).scaled(-1.0 / min_norm);
    let av = DVector::from_column_slice(&qp.weights);
    let qa = &bundle.gram * av;
    let psi = -qa.iter().copied().fold(f64::INFINITY, f64::min) / min_norm;
    Ok(Direction::Descent { g, psi, min_norm, qp })
}
