//! Numerical oracles: Taylor remainders of shape derivatives, the
//! derivative-of-max identity, discrete Green function reciprocity, and
//! convergence against the manufactured solution.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::{eval_field, eval_local, ScalarField, VecField};
use crate::functions::{sine_bump, sine_bump_source, SmoothFn};
use crate::nonsmooth::min_norm_point;
use crate::problem::Problem;
use crate::geometry::{deform_mesh, make_disk_mesh, make_square_mesh, DeformMode, Deformed, Mesh, Point, QualityFloors};
use crate::pde::{solve_adjoint_l2, solve_state, DiffusionLaw, LinearizedOperator, SolveOptions};
use crate::shape_deriv::{assemble_dj2, cost_l2, cost_linfty};

/// Which cost a Taylor test perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaylorCost {
    L2,
    /// `Psi(y, u(y))` with `y` the given node, moving with the mesh.
    PointValue { node: usize },
}

#[derive(Debug, Clone)]
pub struct TaylorReport {
    pub steps: Vec<f64>,
    pub remainders: Vec<f64>,
    /// Least-squares slope of `log r` against `log t` (NaN when every remainder is zero).
    pub order: f64,
    pub value: f64,
    pub derivative: f64,
}

fn evaluate(problem: &Problem, mesh: &Mesh, cost: TaylorCost) -> Result<f64> {
    let u = problem.state(mesh)?;
    match cost {
        TaylorCost::L2 => cost_l2(mesh, &u, &problem.spec),
        TaylorCost::PointValue { node } => Ok(problem.spec.psi(mesh.node(node), u.0[node])),
    }
}

/// Remainders are only meaningful well above the solver tolerance.
fn tightened(problem: &Problem) -> Problem {
    let tol = problem.opts.linear_tol.min(TIGHT_TOL);
    problem.clone().with_opts(problem.opts.with_linear_tol(tol))
}

const TIGHT_TOL: f64 = 1e-13;

/// Remainders `|J(Omega_t) - J(Omega) - t dJ(X)|` for `t = t0 2^-k`,
/// `k = 0..n_steps`, with `Omega_t = (id + tX)(Omega)` (all nodes moved).
pub fn taylor_test(
    problem: &Problem,
    mesh: &Mesh,
    cost: TaylorCost,
    x: &VecField,
    t0: f64,
    n_steps: usize,
) -> Result<TaylorReport> {
    x.check(mesh)?;
    let tight = tightened(problem);
    let problem = &tight;
    let u = problem.state(mesh)?;
    let (value, derivative) = match cost {
        TaylorCost::L2 => {
            let target = problem
                .spec
                .target()
                .ok_or_else(|| Error::Config("L2 Taylor test needs a tracking target".into()))?;
            let p = solve_adjoint_l2(mesh, &u, target, &problem.law, &problem.opts)?;
            let dj = assemble_dj2(mesh, &u, &p, &problem.f, &problem.spec, &problem.law)?;
            (cost_l2(mesh, &u, &problem.spec)?, dj.apply(x))
        }
        TaylorCost::PointValue { node } => (
            problem.spec.psi(mesh.node(node), u.0[node]),
            problem.point_derivative(mesh, &u, node, x)?,
        ),
    };

    let floors = QualityFloors::default();
    let mut t0 = t0;
    for _ in 0..30 {
        if deform_mesh(mesh, x, t0, DeformMode::Direct, &floors)?.valid().is_some() {
            break;
        }
        t0 *= 0.5;
    }
    let mut steps = Vec::with_capacity(n_steps);
    let mut remainders = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let t = t0 * 0.5f64.powi(k as i32);
        let moved = match deform_mesh(mesh, x, t, DeformMode::Direct, &floors)? {
            Deformed::Valid(m) => m,
            Deformed::Invalid(r) => return Err(Error::InvalidMesh(r)),
        };
        let jt = evaluate(problem, &moved, cost)?;
        steps.push(t);
        remainders.push((jt - value - t * derivative).abs());
    }
    Ok(TaylorReport {
        order: fitted_order(&steps, &remainders),
        steps,
        remainders,
        value,
        derivative,
    })
}

/// Least-squares slope of `log y` against `log x` over positive entries.
pub fn fitted_order(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct DanskinReport {
    /// `(J(Omega_t) - J(Omega)) / t`.
    pub finite_difference: f64,
    /// `max_{y in argmax} dj(Omega^y)(X)`.
    pub max_derivative: f64,
    pub argmax: Vec<usize>,
    pub discrepancy: f64,
}

/// Relative gap below which nodes count as maximizers; symmetric meshes
/// produce ties that rounding splits at this level.
pub const ARGMAX_TIE_TOL: f64 = 1e-10;

/// Compares the one-sided difference quotient of the max-type cost with the
/// max of the pointwise derivatives over the argmax set (ties up to
/// [`ARGMAX_TIE_TOL`]).
pub fn danskin_check(problem: &Problem, mesh: &Mesh, x: &VecField, t: f64) -> Result<DanskinReport> {
    let tight = tightened(problem);
    let problem = &tight;
    let u = problem.state(mesh)?;
    let (j0, _) = cost_linfty(mesh, &u, &problem.spec)?;
    let tie = ARGMAX_TIE_TOL * j0.abs().max(1.0);
    let argmax: Vec<usize> = mesh
        .nodes()
        .iter()
        .zip(&u.0)
        .enumerate()
        .filter(|(_, (&p, &z))| j0 - problem.spec.psi(p, z) <= tie)
        .map(|(i, _)| i)
        .collect();
    let mut max_derivative = f64::NEG_INFINITY;
    for &y in &argmax {
        max_derivative = max_derivative.max(problem.point_derivative(mesh, &u, y, x)?);
    }
    let moved = match deform_mesh(mesh, x, t, DeformMode::Direct, &QualityFloors::default())? {
        Deformed::Valid(m) => m,
        Deformed::Invalid(r) => return Err(Error::InvalidMesh(r)),
    };
    let ut = problem.state(&moved)?;
    let (jt, _) = cost_linfty(&moved, &ut, &problem.spec)?;
    let finite_difference = if t == 0.0 { 0.0 } else { (jt - j0) / t };
    Ok(DanskinReport {
        finite_difference,
        max_derivative,
        argmax,
        discrepancy: (finite_difference - max_derivative).abs(),
    })
}

/// `|G_h(y1, y2) - G_h(y2, y1)|` for the discrete Green function of the
/// linearized operator (unit point loads).
pub fn reciprocity_check(mesh: &Mesh, law: &DiffusionLaw, y1: Point, y2: Point, tol: f64) -> Result<f64> {
    let u = ScalarField::zeros(mesh);
    let op = LinearizedOperator::new(mesh, &u, law, tol)?;
    let g1 = op.solve_point(y1, 1.0)?;
    let g2 = op.solve_point(y2, 1.0)?;
    Ok((eval_field(mesh, &g1, y2)? - eval_field(mesh, &g2, y1)?).abs())
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub levels: Vec<usize>,
    pub h: Vec<f64>,
    pub l2_errors: Vec<f64>,
    pub max_errors: Vec<f64>,
    pub l2_rate: f64,
}

// Degree-5 seven-point rule for error norms: (barycentric, weight fraction).
const ERROR_RULE: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    ([0.059715871789770, 0.470142064105115, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.059715871789770, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.470142064105115, 0.059715871789770], 0.132394152788506),
    ([0.797426985353087, 0.101286507323456, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.797426985353087, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.101286507323456, 0.797426985353087], 0.125939180544827),
];

/// `||u_h - exact||_L2` with a degree-5 rule.
pub fn l2_error(mesh: &Mesh, u: &ScalarField, exact: &SmoothFn) -> f64 {
    let mut total = 0.0;
    for k in 0..mesh.n_triangles() {
        let e = mesh.element(k);
        let p = e.nodes.map(|v| mesh.node(v));
        for (bary, w) in ERROR_RULE {
            let x = [
                bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
                bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
            ];
            let r = eval_local(mesh, &u.0, k, bary) - exact.eval(x);
            total += w * e.area * r * r;
        }
    }
    total.sqrt()
}

/// Errors of the state against `exact` on uniform unit-square meshes.
pub fn convergence_study_with(levels: &[usize], f: &SmoothFn, exact: &SmoothFn) -> Result<ConvergenceReport> {
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("refinement levels must increase".into()));
    }
    let law = DiffusionLaw::constant(1.0);
    let opts = SolveOptions::default().with_linear_tol(1e-12);
    let (mut h, mut l2_errors, mut max_errors) = (vec![], vec![], vec![]);
    for &n in levels {
        let mesh = make_square_mesh(n)?;
        let u = solve_state(&mesh, f, &law, &opts)?.u;
        h.push(1.0 / n as f64);
        l2_errors.push(l2_error(&mesh, &u, exact));
        max_errors.push(
            mesh.nodes()
                .iter()
                .zip(&u.0)
                .map(|(&x, &v)| (v - exact.eval(x)).abs())
                .fold(0.0, f64::max),
        );
    }
    Ok(ConvergenceReport {
        l2_rate: fitted_order(&h, &l2_errors),
        levels: levels.to_vec(),
        h,
        l2_errors,
        max_errors,
    })
}

/// Convergence against `sin(pi x1) sin(pi x2)` on the unit square.
pub fn convergence_study(levels: &[usize]) -> Result<ConvergenceReport> {
    convergence_study_with(levels, &sine_bump_source(), &sine_bump())
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub test: String,
    pub metric: String,
    pub value: f64,
    pub pass: bool,
}

impl ReportRow {
    pub fn new(test: impl Into<String>, metric: impl Into<String>, value: f64, pass: bool) -> Self {
        Self {
            test: test.into(),
            metric: metric.into(),
            value,
            pass,
        }
    }
}

/// A smooth random displacement field: a few random sine modes per
/// component, scaled so that `max |X| <= amplitude`.
pub fn random_smooth_field(mesh: &Mesh, rng: &mut impl Rng, amplitude: f64) -> VecField {
    let modes: Vec<[f64; 4]> = (0..6)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    let eval = |m: &[[f64; 4]], p: Point| m.iter().map(|c| c[0] * (c[1] * p[0] + c[2] * p[1] + c[3]).sin()).sum::<f64>();
    let x = VecField::interpolate(mesh, |p| [eval(&modes[..3], p), eval(&modes[3..], p)]);
    let m = x.max_abs();
    if m > 0.0 {
        x.scaled(amplitude / m)
    } else {
        x
    }
}

/// Interior node with the largest pointwise cost (lowest index on ties).
pub fn interior_argmax(problem: &Problem, mesh: &Mesh) -> Result<usize> {
    let u = problem.state(mesh)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, (&x, &z)) in mesh.nodes().iter().zip(&u.0).enumerate() {
        if mesh.is_dirichlet(i) {
            continue;
        }
        let v = problem.spec.psi(x, z);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::InvalidArgument("mesh has no interior nodes".into()))
}

pub const TAYLOR_MIN_ORDER: f64 = 1.9;
pub const RECIPROCITY_TOL: f64 = 1e-9;
pub const CONVERGENCE_MIN_RATE: f64 = 1.9;
pub const KKT_TOL: f64 = 1e-9;

/// Meshes used by the Taylor suite: the uniform `n = 16` square and a disk
/// with 64 boundary nodes.
pub fn taylor_meshes() -> Result<Vec<(&'static str, Mesh)>> {
    let chord = 2.0 * 1.5 * (std::f64::consts::PI / 64.0).sin();
    Ok(vec![
        ("square16", make_square_mesh(16)?),
        ("disk64", make_disk_mesh([0.5, 0.5], 1.5, 64, chord)?),
    ])
}

/// Taylor remainders for `J2` and the point cost at the interior argmax,
/// `t = 2^-k` for `k = 2..8`.
pub fn taylor_suite(problem: &Problem, rng: &mut impl Rng) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for (name, mesh) in taylor_meshes()? {
        let x = random_smooth_field(&mesh, rng, 0.05);
        let node = interior_argmax(problem, &mesh)?;
        for (label, cost) in [("l2", TaylorCost::L2), ("point", TaylorCost::PointValue { node })] {
            let rep = taylor_test(problem, &mesh, cost, &x, 0.25, 7)?;
            rows.push(ReportRow::new(
                format!("taylor_{label}_{name}"),
                "order",
                rep.order,
                rep.order >= TAYLOR_MIN_ORDER,
            ));
        }
    }
    Ok(rows)
}

/// Discrepancies of the max-derivative identity at `t, t/2, t/4, t/8`.
pub fn danskin_sequence(problem: &Problem, mesh: &Mesh, x: &VecField, t: f64) -> Result<Vec<DanskinReport>> {
    (0..4).map(|k| danskin_check(problem, mesh, x, t * 0.5f64.powi(k))).collect()
}

/// Off-center disk, so that the maximizer of the toy cost is unique.
pub fn danskin_mesh() -> Result<Mesh> {
    let chord = 2.0 * 1.4 * (std::f64::consts::PI / 64.0).sin();
    make_disk_mesh([0.45, 0.6], 1.4, 64, chord)
}

pub fn danskin_suite(problem: &Problem, rng: &mut impl Rng) -> Result<Vec<ReportRow>> {
    let mesh = danskin_mesh()?;
    let x = random_smooth_field(&mesh, rng, 1.0);
    let seq = danskin_sequence(problem, &mesh, &x, 1e-3)?;
    let unique = seq[0].argmax.len() == 1;
    let t: Vec<f64> = (0..4).map(|k| 1e-3 * 0.5f64.powi(k)).collect();
    let d: Vec<f64> = seq.iter().map(|r| r.discrepancy).collect();
    let order = fitted_order(&t, &d);
    Ok(vec![
        ReportRow::new("danskin", "argmax_count", seq[0].argmax.len() as f64, unique),
        ReportRow::new("danskin", "discrepancy", d[0], d.windows(2).all(|w| w[1] < w[0])),
        ReportRow::new("danskin", "order", order, order >= 0.9),
    ])
}

pub fn reciprocity_suite(rng: &mut impl Rng) -> Result<Vec<ReportRow>> {
    let mesh = make_square_mesh(16)?;
    let law = DiffusionLaw::constant(1.0);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mut pick = || [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
        let (y1, y2) = (pick(), pick());
        worst = worst.max(reciprocity_check(&mesh, &law, y1, y2, 1e-12)?);
    }
    Ok(vec![ReportRow::new("reciprocity", "max_discrepancy", worst, worst <= RECIPROCITY_TOL)])
}

pub fn convergence_suite(levels: &[usize]) -> Result<Vec<ReportRow>> {
    let rep = convergence_study(levels)?;
    let monotone = rep.l2_errors.windows(2).all(|w| w[1] < w[0]);
    Ok(vec![
        ReportRow::new("convergence", "l2_rate", rep.l2_rate, rep.l2_rate >= CONVERGENCE_MIN_RATE),
        ReportRow::new("convergence", "finest_l2_error", *rep.l2_errors.last().unwrap_or(&f64::NAN), monotone),
    ])
}

/// Random Gram matrix of `n` vectors in `R^dim`.
pub fn random_gram(rng: &mut impl Rng, n: usize, dim: usize) -> DMatrix<f64> {
    let v = DMatrix::from_fn(dim, n, |_, _| rng.gen_range(-1.0..1.0));
    v.transpose() * v
}

/// KKT residuals of the min-norm solver on random Gram matrices, and the
/// antipodal pair.
pub fn qp_suite(rng: &mut impl Rng) -> Result<Vec<ReportRow>> {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(1..=4);
        let dim = rng.gen_range(1..=4);
        worst = worst.max(min_norm_point(&random_gram(rng, n, dim))?.kkt_residual);
    }
    let a = rng.gen_range(0.1..10.0);
    let antipodal = DMatrix::from_row_slice(2, 2, &[a, -a, -a, a]);
    let r = min_norm_point(&antipodal)?;
    Ok(vec![
        ReportRow::new("qp", "max_kkt_residual", worst, worst <= KKT_TOL),
        ReportRow::new("qp", "antipodal_min_norm", r.norm(), r.norm() == 0.0),
    ])
}

/// Runs one named suite: `taylor`, `danskin`, `reciprocity`, `convergence` or `qp`.
pub fn run_suite(name: &str, problem: &Problem, seed: u64, levels: &[usize]) -> Result<Vec<ReportRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match name {
        "taylor" => taylor_suite(problem, &mut rng),
        "danskin" => danskin_suite(problem, &mut rng),
        "reciprocity" => reciprocity_suite(&mut rng),
        "convergence" => convergence_suite(levels),
        "qp" => qp_suite(&mut rng),
        other => Err(Error::InvalidArgument(format!("unknown suite `{other}`"))),
    }
}
