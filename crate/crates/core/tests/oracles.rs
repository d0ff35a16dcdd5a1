//! Independent oracles for discretization, adjoints and shape derivatives.

use nonsmooth_shape::fem::{assemble_load, assemble_operator, DiffusionWeight, ScalarField, VecField};
use nonsmooth_shape::functions::{sine_bump, sine_bump_source, SmoothFn};
use nonsmooth_shape::geometry::{
    deform_mesh, disk_spacing, make_disk_mesh, make_square_mesh, DeformMode, Deformed, Mesh, QualityFloors,
};
use nonsmooth_shape::nonsmooth::{build_bundle, select_active, steepest_direction, Direction};
use nonsmooth_shape::pde::{solve_adjoint_l2, solve_state, state_residual, DiffusionLaw, SolveOptions};
use nonsmooth_shape::problem::Problem;
use nonsmooth_shape::shape_deriv::{
    assemble_dj, assemble_dj2, cost_l2, cost_linfty, CostSpec, Metric, MetricSpace,
};
use nonsmooth_shape::verify::{
    danskin_check, danskin_mesh, danskin_sequence, fitted_order, random_smooth_field, taylor_test, TaylorCost,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_disk() -> Mesh {
    make_disk_mesh([0.5, 0.5], 1.5, 48, disk_spacing(1.5, 48, 260)).unwrap()
}

// Dense Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let m = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= m * a[k][j];
            }
            b[i] -= m * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

#[test]
fn state_matches_dense_solve() {
    let mesh = make_square_mesh(4).unwrap();
    let f = sine_bump_source();
    let a = assemble_operator(&mesh, &DiffusionWeight::Scalar(1.0), 1.0).unwrap().to_dense();
    let b = assemble_load(&mesh, |x| f.eval(x)).unwrap();
    let free: Vec<usize> = (0..mesh.n_nodes()).filter(|&i| !mesh.is_dirichlet(i)).collect();
    let sub: Vec<Vec<f64>> = free.iter().map(|&i| free.iter().map(|&j| a[i][j]).collect()).collect();
    let rhs: Vec<f64> = free.iter().map(|&i| b[i]).collect();
    let x = dense_solve(sub, rhs);

    let opts = SolveOptions::default().with_linear_tol(1e-12);
    let u = solve_state(&mesh, &f, &DiffusionLaw::constant(1.0), &opts).unwrap().u;
    for (k, &i) in free.iter().enumerate() {
        assert!((u.0[i] - x[k]).abs() < 1e-8);
    }
    for i in mesh.dirichlet_nodes() {
        assert_eq!(u.0[i], 0.0);
    }
}

/// Coarse nodal values restricted from the mesh with twice the resolution.
fn restrict(fine: &ScalarField, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            out.push(fine.0[(2 * j) * (2 * n + 1) + 2 * i]);
        }
    }
    out
}

#[test]
fn saturating_law_self_converges() {
    let law = DiffusionLaw::saturating();
    let f = sine_bump_source();
    let opts = SolveOptions::default().with_linear_tol(1e-12);
    let levels = [8usize, 16, 32];
    let mut solutions = Vec::new();
    for &n in &levels {
        let mesh = make_square_mesh(n).unwrap();
        // Square nodes are numbered row by row.
        assert_eq!(mesh.node(n + 2), [1.0 / n as f64, 1.0 / n as f64]);
        let sol = solve_state(&mesh, &f, &law, &opts).unwrap();
        assert!(sol.final_increment <= opts.picard_tol);
        assert!(state_residual(&mesh, &sol.u, &f, &law).unwrap() <= 1e-8);
        solutions.push(sol.u);
    }
    let diff = |c: &ScalarField, fine: &ScalarField, n: usize| {
        c.0.iter().zip(restrict(fine, n)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let d1 = diff(&solutions[0], &solutions[1], 8);
    let d2 = diff(&solutions[1], &solutions[2], 16);
    assert!(d1 / d2 > 3.0, "{d1} {d2}");
}

#[test]
fn l2_adjoint_vanishes_at_the_optimum() {
    let problem = Problem::toy();
    let target = sine_bump();
    let mut h = Vec::new();
    let mut sizes = Vec::new();
    for n in [8usize, 16, 32] {
        let mesh = make_square_mesh(n).unwrap();
        let u = problem.state(&mesh).unwrap();
        let p = solve_adjoint_l2(&mesh, &u, &target, &problem.law, &problem.opts).unwrap();
        h.push(1.0 / n as f64);
        sizes.push(p.0.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    assert!(fitted_order(&h, &sizes) >= 1.8, "{sizes:?}");
    assert!(sizes[2] < 1e-2 * h[2]);
}

#[test]
fn linfty_cost_matches_rescan() {
    let mesh = small_disk();
    let problem = Problem::toy();
    let u = problem.state(&mesh).unwrap();
    let (value, argmax) = cost_linfty(&mesh, &u, &problem.spec).unwrap();
    let target = sine_bump();
    let scan: Vec<f64> = mesh.nodes().iter().zip(&u.0).map(|(&x, &z)| (z - target.eval(x)).powi(2)).collect();
    let max = scan.iter().copied().fold(f64::MIN, f64::max);
    assert_eq!(value, max);
    assert!(argmax.iter().all(|&i| scan[i] == max));
    assert_eq!(argmax.len(), scan.iter().filter(|&&v| v == max).count());
}

#[test]
fn l2_cost_is_fourth_order_at_the_optimum() {
    let problem = Problem::toy();
    let mut h = Vec::new();
    let mut costs = Vec::new();
    for n in [8usize, 16, 32] {
        let mesh = make_square_mesh(n).unwrap();
        let u = problem.state(&mesh).unwrap();
        h.push(1.0 / n as f64);
        costs.push(cost_l2(&mesh, &u, &problem.spec).unwrap());
    }
    assert!(fitted_order(&h, &costs) >= 3.8, "{costs:?}");
}

fn taylor_orders(problem: &Problem, mesh: &Mesh, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_smooth_field(mesh, &mut rng, 0.05);
    let node = nonsmooth_shape::verify::interior_argmax(problem, mesh).unwrap();
    let l2 = taylor_test(problem, mesh, TaylorCost::L2, &x, 0.25, 7).unwrap();
    let pt = taylor_test(problem, mesh, TaylorCost::PointValue { node }, &x, 0.25, 7).unwrap();
    (l2.order, pt.order)
}

#[test]
fn taylor_remainders_are_second_order() {
    let constant = Problem::toy();
    let saturating = Problem {
        law: DiffusionLaw::saturating(),
        ..Problem::toy()
    };
    for problem in [&constant, &saturating] {
        for mesh in [make_square_mesh(12).unwrap(), small_disk()] {
            let (l2, pt) = taylor_orders(problem, &mesh, 3);
            assert!(l2 >= 1.9 && pt >= 1.9, "{} {l2} {pt}", problem.law.name());
        }
    }
}

#[test]
fn translation_derivative_at_the_optimum_matches_difference_quotient() {
    let problem = Problem::toy().with_opts(SolveOptions::default().with_linear_tol(1e-13));
    let mesh = make_square_mesh(16).unwrap();
    let u = problem.state(&mesh).unwrap();
    let target = problem.spec.target().unwrap();
    let p = solve_adjoint_l2(&mesh, &u, target, &problem.law, &problem.opts).unwrap();
    let dj = assemble_dj2(&mesh, &u, &p, &problem.f, &problem.spec, &problem.law).unwrap();
    let x = VecField::interpolate(&mesh, |_| [0.6, 0.8]);
    let d = dj.apply(&x);

    let t = 1e-4;
    let j_at = |s: f64| {
        let moved = deform_mesh(&mesh, &x, s, DeformMode::Direct, &QualityFloors::default())
            .unwrap()
            .valid()
            .unwrap();
        cost_l2(&moved, &problem.state(&moved).unwrap(), &problem.spec).unwrap()
    };
    let fd = (j_at(t) - j_at(-t)) / (2.0 * t);
    assert!(d.abs() < 1e-4, "{d}");
    assert!((d - fd).abs() < 1e-8, "{d} {fd}");
}

#[test]
fn gradient_represents_the_functional() {
    let mesh = small_disk();
    let problem = Problem::toy();
    let u = problem.state(&mesh).unwrap();
    let node = nonsmooth_shape::verify::interior_argmax(&problem, &mesh).unwrap();
    let p = problem.point_adjoint(&mesh, &u, node).unwrap();
    let dj = assemble_dj(&mesh, &u, &p, mesh.node(node), &problem.f, &problem.spec, &problem.law).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for metric in [Metric::Sobolev, Metric::Euclidean] {
        let space = MetricSpace::new(&mesh, metric).unwrap();
        let g = space.gradient(&dj).unwrap();
        for _ in 0..10 {
            let phi = random_smooth_field(&mesh, &mut rng, 1.0);
            let lhs = space.inner(&g, &phi).unwrap();
            let rhs = dj.apply(&phi);
            assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()), "{metric:?} {lhs} {rhs}");
        }
    }
}

#[test]
fn descent_field_eventually_inverts_elements() {
    let mesh = small_disk();
    let problem = Problem::toy();
    let u = problem.state(&mesh).unwrap();
    let active = select_active(&mesh, &u, &problem.spec, 40).unwrap();
    let space = MetricSpace::new(&mesh, Metric::Sobolev).unwrap();
    let bundle = build_bundle(&mesh, &u, &active, &space, &problem.spec, &problem.law, &problem.f, &problem.opts).unwrap();
    let Direction::Descent { g, .. } = steepest_direction(&bundle, 1e-8).unwrap() else {
        panic!("initial disk is not stationary");
    };
    let floors = QualityFloors::default();
    let min_signed_area = |t: f64| {
        let moved: Vec<[f64; 2]> =
            mesh.nodes().iter().enumerate().map(|(i, p)| [p[0] + t * g.at(i)[0], p[1] + t * g.at(i)[1]]).collect();
        mesh.triangles()
            .iter()
            .map(|tri| {
                let [a, b, c] = tri.map(|v| moved[v]);
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
            })
            .fold(f64::INFINITY, f64::min)
    };
    let mut t = 0.01;
    while min_signed_area(t) > floors.area_floor {
        t *= 2.0;
        assert!(t < 1e6);
    }
    match deform_mesh(&mesh, &g, t, DeformMode::Direct, &floors).unwrap() {
        Deformed::Invalid(report) => {
            assert!(report.min_area <= floors.area_floor);
            assert!((report.min_area - min_signed_area(t)).abs() <= 1e-12 * (1.0 + t * t));
            assert!(!report.is_valid);
        }
        Deformed::Valid(_) => panic!("inverted mesh accepted"),
    }
}

#[test]
fn danskin_unique_argmax_discrepancy_is_linear() {
    let problem = Problem::toy();
    let mesh = danskin_mesh().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_smooth_field(&mesh, &mut rng, 1.0);
    let seq = danskin_sequence(&problem, &mesh, &x, 1e-3).unwrap();
    assert_eq!(seq[0].argmax.len(), 1);
    for w in seq.windows(2) {
        let ratio = w[0].discrepancy / w[1].discrepancy;
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }
}

#[test]
fn danskin_with_symmetric_maximizers_takes_the_larger_derivative() {
    // Psi peaks at (0, 1/2) and (1, 1/2); a horizontal shift raises one and lowers the other.
    let spec = CostSpec::custom(
        |x, _| (x[0] - 0.5).powi(2) - (x[1] - 0.5).powi(2),
        |_, _| 0.0,
        |x, _| [2.0 * (x[0] - 0.5), -2.0 * (x[1] - 0.5)],
    );
    let problem = Problem {
        spec,
        ..Problem::toy()
    };
    let mesh = make_square_mesh(8).unwrap();
    let x = VecField::interpolate(&mesh, |_| [1.0, 0.0]);
    let u = problem.state(&mesh).unwrap();
    let (_, argmax) = cost_linfty(&mesh, &u, &problem.spec).unwrap();
    let derivs: Vec<f64> = argmax.iter().map(|&y| problem.point_derivative(&mesh, &u, y, &x).unwrap()).collect();
    assert_eq!(argmax.len(), 2);
    let mut sorted = derivs.clone();
    sorted.sort_by(f64::total_cmp);
    assert!((sorted[0] + 1.0).abs() < 1e-12 && (sorted[1] - 1.0).abs() < 1e-12);
    for t in [0.04, 0.02, 0.01] {
        let rep = danskin_check(&problem, &mesh, &x, t).unwrap();
        assert!((rep.max_derivative - 1.0).abs() < 1e-12);
        // Exact quotient: ((1/2 + t)^2 - 1/4) / t = 1 + t.
        assert!((rep.finite_difference - (1.0 + t)).abs() < 1e-9);
        assert!((rep.discrepancy - t).abs() < 1e-9);
    }
}

#[test]
fn boundary_active_points_need_no_adjoint() {
    let mesh = small_disk();
    let problem = Problem::toy();
    let u = problem.state(&mesh).unwrap();
    for y in mesh.boundary_nodes().iter().copied().take(4) {
        let p = problem.point_adjoint(&mesh, &u, y).unwrap();
        assert!(p.0.iter().all(|&v| v == 0.0));
        // With p = 0 only the point term survives.
        let dj = assemble_dj(&mesh, &u, &p, mesh.node(y), &problem.f, &problem.spec, &problem.law).unwrap();
        let px = problem.spec.psi_x(mesh.node(y), u.0[y], 1e-6);
        for (k, v) in dj.0.chunks(2).enumerate() {
            if k == y {
                assert!((v[0] - px[0]).abs() < 1e-12 && (v[1] - px[1]).abs() < 1e-12);
            } else {
                assert_eq!(v, [0.0, 0.0]);
            }
        }
    }
}

#[test]
fn zero_source_zero_target_is_flat() {
    let problem = Problem {
        f: SmoothFn::zero(),
        spec: CostSpec::tracking(SmoothFn::zero()),
        ..Problem::toy()
    };
    let mesh = small_disk();
    let u = problem.state(&mesh).unwrap();
    assert!(u.0.iter().all(|&v| v == 0.0));
    let (j, argmax) = cost_linfty(&mesh, &u, &problem.spec).unwrap();
    assert_eq!((j, argmax.len()), (0.0, mesh.n_nodes()));
}
