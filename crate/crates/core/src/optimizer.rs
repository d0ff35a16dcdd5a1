//! Descent loops: the epsilon-steepest-descent method for the max-type cost
//! and a plain normalized-gradient method for the `L2` cost.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{ScalarField, VecField};
use crate::geometry::{deform_mesh, DeformMode, Deformed, Mesh, QualityFloors};
use crate::nonsmooth::{build_bundle, default_stat_tol, select_active, steepest_direction, ActiveSet, Direction};
use crate::pde::solve_adjoint_l2;
use crate::problem::Problem;
use crate::shape_deriv::{assemble_dj2, cost_l2, cost_linfty, Metric, MetricSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    #[default]
    Linfty,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stepping {
    /// Fixed step; shrunk only when the deformed mesh is invalid.
    Constant,
    /// Halve from `t0` until the mesh is valid and the cost decreases.
    #[default]
    Backtracking,
}

/// Optimizer parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cost: CostKind,
    pub metric: Metric,
    /// Number of non-maximal nodes targeted by the active set.
    pub n2: usize,
    /// Stop once a decrease falls below `gamma` times the first decrease.
    pub gamma: f64,
    pub stepping: Stepping,
    /// Initial step; when unset, `t0_factor * h_max` of the current mesh.
    pub t0: Option<f64>,
    pub t0_factor: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub max_iters: usize,
    pub deform: DeformMode,
    pub floors: QualityFloors,
    /// Stationarity threshold on the min-norm point; when unset,
    /// `1e-8 (1 + |X_1|)`.
    pub stat_tol: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cost: CostKind::Linfty,
            metric: Metric::Sobolev,
            n2: 40,
            gamma: 1e-6,
            stepping: Stepping::Backtracking,
            t0: None,
            t0_factor: 0.5,
            backtrack_factor: 0.5,
            max_backtracks: 30,
            max_iters: 2000,
            deform: DeformMode::Harmonic,
            floors: QualityFloors::default(),
            stat_tol: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if let Some(t0) = self.t0 {
            if !(t0 > 0.0 && t0.is_finite()) {
                return bad(format!("t0 must be positive, got {t0}"));
            }
        }
        if !(self.t0_factor > 0.0 && self.t0_factor.is_finite()) {
            return bad(format!("t0_factor must be positive, got {}", self.t0_factor));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad(format!("backtrack_factor must lie in (0, 1), got {}", self.backtrack_factor));
        }
        if let Some(tol) = self.stat_tol {
            if !(tol >= 0.0) {
                return bad(format!("stat_tol must be nonnegative, got {tol}"));
            }
        }
        if !(self.floors.area_floor >= 0.0 && self.floors.angle_floor >= 0.0) {
            return bad("quality floors must be nonnegative".into());
        }
        Ok(())
    }

    fn initial_step(&self, mesh: &Mesh) -> f64 {
        self.t0.unwrap_or(self.t0_factor * mesh.h_max())
    }
}

/// One evaluated iterate. `step` is the step taken from it (0 on the last row).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub j_inf: f64,
    pub j2: f64,
    pub n_active: usize,
    pub epsilon: f64,
    pub step: f64,
    pub psi: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    Stationary,
    InsufficientDecrease,
    /// No acceptable step after the allowed number of reductions.
    StepRejected,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::MaxIterations => "max_iterations",
            Termination::Stationary => "stationary",
            Termination::InsufficientDecrease => "insufficient_decrease",
            Termination::StepRejected => "step_rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub records: Vec<IterationRecord>,
    pub termination: Option<Termination>,
}

/// What an observer sees at every evaluated iterate.
pub struct Iterate<'a> {
    pub record: &'a IterationRecord,
    pub mesh: &'a Mesh,
    pub u: &'a ScalarField,
    pub active: Option<&'a ActiveSet>,
    pub last: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub history: RunHistory,
    pub mesh: Mesh,
    pub active: Option<ActiveSet>,
}

struct State {
    mesh: Mesh,
    u: ScalarField,
    j_inf: f64,
    j2: f64,
}

impl State {
    fn new(problem: &Problem, mesh: Mesh) -> Result<Self> {
        let u = problem.state(&mesh)?;
        let (j_inf, _) = cost_linfty(&mesh, &u, &problem.spec)?;
        let j2 = match problem.spec.target() {
            Some(_) => cost_l2(&mesh, &u, &problem.spec)?,
            None => f64::NAN,
        };
        Ok(Self { mesh, u, j_inf, j2 })
    }

    fn cost(&self, kind: CostKind) -> f64 {
        match kind {
            CostKind::Linfty => self.j_inf,
            CostKind::L2 => self.j2,
        }
    }
}

/// Search along `g` from `state`. Returns the accepted state and step.
fn line_search(problem: &Problem, cfg: &RunConfig, state: &State, g: &VecField) -> Result<Option<(State, f64)>> {
    let mut t = cfg.initial_step(&state.mesh);
    let current = state.cost(cfg.cost);
    for _ in 0..=cfg.max_backtracks {
        if let Deformed::Valid(mesh) = deform_mesh(&state.mesh, g, t, cfg.deform, &cfg.floors)? {
            let next = State::new(problem, mesh)?;
            let accept = match cfg.stepping {
                Stepping::Constant => true,
                Stepping::Backtracking => next.cost(cfg.cost) < current,
            };
            if accept {
                return Ok(Some((next, t)));
            }
        }
        t *= cfg.backtrack_factor;
    }
    Ok(None)
}

/// Direction at the current iterate plus the active-set bookkeeping.
struct Step {
    direction: Option<VecField>,
    psi: f64,
    active: Option<ActiveSet>,
}

fn linfty_direction(problem: &Problem, cfg: &RunConfig, state: &State) -> Result<Step> {
    let active = select_active(&state.mesh, &state.u, &problem.spec, cfg.n2)?;
    let space = MetricSpace::new(&state.mesh, cfg.metric)?;
    let bundle = build_bundle(
        &state.mesh,
        &state.u,
        &active,
        &space,
        &problem.spec,
        &problem.law,
        &problem.f,
        &problem.opts,
    )?;
    let tol = cfg.stat_tol.unwrap_or_else(|| default_stat_tol(&bundle));
    Ok(match steepest_direction(&bundle, tol)? {
        Direction::Stationary { min_norm, .. } => Step {
            direction: None,
            psi: -min_norm,
            active: Some(active),
        },
        Direction::Descent { g, psi, .. } => Step {
            direction: Some(g),
            psi,
            active: Some(active),
        },
    })
}

fn l2_direction(problem: &Problem, cfg: &RunConfig, state: &State) -> Result<Step> {
    let target = problem
        .spec
        .target()
        .ok_or_else(|| Error::Config("the L2 cost needs a tracking target".into()))?;
    let p = solve_adjoint_l2(&state.mesh, &state.u, target, &problem.law, &problem.opts)?;
    let dj = assemble_dj2(&state.mesh, &state.u, &p, &problem.f, &problem.spec, &problem.law)?;
    let space = MetricSpace::new(&state.mesh, cfg.metric)?;
    let grad = space.gradient(&dj)?;
    let norm = space.norm(&grad)?;
    let tol = cfg.stat_tol.unwrap_or(1e-8 * (1.0 + norm));
    Ok(Step {
        direction: (norm > tol).then(|| grad.scaled(-1.0 / norm)),
        psi: -norm,
        active: None,
    })
}

/// Runs the descent loop for `cfg.cost` from `mesh`, reporting every
/// evaluated iterate to `observer`.
pub fn run(
    problem: &Problem,
    mesh: Mesh,
    cfg: &RunConfig,
    observer: &mut dyn FnMut(&Iterate<'_>) -> Result<()>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut state = State::new(problem, mesh)?;
    let mut records = Vec::new();
    let mut first_decrease: Option<f64> = None;
    let mut pending: Option<Termination> = None;

    for iter in 0.. {
        let step = match cfg.cost {
            CostKind::Linfty => linfty_direction(problem, cfg, &state)?,
            CostKind::L2 => l2_direction(problem, cfg, &state)?,
        };
        let mut record = IterationRecord {
            iter,
            j_inf: state.j_inf,
            j2: state.j2,
            n_active: step.active.as_ref().map_or(0, |a| a.len()),
            epsilon: step.active.as_ref().map_or(0.0, |a| a.epsilon),
            step: 0.0,
            psi: step.psi,
            wall_ms: 0.0,
        };

        let mut termination = pending.take();
        if termination.is_none() {
            if step.direction.is_none() {
                termination = Some(Termination::Stationary);
            } else if iter >= cfg.max_iters {
                termination = Some(Termination::MaxIterations);
            }
        }
        let mut next = None;
        if termination.is_none() {
            let g = step.direction.as_ref().expect("non-stationary step has a direction");
            match line_search(problem, cfg, &state, g)? {
                None => termination = Some(Termination::StepRejected),
                Some((new_state, t)) => {
                    record.step = t;
                    let decrease = state.cost(cfg.cost) - new_state.cost(cfg.cost);
                    match first_decrease {
                        None => first_decrease = Some(decrease),
                        Some(d0) => {
                            if cfg.stepping == Stepping::Backtracking && decrease < cfg.gamma * d0 {
                                pending = Some(Termination::InsufficientDecrease);
                            }
                        }
                    }
                    next = Some(new_state);
                }
            }
        }

        record.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
        records.push(record);
        let last = next.is_none();
        observer(&Iterate {
            record: &record,
            mesh: &state.mesh,
            u: &state.u,
            active: step.active.as_ref(),
            last,
        })?;
        match next {
            Some(s) => state = s,
            None => {
                return Ok(RunOutcome {
                    history: RunHistory { records, termination },
                    mesh: state.mesh,
                    active: step.active,
                })
            }
        }
    }
    unreachable!("the iteration loop only exits by returning")
}

/// Epsilon-steepest descent for the max-type cost.
pub fn run_linfty(
    problem: &Problem,
    mesh: Mesh,
    cfg: &RunConfig,
    observer: &mut dyn FnMut(&Iterate<'_>) -> Result<()>,
) -> Result<RunOutcome> {
    let cfg = RunConfig {
        cost: CostKind::Linfty,
        ..cfg.clone()
    };
    run(problem, mesh, &cfg, observer)
}

/// Normalized-gradient descent for the `L2` tracking cost.
pub fn run_l2(
    problem: &Problem,
    mesh: Mesh,
    cfg: &RunConfig,
    observer: &mut dyn FnMut(&Iterate<'_>) -> Result<()>,
) -> Result<RunOutcome> {
    let cfg = RunConfig {
        cost: CostKind::L2,
        ..cfg.clone()
    };
    run(problem, mesh, &cfg, observer)
}

/// An observer that does nothing.
pub fn ignore(_: &Iterate<'_>) -> Result<()> {
    Ok(())
}
