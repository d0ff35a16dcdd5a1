//! TOML configuration for the command-line driver.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{disk_spacing, make_disk_mesh, Mesh, Point};
use crate::optimizer::RunConfig;
use crate::pde::SolveOptions;
use crate::problem::{Problem, ProblemConfig};

/// Initial disk mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub center: Point,
    pub radius: f64,
    pub n_boundary: usize,
    /// Approximate total node count.
    pub target_nodes: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            center: [0.5, 0.5],
            radius: 6f64.sqrt(),
            n_boundary: 400,
            target_nodes: 5500,
        }
    }
}

impl MeshConfig {
    pub fn build(&self) -> Result<Mesh> {
        if self.target_nodes <= self.n_boundary {
            return Err(Error::Config(format!(
                "target_nodes ({}) must exceed n_boundary ({})",
                self.target_nodes, self.n_boundary
            )));
        }
        let h = disk_spacing(self.radius, self.n_boundary, self.target_nodes);
        make_disk_mesh(self.center, self.radius, self.n_boundary, h).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write a shape snapshot every this many iterations; 0 keeps only the
    /// first and last.
    pub snapshot_every: usize,
    /// Also write VTK meshes with the state next to each snapshot.
    pub vtk: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            snapshot_every: 10,
            vtk: false,
        }
    }
}

pub const SUITES: [&str; 5] = ["taylor", "danskin", "reciprocity", "convergence", "qp"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub suites: Vec<String>,
    pub seed: u64,
    /// Refinement levels of the convergence study.
    pub levels: Vec<usize>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            suites: SUITES.iter().map(|s| s.to_string()).collect(),
            seed: 7,
            levels: vec![8, 16, 32, 64],
        }
    }
}

/// Everything the driver reads from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: ProblemConfig,
    pub mesh: MeshConfig,
    pub optimizer: RunConfig,
    pub solver: SolveOptions,
    pub output: OutputConfig,
    pub verify: VerifyConfig,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.mesh.radius > 0.0 && self.mesh.radius.is_finite()) {
            return Err(Error::Config(format!("mesh radius must be positive, got {}", self.mesh.radius)));
        }
        if !(self.solver.linear_tol > 0.0 && self.solver.picard_tol > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if let Some(s) = self.verify.suites.iter().find(|s| !SUITES.contains(&s.as_str())) {
            return Err(Error::Config(format!("unknown verify suite `{s}`")));
        }
        if self.verify.levels.len() < 2 || self.verify.levels.windows(2).any(|w| w[1] <= w[0]) || self.verify.levels[0] < 2 {
            return Err(Error::Config("verify levels must be at least two increasing sizes >= 2".into()));
        }
        Problem::from_config(&self.problem, self.solver)?;
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem> {
        Problem::from_config(&self.problem, self.solver)
    }
}

/// Default configuration with every key and a comment on each.
pub fn template() -> String {
    let d = ConfigFile::default();
    let o = &d.optimizer;
    format!(
        r#"# Shape optimization driver configuration. Every key is optional.

[problem]
# Source term: sine_bump_source, sine_bump or zero.
source = "{source}"
# Tracking target u_d in Psi(x, z) = (z - u_d(x))^2.
target = "{target}"
# Diffusion law beta(|grad u|^2): constant or saturating.
law = "{law}"

[mesh]
# Initial shape: a disk meshed with n_boundary boundary nodes.
center = [{cx:?}, {cy:?}]
radius = {radius:?}
n_boundary = {nb}
target_nodes = {tn}

[optimizer]
# linfty (max-type cost) or l2.
cost = "linfty"
# sobolev or euclidean.
metric = "sobolev"
# Non-maximal nodes targeted by the active set.
n2 = {n2}
# Stop when a decrease drops below gamma times the first one (backtracking only).
gamma = {gamma:?}
# backtracking or constant.
stepping = "backtracking"
# Initial step. Defaults to t0_factor * h_max of the current mesh.
# t0 = 0.05
t0_factor = {t0f:?}
backtrack_factor = {bf:?}
max_backtracks = {mb}
max_iters = {mi}
# harmonic (interior follows the boundary) or direct.
deform = "harmonic"
# Stationarity threshold. Defaults to 1e-8 * (1 + |X_1|).
# stat_tol = 1e-8

[optimizer.floors]
area_floor = {af:?}
# Radians.
angle_floor = {ang:?}

[solver]
linear_tol = {lt:?}
picard_tol = {pt:?}
max_picard = {mp}

[output]
dir = "{dir}"
snapshot_every = {se}
vtk = {vtk}

[verify]
# Any of: taylor, danskin, reciprocity, convergence, qp.
suites = [{suites}]
seed = {seed}
levels = [{levels}]
"#,
        source = d.problem.source,
        target = d.problem.target,
        law = d.problem.law,
        cx = d.mesh.center[0],
        cy = d.mesh.center[1],
        radius = d.mesh.radius,
        nb = d.mesh.n_boundary,
        tn = d.mesh.target_nodes,
        n2 = o.n2,
        gamma = o.gamma,
        t0f = o.t0_factor,
        bf = o.backtrack_factor,
        mb = o.max_backtracks,
        mi = o.max_iters,
        af = o.floors.area_floor,
        ang = o.floors.angle_floor,
        lt = d.solver.linear_tol,
        pt = d.solver.picard_tol,
        mp = d.solver.max_picard,
        dir = d.output.dir.display(),
        se = d.output.snapshot_every,
        vtk = d.output.vtk,
        suites = d.verify.suites.iter().map(|s| format!("\"{s}\"")).collect::<Vec<_>>().join(", "),
        seed = d.verify.seed,
        levels = d.verify.levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", "),
    )
}
