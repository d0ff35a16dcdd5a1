//! `nsshape`: run shape optimizations and numerical checks from a TOML config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nonsmooth_shape::config::{self, ConfigFile, SUITES};
use nonsmooth_shape::geometry::{make_square_mesh, Mesh};
use nonsmooth_shape::io::{write_history, write_report, write_shape, write_vtk};
use nonsmooth_shape::optimizer::{run, CostKind, Iterate};
use nonsmooth_shape::verify::{run_suite, ReportRow};
use nonsmooth_shape::Error;

#[derive(Parser)]
#[command(name = "nsshape", version, about = "Nonsmooth shape optimization driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the initial disk and write the history and shape snapshots.
    Optimize {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `optimizer.cost`.
        #[arg(long, value_enum)]
        cost: Option<Cost>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `optimizer.max_iters`.
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Run numerical checks and write a CSV report.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        /// One of taylor, danskin, reciprocity, convergence, qp, or all.
        /// Defaults to the suites listed in the config.
        #[arg(long)]
        suite: Option<String>,
        /// Report path; defaults to `<output.dir>/report.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print quality measures of the configured initial mesh.
    MeshInfo {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the uniform unit-square mesh with this many cells per side instead.
        #[arg(long)]
        square: Option<usize>,
    },
    /// Print the default configuration.
    Template,
}

#[derive(Clone, Copy, ValueEnum)]
enum Cost {
    Linfty,
    L2,
}

fn load(path: Option<&Path>) -> Result<ConfigFile, Error> {
    match path {
        Some(p) => ConfigFile::load(p).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
            other => other,
        }),
        None => Ok(ConfigFile::default()),
    }
}

fn optimize(
    config: Option<PathBuf>,
    cost: Option<Cost>,
    out: Option<PathBuf>,
    max_iters: Option<usize>,
) -> Result<(), Error> {
    let mut cfg = load(config.as_deref())?;
    if let Some(c) = cost {
        cfg.optimizer.cost = match c {
            Cost::Linfty => CostKind::Linfty,
            Cost::L2 => CostKind::L2,
        };
    }
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    if let Some(n) = max_iters {
        cfg.optimizer.max_iters = n;
    }
    cfg.validate()?;
    let problem = cfg.problem()?;
    let mesh = cfg.mesh.build()?;
    let dir = cfg.output.dir.clone();
    let every = cfg.output.snapshot_every;
    let vtk = cfg.output.vtk;

    let mut observer = |it: &Iterate<'_>| -> Result<(), Error> {
        let n = it.record.iter;
        if n == 0 || it.last || (every > 0 && n.is_multiple_of(every)) {
            write_shape(it.mesh, it.active, &dir.join(format!("shape_{n:04}.csv")))?;
            if vtk {
                write_vtk(it.mesh, &[("u", it.u)], &dir.join(format!("state_{n:04}.vtk")))?;
            }
        }
        Ok(())
    };
    let outcome = run(&problem, mesh, &cfg.optimizer, &mut observer)?;
    write_history(&outcome.history, &dir.join("history.csv"))?;
    let last = outcome.history.records.last().expect("a run records its initial iterate");
    println!(
        "iterations={} termination={} J_inf={:e} J_2={:e}",
        last.iter,
        outcome.history.termination.map_or("none", |t| t.as_str()),
        last.j_inf,
        last.j2
    );
    Ok(())
}

fn verify(config: Option<PathBuf>, suite: Option<String>, out: Option<PathBuf>) -> Result<bool, Error> {
    let cfg = load(config.as_deref())?;
    let suites: Vec<String> = match suite.as_deref() {
        None => cfg.verify.suites.clone(),
        Some("all") => SUITES.iter().map(|s| s.to_string()).collect(),
        Some(s) if SUITES.contains(&s) => vec![s.to_string()],
        Some(s) => return Err(Error::Config(format!("unknown suite `{s}`"))),
    };
    let problem = cfg.problem()?;
    let mut rows: Vec<ReportRow> = Vec::new();
    for s in &suites {
        rows.extend(run_suite(s, &problem, cfg.verify.seed, &cfg.verify.levels)?);
    }
    let path = out.unwrap_or_else(|| cfg.output.dir.join("report.csv"));
    write_report(&rows, &path)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    println!("checks={} failed={} report={}", rows.len(), failed, path.display());
    Ok(failed == 0)
}

fn mesh_info(config: Option<PathBuf>, square: Option<usize>) -> Result<(), Error> {
    let cfg = load(config.as_deref())?;
    let mesh: Mesh = match square {
        Some(n) => make_square_mesh(n).map_err(|e| Error::Config(e.to_string()))?,
        None => cfg.mesh.build()?,
    };
    let q = mesh.quality(&cfg.optimizer.floors);
    println!("nodes={}", mesh.n_nodes());
    println!("triangles={}", mesh.n_triangles());
    println!("boundary_nodes={}", mesh.boundary_nodes().len());
    println!("h_max={:e}", mesh.h_max());
    println!("area={:e}", mesh.total_area());
    println!("min_area={:e}", q.min_area);
    println!("min_angle_deg={:e}", q.min_angle.to_degrees());
    println!("max_aspect={:e}", q.max_aspect);
    println!("boundary_simple={}", q.boundary_simple);
    println!("valid={}", q.is_valid);
    Ok(())
}

fn fail(e: &Error) -> ExitCode {
    let (kind, code) = match e {
        Error::Config(_) | Error::Parse { .. } => ("config", 2),
        Error::Io { .. } => ("io", 1),
        _ => ("runtime", 1),
    };
    eprintln!("error: {kind}: {}", e.to_string().replace('\n', " "));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Optimize {
            config,
            cost,
            out,
            max_iters,
        } => optimize(config, cost, out, max_iters),
        Command::Verify { config, suite, out } => match verify(config, suite, out) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("error: verify: some checks failed");
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
        Command::MeshInfo { config, square } => mesh_info(config, square),
        Command::Template => {
            print!("{}", config::template());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
