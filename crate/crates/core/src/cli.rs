//! Command-line driver: argument parsing, running, writing artifacts, exit codes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use crate::config::{Mode, RunConfig, Settings};
use crate::error::{Error, Result};
use crate::fitting::build_prior;
use crate::gradcheck::{check_gradient, perturbed_state, synthetic_problem, GradientReport, MAX_3D_N};
use crate::grid::{average_to_cells, BoundaryCondition, GridSpec};
use crate::hyperelastic::{RegularizerParams, SurfaceMode};
use crate::imagemodel::ImageModel;
use crate::io;
use crate::multilevel::{default_levels, run_multilevel, MultilevelRun};
use crate::optimizer::{EnergyBreakdown, Problem, SolverConfig, StopReason};
use crate::segmenter::{finish, TopologyReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_GRADIENT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_STALL: i32 = 4;
pub const EXIT_TOPOLOGY: i32 = 5;

/// Relative gradient error above which `check-gradient` fails.
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "toposeg", version, about = "Topology-preserving segmentation by hyperelastic registration of a label prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Deform the prior onto the image and write the resulting mask.
    Segment(RunArgs),
    /// Solve the same problem but write only the transformation and the warped template.
    Register(RunArgs),
    /// Compare analytic gradients with central differences on a small grid.
    CheckGradient(RunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BcArg {
    Dirichlet,
    Natural,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SurfaceArg {
    Well,
    Convex,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML file with any of the settings below (flags take precedence).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Template image (.pgm in 2D, .mhd in 3D).
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Prior label map with regions 1..m.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reference labels for Dice scores.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long, alias = "alpha_l")]
    pub alpha_l: Option<f64>,
    #[arg(long, alias = "alpha_s")]
    pub alpha_s: Option<f64>,
    #[arg(long, alias = "alpha_v")]
    pub alpha_v: Option<f64>,
    /// Number of pyramid levels.
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long, value_enum)]
    pub bc: Option<BcArg>,
    /// Hessian shift under natural boundary conditions (default h^d).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum)]
    pub surface: Option<SurfaceArg>,
    #[arg(long)]
    pub tol_f: Option<f64>,
    #[arg(long)]
    pub tol_y: Option<f64>,
    #[arg(long)]
    pub tol_g: Option<f64>,
    /// Gauss-Newton iterations per level.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Dimension of the synthetic check-gradient problem.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Cells per axis of the synthetic check-gradient problem.
    #[arg(long)]
    pub n: Option<usize>,
}

impl RunArgs {
    fn settings(&self) -> Settings {
        Settings {
            image: self.image.clone(),
            labels: self.labels.clone(),
            out: self.out.clone(),
            ground_truth: self.ground_truth.clone(),
            levels: self.levels,
            alpha_l: self.alpha_l,
            alpha_s: self.alpha_s,
            alpha_v: self.alpha_v,
            surface: self.surface.map(|s| match s {
                SurfaceArg::Well => SurfaceMode::DoubleWell,
                SurfaceArg::Convex => SurfaceMode::ConvexEnvelope,
            }),
            bc: self.bc.map(|b| match b {
                BcArg::Dirichlet => BoundaryCondition::Dirichlet,
                BcArg::Natural => BoundaryCondition::Natural,
            }),
            gamma: self.gamma,
            tol_f: self.tol_f,
            tol_y: self.tol_y,
            tol_g: self.tol_g,
            max_iter: self.max_iter,
            dim: self.dim,
            n: self.n,
            ..Default::default()
        }
    }

    /// Config file (if any) overlaid with the flags.
    pub fn merged(&self) -> Result<Settings> {
        let base = match &self.config {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        Ok(base.overlay(self.settings()))
    }
}

/// Exit status for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParams(_) => EXIT_CONFIG,
        Error::Infeasible { .. } => EXIT_TOPOLOGY,
        _ => EXIT_IO,
    }
}

/// Per-level line of the summary.
#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub n: usize,
    pub stop: StopReason,
    pub iterations: usize,
    pub final_energy: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub dim: usize,
    pub n: usize,
    pub levels: Vec<LevelSummary>,
    pub boundary_condition: BoundaryCondition,
    pub gamma: f64,
    pub params: RegularizerParams,
    pub solver: SolverConfig,
    pub final_energy: f64,
    pub breakdown: EnergyBreakdown,
    pub constants: Vec<f64>,
    pub det_range: [f64; 2],
    pub stop: StopReason,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topology_preserved: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub euler_characteristics: Vec<(u32, i64)>,
    pub mask_written: bool,
    pub wall_time_seconds: f64,
}

impl RunSummary {
    fn new(cfg: &RunConfig, run: &MultilevelRun, wall: f64) -> Self {
        let grid = run.grid;
        Self {
            mode: cfg.mode,
            dim: grid.dim(),
            n: grid.n(),
            levels: run
                .levels
                .iter()
                .map(|l| LevelSummary {
                    n: l.grid.n(),
                    stop: l.stop,
                    iterations: l.iterations,
                    final_energy: l.final_energy,
                })
                .collect(),
            boundary_condition: grid.boundary_condition(),
            gamma: cfg.solver.gamma_for(&grid),
            params: cfg.params,
            solver: cfg.solver,
            final_energy: run.state.total(),
            breakdown: run.state.energy,
            constants: run.state.c.clone(),
            det_range: [run.state.min_det, run.state.max_det],
            stop: run.stop(),
            iterations: run.levels.iter().map(|l| l.iterations).sum(),
            topology: None,
            topology_preserved: None,
            euler_characteristics: Vec::new(),
            mask_written: false,
            wall_time_seconds: wall,
        }
    }
}

/// What a finished `segment` or `register` run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: RunSummary,
    pub exit_code: i32,
}

/// Loads image and labels and checks they share a grid.
fn load_inputs(cfg_image: &Path, cfg_labels: &Path) -> Result<(io::Volume<f64>, io::Volume<u32>)> {
    let image = io::load_image(cfg_image)?;
    let labels = io::load_labels(cfg_labels)?;
    if (image.dim, image.n) != (labels.dim, labels.n) {
        return Err(Error::Format {
            path: cfg_labels.display().to_string(),
            reason: format!(
                "labels are {}D with n = {}, image is {}D with n = {}",
                labels.dim, labels.n, image.dim, image.n
            ),
        });
    }
    build_prior(&labels.data)?;
    Ok((image, labels))
}

fn with_extension_of(dir: &Path, stem: &str, like: &Path) -> PathBuf {
    let ext = like.extension().and_then(|e| e.to_str()).unwrap_or("mhd");
    dir.join(format!("{stem}.{}", ext.to_ascii_lowercase()))
}

/// Runs `segment` or `register` and writes every artifact into `out`.
pub fn run_solve(mode: Mode, settings: &Settings) -> Result<Outcome> {
    let image_path = settings
        .image
        .clone()
        .ok_or_else(|| Error::Config("--image is required".into()))?;
    let labels_path = settings
        .labels
        .clone()
        .ok_or_else(|| Error::Config("--labels is required".into()))?;
    // Dimension-independent checks before touching any file.
    RunConfig::resolve(mode, &Settings { alpha_s: None, ..settings.clone() }, 3)?;
    let image_volume = io::load_image(&image_path)?;
    let cfg = RunConfig::resolve(mode, settings, image_volume.dim)?;
    let out = cfg.out.clone().expect("validated");
    let (image, labels) = load_inputs(&image_path, &labels_path)?;
    let ground_truth = match &cfg.ground_truth {
        Some(p) => {
            let gt = io::load_labels(p)?;
            if (gt.dim, gt.n) != (image.dim, image.n) {
                return Err(Error::Format {
                    path: p.display().to_string(),
                    reason: "ground truth does not match the image grid".into(),
                });
            }
            Some(gt.data)
        }
        None => None,
    };
    let grid = GridSpec::new(image.dim, image.n, cfg.bc)?;
    let levels = cfg.levels.unwrap_or_else(|| default_levels(image.n));
    std::fs::create_dir_all(&out)?;

    let start = Instant::now();
    let run = run_multilevel(&grid, &image.data, &labels.data, &cfg.params, &cfg.solver, levels)?;
    let stop = run.stop();
    let y = run.state.y.clone();
    let records = run.records.clone();

    let mut exit = if stop == StopReason::LineSearchStalled {
        warn!("line search stalled on the finest level");
        EXIT_STALL
    } else {
        EXIT_OK
    };
    let summary = match mode {
        Mode::Segment => {
            let result = finish(&grid, &labels.data, run, ground_truth.as_deref())?;
            let wall = start.elapsed().as_secs_f64();
            let mut summary = RunSummary::new(&cfg, &result.run, wall);
            let preserved = result.topology_preserved();
            summary.topology = Some(result.report.clone());
            summary.topology_preserved = Some(preserved);
            summary.euler_characteristics = result.euler.clone();
            io::write_mesh(&out.join("boundary.txt"), &result.warped_boundary)?;
            if preserved {
                io::write_labels(
                    &with_extension_of(&out, "mask", &labels_path),
                    grid.dim(),
                    grid.n(),
                    &result.mask,
                )?;
                summary.mask_written = true;
            }
            if !preserved {
                warn!("topology violated; no mask written");
                exit = EXIT_TOPOLOGY;
            }
            summary
        }
        Mode::Register => {
            let wall = start.elapsed().as_secs_f64();
            let model = ImageModel::fit(&grid, &image.data)?;
            let warped = model.eval(&average_to_cells(&grid, &y)?)?;
            io::write_image(&with_extension_of(&out, "warped", &image_path), grid.dim(), grid.n(), &warped)?;
            let summary = RunSummary::new(&cfg, &run, wall);
            if !(summary.det_range[0] > 0.0) {
                exit = EXIT_TOPOLOGY;
            }
            summary
        }
        Mode::CheckGradient => unreachable!("handled by run_check_gradient"),
    };
    io::write_transform(&out.join("transform.mhd"), grid.dim(), grid.n(), &y)?;
    io::write_energy_log(&out.join("energy_log.csv"), &records)?;
    io::write_json(&out.join("summary.json"), &summary)?;
    info!(
        "F = {:.6e}, det range [{:.4e}, {:.4e}], {:.1} s",
        summary.final_energy, summary.det_range[0], summary.det_range[1], summary.wall_time_seconds
    );
    Ok(Outcome {
        summary,
        exit_code: exit,
    })
}

/// Builds the check-gradient problem from inputs, or a synthetic one.
pub fn run_check_gradient(settings: &Settings) -> Result<GradientReport> {
    let (problem, dim) = match (&settings.image, &settings.labels) {
        (Some(img), Some(lab)) => {
            let (image, labels) = load_inputs(img, lab)?;
            let cfg = RunConfig::resolve(Mode::CheckGradient, settings, image.dim)?;
            guard(image.dim, image.n)?;
            let grid = GridSpec::new(image.dim, image.n, cfg.bc)?;
            let problem = Problem::new(
                ImageModel::fit(&grid, &image.data)?,
                build_prior(&labels.data)?,
                cfg.params,
                cfg.solver.gamma_for(&grid),
            )?;
            (problem, image.dim)
        }
        (None, None) => {
            let dim = settings.dim.unwrap_or(3);
            let n = settings.n.unwrap_or(if dim == 3 { 2 } else { 4 });
            if dim != 2 && dim != 3 {
                return Err(Error::Config("--dim must be 2 or 3".into()));
            }
            guard(dim, n)?;
            let cfg = RunConfig::resolve(Mode::CheckGradient, settings, dim)?;
            let mut problem = synthetic_problem(dim, n, cfg.bc, cfg.params, false)?;
            if cfg.solver.gamma.is_some() {
                let grid = *problem.grid();
                problem = Problem::new(
                    problem.image().clone(),
                    problem.prior().clone(),
                    cfg.params,
                    cfg.solver.gamma_for(&grid),
                )?;
            }
            (problem, dim)
        }
        _ => return Err(Error::Config("give both --image and --labels, or neither".into())),
    };
    let (y, c) = perturbed_state(&problem)?;
    info!("checking gradients on a {dim}D grid with n = {}", problem.grid().n());
    check_gradient(&problem, &y, &c, 1e-6)
}

fn guard(dim: usize, n: usize) -> Result<()> {
    if dim == 3 && n > MAX_3D_N {
        return Err(Error::Config(format!(
            "check-gradient refuses 3D grids with n > {MAX_3D_N} (got {n})"
        )));
    }
    Ok(())
}

fn print_report(report: &GradientReport) {
    println!("{:<8} {:>14} {:>14}", "term", "max |grad|", "rel error");
    for t in &report.terms {
        println!("{:<8} {:>14.6e} {:>14.6e}", t.name, t.max_abs, t.rel_error);
    }
}

/// Runs a parsed command line and returns the exit status.
pub fn execute(cli: Cli) -> i32 {
    let (mode, args) = match &cli.command {
        Command::Segment(a) => (Mode::Segment, a),
        Command::Register(a) => (Mode::Register, a),
        Command::CheckGradient(a) => (Mode::CheckGradient, a),
    };
    let settings = match args.merged() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let result = match mode {
        Mode::CheckGradient => run_check_gradient(&settings).map(|r| {
            print_report(&r);
            if r.max_rel_error() > GRADIENT_TOLERANCE {
                eprintln!("gradient check failed: max relative error {:.3e}", r.max_rel_error());
                EXIT_GRADIENT
            } else {
                EXIT_OK
            }
        }),
        _ => run_solve(mode, &settings).map(|o| {
            let s = &o.summary;
            println!(
                "F = {:.6e}  det range [{:.4e}, {:.4e}]  stop {:?}  {:.1} s",
                s.final_energy, s.det_range[0], s.det_range[1], s.stop, s.wall_time_seconds
            );
            if let Some(t) = &s.topology {
                for r in &t.regions {
                    let dice = r.dice.map(|d| format!("  dice {d:.4}")).unwrap_or_default();
                    println!(
                        "region {}: {} component(s), prior {}{dice}",
                        r.label, r.mask_components, r.prior_components
                    );
                }
            }
            o.exit_code
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
