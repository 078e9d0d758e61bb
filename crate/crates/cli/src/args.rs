use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gaitforge::compass_gait::{Branch, MassMatrixReading};
use gaitforge::direct::{BasisKind, InputBasis, TimeScale};

use crate::files::{Method, ToleranceConfig};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "gaitforge", version, about = "Libraries of optimal periodic gaits")]
pub struct Cli {
    /// Worker threads for Jacobian columns (default: available parallelism).
    #[arg(long, global = true, env = "GAITFORGE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find a passive gait and write the indirect seed built from it.
    Passive(PassiveArgs),
    /// Trace a gait family from a seed or from the last point of a library.
    Continue(ContinueArgs),
    /// Compare the indirect method with direct shooting on several bases.
    Compare(CompareArgs),
    /// Re-evaluate every point of a library.
    Verify(VerifyArgs),
    /// Write a library as CSV or as two-column plot data.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelName {
    CompassGait,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReadingArg {
    LegMass,
    Verbatim,
}

impl From<ReadingArg> for MassMatrixReading {
    fn from(r: ReadingArg) -> Self {
        match r {
            ReadingArg::LegMass => MassMatrixReading::LegMass,
            ReadingArg::Verbatim => MassMatrixReading::Verbatim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BranchArg {
    Short,
    Long,
}

impl From<BranchArg> for Branch {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::Short => Branch::Short,
            BranchArg::Long => Branch::Long,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Indirect,
    Direct,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Indirect => Method::Indirect,
            MethodArg::Direct => Method::Direct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    /// Bernstein polynomials in raw time.
    Bezier,
    /// Bernstein polynomials in normalized time `t / T`.
    BezierNormalized,
    /// Uniform cubic B-spline.
    Bspline,
}

impl BasisArg {
    pub fn basis(self, n_xi: usize) -> Result<InputBasis, CliError> {
        let b = match self {
            BasisArg::Bezier => InputBasis::new(BasisKind::Bezier, n_xi).and_then(|b| b.with_time(TimeScale::Raw)),
            BasisArg::BezierNormalized => InputBasis::new(BasisKind::Bezier, n_xi),
            BasisArg::Bspline => InputBasis::new(BasisKind::CubicBSpline, n_xi),
        };
        b.map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ToleranceArgs {
    /// Corrector tolerance on the residual infinity norm.
    #[arg(long, env = "GAITFORGE_NEWTON_TOL", default_value_t = 1e-8)]
    pub newton_tol: f64,
    /// Integrator relative tolerance.
    #[arg(long, env = "GAITFORGE_REL_TOL", default_value_t = 1e-9)]
    pub rel_tol: f64,
    /// Integrator absolute tolerance.
    #[arg(long, env = "GAITFORGE_ABS_TOL", default_value_t = 1e-10)]
    pub abs_tol: f64,
    /// Forward-difference step of the Jacobians.
    #[arg(long, env = "GAITFORGE_FD_STEP", default_value_t = 1e-9)]
    pub fd_step: f64,
}

impl ToleranceArgs {
    pub fn config(&self) -> ToleranceConfig {
        ToleranceConfig {
            newton_tol: self.newton_tol,
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            fd_step: self.fd_step,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PassiveArgs {
    #[arg(long, value_enum)]
    pub model: ModelName,
    #[arg(long, value_enum, default_value = "leg-mass", env = "GAITFORGE_MASS_MATRIX")]
    pub mass_matrix: ReadingArg,
    /// Average speed in units of sqrt(g l).
    #[arg(long, default_value_t = 0.1)]
    pub v_avg: f64,
    #[arg(long, value_enum, default_value = "long")]
    pub branch: BranchArg,
    /// Initial period guess, overriding the branch table.
    #[arg(long)]
    pub guess_t: Option<f64>,
    /// Initial state guess, four comma-separated values.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub guess_x0: Option<Vec<f64>>,
    /// Initial slope guess in degrees.
    #[arg(long)]
    pub guess_gamma: Option<f64>,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tol: ToleranceArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ContinueArgs {
    #[arg(long, value_enum, default_value = "indirect")]
    pub method: MethodArg,
    /// Seed file, or a library whose last point starts the run.
    #[arg(long)]
    pub seed: PathBuf,
    /// Continuation parameter: gamma or v_avg.
    #[arg(long)]
    pub param: String,
    /// Target value (degrees for gamma).
    #[arg(long, allow_negative_numbers = true)]
    pub end: f64,
    /// Input basis of the direct method.
    #[arg(long, value_enum, default_value = "bspline")]
    pub basis: BasisArg,
    #[arg(long, default_value_t = 4)]
    pub n_xi: usize,
    /// Skip the second-order test on direct points.
    #[arg(long)]
    pub no_classify: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub h_min: f64,
    #[arg(long, default_value_t = 5e-2)]
    pub h_max: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_steps: usize,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Print every attempted step to stderr.
    #[arg(long, short)]
    pub verbose: bool,
    #[command(flatten)]
    pub tol: ToleranceArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Seed or library; its last point is the indirect reference.
    #[arg(long)]
    pub seed: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["bezier", "bspline"])]
    pub bases: Vec<BasisArg>,
    #[arg(long, default_value_t = 2)]
    pub n_min: usize,
    #[arg(long, default_value_t = 12)]
    pub n_max: usize,
    /// Residual target for the compared points.
    #[arg(long, default_value_t = 1e-11)]
    pub polish_tol: f64,
    /// Directory for comparison.csv, comparison.json and the plot data.
    #[arg(long, short)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub tol: ToleranceArgs,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    pub library: PathBuf,
    /// Largest admissible Hamiltonian drift along indirect points.
    #[arg(long, default_value_t = 1e-6)]
    pub hamiltonian_tol: f64,
    /// Largest relative difference between stored and recomputed cost.
    #[arg(long, default_value_t = 1e-10)]
    pub cost_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
    Plot,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    pub library: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: ExportFormat,
    /// Abscissa for plot data: sigma, t, cost, u0, arclength or a state such as x0[2].
    #[arg(long, default_value = "sigma")]
    pub x: String,
    /// Ordinate for plot data.
    #[arg(long, default_value = "cost")]
    pub y: String,
    #[arg(long, short)]
    pub out: PathBuf,
}
