//! Flag definitions and the flat JSON config overlay.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "odyn", version, about = "Opinion-dynamics message passing on graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one kernel and write the trajectory.
    Simulate(SimArgs),
    /// The four toy systems on the three-node graph.
    Toy(ToyArgs),
    /// Equilibria of the reduced equation over a range of u.
    Bifurcation(BifurcationArgs),
    /// Dirichlet energy and opinion diameter along a run.
    Energy(SimArgs),
    /// Analytic against finite-difference gradient on a random fixture.
    Gradcheck(GradcheckArgs),
    /// Train the encoder on a two-block synthetic task.
    Train(TrainArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
    /// Render a CSV written by another command as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BMode {
    Zero,
    Init,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SimArgs {
    /// bimp, linear-od, laplacian (grand-l), laplacian-source (grand++-l),
    /// graphcon-tran, gread-f, gread-fb or reduced.
    #[arg(long, default_value = "bimp")]
    pub kernel: String,
    /// Graph JSON (`{"n": .., "edges": [[src, dst, w], ..]}`); the toy graph if absent.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Initial state CSV; the toy state, or a seeded random one for a custom graph.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Options per agent for a random initial state.
    #[arg(long, default_value_t = 3)]
    pub options: usize,
    #[arg(long, default_value_t = 0.05)]
    pub dt: f64,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    #[arg(long, value_enum, default_value_t = Method::Euler)]
    pub method: Method,
    #[arg(long, default_value_t = 1.0)]
    pub d: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Attention strength; `d / (alpha + 3)` if absent.
    #[arg(long)]
    pub u: Option<f64>,
    /// Second coefficient of the gread kernels.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value = "tanh")]
    pub saturation: String,
    /// Input term; `init` for bimp and laplacian-source unless given.
    #[arg(long, value_enum)]
    pub b_mode: Option<BMode>,
    #[arg(long)]
    pub b_file: Option<PathBuf>,
    /// Output directory (simulate) or file (energy); stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct BifurcationArgs {
    #[arg(long, default_value_t = 1.0)]
    pub d: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Scalar input of the reduced equation.
    #[arg(long, default_value_t = 0.0)]
    pub b: f64,
    #[arg(long, default_value_t = 0.05)]
    pub u_min: f64,
    #[arg(long, default_value_t = 0.6)]
    pub u_max: f64,
    #[arg(long, default_value_t = 112)]
    pub points: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 6)]
    pub agents: usize,
    #[arg(long, default_value_t = 4)]
    pub features: usize,
    #[arg(long, default_value_t = 3)]
    pub options: usize,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    #[arg(long, default_value_t = 1.0)]
    pub d: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long)]
    pub u: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Nodes per block.
    #[arg(long, default_value_t = 10)]
    pub block: usize,
    #[arg(long, default_value_t = 0.8)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.05)]
    pub p_out: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    #[arg(long, default_value_t = 1.0)]
    pub d: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long)]
    pub u: Option<f64>,
    /// History CSV; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct VerifyArgs {
    /// Skip the thread pool.
    #[arg(long)]
    pub sequential: bool,
    /// Run only these criteria.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<u32>,
    /// Report file; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct PlotArgs {
    /// A states, metrics, bifurcation or history CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// SVG file; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub log_y: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Splice the `--config` file into the argument list right after the verb,
/// so flags given on the command line come later and win.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = find_config(&args) else {
        return Ok(args);
    };
    let extra = config_flags(Path::new(&path))?;
    let mut out = Vec::with_capacity(args.len() + extra.len());
    out.extend_from_slice(&args[..2]);
    out.extend(extra);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

fn find_config(args: &[String]) -> Option<String> {
    let mut it = args.iter().skip(2);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn config_flags(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let serde_json::Value::Object(map) = value else {
        return Err(CliError::Usage(format!("{}: config must be a JSON object", path.display())));
    };
    let mut flags = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            return Err(CliError::Usage("config files cannot nest --config".into()));
        }
        match v {
            serde_json::Value::Null | serde_json::Value::Bool(false) => {}
            serde_json::Value::Bool(true) => flags.push(flag),
            serde_json::Value::Number(n) => flags.extend([flag, n.to_string()]),
            serde_json::Value::String(s) => flags.extend([flag, s]),
            serde_json::Value::Array(items) => {
                let parts: Option<Vec<String>> = items
                    .iter()
                    .map(|i| match i {
                        serde_json::Value::Number(n) => Some(n.to_string()),
                        serde_json::Value::String(s) => Some(s.clone()),
                        _ => None,
                    })
                    .collect();
                let parts = parts.ok_or_else(|| CliError::Usage(format!("config key '{key}' has a nested value")))?;
                flags.extend([flag, parts.join(",")]);
            }
            serde_json::Value::Object(_) => {
                return Err(CliError::Usage(format!("config key '{key}' has a nested value")));
            }
        }
    }
    Ok(flags)
}
