use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use relu_milp::bnb::{BnbConfig, BranchRule, CutPolicy, NodeSelection};
use relu_milp::lp::LpLimits;
use relu_milp::milp::{Formulation, FormulationConfig};
use relu_milp::obbt::ObbtMode;
use relu_milp::partition::{Strategy, StrategyConfig};
use relu_milp::tasks::TaskKind;

use crate::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "relu-milp", version, about = "MILP formulations and solver for trained ReLU networks")]
pub struct Cli {
    /// Seed for random partitions and random adversarial labels.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log filter, e.g. `info` or `relu_milp=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the task's MILP in CPLEX LP format.
    Encode {
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        formulation: FormulationArgs,
        #[command(flatten)]
        bounds: BoundsArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compute node bounds and write them as JSON.
    Obbt {
        #[arg(long)]
        net: PathBuf,
        /// Use the instance's input region instead of a box.
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Input box `LO,HI` applied to every input when no instance is given.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.0, 1.0], allow_negative_numbers = true)]
        input_range: Vec<f64>,
        #[command(flatten)]
        formulation: FormulationArgs,
        #[command(flatten)]
        bounds: BoundsArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Solve the task by branch-and-bound and print the result as JSON.
    Solve {
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        formulation: FormulationArgs,
        #[command(flatten)]
        bounds: BoundsArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Solve the task by enumerating activation patterns.
    Oracle {
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        bounds: BoundsArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a batch of instances and formulations from a TOML manifest.
    Experiment {
        config: PathBuf,
        /// CSV with one row per run (default: stdout).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Summary CSV (default: stderr).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Print the partition of every hidden node, one JSON object per line.
    PartitionInfo {
        #[arg(long)]
        net: PathBuf,
        #[command(flatten)]
        formulation: FormulationArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TaskArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub instance: PathBuf,
    /// Defaults to optimal-adversary for L1 instances and verification for L-infinity.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Upper bound on the radius for min-distortion (default: input dimension).
    #[arg(long)]
    pub eps_cap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskArg {
    OptimalAdversary,
    Verification,
    MinDistortion,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::OptimalAdversary => TaskKind::OptimalAdversary,
            TaskArg::Verification => TaskKind::Verification,
            TaskArg::MinDistortion => TaskKind::MinDistortion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormulationKind {
    Bigm,
    Partition,
    Nonlifted,
    Hull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    EqualSize,
    EqualRange,
    Random,
    Uneven,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::EqualSize => Strategy::EqualSize,
            StrategyArg::EqualRange => Strategy::EqualRange,
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Uneven => Strategy::UnevenMagnitudes,
        }
    }
}

#[derive(Debug, Args)]
pub struct FormulationArgs {
    #[arg(long, value_enum, default_value_t = FormulationKind::Bigm)]
    pub formulation: FormulationKind,
    #[arg(long, default_value_t = 2)]
    pub num_partitions: usize,
    #[arg(long = "partition", value_enum, default_value_t = StrategyArg::EqualSize)]
    pub strategy: StrategyArg,
    /// Encode nodes with a fixed sign like any other node.
    #[arg(long)]
    pub no_stabilize: bool,
}

impl FormulationArgs {
    pub fn config(&self, seed: u64) -> CliResult<FormulationConfig> {
        let n = self.num_partitions;
        if n == 0 {
            return Err(CliError::usage("--num-partitions must be at least 1"));
        }
        let formulation = match self.formulation {
            FormulationKind::Bigm => Formulation::BigM,
            FormulationKind::Partition => Formulation::Partitioned { n },
            FormulationKind::Nonlifted => Formulation::NonLifted { n },
            FormulationKind::Hull => Formulation::ConvexHull,
        };
        formulation_config(formulation, self.strategy, seed, !self.no_stabilize)
    }
}

pub fn formulation_config(
    formulation: Formulation,
    strategy: StrategyArg,
    seed: u64,
    stabilize: bool,
) -> CliResult<FormulationConfig> {
    let n = formulation.num_partitions().unwrap_or(1);
    let strategy = StrategyConfig::new(strategy.into(), n).with_seed(seed);
    if matches!(formulation, Formulation::Partitioned { .. } | Formulation::NonLifted { .. }) {
        strategy.validate()?;
    }
    Ok(FormulationConfig::new(formulation, strategy).with_stabilize(stabilize))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
pub enum ObbtArg {
    #[serde(rename = "interval")]
    Interval,
    #[value(name = "2n2")]
    #[serde(rename = "2n2")]
    Shared,
    #[value(name = "4n")]
    #[serde(rename = "4n")]
    Split,
}

impl From<ObbtArg> for ObbtMode {
    fn from(m: ObbtArg) -> Self {
        match m {
            ObbtArg::Interval => ObbtMode::Interval,
            ObbtArg::Shared => ObbtMode::Shared2N2,
            ObbtArg::Split => ObbtMode::Split4N,
        }
    }
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long = "mode", value_enum, default_value_t = ObbtArg::Interval)]
    pub mode: ObbtArg,
    /// Read node bounds from a file written by `obbt` instead of computing them.
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    /// Simplex iteration budget per LP.
    #[arg(long, default_value_t = 50_000)]
    pub lp_iter_limit: usize,
    /// Wall-clock budget per LP in seconds.
    #[arg(long)]
    pub lp_seconds: Option<f64>,
}

impl BoundsArgs {
    pub fn obbt(&self) -> ObbtMode {
        self.mode.into()
    }

    pub fn lp_limits(&self) -> LpLimits {
        lp_limits(self.lp_iter_limit, self.lp_seconds)
    }
}

pub fn lp_limits(max_iters: usize, seconds: Option<f64>) -> LpLimits {
    LpLimits {
        max_iters,
        time_limit: seconds.map(Duration::from_secs_f64),
        ..LpLimits::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutsArg {
    Off,
    Root,
    Freq,
}

pub fn cut_policy(cuts: CutsArg, k: usize) -> CliResult<CutPolicy> {
    match cuts {
        CutsArg::Off => Ok(CutPolicy::Off),
        CutsArg::Root => Ok(CutPolicy::RootOnly),
        CutsArg::Freq if k == 0 => Err(CliError::usage("--cut-freq-k must be at least 1")),
        CutsArg::Freq => Ok(CutPolicy::Every(k)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeSelectionArg {
    BestBound,
    Dfs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchRuleArg {
    MostFractional,
    PseudoCost,
    Reliability,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = CutsArg::Off)]
    pub cuts: CutsArg,
    #[arg(long, default_value_t = 10)]
    pub cut_freq_k: usize,
    /// Seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub node_limit: Option<usize>,
    #[arg(long, value_enum, default_value_t = NodeSelectionArg::BestBound)]
    pub node_selection: NodeSelectionArg,
    #[arg(long, value_enum, default_value_t = BranchRuleArg::Reliability)]
    pub branch_rule: BranchRuleArg,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_gap: f64,
    /// Disable the activation-pattern primal heuristic.
    #[arg(long)]
    pub no_heuristic: bool,
}

impl SolverArgs {
    pub fn config(&self, bounds: &BoundsArgs) -> CliResult<BnbConfig> {
        let settings = SolverSettings {
            cuts: self.cuts,
            cut_freq_k: self.cut_freq_k,
            time_limit: self.time_limit,
            node_limit: self.node_limit,
            node_selection: self.node_selection,
            branch_rule: self.branch_rule,
            rel_gap: self.rel_gap,
            heuristic: !self.no_heuristic,
            lp_iter_limit: bounds.lp_iter_limit,
            lp_seconds: bounds.lp_seconds,
        };
        settings.config()
    }
}

/// Solver options shared by `solve` and the experiment manifest.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub cuts: CutsArg,
    pub cut_freq_k: usize,
    pub time_limit: Option<f64>,
    pub node_limit: Option<usize>,
    pub node_selection: NodeSelectionArg,
    pub branch_rule: BranchRuleArg,
    pub rel_gap: f64,
    pub heuristic: bool,
    pub lp_iter_limit: usize,
    pub lp_seconds: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            cuts: CutsArg::Off,
            cut_freq_k: 10,
            time_limit: None,
            node_limit: None,
            node_selection: NodeSelectionArg::BestBound,
            branch_rule: BranchRuleArg::Reliability,
            rel_gap: 1e-6,
            heuristic: true,
            lp_iter_limit: 50_000,
            lp_seconds: None,
        }
    }
}

impl SolverSettings {
    pub fn config(&self) -> CliResult<BnbConfig> {
        if let Some(t) = self.time_limit {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(CliError::usage(format!("time limit must be a non-negative number of seconds, got {t}")));
            }
        }
        Ok(BnbConfig {
            node_selection: match self.node_selection {
                NodeSelectionArg::BestBound => NodeSelection::BestBound,
                NodeSelectionArg::Dfs => NodeSelection::DepthFirst,
            },
            branch_rule: match self.branch_rule {
                BranchRuleArg::MostFractional => BranchRule::MostFractional,
                BranchRuleArg::PseudoCost => BranchRule::PseudoCost,
                BranchRuleArg::Reliability => BranchRule::Reliability,
            },
            rel_gap: self.rel_gap,
            time_limit: self.time_limit.map(Duration::from_secs_f64),
            node_limit: self.node_limit,
            cut_policy: cut_policy(self.cuts, self.cut_freq_k)?,
            heuristic_every: usize::from(self.heuristic),
            lp: lp_limits(self.lp_iter_limit, self.lp_seconds),
            ..BnbConfig::default()
        })
    }
}
