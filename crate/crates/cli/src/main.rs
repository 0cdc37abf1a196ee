mod args;
mod experiment;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use relu_milp::bnb::{MilpResult, MilpStatus};
use relu_milp::interval::BoundsTable;
use relu_milp::milp::{plan_partitions, write_lp};
use relu_milp::nn::{load_network, InputBox, NeuralNet};
use relu_milp::obbt::{run_obbt, InputDomain, ObbtConfig};
use relu_milp::oracle::{enumerate_task, OracleResult};
use relu_milp::tasks::{build_task, load_instance, task_bounds, AdversaryInstance, TaskKind, TaskSpec};
use relu_milp::Error;

use args::{BoundsArgs, Cli, Command, TaskArgs};

/// Failure with its exit code: 1 usage, 2 infeasible or refused, 3 internal.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse(_)
            | Error::Layer { .. }
            | Error::Dimension { .. }
            | Error::Strategy(_)
            | Error::Instance(_)
            | Error::Json(_) => 1,
            Error::OracleBudget { .. } | Error::NonLiftedCap { .. } => 2,
            _ => 3,
        };
        Self { code, message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: &Cli) -> CliResult<u8> {
    match &cli.command {
        Command::Encode { task, formulation, bounds, output } => {
            let (net, spec) = load_task(task, cli.seed)?;
            let fcfg = formulation.config(cli.seed)?;
            let table = resolve_bounds(&net, &spec, &fcfg, bounds)?;
            let tm = build_task(&net, &spec, &fcfg, &table)?;
            write_output(output.as_deref(), &write_lp(tm.model()))?;
            Ok(0)
        }
        Command::Obbt { net, instance, input_range, formulation, bounds, output } => {
            let net = read_net(net)?;
            let fcfg = formulation.config(cli.seed)?;
            let domain = match instance {
                Some(path) => {
                    let inst = read_instance(path, &net, cli.seed)?;
                    TaskSpec::for_kind(default_kind(&inst), &inst, None)?.domain
                }
                None => InputDomain::from_box(InputBox::uniform(net.input_dim, input_range[0], input_range[1])),
            };
            let cfg = ObbtConfig {
                lp: bounds.lp_limits(),
                ..ObbtConfig::new(bounds.obbt(), fcfg.clone())
            };
            let table = if bounds.obbt() == relu_milp::obbt::ObbtMode::Interval {
                relu_milp::interval::propagate(&net, &domain.bounds, &plan_partitions(&net, &fcfg)?)?
            } else {
                run_obbt(&net, &domain, &cfg)?
            };
            let (inactive, active, unstable) = table.stability_counts();
            log::info!("inactive={inactive} active={active} unstable={unstable}");
            write_output(output.as_deref(), &table.to_json())?;
            Ok(0)
        }
        Command::Solve { task, formulation, bounds, solver, output } => {
            let (net, spec) = load_task(task, cli.seed)?;
            let fcfg = formulation.config(cli.seed)?;
            let table = resolve_bounds(&net, &spec, &fcfg, bounds)?;
            let tm = build_task(&net, &spec, &fcfg, &table)?;
            let result = tm.solve(&solver.config(bounds)?)?;
            let input = result.incumbent_point.as_deref().map(|p| tm.input_point(p));
            let epsilon = tm.epsilon.and_then(|e| result.incumbent_point.as_ref().map(|p| p[e.0]));
            let report = SolveReport {
                task: spec.kind,
                formulation: fcfg.formulation.to_string(),
                input,
                epsilon,
                result: &result,
            };
            write_output(output.as_deref(), &to_json(&report)?)?;
            Ok(if result.status == MilpStatus::Infeasible { 2 } else { 0 })
        }
        Command::Oracle { task, bounds, output } => {
            let (net, spec) = load_task(task, cli.seed)?;
            let result: OracleResult = enumerate_task(&net, &spec, &bounds.lp_limits())?;
            write_output(output.as_deref(), &to_json(&result)?)?;
            Ok(if result.value.is_none() { 2 } else { 0 })
        }
        Command::Experiment { config, output, summary } => {
            experiment::run(config, output.as_deref(), summary.as_deref())?;
            Ok(0)
        }
        Command::PartitionInfo { net, formulation, output } => {
            let net = read_net(net)?;
            let fcfg = formulation.config(cli.seed)?;
            let plan = plan_partitions(&net, &fcfg)?;
            let mut out = String::new();
            for (l, layer) in plan.iter().enumerate().take(net.layers.len() - 1) {
                for (r, part) in layer.iter().enumerate() {
                    let w = &net.layers[l].weights[r];
                    let info = PartitionInfo {
                        layer: l,
                        node: r,
                        sizes: part.subsets().iter().map(Vec::len).collect(),
                        weight_sums: part.subsets().iter().map(|s| s.iter().map(|&i| w[i]).sum()).collect(),
                        subsets: part.subsets(),
                    };
                    out.push_str(&serde_json::to_string(&info).map_err(|e| CliError { code: 3, message: e.to_string() })?);
                    out.push('\n');
                }
            }
            write_output(output.as_deref(), &out)?;
            Ok(0)
        }
    }
}

#[derive(Serialize)]
struct SolveReport<'a> {
    task: TaskKind,
    formulation: String,
    input: Option<Vec<f64>>,
    epsilon: Option<f64>,
    #[serde(flatten)]
    result: &'a MilpResult,
}

#[derive(Serialize)]
struct PartitionInfo<'a> {
    layer: usize,
    node: usize,
    sizes: Vec<usize>,
    weight_sums: Vec<f64>,
    subsets: &'a [Vec<usize>],
}

pub fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn read_net(path: &Path) -> CliResult<NeuralNet> {
    load_network(&read_file(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn read_instance(path: &Path, net: &NeuralNet, seed: u64) -> CliResult<AdversaryInstance> {
    let spec = load_instance(&read_file(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok(spec.resolve(net, seed)?)
}

/// Optimal adversary for L1 instances, verification for L-infinity ones.
pub fn default_kind(inst: &AdversaryInstance) -> TaskKind {
    match inst.norm {
        relu_milp::tasks::Norm::L1 => TaskKind::OptimalAdversary,
        relu_milp::tasks::Norm::Linf => TaskKind::Verification,
    }
}

fn load_task(args: &TaskArgs, seed: u64) -> CliResult<(NeuralNet, TaskSpec)> {
    let net = read_net(&args.net)?;
    let inst = read_instance(&args.instance, &net, seed)?;
    let kind = args.task.map(TaskKind::from).unwrap_or_else(|| default_kind(&inst));
    let spec = TaskSpec::for_kind(kind, &inst, args.eps_cap)?;
    Ok((net, spec))
}

fn resolve_bounds(
    net: &NeuralNet,
    spec: &TaskSpec,
    fcfg: &relu_milp::milp::FormulationConfig,
    args: &BoundsArgs,
) -> CliResult<BoundsTable> {
    match &args.bounds {
        Some(path) => {
            let table = BoundsTable::from_json(&read_file(path)?)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            table.check_shape(net).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            Ok(table)
        }
        None => Ok(task_bounds(net, spec, fcfg, args.obbt(), &args.lp_limits())?),
    }
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map_err(|e| CliError { code: 3, message: e.to_string() })
}

pub fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::usage(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            let r = out.write_all(text.as_bytes()).and_then(|_| {
                if text.ends_with('\n') {
                    Ok(())
                } else {
                    out.write_all(b"\n")
                }
            });
            match r {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(CliError { code: 3, message: format!("stdout: {e}") })
                }
                _ => Ok(()),
            }
        }
    }
}

pub fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}
