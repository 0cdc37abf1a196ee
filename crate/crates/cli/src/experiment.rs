//! Batch runner: instances x formulations from a TOML manifest, one CSV row per run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use relu_milp::bnb::BnbConfig;
use relu_milp::milp::{format_g17, Formulation, FormulationConfig};
use relu_milp::nn::NeuralNet;
use relu_milp::obbt::ObbtMode;
use relu_milp::tasks::{build_task, load_instance, task_bounds, AdvLabel, InstanceSpec, Norm, TaskKind, TaskSpec};

use crate::args::{formulation_config, CutsArg, ObbtArg, SolverSettings, StrategyArg, TaskArg};
use crate::{default_kind, parent_dir, read_file, read_net, CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub network: NetworkSection,
    pub instances: InstancesSection,
    pub formulations: FormulationsSection,
    #[serde(default)]
    pub solver: SolverSettings,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub path: PathBuf,
}

/// Either explicit instance files or `count` targets drawn uniformly from the
/// clip box, labelled with the network's prediction.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstancesSection {
    #[serde(default)]
    pub files: Vec<PathBuf>,
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_norm")]
    pub norm: Norm,
    #[serde(default = "default_clip")]
    pub clip: (f64, f64),
    /// `"random"` or `"second"`; generated instances only.
    #[serde(default = "default_adv")]
    pub adv_label: String,
    pub task: Option<TaskArg>,
    pub eps_cap: Option<f64>,
}

fn default_norm() -> Norm {
    Norm::L1
}

fn default_clip() -> (f64, f64) {
    (0.0, 1.0)
}

fn default_adv() -> String {
    "random".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulationsSection {
    /// `bigm`, `hull`, `partition:N` or `nonlifted:N`.
    pub list: Vec<String>,
    #[serde(default = "default_strategy")]
    pub strategy: StrategyArg,
    #[serde(default = "default_obbt")]
    pub obbt: ObbtArg,
    #[serde(default = "default_true")]
    pub stabilize: bool,
}

fn default_strategy() -> StrategyArg {
    StrategyArg::EqualSize
}

fn default_obbt() -> ObbtArg {
    ObbtArg::Interval
}

fn default_true() -> bool {
    true
}

pub fn load_manifest(path: &Path) -> CliResult<Manifest> {
    toml::from_str(&read_file(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub struct Instance {
    pub id: usize,
    pub seed: u64,
    pub spec: Result<TaskSpec, String>,
}

pub struct Row {
    pub instance: usize,
    pub seed: u64,
    pub task: String,
    pub formulation: String,
    pub n: Option<usize>,
    pub strategy: String,
    pub obbt: String,
    pub cuts: String,
    pub status: String,
    pub value: Option<f64>,
    pub bound: Option<f64>,
    pub root_bound: Option<f64>,
    pub nodes: usize,
    pub cuts_added: usize,
    pub bounds_time: f64,
    pub wall_time: f64,
    pub error: String,
}

impl Row {
    pub fn solved(&self) -> bool {
        self.status == "optimal" || self.status == "sign-determined"
    }
}

pub const COLUMNS: [&str; 17] = [
    "instance",
    "seed",
    "task",
    "formulation",
    "n",
    "strategy",
    "obbt",
    "cuts",
    "status",
    "value",
    "bound",
    "root_bound",
    "nodes",
    "cuts_added",
    "bounds_time",
    "wall_time",
    "error",
];

pub fn run(config: &Path, output: Option<&Path>, summary: Option<&Path>) -> CliResult<()> {
    let manifest = load_manifest(config)?;
    let base = parent_dir(config);
    let net = read_net(&base.join(&manifest.network.path))?;
    let formulations = manifest
        .formulations
        .list
        .iter()
        .map(|s| s.parse::<Formulation>().map_err(|e| CliError::usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    if formulations.is_empty() {
        return Err(CliError::usage("[formulations] list is empty"));
    }
    let bnb = manifest.solver.config()?;
    let instances = make_instances(&net, &manifest.instances, &base)?;
    let runs: Vec<(&Instance, Formulation)> = instances
        .iter()
        .flat_map(|inst| formulations.iter().map(move |&f| (inst, f)))
        .collect();
    log::info!("runs={} instances={} formulations={}", runs.len(), instances.len(), formulations.len());
    let rows: Vec<Row> = runs
        .par_iter()
        .map(|(inst, f)| run_one(&net, inst, *f, &manifest, &bnb))
        .collect();
    let table = write_rows(&rows)?;
    crate::write_output(output, &table)?;
    let sum = summarize(&rows, &manifest.formulations.list);
    match summary {
        Some(p) => crate::write_output(Some(p), &sum)?,
        None => eprint!("{sum}"),
    }
    Ok(())
}

pub fn make_instances(net: &NeuralNet, sec: &InstancesSection, base: &Path) -> CliResult<Vec<Instance>> {
    let kind = |spec: &InstanceSpec, seed: u64| -> Result<TaskSpec, String> {
        let inst = spec.resolve(net, seed).map_err(|e| e.to_string())?;
        let kind = sec.task.map(TaskKind::from).unwrap_or_else(|| default_kind(&inst));
        TaskSpec::for_kind(kind, &inst, sec.eps_cap).map_err(|e| e.to_string())
    };
    if !sec.files.is_empty() {
        return sec
            .files
            .iter()
            .enumerate()
            .map(|(id, f)| {
                let path = base.join(f);
                let spec = load_instance(&read_file(&path)?)
                    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
                let seed = sec.seed.wrapping_add(id as u64);
                Ok(Instance { id, seed, spec: kind(&spec, seed) })
            })
            .collect();
    }
    if sec.count == 0 {
        return Err(CliError::usage("[instances] needs `files` or a positive `count`"));
    }
    let adv = match sec.adv_label.as_str() {
        "random" => AdvLabel::Random,
        "second" => AdvLabel::Second,
        other => return Err(CliError::usage(format!("[instances] adv_label must be \"random\" or \"second\", got {other:?}"))),
    };
    let (lo, hi) = sec.clip;
    if !(lo < hi) {
        return Err(CliError::usage(format!("[instances] clip range [{lo}, {hi}] is empty")));
    }
    (0..sec.count)
        .map(|id| {
            let seed = sec.seed.wrapping_add(id as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let target: Vec<f64> = (0..net.input_dim).map(|_| rng.gen_range(lo..=hi)).collect();
            let f = net.forward(&target)?;
            let true_label = (0..f.len()).fold(0, |b, k| if f[k] > f[b] { k } else { b });
            let spec = InstanceSpec {
                target,
                true_label,
                adv_label: adv,
                epsilon: sec.epsilon,
                norm: sec.norm,
                clip: sec.clip,
            };
            Ok(Instance { id, seed, spec: kind(&spec, seed) })
        })
        .collect()
}

fn run_one(net: &NeuralNet, inst: &Instance, formulation: Formulation, m: &Manifest, bnb: &BnbConfig) -> Row {
    let mut row = Row {
        instance: inst.id,
        seed: inst.seed,
        task: String::new(),
        formulation: formulation.to_string(),
        n: formulation.num_partitions(),
        strategy: arg_name(m.formulations.strategy),
        obbt: arg_name(m.formulations.obbt),
        cuts: match m.solver.cuts {
            CutsArg::Freq => format!("freq:{}", m.solver.cut_freq_k),
            c => arg_name(c),
        },
        status: "error".into(),
        value: None,
        bound: None,
        root_bound: None,
        nodes: 0,
        cuts_added: 0,
        bounds_time: 0.0,
        wall_time: 0.0,
        error: String::new(),
    };
    let spec = match &inst.spec {
        Ok(s) => s,
        Err(e) => {
            row.error = e.clone();
            return row;
        }
    };
    row.task = label(&spec.kind);
    let outcome = (|| -> Result<(), String> {
        let fcfg: FormulationConfig = formulation_config(formulation, m.formulations.strategy, inst.seed, m.formulations.stabilize)
            .map_err(|e| e.message)?;
        let mode: ObbtMode = m.formulations.obbt.into();
        let t = Instant::now();
        let table = task_bounds(net, spec, &fcfg, mode, &bnb.lp).map_err(|e| e.to_string())?;
        row.bounds_time = t.elapsed().as_secs_f64();
        let tm = build_task(net, spec, &fcfg, &table).map_err(|e| e.to_string())?;
        let r = tm.solve(bnb).map_err(|e| e.to_string())?;
        row.status = label(&r.status);
        row.value = Some(r.incumbent_value).filter(|v| v.is_finite());
        row.bound = Some(r.best_bound);
        row.root_bound = Some(r.root_bound);
        row.nodes = r.nodes_explored;
        row.cuts_added = r.cuts_added;
        row.wall_time = r.wall_time;
        Ok(())
    })();
    if let Err(e) = outcome {
        row.status = "error".into();
        row.error = e;
    }
    row
}

fn arg_name<T: clap::ValueEnum>(v: T) -> String {
    v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default()
}

/// Serde name of a unit enum value.
fn label<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn num(v: Option<f64>) -> String {
    v.map(format_g17).unwrap_or_default()
}

pub fn write_rows(rows: &[Row]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let internal = |e: csv::Error| CliError { code: 3, message: e.to_string() };
    w.write_record(COLUMNS).map_err(internal)?;
    for r in rows {
        w.write_record([
            r.instance.to_string(),
            r.seed.to_string(),
            r.task.clone(),
            r.formulation.clone(),
            r.n.map(|n| n.to_string()).unwrap_or_default(),
            r.strategy.clone(),
            r.obbt.clone(),
            r.cuts.clone(),
            r.status.clone(),
            num(r.value),
            num(r.bound),
            num(r.root_bound),
            r.nodes.to_string(),
            r.cuts_added.to_string(),
            format_g17(r.bounds_time),
            format_g17(r.wall_time),
            r.error.clone(),
        ])
        .map_err(internal)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError { code: 3, message: e.to_string() })?;
    String::from_utf8(bytes).map_err(|e| CliError { code: 3, message: e.to_string() })
}

/// Per formulation: runs, solved runs, and mean time and nodes over the
/// instances that every formulation solved.
pub fn summarize(rows: &[Row], formulations: &[String]) -> String {
    let names: Vec<String> = formulations
        .iter()
        .filter_map(|s| s.parse::<Formulation>().ok().map(|f| f.to_string()))
        .collect();
    let instances: BTreeSet<usize> = rows.iter().map(|r| r.instance).collect();
    let common: BTreeSet<usize> = instances
        .into_iter()
        .filter(|&i| {
            names
                .iter()
                .all(|f| rows.iter().any(|r| r.instance == i && &r.formulation == f && r.solved()))
        })
        .collect();
    let mut out = String::from("formulation,runs,solved,common,mean_time,mean_nodes\n");
    for f in &names {
        let mine: Vec<&Row> = rows.iter().filter(|r| &r.formulation == f).collect();
        let solved = mine.iter().filter(|r| r.solved()).count();
        let shared: Vec<&&Row> = mine.iter().filter(|r| common.contains(&r.instance) && r.solved()).collect();
        let mean = |g: &dyn Fn(&Row) -> f64| {
            if shared.is_empty() {
                None
            } else {
                Some(shared.iter().map(|r| g(r)).sum::<f64>() / shared.len() as f64)
            }
        };
        out.push_str(&format!(
            "{f},{},{solved},{},{},{}\n",
            mine.len(),
            common.len(),
            num(mean(&|r| r.bounds_time + r.wall_time)),
            num(mean(&|r| r.nodes as f64)),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(instance: usize, formulation: &str, status: &str, time: f64) -> Row {
        Row {
            instance,
            seed: 0,
            task: "optimal-adversary".into(),
            formulation: formulation.into(),
            n: Some(1),
            strategy: "equal-size".into(),
            obbt: "interval".into(),
            cuts: "off".into(),
            status: status.into(),
            value: Some(0.5),
            bound: Some(0.5),
            root_bound: Some(1.0),
            nodes: 3,
            cuts_added: 0,
            bounds_time: 0.0,
            wall_time: time,
            error: String::new(),
        }
    }

    #[test]
    fn summary_mean_skips_instances_any_formulation_missed() {
        let rows = vec![
            row(0, "bigm", "optimal", 1.0),
            row(0, "partition:2", "optimal", 3.0),
            row(1, "bigm", "time-limit", 100.0),
            row(1, "partition:2", "optimal", 50.0),
        ];
        let s = summarize(&rows, &["bigm".into(), "partition:2".into()]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[1], "bigm,2,1,1,1,3");
        assert_eq!(lines[2], "partition:2,2,2,1,3,3");
    }

    #[test]
    fn csv_has_fixed_columns_and_plain_decimals() {
        let mut r = row(0, "bigm", "optimal", 0.25);
        r.value = Some(1.0 / 3.0);
        let text = write_rows(&[r]).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), COLUMNS.join(","));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), COLUMNS.len());
        assert_eq!(fields[9], "0.33333333333333331");
        assert_eq!(fields[15], "0.25");
    }

    #[test]
    fn manifest_defaults() {
        let m: Manifest = toml::from_str(
            r#"
            [network]
            path = "net.json"
            [instances]
            count = 3
            epsilon = 0.1
            [formulations]
            list = ["bigm", "partition:2"]
            "#,
        )
        .unwrap();
        assert_eq!(m.instances.norm, Norm::L1);
        assert_eq!(m.formulations.obbt, ObbtArg::Interval);
        assert_eq!(m.solver.cuts, CutsArg::Off);
        assert!(toml::from_str::<Manifest>("[network]\npath='a'\nbogus=1\n[instances]\n[formulations]\nlist=[]").is_err());
    }
}
