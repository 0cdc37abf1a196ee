//! Optimization-based bound tightening.
//!
//! Layer `L` is tightened with LPs over the relaxed encoding of layers
//! `0..L` (the prefix), built from bounds already tightened for those layers.
//! Nodes of one layer only see earlier layers, so they are solved in parallel
//! and the result does not depend on processing order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{interval_node_bounds, propagate, BoundsTable, Interval, NodeBounds, PartitionPlan, Provenance};
use crate::lp::{Basis, LpLimits, LpProblem, LpStatus};
use crate::milp::{encode_hidden_layers, plan_partitions, FormulationConfig, LinExpr, MilpModel, ObjSense, Sense, VarId};
use crate::nn::{InputBox, NeuralNet};
use crate::partition::Partition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObbtMode {
    /// Interval arithmetic only.
    Interval,
    /// Min/max of the preactivation and of every partition sum.
    Shared2N2,
    /// Additionally bound each partition sum under `w.x + b <= 0` and `>= 0`.
    Split4N,
}

/// Input region: a box, optionally intersected with an L1 ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDomain {
    pub bounds: InputBox,
    pub l1_ball: Option<(Vec<f64>, f64)>,
}

impl InputDomain {
    pub fn from_box(bounds: InputBox) -> Self {
        Self { bounds, l1_ball: None }
    }

    /// Adds the input variables (and the ball's auxiliaries) to `model`.
    pub fn add_to(&self, model: &mut MilpModel) -> Vec<VarId> {
        let b = &self.bounds;
        let x: Vec<VarId> = (0..b.dim())
            .map(|i| model.add_continuous(format!("x{i}"), b.lower[i], b.upper[i]))
            .collect();
        if let Some((center, radius)) = &self.l1_ball {
            add_l1_ball(model, &x, &self.bounds, center, L1Radius::Fixed(*radius));
        }
        x
    }
}

/// Radius of an L1 ball constraint: fixed, or a variable in the model.
#[derive(Debug, Clone, Copy)]
pub enum L1Radius {
    Fixed(f64),
    Var(VarId),
}

/// `sum_i |x_i - c_i| <= radius` through auxiliaries `d_i >= |x_i - c_i|`.
/// Returns the auxiliaries.
pub fn add_l1_ball(model: &mut MilpModel, x: &[VarId], bx: &InputBox, center: &[f64], radius: L1Radius) -> Vec<VarId> {
    let d: Vec<VarId> = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let reach = (bx.upper[i] - center[i]).abs().max((center[i] - bx.lower[i]).abs());
            let di = model.add_continuous(format!("d{i}"), 0.0, reach);
            model.add_constraint(format!("l1_pos{i}"), LinExpr::term(di, 1.0).with(xi, -1.0), Sense::Ge, -center[i]);
            model.add_constraint(format!("l1_neg{i}"), LinExpr::term(di, 1.0).with(xi, 1.0), Sense::Ge, center[i]);
            di
        })
        .collect();
    let sum = LinExpr::from_terms(d.iter().map(|&v| (v, 1.0)));
    match radius {
        L1Radius::Fixed(r) => model.add_constraint("l1_radius", sum, Sense::Le, r),
        L1Radius::Var(e) => model.add_constraint("l1_radius", sum.with(e, -1.0), Sense::Le, 0.0),
    };
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObbtConfig {
    pub mode: ObbtMode,
    /// Formulation family of the prefix models and source of the partitions.
    pub formulation: FormulationConfig,
    /// Per-LP limits; hitting one keeps the interval value.
    pub lp: LpLimits,
    pub parallel: bool,
}

impl ObbtConfig {
    pub fn new(mode: ObbtMode, formulation: FormulationConfig) -> Self {
        Self {
            mode,
            formulation,
            lp: LpLimits::default(),
            parallel: true,
        }
    }
}

/// Relaxed encoding of the layers before some layer, as an LP.
pub struct Prefix {
    pub lp: LpProblem,
    /// Variables feeding the layer being tightened.
    pub inputs: Vec<VarId>,
}

/// Builds the relaxed prefix for `layer` from the current table.
pub fn build_prefix(
    net: &NeuralNet,
    domain: &InputDomain,
    formulation: &FormulationConfig,
    plan: &PartitionPlan,
    table: &BoundsTable,
    layer: usize,
) -> Result<Prefix> {
    let mut model = MilpModel::new();
    let x = domain.add_to(&mut model);
    let hidden = encode_hidden_layers(&mut model, net, &x, formulation, plan, table, layer)?;
    let inputs = hidden.last().map_or(x, |h| h.iter().map(|e| e.output).collect());
    Ok(Prefix {
        lp: LpProblem::from_model(&model, true)?,
        inputs,
    })
}

/// Outcome of one bounding LP.
enum Bound {
    Value(f64),
    Infeasible,
    Failed,
}

fn optimize(lp: &mut LpProblem, sense: ObjSense, expr: &LinExpr, warm: &mut Option<Basis>, limits: &LpLimits) -> Bound {
    lp.set_objective(sense, expr, 0.0);
    let r = lp.solve(warm.as_ref(), limits);
    match r.status {
        LpStatus::Optimal => {
            *warm = Some(r.basis);
            Bound::Value(r.objective)
        }
        LpStatus::Infeasible => Bound::Infeasible,
        LpStatus::Unbounded | LpStatus::IterationLimit => Bound::Failed,
    }
}

/// Min and max of `expr` over the prefix, intersected with `current`.
fn tighten_range(lp: &mut LpProblem, expr: &LinExpr, offset: f64, current: Interval, warm: &mut Option<Basis>, limits: &LpLimits) -> (Interval, bool) {
    let lo = optimize(lp, ObjSense::Minimize, expr, warm, limits);
    let hi = optimize(lp, ObjSense::Maximize, expr, warm, limits);
    let infeasible = matches!(lo, Bound::Infeasible) || matches!(hi, Bound::Infeasible);
    let mut out = current;
    let mut failed = false;
    match lo {
        Bound::Value(v) => out.lo = out.lo.max(v + offset),
        Bound::Failed => failed = true,
        Bound::Infeasible => {}
    }
    match hi {
        Bound::Value(v) => out.hi = out.hi.min(v + offset),
        Bound::Failed => failed = true,
        Bound::Infeasible => {}
    }
    out.provenance = if failed { Provenance::ObbtFallback } else { Provenance::Obbt };
    (out, infeasible)
}

/// Tightened preactivation range of `w.x + b` over the prefix.
pub fn tighten_preactivation(prefix: &Prefix, w: &[f64], b: f64, current: Interval, limits: &LpLimits) -> Interval {
    let expr = LinExpr::from_terms(prefix.inputs.iter().copied().zip(w.iter().copied()));
    let mut lp = prefix.lp.clone();
    tighten_range(&mut lp, &expr, b, current, &mut None, limits).0
}

/// Tightens one node: preactivation plus partition bounds per `mode`.
pub fn tighten_node(
    prefix: &Prefix,
    w: &[f64],
    b: f64,
    current: &NodeBounds,
    mode: ObbtMode,
    limits: &LpLimits,
) -> NodeBounds {
    let mut out = current.clone();
    if mode == ObbtMode::Interval {
        return out;
    }
    let mut lp = prefix.lp.clone();
    let mut warm = None;
    let full = LinExpr::from_terms(prefix.inputs.iter().copied().zip(w.iter().copied()));
    let (pre, _) = tighten_range(&mut lp, &full, b, current.preact, &mut warm, limits);
    out.preact = pre;
    let subsets = current.partition.subsets();
    let exprs: Vec<LinExpr> = subsets
        .iter()
        .map(|s| LinExpr::from_terms(s.iter().map(|&i| (prefix.inputs[i], w[i]))))
        .collect();
    let non_empty = subsets.iter().filter(|s| !s.is_empty()).count();
    for (n, s) in subsets.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        let shared = if non_empty == 1 {
            let mut iv = Interval::new(pre.lo - b, pre.hi - b);
            iv.provenance = pre.provenance;
            intersect(current.inactive[n], iv)
        } else {
            tighten_range(&mut lp, &exprs[n], 0.0, current.inactive[n].hull(&current.active[n]), &mut warm, limits).0
        };
        out.inactive[n] = intersect(current.inactive[n], shared);
        out.active[n] = intersect(current.active[n], shared);
    }
    if mode == ObbtMode::Split4N {
        for (active, rhs_sense) in [(false, Sense::Le), (true, Sense::Ge)] {
            let mut cond = lp.clone();
            cond.add_row(&full, rhs_sense, -b);
            let mut warm_c = None;
            for (n, s) in subsets.iter().enumerate() {
                if s.is_empty() {
                    continue;
                }
                let cur = if active { out.active[n] } else { out.inactive[n] };
                let (iv, infeasible) = tighten_range(&mut cond, &exprs[n], 0.0, cur, &mut warm_c, limits);
                if infeasible {
                    // No input reaches this phase: the node is stable.
                    if active {
                        out.preact.hi = out.preact.hi.min(0.0);
                    } else {
                        out.preact.lo = out.preact.lo.max(0.0);
                    }
                    break;
                }
                if active {
                    out.active[n] = iv;
                } else {
                    out.inactive[n] = iv;
                }
            }
        }
    }
    out
}

fn intersect(a: Interval, b: Interval) -> Interval {
    let provenance = if b.lo > a.lo || b.hi < a.hi { b.provenance } else { a.provenance };
    Interval {
        lo: a.lo.max(b.lo),
        hi: a.hi.min(b.hi),
        provenance,
    }
}

/// Intersects `current` with interval arithmetic from the (tightened)
/// previous layer.
fn refresh_layer(net: &NeuralNet, domain: &InputDomain, plan: &PartitionPlan, table: &mut BoundsTable, l: usize) {
    let layer = &net.layers[l];
    let bx = table.layer_input_box(l, &domain.bounds);
    for r in 0..layer.num_nodes() {
        let fresh = interval_node_bounds(&layer.weights[r], layer.biases[r], &plan[l][r], &bx);
        let cur = &mut table.layers[l][r];
        if cur.partition != fresh.partition {
            *cur = fresh;
            continue;
        }
        cur.preact = intersect(cur.preact, fresh.preact);
        for n in 0..cur.inactive.len() {
            cur.inactive[n] = intersect(cur.inactive[n], fresh.inactive[n]);
            cur.active[n] = intersect(cur.active[n], fresh.active[n]);
        }
    }
}

/// Bounds for `net` over `domain`, starting from interval propagation.
pub fn run_obbt(net: &NeuralNet, domain: &InputDomain, cfg: &ObbtConfig) -> Result<BoundsTable> {
    let plan = plan_partitions(net, &cfg.formulation)?;
    let start = propagate(net, &domain.bounds, &plan)?;
    run_obbt_from(net, domain, cfg, &start)
}

/// OBBT starting from an existing table (whose partitions must match the
/// configured plan; mismatching nodes restart from interval bounds).
pub fn run_obbt_from(net: &NeuralNet, domain: &InputDomain, cfg: &ObbtConfig, start: &BoundsTable) -> Result<BoundsTable> {
    start.check_shape(net)?;
    if domain.bounds.dim() != net.input_dim {
        return Err(Error::Dimension {
            expected: net.input_dim,
            got: domain.bounds.dim(),
            context: "OBBT input box",
        });
    }
    let plan = plan_partitions(net, &cfg.formulation)?;
    let mut table = start.clone();
    for l in 0..net.layers.len() {
        refresh_layer(net, domain, &plan, &mut table, l);
        if cfg.mode == ObbtMode::Interval {
            continue;
        }
        let prefix = build_prefix(net, domain, &cfg.formulation, &plan, &table, l)?;
        let layer = &net.layers[l];
        let work = |r: usize| tighten_node(&prefix, &layer.weights[r], layer.biases[r], &table.layers[l][r], cfg.mode, &cfg.lp);
        let rows: Vec<NodeBounds> = if cfg.parallel {
            (0..layer.num_nodes()).into_par_iter().map(work).collect()
        } else {
            (0..layer.num_nodes()).map(work).collect()
        };
        let fallbacks = rows
            .iter()
            .filter(|nb| nb.preact.provenance == Provenance::ObbtFallback)
            .count();
        if fallbacks > 0 {
            log::warn!("layer {l}: {fallbacks} nodes kept interval bounds after LP limits");
        }
        table.layers[l] = rows;
    }
    Ok(table)
}

/// Partition of every node, as used by OBBT and the encoders.
pub fn obbt_plan(net: &NeuralNet, cfg: &ObbtConfig) -> Result<Vec<Vec<Partition>>> {
    plan_partitions(net, &cfg.formulation)
}
