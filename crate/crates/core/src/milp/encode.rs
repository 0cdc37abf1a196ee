//! Encoders for a single ReLU node `y = max(0, w . x + b)`.
//!
//! Throughout, the binary `s` is 1 when the node is active. Input variables
//! must already exist in the model; their bounds are the box the node's
//! interval coefficients are computed from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{weighted_range, NodeBounds};
use crate::milp::{ConstraintId, LinExpr, MilpModel, Sense, VarId};
use crate::partition::Partition;

/// Variables and rows emitted for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEncoding {
    /// Activation binary; `None` for nodes fixed by stabilization.
    pub sigma: Option<VarId>,
    pub output: VarId,
    /// One auxiliary per non-empty partition subset (lifted encoding only).
    pub partition_slacks: Vec<VarId>,
    pub constraints: Vec<ConstraintId>,
    pub inputs: Vec<VarId>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Default cap on the number of subsets for the non-lifted encoding.
pub const NONLIFTED_CAP: usize = 12;

fn check_inputs(inputs: &[VarId], w: &[f64], name: &str) -> Result<()> {
    if inputs.len() != w.len() {
        return Err(Error::Dimension {
            expected: w.len(),
            got: inputs.len(),
            context: "node inputs",
        });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model(format!("node {name} has non-finite weights")));
    }
    Ok(())
}

/// Bounds of each term `w_i x_i` from the input variables' bounds.
pub fn term_bounds(model: &MilpModel, inputs: &[VarId], w: &[f64]) -> Vec<(f64, f64)> {
    inputs
        .iter()
        .zip(w)
        .map(|(&v, &wi)| {
            let var = model.var(v);
            if wi == 0.0 {
                (0.0, 0.0)
            } else {
                weighted_range(wi, var.lower, var.upper)
            }
        })
        .collect()
}

fn preact_expr(inputs: &[VarId], w: &[f64], subset: Option<&[usize]>) -> LinExpr {
    match subset {
        Some(s) => LinExpr::from_terms(s.iter().map(|&i| (inputs[i], w[i]))),
        None => LinExpr::from_terms(inputs.iter().copied().zip(w.iter().copied())),
    }
}

fn output_var(model: &mut MilpModel, name: &str, bounds: &NodeBounds) -> VarId {
    let (lo, hi) = bounds.output_range();
    model.add_continuous(format!("{name}_y"), lo, hi)
}

fn finite_preact(bounds: &NodeBounds, name: &str) -> Result<(f64, f64)> {
    if bounds.preact.is_finite() {
        Ok((bounds.preact.lo, bounds.preact.hi))
    } else {
        Err(Error::UnboundedNode(name.to_string()))
    }
}

/// Big-M: `y >= w.x + b`, `y <= w.x + b - (1 - s) LB`, `y <= s UB`.
pub fn encode_bigm(
    model: &mut MilpModel,
    name: &str,
    inputs: &[VarId],
    w: &[f64],
    b: f64,
    bounds: &NodeBounds,
) -> Result<NodeEncoding> {
    check_inputs(inputs, w, name)?;
    let (lb, ub) = finite_preact(bounds, name)?;
    let y = output_var(model, name, bounds);
    let s = model.add_binary(format!("{name}_s"));
    let pre = preact_expr(inputs, w, None);
    let mut rows = Vec::with_capacity(3);
    rows.push(model.add_constraint(
        format!("{name}_lo"),
        LinExpr::term(y, 1.0).with_expr(&pre, -1.0),
        Sense::Ge,
        b,
    ));
    rows.push(model.add_constraint(
        format!("{name}_pre"),
        LinExpr::term(y, 1.0).with_expr(&pre, -1.0).with(s, -lb),
        Sense::Le,
        b - lb,
    ));
    rows.push(model.add_constraint(
        format!("{name}_on"),
        LinExpr::term(y, 1.0).with(s, -ub),
        Sense::Le,
        0.0,
    ));
    Ok(NodeEncoding {
        sigma: Some(s),
        output: y,
        partition_slacks: Vec::new(),
        constraints: rows,
        inputs: inputs.to_vec(),
        weights: w.to_vec(),
        bias: b,
    })
}

/// Inactive- and active-conditioned ranges of each non-empty subset's sum.
/// Uses the table's values when it was built for this partition, otherwise
/// interval arithmetic on the input variables.
fn subset_ranges(
    model: &MilpModel,
    inputs: &[VarId],
    w: &[f64],
    partition: &Partition,
    bounds: &NodeBounds,
) -> Vec<(Vec<usize>, (f64, f64), (f64, f64))> {
    let from_table = bounds.partition == *partition
        && bounds.inactive.len() == partition.len()
        && bounds.active.len() == partition.len();
    let terms = (!from_table).then(|| term_bounds(model, inputs, w));
    partition
        .subsets()
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .map(|(n, s)| {
            if from_table {
                let (a, c) = (bounds.inactive[n], bounds.active[n]);
                (s.clone(), (a.lo, a.hi), (c.lo, c.hi))
            } else {
                let t = terms.as_ref().unwrap();
                let r = s.iter().fold((0.0, 0.0), |acc, &i| (acc.0 + t[i].0, acc.1 + t[i].1));
                (s.clone(), r, r)
            }
        })
        .collect()
}

/// Lifted partition-based encoding with one auxiliary `z_n` per subset.
///
/// With `z_n` the part of the subset sum carried by the active branch:
/// ```text
/// sum_n (sum_{S_n} w x - z_n) + (1 - s) b <= 0
/// sum_n z_n + s b >= 0
/// y = sum_n z_n + s b
/// (1 - s) LBa_n <= sum_{S_n} w x - z_n <= (1 - s) UBa_n
/// s LBb_n <= z_n <= s UBb_n
/// ```
/// plus `y <= s UB` and `sum_n (sum_{S_n} w x - z_n) >= (1 - s)(LB - b)`, which
/// are implied under pure interval bounds but not once OBBT has tightened the
/// preactivation range beyond the sum of the subset ranges.
pub fn encode_partitioned(
    model: &mut MilpModel,
    name: &str,
    inputs: &[VarId],
    w: &[f64],
    b: f64,
    partition: &Partition,
    bounds: &NodeBounds,
) -> Result<NodeEncoding> {
    check_inputs(inputs, w, name)?;
    if partition.num_indices() != w.len() {
        return Err(Error::Dimension {
            expected: w.len(),
            got: partition.num_indices(),
            context: "partition indices",
        });
    }
    let (lb, ub) = finite_preact(bounds, name)?;
    let ranges = subset_ranges(model, inputs, w, partition, bounds);
    if ranges
        .iter()
        .any(|(_, a, c)| !(a.0.is_finite() && a.1.is_finite() && c.0.is_finite() && c.1.is_finite()))
    {
        return Err(Error::UnboundedNode(name.to_string()));
    }
    let y = output_var(model, name, bounds);
    let s = model.add_binary(format!("{name}_s"));
    let mut rows = Vec::new();
    let mut slacks = Vec::with_capacity(ranges.len());
    // sum_n (sum_{S_n} w x - z_n), accumulated over subsets
    let mut off_sum = LinExpr::new();
    let mut z_sum = LinExpr::new();
    for (n, (subset, inact, act)) in ranges.iter().enumerate() {
        let z = model.add_continuous(format!("{name}_zb{n}"), act.0.min(0.0), act.1.max(0.0));
        slacks.push(z);
        let part = preact_expr(inputs, w, Some(subset));
        let off = part.clone().with(z, -1.0);
        rows.push(model.add_constraint(
            format!("{name}_zb{n}_hi"),
            LinExpr::term(z, 1.0).with(s, -act.1),
            Sense::Le,
            0.0,
        ));
        rows.push(model.add_constraint(
            format!("{name}_zb{n}_lo"),
            LinExpr::term(z, 1.0).with(s, -act.0),
            Sense::Ge,
            0.0,
        ));
        rows.push(model.add_constraint(
            format!("{name}_za{n}_hi"),
            off.clone().with(s, inact.1),
            Sense::Le,
            inact.1,
        ));
        rows.push(model.add_constraint(
            format!("{name}_za{n}_lo"),
            off.clone().with(s, inact.0),
            Sense::Ge,
            inact.0,
        ));
        off_sum.add_expr(&off, 1.0);
        z_sum.add(z, 1.0);
    }
    rows.push(model.add_constraint(format!("{name}_off"), off_sum.clone().with(s, -b), Sense::Le, -b));
    rows.push(model.add_constraint(format!("{name}_on"), z_sum.clone().with(s, b), Sense::Ge, 0.0));
    let mut out = LinExpr::term(y, 1.0);
    out.add_expr(&z_sum, -1.0).add(s, -b);
    rows.push(model.add_constraint(format!("{name}_out"), out, Sense::Eq, 0.0));
    rows.push(model.add_constraint(
        format!("{name}_ub"),
        LinExpr::term(y, 1.0).with(s, -ub),
        Sense::Le,
        0.0,
    ));
    rows.push(model.add_constraint(
        format!("{name}_lb"),
        off_sum.with(s, lb - b),
        Sense::Ge,
        lb - b,
    ));
    Ok(NodeEncoding {
        sigma: Some(s),
        output: y,
        partition_slacks: slacks,
        constraints: rows,
        inputs: inputs.to_vec(),
        weights: w.to_vec(),
        bias: b,
    })
}

/// Convex hull of the node over the input box: the partitioned encoding with
/// one subset per input.
pub fn encode_convex_hull(
    model: &mut MilpModel,
    name: &str,
    inputs: &[VarId],
    w: &[f64],
    b: f64,
    bounds: &NodeBounds,
) -> Result<NodeEncoding> {
    encode_partitioned(model, name, inputs, w, b, &Partition::singletons(w.len()), bounds)
}

/// Index sets `I_j` (unions of subsets) of the non-lifted family, one per
/// subset of the non-empty groups, ordered by bitmask.
pub fn nonlifted_unions(partition: &Partition) -> Vec<Vec<usize>> {
    let groups: Vec<&Vec<usize>> = partition.subsets().iter().filter(|s| !s.is_empty()).collect();
    (0..1usize << groups.len())
        .map(|mask| {
            let mut set: Vec<usize> = groups
                .iter()
                .enumerate()
                .filter(|(g, _)| mask >> g & 1 == 1)
                .flat_map(|(_, s)| s.iter().copied())
                .collect();
            set.sort_unstable();
            set
        })
        .collect()
}

/// Member of the non-lifted family for index set `set` (sorted), as
/// `expr <= rhs`:
/// `y - sum_{i in I} w_i x_i - s (b + sum_{i not in I} UB_i + sum_{i in I} LB_i) <= -sum_{i in I} LB_i`.
pub fn family_row(
    y: VarId,
    s: VarId,
    inputs: &[VarId],
    w: &[f64],
    b: f64,
    terms: &[(f64, f64)],
    set: &[usize],
) -> (LinExpr, f64) {
    let mut inside = vec![false; w.len()];
    set.iter().for_each(|&i| inside[i] = true);
    let mut out_ub = 0.0;
    let mut in_lb = 0.0;
    for (i, t) in terms.iter().enumerate() {
        if inside[i] {
            in_lb += t.0;
        } else {
            out_ub += t.1;
        }
    }
    let mut e = LinExpr::term(y, 1.0);
    e.add_expr(&preact_expr(inputs, w, Some(set)), -1.0).add(s, -(b + out_ub + in_lb));
    (e, -in_lb)
}

/// Non-lifted partition-based encoding: for every union `I` of subsets,
/// ```text
/// y <= sum_{i in I} w_i x_i + s (b + sum_{i not in I} UB_i) + (s - 1) sum_{i in I} LB_i
/// ```
/// with `LB_i, UB_i` the bounds of `w_i x_i`, plus `y >= w.x + b`. The rows
/// `y <= s UB` and `y <= w.x + b - (1 - s) LB` are added only when the table's
/// preactivation bounds make them tighter than the corresponding family member.
pub fn encode_nonlifted(
    model: &mut MilpModel,
    name: &str,
    inputs: &[VarId],
    w: &[f64],
    b: f64,
    partition: &Partition,
    bounds: &NodeBounds,
    cap: usize,
) -> Result<NodeEncoding> {
    check_inputs(inputs, w, name)?;
    let groups = partition.subsets().iter().filter(|s| !s.is_empty()).count();
    if groups > cap {
        return Err(Error::NonLiftedCap { n: groups, cap });
    }
    let (lb, ub) = finite_preact(bounds, name)?;
    let terms = term_bounds(model, inputs, w);
    if terms.iter().any(|t| !(t.0.is_finite() && t.1.is_finite())) {
        return Err(Error::UnboundedNode(name.to_string()));
    }
    let y = output_var(model, name, bounds);
    let s = model.add_binary(format!("{name}_s"));
    let pre = preact_expr(inputs, w, None);
    let mut rows = vec![model.add_constraint(
        format!("{name}_lo"),
        LinExpr::term(y, 1.0).with_expr(&pre, -1.0),
        Sense::Ge,
        b,
    )];
    for (j, set) in nonlifted_unions(partition).iter().enumerate() {
        let (e, rhs) = family_row(y, s, inputs, w, b, &terms, set);
        rows.push(model.add_constraint(format!("{name}_nl{j}"), e, Sense::Le, rhs));
    }
    let sum_ub: f64 = terms.iter().map(|t| t.1).sum();
    let sum_lb: f64 = terms.iter().map(|t| t.0).sum();
    if ub < b + sum_ub - 1e-12 {
        rows.push(model.add_constraint(format!("{name}_ub"), LinExpr::term(y, 1.0).with(s, -ub), Sense::Le, 0.0));
    }
    if lb > b + sum_lb + 1e-12 {
        rows.push(model.add_constraint(
            format!("{name}_pre"),
            LinExpr::term(y, 1.0).with_expr(&pre, -1.0).with(s, -lb),
            Sense::Le,
            b - lb,
        ));
    }
    Ok(NodeEncoding {
        sigma: Some(s),
        output: y,
        partition_slacks: Vec::new(),
        constraints: rows,
        inputs: inputs.to_vec(),
        weights: w.to_vec(),
        bias: b,
    })
}

/// Stable node: `y = 0` when inactive, `y = w.x + b` when active.
pub fn encode_stable(
    model: &mut MilpModel,
    name: &str,
    inputs: &[VarId],
    w: &[f64],
    b: f64,
    bounds: &NodeBounds,
    active: bool,
) -> Result<NodeEncoding> {
    check_inputs(inputs, w, name)?;
    let y = output_var(model, name, bounds);
    let mut rows = Vec::new();
    if active {
        let mut e = LinExpr::term(y, 1.0);
        e.add_expr(&preact_expr(inputs, w, None), -1.0);
        rows.push(model.add_constraint(format!("{name}_lin"), e, Sense::Eq, b));
    } else {
        let v = model.var_mut(y);
        v.lower = 0.0;
        v.upper = 0.0;
    }
    Ok(NodeEncoding {
        sigma: None,
        output: y,
        partition_slacks: Vec::new(),
        constraints: rows,
        inputs: inputs.to_vec(),
        weights: w.to_vec(),
        bias: b,
    })
}
