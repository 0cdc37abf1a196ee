//! LP-based branch-and-bound over binary variables.
//!
//! The tree is explored on one [`LpProblem`] whose binary bounds are reset per
//! node; children warm-start from the parent's basis. Incumbents come from
//! integral node LPs and from an optional primal heuristic that fixes every
//! binary and re-solves.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{Basis, LpLimits, LpProblem, LpResult, LpStatus, PivotRule};
use crate::milp::{Constraint, MilpModel, ObjSense, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeSelection {
    BestBound,
    DepthFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchRule {
    MostFractional,
    PseudoCost,
    /// Pseudo-costs, with strong branching on candidates that have fewer
    /// than four observations in either direction.
    Reliability,
}

/// When the cut callback runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutPolicy {
    Off,
    RootOnly,
    /// Every `k`-th explored node, starting at the root.
    Every(usize),
}

impl CutPolicy {
    fn fires(&self, node_index: usize) -> bool {
        match *self {
            CutPolicy::Off => false,
            CutPolicy::RootOnly => node_index == 0,
            CutPolicy::Every(k) => node_index.is_multiple_of(k.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbConfig {
    pub node_selection: NodeSelection,
    pub branch_rule: BranchRule,
    pub rel_gap: f64,
    pub abs_gap: f64,
    pub time_limit: Option<Duration>,
    pub node_limit: Option<usize>,
    pub cut_policy: CutPolicy,
    /// Stop as soon as the sign of the optimum is known.
    pub stop_on_sign: bool,
    pub sign_tol: f64,
    pub int_tol: f64,
    pub lp: LpLimits,
    /// Emit a progress line every this many nodes (0 disables).
    pub log_every: usize,
    /// Run the primal heuristic every this many nodes (0 disables).
    pub heuristic_every: usize,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            node_selection: NodeSelection::BestBound,
            branch_rule: BranchRule::Reliability,
            rel_gap: 1e-6,
            abs_gap: 1e-9,
            time_limit: None,
            node_limit: None,
            cut_policy: CutPolicy::Off,
            stop_on_sign: false,
            sign_tol: 1e-6,
            int_tol: 1e-6,
            lp: LpLimits::default(),
            log_every: 1000,
            heuristic_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MilpStatus {
    Optimal,
    SignDetermined,
    TimeLimit,
    NodeLimit,
    Infeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MilpResult {
    pub status: MilpStatus,
    /// Best feasible objective in the model's sense; `-inf` (maximization) or
    /// `+inf` (minimization) without an incumbent.
    pub incumbent_value: f64,
    pub best_bound: f64,
    pub incumbent_point: Option<Vec<f64>>,
    /// LP bound at the root after any root cuts.
    pub root_bound: f64,
    pub nodes_explored: usize,
    pub cuts_added: usize,
    pub lp_iterations: usize,
    pub wall_time: f64,
    /// `(nodes, best bound, incumbent)` after every node, in the model's sense.
    #[serde(skip)]
    pub bound_history: Vec<(usize, f64, f64)>,
}

/// Source of cutting planes, called with an LP solution of the node.
pub trait CutCallback: Sync {
    fn separate(&self, point: &[f64]) -> Vec<Constraint>;
}

/// Suggests values for the binaries from a fractional LP solution. The solver
/// fixes them (rounding any binary left out), re-solves the LP and keeps the
/// result as an incumbent when it is feasible and better.
pub trait PrimalHeuristic: Sync {
    fn propose(&self, point: &[f64]) -> Option<Vec<(VarId, f64)>>;
}

struct Node {
    fixings: Vec<(VarId, f64)>,
    /// Parent LP value (maximization form).
    bound: f64,
    basis: Option<Basis>,
    seq: usize,
    /// Binary index, its fractional value in the parent and the branch taken.
    branched: Option<(usize, f64, bool)>,
}

/// Heap order: larger bound first, then earlier creation.
struct ByBound(Node);

impl PartialEq for ByBound {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for ByBound {}
impl PartialOrd for ByBound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for ByBound {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .bound
            .total_cmp(&other.0.bound)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

enum Open {
    Heap(BinaryHeap<ByBound>),
    Stack(Vec<Node>),
}

impl Open {
    fn push(&mut self, n: Node) {
        match self {
            Open::Heap(h) => h.push(ByBound(n)),
            Open::Stack(s) => s.push(n),
        }
    }

    fn pop(&mut self) -> Option<Node> {
        match self {
            Open::Heap(h) => h.pop().map(|b| b.0),
            Open::Stack(s) => s.pop(),
        }
    }

    fn max_bound(&self) -> f64 {
        match self {
            Open::Heap(h) => h.peek().map_or(f64::NEG_INFINITY, |b| b.0.bound),
            Open::Stack(s) => s.iter().map(|n| n.bound).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn len(&self) -> usize {
        match self {
            Open::Heap(h) => h.len(),
            Open::Stack(s) => s.len(),
        }
    }
}

#[derive(Default, Clone)]
struct PseudoCosts {
    up: Vec<(f64, usize)>,
    down: Vec<(f64, usize)>,
}

impl PseudoCosts {
    fn record(&mut self, idx: usize, up: bool, gain_per_unit: f64) {
        let slot = if up { &mut self.up[idx] } else { &mut self.down[idx] };
        slot.0 += gain_per_unit.max(0.0);
        slot.1 += 1;
    }

    fn count(&self, idx: usize, up: bool) -> usize {
        if up {
            self.up[idx].1
        } else {
            self.down[idx].1
        }
    }

    /// Mean per-unit gain over every observation, 1 when there is none.
    fn mean(&self) -> f64 {
        let (sum, n) = self.up.iter().chain(&self.down).fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        if n == 0 {
            1.0
        } else {
            sum / n as f64
        }
    }

    fn estimate(&self, idx: usize, up: bool) -> Option<f64> {
        let (sum, n) = if up { self.up[idx] } else { self.down[idx] };
        (n > 0).then(|| sum / n as f64)
    }
}

/// Observations per direction after which pseudo-costs replace strong branching.
const RELIABLE: usize = 4;
/// Strong-branching candidates per node.
const STRONG_CANDIDATES: usize = 8;
/// Iteration limit of a strong-branching LP.
const STRONG_ITERS: usize = 200;
/// Score of a child whose LP is infeasible.
const INFEASIBLE_GAIN: f64 = 1e9;

fn cut_key(c: &Constraint) -> Vec<i64> {
    let q = |v: f64| (v * 1e9).round() as i64;
    let mut key = vec![c.sense as i64, q(c.rhs)];
    for (v, coef) in c.expr.iter() {
        key.push(v.0 as i64);
        key.push(q(coef));
    }
    key
}

/// `fixings` extended with the rounded value of every binary it leaves out.
fn complete_fixings(fixings: &[(VarId, f64)], binaries: &[VarId], point: &[f64]) -> Vec<(VarId, f64)> {
    let fixed: HashSet<VarId> = fixings.iter().map(|f| f.0).collect();
    let mut out = fixings.to_vec();
    out.extend(binaries.iter().filter(|v| !fixed.contains(v)).map(|v| (*v, point[v.0].round())));
    out
}

fn round_binaries(mut point: Vec<f64>, binaries: &[VarId]) -> Vec<f64> {
    for v in binaries {
        point[v.0] = point[v.0].round();
    }
    point
}

struct Solver<'a> {
    cfg: &'a BnbConfig,
    lp: LpProblem,
    binaries: Vec<VarId>,
    global: Vec<(f64, f64)>,
    lp_iterations: usize,
}

impl Solver<'_> {
    fn solve_node(&mut self, fixings: &[(VarId, f64)], warm: Option<&Basis>) -> LpResult {
        let limits = self.cfg.lp.clone();
        let r = self.solve_with(fixings, warm, &limits);
        if r.status != LpStatus::IterationLimit {
            return r;
        }
        // Retry from scratch with the plain pricing rule before giving up.
        let limits = LpLimits { pivot_rule: PivotRule::Dantzig, ..limits };
        self.solve_with(fixings, None, &limits)
    }

    fn solve_with(&mut self, fixings: &[(VarId, f64)], warm: Option<&Basis>, limits: &LpLimits) -> LpResult {
        for (&v, &(lo, hi)) in self.binaries.iter().zip(&self.global) {
            self.lp.set_col_bounds(v.0, lo, hi);
        }
        for &(v, val) in fixings {
            self.lp.set_col_bounds(v.0, val, val);
        }
        let r = self.lp.solve(warm, limits);
        self.lp_iterations += r.iterations;
        r
    }

    /// Product-score branching with strong branching on unreliable candidates.
    /// `value` is the node's LP value in maximization form.
    fn reliability_branch(
        &mut self,
        fixings: &[(VarId, f64)],
        node: &LpResult,
        value: f64,
        dir: f64,
        pc: &mut PseudoCosts,
    ) -> Option<(usize, f64)> {
        let tol = self.cfg.int_tol;
        let mut cands: Vec<(usize, f64, f64)> = self
            .binaries
            .iter()
            .enumerate()
            .map(|(idx, v)| {
                let x = node.point[v.0];
                (idx, x, (x - x.floor()).min(x.ceil() - x))
            })
            .filter(|c| c.2 > tol)
            .collect();
        cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        let limits = LpLimits { max_iters: STRONG_ITERS, ..self.cfg.lp.clone() };
        let mut best: Option<(usize, f64, f64)> = None;
        let mut strong = 0;
        for &(idx, x, _) in &cands {
            let reliable = pc.count(idx, false) >= RELIABLE && pc.count(idx, true) >= RELIABLE;
            let gains = if !reliable && strong < STRONG_CANDIDATES {
                strong += 1;
                let mut gains = [0.0; 2];
                for (k, val) in [0.0, 1.0].into_iter().enumerate() {
                    let mut fix = fixings.to_vec();
                    fix.push((self.binaries[idx], val));
                    let child = self.solve_with(&fix, Some(&node.basis), &limits);
                    let dist = if val > 0.5 { 1.0 - x } else { x };
                    gains[k] = match child.status {
                        LpStatus::Optimal => {
                            let g = (value - dir * child.objective).max(0.0);
                            pc.record(idx, val > 0.5, g / dist.max(1e-9));
                            g
                        }
                        LpStatus::Infeasible => INFEASIBLE_GAIN,
                        _ => pc.estimate(idx, val > 0.5).unwrap_or_else(|| pc.mean()) * dist,
                    };
                }
                gains
            } else {
                let mean = pc.mean();
                [
                    pc.estimate(idx, false).unwrap_or(mean) * x,
                    pc.estimate(idx, true).unwrap_or(mean) * (1.0 - x),
                ]
            };
            let score = gains[0].max(1e-6) * gains[1].max(1e-6);
            if best.is_none_or(|b| score > b.2) {
                best = Some((idx, x, score));
            }
        }
        best.map(|(i, x, _)| (i, x))
    }

    /// Most fractional binary (ties to the smallest variable id), or by
    /// pseudo-cost score when requested and available.
    fn pick_branch(&self, point: &[f64], pc: &PseudoCosts) -> Option<(usize, f64)> {
        let tol = self.cfg.int_tol;
        let mut best: Option<(usize, f64, f64)> = None;
        for (idx, v) in self.binaries.iter().enumerate() {
            let x = point[v.0];
            let frac = (x - x.floor()).min(x.ceil() - x);
            if frac <= tol {
                continue;
            }
            let score = match self.cfg.branch_rule {
                BranchRule::MostFractional => frac,
                BranchRule::PseudoCost | BranchRule::Reliability => match (pc.estimate(idx, true), pc.estimate(idx, false)) {
                    (Some(u), Some(d)) => ((1.0 - x) * u).max(1e-6) * (x * d).max(1e-6) + 1.0,
                    _ => frac,
                },
            };
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((idx, x, score));
            }
        }
        best.map(|(i, x, _)| (i, x))
    }
}

/// Solves `model` by branch-and-bound on its binaries.
pub fn solve_milp(model: &MilpModel, cfg: &BnbConfig, cuts: Option<&dyn CutCallback>) -> Result<MilpResult> {
    solve_milp_with(model, cfg, cuts, None)
}

/// [`solve_milp`] with an optional primal heuristic, run every
/// `cfg.heuristic_every` nodes on fractional LP points.
pub fn solve_milp_with(
    model: &MilpModel,
    cfg: &BnbConfig,
    cuts: Option<&dyn CutCallback>,
    heuristic: Option<&dyn PrimalHeuristic>,
) -> Result<MilpResult> {
    let start = Instant::now();
    let lp = LpProblem::from_model(model, true)?;
    let binaries = model.binaries();
    let global = binaries.iter().map(|v| (model.var(*v).lower, model.var(*v).upper)).collect();
    let dir = match model.objective.sense {
        ObjSense::Maximize => 1.0,
        ObjSense::Minimize => -1.0,
    };
    let mut s = Solver {
        cfg,
        lp,
        binaries,
        global,
        lp_iterations: 0,
    };
    let mut pc = PseudoCosts {
        up: vec![(0.0, 0); s.binaries.len()],
        down: vec![(0.0, 0); s.binaries.len()],
    };
    let mut open = match cfg.node_selection {
        NodeSelection::BestBound => Open::Heap(BinaryHeap::new()),
        NodeSelection::DepthFirst => Open::Stack(Vec::new()),
    };
    open.push(Node {
        fixings: Vec::new(),
        bound: f64::INFINITY,
        basis: None,
        seq: 0,
        branched: None,
    });
    let mut seq = 1;
    let mut incumbent = f64::NEG_INFINITY;
    let mut incumbent_point: Option<Vec<f64>> = None;
    let mut best_bound = f64::INFINITY;
    let mut root_bound = f64::NEG_INFINITY;
    let mut explored = 0usize;
    let mut cuts_added = 0usize;
    let mut seen_cuts: HashSet<Vec<i64>> = HashSet::new();
    let mut history = Vec::new();
    let gap_ok = |bound: f64, inc: f64| bound - inc <= cfg.abs_gap.max(cfg.rel_gap * inc.abs());

    let status = loop {
        let global_bound = if explored == 0 { f64::INFINITY } else { open.max_bound().max(incumbent) };
        best_bound = best_bound.min(global_bound);
        if explored > 0 {
            history.push((explored, dir * best_bound, dir * incumbent));
            if open.len() == 0 && incumbent_point.is_none() {
                break MilpStatus::Infeasible;
            }
            if cfg.stop_on_sign
                && (best_bound < -cfg.sign_tol || incumbent > cfg.sign_tol)
            {
                break MilpStatus::SignDetermined;
            }
            if open.len() == 0 {
                break MilpStatus::Optimal;
            }
            if incumbent_point.is_some() && gap_ok(best_bound, incumbent) {
                break MilpStatus::Optimal;
            }
        }
        if cfg.node_limit.is_some_and(|n| explored >= n) {
            break MilpStatus::NodeLimit;
        }
        if cfg.time_limit.is_some_and(|t| start.elapsed() >= t) {
            break MilpStatus::TimeLimit;
        }
        if cfg.log_every > 0 && explored > 0 && explored.is_multiple_of(cfg.log_every) {
            log::info!(
                "nodes={explored} open={} incumbent={} bound={} gap={}",
                open.len(),
                dir * incumbent,
                dir * best_bound,
                best_bound - incumbent
            );
        }
        let Some(node) = open.pop() else { unreachable!() };
        if incumbent_point.is_some() && gap_ok(node.bound, incumbent) {
            continue;
        }
        let node_index = explored;
        explored += 1;
        let mut r = s.solve_node(&node.fixings, node.basis.as_ref());
        match r.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                return Err(Error::Lp("LP relaxation is unbounded; bound the model's variables".into()))
            }
            _ => {}
        }
        if r.status == LpStatus::Optimal && cfg.cut_policy.fires(node_index) {
            if let Some(cb) = cuts {
                let mut added = 0;
                for c in cb.separate(&r.point) {
                    if c.violation(&r.point) < 1e-6 || !seen_cuts.insert(cut_key(&c)) {
                        continue;
                    }
                    s.lp.add_row(&c.expr, c.sense, c.rhs);
                    added += 1;
                }
                if added > 0 {
                    cuts_added += added;
                    let warm = r.basis.clone();
                    r = s.solve_node(&node.fixings, Some(&warm));
                    if r.status == LpStatus::Infeasible {
                        continue;
                    }
                }
            }
        }
        let failed = r.status != LpStatus::Optimal;
        let value = if failed { node.bound } else { (dir * r.objective).min(node.bound) };
        if node_index == 0 {
            root_bound = value;
        }
        if let (Some((idx, x, up)), false) = (node.branched, failed) {
            let dist = if up { 1.0 - x } else { x };
            pc.record(idx, up, (node.bound - value) / dist.max(1e-9));
        }
        if incumbent_point.is_some() && gap_ok(value, incumbent) {
            continue;
        }
        let branch = if failed {
            // No usable LP point: split on the first free binary.
            let fixed: HashSet<VarId> = node.fixings.iter().map(|f| f.0).collect();
            (0..s.binaries.len())
                .find(|&i| !fixed.contains(&s.binaries[i]) && s.global[i].0 < s.global[i].1)
                .map(|i| (i, 0.5))
        } else if cfg.branch_rule == BranchRule::Reliability {
            s.reliability_branch(&node.fixings, &r, value, dir, &mut pc)
        } else {
            s.pick_branch(&r.point, &pc)
        };
        match branch {
            None if failed => continue,
            None => {
                // Integral LP point: polish it with the binaries fixed.
                let polished = s.solve_node(&complete_fixings(&node.fixings, &s.binaries, &r.point), Some(&r.basis));
                let (val, point) = if polished.status == LpStatus::Optimal {
                    (dir * polished.objective, polished.point)
                } else {
                    (dir * r.objective, r.point)
                };
                if val > incumbent {
                    incumbent = val;
                    incumbent_point = Some(round_binaries(point, &s.binaries));
                    log::debug!("incumbent={} nodes={explored}", dir * incumbent);
                }
            }
            Some((idx, x)) => {
                let proposal = heuristic
                    .filter(|_| cfg.heuristic_every > 0 && node_index.is_multiple_of(cfg.heuristic_every))
                    .and_then(|h| h.propose(&r.point));
                if let Some(fix) = proposal {
                    let h = s.solve_node(&complete_fixings(&fix, &s.binaries, &r.point), Some(&r.basis));
                    if h.status == LpStatus::Optimal && dir * h.objective > incumbent {
                        incumbent = dir * h.objective;
                        incumbent_point = Some(round_binaries(h.point, &s.binaries));
                        log::debug!("heuristic incumbent={} nodes={explored}", dir * incumbent);
                        if gap_ok(value, incumbent) {
                            continue;
                        }
                    }
                }
                let var = s.binaries[idx];
                // Depth-first pops the last push, so the nearer rounding goes last.
                let order = if x < 0.5 && cfg.node_selection == NodeSelection::DepthFirst {
                    [1.0, 0.0]
                } else {
                    [0.0, 1.0]
                };
                for val in order {
                    let mut fixings = node.fixings.clone();
                    fixings.push((var, val));
                    open.push(Node {
                        fixings,
                        bound: value,
                        basis: (!failed).then(|| r.basis.clone()),
                        seq,
                        branched: Some((idx, x, val > 0.5)),
                    });
                    seq += 1;
                }
            }
        }
    };
    if open.len() == 0 && matches!(status, MilpStatus::Optimal | MilpStatus::Infeasible) {
        best_bound = incumbent;
    }
    Ok(MilpResult {
        status,
        incumbent_value: dir * incumbent,
        best_bound: dir * best_bound,
        incumbent_point,
        root_bound: dir * root_bound,
        nodes_explored: explored,
        cuts_added,
        lp_iterations: s.lp_iterations,
        wall_time: start.elapsed().as_secs_f64(),
        bound_history: history,
    })
}
