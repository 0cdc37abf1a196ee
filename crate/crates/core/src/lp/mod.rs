//! Linear programming: a bounded-variable primal simplex.
//!
//! Every row `a . x` becomes a logical variable `r = a . x` carrying the row's
//! bounds, so the working system is `[A  -I] (x, r) = 0` with box bounds on all
//! columns. Phase 1 minimizes the sum of bound violations of the basic
//! variables; phase 2 runs on the real cost once the basis is feasible.
//! The basis inverse is kept dense, which is fine for the few hundred rows the
//! network encodings here produce.

mod simplex;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milp::{LinExpr, MilpModel, ObjSense, Sense, VarKind};

pub use simplex::Basis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PivotRule {
    /// Devex reference weights, an approximation of steepest edge.
    Devex,
    Dantzig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpLimits {
    pub max_iters: usize,
    pub time_limit: Option<Duration>,
    /// Primal feasibility tolerance on bounds of basic variables.
    pub tol_feas: f64,
    /// Reduced-cost tolerance for optimality.
    pub tol_opt: f64,
    pub pivot_rule: PivotRule,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for LpLimits {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            time_limit: None,
            tol_feas: 1e-7,
            tol_opt: 1e-9,
            pivot_rule: PivotRule::Devex,
            bland_after: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    /// Objective in the model's own sense, including its constant.
    pub objective: f64,
    /// Values of the structural variables, indexed by variable id.
    pub point: Vec<f64>,
    pub iterations: usize,
    /// Final basis, reusable as a warm start.
    pub basis: Basis,
}

/// Column-oriented form of a [`MilpModel`] with binaries relaxed to `[0, 1]`.
///
/// Bounds and objective can be changed and rows appended between solves; a
/// [`Basis`] from an earlier solve stays usable as a warm start.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub(crate) cols: Vec<Vec<(usize, f64)>>,
    pub(crate) col_lo: Vec<f64>,
    pub(crate) col_hi: Vec<f64>,
    pub(crate) row_lo: Vec<f64>,
    pub(crate) row_hi: Vec<f64>,
    /// Minimization cost (negated for maximization models).
    pub(crate) cost: Vec<f64>,
    sense: ObjSense,
    obj: Vec<f64>,
    obj_constant: f64,
}

impl LpProblem {
    /// Compiles `model`. With `relax_binaries == false` the model must not
    /// contain binaries.
    pub fn from_model(model: &MilpModel, relax_binaries: bool) -> Result<Self> {
        model.validate()?;
        if !relax_binaries && model.variables.iter().any(|v| v.kind == VarKind::Binary) {
            return Err(Error::Lp(
                "model has binary variables; solve it relaxed or with branch-and-bound".into(),
            ));
        }
        let n = model.num_vars();
        let mut p = Self {
            cols: vec![Vec::new(); n],
            col_lo: model.variables.iter().map(|v| v.lower).collect(),
            col_hi: model.variables.iter().map(|v| v.upper).collect(),
            row_lo: Vec::with_capacity(model.constraints.len()),
            row_hi: Vec::with_capacity(model.constraints.len()),
            cost: vec![0.0; n],
            sense: model.objective.sense,
            obj: vec![0.0; n],
            obj_constant: 0.0,
        };
        for c in &model.constraints {
            p.add_row(&c.expr, c.sense, c.rhs);
        }
        p.set_objective(model.objective.sense, &model.objective.expr, model.objective.constant);
        Ok(p)
    }

    pub fn num_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn num_rows(&self) -> usize {
        self.row_lo.len()
    }

    pub fn col_bounds(&self, j: usize) -> (f64, f64) {
        (self.col_lo[j], self.col_hi[j])
    }

    pub fn set_col_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.col_lo[j] = lo;
        self.col_hi[j] = hi;
    }

    pub fn row_bounds(&self, i: usize) -> (f64, f64) {
        (self.row_lo[i], self.row_hi[i])
    }

    pub fn set_row_bounds(&mut self, i: usize, lo: f64, hi: f64) {
        self.row_lo[i] = lo;
        self.row_hi[i] = hi;
    }

    pub fn add_row(&mut self, expr: &LinExpr, sense: Sense, rhs: f64) -> usize {
        let row = self.row_lo.len();
        for (v, c) in expr.iter() {
            self.cols[v.0].push((row, c));
        }
        let (lo, hi) = match sense {
            Sense::Le => (f64::NEG_INFINITY, rhs),
            Sense::Ge => (rhs, f64::INFINITY),
            Sense::Eq => (rhs, rhs),
        };
        self.row_lo.push(lo);
        self.row_hi.push(hi);
        row
    }

    pub fn set_objective(&mut self, sense: ObjSense, expr: &LinExpr, constant: f64) {
        self.sense = sense;
        self.obj.iter_mut().for_each(|c| *c = 0.0);
        for (v, c) in expr.iter() {
            self.obj[v.0] = c;
        }
        let sign = match sense {
            ObjSense::Minimize => 1.0,
            ObjSense::Maximize => -1.0,
        };
        self.cost = self.obj.iter().map(|c| sign * c).collect();
        self.obj_constant = constant;
    }

    pub fn sense(&self) -> ObjSense {
        self.sense
    }

    pub fn objective_value(&self, point: &[f64]) -> f64 {
        self.obj.iter().zip(point).map(|(c, x)| c * x).sum::<f64>() + self.obj_constant
    }

    pub fn solve(&self, warm: Option<&Basis>, limits: &LpLimits) -> LpResult {
        simplex::Simplex::new(self, warm, limits).run()
    }
}

/// Solves the LP (relaxation) of `model`.
pub fn solve_lp(
    model: &MilpModel,
    relax_binaries: bool,
    warm: Option<&Basis>,
    limits: &LpLimits,
) -> Result<LpResult> {
    let p = LpProblem::from_model(model, relax_binaries)?;
    Ok(p.solve(warm, limits))
}
