//! Solver-agnostic mixed-integer linear model.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConstraintId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

/// Sparse linear expression; terms are kept sorted by variable and merged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    terms: BTreeMap<VarId, f64>,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn term(var: VarId, coef: f64) -> Self {
        let mut e = Self::new();
        e.add(var, coef);
        e
    }

    pub fn from_terms<I: IntoIterator<Item = (VarId, f64)>>(terms: I) -> Self {
        let mut e = Self::new();
        for (v, c) in terms {
            e.add(v, c);
        }
        e
    }

    /// Adds `coef * var`, dropping the term if it cancels to zero.
    pub fn add(&mut self, var: VarId, coef: f64) -> &mut Self {
        if coef == 0.0 {
            return self;
        }
        let entry = self.terms.entry(var).or_insert(0.0);
        *entry += coef;
        if *entry == 0.0 {
            self.terms.remove(&var);
        }
        self
    }

    pub fn with(mut self, var: VarId, coef: f64) -> Self {
        self.add(var, coef);
        self
    }

    pub fn add_expr(&mut self, other: &LinExpr, scale: f64) -> &mut Self {
        for (&v, &c) in &other.terms {
            self.add(v, c * scale);
        }
        self
    }

    pub fn with_expr(mut self, other: &LinExpr, scale: f64) -> Self {
        self.add_expr(other, scale);
        self
    }

    pub fn coef(&self, var: VarId) -> f64 {
        self.terms.get(&var).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, f64)> + '_ {
        self.terms.iter().map(|(&v, &c)| (v, c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * point[v.0]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub expr: LinExpr,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    /// Amount by which `point` violates the row (zero when satisfied).
    pub fn violation(&self, point: &[f64]) -> f64 {
        let lhs = self.expr.eval(point);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjSense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub sense: ObjSense,
    pub expr: LinExpr,
    pub constant: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            sense: ObjSense::Maximize,
            expr: LinExpr::new(),
            constant: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Objective,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lower: f64, upper: f64) -> VarId {
        let (lower, upper) = match kind {
            VarKind::Binary => (lower.max(0.0), upper.min(1.0)),
            VarKind::Continuous => (lower, upper),
        };
        self.variables.push(Variable {
            name: name.into(),
            kind,
            lower,
            upper,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, VarKind::Continuous, lower, upper)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        expr: LinExpr,
        sense: Sense,
        rhs: f64,
    ) -> ConstraintId {
        self.constraints.push(Constraint {
            name: name.into(),
            expr,
            sense,
            rhs,
        });
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn set_objective(&mut self, sense: ObjSense, expr: LinExpr, constant: f64) {
        self.objective = Objective { sense, expr, constant };
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn var_mut(&mut self, id: VarId) -> &mut Variable {
        &mut self.variables[id.0]
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn binaries(&self) -> Vec<VarId> {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| VarId(i))
            .collect()
    }

    pub fn num_binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn objective_value(&self, point: &[f64]) -> f64 {
        self.objective.expr.eval(point) + self.objective.constant
    }

    /// Largest bound or row violation of `point`; integrality is not checked.
    pub fn max_violation(&self, point: &[f64]) -> f64 {
        let bounds = self
            .variables
            .iter()
            .zip(point)
            .map(|(v, &x)| (v.lower - x).max(x - v.upper).max(0.0));
        let rows = self.constraints.iter().map(|c| c.violation(point));
        bounds.chain(rows).fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, point: &[f64], tol: f64) -> bool {
        point.len() == self.num_vars() && self.max_violation(point) <= tol
    }

    /// Checks references, bound order and binary bounds.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        for (i, v) in self.variables.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(Error::Model(format!("variable {} ({i}) has empty bounds", v.name)));
            }
            if v.kind == VarKind::Binary && (v.lower < 0.0 || v.upper > 1.0) {
                return Err(Error::Model(format!("binary {} has bounds outside [0, 1]", v.name)));
            }
        }
        let bad = |e: &LinExpr| e.iter().any(|(v, c)| v.0 >= n || !c.is_finite());
        for c in &self.constraints {
            if bad(&c.expr) || !c.rhs.is_finite() {
                return Err(Error::Model(format!("constraint {} references an unknown variable or non-finite value", c.name)));
            }
        }
        if bad(&self.objective.expr) {
            return Err(Error::Model("objective references an unknown variable".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lin_expr_merges_and_cancels() {
        let (a, b) = (VarId(0), VarId(1));
        let mut e = LinExpr::term(a, 2.0).with(b, 1.0);
        e.add(a, -2.0);
        assert_eq!(e.len(), 1);
        assert_eq!(e.coef(b), 1.0);
        assert_eq!(e.coef(a), 0.0);
    }

    #[test]
    fn binaries_clamped_and_validated() {
        let mut m = MilpModel::new();
        let s = m.add_var("s", VarKind::Binary, -3.0, 5.0);
        assert_eq!((m.var(s).lower, m.var(s).upper), (0.0, 1.0));
        m.add_constraint("c", LinExpr::term(VarId(7), 1.0), Sense::Le, 0.0);
        assert!(m.validate().is_err());
    }

    #[test]
    fn violation_measures() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 1.0);
        m.add_constraint("c", LinExpr::term(x, 1.0), Sense::Ge, 0.5);
        assert_eq!(m.max_violation(&[0.25]), 0.25);
        assert_eq!(m.max_violation(&[1.5]), 0.5);
        assert!(m.is_feasible(&[0.75], 0.0));
    }
}
