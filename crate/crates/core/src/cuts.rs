//! Separation of the most violated inequality of a node's non-lifted family,
//! which for singleton groups describes the convex hull of the node.
//!
//! For a fixed point `(x, s, y)` the family row for index set `I` has
//! right-hand side `s b + sum_i c_i` with `c_i = w_i x_i - (1 - s) LB_i` for
//! `i in I` and `c_i = s UB_i` otherwise, so the minimizing `I` takes every
//! index where the first term is smaller. Here `LB_i, UB_i` bound the product
//! `w_i x_i`, which keeps the rule correct for negative weights.

use serde::{Deserialize, Serialize};

use crate::bnb::CutCallback;
use crate::lp::{solve_lp, LpLimits, LpStatus};
use crate::milp::{family_row, term_bounds, Constraint, MilpModel, NodeEncoding, Sense, VarId};

/// Minimum violation for a cut to be reported.
pub const CUT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub layer: usize,
    pub node: usize,
    pub subset: Vec<usize>,
    pub constraint: Constraint,
    pub violation: f64,
}

/// Most violated family member at `(x, s, y)`: returns `(I, rhs, violation)`
/// where the row reads `y <= rhs` at the point. Ties go outside `I`.
pub fn most_violated(
    w: &[f64],
    b: f64,
    terms: &[(f64, f64)],
    x: &[f64],
    s: f64,
    y: f64,
) -> (Vec<usize>, f64, f64) {
    let mut subset = Vec::new();
    let mut rhs = s * b;
    for (i, (&wi, &(lo, hi))) in w.iter().zip(terms).enumerate() {
        let inside = wi * x[i] - (1.0 - s) * lo;
        let outside = s * hi;
        if wi * x[i] < (1.0 - s) * lo + s * hi {
            subset.push(i);
            rhs += inside;
        } else {
            rhs += outside;
        }
    }
    (subset, rhs, y - rhs)
}

/// Data needed to separate cuts for one node.
#[derive(Debug, Clone)]
pub struct NodeCutData {
    pub layer: usize,
    pub node: usize,
    pub inputs: Vec<VarId>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub sigma: VarId,
    pub output: VarId,
    /// Bounds of `w_i x_i` from the tightest input variable bounds.
    pub terms: Vec<(f64, f64)>,
}

impl NodeCutData {
    /// Separates at a model point; `None` when no family member is violated by
    /// more than [`CUT_TOL`].
    pub fn separate(&self, point: &[f64]) -> Option<Cut> {
        let x: Vec<f64> = self.inputs.iter().map(|v| point[v.0]).collect();
        let (subset, _, violation) = most_violated(
            &self.weights,
            self.bias,
            &self.terms,
            &x,
            point[self.sigma.0],
            point[self.output.0],
        );
        if violation <= CUT_TOL {
            return None;
        }
        let (expr, rhs) = family_row(
            self.output,
            self.sigma,
            &self.inputs,
            &self.weights,
            self.bias,
            &self.terms,
            &subset,
        );
        let name = format!("cut_l{}_n{}_{}", self.layer, self.node, subset_tag(&subset));
        Some(Cut {
            layer: self.layer,
            node: self.node,
            subset,
            constraint: Constraint { name, expr, sense: Sense::Le, rhs },
            violation,
        })
    }
}

fn subset_tag(subset: &[usize]) -> String {
    if subset.is_empty() {
        "e".into()
    } else {
        subset.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("_")
    }
}

/// Separator over every unstable node of an encoded network.
#[derive(Debug, Clone, Default)]
pub struct CutSeparator {
    pub nodes: Vec<NodeCutData>,
}

impl CutSeparator {
    /// Per-input bounds are read from `model`'s variable bounds, which are
    /// global, so every cut is valid for the whole tree.
    pub fn new(model: &MilpModel, hidden: &[Vec<NodeEncoding>]) -> Self {
        let nodes = hidden
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| layer.iter().enumerate().map(move |(r, e)| (l, r, e)))
            .filter_map(|(l, r, e)| {
                let sigma = e.sigma?;
                Some(NodeCutData {
                    layer: l,
                    node: r,
                    inputs: e.inputs.clone(),
                    weights: e.weights.clone(),
                    bias: e.bias,
                    sigma,
                    output: e.output,
                    terms: term_bounds(model, &e.inputs, &e.weights),
                })
            })
            .collect();
        Self { nodes }
    }

    /// At most one cut per node: its most violated family member.
    pub fn separate_all(&self, point: &[f64]) -> Vec<Cut> {
        self.nodes.iter().filter_map(|n| n.separate(point)).collect()
    }
}

impl CutCallback for CutSeparator {
    fn separate(&self, point: &[f64]) -> Vec<Constraint> {
        self.separate_all(point).into_iter().map(|c| c.constraint).collect()
    }
}

/// Solves the root relaxation once and appends one cut per violated node.
/// Returns the number of cuts added; an LP failure adds none.
pub fn add_root_cuts(model: &mut MilpModel, separator: &CutSeparator, limits: &LpLimits) -> usize {
    let r = match solve_lp(model, true, None, limits) {
        Ok(r) if r.status == LpStatus::Optimal => r,
        Ok(r) => {
            log::warn!("root LP ended with {:?}; no cuts added", r.status);
            return 0;
        }
        Err(e) => {
            log::warn!("root LP failed: {e}; no cuts added");
            return 0;
        }
    };
    let existing: std::collections::HashSet<String> =
        model.constraints.iter().map(|c| c.name.clone()).collect();
    let mut added = 0;
    for cut in separator.separate_all(&r.point) {
        if existing.contains(&cut.constraint.name) {
            continue;
        }
        model.constraints.push(cut.constraint);
        added += 1;
    }
    added
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::{interval_node_bounds, weighted_range};
    use crate::milp::{encode_bigm, encode_convex_hull, nonlifted_unions, LinExpr, ObjSense};
    use crate::nn::InputBox;
    use crate::partition::Partition;
    use proptest::prelude::*;

    /// Brute force over all `2^eta` index sets.
    fn exhaustive(w: &[f64], b: f64, terms: &[(f64, f64)], x: &[f64], s: f64, y: f64) -> f64 {
        let eta = w.len();
        let mut worst = f64::NEG_INFINITY;
        for set in nonlifted_unions(&Partition::singletons(eta)) {
            let mut rhs = s * b;
            for i in 0..eta {
                if set.contains(&i) {
                    rhs += w[i] * x[i] + (s - 1.0) * terms[i].0;
                } else {
                    rhs += s * terms[i].1;
                }
            }
            worst = worst.max(y - rhs);
        }
        worst
    }

    #[test]
    fn worked_example() {
        let terms = [(0.0, 1.0), (0.0, 1.0)];
        let (set, rhs, viol) = most_violated(&[1.0, 1.0], 0.0, &terms, &[1.0, 0.0], 0.5, 1.0);
        assert_eq!(set, vec![1]);
        assert!((rhs - 0.5).abs() < 1e-15);
        assert!((viol - 0.5).abs() < 1e-15);
    }

    #[test]
    fn integral_point_not_cut() {
        let terms = [(0.0, 1.0), (0.0, 1.0)];
        let (set, rhs, viol) = most_violated(&[1.0, 1.0], 0.0, &terms, &[1.0, 1.0], 1.0, 2.0);
        assert!(set.is_empty());
        assert_eq!(rhs, 2.0);
        assert!(viol <= 0.0);
    }

    #[test]
    fn ties_are_excluded() {
        // w x = 0.5 equals (1 - s) LB + s UB = 0.5 exactly
        let (set, _, _) = most_violated(&[1.0], 0.0, &[(0.0, 1.0)], &[0.5], 0.5, 0.0);
        assert!(set.is_empty());
    }

    proptest! {
        #[test]
        fn maximal_over_family(
            w in prop::collection::vec(-2.0f64..2.0, 1..8),
            seed in prop::collection::vec(0.0f64..1.0, 8),
            b in -1.0f64..1.0,
            s in 0.0f64..1.0,
            y in -1.0f64..4.0,
        ) {
            let eta = w.len();
            let lo: Vec<f64> = (0..eta).map(|i| -1.0 + seed[i] * 0.5).collect();
            let terms: Vec<(f64, f64)> = (0..eta).map(|i| weighted_range(w[i], lo[i], 1.0)).collect();
            let x: Vec<f64> = (0..eta).map(|i| lo[i] + (1.0 - lo[i]) * seed[(i + 3) % 8]).collect();
            let (_, _, v) = most_violated(&w, b, &terms, &x, s, y);
            prop_assert!((v - exhaustive(&w, b, &terms, &x, s, y)).abs() < 1e-9);
        }
    }

    #[test]
    fn hull_model_gets_no_cuts_and_bigm_does() {
        // y = max(0, x1 + x2 - 1), objective max y - x1: big-M root is fractional
        for hull in [false, true] {
            let mut m = MilpModel::new();
            let x: Vec<VarId> = (0..2).map(|i| m.add_continuous(format!("x{i}"), 0.0, 1.0)).collect();
            let bx = InputBox::uniform(2, 0.0, 1.0);
            let bounds = interval_node_bounds(&[1.0, 1.0], -1.0, &Partition::single(2), &bx);
            let e = if hull {
                encode_convex_hull(&mut m, "n", &x, &[1.0, 1.0], -1.0, &bounds).unwrap()
            } else {
                encode_bigm(&mut m, "n", &x, &[1.0, 1.0], -1.0, &bounds).unwrap()
            };
            m.set_objective(ObjSense::Maximize, LinExpr::term(e.output, 1.0).with(x[0], -1.0), 0.0);
            let sep = CutSeparator::new(&m, &[vec![e]]);
            let before = solve_lp(&m, true, None, &LpLimits::default()).unwrap().objective;
            let added = add_root_cuts(&mut m, &sep, &LpLimits::default());
            let after = solve_lp(&m, true, None, &LpLimits::default()).unwrap().objective;
            if hull {
                assert_eq!(added, 0);
            } else {
                assert_eq!(added, 1);
                assert!(after < before - 1e-6, "{before} -> {after}");
                assert_eq!(add_root_cuts(&mut m, &sep, &LpLimits::default()), 0);
            }
        }
    }
}
