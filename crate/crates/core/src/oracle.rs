//! Brute-force reference solver: enumerates activation patterns of the
//! unstable nodes and solves one LP per pattern, with no big-M or partition
//! machinery involved. Exponential, so only for small networks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{propagate, single_partition_plan, Stability};
use crate::lp::{LpLimits, LpProblem, LpStatus};
use crate::milp::{LinExpr, MilpModel, ObjSense, Sense};
use crate::nn::{InputBox, NeuralNet};
use crate::obbt::InputDomain;
use crate::tasks::{Goal, TaskKind, TaskSpec};

/// Largest number of unstable nodes the oracle accepts.
pub const ORACLE_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Best value over feasible patterns; `None` if every pattern is infeasible.
    pub value: Option<f64>,
    /// Input part of the best point.
    pub input: Option<Vec<f64>>,
    /// Activation of every hidden node at the best point, per layer.
    pub pattern: Option<Vec<Vec<bool>>>,
    pub unstable: usize,
    pub lps_solved: usize,
    pub infeasible_patterns: usize,
}

struct PatternLp {
    lp: LpProblem,
    /// `(layer, node, y column, equality row, sign row, bias, interval stability)`
    nodes: Vec<(usize, usize, usize, usize, usize, f64, Stability)>,
    inputs: Vec<usize>,
}

fn pattern_lp(net: &NeuralNet, spec: &TaskSpec) -> Result<PatternLp> {
    let table = propagate(net, &spec.domain.bounds, &single_partition_plan(net))?;
    let mut model = MilpModel::new();
    let (x, eps) = spec.add_inputs(&mut model);
    let mut prev = x.clone();
    let mut nodes = Vec::new();
    for (l, layer) in net.hidden_layers().iter().enumerate() {
        let mut next = Vec::with_capacity(layer.num_nodes());
        for r in 0..layer.num_nodes() {
            let w = &layer.weights[r];
            let b = layer.biases[r];
            let wx = LinExpr::from_terms(prev.iter().copied().zip(w.iter().copied()));
            let y = model.add_continuous(format!("l{l}_n{r}_y"), 0.0, f64::INFINITY);
            let eq = model.add_constraint(format!("l{l}_n{r}_eq"), LinExpr::term(y, 1.0).with_expr(&wx, -1.0), Sense::Eq, b);
            let sign = model.add_constraint(format!("l{l}_n{r}_sign"), wx, Sense::Ge, -b);
            nodes.push((l, r, y.0, eq.0, sign.0, b, table.node(l, r).stability()));
            next.push(y);
        }
        prev = next;
    }
    let out = net.output_layer();
    let mut outputs = Vec::with_capacity(out.num_nodes());
    for k in 0..out.num_nodes() {
        let f = model.add_continuous(format!("f{k}"), f64::NEG_INFINITY, f64::INFINITY);
        let expr = LinExpr::term(f, 1.0).with_expr(&LinExpr::from_terms(prev.iter().copied().zip(out.weights[k].iter().copied())), -1.0);
        model.add_constraint(format!("out{k}"), expr, Sense::Eq, out.biases[k]);
        outputs.push(f);
    }
    spec.apply_goal(&mut model, &outputs, eps);
    Ok(PatternLp {
        lp: LpProblem::from_model(&model, false)?,
        nodes,
        inputs: x.iter().map(|v| v.0).collect(),
    })
}

impl PatternLp {
    fn fix(&self, active: &[bool]) -> LpProblem {
        let mut lp = self.lp.clone();
        for (&(_, _, y, eq, sign, b, _), &on) in self.nodes.iter().zip(active) {
            if on {
                lp.set_row_bounds(eq, b, b);
                lp.set_row_bounds(sign, -b, f64::INFINITY);
            } else {
                lp.set_col_bounds(y, 0.0, 0.0);
                lp.set_row_bounds(eq, f64::NEG_INFINITY, f64::INFINITY);
                lp.set_row_bounds(sign, f64::NEG_INFINITY, -b);
            }
        }
        lp
    }
}

/// Optimum of `spec` over `net` by enumerating the `2^m` activation patterns
/// of the `m` nodes that interval propagation on the task box leaves unstable.
/// Stable nodes are fixed to their interval phase.
pub fn enumerate_task(net: &NeuralNet, spec: &TaskSpec, limits: &LpLimits) -> Result<OracleResult> {
    let base = pattern_lp(net, spec)?;
    let unstable: Vec<usize> = (0..base.nodes.len())
        .filter(|&i| base.nodes[i].6 == Stability::Unstable)
        .collect();
    let m = unstable.len();
    if m > ORACLE_LIMIT {
        return Err(Error::OracleBudget { unstable: m, limit: ORACLE_LIMIT });
    }
    let maximize = base.lp.sense() == ObjSense::Maximize;
    let solved: Vec<Option<(f64, Vec<f64>, Vec<bool>)>> = (0..1u64 << m)
        .into_par_iter()
        .map(|mask| {
            let mut active: Vec<bool> = base.nodes.iter().map(|n| n.6 == Stability::Active).collect();
            for (bit, &i) in unstable.iter().enumerate() {
                active[i] = mask >> bit & 1 == 1;
            }
            let r = base.fix(&active).solve(None, limits);
            match r.status {
                LpStatus::Optimal => Ok(Some((r.objective, r.point, active))),
                LpStatus::Infeasible => Ok(None),
                s => Err(Error::Lp(format!("pattern {mask:#b}: LP ended with {s:?}"))),
            }
        })
        .collect::<Result<_>>()?;
    let infeasible_patterns = solved.iter().filter(|s| s.is_none()).count();
    let mut best: Option<&(f64, Vec<f64>, Vec<bool>)> = None;
    for s in solved.iter().flatten() {
        let better = match best {
            None => true,
            Some(b) if maximize => s.0 > b.0,
            Some(b) => s.0 < b.0,
        };
        if better {
            best = Some(s);
        }
    }
    let pattern = best.map(|(_, _, active)| {
        let mut layers: Vec<Vec<bool>> = net.hidden_layers().iter().map(|l| Vec::with_capacity(l.num_nodes())).collect();
        for (&(l, ..), &on) in base.nodes.iter().zip(active) {
            layers[l].push(on);
        }
        layers
    });
    Ok(OracleResult {
        value: best.map(|b| b.0),
        input: best.map(|b| base.inputs.iter().map(|&j| b.1[j]).collect()),
        pattern,
        unstable: m,
        lps_solved: 1 << m,
        infeasible_patterns,
    })
}

/// `max f_k(x)` over a box.
pub fn max_output(net: &NeuralNet, input: &InputBox, k: usize, limits: &LpLimits) -> Result<OracleResult> {
    let spec = TaskSpec {
        kind: TaskKind::OptimalAdversary,
        domain: InputDomain::from_box(input.clone()),
        goal: Goal::MaxOutput(k),
    };
    enumerate_task(net, &spec, limits)
}

/// Optimal value of the LP relaxation of `model`.
pub fn relaxation_value(model: &MilpModel, limits: &LpLimits) -> Result<f64> {
    let r = crate::lp::solve_lp(model, true, None, limits)?;
    match r.status {
        LpStatus::Optimal => Ok(r.objective),
        s => Err(Error::Lp(format!("relaxation ended with {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::interval_node_bounds;
    use crate::milp::{encode_bigm, encode_partitioned, VarId};
    use crate::nn::{Activation, DenseLayer};
    use crate::partition::Partition;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net(layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>, input_dim: usize) -> NeuralNet {
        let n = layers.len();
        NeuralNet::new(
            input_dim,
            layers
                .into_iter()
                .enumerate()
                .map(|(i, (weights, biases))| DenseLayer {
                    weights,
                    biases,
                    activation: if i + 1 == n { Activation::Linear } else { Activation::Relu },
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_node_example() {
        let n = net(vec![(vec![vec![1.0, -1.0]], vec![0.0]), (vec![vec![1.0]], vec![0.0])], 2);
        let r = max_output(&n, &InputBox::uniform(2, 0.0, 1.0), 0, &LpLimits::default()).unwrap();
        assert!((r.value.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.unstable, 1);
        assert_eq!(r.lps_solved, 2);
        assert_eq!(r.pattern, Some(vec![vec![true]]));
        assert_eq!(r.input, Some(vec![1.0, 0.0]));
    }

    #[test]
    fn all_stable_is_one_lp() {
        let n = net(vec![(vec![vec![1.0, 1.0], vec![-1.0, -1.0]], vec![0.5, -0.5]), (vec![vec![1.0, 1.0]], vec![0.0])], 2);
        let r = max_output(&n, &InputBox::uniform(2, 0.0, 1.0), 0, &LpLimits::default()).unwrap();
        assert_eq!(r.unstable, 0);
        assert_eq!(r.lps_solved, 1);
        assert!((r.value.unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_patterns_counted() {
        // opposite signs of x - 0.5: every pattern is feasible, the equal ones only at x = 0.5
        let n = net(
            vec![(vec![vec![1.0], vec![-1.0]], vec![-0.5, 0.5]), (vec![vec![1.0, 1.0]], vec![0.0])],
            1,
        );
        let r = max_output(&n, &InputBox::uniform(1, 0.0, 1.0), 0, &LpLimits::default()).unwrap();
        assert_eq!(r.lps_solved, 4);
        assert_eq!(r.infeasible_patterns, 0);
        assert!((r.value.unwrap() - 0.5).abs() < 1e-12);
        let m = net(
            vec![(vec![vec![1.0], vec![1.0]], vec![-0.5, -0.75]), (vec![vec![1.0, -1.0]], vec![0.0])],
            1,
        );
        let r = max_output(&m, &InputBox::uniform(1, 0.0, 1.0), 0, &LpLimits::default()).unwrap();
        assert_eq!(r.lps_solved, 4);
        // node 0 inactive with node 1 active needs x <= 0.5 and x >= 0.75
        assert_eq!(r.infeasible_patterns, 1);
        assert!((r.value.unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn refuses_large_networks() {
        let w: Vec<Vec<f64>> = (0..21).map(|i| vec![1.0, if i % 2 == 0 { -1.0 } else { -0.5 }]).collect();
        let n = net(vec![(w, vec![0.0; 21]), (vec![vec![1.0; 21]], vec![0.0])], 2);
        let e = max_output(&n, &InputBox::uniform(2, 0.0, 1.0), 0, &LpLimits::default()).unwrap_err();
        assert!(matches!(e, Error::OracleBudget { unstable: 21, limit: 20 }));
    }

    #[test]
    fn matches_forward_sampling_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let w1: Vec<Vec<f64>> = (0..4).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let b1: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let w2 = vec![(0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()];
            let n = net(vec![(w1, b1), (w2, vec![0.0])], 2);
            let r = max_output(&n, &InputBox::uniform(2, 0.0, 1.0), 0, &LpLimits::default()).unwrap();
            let v = r.value.unwrap();
            assert!((n.forward(&r.input.unwrap()).unwrap()[0] - v).abs() < 1e-9);
            for _ in 0..200 {
                let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                assert!(n.forward(&x).unwrap()[0] <= v + 1e-9);
            }
        }
    }

    #[test]
    fn relaxation_value_two_groups_vs_one() {
        let w = [1.0, 1.0];
        let bx = InputBox::uniform(2, 0.0, 1.0);
        let mut values = Vec::new();
        for p in [Partition::singletons(2), Partition::single(2)] {
            let mut m = MilpModel::new();
            let x: Vec<VarId> = (0..2).map(|i| m.add_continuous(format!("x{i}"), 0.0, 1.0)).collect();
            let bounds = interval_node_bounds(&w, -1.0, &p, &bx);
            let e = if p.len() == 1 {
                encode_bigm(&mut m, "n", &x, &w, -1.0, &bounds).unwrap()
            } else {
                encode_partitioned(&mut m, "n", &x, &w, -1.0, &p, &bounds).unwrap()
            };
            m.add_constraint("fix0", LinExpr::term(x[0], 1.0), Sense::Eq, 1.0);
            m.add_constraint("fix1", LinExpr::term(x[1], 1.0), Sense::Eq, 0.0);
            m.set_objective(ObjSense::Maximize, LinExpr::term(e.output, 1.0), 0.0);
            values.push(relaxation_value(&m, &LpLimits::default()).unwrap());
        }
        assert!(values[0].abs() < 1e-9, "{values:?}");
        assert!((values[1] - 0.5).abs() < 1e-9, "{values:?}");
    }
}
