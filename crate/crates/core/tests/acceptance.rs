//! Acceptance suite. Runs every criterion on its own thread and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use relu_milp::bnb::{BnbConfig, MilpStatus};
use relu_milp::cuts::{most_violated, CUT_TOL};
use relu_milp::interval::{interval_node_bounds, node_interval, weighted_range, BoundsTable};
use relu_milp::lp::{LpLimits, LpStatus};
use relu_milp::milp::{
    encode_bigm, encode_convex_hull, encode_nonlifted, encode_partitioned, family_row, nonlifted_unions, Constraint,
    Formulation, FormulationConfig, LinExpr, MilpModel, NodeEncoding, ObjSense, Sense, VarId, NONLIFTED_CAP,
};
use relu_milp::nn::{InputBox, NeuralNet};
use relu_milp::obbt::{run_obbt, InputDomain, ObbtConfig, ObbtMode};
use relu_milp::oracle::{enumerate_task, relaxation_value};
use relu_milp::partition::{
    equal_range, equal_size, random_partition, uneven_magnitudes, Partition, Strategy, StrategyConfig,
};
use relu_milp::tasks::{build_task, task_bounds, Norm, TaskSpec};

use common::{fixture_net, random_instance, random_net, with_epsilon};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn exact_bnb() -> BnbConfig {
    BnbConfig {
        rel_gap: 1e-9,
        abs_gap: 1e-9,
        log_every: 0,
        ..BnbConfig::default()
    }
}

fn config(f: Formulation) -> FormulationConfig {
    FormulationConfig::new(f, StrategyConfig::equal_size(f.num_partitions().unwrap_or(1)))
}

fn lim() -> LpLimits {
    LpLimits::default()
}

// 1. exactness against the activation-pattern oracle

fn exactness() -> Outcome {
    let forms = [
        Formulation::BigM,
        Formulation::Partitioned { n: 2 },
        Formulation::Partitioned { n: 4 },
        Formulation::ConvexHull,
        Formulation::NonLifted { n: 2 },
    ];
    let start = Instant::now();
    let failures: Vec<String> = (0..50u64)
        .into_par_iter()
        .flat_map_iter(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let eta = rng.gen_range(2..=6);
            let hidden = [rng.gen_range(2..=6), rng.gen_range(2..=6)];
            let net = random_net(&mut rng, eta, &hidden, 3);
            let eps = rng.gen_range(0.2..1.0);
            let inst = random_instance(&mut rng, &net, eps, Norm::L1);
            let spec = TaskSpec::optimal_adversary(&inst).unwrap();
            let oracle = enumerate_task(&net, &spec, &lim()).unwrap().value.unwrap();
            forms
                .iter()
                .filter_map(|&f| {
                    let fc = config(f);
                    let b = task_bounds(&net, &spec, &fc, ObbtMode::Interval, &lim()).unwrap();
                    let r = build_task(&net, &spec, &fc, &b).unwrap().solve(&exact_bnb()).unwrap();
                    let ok = r.status == MilpStatus::Optimal && (r.incumbent_value - oracle).abs() <= 1e-6;
                    (!ok).then(|| format!("net {seed} {f}: {:?} {} vs oracle {oracle}", r.status, r.incumbent_value))
                })
                .collect::<Vec<_>>()
        })
        .collect();
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!("250 solves match the oracle in {:.1}s", start.elapsed().as_secs_f64()))
}

// 2. relaxation hierarchy on single-node fixtures

struct NodeFixture {
    w: Vec<f64>,
    b: f64,
    bx: InputBox,
    c: Vec<f64>,
}

fn node_fixture(rng: &mut ChaCha8Rng) -> NodeFixture {
    let eta = rng.gen_range(4..=6);
    let w: Vec<f64> = (0..eta)
        .map(|_| {
            let sign = if rng.gen_bool(0.7) { 1.0 } else { -1.0 };
            sign * 10f64.powf(rng.gen_range(-1.0..1.0))
        })
        .collect();
    let lower: Vec<f64> = (0..eta).map(|_| rng.gen_range(-1.0..0.0)).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.5..2.0)).collect();
    let bx = InputBox::new(lower, upper).unwrap();
    let (lo, hi) = node_interval(&w, 0.0, &bx);
    let b = -(lo + rng.gen_range(0.2..0.8) * (hi - lo));
    let c = (0..eta).map(|_| rng.gen_range(-1.0..1.0)).collect();
    NodeFixture { w, b, bx, c }
}

enum Enc<'a> {
    BigM,
    Lifted(&'a Partition),
    NonLifted(&'a Partition),
    Hull,
}

fn node_model(fx: &NodeFixture, enc: Enc) -> (MilpModel, Vec<VarId>, NodeEncoding) {
    let mut m = MilpModel::new();
    let x: Vec<VarId> = (0..fx.w.len())
        .map(|i| m.add_continuous(format!("x{i}"), fx.bx.lower[i], fx.bx.upper[i]))
        .collect();
    let p = match &enc {
        Enc::Lifted(p) | Enc::NonLifted(p) => (*p).clone(),
        _ => Partition::single(fx.w.len()),
    };
    let nb = interval_node_bounds(&fx.w, fx.b, &p, &fx.bx);
    let e = match enc {
        Enc::BigM => encode_bigm(&mut m, "n", &x, &fx.w, fx.b, &nb),
        Enc::Lifted(p) => encode_partitioned(&mut m, "n", &x, &fx.w, fx.b, p, &nb),
        Enc::NonLifted(p) => encode_nonlifted(&mut m, "n", &x, &fx.w, fx.b, p, &nb, NONLIFTED_CAP),
        Enc::Hull => encode_convex_hull(&mut m, "n", &x, &fx.w, fx.b, &nb),
    }
    .unwrap();
    let mut obj = LinExpr::term(e.output, 1.0);
    for (v, c) in x.iter().zip(&fx.c) {
        obj.add(*v, *c);
    }
    m.set_objective(ObjSense::Maximize, obj, 0.0);
    (m, x, e)
}

fn relax(fx: &NodeFixture, enc: Enc) -> f64 {
    relaxation_value(&node_model(fx, enc).0, &lim()).unwrap()
}

fn hierarchy() -> Outcome {
    let mut strict = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for f in 0..20 {
        let fx = node_fixture(&mut rng);
        let eta = fx.w.len();
        let bigm = relax(&fx, Enc::BigM);
        let hull = relax(&fx, Enc::Hull);
        let n_eta = equal_size(&fx.w, eta).unwrap();
        let v_eta = relax(&fx, Enc::Lifted(&n_eta));
        ensure((v_eta - hull).abs() <= 1e-9, || format!("fixture {f}: N=eta {v_eta} vs hull {hull}"))?;
        // merge chain from singletons down to one group
        let mut p = Partition::singletons(eta);
        let mut prev = hull;
        while p.len() > 1 {
            let v = relax(&fx, Enc::Lifted(&p));
            if p.len() <= 4 || p.len() == eta {
                let nl = relax(&fx, Enc::NonLifted(&p));
                ensure((v - nl).abs() <= 1e-7, || format!("fixture {f} N={}: lifted {v} vs non-lifted {nl}", p.len()))?;
            }
            ensure(prev <= v + 1e-9, || format!("fixture {f} N={}: {prev} > {v}", p.len()))?;
            if v - prev > 1e-6 {
                strict += 1;
            }
            prev = v;
            let a = rng.gen_range(0..p.len());
            let mut c = rng.gen_range(0..p.len() - 1);
            if c >= a {
                c += 1;
            }
            p = p.merge(a, c);
        }
        let one = relax(&fx, Enc::Lifted(&p));
        ensure(prev <= one + 1e-9, || format!("fixture {f} N=2 {prev} > N=1 {one}"))?;
        ensure((one - bigm).abs() <= 1e-9, || format!("fixture {f}: N=1 {one} vs big-M {bigm}"))?;
        if one - prev > 1e-6 {
            strict += 1;
        }
    }
    ensure(strict > 0, || "no strict inequality on any fixture".into())?;
    Ok(format!("20 fixtures, {strict} strict consecutive steps"))
}

// 3. four-input example coefficients

fn coefs(expr: &LinExpr) -> BTreeMap<usize, f64> {
    expr.iter().filter(|(_, c)| *c != 0.0).map(|(v, c)| (v.0, c)).collect()
}

/// `y <= sum_{i in I} w_i x_i + s (b + k)`, written as `y - ... - s k' <= 0`.
fn has_row(m: &MilpModel, e: &NodeEncoding, x: &[VarId], w: &[f64], set: &[usize], k: f64) -> bool {
    let mut want = BTreeMap::from([(e.output.0, 1.0), (e.sigma.unwrap().0, -k)]);
    for &i in set {
        want.insert(x[i].0, -w[i]);
    }
    e.constraints.iter().any(|c| {
        let c = &m.constraints[c.0];
        c.sense == Sense::Le && c.rhs == 0.0 && coefs(&c.expr) == want
    })
}

/// `z_n <= s k` for the slack of group `n`.
fn has_slack_bound(m: &MilpModel, e: &NodeEncoding, n: usize, k: f64) -> bool {
    let want = BTreeMap::from([(e.partition_slacks[n].0, 1.0), (e.sigma.unwrap().0, -k)]);
    e.constraints.iter().any(|c| {
        let c = &m.constraints[c.0];
        c.sense == Sense::Le && c.rhs == 0.0 && coefs(&c.expr) == want
    })
}

fn four_input_example() -> Outcome {
    let w = [1.0, 1.0, 100.0, 100.0];
    let bx = InputBox::uniform(4, 0.0, 1.0);
    let build = |subsets: Vec<Vec<usize>>, lifted: bool| {
        let p = Partition::new(4, subsets).unwrap();
        let mut m = MilpModel::new();
        let x: Vec<VarId> = (0..4).map(|i| m.add_continuous(format!("x{}", i + 1), 0.0, 1.0)).collect();
        let nb = interval_node_bounds(&w, 0.0, &p, &bx);
        let e = if lifted {
            encode_partitioned(&mut m, "n", &x, &w, 0.0, &p, &nb)
        } else {
            encode_nonlifted(&mut m, "n", &x, &w, 0.0, &p, &nb, NONLIFTED_CAP)
        }
        .unwrap();
        (m, x, e)
    };
    ensure(node_interval(&w, 0.0, &bx) == (0.0, 202.0), || "preactivation range is not [0, 202]".into())?;
    // partition-sum bounds in both two-group brackets and both uneven ones
    for (subsets, ks) in [
        (vec![vec![0, 1], vec![2, 3]], [2.0, 200.0]),
        (vec![vec![0, 2], vec![1, 3]], [101.0, 101.0]),
        (vec![vec![0], vec![1, 2, 3]], [1.0, 201.0]),
        (vec![vec![2], vec![0, 1, 3]], [100.0, 102.0]),
    ] {
        let (m, _, e) = build(subsets.clone(), true);
        for (n, k) in ks.iter().enumerate() {
            ensure(has_slack_bound(&m, &e, n, *k), || format!("{subsets:?}: group {n} bound is not s*{k}"))?;
        }
    }
    // non-lifted rows of both brackets
    let (m, x, e) = build(vec![vec![0, 2], vec![1, 3]], false);
    ensure(has_row(&m, &e, &x, &w, &[0, 2], 101.0), || "missing y <= x1 + 100x3 + s(b + 101)".into())?;
    ensure(has_row(&m, &e, &x, &w, &[1, 3], 101.0), || "missing y <= x2 + 100x4 + s(b + 101)".into())?;
    let (m, x, e) = build(vec![vec![0, 1], vec![2, 3]], false);
    ensure(has_row(&m, &e, &x, &w, &[0, 1], 200.0), || "missing y <= x1 + x2 + s(b + 200)".into())?;
    ensure(has_row(&m, &e, &x, &w, &[2, 3], 2.0), || "missing y <= 100x3 + 100x4 + s(b + 2)".into())?;
    // four groups
    let (m, x, e) = build(vec![vec![0], vec![1], vec![2], vec![3]], false);
    for i in 0..2 {
        ensure(has_row(&m, &e, &x, &w, &[i], 201.0), || format!("missing y <= x{} + s(b + 201)", i + 1))?;
    }
    for i in 2..4 {
        ensure(has_row(&m, &e, &x, &w, &[i], 102.0), || format!("missing y <= 100x{} + s(b + 102)", i + 1))?;
    }
    // the lifted encoding projects onto the non-lifted family: at fixed (x, s)
    // the largest feasible y is the smallest family right-hand side, or the
    // fiber is empty when that falls below w.x
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let terms: Vec<(f64, f64)> = w.iter().map(|&wi| weighted_range(wi, 0.0, 1.0)).collect();
    for subsets in [vec![vec![0, 1], vec![2, 3]], vec![vec![0, 2], vec![1, 3]]] {
        let p = Partition::new(4, subsets.clone()).unwrap();
        for _ in 0..50 {
            let xs: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = rng.gen_range(0.0..1.0);
            let (mut m, x, e) = build(subsets.clone(), true);
            for i in 0..4 {
                m.var_mut(x[i]).lower = xs[i];
                m.var_mut(x[i]).upper = xs[i];
            }
            let sig = e.sigma.unwrap();
            m.var_mut(sig).lower = s;
            m.var_mut(sig).upper = s;
            m.set_objective(ObjSense::Maximize, LinExpr::term(e.output, 1.0), 0.0);
            let lifted = relu_milp::lp::solve_lp(&m, true, None, &lim()).unwrap();
            // with zero lower term bounds, member I reads y <= sum_I w x + s sum_{not I} UB
            let mut projected = f64::INFINITY;
            for set in nonlifted_unions(&p) {
                let inside: f64 = set.iter().map(|&i| w[i] * xs[i]).sum();
                let outside: f64 = (0..4).filter(|i| !set.contains(i)).map(|i| terms[i].1).sum();
                projected = projected.min(inside + s * outside);
            }
            // the lower side is y >= max(0, w.x) with b = 0
            let wx: f64 = w.iter().zip(&xs).map(|(a, b)| a * b).sum();
            if projected < wx - 1e-9 {
                ensure(lifted.status == LpStatus::Infeasible, || format!("{subsets:?} x={xs:?} s={s}: expected an empty fiber"))?;
            } else {
                let v = lifted.objective;
                ensure(lifted.status == LpStatus::Optimal && (v - projected).abs() <= 1e-9, || {
                    format!("{subsets:?} x={xs:?} s={s}: lifted {v} vs projected {projected}")
                })?;
            }
        }
    }
    Ok("all expected inequalities present with exact coefficients".into())
}

// 4. cut separation against exhaustive family evaluation

/// Vertices of `{x in box : w.x + b <= 0}` (`active == false`) or `>= 0`.
fn phase_vertices(w: &[f64], b: f64, lo: &[f64], hi: &[f64], active: bool) -> Vec<Vec<f64>> {
    let eta = w.len();
    let side = |x: &[f64]| {
        let v: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
        if active {
            v >= -1e-12
        } else {
            v <= 1e-12
        }
    };
    let corner = |mask: usize| -> Vec<f64> { (0..eta).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }).collect() };
    let mut out = Vec::new();
    for mask in 0..1usize << eta {
        let x = corner(mask);
        if side(&x) {
            out.push(x.clone());
        }
        for i in 0..eta {
            if mask >> i & 1 == 0 && w[i] != 0.0 {
                // edge from this corner along coordinate i
                let rest: f64 = (0..eta).filter(|&k| k != i).map(|k| w[k] * x[k]).sum::<f64>() + b;
                let t = -rest / w[i];
                if t > lo[i] && t < hi[i] {
                    let mut p = x.clone();
                    p[i] = t;
                    out.push(p);
                }
            }
        }
    }
    out
}

fn cut_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violated = 0;
    for case in 0..200 {
        let eta = rng.gen_range(1..=10);
        let w: Vec<f64> = (0..eta).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lower: Vec<f64> = (0..eta).map(|_| rng.gen_range(-1.0..0.5)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.1..1.5)).collect();
        let bx = InputBox::new(lower.clone(), upper.clone()).unwrap();
        let (plo, phi) = node_interval(&w, 0.0, &bx);
        let b = -(plo + rng.gen_range(0.1..0.9) * (phi - plo));
        let fx = NodeFixture { w: w.clone(), b, bx: bx.clone(), c: (0..eta).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (m, x, e) = node_model(&fx, Enc::BigM);
        let r = relu_milp::lp::solve_lp(&m, true, None, &lim()).unwrap();
        let point = r.point;
        let xs: Vec<f64> = x.iter().map(|v| point[v.0]).collect();
        let s = point[e.sigma.unwrap().0];
        let y = point[e.output.0];
        let terms: Vec<(f64, f64)> = (0..eta).map(|i| weighted_range(w[i], lower[i], upper[i])).collect();
        let (set, _, v) = most_violated(&w, b, &terms, &xs, s, y);
        let exhaustive = nonlifted_unions(&Partition::singletons(eta))
            .iter()
            .map(|set| {
                let (expr, rhs) = family_row(e.output, e.sigma.unwrap(), &x, &w, b, &terms, set);
                expr.eval(&point) - rhs
            })
            .fold(f64::NEG_INFINITY, f64::max);
        ensure((v - exhaustive).abs() <= 1e-9, || format!("case {case}: separated {v} vs exhaustive {exhaustive}"))?;
        ensure((v > CUT_TOL) == (exhaustive > CUT_TOL), || format!("case {case}: violation flags disagree"))?;
        if v <= CUT_TOL {
            continue;
        }
        violated += 1;
        let (expr, rhs) = family_row(e.output, e.sigma.unwrap(), &x, &w, b, &terms, &set);
        let cut = Constraint { name: "cut".into(), expr, sense: Sense::Le, rhs };
        for active in [false, true] {
            for v in phase_vertices(&w, b, &lower, &upper, active) {
                let mut p = vec![0.0; m.num_vars()];
                for (i, xi) in x.iter().enumerate() {
                    p[xi.0] = v[i];
                }
                let pre: f64 = w.iter().zip(&v).map(|(a, c)| a * c).sum::<f64>() + b;
                p[e.sigma.unwrap().0] = if active { 1.0 } else { 0.0 };
                p[e.output.0] = if active { pre } else { 0.0 };
                ensure(cut.violation(&p) <= 1e-9, || format!("case {case}: cut {set:?} removes vertex {v:?}"))?;
            }
        }
    }
    Ok(format!("200 LP points, {violated} violated, all cuts valid at every vertex"))
}

// 5. OBBT soundness and root tightening

fn within(inner: &BoundsTable, outer: &BoundsTable, tol: f64) -> Result<(), String> {
    for (l, (a, b)) in inner.layers.iter().zip(&outer.layers).enumerate() {
        for (r, (p, q)) in a.iter().zip(b).enumerate() {
            let ok = p.preact.within(&q.preact, tol)
                && p.inactive.iter().zip(&q.inactive).all(|(u, v)| u.within(v, tol))
                && p.active.iter().zip(&q.active).all(|(u, v)| u.within(v, tol));
            ensure(ok, || format!("node ({l}, {r}) escapes: {p:?} vs {q:?}"))?;
        }
    }
    Ok(())
}

fn sample_domain(rng: &mut ChaCha8Rng, d: &InputDomain) -> Vec<f64> {
    let b = &d.bounds;
    let mut x: Vec<f64> = (0..b.dim()).map(|i| rng.gen_range(b.lower[i]..=b.upper[i])).collect();
    if let Some((c, r)) = &d.l1_ball {
        let dist: f64 = x.iter().zip(c).map(|(a, b)| (a - b).abs()).sum();
        if dist > *r {
            let t = rng.gen_range(0.0..1.0) * r / dist;
            x = x.iter().zip(c).map(|(a, b)| b + t * (a - b)).collect();
        }
    }
    x
}

fn escapes(net: &NeuralNet, table: &BoundsTable, x: &[f64]) -> usize {
    let mut count = 0;
    let mut h = x.to_vec();
    for (l, layer) in net.layers.iter().enumerate() {
        let pre = layer.affine(&h);
        for (r, nb) in table.layers[l].iter().enumerate() {
            let tol = 1e-7;
            if !nb.preact.contains(pre[r], tol) {
                count += 1;
            }
            for (n, s) in nb.partition.subsets().iter().enumerate() {
                let sum: f64 = s.iter().map(|&i| layer.weights[r][i] * h[i]).sum();
                if pre[r] <= 0.0 && !nb.inactive[n].contains(sum, tol) {
                    count += 1;
                }
                if pre[r] >= 0.0 && !nb.active[n].contains(sum, tol) {
                    count += 1;
                }
            }
        }
        h = if l + 1 < net.layers.len() { pre.iter().map(|v| v.max(0.0)).collect() } else { pre };
    }
    count
}

fn obbt_suite() -> Outcome {
    let fc = FormulationConfig::new(Formulation::Partitioned { n: 2 }, StrategyConfig::equal_size(2));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut gaps = (0.0, 0.0);
    let mut strict = 0;
    let mut report = Vec::new();
    for inst_id in 0..10 {
        let net = random_net(&mut rng, 4, &[6, 6], 3);
        let inst = random_instance(&mut rng, &net, 0.6, Norm::L1);
        let spec = TaskSpec::optimal_adversary(&inst).unwrap();
        let interval = task_bounds(&net, &spec, &fc, ObbtMode::Interval, &lim()).unwrap();
        let shared = run_obbt(&net, &spec.domain, &ObbtConfig::new(ObbtMode::Shared2N2, fc.clone())).unwrap();
        let split = run_obbt(&net, &spec.domain, &ObbtConfig::new(ObbtMode::Split4N, fc.clone())).unwrap();
        within(&shared, &interval, 1e-9).map_err(|e| format!("instance {inst_id} shared vs interval: {e}"))?;
        within(&split, &shared, 1e-7).map_err(|e| format!("instance {inst_id} split vs shared: {e}"))?;
        let mut escaped = 0;
        for _ in 0..1000 {
            let x = sample_domain(&mut rng, &spec.domain);
            escaped += escapes(&net, &split, &x) + escapes(&net, &shared, &x);
        }
        ensure(escaped == 0, || format!("instance {inst_id}: {escaped} Monte Carlo escapes"))?;
        let oracle = enumerate_task(&net, &spec, &lim()).unwrap().value.unwrap();
        let scale = oracle.abs().max(1e-3);
        let root = |t: &BoundsTable| relaxation_value(build_task(&net, &spec, &config(Formulation::BigM), t).unwrap().model(), &lim()).unwrap();
        let without = (root(&interval) - oracle) / scale;
        let with = (root(&split) - oracle) / scale;
        ensure(with >= -1e-7 && without >= -1e-7, || format!("instance {inst_id}: root below the oracle"))?;
        gaps.0 += without / 10.0;
        gaps.1 += with / 10.0;
        if with < without - 1e-9 {
            strict += 1;
        }
        report.push(format!("{without:.3}->{with:.3}"));
    }
    ensure(gaps.1 <= gaps.0, || format!("mean root gap grew: {} -> {}", gaps.0, gaps.1))?;
    ensure(strict >= 7, || format!("strictly tighter on {strict}/10 only ({})", report.join(", ")))?;
    Ok(format!("mean root gap {:.3} -> {:.3}, strictly smaller on {strict}/10, 20000 samples without escape", gaps.0, gaps.1))
}

// 6. verification sign semantics

fn verification() -> Outcome {
    let fc = config(Formulation::Partitioned { n: 2 });
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut pos, mut neg, mut early) = (0, 0, 0);
    for id in 0..20 {
        let net = random_net(&mut rng, 3, &[5, 5], 3);
        let eps = [0.05, 0.2, 0.5, 1.0][id % 4];
        let inst = random_instance(&mut rng, &net, eps, Norm::Linf);
        let spec = TaskSpec::verification(&inst).unwrap();
        let oracle = enumerate_task(&net, &spec, &lim()).unwrap().value.unwrap();
        let b = task_bounds(&net, &spec, &fc, ObbtMode::Interval, &lim()).unwrap();
        let r = build_task(&net, &spec, &fc, &b).unwrap().solve(&exact_bnb()).unwrap();
        let positive = match r.status {
            MilpStatus::SignDetermined => {
                early += 1;
                ensure(oracle.abs() >= 1e-6, || format!("instance {id}: sign reported at oracle value {oracle}"))?;
                r.incumbent_value > 0.0
            }
            MilpStatus::Optimal => r.incumbent_value > 0.0,
            s => return Err(format!("instance {id}: status {s:?}")),
        };
        if oracle.abs() >= 1e-6 {
            ensure(positive == (oracle > 0.0), || format!("instance {id}: sign disagrees with oracle {oracle}"))?;
        }
        if oracle > 0.0 {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    Ok(format!("20 instances ({pos} vulnerable, {neg} robust), {early} stopped on sign"))
}

// 7. minimum distortion against the optimal-adversary bracket

fn min_distortion() -> Outcome {
    let fc = config(Formulation::Partitioned { n: 2 });
    let solve = |net: &NeuralNet, spec: &TaskSpec| {
        let b = task_bounds(net, spec, &fc, ObbtMode::Interval, &lim()).unwrap();
        build_task(net, spec, &fc, &b).unwrap().solve(&exact_bnb()).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut done = 0;
    let mut values = Vec::new();
    let mut tries = 0;
    while done < 10 {
        tries += 1;
        ensure(tries < 100, || "too few feasible instances".into())?;
        let net = random_net(&mut rng, 3, &[5, 5], 3);
        let inst = random_instance(&mut rng, &net, 0.0, Norm::L1);
        let r = solve(&net, &TaskSpec::min_distortion(&inst, None).unwrap());
        if r.status == MilpStatus::Infeasible {
            continue;
        }
        ensure(r.status == MilpStatus::Optimal, || format!("status {:?}", r.status))?;
        let eps = r.incumbent_value;
        if eps < 2e-4 {
            continue;
        }
        let above = solve(&net, &TaskSpec::optimal_adversary(&with_epsilon(&inst, eps + 1e-4, Norm::L1)).unwrap());
        let below = solve(&net, &TaskSpec::optimal_adversary(&with_epsilon(&inst, eps - 1e-4, Norm::L1)).unwrap());
        ensure(above.incumbent_value >= 0.0, || format!("eps*={eps}: margin {} at eps*+1e-4", above.incumbent_value))?;
        ensure(below.incumbent_value < 0.0, || format!("eps*={eps}: margin {} at eps*-1e-4", below.incumbent_value))?;
        values.push(format!("{eps:.4}"));
        done += 1;
    }
    Ok(format!("eps* = [{}]", values.join(", ")))
}

// 8. two groups against big-M on the fixture network

fn formulation_benefit() -> Outcome {
    let net = fixture_net();
    let bigm = config(Formulation::BigM);
    let part = config(Formulation::Partitioned { n: 2 });
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let insts: Vec<_> = (0..30).map(|_| random_instance(&mut rng, &net, 0.5, Norm::L1)).collect();
    let cfg = BnbConfig {
        time_limit: Some(Duration::from_secs(60)),
        log_every: 0,
        ..BnbConfig::default()
    };
    let start = Instant::now();
    let rows: Vec<(f64, f64, usize, usize, bool)> = insts
        .par_iter()
        .map(|inst| {
            let spec = TaskSpec::optimal_adversary(inst).unwrap();
            let run = |fc: &FormulationConfig| {
                let b = task_bounds(&net, &spec, fc, ObbtMode::Interval, &lim()).unwrap();
                build_task(&net, &spec, fc, &b).unwrap().solve(&cfg).unwrap()
            };
            let (a, p) = (run(&bigm), run(&part));
            let done = a.status == MilpStatus::Optimal && p.status == MilpStatus::Optimal;
            (a.root_bound, p.root_bound, a.nodes_explored, p.nodes_explored, done)
        })
        .collect();
    let root_ok = rows.iter().filter(|r| r.1 <= r.0 + 1e-7).count();
    let fewer = rows.iter().filter(|r| r.3 <= r.2).count();
    let solved = rows.iter().filter(|r| r.4).count();
    let (na, np): (usize, usize) = (rows.iter().map(|r| r.2).sum(), rows.iter().map(|r| r.3).sum());
    let detail = format!(
        "root bound <= big-M on {root_ok}/30, nodes <= big-M on {fewer}/30, total nodes {na} vs {np}, {solved}/30 both optimal, {:.1}s",
        start.elapsed().as_secs_f64()
    );
    ensure(root_ok == 30 && fewer * 10 >= 30 * 6, || detail.clone())?;
    Ok(detail)
}

// 9. partitioning strategies

fn check_partition(p: &Partition, len: usize, n: usize) -> Result<(), String> {
    let mut seen = vec![false; len];
    for i in p.subsets().iter().flatten() {
        ensure(*i < len && !seen[*i], || format!("index {i} repeated or out of range"))?;
        seen[*i] = true;
    }
    ensure(seen.iter().all(|&s| s), || "indices missing".into())?;
    ensure(p.len() == n.min(len) || p.len() == n, || format!("{} groups for N={n}", p.len()))
}

fn strategies() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..1000 {
        let len = rng.gen_range(1..=40);
        let n = rng.gen_range(1..=8);
        let w: Vec<f64> = (0..len).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let seed = rng.gen();
        let es = equal_size(&w, n).map_err(|e| format!("case {case}: {e}"))?;
        check_partition(&es, len, n)?;
        ensure(es == equal_size(&w, n).unwrap(), || "equal-size not deterministic".into())?;
        // contiguous in sorted order, sizes within one
        let mut order: Vec<usize> = (0..len).collect();
        order.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(a.cmp(&b)));
        let flat: Vec<usize> = es.subsets().iter().flatten().copied().collect();
        let mut sorted_groups: Vec<Vec<usize>> = es.subsets().iter().filter(|s| !s.is_empty()).cloned().collect();
        sorted_groups.sort_by(|a, b| w[a[0]].total_cmp(&w[b[0]]));
        ensure(flat.len() == len, || "equal-size size mismatch".into())?;
        let rank: Vec<usize> = {
            let mut r = vec![0; len];
            for (k, &i) in order.iter().enumerate() {
                r[i] = k;
            }
            r
        };
        for g in es.subsets().iter().filter(|s| !s.is_empty()) {
            let mut ranks: Vec<usize> = g.iter().map(|&i| rank[i]).collect();
            ranks.sort_unstable();
            ensure(ranks.windows(2).all(|p| p[1] == p[0] + 1), || format!("case {case}: equal-size group not contiguous"))?;
        }
        let sizes: Vec<usize> = es.subsets().iter().map(Vec::len).filter(|&s| s > 0).collect();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        ensure(hi - lo <= 1, || format!("case {case}: equal-size sizes {sizes:?}"))?;
        let rp = random_partition(len, n, seed).map_err(|e| format!("case {case}: {e}"))?;
        check_partition(&rp, len, n)?;
        ensure(rp == random_partition(len, n, seed).unwrap(), || "random not deterministic".into())?;
        let um = uneven_magnitudes(&w, n).map_err(|e| format!("case {case}: {e}"))?;
        check_partition(&um, len, n)?;
        if n >= 3 {
            let er = equal_range(&w, n, (0.05, 0.95)).map_err(|e| format!("case {case}: {e}"))?;
            check_partition(&er, len, n)?;
            ensure(er == equal_range(&w, n, (0.05, 0.95)).unwrap(), || "equal-range not deterministic".into())?;
        }
        for s in [Strategy::EqualSize, Strategy::Random, Strategy::UnevenMagnitudes, Strategy::EqualRange] {
            if s == Strategy::EqualRange && n < 3 {
                continue;
            }
            let cfg = StrategyConfig::new(s, n).with_seed(seed);
            ensure(cfg.partition_node(&w, 1, 2).unwrap() == cfg.partition_node(&w, 1, 2).unwrap(), || format!("{s:?} not deterministic"))?;
        }
    }
    Ok("1000 weight vectors, four strategies".into())
}

fn main() -> ExitCode {
    let criteria: Vec<(usize, &str, fn() -> Outcome)> = vec![
        (1, "exactness", exactness),
        (2, "hierarchy", hierarchy),
        (3, "four-input example", four_input_example),
        (4, "cut separation", cut_suite),
        (5, "bound tightening", obbt_suite),
        (6, "verification sign", verification),
        (7, "minimum distortion", min_distortion),
        (8, "formulation benefit", formulation_benefit),
        (9, "partition strategies", strategies),
    ];
    let handles: Vec<_> = criteria
        .into_iter()
        .map(|(id, name, f)| {
            let h = std::thread::spawn(move || {
                let t = Instant::now();
                (f(), t.elapsed())
            });
            (id, name, h)
        })
        .collect();
    let mut failed = 0;
    for (id, name, h) in handles {
        let (verdict, detail, secs) = match h.join() {
            Ok((Ok(d), t)) => ("PASS", d, t.as_secs_f64()),
            Ok((Err(d), t)) => ("FAIL", d, t.as_secs_f64()),
            Err(_) => ("FAIL", "panicked".to_string(), 0.0),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("{verdict} criterion {id} ({name}, {secs:.1}s): {detail}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
