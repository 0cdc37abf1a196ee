//! The three adversarial-robustness tasks built on top of an encoded network.
//!
//! * optimal adversary: `max f_k(x) - f_j(x)` over an L1 ball around `x̄`;
//! * verification: the same objective over an L-infinity box, stopping once
//!   the sign of the optimum is known;
//! * minimum distortion: `min eps` subject to `f_k(x) >= f_j(x)` and
//!   `|x - x̄|_1 <= eps`, with `eps` capped so the model stays bounded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bnb::{solve_milp_with, BnbConfig, CutPolicy, MilpResult, PrimalHeuristic};
use crate::cuts::CutSeparator;
use crate::error::{Error, Result};
use crate::interval::{propagate, BoundsTable};
use crate::lp::LpLimits;
use crate::milp::{encode_network_into, FormulationConfig, LinExpr, MilpModel, NetworkEncoding, ObjSense, Sense, VarId};
use crate::nn::{InputBox, NeuralNet};
use crate::obbt::{add_l1_ball, run_obbt, InputDomain, L1Radius, ObbtConfig, ObbtMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    Linf,
}

/// How the adversarial label is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvLabel {
    Index(usize),
    /// Seeded uniform choice among labels other than the true one.
    Random,
    /// Largest output other than the true label, ties to the smallest index.
    Second,
}

/// Instance document as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub target: Vec<f64>,
    pub true_label: usize,
    pub adv_label: AdvLabel,
    pub epsilon: f64,
    pub norm: Norm,
    pub clip: (f64, f64),
}

/// Parses `{"target", "true_label", "adv_label", "epsilon", "norm", "clip"}`.
/// `adv_label` is an index, `"random"` or `"second"` (the default); `clip`
/// defaults to `[0, 1]`.
pub fn load_instance(doc: &str) -> Result<InstanceSpec> {
    let v: Value = serde_json::from_str(doc)?;
    let bad = |m: &str| Error::Instance(m.to_string());
    let target = v
        .get("target")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing array field \"target\""))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| bad("\"target\" must contain numbers")))
        .collect::<Result<Vec<f64>>>()?;
    let true_label = v
        .get("true_label")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad("missing integer field \"true_label\""))? as usize;
    let adv_label = match v.get("adv_label") {
        None | Some(Value::Null) => AdvLabel::Second,
        Some(Value::String(s)) if s == "random" => AdvLabel::Random,
        Some(Value::String(s)) if s == "second" => AdvLabel::Second,
        Some(x) => AdvLabel::Index(
            x.as_u64()
                .ok_or_else(|| bad("\"adv_label\" must be an integer, \"random\" or \"second\""))? as usize,
        ),
    };
    let epsilon = v
        .get("epsilon")
        .and_then(Value::as_f64)
        .ok_or_else(|| bad("missing number field \"epsilon\""))?;
    let norm = match v.get("norm").and_then(Value::as_str) {
        Some("l1") => Norm::L1,
        Some("linf") => Norm::Linf,
        _ => return Err(bad("\"norm\" must be \"l1\" or \"linf\"")),
    };
    let clip = match v.get("clip") {
        None => (0.0, 1.0),
        Some(c) => {
            let pair = c.as_array().filter(|a| a.len() == 2).ok_or_else(|| bad("\"clip\" must be [lo, hi]"))?;
            let lo = pair[0].as_f64().ok_or_else(|| bad("\"clip\" must be numeric"))?;
            let hi = pair[1].as_f64().ok_or_else(|| bad("\"clip\" must be numeric"))?;
            (lo, hi)
        }
    };
    Ok(InstanceSpec { target, true_label, adv_label, epsilon, norm, clip })
}

impl InstanceSpec {
    pub fn to_json(&self) -> String {
        let adv = match self.adv_label {
            AdvLabel::Index(k) => Value::from(k),
            AdvLabel::Random => Value::from("random"),
            AdvLabel::Second => Value::from("second"),
        };
        serde_json::json!({
            "target": self.target,
            "true_label": self.true_label,
            "adv_label": adv,
            "epsilon": self.epsilon,
            "norm": match self.norm { Norm::L1 => "l1", Norm::Linf => "linf" },
            "clip": [self.clip.0, self.clip.1],
        })
        .to_string()
    }

    /// Checks the instance against `net` and fixes the adversarial label.
    pub fn resolve(&self, net: &NeuralNet, seed: u64) -> Result<AdversaryInstance> {
        let m = net.num_outputs();
        if self.target.len() != net.input_dim {
            return Err(Error::Dimension {
                expected: net.input_dim,
                got: self.target.len(),
                context: "instance target",
            });
        }
        if self.true_label >= m {
            return Err(Error::Instance(format!("true label {} out of range for {m} outputs", self.true_label)));
        }
        if m < 2 {
            return Err(Error::Instance("network needs at least two outputs".into()));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Instance(format!("epsilon must be a finite non-negative number, got {}", self.epsilon)));
        }
        let (lo, hi) = self.clip;
        if !(lo <= hi) {
            return Err(Error::Instance(format!("clip range [{lo}, {hi}] is empty")));
        }
        if self.target.iter().any(|&t| !(lo..=hi).contains(&t)) {
            return Err(Error::Instance("target lies outside the clip range".into()));
        }
        let j = self.true_label;
        let k = match self.adv_label {
            AdvLabel::Index(k) => k,
            AdvLabel::Second => second_likeliest(net, &self.target, j)?,
            AdvLabel::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let pick = rng.gen_range(0..m - 1);
                if pick >= j {
                    pick + 1
                } else {
                    pick
                }
            }
        };
        if k >= m || k == j {
            return Err(Error::Instance(format!("adversarial label {k} must differ from {j} and be below {m}")));
        }
        Ok(AdversaryInstance {
            target: self.target.clone(),
            true_label: j,
            adv_label: k,
            epsilon: self.epsilon,
            norm: self.norm,
            clip: InputBox::uniform(net.input_dim, lo, hi),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryInstance {
    pub target: Vec<f64>,
    pub true_label: usize,
    pub adv_label: usize,
    pub epsilon: f64,
    pub norm: Norm,
    pub clip: InputBox,
}

/// Largest output at `x` among labels other than `j`.
pub fn second_likeliest(net: &NeuralNet, x: &[f64], j: usize) -> Result<usize> {
    let f = net.forward(x)?;
    let mut best: Option<usize> = None;
    for (k, &v) in f.iter().enumerate() {
        if k != j && best.is_none_or(|b| v > f[b]) {
            best = Some(k);
        }
    }
    best.ok_or_else(|| Error::Instance("network needs at least two outputs".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    OptimalAdversary,
    Verification,
    MinDistortion,
}

/// What the task optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Goal {
    MaxOutput(usize),
    /// `max f_k - f_j`
    MaxMargin { k: usize, j: usize },
    /// `min eps` with `f_k >= f_j`
    MinDistortion { k: usize, j: usize },
}

/// A task independent of formulation: input region plus goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Region used for bounds. For minimum distortion the ball radius is the cap.
    pub domain: InputDomain,
    pub goal: Goal,
}

fn clip_around(clip: &InputBox, center: &[f64], radius: f64) -> InputBox {
    InputBox {
        lower: clip.lower.iter().zip(center).map(|(&l, &c)| l.max(c - radius)).collect(),
        upper: clip.upper.iter().zip(center).map(|(&u, &c)| u.min(c + radius)).collect(),
    }
}

impl TaskSpec {
    pub fn optimal_adversary(inst: &AdversaryInstance) -> Result<Self> {
        if inst.norm != Norm::L1 {
            return Err(Error::Instance("the optimal-adversary task uses the l1 norm".into()));
        }
        Ok(Self {
            kind: TaskKind::OptimalAdversary,
            domain: InputDomain {
                bounds: clip_around(&inst.clip, &inst.target, inst.epsilon),
                l1_ball: Some((inst.target.clone(), inst.epsilon)),
            },
            goal: Goal::MaxMargin { k: inst.adv_label, j: inst.true_label },
        })
    }

    pub fn verification(inst: &AdversaryInstance) -> Result<Self> {
        if inst.norm != Norm::Linf {
            return Err(Error::Instance("the verification task uses the linf norm".into()));
        }
        Ok(Self {
            kind: TaskKind::Verification,
            domain: InputDomain::from_box(clip_around(&inst.clip, &inst.target, inst.epsilon)),
            goal: Goal::MaxMargin { k: inst.adv_label, j: inst.true_label },
        })
    }

    /// `cap` bounds the distortion; `None` uses the input dimension, which
    /// reaches the whole unit box.
    pub fn min_distortion(inst: &AdversaryInstance, cap: Option<f64>) -> Result<Self> {
        let cap = cap.unwrap_or(inst.target.len() as f64);
        if !(cap > 0.0) {
            return Err(Error::Instance(format!("distortion cap must be positive, got {cap}")));
        }
        Ok(Self {
            kind: TaskKind::MinDistortion,
            domain: InputDomain {
                bounds: clip_around(&inst.clip, &inst.target, cap),
                l1_ball: Some((inst.target.clone(), cap)),
            },
            goal: Goal::MinDistortion { k: inst.adv_label, j: inst.true_label },
        })
    }

    /// Task for `kind`; the instance's norm must match the task.
    pub fn for_kind(kind: TaskKind, inst: &AdversaryInstance, cap: Option<f64>) -> Result<Self> {
        match kind {
            TaskKind::OptimalAdversary => Self::optimal_adversary(inst),
            TaskKind::Verification => Self::verification(inst),
            TaskKind::MinDistortion => Self::min_distortion(inst, cap),
        }
    }

    pub fn stop_on_sign(&self) -> bool {
        self.kind == TaskKind::Verification
    }

    /// Adds input variables and the perturbation rows; returns the inputs and,
    /// for minimum distortion, the `eps` variable.
    pub fn add_inputs(&self, model: &mut MilpModel) -> (Vec<VarId>, Option<VarId>) {
        match (self.goal, &self.domain.l1_ball) {
            (Goal::MinDistortion { .. }, Some((center, cap))) => {
                let b = &self.domain.bounds;
                let x: Vec<VarId> = (0..b.dim())
                    .map(|i| model.add_continuous(format!("x{i}"), b.lower[i], b.upper[i]))
                    .collect();
                let eps = model.add_continuous("eps", 0.0, *cap);
                add_l1_ball(model, &x, b, center, L1Radius::Var(eps));
                (x, Some(eps))
            }
            _ => (self.domain.add_to(model), None),
        }
    }

    /// Sets the objective (and the misclassification row for minimum distortion).
    pub fn apply_goal(&self, model: &mut MilpModel, outputs: &[VarId], eps: Option<VarId>) {
        match self.goal {
            Goal::MaxOutput(k) => model.set_objective(ObjSense::Maximize, LinExpr::term(outputs[k], 1.0), 0.0),
            Goal::MaxMargin { k, j } => model.set_objective(
                ObjSense::Maximize,
                LinExpr::term(outputs[k], 1.0).with(outputs[j], -1.0),
                0.0,
            ),
            Goal::MinDistortion { k, j } => {
                model.add_constraint("misclassify", LinExpr::term(outputs[k], 1.0).with(outputs[j], -1.0), Sense::Ge, 0.0);
                let eps = eps.expect("minimum distortion needs an eps variable");
                model.set_objective(ObjSense::Minimize, LinExpr::term(eps, 1.0), 0.0);
            }
        }
    }
}

/// Bounds for the task's domain: interval propagation or OBBT.
pub fn task_bounds(
    net: &NeuralNet,
    spec: &TaskSpec,
    formulation: &FormulationConfig,
    mode: ObbtMode,
    lp: &LpLimits,
) -> Result<BoundsTable> {
    let cfg = ObbtConfig {
        mode,
        formulation: formulation.clone(),
        lp: lp.clone(),
        parallel: true,
    };
    if mode == ObbtMode::Interval {
        let plan = crate::milp::plan_partitions(net, formulation)?;
        return propagate(net, &spec.domain.bounds, &plan);
    }
    run_obbt(net, &spec.domain, &cfg)
}

/// An encoded task ready for branch-and-bound.
#[derive(Debug, Clone)]
pub struct TaskModel {
    pub net: NeuralNet,
    pub spec: TaskSpec,
    pub encoding: NetworkEncoding,
    pub bounds: BoundsTable,
    pub epsilon: Option<VarId>,
}

/// Encodes `net` under `formulation` inside the task's region.
pub fn build_task(net: &NeuralNet, spec: &TaskSpec, formulation: &FormulationConfig, bounds: &BoundsTable) -> Result<TaskModel> {
    let mut model = MilpModel::new();
    let (inputs, eps) = spec.add_inputs(&mut model);
    let (hidden, outputs, plan) = encode_network_into(&mut model, net, &inputs, formulation, bounds)?;
    spec.apply_goal(&mut model, &outputs, eps);
    Ok(TaskModel {
        net: net.clone(),
        spec: spec.clone(),
        encoding: NetworkEncoding { model, inputs, hidden, outputs, plan },
        bounds: bounds.clone(),
        epsilon: eps,
    })
}

pub fn build_optimal_adversary(
    net: &NeuralNet,
    inst: &AdversaryInstance,
    formulation: &FormulationConfig,
    bounds: &BoundsTable,
) -> Result<TaskModel> {
    build_task(net, &TaskSpec::optimal_adversary(inst)?, formulation, bounds)
}

pub fn build_verification(
    net: &NeuralNet,
    inst: &AdversaryInstance,
    formulation: &FormulationConfig,
    bounds: &BoundsTable,
) -> Result<TaskModel> {
    build_task(net, &TaskSpec::verification(inst)?, formulation, bounds)
}

pub fn build_min_distortion(
    net: &NeuralNet,
    inst: &AdversaryInstance,
    cap: Option<f64>,
    formulation: &FormulationConfig,
    bounds: &BoundsTable,
) -> Result<TaskModel> {
    build_task(net, &TaskSpec::min_distortion(inst, cap)?, formulation, bounds)
}

impl TaskModel {
    pub fn model(&self) -> &MilpModel {
        &self.encoding.model
    }

    /// `base` with the task's stopping rule and the given cut policy.
    pub fn bnb_config(&self, base: &BnbConfig) -> BnbConfig {
        BnbConfig {
            stop_on_sign: base.stop_on_sign || self.spec.stop_on_sign(),
            ..base.clone()
        }
    }

    pub fn solve(&self, base: &BnbConfig) -> Result<MilpResult> {
        let cfg = self.bnb_config(base);
        let heuristic = ForwardPattern { task: self };
        if cfg.cut_policy == CutPolicy::Off {
            return solve_milp_with(self.model(), &cfg, None, Some(&heuristic));
        }
        let sep = CutSeparator::new(self.model(), &self.encoding.hidden);
        solve_milp_with(self.model(), &cfg, Some(&sep), Some(&heuristic))
    }

    /// Input part of a solution.
    pub fn input_point(&self, point: &[f64]) -> Vec<f64> {
        self.encoding.inputs.iter().map(|v| point[v.0]).collect()
    }
}

/// Fixes every binary to the activation pattern of the network evaluated at
/// the LP point's input.
struct ForwardPattern<'a> {
    task: &'a TaskModel,
}

impl PrimalHeuristic for ForwardPattern<'_> {
    fn propose(&self, point: &[f64]) -> Option<Vec<(VarId, f64)>> {
        let x = self.task.input_point(point);
        let pre = self.task.net.preactivations(&x).ok()?;
        let mut fix = Vec::new();
        for (l, layer) in self.task.encoding.hidden.iter().enumerate() {
            for (r, e) in layer.iter().enumerate() {
                if let Some(s) = e.sigma {
                    fix.push((s, if pre[l][r] >= 0.0 { 1.0 } else { 0.0 }));
                }
            }
        }
        Some(fix)
    }
}
