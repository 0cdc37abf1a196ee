use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{LpLimits, LpProblem, LpResult, LpStatus, PivotRule};

const PIVOT_TOL: f64 = 1e-9;
/// Bound relaxation used by the first pass of the ratio test. Kept far below
/// the feasibility tolerance so reported points are feasible to roundoff.
const HARRIS_TOL: f64 = 1e-11;
const SINGULAR_TOL: f64 = 1e-11;
const REFACTOR_EVERY: usize = 60;
const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free column sitting at zero.
    Zero,
}

/// Column statuses of a simplex basis: structural columns, then one logical
/// per row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub cols: Vec<ColStatus>,
    pub rows: Vec<ColStatus>,
}

pub(super) struct Simplex<'a> {
    p: &'a LpProblem,
    limits: &'a LpLimits,
    n: usize,
    m: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    status: Vec<ColStatus>,
    /// Basis position of each column, `NONE` when nonbasic.
    pos: Vec<usize>,
    head: Vec<usize>,
    /// Dense basis inverse, row-major, row `i` belongs to basis position `i`.
    binv: Vec<f64>,
    weights: Vec<f64>,
    rejected: Vec<bool>,
    since_refactor: usize,
    iters: usize,
    degenerate_run: usize,
}

enum Step {
    Pivot { row: usize, t: f64, to_upper: bool },
    Flip { t: f64 },
    Unbounded,
}

impl<'a> Simplex<'a> {
    pub(super) fn new(p: &'a LpProblem, warm: Option<&Basis>, limits: &'a LpLimits) -> Self {
        let n = p.num_cols();
        let m = p.num_rows();
        let mut lo = p.col_lo.clone();
        lo.extend_from_slice(&p.row_lo);
        let mut hi = p.col_hi.clone();
        hi.extend_from_slice(&p.row_hi);
        let mut s = Self {
            p,
            limits,
            n,
            m,
            lo,
            hi,
            x: vec![0.0; n + m],
            status: vec![ColStatus::AtLower; n + m],
            pos: vec![NONE; n + m],
            head: Vec::with_capacity(m),
            binv: vec![0.0; m * m],
            weights: vec![1.0; n + m],
            rejected: vec![false; n + m],
            since_refactor: 0,
            iters: 0,
            degenerate_run: 0,
        };
        let warmed = warm.is_some_and(|b| s.load_basis(b)) && s.refactor();
        if !warmed {
            s.slack_basis();
        }
        s.compute_basics();
        s
    }

    fn load_basis(&mut self, b: &Basis) -> bool {
        if b.cols.len() != self.n || b.rows.len() > self.m {
            return false;
        }
        let mut status = b.cols.clone();
        status.extend_from_slice(&b.rows);
        status.resize(self.n + self.m, ColStatus::Basic);
        if status.iter().filter(|&&s| s == ColStatus::Basic).count() != self.m {
            return false;
        }
        self.status = status;
        self.head.clear();
        self.pos.iter_mut().for_each(|p| *p = NONE);
        for j in 0..self.n + self.m {
            if self.status[j] == ColStatus::Basic {
                self.pos[j] = self.head.len();
                self.head.push(j);
            } else {
                self.place_nonbasic(j, self.status[j]);
            }
        }
        true
    }

    fn slack_basis(&mut self) {
        self.head.clear();
        self.pos.iter_mut().for_each(|p| *p = NONE);
        for j in 0..self.n {
            self.place_nonbasic(j, ColStatus::AtLower);
        }
        for i in 0..self.m {
            let j = self.n + i;
            self.status[j] = ColStatus::Basic;
            self.pos[j] = i;
            self.head.push(j);
        }
        self.binv.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.m {
            self.binv[i * self.m + i] = -1.0;
        }
        self.since_refactor = 0;
    }

    /// Puts nonbasic column `j` on the requested bound, or the nearest finite
    /// one when the requested bound is infinite.
    fn place_nonbasic(&mut self, j: usize, want: ColStatus) {
        let (lo, hi) = (self.lo[j], self.hi[j]);
        let st = match want {
            ColStatus::AtUpper if hi.is_finite() => ColStatus::AtUpper,
            _ if lo.is_finite() => ColStatus::AtLower,
            _ if hi.is_finite() => ColStatus::AtUpper,
            _ => ColStatus::Zero,
        };
        self.status[j] = st;
        self.x[j] = match st {
            ColStatus::AtLower => lo,
            ColStatus::AtUpper => hi,
            _ => 0.0,
        };
    }

    fn col_dot(&self, j: usize, v: &[f64]) -> f64 {
        if j < self.n {
            self.p.cols[j].iter().map(|&(r, a)| a * v[r]).sum()
        } else {
            -v[j - self.n]
        }
    }

    /// `B^-1 a_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m];
        if j < self.n {
            for &(k, a) in &self.p.cols[j] {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += self.binv[i * m + k] * a;
                }
            }
        } else {
            let k = j - self.n;
            for (i, o) in out.iter_mut().enumerate() {
                *o = -self.binv[i * m + k];
            }
        }
        out
    }

    /// Inverts the current basis from scratch. Returns false if singular.
    /// Rebuilds `B^-1` from the basis heading. Logical columns are unit
    /// vectors, so only the block of structural columns on the rows without a
    /// basic logical needs a dense inverse.
    fn refactor(&mut self) -> bool {
        let (m, n) = (self.m, self.n);
        let mut logical_pos = vec![usize::MAX; m];
        let mut structural = Vec::new();
        for (i, &j) in self.head.iter().enumerate() {
            if j >= n {
                logical_pos[j - n] = i;
            } else {
                structural.push(i);
            }
        }
        let rows: Vec<usize> = (0..m).filter(|&r| logical_pos[r] == usize::MAX).collect();
        let k = structural.len();
        if rows.len() != k {
            return false;
        }
        let mut row_idx = vec![usize::MAX; m];
        for (t, &r) in rows.iter().enumerate() {
            row_idx[r] = t;
        }
        let mut block = vec![0.0; k * k];
        for (u, &i) in structural.iter().enumerate() {
            for &(r, v) in &self.p.cols[self.head[i]] {
                if row_idx[r] != usize::MAX {
                    block[row_idx[r] * k + u] += v;
                }
            }
        }
        let Some(block_inv) = invert(block, k) else {
            return false;
        };
        let mut inv = vec![0.0; m * m];
        for (u, &i) in structural.iter().enumerate() {
            for (t, &r) in rows.iter().enumerate() {
                inv[i * m + r] = block_inv[u * k + t];
            }
        }
        // a basic logical on row r takes x_r = A_r x_S - v_r
        for (u, &i) in structural.iter().enumerate() {
            for &(r, v) in &self.p.cols[self.head[i]] {
                let p = logical_pos[r];
                if p != usize::MAX {
                    for (t, &c) in rows.iter().enumerate() {
                        inv[p * m + c] += v * block_inv[u * k + t];
                    }
                }
            }
        }
        for (r, &p) in logical_pos.iter().enumerate() {
            if p != usize::MAX {
                inv[p * m + r] -= 1.0;
            }
        }
        self.binv = inv;
        self.since_refactor = 0;
        true
    }

    fn refactor_or_reset(&mut self) {
        if !self.refactor() {
            log::debug!("singular basis after {} iterations, restarting from slack basis", self.iters);
            self.slack_basis();
        }
        self.compute_basics();
    }

    /// Recomputes basic values from the nonbasic ones: `x_B = -B^-1 N x_N`.
    fn compute_basics(&mut self) {
        let m = self.m;
        let mut v = vec![0.0; m];
        for j in 0..self.n + self.m {
            if self.status[j] == ColStatus::Basic || self.x[j] == 0.0 {
                continue;
            }
            if j < self.n {
                for &(r, a) in &self.p.cols[j] {
                    v[r] += a * self.x[j];
                }
            } else {
                v[j - self.n] -= self.x[j];
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            let val: f64 = row.iter().zip(&v).map(|(b, w)| b * w).sum();
            self.x[self.head[i]] = -val;
        }
    }

    /// Phase-1 cost of each basis position, or `None` when the basis is
    /// primal feasible.
    fn infeasibility_costs(&self) -> Option<Vec<f64>> {
        let tol = self.limits.tol_feas;
        let mut any = false;
        let costs = self
            .head
            .iter()
            .map(|&j| {
                if self.x[j] < self.lo[j] - tol {
                    any = true;
                    -1.0
                } else if self.x[j] > self.hi[j] + tol {
                    any = true;
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        any.then_some(costs)
    }

    fn phase_cost(&self, j: usize, phase1: bool) -> f64 {
        if phase1 || j >= self.n {
            0.0
        } else {
            self.p.cost[j]
        }
    }

    fn duals(&self, cb: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &c) in cb.iter().enumerate() {
            if c != 0.0 {
                for (yk, b) in y.iter_mut().zip(&self.binv[i * m..(i + 1) * m]) {
                    *yk += c * b;
                }
            }
        }
        y
    }

    /// Chooses an entering column and its direction (+1 increase, -1 decrease).
    fn price(&self, y: &[f64], phase1: bool, bland: bool) -> Option<(usize, f64)> {
        let tol = self.limits.tol_opt;
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.n + self.m {
            if self.status[j] == ColStatus::Basic || self.rejected[j] || self.lo[j] == self.hi[j] {
                continue;
            }
            let d = self.phase_cost(j, phase1) - self.col_dot(j, y);
            let dir = match self.status[j] {
                ColStatus::AtLower if d < -tol => 1.0,
                ColStatus::AtUpper if d > tol => -1.0,
                ColStatus::Zero if d.abs() > tol => -d.signum(),
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            let score = match self.limits.pivot_rule {
                PivotRule::Devex => d * d / self.weights[j],
                PivotRule::Dantzig => d.abs(),
            };
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((j, dir, score));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn ratio_test(&self, q: usize, dir: f64, alpha: &[f64], bland: bool) -> Step {
        let htol = if bland { 0.0 } else { HARRIS_TOL };
        let tol = self.limits.tol_feas;
        // (position, exact ratio, relaxed ratio, leaves at upper)
        let mut cands: Vec<(usize, f64, f64, bool)> = Vec::new();
        for (i, &a) in alpha.iter().enumerate() {
            let delta = -dir * a;
            if delta.abs() <= PIVOT_TOL {
                continue;
            }
            let j = self.head[i];
            let (v, lo, hi) = (self.x[j], self.lo[j], self.hi[j]);
            if v < lo - tol {
                if delta > 0.0 {
                    let r = (lo - v) / delta;
                    cands.push((i, r, r, false));
                }
            } else if v > hi + tol {
                if delta < 0.0 {
                    let r = (v - hi) / -delta;
                    cands.push((i, r, r, true));
                }
            } else if delta > 0.0 && hi.is_finite() {
                cands.push((i, ((hi - v) / delta).max(0.0), ((hi + htol - v) / delta).max(0.0), true));
            } else if delta < 0.0 && lo.is_finite() {
                cands.push((i, ((v - lo) / -delta).max(0.0), ((v - lo + htol) / -delta).max(0.0), false));
            }
        }
        let range = self.hi[q] - self.lo[q];
        let t_max = cands.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        if range.is_finite() && range <= t_max {
            return Step::Flip { t: range };
        }
        if cands.is_empty() {
            return Step::Unbounded;
        }
        let chosen = if bland {
            let t_min = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            cands
                .iter()
                .filter(|c| c.1 <= t_min + 1e-12)
                .min_by_key(|c| self.head[c.0])
                .unwrap()
        } else {
            let mut best = None::<&(usize, f64, f64, bool)>;
            for c in cands.iter().filter(|c| c.1 <= t_max) {
                if best.is_none_or(|b| alpha[c.0].abs() > alpha[b.0].abs()) {
                    best = Some(c);
                }
            }
            best.unwrap()
        };
        Step::Pivot { row: chosen.0, t: chosen.1, to_upper: chosen.3 }
    }

    fn pivot(&mut self, q: usize, r: usize, alpha: &[f64]) {
        let m = self.m;
        let leave = self.head[r];
        if self.limits.pivot_rule == PivotRule::Devex {
            let row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
            let wq = self.weights[q];
            let aq = alpha[r];
            for j in 0..self.n + self.m {
                if self.status[j] == ColStatus::Basic || j == q {
                    continue;
                }
                let arj = self.col_dot(j, &row);
                if arj != 0.0 {
                    let ratio = arj / aq;
                    self.weights[j] = self.weights[j].max(ratio * ratio * wq);
                }
            }
            self.weights[leave] = (wq / (aq * aq)).max(1.0);
        }
        let piv = alpha[r];
        for k in 0..m {
            self.binv[r * m + k] /= piv;
        }
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (prow, after) = rest.split_at_mut(m);
        for (i, chunk) in before.chunks_mut(m).chain(after.chunks_mut(m)).enumerate() {
            let ai = alpha[if i < r { i } else { i + 1 }];
            if ai != 0.0 {
                for (c, p) in chunk.iter_mut().zip(prow.iter()) {
                    *c -= ai * p;
                }
            }
        }
        self.head[r] = q;
        self.pos[q] = r;
        self.pos[leave] = NONE;
        self.status[q] = ColStatus::Basic;
        self.since_refactor += 1;
    }

    pub(super) fn run(mut self) -> LpResult {
        let start = Instant::now();
        let mut fresh = true;
        let mut last_phase1 = None;
        let status = loop {
            if self.iters >= self.limits.max_iters {
                break LpStatus::IterationLimit;
            }
            if self.iters.is_multiple_of(100)
                && self.limits.time_limit.is_some_and(|t| start.elapsed() >= t)
            {
                break LpStatus::IterationLimit;
            }
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor_or_reset();
            }
            let infeas = self.infeasibility_costs();
            let phase1 = infeas.is_some();
            if last_phase1 != Some(phase1) {
                self.weights.iter_mut().for_each(|w| *w = 1.0);
                last_phase1 = Some(phase1);
            }
            let cb = match infeas {
                Some(c) => c,
                None => self.head.iter().map(|&j| self.phase_cost(j, false)).collect(),
            };
            let y = self.duals(&cb);
            let bland = self.degenerate_run >= self.limits.bland_after;
            let Some((q, dir)) = self.price(&y, phase1, bland) else {
                if !fresh || self.rejected.iter().any(|&r| r) {
                    // Confirm on a freshly factored basis before concluding.
                    self.refactor_or_reset();
                    self.rejected.iter_mut().for_each(|r| *r = false);
                    fresh = true;
                    if self.price_after_refresh() {
                        continue;
                    }
                }
                break if phase1 { LpStatus::Infeasible } else { LpStatus::Optimal };
            };
            let alpha = self.ftran(q);
            match self.ratio_test(q, dir, &alpha, bland) {
                Step::Unbounded if !phase1 => break LpStatus::Unbounded,
                Step::Unbounded => {
                    self.rejected[q] = true;
                    continue;
                }
                Step::Flip { t } => {
                    for (i, &a) in alpha.iter().enumerate() {
                        self.x[self.head[i]] -= dir * t * a;
                    }
                    let to = if dir > 0.0 { ColStatus::AtUpper } else { ColStatus::AtLower };
                    self.place_nonbasic(q, to);
                    self.degenerate_run = 0;
                }
                Step::Pivot { row, t, to_upper } => {
                    if alpha[row].abs() < 1e-7 && self.since_refactor > 0 {
                        // Tiny pivot on a stale factorization: refresh and retry.
                        self.refactor_or_reset();
                        fresh = true;
                        continue;
                    }
                    for (i, &a) in alpha.iter().enumerate() {
                        self.x[self.head[i]] -= dir * t * a;
                    }
                    self.x[q] += dir * t;
                    let leave = self.head[row];
                    self.pivot(q, row, &alpha);
                    self.place_nonbasic(leave, if to_upper { ColStatus::AtUpper } else { ColStatus::AtLower });
                    if t <= 1e-12 {
                        self.degenerate_run += 1;
                    } else {
                        self.degenerate_run = 0;
                    }
                }
            }
            self.rejected.iter_mut().for_each(|r| *r = false);
            fresh = false;
            self.iters += 1;
        };
        let point = self.x[..self.n].to_vec();
        let objective = self.p.objective_value(&point);
        LpResult {
            status,
            objective,
            point,
            iterations: self.iters,
            basis: Basis {
                cols: self.status[..self.n].to_vec(),
                rows: self.status[self.n..].to_vec(),
            },
        }
    }

    /// After a refresh, whether pricing finds an improving column again.
    fn price_after_refresh(&self) -> bool {
        let infeas = self.infeasibility_costs();
        let phase1 = infeas.is_some();
        let cb = match infeas {
            Some(c) => c,
            None => self.head.iter().map(|&j| self.phase_cost(j, false)).collect(),
        };
        let y = self.duals(&cb);
        self.price(&y, phase1, false).is_some()
    }
}

/// Gauss-Jordan inverse of the row-major `k x k` matrix with partial pivoting.
fn invert(mut a: Vec<f64>, k: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; k * k];
    for i in 0..k {
        inv[i * k + i] = 1.0;
    }
    for c in 0..k {
        let piv = (c..k).max_by(|&r, &s| a[r * k + c].abs().total_cmp(&a[s * k + c].abs()))?;
        if a[piv * k + c].abs() < SINGULAR_TOL {
            return None;
        }
        if piv != c {
            for j in 0..k {
                a.swap(piv * k + j, c * k + j);
                inv.swap(piv * k + j, c * k + j);
            }
        }
        let d = 1.0 / a[c * k + c];
        for j in 0..k {
            a[c * k + j] *= d;
            inv[c * k + j] *= d;
        }
        for r in 0..k {
            let f = a[r * k + c];
            if r == c || f == 0.0 {
                continue;
            }
            for j in c..k {
                a[r * k + j] -= f * a[c * k + j];
            }
            for j in 0..k {
                inv[r * k + j] -= f * inv[c * k + j];
            }
        }
    }
    Some(inv)
}
