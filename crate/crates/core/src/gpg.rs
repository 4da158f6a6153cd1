//! Two-stage pulse-group search. Stage 1 optimizes relaxed kick multiplicities
//! at fixed uniform group times and integerizes them; stage 2 refines the
//! group timings of each integer candidate under the minimum-spacing rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gatekernel::{evaluate, GateMetrics, KickBasis, ThermalState, EMPTY_INFIDELITY};
use crate::optim::{adam, lbfgs, AdamOptions, LbfgsOptions};
use crate::sequence::{Kick, KickSequence, RepRate};
use crate::trap::{TrapConfig, TrapRecord};

/// Candidates kept after integerization.
pub const TOP_K: usize = 16;
/// Fractions of `SearchConfig::sparsity` assigned to successive multistarts.
const SPARSITY_LEVELS: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Number of uniformly spaced groups M.
    pub n_groups: usize,
    /// Target gate time in units of 1/ω₀.
    pub gate_time: f64,
    pub rep_rate: RepRate,
    pub multistarts: usize,
    pub seed: u64,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub z_bound: i32,
    pub fidelity_target: f64,
    /// Below this fidelity `solve_gate` reports [`Error::NoSolution`].
    pub fidelity_floor: f64,
    /// Largest weight of the Σ|z| sparsity term; multistarts cycle through
    /// fractions of it so that low-𝒩 candidates are explored.
    pub sparsity: f64,
    pub thermal: ThermalState,
}

impl SearchConfig {
    /// Defaults with M = ⌈4 t_g Ω/2π⌉ groups.
    pub fn new(trap: &TrapConfig, gate_time: f64, rep_rate: RepRate, seed: u64) -> Self {
        Self {
            n_groups: default_groups(gate_time, trap.rf_ratio),
            gate_time,
            rep_rate,
            multistarts: 16,
            seed,
            stage1_iters: 1500,
            stage2_iters: 1000,
            z_bound: 6,
            fidelity_target: 0.999,
            fidelity_floor: 0.9,
            sparsity: 0.02,
            thermal: ThermalState::ground(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_groups < 2 {
            return bad(format!("n_groups must be at least 2, got {}", self.n_groups));
        }
        if self.multistarts < 1 || self.stage1_iters < 1 || self.stage2_iters < 1 {
            return bad("search budgets must be at least 1".into());
        }
        if self.z_bound < 1 {
            return bad(format!("z_bound must be at least 1, got {}", self.z_bound));
        }
        if !(self.sparsity >= 0.0 && self.sparsity.is_finite()) {
            return bad(format!("sparsity must be non-negative, got {}", self.sparsity));
        }
        if !(self.gate_time > 0.0 && self.gate_time.is_finite()) {
            return bad(format!("gate time must be positive, got {}", self.gate_time));
        }
        if let RepRate::Finite(f) = self.rep_rate {
            if !(f > 0.0 && f.is_finite()) {
                return bad(format!("repetition rate must be positive, got {f}"));
            }
        }
        Ok(())
    }

    /// Uniform group times `t_g · i/(M − 1)`.
    pub fn uniform_times(&self) -> Vec<f64> {
        let m = self.n_groups;
        (0..m).map(|i| self.gate_time * i as f64 / (m - 1) as f64).collect()
    }
}

pub fn default_groups(gate_time: f64, rf_ratio: f64) -> usize {
    ((4.0 * gate_time * rf_ratio / std::f64::consts::TAU).ceil() as usize).max(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub multistarts: usize,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub n_groups: usize,
    pub z_bound: i32,
    pub fidelity_target: f64,
    /// Stage-1 multistart the candidate came from.
    pub start_index: usize,
    pub version: String,
    /// Conventions the metrics were computed under.
    pub conventions: Vec<String>,
}

pub fn conventions() -> Vec<String> {
    [
        "phase pairs over all earlier kicks (m < n)",
        "dY pairs sin with kappa_s and cos with kappa_c",
        "rho is the constant mode Wronskian Im(u* du)/omega",
        "eta_mode = eta * sqrt(omega_cm / omega_mode)",
        "phase_error = |theta| - pi/4",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSolution {
    pub sequence: KickSequence,
    pub metrics: GateMetrics,
    pub trap: TrapRecord,
    pub thermal: ThermalState,
    pub provenance: Provenance,
}

impl GateSolution {
    pub fn fidelity(&self) -> f64 {
        self.metrics.fidelity()
    }

    /// Recompute metrics from the stored sequence and trap.
    pub fn reevaluate(&self) -> Result<GateMetrics> {
        let trap = TrapConfig::from_record(&self.trap)?;
        self.sequence.validate()?;
        Ok(evaluate(&self.sequence, &trap, &self.thermal))
    }
}

/// An integer candidate from stage 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub z: Vec<i32>,
    pub cost: f64,
    pub start_index: usize,
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn as_weights(z: &[i32]) -> Vec<f64> {
    z.iter().map(|&v| v as f64).collect()
}

/// One round-and-greedy pass: try ±1 on each coordinate, keep improvements.
fn integerize(basis: &KickBasis, w: &[f64], z_bound: i32) -> (Vec<i32>, f64) {
    let mut z: Vec<i32> = w.iter().map(|v| (v.round() as i32).clamp(-z_bound, z_bound)).collect();
    let mut wz = as_weights(&z);
    let mut best = basis.cost(&wz);
    for i in 0..z.len() {
        let orig = z[i];
        let mut keep = orig;
        for cand in [orig + 1, orig - 1] {
            if cand.abs() > z_bound {
                continue;
            }
            wz[i] = cand as f64;
            let c = basis.cost(&wz);
            if c < best {
                best = c;
                keep = cand;
            }
        }
        z[i] = keep;
        wz[i] = keep as f64;
    }
    (z, best)
}

/// One stage-1 multistart: relaxed descent, annealed integer penalty, rounding.
fn stage1_start(basis: &KickBasis, cfg: &SearchConfig, index: usize) -> Candidate {
    let m = basis.len();
    let mut rng = rng_for(cfg.seed, index as u64);
    let bound = cfg.z_bound as f64;
    let scale = rng.random_range(0.25..1.0) * bound;
    let x0: Vec<f64> = (0..m).map(|_| rng.random_range(-scale..scale)).collect();

    let lambda = cfg.sparsity * SPARSITY_LEVELS[index % SPARSITY_LEVELS.len()];
    // smooth |w| keeps the gradient defined at zero
    let objective = |x: &[f64], g: &mut [f64], strength: f64| {
        let mut c = basis.cost_grad_weights(x, g).cost;
        for (gi, &xi) in g.iter_mut().zip(x) {
            let r = (xi * xi + 1e-2).sqrt();
            c += lambda * r;
            *gi += lambda * xi / r;
            if strength > 0.0 {
                let (s, co) = (std::f64::consts::PI * xi).sin_cos();
                c += strength * s * s;
                *gi += strength * 2.0 * std::f64::consts::PI * s * co;
            }
        }
        c
    };

    let relaxed_iters = cfg.stage1_iters.div_ceil(2);
    let anneal_iters = cfg.stage1_iters - relaxed_iters;
    let opts = AdamOptions { iterations: relaxed_iters, clip: bound, lr: 0.05, ..Default::default() };
    let (mut x, _) = adam(&mut |x: &[f64], g: &mut [f64]| objective(x, g, 0.0), &x0, &opts);

    if anneal_iters > 0 {
        // ramp a sin² penalty that pulls weights towards integers
        let stages = 5;
        let mut strength = 1e-4;
        for _ in 0..stages {
            let opts = AdamOptions { iterations: anneal_iters.div_ceil(stages), clip: bound, lr: 0.02, ..Default::default() };
            x = adam(&mut |x: &[f64], g: &mut [f64]| objective(x, g, strength), &x, &opts).0;
            strength *= 4.0;
        }
    }
    let (z, cost) = integerize(basis, &x, cfg.z_bound);
    Candidate { z, cost, start_index: index }
}

/// Stage 1: the integer candidate of every multistart, in start order.
pub fn stage1_all(trap: &TrapConfig, cfg: &SearchConfig) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    let times = cfg.uniform_times();
    let basis = KickBasis::new(trap, &cfg.thermal, &times, cfg.gate_time);
    Ok((0..cfg.multistarts).into_par_iter().map(|i| stage1_start(&basis, cfg, i)).collect())
}

/// Stage 1 followed by candidate selection.
pub fn stage1_search(trap: &TrapConfig, cfg: &SearchConfig) -> Result<Vec<Candidate>> {
    Ok(select_candidates(stage1_all(trap, cfg)?))
}

/// Distinct candidates below the empty-gate cost, best first, at most [`TOP_K`].
fn select_candidates(mut all: Vec<Candidate>) -> Vec<Candidate> {
    all.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.start_index.cmp(&b.start_index)));
    let mut out: Vec<Candidate> = Vec::new();
    for c in all {
        if c.cost >= EMPTY_INFIDELITY || out.iter().any(|o| o.z == c.z) {
            continue;
        }
        out.push(c);
        if out.len() == TOP_K {
            break;
        }
    }
    out
}

/// Timing layout of the nonzero groups in terms of non-negative gaps.
struct GapLayout {
    z: Vec<i32>,
    /// Length occupied by each group's own unit kicks.
    lengths: Vec<f64>,
    separation: f64,
    slack: f64,
    gate_time: f64,
    rep_rate: RepRate,
}

impl GapLayout {
    fn new(z: Vec<i32>, gate_time: f64, rep_rate: RepRate) -> Result<Self> {
        let spacing = rep_rate.spacing();
        let n_sdk: u64 = z.iter().map(|v| v.unsigned_abs() as u64).sum();
        if n_sdk as f64 * spacing > gate_time {
            return Err(Error::InfeasibleSpacing { n_sdk, spacing, gate_time });
        }
        let lengths: Vec<f64> = z.iter().map(|v| (v.unsigned_abs().max(1) - 1) as f64 * spacing).collect();
        let separation = if rep_rate.is_finite() { spacing } else { 1e-9 * gate_time };
        let used = lengths.iter().sum::<f64>() + separation * (z.len().saturating_sub(1)) as f64;
        let slack = gate_time - used;
        if slack < 0.0 {
            return Err(Error::InfeasibleSpacing { n_sdk, spacing, gate_time });
        }
        Ok(Self { z, lengths, separation, slack, gate_time, rep_rate })
    }

    fn groups(&self) -> usize {
        self.z.len()
    }

    /// Gap fractions `p_i²/Σp²` scaled by the slack; `p` has `groups + 1` entries.
    fn starts(&self, p: &[f64]) -> Vec<f64> {
        let total: f64 = p.iter().map(|v| v * v).sum();
        let mut t = 0.0;
        let mut out = Vec::with_capacity(self.groups());
        for i in 0..self.groups() {
            if i > 0 {
                t += self.lengths[i - 1] + self.separation;
            }
            t += self.slack * p[i] * p[i] / total;
            out.push(t);
        }
        out
    }

    /// Inverse of [`starts`] for desired start times, clamped to feasibility.
    fn params_for(&self, desired: &[f64]) -> Vec<f64> {
        let floor = 1e-6 * self.slack.max(1e-300);
        let mut gaps = Vec::with_capacity(self.groups() + 1);
        let mut end = 0.0;
        for i in 0..self.groups() {
            let base = if i == 0 { 0.0 } else { end + self.separation };
            let gap = (desired[i] - base).max(floor);
            gaps.push(gap);
            end = base + gap + self.lengths[i];
        }
        gaps.push((self.gate_time - end).max(floor));
        let total: f64 = gaps.iter().sum();
        gaps.iter().map(|g| (g / total).sqrt()).collect()
    }

    fn impulses(&self, starts: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
        let mut times = Vec::new();
        let mut weights = Vec::new();
        let mut owner = Vec::new();
        let s = self.rep_rate.spacing();
        for (g, (&t, &z)) in starts.iter().zip(&self.z).enumerate() {
            if self.rep_rate.is_finite() {
                for r in 0..z.unsigned_abs() {
                    times.push(t + r as f64 * s);
                    weights.push(z.signum() as f64);
                    owner.push(g);
                }
            } else {
                times.push(t);
                weights.push(z as f64);
                owner.push(g);
            }
        }
        (times, weights, owner)
    }

    fn sequence(&self, starts: &[f64]) -> KickSequence {
        KickSequence {
            kicks: starts.iter().zip(&self.z).map(|(&t, &z)| Kick { t, z }).collect(),
            gate_time: self.gate_time,
            rep_rate: self.rep_rate,
        }
    }

    fn cost_grad(&self, trap: &TrapConfig, thermal: &ThermalState, p: &[f64], grad: &mut [f64]) -> f64 {
        let starts = self.starts(p);
        let (times, weights, owner) = self.impulses(&starts);
        let basis = KickBasis::new(trap, thermal, &times, self.gate_time);
        let mut gt = vec![0.0; times.len()];
        let cost = basis.cost_grad_times(&weights, &mut gt).cost;
        let g = self.groups();
        let mut g_start = vec![0.0; g];
        for (k, &o) in owner.iter().enumerate() {
            g_start[o] += gt[k];
        }
        // gap j shifts every start i ≥ j
        let mut g_gap = vec![0.0; g + 1];
        let mut acc = 0.0;
        for i in (0..g).rev() {
            acc += g_start[i];
            g_gap[i] = acc;
        }
        let total: f64 = p.iter().map(|v| v * v).sum();
        let mean: f64 = p.iter().zip(&g_gap).map(|(pi, gi)| pi * pi * gi).sum::<f64>() / total;
        for j in 0..=g {
            grad[j] = 2.0 * self.slack * p[j] / total * (g_gap[j] - mean);
        }
        cost
    }
}

fn provenance(cfg: &SearchConfig, start_index: usize) -> Provenance {
    Provenance {
        seed: cfg.seed,
        multistarts: cfg.multistarts,
        stage1_iters: cfg.stage1_iters,
        stage2_iters: cfg.stage2_iters,
        n_groups: cfg.n_groups,
        z_bound: cfg.z_bound,
        fidelity_target: cfg.fidelity_target,
        start_index,
        version: env!("CARGO_PKG_VERSION").to_string(),
        conventions: conventions(),
    }
}

/// Stage 2: refine the timings of one integer vector.
pub fn stage2_refine(trap: &TrapConfig, z: &[i32], t_init: &[f64], cfg: &SearchConfig, start_index: usize) -> Result<GateSolution> {
    if z.len() != t_init.len() {
        return Err(Error::InvalidParameter("z and initial times differ in length".into()));
    }
    let (gz, gt): (Vec<i32>, Vec<f64>) = z.iter().zip(t_init).filter(|(v, _)| **v != 0).map(|(v, t)| (*v, *t)).unzip();
    let finish = |sequence: KickSequence| -> Result<GateSolution> {
        sequence.validate()?;
        let metrics = evaluate(&sequence, trap, &cfg.thermal);
        Ok(GateSolution { sequence, metrics, trap: trap.record(), thermal: cfg.thermal, provenance: provenance(cfg, start_index) })
    };
    if gz.is_empty() {
        return finish(KickSequence { kicks: Vec::new(), gate_time: cfg.gate_time, rep_rate: cfg.rep_rate });
    }
    let layout = GapLayout::new(gz, cfg.gate_time, cfg.rep_rate)?;
    let p0 = layout.params_for(&gt);
    let mut obj = |p: &[f64], g: &mut [f64]| layout.cost_grad(trap, &cfg.thermal, p, g);
    let res = lbfgs(&mut obj, &p0, &LbfgsOptions { max_iter: cfg.stage2_iters, ..Default::default() });
    let before = finish(layout.sequence(&layout.starts(&p0)))?;
    let after = finish(layout.sequence(&layout.starts(&res.x)))?;
    Ok(if after.metrics.infidelity <= before.metrics.infidelity { after } else { before })
}

/// Best solution and the ranked list it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub best: GateSolution,
    pub ranked: Vec<GateSolution>,
}

/// Passing solutions first, by fewest kicks then infidelity; the rest by infidelity.
fn rank(mut sols: Vec<GateSolution>, target: f64) -> Vec<GateSolution> {
    sols.sort_by(|a, b| {
        let (pa, pb) = (a.fidelity() >= target, b.fidelity() >= target);
        let by_n = a.metrics.n_sdk.cmp(&b.metrics.n_sdk);
        let by_inf = a.metrics.infidelity.total_cmp(&b.metrics.infidelity);
        let primary = match (pa, pb) {
            (true, true) => by_n.then(by_inf),
            (false, false) => by_inf.then(by_n),
            _ => pb.cmp(&pa),
        };
        primary.then(a.provenance.start_index.cmp(&b.provenance.start_index))
    });
    sols
}

/// Run both stages and rank the refined candidates, without applying the floor.
pub fn solve_gate_ranked(trap: &TrapConfig, cfg: &SearchConfig) -> Result<SolveOutcome> {
    let candidates = stage1_search(trap, cfg)?;
    if candidates.is_empty() {
        return Err(Error::NoCandidates { ceiling: EMPTY_INFIDELITY });
    }
    let times = cfg.uniform_times();
    let refined: Vec<Result<GateSolution>> =
        candidates.par_iter().map(|c| stage2_refine(trap, &c.z, &times, cfg, c.start_index)).collect();
    let mut sols = Vec::with_capacity(refined.len());
    let mut first_err = None;
    for r in refined {
        match r {
            Ok(s) => sols.push(s),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if sols.is_empty() {
        return Err(first_err.unwrap_or(Error::NoCandidates { ceiling: EMPTY_INFIDELITY }));
    }
    let ranked = rank(sols, cfg.fidelity_target);
    Ok(SolveOutcome { best: ranked[0].clone(), ranked })
}

/// Search and return the best solution, failing if it misses the fidelity floor.
pub fn solve_gate(trap: &TrapConfig, cfg: &SearchConfig) -> Result<SolveOutcome> {
    let out = solve_gate_ranked(trap, cfg)?;
    let best = out.ranked.iter().map(|s| s.fidelity()).fold(f64::NEG_INFINITY, f64::max);
    if best < cfg.fidelity_floor {
        return Err(Error::NoSolution { floor: cfg.fidelity_floor, best });
    }
    Ok(out)
}

/// Sweep axis for [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Gate time in units of 1/ω₀.
    GateTime,
    /// Repetition rate in units of ω₀/2π.
    RepRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub q_x: f64,
    pub infidelity: Option<f64>,
    pub n_sdk: Option<u64>,
    pub error: Option<String>,
}

/// Independent searches over a grid for each trap; failed points are kept with their error.
pub fn sweep(traps: &[TrapConfig], axis: SweepAxis, grid: &[f64], base: &SearchConfig) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(traps.len() * grid.len());
    for trap in traps {
        for &v in grid {
            let mut cfg = base.clone();
            match axis {
                SweepAxis::GateTime => {
                    cfg.gate_time = v;
                    cfg.n_groups = default_groups(v, trap.rf_ratio);
                }
                SweepAxis::RepRate => cfg.rep_rate = RepRate::Finite(v),
            }
            let row = match solve_gate_ranked(trap, &cfg) {
                Ok(out) => SweepRow {
                    value: v,
                    q_x: trap.q_x,
                    infidelity: Some(out.best.metrics.infidelity),
                    n_sdk: Some(out.best.metrics.n_sdk),
                    error: None,
                },
                Err(e) => SweepRow { value: v, q_x: trap.q_x, infidelity: None, n_sdk: None, error: Some(e.to_string()) },
            };
            rows.push(row);
        }
    }
    Ok(rows)
}
