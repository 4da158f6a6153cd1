//! Brute-force verification of the gate kernel: integrate the driven mode
//! equations with impulsive state-dependent kicks for every two-qubit basis
//! state and accumulate the action phase along each trajectory.
//!
//! Nothing here uses the Floquet closed forms; only the spring constant λ(t)
//! of each calibrated mode enters.

use std::f64::consts::{FRAC_PI_4, SQRT_2};

use crate::error::{Error, Result};
use crate::gatekernel::{infidelity, GateMetrics, ModeDisplacement, ThermalState};
use crate::ode::{Dopri5, OdeOptions};
use crate::sequence::{Impulse, KickSequence};
use crate::trap::{ModeLabel, ModeSpec, TrapConfig};

/// Default relative tolerance of the oracle integrator.
pub const ORACLE_RTOL: f64 = 1e-12;
/// Allowed disagreement between the two action-phase routes.
pub const ROUTE_TOL: f64 = 1e-8;

/// Spin configurations `(σ_A, σ_B)` in the σ_z ⊗ σ_z basis.
pub const BRANCHES: [(i8, i8); 4] = [(1, 1), (-1, -1), (1, -1), (-1, 1)];

/// Result of integrating one mode from `t_start` to the gate time.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeRun {
    pub x_end: f64,
    pub y_end: f64,
    /// ∫ L dt by quadrature.
    pub phase_quadrature: f64,
    /// Σ over kick-free pieces of [XY/2].
    pub phase_boundary: f64,
    /// `(X, Y, ∫L)` at each sample time.
    pub samples: Vec<[f64; 3]>,
    /// Momentum jumps applied, in order.
    pub jumps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRun {
    pub spins: (i8, i8),
    pub mode: ModeLabel,
    /// `b^A σ_A + b^B σ_B`.
    pub coupling: f64,
    pub kicked: ModeRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub max_error_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t_start: f64,
    pub gate_time: f64,
    pub sample_times: Vec<f64>,
    /// Free evolution per mode `[CM, BR]` from the same initial conditions.
    pub free: [ModeRun; 2],
    /// One entry per (branch, mode) with non-zero coupling.
    pub runs: Vec<BranchRun>,
    pub stats: IntegratorStats,
}

fn mode_index(label: ModeLabel) -> usize {
    match label {
        ModeLabel::Cm => 0,
        ModeLabel::Br => 1,
    }
}

fn coupling(mode: &ModeSpec, spins: (i8, i8)) -> f64 {
    mode.couplings.0 * spins.0 as f64 + mode.couplings.1 * spins.1 as f64
}

struct RunSpec<'a> {
    mode: &'a ModeSpec,
    impulses: &'a [Impulse],
    /// Jump per unit weight; zero for free evolution.
    jump: f64,
    x0: f64,
    y0: f64,
    t_start: f64,
    t_end: f64,
    samples: &'a [f64],
    rtol: f64,
}

fn run_mode(spec: &RunSpec, stats: &mut IntegratorStats) -> Result<ModeRun> {
    let m = spec.mode;
    let w = m.omega;
    let p = m.params;
    let rhs = |t: f64, y: &[f64; 3]| {
        let l = p.lambda(t);
        [w * y[1], -l * y[0] / w, 0.5 * w * y[1] * y[1] - 0.5 * l * y[0] * y[0] / w]
    };
    let h_max = std::f64::consts::TAU / p.rf_ratio / 50.0;
    let mut stepper = Dopri5::<3>::new(OdeOptions::new(spec.rtol, h_max));

    // merge kick and sample events in time order; at equal times kicks go first
    let kicks: Vec<Impulse> = if spec.jump == 0.0 { Vec::new() } else { spec.impulses.to_vec() };
    let mut state = [spec.x0, spec.y0, 0.0];
    let mut t = spec.t_start;
    let mut piece_start = (state[0], state[1]);
    let mut boundary = 0.0;
    let mut samples = Vec::with_capacity(spec.samples.len());
    let mut jumps = Vec::with_capacity(kicks.len());
    let (mut ik, mut is) = (0, 0);
    loop {
        let next_kick = kicks.get(ik).map(|k| k.t);
        let next_sample = spec.samples.get(is).copied();
        let (t_next, is_kick) = match (next_kick, next_sample) {
            (Some(a), Some(b)) if a <= b => (a, true),
            (Some(a), None) => (a, true),
            (_, Some(b)) => (b, false),
            (None, None) => break,
        };
        if t_next > t {
            state = stepper.advance(&rhs, t, state, t_next)?;
            t = t_next;
        }
        if is_kick {
            boundary += 0.5 * (state[0] * state[1] - piece_start.0 * piece_start.1);
            let dy = spec.jump * kicks[ik].weight;
            state[1] += dy;
            jumps.push(dy);
            piece_start = (state[0], state[1]);
            ik += 1;
        } else {
            samples.push(state);
            is += 1;
        }
    }
    if spec.t_end > t {
        state = stepper.advance(&rhs, t, state, spec.t_end)?;
    }
    boundary += 0.5 * (state[0] * state[1] - piece_start.0 * piece_start.1);
    stats.accepted += stepper.stats.accepted;
    stats.rejected += stepper.stats.rejected;
    stats.max_error_ratio = stats.max_error_ratio.max(stepper.stats.max_error_ratio);
    Ok(ModeRun {
        x_end: state[0],
        y_end: state[1],
        phase_quadrature: state[2],
        phase_boundary: boundary,
        samples,
        jumps,
    })
}

/// Integrate all spin branches. `initial` holds `(X₀, Y₀)` per mode `[CM, BR]`,
/// applied at the start time to every branch. Sample times outside
/// `[t_start, gate_time]` are rejected.
pub fn integrate(
    seq: &KickSequence,
    trap: &TrapConfig,
    initial: [(f64, f64); 2],
    ode_tol: f64,
    sample_times: &[f64],
) -> Result<Trajectory> {
    if !(ode_tol > 0.0) {
        return Err(Error::InvalidParameter(format!("ode tolerance must be positive, got {ode_tol}")));
    }
    seq.validate()?;
    let impulses = seq.impulses();
    let t_start = impulses.first().map_or(0.0, |k| k.t.min(0.0));
    if sample_times.windows(2).any(|w| w[1] < w[0])
        || sample_times.iter().any(|&s| s < t_start || s > seq.gate_time)
    {
        return Err(Error::InvalidParameter("sample times must be sorted and inside the gate window".into()));
    }
    let mut stats = IntegratorStats::default();
    let mut free = Vec::with_capacity(2);
    for mode in &trap.modes {
        let (x0, y0) = initial[mode_index(mode.label)];
        let spec = RunSpec { mode, impulses: &impulses, jump: 0.0, x0, y0, t_start, t_end: seq.gate_time, samples: sample_times, rtol: ode_tol };
        free.push(run_mode(&spec, &mut stats)?);
    }
    let mut runs = Vec::new();
    for spins in BRANCHES {
        for mode in &trap.modes {
            let c = coupling(mode, spins);
            if c == 0.0 {
                continue;
            }
            let jump = 2.0 * SQRT_2 * mode.eta_mode * c;
            let (x0, y0) = initial[mode_index(mode.label)];
            let spec = RunSpec { mode, impulses: &impulses, jump, x0, y0, t_start, t_end: seq.gate_time, samples: sample_times, rtol: ode_tol };
            runs.push(BranchRun { spins, mode: mode.label, coupling: c, kicked: run_mode(&spec, &mut stats)? });
        }
    }
    let free: [ModeRun; 2] = free.try_into().expect("two modes");
    Ok(Trajectory { t_start, gate_time: seq.gate_time, sample_times: sample_times.to_vec(), free, runs, stats })
}

/// Per-branch action phases and the entangling phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    /// `(spins, mode, phase)` for each integrated branch.
    pub branch_phases: Vec<((i8, i8), ModeLabel, f64)>,
    pub theta: f64,
    /// Largest disagreement between quadrature and boundary routes.
    pub route_gap: f64,
}

/// Gate phase of a branch: the action accumulated relative to free
/// evolution, referenced to the final displaced phase-space point.
fn branch_phase(kicked_xy: (f64, f64), free_xy: (f64, f64), action_diff: f64) -> f64 {
    0.5 * (kicked_xy.0 * kicked_xy.1 - free_xy.0 * free_xy.1) - action_diff
}

pub fn action_phase(traj: &Trajectory) -> Result<PhaseReport> {
    let mut branch_phases = Vec::with_capacity(traj.runs.len());
    let mut theta = 0.0;
    let mut route_gap: f64 = 0.0;
    for r in &traj.runs {
        let f = &traj.free[mode_index(r.mode)];
        let quad = r.kicked.phase_quadrature - f.phase_quadrature;
        let bound = r.kicked.phase_boundary - f.phase_boundary;
        let gap = (quad - bound).abs();
        if gap > ROUTE_TOL * quad.abs().max(1.0) {
            return Err(Error::RouteMismatch { quadrature: quad, boundary: bound });
        }
        route_gap = route_gap.max(gap);
        let phi = branch_phase((r.kicked.x_end, r.kicked.y_end), (f.x_end, f.y_end), quad);
        theta += 0.25 * (r.spins.0 * r.spins.1) as f64 * phi;
        branch_phases.push((r.spins, r.mode, phi));
    }
    Ok(PhaseReport { branch_phases, theta, route_gap })
}

/// Θ(t) at each sample time of the trajectory.
pub fn theta_samples(traj: &Trajectory) -> Vec<f64> {
    (0..traj.sample_times.len())
        .map(|i| {
            traj.runs
                .iter()
                .map(|r| {
                    let f = &traj.free[mode_index(r.mode)].samples[i];
                    let k = &r.kicked.samples[i];
                    0.25 * (r.spins.0 * r.spins.1) as f64 * branch_phase((k[0], k[1]), (f[0], f[1]), k[2] - f[2])
                })
                .sum()
        })
        .collect()
}

/// Residual displacement of a mode with the state-dependent factor removed,
/// read from the branch with coupling +√2.
pub fn displacement_from(traj: &Trajectory, label: ModeLabel) -> (f64, f64) {
    let f = &traj.free[mode_index(label)];
    let r = traj
        .runs
        .iter()
        .filter(|r| r.mode == label)
        .max_by(|a, b| a.coupling.total_cmp(&b.coupling))
        .expect("every mode couples to some branch");
    let scale = 2.0 * r.coupling;
    ((r.kicked.x_end - f.x_end) / scale, (r.kicked.y_end - f.y_end) / scale)
}

/// [`displacement_from`] at every sample time.
pub fn displacement_samples(traj: &Trajectory, label: ModeLabel) -> Vec<(f64, f64)> {
    let f = &traj.free[mode_index(label)];
    let r = traj
        .runs
        .iter()
        .filter(|r| r.mode == label)
        .max_by(|a, b| a.coupling.total_cmp(&b.coupling))
        .expect("every mode couples to some branch");
    let scale = 2.0 * r.coupling;
    f.samples.iter().zip(&r.kicked.samples).map(|(f, k)| ((k[0] - f[0]) / scale, (k[1] - f[1]) / scale)).collect()
}

/// Gate metrics computed from integration and quadrature only.
pub fn oracle_metrics(seq: &KickSequence, trap: &TrapConfig, thermal: &ThermalState, ode_tol: f64) -> Result<GateMetrics> {
    oracle_metrics_from(seq, trap, thermal, [(0.0, 0.0); 2], ode_tol)
}

/// As [`oracle_metrics`] but starting every branch from `initial`.
pub fn oracle_metrics_from(
    seq: &KickSequence,
    trap: &TrapConfig,
    thermal: &ThermalState,
    initial: [(f64, f64); 2],
    ode_tol: f64,
) -> Result<GateMetrics> {
    let traj = integrate(seq, trap, initial, ode_tol, &[])?;
    let phase = action_phase(&traj)?;
    let displacements = [ModeLabel::Cm, ModeLabel::Br].map(|label| {
        let (dx, dy) = displacement_from(&traj, label);
        ModeDisplacement { mode: label, dx, dy }
    });
    let phase_error = phase.theta.abs() - FRAC_PI_4;
    Ok(GateMetrics {
        theta: phase.theta,
        phase_error,
        infidelity: infidelity(phase_error, &displacements, trap, thermal),
        displacements,
        n_sdk: seq.n_sdk(),
    })
}
