//! Closed-form gate conditions: entangling phase, residual mode displacements
//! and the state-averaged infidelity of a kick sequence.
//!
//! A unit kick at `t_j` displaces mode α by `√2 η_α z_j` in `Y`; the response at
//! a later time `t` is `Im(u*(t_j) u(t))/(ρ_α)` in `X` and `Im(u*(t_j) u̇(t))/(ωρ_α)`
//! in `Y`, where `ρ_α = Im(u* u̇)/ω` is the constant Wronskian of the mode.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, SQRT_2};

use crate::floquet::mode_function;
use crate::sequence::{Impulse, KickSequence};
use crate::trap::{ModeLabel, ModeSpec, TrapConfig};

/// Infidelity of doing nothing: (2/3)(π/4)².
pub const EMPTY_INFIDELITY: f64 = 2.0 / 3.0 * FRAC_PI_4 * FRAC_PI_4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThermalState {
    pub n_cm: f64,
    pub n_br: f64,
}

impl ThermalState {
    pub fn ground() -> Self {
        Self::default()
    }

    pub fn occupation(&self, label: ModeLabel) -> f64 {
        match label {
            ModeLabel::Cm => self.n_cm,
            ModeLabel::Br => self.n_br,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDisplacement {
    pub mode: ModeLabel,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateMetrics {
    pub theta: f64,
    pub phase_error: f64,
    pub displacements: [ModeDisplacement; 2],
    pub infidelity: f64,
    pub n_sdk: u64,
}

impl GateMetrics {
    pub fn fidelity(&self) -> f64 {
        1.0 - self.infidelity
    }
}

/// `(μ^(c), μ^(s))` at `(t, t′)`.
pub fn mu_tensors(mode: &ModeSpec, t: f64, t_prime: f64) -> (f64, f64) {
    let e = mode.floquet.envelope(&mode.params, t);
    let e0 = mode.floquet.envelope(&mode.params, t_prime);
    (e.f_c * e0.f_c + e.f_s * e0.f_s, e0.f_c * e.f_s - e.f_c * e0.f_s)
}

/// `(κ^(c), κ^(s))` at `(t, t′)`, derivatives taken in the first argument.
pub fn kappa_tensors(mode: &ModeSpec, t: f64, t_prime: f64) -> (f64, f64) {
    let e = mode.floquet.envelope(&mode.params, t);
    let e0 = mode.floquet.envelope(&mode.params, t_prime);
    let mu_c = e.f_c * e0.f_c + e.f_s * e0.f_s;
    let mu_s = e0.f_c * e.f_s - e.f_c * e0.f_s;
    let dmu_c = e.f_c_dot * e0.f_c + e.f_s_dot * e0.f_s;
    let dmu_s = e0.f_c * e.f_s_dot - e.f_c_dot * e0.f_s;
    (dmu_s / mode.omega + mu_c, dmu_c / mode.omega - mu_s)
}

/// Phase contribution of one mode: `8 η² b^A b^B Σ_{m<n} z_n z_m [...]/ρ`.
fn mode_phase(mode: &ModeSpec, imp: &[Impulse]) -> f64 {
    let mut sum = 0.0;
    for (n, kn) in imp.iter().enumerate() {
        for km in &imp[..n] {
            let (mu_c, mu_s) = mu_tensors(mode, kn.t, km.t);
            let (s, c) = (mode.omega * (kn.t - km.t)).sin_cos();
            sum += kn.weight * km.weight * (s * mu_c + c * mu_s);
        }
    }
    8.0 * mode.eta_mode * mode.eta_mode * mode.coupling_product() * sum / mode.rho
}

/// Entangling phase Θ of the sequence.
pub fn entangling_phase(seq: &KickSequence, trap: &TrapConfig) -> f64 {
    let imp = seq.impulses();
    trap.modes.iter().map(|m| mode_phase(m, &imp)).sum()
}

fn displacement_of(mode: &ModeSpec, imp: &[Impulse], t_g: f64) -> (f64, f64) {
    let (mut dx, mut dy) = (0.0, 0.0);
    for k in imp {
        let (mu_c, mu_s) = mu_tensors(mode, t_g, k.t);
        let (kappa_c, kappa_s) = kappa_tensors(mode, t_g, k.t);
        let (s, c) = (mode.omega * (t_g - k.t)).sin_cos();
        dx += k.weight * (s * mu_c + c * mu_s);
        dy += k.weight * (s * kappa_s + c * kappa_c);
    }
    let scale = SQRT_2 * mode.eta_mode / mode.rho;
    (scale * dx, scale * dy)
}

/// `(ΔX, ΔY)` of one mode at the gate time.
pub fn residual_displacement(seq: &KickSequence, mode: &ModeSpec) -> (f64, f64) {
    displacement_of(mode, &seq.impulses(), seq.gate_time)
}

/// State-averaged infidelity from the phase error and per-mode displacements.
pub fn infidelity(phase_error: f64, displacements: &[ModeDisplacement; 2], trap: &TrapConfig, thermal: &ThermalState) -> f64 {
    let motional: f64 = trap
        .modes
        .iter()
        .zip(displacements)
        .map(|(m, d)| {
            let (ba, bb) = m.couplings;
            (0.5 + thermal.occupation(m.label)) * (ba * ba + bb * bb) * (d.dx * d.dx + d.dy * d.dy)
        })
        .sum();
    2.0 / 3.0 * phase_error * phase_error + 4.0 / 3.0 * motional
}

/// Full metrics bundle.
pub fn evaluate(seq: &KickSequence, trap: &TrapConfig, thermal: &ThermalState) -> GateMetrics {
    let imp = seq.impulses();
    let theta: f64 = trap.modes.iter().map(|m| mode_phase(m, &imp)).sum();
    let displacements = [0, 1].map(|i| {
        let m = &trap.modes[i];
        let (dx, dy) = displacement_of(m, &imp, seq.gate_time);
        ModeDisplacement { mode: m.label, dx, dy }
    });
    let phase_error = theta.abs() - FRAC_PI_4;
    GateMetrics {
        theta,
        phase_error,
        infidelity: infidelity(phase_error, &displacements, trap, thermal),
        displacements,
        n_sdk: seq.n_sdk(),
    }
}

struct ModeBasis {
    u: Vec<Complex64>,
    du: Vec<Complex64>,
    /// ΔX and ΔY per unit weight.
    px: Vec<f64>,
    py: Vec<f64>,
    /// Per-unit-weight time derivatives of `px`, `py`.
    dpx: Vec<f64>,
    dpy: Vec<f64>,
    theta_coeff: f64,
    motional_weight: f64,
}

/// Fast evaluator for impulses at fixed times with variable weights, with
/// analytic gradients in both weights and times. Used by the optimizer.
pub struct KickBasis {
    modes: Vec<ModeBasis>,
    n: usize,
}

/// Cost value together with its ingredients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParts {
    pub cost: f64,
    pub theta: f64,
    pub dx: [f64; 2],
    pub dy: [f64; 2],
}

impl KickBasis {
    pub fn new(trap: &TrapConfig, thermal: &ThermalState, times: &[f64], gate_time: f64) -> Self {
        let modes = trap
            .modes
            .iter()
            .map(|m| {
                let (ug, dug) = mode_function(&m.floquet, &m.params, gate_time);
                let scale = SQRT_2 * m.eta_mode / m.rho;
                let mut b = ModeBasis {
                    u: Vec::with_capacity(times.len()),
                    du: Vec::with_capacity(times.len()),
                    px: Vec::with_capacity(times.len()),
                    py: Vec::with_capacity(times.len()),
                    dpx: Vec::with_capacity(times.len()),
                    dpy: Vec::with_capacity(times.len()),
                    theta_coeff: 8.0 * m.eta_mode * m.eta_mode * m.coupling_product() / m.rho,
                    motional_weight: (0.5 + thermal.occupation(m.label)) * (m.couplings.0.powi(2) + m.couplings.1.powi(2)),
                };
                for &t in times {
                    let (u, du) = mode_function(&m.floquet, &m.params, t);
                    b.px.push(scale * (u.conj() * ug).im);
                    b.py.push(scale * (u.conj() * dug).im / m.omega);
                    b.dpx.push(scale * (du.conj() * ug).im);
                    b.dpy.push(scale * (du.conj() * dug).im / m.omega);
                    b.u.push(u);
                    b.du.push(du);
                }
                b
            })
            .collect();
        Self { modes, n: times.len() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn parts(&self, w: &[f64]) -> CostParts {
        assert_eq!(w.len(), self.n);
        let mut theta = 0.0;
        let mut dx = [0.0; 2];
        let mut dy = [0.0; 2];
        let mut motional = 0.0;
        for (i, b) in self.modes.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut phase = 0.0;
            for k in 0..self.n {
                phase += w[k] * (b.u[k] * acc).im;
                acc += w[k] * b.u[k].conj();
                dx[i] += w[k] * b.px[k];
                dy[i] += w[k] * b.py[k];
            }
            theta += b.theta_coeff * phase;
            motional += b.motional_weight * (dx[i] * dx[i] + dy[i] * dy[i]);
        }
        let pe = theta.abs() - FRAC_PI_4;
        CostParts { cost: 2.0 / 3.0 * pe * pe + 4.0 / 3.0 * motional, theta, dx, dy }
    }

    pub fn cost(&self, w: &[f64]) -> f64 {
        self.parts(w).cost
    }

    /// Cost and gradient with respect to the weights.
    pub fn cost_grad_weights(&self, w: &[f64], grad: &mut [f64]) -> CostParts {
        let p = self.parts(w);
        let dtheta = 4.0 / 3.0 * (p.theta.abs() - FRAC_PI_4) * sign(p.theta);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (i, b) in self.modes.iter().enumerate() {
            let cx = 8.0 / 3.0 * b.motional_weight * p.dx[i];
            let cy = 8.0 / 3.0 * b.motional_weight * p.dy[i];
            let total: Complex64 = (0..self.n).map(|k| w[k] * b.u[k]).sum();
            let mut before = Complex64::new(0.0, 0.0);
            let mut after = total;
            for k in 0..self.n {
                after -= w[k] * b.u[k];
                // pairs (k, m<k) and (n>k, k)
                let d = (b.u[k] * before).im + (after * b.u[k].conj()).im;
                grad[k] += dtheta * b.theta_coeff * d + cx * b.px[k] + cy * b.py[k];
                before += w[k] * b.u[k].conj();
            }
        }
        p
    }

    /// Cost and gradient with respect to the impulse times (gate time fixed).
    pub fn cost_grad_times(&self, w: &[f64], grad: &mut [f64]) -> CostParts {
        let p = self.parts(w);
        let dtheta = 4.0 / 3.0 * (p.theta.abs() - FRAC_PI_4) * sign(p.theta);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (i, b) in self.modes.iter().enumerate() {
            let cx = 8.0 / 3.0 * b.motional_weight * p.dx[i];
            let cy = 8.0 / 3.0 * b.motional_weight * p.dy[i];
            let total: Complex64 = (0..self.n).map(|k| w[k] * b.u[k]).sum();
            let mut before = Complex64::new(0.0, 0.0);
            let mut after = total;
            for k in 0..self.n {
                after -= w[k] * b.u[k];
                let d = (b.du[k] * before).im + (after * b.du[k].conj()).im;
                grad[k] += w[k] * (dtheta * b.theta_coeff * d + cx * b.dpx[k] + cy * b.dpy[k]);
                before += w[k] * b.u[k].conj();
            }
        }
        p
    }
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{Kick, RepRate};
    use crate::trap::calibrate;

    fn seq(kicks: &[(f64, i32)], tg: f64) -> KickSequence {
        KickSequence::new(kicks.iter().map(|&(t, z)| Kick { t, z }).collect(), tg, RepRate::Infinite).unwrap()
    }

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*state >> 11) as f64 / (1u64 << 53) as f64
    }

    fn random_seq(state: &mut u64, n: usize, tg: f64) -> KickSequence {
        let mut times: Vec<f64> = (0..n).map(|_| tg * lcg(state)).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        let kicks = times
            .into_iter()
            .map(|t| Kick { t, z: (lcg(state) * 7.0) as i32 - 3 })
            .collect();
        KickSequence::new(kicks, tg, RepRate::Infinite).unwrap()
    }

    #[test]
    fn empty_sequence_metrics() {
        let trap = calibrate(0.1, 40.0, -0.014, 0.15, 0.0).unwrap();
        let m = evaluate(&KickSequence::empty(3.0), &trap, &ThermalState::ground());
        assert_eq!(m.theta, 0.0);
        assert!((m.infidelity - 0.411_233_516_712_056_6).abs() < 1e-15);
        assert_eq!(m.displacements[0].dx, 0.0);
    }

    #[test]
    fn single_kick_harmonic_response() {
        let trap = calibrate(0.0, 40.0, -0.014, 0.15, 0.0).unwrap();
        let s = seq(&[(0.3, 1)], 2.0);
        assert_eq!(entangling_phase(&s, &trap), 0.0);
        for m in &trap.modes {
            let (dx, dy) = residual_displacement(&s, m);
            let arg = m.omega * (2.0 - 0.3);
            assert!((dx - SQRT_2 * m.eta_mode * arg.sin()).abs() < 1e-14);
            assert!((dy - SQRT_2 * m.eta_mode * arg.cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn two_kick_secular_phase() {
        let trap = calibrate(0.0, 40.0, -0.014, 0.15, 0.0).unwrap();
        let s = seq(&[(0.2, 2), (1.1, -3)], 2.0);
        let expected: f64 = trap
            .modes
            .iter()
            .map(|m| 8.0 * m.eta_mode.powi(2) * m.coupling_product() * (m.omega * 0.9).sin() * -6.0)
            .sum();
        assert!((entangling_phase(&s, &trap) - expected).abs() < 1e-14);
    }

    #[test]
    fn tensor_symmetries() {
        let trap = calibrate(0.4, 40.0, -0.014, 0.15, 0.3).unwrap();
        let m = trap.cm();
        let mut st = 3u64;
        for _ in 0..100 {
            let (t, tp) = (10.0 * lcg(&mut st), 10.0 * lcg(&mut st));
            let (c1, s1) = mu_tensors(m, t, tp);
            let (c2, s2) = mu_tensors(m, tp, t);
            assert!((c1 - c2).abs() < 1e-15);
            assert!((s1 + s2).abs() < 1e-15);
        }
        assert_eq!(mu_tensors(m, 1.3, 1.3).1, 0.0);
    }

    #[test]
    fn tensors_secular_limit() {
        let trap = calibrate(0.0, 40.0, -0.014, 0.15, 0.0).unwrap();
        assert_eq!(mu_tensors(trap.cm(), 0.7, 0.1), (1.0, 0.0));
        assert_eq!(kappa_tensors(trap.cm(), 0.7, 0.1), (1.0, 0.0));
    }

    #[test]
    fn kappa_derivative_matches_finite_difference() {
        let trap = calibrate(0.3, 40.0, -0.014, 0.15, 0.0).unwrap();
        let m = trap.cm();
        let h = 1e-6;
        for &(t, tp) in &[(0.5, 0.1), (2.3, 1.7), (4.0, 0.0)] {
            let (kc, ks) = kappa_tensors(m, t, tp);
            let (cp, sp) = mu_tensors(m, t + h, tp);
            let (cm, sm) = mu_tensors(m, t - h, tp);
            let (c0, s0) = mu_tensors(m, t, tp);
            let fd_ks = (cp - cm) / (2.0 * h) / m.omega - s0;
            let fd_kc = (sp - sm) / (2.0 * h) / m.omega + c0;
            assert!((ks - fd_ks).abs() < 1e-6, "{ks} vs {fd_ks}");
            assert!((kc - fd_kc).abs() < 1e-6, "{kc} vs {fd_kc}");
        }
    }

    #[test]
    fn sign_flip_and_time_translation() {
        let trap = calibrate(0.3, 40.0, -0.014, 0.15, 0.4).unwrap();
        let th = ThermalState { n_cm: 0.5, n_br: 0.2 };
        let mut st = 11u64;
        let s = random_seq(&mut st, 20, 4.0);
        let m0 = evaluate(&s, &trap, &th);
        let mut neg = s.clone();
        neg.kicks.iter_mut().for_each(|k| k.z = -k.z);
        let m1 = evaluate(&neg, &trap, &th);
        assert!((m0.theta - m1.theta).abs() < 1e-13);
        assert!((m0.infidelity - m1.infidelity).abs() < 1e-13);
        for i in 0..2 {
            assert!((m0.displacements[i].dx + m1.displacements[i].dx).abs() < 1e-13);
        }
        let shift = 3.0 * trap.rf_period();
        let mut moved = s.clone();
        moved.kicks.iter_mut().for_each(|k| k.t += shift);
        moved.gate_time += shift;
        let m2 = evaluate(&moved, &trap, &th);
        assert!((m0.theta - m2.theta).abs() < 1e-12);
        assert!((m0.infidelity - m2.infidelity).abs() < 1e-12);
    }

    #[test]
    fn infidelity_structure() {
        let trap = calibrate(0.1, 40.0, -0.014, 0.15, 0.0).unwrap();
        let d = [
            ModeDisplacement { mode: ModeLabel::Cm, dx: 0.01, dy: -0.02 },
            ModeDisplacement { mode: ModeLabel::Br, dx: 0.03, dy: 0.0 },
        ];
        assert_eq!(infidelity(0.0, &[ModeDisplacement { dx: 0.0, dy: 0.0, ..d[0] }, ModeDisplacement { dx: 0.0, dy: 0.0, ..d[1] }], &trap, &ThermalState::ground()), 0.0);
        let a = infidelity(0.0, &d, &trap, &ThermalState::ground());
        let b = infidelity(0.0, &d, &trap, &ThermalState { n_cm: 0.5, n_br: 0.5 });
        assert!((b - 2.0 * a).abs() < 1e-16);
    }

    #[test]
    fn basis_matches_direct_evaluation() {
        let trap = calibrate(0.5, 40.0, -0.014, 0.15, 0.2).unwrap();
        let th = ThermalState { n_cm: 0.1, n_br: 0.3 };
        let mut st = 5u64;
        let s = random_seq(&mut st, 25, 4.5);
        let imp = s.impulses();
        let times: Vec<f64> = imp.iter().map(|i| i.t).collect();
        let w: Vec<f64> = imp.iter().map(|i| i.weight).collect();
        let basis = KickBasis::new(&trap, &th, &times, s.gate_time);
        let p = basis.parts(&w);
        let m = evaluate(&s, &trap, &th);
        assert!((p.theta - m.theta).abs() < 1e-12);
        assert!((p.cost - m.infidelity).abs() < 1e-12);
        assert!((p.dx[1] - m.displacements[1].dx).abs() < 1e-13);
        assert!((p.dy[0] - m.displacements[0].dy).abs() < 1e-13);
    }

    #[test]
    fn basis_gradients_match_finite_differences() {
        let trap = calibrate(0.3, 40.0, -0.014, 0.15, 0.0).unwrap();
        let th = ThermalState::ground();
        let times: Vec<f64> = (0..12).map(|i| 0.37 * i as f64 + 0.05).collect();
        let w: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 1.3).collect();
        let basis = KickBasis::new(&trap, &th, &times, 4.6);
        let mut g = vec![0.0; 12];
        basis.cost_grad_weights(&w, &mut g);
        let h = 1e-6;
        for k in 0..12 {
            let mut wp = w.clone();
            wp[k] += h;
            let mut wm = w.clone();
            wm[k] -= h;
            let fd = (basis.cost(&wp) - basis.cost(&wm)) / (2.0 * h);
            assert!((g[k] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "w{k}: {} vs {fd}", g[k]);
        }
        let mut gt = vec![0.0; 12];
        basis.cost_grad_times(&w, &mut gt);
        let h = 1e-7;
        for k in 0..12 {
            let mut tp = times.clone();
            tp[k] += h;
            let mut tm = times.clone();
            tm[k] -= h;
            let fd = (KickBasis::new(&trap, &th, &tp, 4.6).cost(&w) - KickBasis::new(&trap, &th, &tm, 4.6).cost(&w)) / (2.0 * h);
            assert!((gt[k] - fd).abs() < 1e-5 * (1.0 + fd.abs()), "t{k}: {} vs {fd}", gt[k]);
        }
    }
}
