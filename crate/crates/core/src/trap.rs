//! Two-ion trap calibration in dimensionless units (ω_CM = 1, time in 1/ω_CM).

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::floquet::{monodromy_trace, FloquetSolution, MathieuParams, BETA_TOL, MONODROMY_RTOL};
use crate::roots::brent;

/// Frequency calibration target used by [`calibrate`].
pub const CALIBRATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeLabel {
    #[serde(rename = "CM")]
    Cm,
    #[serde(rename = "BR")]
    Br,
}

impl std::fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModeLabel::Cm => "CM",
            ModeLabel::Br => "BR",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpec {
    pub label: ModeLabel,
    pub params: MathieuParams,
    pub floquet: FloquetSolution,
    pub omega: f64,
    /// `(b^(A), b^(B))`.
    pub couplings: (f64, f64),
    pub eta_mode: f64,
    /// Constant phase-rate normalisation `Im(u* u̇)/ω` of this mode.
    pub rho: f64,
}

impl ModeSpec {
    fn build(label: ModeLabel, a: f64, q: f64, rf_ratio: f64, rf_phase: f64, eta: f64) -> Result<Self> {
        let params = MathieuParams::new(a, q, rf_ratio, rf_phase);
        let floquet = FloquetSolution::solve(&params)?;
        let couplings = match label {
            ModeLabel::Cm => (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
            ModeLabel::Br => (-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
        };
        let omega = floquet.omega;
        Ok(Self {
            label,
            params,
            rho: floquet.wronskian_norm(),
            floquet,
            omega,
            couplings,
            eta_mode: eta / omega.sqrt(),
        })
    }

    /// `b^(A) b^(B)`: +1/2 for CM, −1/2 for BR.
    pub fn coupling_product(&self) -> f64 {
        self.couplings.0 * self.couplings.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrapConfig {
    pub rf_ratio: f64,
    pub rf_phase: f64,
    pub q_x: f64,
    pub chi: f64,
    pub eta: f64,
    pub a_cm: f64,
    pub a_br: f64,
    /// `[CM, BR]`.
    pub modes: [ModeSpec; 2],
}

/// The parameters needed to rebuild a [`TrapConfig`] bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapRecord {
    pub q_x: f64,
    pub rf_ratio: f64,
    pub chi: f64,
    pub eta: f64,
    pub rf_phase: f64,
    pub a_cm: f64,
    pub a_br: f64,
}

impl TrapConfig {
    /// Rebuild from already calibrated `a` values.
    pub fn from_record(r: &TrapRecord) -> Result<Self> {
        check_inputs(r.q_x, r.rf_ratio, r.chi, r.eta, r.rf_phase)?;
        let cm = ModeSpec::build(ModeLabel::Cm, r.a_cm, r.q_x, r.rf_ratio, r.rf_phase, r.eta)?;
        let br = ModeSpec::build(ModeLabel::Br, r.a_br, r.q_x, r.rf_ratio, r.rf_phase, r.eta)?;
        Ok(Self {
            rf_ratio: r.rf_ratio,
            rf_phase: r.rf_phase,
            q_x: r.q_x,
            chi: r.chi,
            eta: r.eta,
            a_cm: r.a_cm,
            a_br: r.a_br,
            modes: [cm, br],
        })
    }

    pub fn record(&self) -> TrapRecord {
        TrapRecord {
            q_x: self.q_x,
            rf_ratio: self.rf_ratio,
            chi: self.chi,
            eta: self.eta,
            rf_phase: self.rf_phase,
            a_cm: self.a_cm,
            a_br: self.a_br,
        }
    }

    /// Same trap with a different drive phase (the `a` values do not depend on it).
    pub fn with_rf_phase(&self, rf_phase: f64) -> Result<Self> {
        let mut r = self.record();
        r.rf_phase = rf_phase;
        Self::from_record(&r)
    }

    pub fn cm(&self) -> &ModeSpec {
        &self.modes[0]
    }

    pub fn br(&self) -> &ModeSpec {
        &self.modes[1]
    }

    /// One secular trap period 2π/ω_CM.
    pub fn trap_period(&self) -> f64 {
        std::f64::consts::TAU
    }

    pub fn rf_period(&self) -> f64 {
        std::f64::consts::TAU / self.rf_ratio
    }
}

fn check_inputs(q_x: f64, rf_ratio: f64, chi: f64, eta: f64, rf_phase: f64) -> Result<()> {
    let finite = [q_x, rf_ratio, chi, eta, rf_phase].iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::InvalidParameter("trap parameters must be finite".into()));
    }
    if rf_ratio <= 0.0 {
        return Err(Error::InvalidParameter(format!("rf_ratio must be positive, got {rf_ratio}")));
    }
    if 1.0 + chi <= 0.0 {
        return Err(Error::InvalidParameter(format!("1 + chi must be positive, got chi = {chi}")));
    }
    if eta <= 0.0 {
        return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    if q_x < 0.0 {
        return Err(Error::InvalidParameter(format!("q_x must be non-negative, got {q_x}")));
    }
    Ok(())
}

/// Solve for the DC parameter `a` giving characteristic exponent `beta_target` at `q`.
/// The target is `β = 2ω/Ω`.
pub fn solve_a_for_beta(q: f64, omega: f64, rf_ratio: f64) -> Result<f64> {
    let beta_target = 2.0 * omega / rf_ratio;
    if !(beta_target > 0.0 && beta_target < 1.0) {
        return Err(Error::NotStable { a: f64::NAN, q });
    }
    if q == 0.0 {
        return Ok(4.0 * omega * omega / (rf_ratio * rf_ratio));
    }
    // β(a) is increasing in a; outside the tongue use ±1 sentinels from the trace sign.
    let g = |a: f64| -> f64 {
        match monodromy_trace(a, q, MONODROMY_RTOL) {
            Ok(tr) if tr >= 2.0 => -1.0,
            Ok(tr) if tr <= -2.0 => 1.0,
            Ok(_) => match crate::floquet::characteristic_exponent(&MathieuParams::new(a, q, 1.0, 0.0), BETA_TOL) {
                Ok(b) => b - beta_target,
                Err(_) => f64::NAN,
            },
            Err(_) => f64::NAN,
        }
    };
    let guess = beta_target * beta_target - 0.5 * q * q;
    let mut half = 1e-3;
    let (mut lo, mut hi) = (guess - half, guess + half);
    let (mut glo, mut ghi) = (g(lo), g(hi));
    let mut tries = 0;
    while !(glo < 0.0 && ghi > 0.0) {
        if glo.is_nan() || ghi.is_nan() || tries > 40 {
            return Err(Error::CalibrationFailure(format!("could not bracket a for beta = {beta_target} at q = {q}")));
        }
        half *= 2.0;
        if glo >= 0.0 {
            lo = guess - half;
            glo = g(lo);
        }
        if ghi <= 0.0 {
            hi = guess + half;
            ghi = g(hi);
        }
        tries += 1;
    }
    let a = brent(g, lo, hi, 1e-15, 300).map_err(|e| Error::CalibrationFailure(e.to_string()))?;
    let beta = crate::floquet::characteristic_exponent(&MathieuParams::new(a, q, 1.0, 0.0), BETA_TOL)?;
    if (beta - beta_target).abs() > 1e-11 {
        return Err(Error::CalibrationFailure(format!("residual {:e} in beta at q = {q}", beta - beta_target)));
    }
    Ok(a)
}

/// Calibrate both radial modes so that ω_CM = 1 and ω_BR = 1 + chi.
pub fn calibrate(q_x: f64, rf_ratio: f64, chi: f64, eta: f64, rf_phase: f64) -> Result<TrapConfig> {
    check_inputs(q_x, rf_ratio, chi, eta, rf_phase)?;
    let a_cm = solve_a_for_beta(q_x, 1.0, rf_ratio)?;
    let a_br = solve_a_for_beta(q_x, 1.0 + chi, rf_ratio)?;
    let trap = TrapConfig::from_record(&TrapRecord { q_x, rf_ratio, chi, eta, rf_phase, a_cm, a_br })?;
    for (mode, target) in trap.modes.iter().zip([1.0, 1.0 + chi]) {
        if (mode.omega - target).abs() >= CALIBRATION_TOL {
            return Err(Error::CalibrationFailure(format!("{} mode frequency {} misses {target}", mode.label, mode.omega)));
        }
    }
    Ok(trap)
}

/// `(a_cm, a_br)` from a common `a_x` and the scaled Coulomb curvature.
pub fn coulomb_mode_shift(a_x: f64, gamma_norm: f64) -> (f64, f64) {
    (a_x, a_x - gamma_norm)
}

/// Time-dependent eigenvalue `offset + cos_amp·cos(Ω t + φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenvalue {
    pub offset: f64,
    pub cos_amp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianModes {
    pub cm: Eigenvalue,
    pub br: Eigenvalue,
    pub cm_vector: (f64, f64),
    pub br_vector: (f64, f64),
}

/// Radial Hessian eigen-decomposition for two ions at spacing `d_gap`
/// (Coulomb constant e²/(4πε₀m) set to 1).
pub fn hessian_eigenvalues(d_gap: f64, p: &MathieuParams) -> Result<HessianModes> {
    if !(d_gap > 0.0) {
        return Err(Error::InvalidSpacing(d_gap));
    }
    let scale = 0.25 * p.rf_ratio * p.rf_ratio;
    let cm = Eigenvalue { offset: scale * p.a, cos_amp: -2.0 * scale * p.q };
    // radial Coulomb block: diagonal −1/d³, off-diagonal +1/d³
    let c = 1.0 / d_gap.powi(3);
    let (diag, off) = (cm.offset - c, c);
    let br = Eigenvalue { offset: diag - off, cos_amp: cm.cos_amp };
    debug_assert!((diag + off - cm.offset).abs() <= 1e-12 * cm.offset.abs().max(1.0));
    Ok(HessianModes {
        cm,
        br,
        cm_vector: (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
        br_vector: (-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    })
}

/// Bose–Einstein occupation `1/(e^{ω/T} − 1)`.
pub fn mean_occupation(omega: f64, temperature: f64) -> f64 {
    if temperature <= 0.0 {
        return 0.0;
    }
    1.0 / (omega / temperature).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::characteristic_exponent;

    #[test]
    fn harmonic_limit_calibration() {
        let t = calibrate(0.0, 40.0, 0.0, 0.15, 0.0).unwrap();
        assert_eq!(t.a_cm, 0.0025);
        assert_eq!(t.cm().omega, 1.0);
    }

    #[test]
    fn breathing_frequency_from_chi() {
        let t = calibrate(0.01, 40.0, -1.4e-2, 0.15, 0.0).unwrap();
        assert!((t.br().omega - 0.986).abs() < 1e-10);
        assert!(t.a_br < t.a_cm);
    }

    #[test]
    fn large_q_round_trip() {
        let t = calibrate(0.5, 40.0, -0.014, 0.15, 0.0).unwrap();
        let b = characteristic_exponent(&MathieuParams::new(t.a_cm, 0.5, 40.0, 0.0), BETA_TOL).unwrap();
        assert!((b - 0.05).abs() < 1e-10);
        assert!(t.a_cm < 0.0025 - 0.1);
    }

    #[test]
    fn same_secular_limit_across_q() {
        let mut prev_a = f64::INFINITY;
        for q in [0.01, 0.1, 0.3, 0.5] {
            let t = calibrate(q, 40.0, -0.014, 0.15, 0.0).unwrap();
            assert!((t.cm().omega - 1.0).abs() < 1e-10);
            assert!((t.br().omega - 0.986).abs() < 1e-10);
            assert!(t.a_cm < prev_a);
            prev_a = t.a_cm;
        }
    }

    #[test]
    fn couplings_orthonormal() {
        let t = calibrate(0.1, 40.0, -0.014, 0.15, 0.0).unwrap();
        let (a, b) = (t.cm().couplings, t.br().couplings);
        assert!((a.0 * a.0 + a.1 * a.1 - 1.0).abs() < 1e-15);
        assert!((b.0 * b.0 + b.1 * b.1 - 1.0).abs() < 1e-15);
        assert!((a.0 * b.0 + a.1 * b.1).abs() < 1e-15);
        assert_eq!(t.cm().coupling_product().signum(), 1.0);
        assert_eq!(t.br().coupling_product().signum(), -1.0);
    }

    #[test]
    fn record_round_trip_is_exact() {
        let t = calibrate(0.3, 40.0, -0.014, 0.15, 0.2).unwrap();
        let back = TrapConfig::from_record(&t.record()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(calibrate(0.1, 40.0, -1.5, 0.15, 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(calibrate(0.1, 1.5, 0.0, 0.15, 0.0), Err(Error::NotStable { .. })));
    }

    #[test]
    fn coulomb_shift_round_trip() {
        let (a_cm, a_br) = coulomb_mode_shift(0.01, 0.0);
        assert_eq!(a_cm, a_br);
        let t = calibrate(0.01, 40.0, -0.014, 0.15, 0.0).unwrap();
        let gamma = t.a_cm - t.a_br;
        assert!(gamma > 0.0);
        let (_, a_br) = coulomb_mode_shift(t.a_cm, gamma);
        let p = MathieuParams::new(a_br, 0.01, 40.0, 0.0);
        let b_br = characteristic_exponent(&p, BETA_TOL).unwrap();
        assert!((b_br / t.cm().floquet.beta - 0.986).abs() < 1e-8);
    }

    #[test]
    fn hessian_structure() {
        let p = MathieuParams::new(0.01, 0.2, 40.0, 0.0);
        let far = hessian_eigenvalues(1e6, &p).unwrap();
        assert!((far.br.offset - far.cm.offset).abs() < 1e-12);
        let h1 = hessian_eigenvalues(2.0, &p).unwrap();
        let h2 = hessian_eigenvalues(4.0, &p).unwrap();
        let r = (h1.cm.offset - h1.br.offset) / (h2.cm.offset - h2.br.offset);
        assert!((r - 8.0).abs() < 1e-12);
        assert!(h1.br.offset < h1.cm.offset);
        assert_eq!(h1.cm_vector, (FRAC_1_SQRT_2, FRAC_1_SQRT_2));
        assert_eq!(h1.br_vector, (-FRAC_1_SQRT_2, FRAC_1_SQRT_2));
        assert!(matches!(hessian_eigenvalues(0.0, &p), Err(Error::InvalidSpacing(_))));
    }

    #[test]
    fn occupation() {
        assert_eq!(mean_occupation(1.0, 0.0), 0.0);
        assert!((mean_occupation(2f64.ln(), 1.0) - 1.0).abs() < 1e-14);
        for ratio in [50.0, 100.0, 400.0] {
            let n = mean_occupation(1.0, ratio);
            assert!(((n - (ratio - 0.5)) / n).abs() < 0.01);
        }
    }
}
