//! Floquet solutions of the Mathieu–Hill equation
//! `ẍ + (Ω/2)²[a − 2q cos(Ωt + φ)] x = 0` for a single motional mode.
//!
//! The mode function is `u(t) = e^{iωt} Σ_n C_n e^{in(Ωt + φ)}` with `ω = βΩ/2`
//! and `C_0 = 1`. The coefficients obey `C_{n+1} − D_n C_n + C_{n−1} = 0` with
//! `D_n = [a − (2n + β)²]/q`, and the characteristic exponent `β` is the root of
//! the continued-fraction self-consistency condition at `n = 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Dopri5, OdeOptions};
use crate::roots::brent;

/// Default convergence target for `β`.
pub const BETA_TOL: f64 = 1e-12;
/// Default truncation threshold for `|C_{±n_max}|`.
pub const COEFF_TOL: f64 = 1e-14;
/// Default cap on the truncation order.
pub const N_MAX_CAP: usize = 64;
/// Relative tolerance used for monodromy integrations.
pub const MONODROMY_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MathieuParams {
    pub a: f64,
    pub q: f64,
    /// Drive frequency Ω in units of the calibrated secular frequency.
    pub rf_ratio: f64,
    /// Drive phase φ at t = 0, radians.
    pub rf_phase: f64,
}

impl MathieuParams {
    pub fn new(a: f64, q: f64, rf_ratio: f64, rf_phase: f64) -> Self {
        Self { a, q, rf_ratio, rf_phase }
    }

    fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.q.is_finite() && self.rf_phase.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite Mathieu parameters {self:?}")));
        }
        if !(self.rf_ratio > 0.0 && self.rf_ratio.is_finite()) {
            return Err(Error::InvalidParameter(format!("rf_ratio must be positive, got {}", self.rf_ratio)));
        }
        Ok(())
    }

    /// Instantaneous spring constant λ(t).
    pub fn lambda(&self, t: f64) -> f64 {
        let half = 0.5 * self.rf_ratio;
        half * half * (self.a - 2.0 * self.q * (self.rf_ratio * t + self.rf_phase).cos())
    }
}

/// Characteristic exponent, Fourier coefficients and diagnostics for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloquetSolution {
    pub beta: f64,
    /// Secular frequency ω = βΩ/2.
    pub omega: f64,
    /// `C_n` for `n = −n_max ..= n_max`.
    pub coeffs: Vec<f64>,
    pub n_max: usize,
    /// Largest recurrence residual over `|n| < n_max`.
    pub residual: f64,
}

/// Envelope functions `f_C`, `f_S` and their time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub f_c: f64,
    pub f_s: f64,
    pub f_c_dot: f64,
    pub f_s_dot: f64,
}

impl FloquetSolution {
    /// Solve with the default tolerances.
    pub fn solve(p: &MathieuParams) -> Result<Self> {
        let beta = characteristic_exponent(p, BETA_TOL)?;
        fourier_coefficients(p, beta, N_MAX_CAP, COEFF_TOL)
    }

    pub fn coeff(&self, n: i64) -> f64 {
        if n.unsigned_abs() as usize > self.n_max {
            0.0
        } else {
            self.coeffs[(n + self.n_max as i64) as usize]
        }
    }

    /// `Im(u* u̇)/ω`, the time-independent Wronskian of the mode function in
    /// units of ω. Equals 1 when `q = 0`.
    pub fn wronskian_norm(&self) -> f64 {
        let n_max = self.n_max as i64;
        (-n_max..=n_max)
            .map(|n| {
                let c = self.coeff(n);
                c * c * (1.0 + 2.0 * n as f64 / self.beta)
            })
            .sum()
    }

    /// Envelope functions at time `t` (drive phase taken from `p`).
    pub fn envelope(&self, p: &MathieuParams, t: f64) -> Envelope {
        let theta = p.rf_ratio * t + p.rf_phase;
        let step = Complex64::from_polar(1.0, theta);
        let mut z = Complex64::new(1.0, 0.0);
        let mut env = Envelope { f_c: self.coeff(0), f_s: 0.0, f_c_dot: 0.0, f_s_dot: 0.0 };
        for n in 1..=self.n_max as i64 {
            z *= step;
            let plus = self.coeff(n) + self.coeff(-n);
            let minus = self.coeff(n) - self.coeff(-n);
            let nw = n as f64 * p.rf_ratio;
            env.f_c += plus * z.re;
            env.f_s += minus * z.im;
            env.f_c_dot -= nw * plus * z.im;
            env.f_s_dot += nw * minus * z.re;
        }
        env
    }
}

fn d_n(p: &MathieuParams, beta: f64, n: i64) -> f64 {
    let k = 2.0 * n as f64 + beta;
    (p.a - k * k) / p.q
}

/// Continued fractions `C_1/C_0` and `C_{−1}/C_0` evaluated bottom-up from `depth`.
fn cf_pair(p: &MathieuParams, beta: f64, depth: usize) -> (f64, f64) {
    let mut up = 0.0;
    let mut down = 0.0;
    for n in (1..=depth as i64).rev() {
        up = 1.0 / (d_n(p, beta, n) - up);
        down = 1.0 / (d_n(p, beta, -n) - down);
    }
    (up, down)
}

fn self_consistency(p: &MathieuParams, beta: f64, depth: usize) -> f64 {
    let (up, down) = cf_pair(p, beta, depth);
    beta * beta - p.a + p.q * (up + down)
}

/// Characteristic exponent β from the continued-fraction fixed point.
pub fn characteristic_exponent(p: &MathieuParams, tol: f64) -> Result<f64> {
    p.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let trace = monodromy_trace(p.a, p.q, MONODROMY_RTOL)?;
    if trace.abs() >= 2.0 {
        return Err(Error::NotStable { a: p.a, q: p.q });
    }
    if p.q == 0.0 {
        let beta = p.a.sqrt();
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::NotStable { a: p.a, q: p.q });
        }
        return Ok(beta);
    }

    let lo_limit = 1e-10;
    let hi_limit = 1.0 - 1e-10;
    let guess = (p.a + 0.5 * p.q * p.q).max(1e-8).sqrt().clamp(lo_limit, hi_limit);

    let mut prev: Option<f64> = None;
    let mut depth = 16usize;
    while depth <= 4096 {
        let f = |b: f64| self_consistency(p, b, depth);
        let mut half = 1e-3 * guess.max(1e-2);
        let (mut lo, mut hi);
        loop {
            lo = (guess - half).max(lo_limit);
            hi = (guess + half).min(hi_limit);
            let (flo, fhi) = (f(lo), f(hi));
            if flo.is_finite() && fhi.is_finite() && flo.signum() != fhi.signum() {
                break;
            }
            if lo == lo_limit && hi == hi_limit {
                return Err(Error::NoConvergence { what: "characteristic exponent bracket", iterations: 0 });
            }
            half *= 2.0;
        }
        let beta = brent(f, lo, hi, 1e-3 * tol, 500)?;
        if let Some(b_prev) = prev {
            if (beta - b_prev).abs() < tol {
                // reject roots that belong to a higher stability tongue
                if ((std::f64::consts::PI * beta).cos() - 0.5 * trace).abs() > 1e-6 {
                    return Err(Error::NotStable { a: p.a, q: p.q });
                }
                return Ok(beta);
            }
        }
        prev = Some(beta);
        depth *= 2;
    }
    Err(Error::NoConvergence { what: "continued-fraction depth", iterations: 4096 })
}

/// Fourier coefficients `C_n` for a known characteristic exponent.
pub fn fourier_coefficients(p: &MathieuParams, beta: f64, n_max_cap: usize, tol: f64) -> Result<FloquetSolution> {
    p.validate()?;
    let omega = 0.5 * beta * p.rf_ratio;
    if p.q == 0.0 {
        return Ok(FloquetSolution { beta, omega, coeffs: vec![0.0, 1.0, 0.0], n_max: 1, residual: 0.0 });
    }
    let cap = n_max_cap.max(1);
    let depth = cap + 64;
    // ratios C_n/C_{n-1} (n ≥ 1) and C_{-n}/C_{-n+1}, filled bottom-up
    let mut up = vec![0.0; depth + 2];
    let mut down = vec![0.0; depth + 2];
    for n in (1..=depth).rev() {
        up[n] = 1.0 / (d_n(p, beta, n as i64) - up[n + 1]);
        down[n] = 1.0 / (d_n(p, beta, -(n as i64)) - down[n + 1]);
    }
    let mut pos = vec![1.0; cap + 1];
    let mut neg = vec![1.0; cap + 1];
    for n in 1..=cap {
        pos[n] = pos[n - 1] * up[n];
        neg[n] = neg[n - 1] * down[n];
    }
    let n_max = (1..=cap).find(|&n| pos[n].abs() < tol && neg[n].abs() < tol).ok_or(Error::TruncationFailure {
        n_max_cap: cap,
        tol,
        reached: pos[cap].abs().max(neg[cap].abs()),
    })?;

    let mut coeffs = Vec::with_capacity(2 * n_max + 1);
    coeffs.extend((1..=n_max).rev().map(|n| neg[n]));
    coeffs.push(1.0);
    coeffs.extend((1..=n_max).map(|n| pos[n]));
    let mut sol = FloquetSolution { beta, omega, coeffs, n_max, residual: 0.0 };
    let nm = n_max as i64;
    sol.residual = (-(nm - 1)..nm)
        .map(|n| (sol.coeff(n + 1) - d_n(p, beta, n) * sol.coeff(n) + sol.coeff(n - 1)).abs())
        .fold(0.0, f64::max);
    Ok(sol)
}

/// Mode function `u(t)` and its exact time derivative.
pub fn mode_function(sol: &FloquetSolution, p: &MathieuParams, t: f64) -> (Complex64, Complex64) {
    let env = sol.envelope(p, t);
    let g = Complex64::new(env.f_c, env.f_s);
    let g_dot = Complex64::new(env.f_c_dot, env.f_s_dot);
    let secular = Complex64::from_polar(1.0, sol.omega * t);
    let u = secular * g;
    let u_dot = secular * (Complex64::new(0.0, sol.omega) * g + g_dot);
    (u, u_dot)
}

/// `(f_C, f_S, ḟ_C, ḟ_S)` at time `t`.
pub fn envelope_functions(sol: &FloquetSolution, p: &MathieuParams, t: f64) -> Envelope {
    sol.envelope(p, t)
}

/// Local phase-rate factor `1 + (f_C ḟ_S − f_S ḟ_C)/ω`.
pub fn rho(sol: &FloquetSolution, p: &MathieuParams, t: f64) -> f64 {
    let e = sol.envelope(p, t);
    1.0 + (e.f_c * e.f_s_dot - e.f_s * e.f_c_dot) / sol.omega
}

/// Trace of the one-period monodromy matrix of `y'' + (a − 2q cos 2τ) y = 0`.
pub fn monodromy_trace(a: f64, q: f64, rtol: f64) -> Result<f64> {
    let rhs = |tau: f64, y: &[f64; 4]| {
        let k = a - 2.0 * q * (2.0 * tau).cos();
        [y[1], -k * y[0], y[3], -k * y[2]]
    };
    let period = std::f64::consts::PI;
    let mut stepper = Dopri5::<4>::new(OdeOptions::new(rtol, period / 50.0));
    let y = stepper.advance(&rhs, 0.0, [1.0, 0.0, 0.0, 1.0], period)?;
    Ok(y[0] + y[3])
}

/// True iff `(a, q)` lies strictly inside a stability region (|trace| < 2).
pub fn is_stable(a: f64, q: f64, rf_ratio: f64) -> bool {
    if !(a.is_finite() && q.is_finite() && rf_ratio > 0.0) {
        return false;
    }
    matches!(monodromy_trace(a, q, MONODROMY_RTOL), Ok(t) if t.abs() < 2.0)
}

/// Characteristic exponent from direct integration over one drive period.
pub fn monodromy_exponent(p: &MathieuParams, ode_tol: f64) -> Result<f64> {
    p.validate()?;
    let trace = monodromy_trace(p.a, p.q, ode_tol)?;
    if trace.abs() >= 2.0 {
        return Err(Error::NotStable { a: p.a, q: p.q });
    }
    Ok((0.5 * trace).acos() / std::f64::consts::PI)
}
