//! Adaptive Dormand–Prince 5(4) integrator for small fixed-size linear systems.
//!
//! The stepper keeps its step size between calls so that a trajectory can be
//! advanced segment by segment (kick to kick) without re-learning the scale.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Step-size ceiling.
    pub h_max: f64,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn new(rtol: f64, h_max: f64) -> Self {
        Self { rtol, atol: rtol * 1e-3, h_max, max_steps: 50_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Largest accepted local error estimate (in units of the tolerance).
    pub max_error_ratio: f64,
}

/// Stateful stepper for an `N`-dimensional system `y' = f(t, y)`.
#[derive(Debug, Clone)]
pub struct Dopri5<const N: usize> {
    opts: OdeOptions,
    h: f64,
    pub stats: OdeStats,
}

impl<const N: usize> Dopri5<N> {
    pub fn new(opts: OdeOptions) -> Self {
        let h = (opts.h_max * 0.1).max(f64::MIN_POSITIVE);
        Self { opts, h, stats: OdeStats::default() }
    }

    /// Integrate from `(t0, y0)` to exactly `t1 >= t0`.
    pub fn advance<F>(&mut self, f: &F, t0: f64, y0: [f64; N], t1: f64) -> Result<[f64; N]>
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
    {
        let mut t = t0;
        let mut y = y0;
        if t1 <= t0 {
            return Ok(y);
        }
        let mut k1 = f(t, &y);
        let mut steps = 0usize;
        loop {
            let remaining = t1 - t;
            if remaining <= 0.0 {
                return Ok(y);
            }
            let mut h = self.h.min(self.opts.h_max);
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            if h <= 1e-15 * t.abs().max(1.0) && !last {
                return Err(Error::IntegratorFailure { t, h });
            }
            let (y_new, k7, err) = self.step(f, t, &y, &k1, h);
            steps += 1;
            if steps > self.opts.max_steps {
                return Err(Error::NoConvergence { what: "ode integration", iterations: steps });
            }
            if err <= 1.0 {
                self.stats.accepted += 1;
                self.stats.max_error_ratio = self.stats.max_error_ratio.max(err);
                t = if last { t1 } else { t + h };
                y = y_new;
                k1 = k7;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // keep the previous scale when the step was clipped to hit t1
                if !last || fac < 1.0 {
                    self.h = h * fac;
                }
                if last {
                    return Ok(y);
                }
            } else {
                self.stats.rejected += 1;
                let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                self.h = h * fac;
                if self.h <= 1e-15 * t.abs().max(1.0) {
                    return Err(Error::IntegratorFailure { t, h: self.h });
                }
            }
        }
    }

    fn step<F>(&self, f: &F, t: f64, y: &[f64; N], k1: &[f64; N], h: f64) -> ([f64; N], [f64; N], f64)
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
    {
        let stage = |coef: &[(f64, &[f64; N])]| {
            let mut out = *y;
            for (c, k) in coef {
                for i in 0..N {
                    out[i] += h * c * k[i];
                }
            }
            out
        };
        let k2 = f(t + C2 * h, &stage(&[(A21, k1)]));
        let k3 = f(t + C3 * h, &stage(&[(A31, k1), (A32, &k2)]));
        let k4 = f(t + C4 * h, &stage(&[(A41, k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(t + C5 * h, &stage(&[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = f(t + h, &stage(&[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
        let y_new = stage(&[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
        let k7 = f(t + h, &y_new);

        let mut acc = 0.0;
        for i in 0..N {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = self.opts.atol + self.opts.rtol * y[i].abs().max(y_new[i].abs());
            acc += (e / scale).powi(2);
        }
        (y_new, k7, (acc / N as f64).sqrt())
    }
}
