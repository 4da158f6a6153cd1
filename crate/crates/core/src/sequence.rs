//! Kick schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when checking the minimum spacing between unit kicks.
pub const SPACING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kick {
    pub t: f64,
    pub z: i32,
}

/// SDK repetition rate; `Finite(f)` is in units of ω₀/2π, so unit kicks are
/// at least `2π/f` apart in trap time units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepRate {
    Infinite,
    Finite(f64),
}

impl RepRate {
    /// Minimum spacing between unit kicks (0 for an infinite rate).
    pub fn spacing(&self) -> f64 {
        match *self {
            RepRate::Infinite => 0.0,
            RepRate::Finite(f) => std::f64::consts::TAU / f,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, RepRate::Finite(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KickSequence {
    pub kicks: Vec<Kick>,
    pub gate_time: f64,
    pub rep_rate: RepRate,
}

/// A weighted impulse at a definite time; the unit the kernels work with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impulse {
    pub t: f64,
    pub weight: f64,
}

impl KickSequence {
    pub fn new(kicks: Vec<Kick>, gate_time: f64, rep_rate: RepRate) -> Result<Self> {
        let seq = Self { kicks, gate_time, rep_rate };
        seq.validate()?;
        Ok(seq)
    }

    pub fn empty(gate_time: f64) -> Self {
        Self { kicks: Vec::new(), gate_time, rep_rate: RepRate::Infinite }
    }

    /// Total number of SDKs 𝒩 = Σ|z_j|.
    pub fn n_sdk(&self) -> u64 {
        self.kicks.iter().map(|k| k.z.unsigned_abs() as u64).sum()
    }

    /// Impulses used for evaluation. Under a finite repetition rate every group
    /// is expanded into unit kicks spaced by the minimum spacing; otherwise a
    /// group is one impulse of weight z. Zero-weight groups are dropped.
    pub fn impulses(&self) -> Vec<Impulse> {
        let mut out = Vec::with_capacity(self.kicks.len());
        match self.rep_rate {
            RepRate::Infinite => {
                out.extend(self.kicks.iter().filter(|k| k.z != 0).map(|k| Impulse { t: k.t, weight: k.z as f64 }));
            }
            RepRate::Finite(_) => {
                let s = self.rep_rate.spacing();
                for k in &self.kicks {
                    let sign = k.z.signum() as f64;
                    for r in 0..k.z.unsigned_abs() {
                        out.push(Impulse { t: k.t + r as f64 * s, weight: sign });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gate_time.is_finite() {
            return Err(Error::InvalidSequence("gate time must be finite".into()));
        }
        if let RepRate::Finite(f) = self.rep_rate {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidSequence(format!("repetition rate must be positive, got {f}")));
            }
        }
        for w in self.kicks.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::InvalidSequence(format!("kick times not strictly increasing at t = {}", w[1].t)));
            }
        }
        if self.kicks.iter().any(|k| !k.t.is_finite()) {
            return Err(Error::InvalidSequence("non-finite kick time".into()));
        }
        let imp = self.impulses();
        if self.rep_rate.is_finite() {
            let s = self.rep_rate.spacing();
            for w in imp.windows(2) {
                if w[1].t - w[0].t < s - SPACING_SLACK {
                    return Err(Error::InvalidSequence(format!(
                        "unit kicks at {} and {} closer than the minimum spacing {s}",
                        w[0].t, w[1].t
                    )));
                }
            }
        }
        if let Some(last) = imp.last() {
            if last.t > self.gate_time + SPACING_SLACK {
                return Err(Error::InvalidSequence(format!("kick at {} after the gate time {}", last.t, self.gate_time)));
            }
        }
        Ok(())
    }

    /// Smallest gap between consecutive impulses (infinite for fewer than two).
    pub fn min_gap(&self) -> f64 {
        self.impulses().windows(2).map(|w| w[1].t - w[0].t).fold(f64::INFINITY, f64::min)
    }
}
