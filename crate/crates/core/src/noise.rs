//! Robustness of a gate solution: the SDK population bound, Monte-Carlo
//! motional errors from faulty kicks, and shot-to-shot parameter noise.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::gatekernel::{KickBasis, ThermalState};
use crate::gpg::{rng_for, GateSolution};
use crate::sequence::KickSequence;
use crate::trap::{calibrate, TrapConfig};

/// Binomial tail mass beyond `m_max` above which a truncation warning is raised.
pub const TAIL_WARNING: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    SdkError,
    TimingJitter,
    RepPeriod,
    ModeSplitting,
    RfPhase,
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::SdkError => "sdk_error",
            NoiseKind::TimingJitter => "timing_jitter",
            NoiseKind::RepPeriod => "rep_period",
            NoiseKind::ModeSplitting => "mode_splitting",
            NoiseKind::RfPhase => "rf_phase",
        }
    }
}

/// A noise channel. `sigma` is the error probability for `sdk_error`, a width in
/// trap periods for the timing channels, a width in χ for `mode_splitting` and
/// in radians for `rf_phase`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseChannel {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub samples: usize,
    pub seed: u64,
    /// Largest number of simultaneous kick errors in the stratified estimate.
    pub m_max: usize,
    /// Probability that a faulty kick is reversed rather than dropped.
    pub flip_fraction: f64,
    pub bins: usize,
    /// Reuse the same standard-normal draws for every `sigma`.
    pub common_random_numbers: bool,
}

impl NoiseChannel {
    pub fn new(kind: NoiseKind, sigma: f64, samples: usize, seed: u64) -> Self {
        Self { kind, sigma, samples, seed, m_max: 3, flip_fraction: 0.5, bins: 50, common_random_numbers: false }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if self.samples < 1 {
            return bad("samples must be at least 1".into());
        }
        if self.bins < 1 {
            return bad("bins must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            return bad(format!("flip_fraction must lie in [0, 1], got {}", self.flip_fraction));
        }
        if self.kind == NoiseKind::SdkError && self.sigma > 1.0 {
            return bad(format!("error probability must be at most 1, got {}", self.sigma));
        }
        Ok(())
    }

    /// Seed for the per-sample streams; independent across `sigma` unless CRN is on.
    fn stream_seed(&self) -> u64 {
        if self.common_random_numbers {
            self.seed
        } else {
            splitmix(self.seed ^ splitmix(self.sigma.to_bits()))
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Normalized histogram over `[lo, hi]`; `mass` sums to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub mass: Vec<f64>,
}

impl Histogram {
    /// Weighted histogram; weights need not be normalized.
    pub fn weighted(values: &[(f64, f64)], bins: usize) -> Self {
        let lo = values.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
        let hi = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
        let bins = bins.max(1);
        let mut mass = vec![0.0; bins];
        if values.is_empty() {
            return Self { lo: 0.0, hi: 0.0, mass };
        }
        let width = hi - lo;
        let total: f64 = values.iter().map(|v| v.1).sum();
        for &(x, w) in values {
            let b = if width > 0.0 { (((x - lo) / width) * bins as f64) as usize } else { 0 };
            mass[b.min(bins - 1)] += w / total;
        }
        Self { lo, hi, mass }
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.mass.len();
        (0..=n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub channel: NoiseChannel,
    /// Mean infidelity μ.
    pub mean: f64,
    /// Variance ς² of the infidelity.
    pub variance: f64,
    /// Standard error of `mean`.
    pub std_error: f64,
    pub samples: usize,
    /// Samples that could not be evaluated (e.g. failed recalibration).
    pub failures: usize,
    pub baseline: f64,
    pub histogram: Histogram,
    pub notes: Vec<String>,
}

/// Stratified estimate over the number of faulty kicks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdkMixture {
    pub n_sdk: u64,
    /// Binomial weights for m = 0..=m_max.
    pub weights: Vec<f64>,
    /// Probability of more than `m_max` errors.
    pub tail_mass: f64,
    pub conditional_means: Vec<f64>,
    pub conditional_variances: Vec<f64>,
    /// `Σ_m w_m μ_m` over m ≤ m_max.
    pub mean: f64,
    /// `mean + tail_mass`, an upper bound on the untruncated mean infidelity.
    pub mean_upper: f64,
    /// Plain Monte-Carlo mean with independent errors at rate ε on every kick.
    pub direct_mean: f64,
    pub direct_std_error: f64,
    pub stratified_std_error: f64,
    pub truncation_warning: bool,
}

impl SdkMixture {
    /// Difference between the stratified and direct means in combined standard errors.
    pub fn consistency_sigmas(&self) -> f64 {
        let se = (self.direct_std_error.powi(2) + self.stratified_std_error.powi(2)).sqrt();
        let d = (self.mean - self.direct_mean).abs();
        if se > 0.0 {
            d / se
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Lower bound `(1 − 𝒩ε)² F₀` on the fidelity with SDK population errors.
pub fn population_bound(f0: f64, n_sdk: u64, eps: f64) -> Result<f64> {
    if !(eps >= 0.0) {
        return Err(Error::DomainError(format!("error probability must be non-negative, got {eps}")));
    }
    let x = n_sdk as f64 * eps;
    if x >= 1.0 {
        return Err(Error::DomainError(format!("N eps = {x} must be below 1")));
    }
    Ok((1.0 - x).powi(2) * f0)
}

/// Binomial probabilities `C(n, m) ε^m (1 − ε)^(n − m)` for m = 0..=n.
pub fn binomial_weights(n: u64, eps: f64) -> Vec<f64> {
    let n_us = n as usize;
    let mut w = vec![0.0; n_us + 1];
    if eps <= 0.0 {
        w[0] = 1.0;
        return w;
    }
    if eps >= 1.0 {
        w[n_us] = 1.0;
        return w;
    }
    // log-space start avoids underflow of (1 − ε)^n for long sequences
    let ratio = eps / (1.0 - eps);
    let mut log_w = n as f64 * (-eps).ln_1p();
    for (m, slot) in w.iter_mut().enumerate() {
        if m > 0 {
            log_w += ((n - m as u64 + 1) as f64 / m as f64).ln() + ratio.ln();
        }
        *slot = log_w.exp();
    }
    w
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    // shifted by the first value so constant inputs give that value exactly
    let x0 = xs[0];
    let mean = x0 + xs.iter().map(|x| x - x0).sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// Unit impulses of a sequence. Groups under an infinite rate become |z|
/// coincident unit kicks so that each can fail on its own.
fn unit_impulses(seq: &KickSequence) -> (Vec<f64>, Vec<f64>) {
    let s = seq.rep_rate.spacing();
    let mut t = Vec::new();
    let mut w = Vec::new();
    for k in &seq.kicks {
        for r in 0..k.z.unsigned_abs() {
            t.push(k.t + r as f64 * s);
            w.push(k.z.signum() as f64);
        }
    }
    (t, w)
}

fn corrupt<R: Rng>(w: &mut [f64], idx: impl Iterator<Item = usize>, flip_fraction: f64, rng: &mut R) {
    for i in idx {
        w[i] = if rng.random::<f64>() < flip_fraction { -w[i] } else { 0.0 };
    }
}

fn report(channel: &NoiseChannel, values: &[f64], failures: usize, baseline: f64, notes: Vec<String>) -> NoiseReport {
    let (mean, variance) = if values.is_empty() { (f64::NAN, f64::NAN) } else { mean_var(values) };
    let weighted: Vec<(f64, f64)> = values.iter().map(|&v| (v, 1.0)).collect();
    NoiseReport {
        channel: channel.clone(),
        mean,
        variance,
        std_error: (variance / values.len().max(1) as f64).sqrt(),
        samples: values.len(),
        failures,
        baseline,
        histogram: Histogram::weighted(&weighted, channel.bins),
        notes,
    }
}

/// Motional errors from faulty SDKs: the stratified mixture over m ≤ m_max errors
/// together with a direct Monte-Carlo estimate at the same rate.
pub fn mc_sdk_errors(sol: &GateSolution, ch: &NoiseChannel, thermal: &ThermalState) -> Result<(NoiseReport, SdkMixture)> {
    if ch.kind != NoiseKind::SdkError {
        return Err(Error::InvalidParameter(format!("expected sdk_error channel, got {}", ch.kind.name())));
    }
    ch.validate()?;
    let trap = TrapConfig::from_record(&sol.trap)?;
    let (times, w0) = unit_impulses(&sol.sequence);
    let basis = KickBasis::new(&trap, thermal, &times, sol.sequence.gate_time);
    let n = times.len();
    let n_sdk = n as u64;
    let baseline = basis.cost(&w0);
    let eps = ch.sigma;

    let all = binomial_weights(n_sdk, eps);
    let m_top = ch.m_max.min(n);
    let weights: Vec<f64> = all[..=m_top].to_vec();
    let tail_mass = all[m_top + 1..].iter().sum::<f64>();
    let seed = ch.stream_seed();

    let mut conditional_means = Vec::with_capacity(m_top + 1);
    let mut conditional_variances = Vec::with_capacity(m_top + 1);
    let mut hist_values: Vec<(f64, f64)> = Vec::new();
    for m in 0..=m_top {
        let vals: Vec<f64> = if m == 0 {
            vec![baseline]
        } else {
            (0..ch.samples)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng_for(seed, ((m as u64) << 32) | i as u64);
                    let mut w = w0.clone();
                    let idx = sample(&mut rng, n, m);
                    corrupt(&mut w, idx.into_iter(), ch.flip_fraction, &mut rng);
                    basis.cost(&w)
                })
                .collect()
        };
        let (mu, var) = mean_var(&vals);
        let share = weights[m] / vals.len() as f64;
        hist_values.extend(vals.iter().map(|&v| (v, share)));
        conditional_means.push(mu);
        conditional_variances.push(var);
    }
    let mean: f64 = weights.iter().zip(&conditional_means).map(|(w, mu)| w * mu).sum();
    let kept: f64 = weights.iter().sum();
    let second: f64 =
        weights.iter().zip(&conditional_means).zip(&conditional_variances).map(|((w, mu), v)| w * (v + mu * mu)).sum::<f64>() / kept;
    let variance = (second - (mean / kept).powi(2)).max(0.0);
    let stratified_var: f64 = weights
        .iter()
        .zip(&conditional_variances)
        .enumerate()
        .map(|(m, (w, v))| if m == 0 { 0.0 } else { w * w * v / ch.samples as f64 })
        .sum();

    let direct: Vec<f64> = (0..ch.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, ((m_top as u64 + 1) << 32) | i as u64);
            let mut w = w0.clone();
            let faulty: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < eps).collect();
            corrupt(&mut w, faulty.into_iter(), ch.flip_fraction, &mut rng);
            basis.cost(&w)
        })
        .collect();
    let (direct_mean, direct_var) = mean_var(&direct);

    let truncation_warning = tail_mass > TAIL_WARNING;
    let mut notes = vec![format!("stratified over m <= {m_top} errors among {n} unit kicks")];
    if truncation_warning {
        notes.push(format!("truncation warning: binomial tail mass beyond m_max is {tail_mass:e}"));
    }
    let mixture = SdkMixture {
        n_sdk,
        weights,
        tail_mass,
        conditional_means,
        conditional_variances,
        mean,
        mean_upper: mean + tail_mass,
        direct_mean,
        direct_std_error: (direct_var / ch.samples as f64).sqrt(),
        stratified_std_error: stratified_var.sqrt(),
        truncation_warning,
    };
    let report = NoiseReport {
        channel: ch.clone(),
        mean,
        variance,
        std_error: mixture.stratified_std_error,
        samples: ch.samples,
        failures: 0,
        baseline,
        histogram: Histogram::weighted(&hist_values, ch.bins),
        notes,
    };
    Ok((report, mixture))
}

/// Sort and push apart pairs closer than `gap`, symmetrically, until none remain.
pub fn enforce_min_gap(t: &mut [f64], gap: f64) {
    t.sort_by(f64::total_cmp);
    if gap <= 0.0 || t.len() < 2 {
        return;
    }
    let tol = gap * 1e-12;
    for _ in 0..10_000 {
        let mut moved = false;
        for i in 1..t.len() {
            let d = t[i] - t[i - 1];
            if d < gap - tol {
                let push = 0.5 * (gap - d);
                t[i - 1] -= push;
                t[i] += push;
                moved = true;
            }
        }
        if !moved {
            return;
        }
    }
    // fall back to a forward sweep if the symmetric pushes stall
    for i in 1..t.len() {
        t[i] = t[i].max(t[i - 1] + gap);
    }
}

/// Infidelity of a fixed-weight impulse list on a trap.
fn impulse_cost(trap: &TrapConfig, thermal: &ThermalState, times: &[f64], w: &[f64], gate_time: f64) -> f64 {
    KickBasis::new(trap, thermal, times, gate_time).cost(w)
}

/// Ensemble statistics under shot-to-shot timing, repetition-period,
/// mode-splitting or RF-phase noise.
pub fn mc_parameter_noise(sol: &GateSolution, ch: &NoiseChannel, thermal: &ThermalState) -> Result<NoiseReport> {
    if ch.kind == NoiseKind::SdkError {
        return Err(Error::InvalidParameter("sdk_error is handled by mc_sdk_errors".into()));
    }
    ch.validate()?;
    let trap = TrapConfig::from_record(&sol.trap)?;
    let seq = &sol.sequence;
    let gate_time = seq.gate_time;
    let (times, w0) = unit_impulses(seq);
    let baseline = impulse_cost(&trap, thermal, &times, &w0, gate_time);
    let mut notes = Vec::new();

    let inert = ch.kind == NoiseKind::RepPeriod && !seq.rep_rate.is_finite();
    if ch.sigma == 0.0 || inert {
        notes.push(if inert {
            "infinite repetition rate: groups have no internal spacing to perturb".into()
        } else {
            "zero width: single deterministic evaluation".into()
        });
        return Ok(NoiseReport {
            channel: ch.clone(),
            mean: baseline,
            variance: 0.0,
            std_error: 0.0,
            samples: ch.samples,
            failures: 0,
            baseline,
            histogram: Histogram::weighted(&[(baseline, 1.0)], ch.bins),
            notes,
        });
    }
    let seed = ch.stream_seed();
    let spacing = seq.rep_rate.spacing();
    match ch.kind {
        NoiseKind::TimingJitter => notes.push("min-gap restored by symmetric push-apart projection".into()),
        NoiseKind::RepPeriod => notes.push("one spacing draw per shot, group starts fixed".into()),
        NoiseKind::ModeSplitting => notes.push("trap recalibrated for every sample".into()),
        NoiseKind::RfPhase => notes.push("drive phase wrapped to [0, 2pi)".into()),
        NoiseKind::SdkError => unreachable!(),
    }

    let results: Vec<Option<f64>> = (0..ch.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
            match ch.kind {
                NoiseKind::TimingJitter => {
                    let width = ch.sigma * TAU;
                    let mut pairs: Vec<(f64, f64)> = times.iter().zip(&w0).map(|(&t, &w)| (t + width * normal(), w)).collect();
                    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let mut t: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                    let w: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                    enforce_min_gap(&mut t, spacing);
                    Some(impulse_cost(&trap, thermal, &t, &w, gate_time))
                }
                NoiseKind::RepPeriod => {
                    let s = (spacing + ch.sigma * TAU * normal()).max(0.0);
                    let mut t = Vec::with_capacity(times.len());
                    for k in &seq.kicks {
                        for r in 0..k.z.unsigned_abs() {
                            t.push(k.t + r as f64 * s);
                        }
                    }
                    let mut pairs: Vec<(f64, f64)> = t.into_iter().zip(w0.iter().copied()).collect();
                    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let (t, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                    Some(impulse_cost(&trap, thermal, &t, &w, gate_time))
                }
                NoiseKind::ModeSplitting => {
                    let chi = trap.chi + ch.sigma * normal();
                    calibrate(trap.q_x, trap.rf_ratio, chi, trap.eta, trap.rf_phase)
                        .ok()
                        .map(|tr| impulse_cost(&tr, thermal, &times, &w0, gate_time))
                }
                NoiseKind::RfPhase => {
                    let phase = (trap.rf_phase + ch.sigma * normal()).rem_euclid(TAU);
                    trap.with_rf_phase(phase).ok().map(|tr| impulse_cost(&tr, thermal, &times, &w0, gate_time))
                }
                NoiseKind::SdkError => unreachable!(),
            }
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    let values: Vec<f64> = results.into_iter().flatten().collect();
    if values.is_empty() {
        return Err(Error::CalibrationFailure(format!("all {} samples failed", ch.samples)));
    }
    if failures > 0 {
        notes.push(format!("{failures} samples failed and were excluded"));
    }
    Ok(report(ch, &values, failures, baseline, notes))
}
