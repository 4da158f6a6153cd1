//! Run configuration: flat config file values overlaid by command-line flags.

use serde::{Deserialize, Serialize};

use fastgate::noise::NoiseKind;

/// Every key accepted in a `--config` file. All are optional; the documented
/// default applies when neither the file nor a flag sets a value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // trap
    pub q_x: Option<f64>,
    pub rf_ratio: Option<f64>,
    pub chi: Option<f64>,
    pub eta: Option<f64>,
    pub rf_phase: Option<f64>,
    // search
    /// Gate time in trap periods.
    pub gate_time: Option<f64>,
    /// Repetition rate in units of ω₀/2π; absent or `inf` for unlimited.
    pub rep_rate: Option<f64>,
    pub n_groups: Option<usize>,
    pub multistarts: Option<usize>,
    pub stage1_iters: Option<usize>,
    pub stage2_iters: Option<usize>,
    pub z_bound: Option<i32>,
    pub fidelity_target: Option<f64>,
    pub fidelity_floor: Option<f64>,
    pub sparsity: Option<f64>,
    pub n_cm: Option<f64>,
    pub n_br: Option<f64>,
    // noise
    pub kind: Option<NoiseKind>,
    pub sigma: Option<f64>,
    pub samples: Option<usize>,
    pub m_max: Option<usize>,
    pub flip_fraction: Option<f64>,
    pub bins: Option<usize>,
    pub common_random_numbers: Option<bool>,
    // common
    pub seed: Option<u64>,
}

pub const DEFAULT_RF_RATIO: f64 = 40.0;
pub const DEFAULT_CHI: f64 = -0.014;
pub const DEFAULT_ETA: f64 = 0.15;

impl RunConfig {
    /// `other`'s values win where set.
    pub fn overlay(mut self, other: &RunConfig) -> RunConfig {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            q_x, rf_ratio, chi, eta, rf_phase, gate_time, rep_rate, n_groups, multistarts, stage1_iters, stage2_iters, z_bound,
            fidelity_target, fidelity_floor, sparsity, n_cm, n_br, kind, sigma, samples, m_max, flip_fraction, bins,
            common_random_numbers, seed
        );
        self
    }
}
