#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod io;

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use config::{RunConfig, DEFAULT_CHI, DEFAULT_ETA, DEFAULT_RF_RATIO};
use fastgate::floquet::{characteristic_exponent, monodromy_trace, MathieuParams, BETA_TOL, MONODROMY_RTOL};
use fastgate::gatekernel::{evaluate, GateMetrics, ThermalState};
use fastgate::gpg::{solve_gate, sweep, GateSolution, SearchConfig, SweepAxis};
use fastgate::noise::{mc_parameter_noise, mc_sdk_errors, NoiseChannel, NoiseKind, NoiseReport, SdkMixture};
use fastgate::oracle::{action_phase, displacement_samples, integrate, oracle_metrics, theta_samples, ORACLE_RTOL};
use fastgate::sequence::RepRate;
use fastgate::trap::{calibrate, ModeLabel, TrapConfig, TrapRecord};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_NO_SOLUTION: u8 = 4;

/// Design and verify impulsive two-qubit gates in a Paul trap.
#[derive(Parser, Debug)]
#[command(name = "fastgate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// RNG seed for randomized commands (default 0); recorded in the output.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Thread cap for parallel work.
    #[arg(long, global = true, env = "FASTGATE_THREADS")]
    threads: Option<usize>,
    /// Output file (stdout when omitted). Written atomically.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tolerance: comparison tolerance for `verify` (default 1e-6), ODE tolerance for `traj`.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Flat `key = value` config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Calibrate the trap so that ω_CM = 1 and ω_BR = 1 + χ.
    Calibrate(TrapArgs),
    /// Search for a gate solution.
    Solve {
        #[arg(long)]
        trap: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Recompute the metrics of a stored solution.
    Eval {
        #[arg(long)]
        solution: PathBuf,
    },
    /// Compare analytic metrics with the ODE and action-phase oracle.
    Verify {
        #[arg(long)]
        solution: PathBuf,
    },
    /// Best infidelity against gate time (grid in trap periods).
    SweepTime {
        #[arg(long, required = true)]
        trap: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Best infidelity against repetition rate (grid in ω₀/2π).
    SweepReprate {
        #[arg(long, required = true)]
        trap: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Monte-Carlo robustness of a solution under one noise channel.
    Noise {
        #[arg(long)]
        solution: PathBuf,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Phase-space trajectory and accumulated phase of a solution.
    Traj {
        #[arg(long)]
        solution: PathBuf,
        /// Number of sample times over [0, t_g].
        #[arg(long, default_value_t = 400)]
        points: usize,
    },
    /// Rasterize the (a, q) stability chart.
    Stability {
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        a_min: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        a_max: f64,
        #[arg(long, default_value_t = 0.0)]
        q_min: f64,
        #[arg(long, default_value_t = 1.2)]
        q_max: f64,
        #[arg(long, default_value_t = 101)]
        na: usize,
        #[arg(long, default_value_t = 101)]
        nq: usize,
    },
}

#[derive(Args, Debug, Default)]
struct TrapArgs {
    /// Mathieu q of the radial direction (default 0.01).
    #[arg(long = "qx")]
    q_x: Option<f64>,
    /// Ω_RF/ω₀ (default 40).
    #[arg(long)]
    rf_ratio: Option<f64>,
    /// Breathing-mode splitting χ (default -0.014).
    #[arg(long, allow_hyphen_values = true)]
    chi: Option<f64>,
    /// Lamb-Dicke parameter of the CM mode (default 0.15).
    #[arg(long)]
    eta: Option<f64>,
    /// RF phase in radians (default 0).
    #[arg(long, allow_hyphen_values = true)]
    rf_phase: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct SearchArgs {
    /// Gate time in trap periods (default 1.5).
    #[arg(long)]
    gate_time: Option<f64>,
    /// Repetition rate in ω₀/2π; `inf` for unlimited (default).
    #[arg(long)]
    rep_rate: Option<f64>,
    /// Uniform groups M (default ⌈4 t_g Ω/2π⌉).
    #[arg(long)]
    n_groups: Option<usize>,
    #[arg(long)]
    multistarts: Option<usize>,
    #[arg(long)]
    stage1_iters: Option<usize>,
    #[arg(long)]
    stage2_iters: Option<usize>,
    #[arg(long)]
    z_bound: Option<i32>,
    #[arg(long)]
    fidelity_target: Option<f64>,
    #[arg(long)]
    fidelity_floor: Option<f64>,
    #[arg(long)]
    sparsity: Option<f64>,
    /// Mean CM occupation used in the cost (default 0).
    #[arg(long)]
    n_cm: Option<f64>,
    /// Mean BR occupation used in the cost (default 0).
    #[arg(long)]
    n_br: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct NoiseArgs {
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// Channel width: probability, trap periods, Δχ or radians depending on the kind.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long)]
    flip_fraction: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
    /// Share standard-normal draws across widths.
    #[arg(long)]
    crn: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum KindArg {
    SdkError,
    TimingJitter,
    RepPeriod,
    ModeSplitting,
    RfPhase,
}

impl From<KindArg> for NoiseKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::SdkError => NoiseKind::SdkError,
            KindArg::TimingJitter => NoiseKind::TimingJitter,
            KindArg::RepPeriod => NoiseKind::RepPeriod,
            KindArg::ModeSplitting => NoiseKind::ModeSplitting,
            KindArg::RfPhase => NoiseKind::RfPhase,
        }
    }
}

impl TrapArgs {
    fn config(&self) -> RunConfig {
        RunConfig { q_x: self.q_x, rf_ratio: self.rf_ratio, chi: self.chi, eta: self.eta, rf_phase: self.rf_phase, ..Default::default() }
    }
}

impl SearchArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            gate_time: self.gate_time,
            rep_rate: self.rep_rate,
            n_groups: self.n_groups,
            multistarts: self.multistarts,
            stage1_iters: self.stage1_iters,
            stage2_iters: self.stage2_iters,
            z_bound: self.z_bound,
            fidelity_target: self.fidelity_target,
            fidelity_floor: self.fidelity_floor,
            sparsity: self.sparsity,
            n_cm: self.n_cm,
            n_br: self.n_br,
            ..Default::default()
        }
    }
}

impl NoiseArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            kind: self.kind.map(Into::into),
            sigma: self.sigma,
            samples: self.samples,
            m_max: self.m_max,
            flip_fraction: self.flip_fraction,
            bins: self.bins,
            common_random_numbers: self.crn.then_some(true),
            ..Default::default()
        }
    }
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn classify(error: anyhow::Error) -> Failure {
    use fastgate::Error as E;
    let code = match error.chain().find_map(|e| e.downcast_ref::<E>()) {
        Some(E::NoSolution { .. } | E::NoCandidates { .. }) => EXIT_NO_SOLUTION,
        Some(
            E::InvalidParameter(_)
            | E::InvalidSequence(_)
            | E::InvalidSpacing(_)
            | E::InfeasibleSpacing { .. }
            | E::DomainError(_)
            | E::Serialization(_),
        ) => EXIT_CONFIG,
        Some(_) => EXIT_NUMERICAL,
        None if error.chain().any(|e| e.downcast_ref::<Mismatch>().is_some()) => EXIT_NUMERICAL,
        None => EXIT_CONFIG,
    };
    Failure { code, error }
}

/// Oracle and analytic metrics disagree.
#[derive(Debug)]
struct Mismatch(f64);

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "oracle and analytic metrics differ by {:e}", self.0)
    }
}

impl std::error::Error for Mismatch {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let f = classify(e);
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let file = match &cli.config {
        Some(p) => io::read_flat::<RunConfig>(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Calibrate(args) => cmd_calibrate(&file.overlay(&args.config()), out),
        Command::Solve { trap, search } => cmd_solve(trap, &file.overlay(&search.config()), seed, out),
        Command::Eval { solution } => cmd_eval(solution, out),
        Command::Verify { solution } => cmd_verify(solution, cli.tol.unwrap_or(1e-6), out),
        Command::SweepTime { trap, grid, search } => {
            cmd_sweep(trap, SweepAxis::GateTime, grid, &file.overlay(&search.config()), seed, out)
        }
        Command::SweepReprate { trap, grid, search } => {
            cmd_sweep(trap, SweepAxis::RepRate, grid, &file.overlay(&search.config()), seed, out)
        }
        Command::Noise { solution, noise } => cmd_noise(solution, &file.overlay(&noise.config()), seed, out),
        Command::Traj { solution, points } => cmd_traj(solution, *points, cli.tol.unwrap_or(ORACLE_RTOL), out),
        Command::Stability { a_min, a_max, q_min, q_max, na, nq } => cmd_stability((*a_min, *a_max), (*q_min, *q_max), (*na, *nq), out),
    }
}

fn load_trap(path: &Path) -> Result<TrapConfig> {
    let record: TrapRecord = io::read_flat(path)?;
    Ok(TrapConfig::from_record(&record)?)
}

fn load_solution(path: &Path) -> Result<GateSolution> {
    io::read_json(path)
}

fn cmd_calibrate(c: &RunConfig, out: Option<&Path>) -> Result<()> {
    let trap = calibrate(
        c.q_x.unwrap_or(0.01),
        c.rf_ratio.unwrap_or(DEFAULT_RF_RATIO),
        c.chi.unwrap_or(DEFAULT_CHI),
        c.eta.unwrap_or(DEFAULT_ETA),
        c.rf_phase.unwrap_or(0.0),
    )?;
    io::emit(out, &io::to_flat("calibrated trap; a_cm and a_br give omega_cm = 1 and omega_br = 1 + chi", &trap.record())?)
}

fn search_config(trap: &TrapConfig, c: &RunConfig, seed: u64) -> Result<SearchConfig> {
    let gate_time = c.gate_time.unwrap_or(1.5) * TAU;
    let rep_rate = match c.rep_rate {
        Some(f) if f.is_infinite() => RepRate::Infinite,
        Some(f) => RepRate::Finite(f),
        None => RepRate::Infinite,
    };
    let mut cfg = SearchConfig::new(trap, gate_time, rep_rate, seed);
    if let Some(v) = c.n_groups {
        cfg.n_groups = v;
    }
    if let Some(v) = c.multistarts {
        cfg.multistarts = v;
    }
    if let Some(v) = c.stage1_iters {
        cfg.stage1_iters = v;
    }
    if let Some(v) = c.stage2_iters {
        cfg.stage2_iters = v;
    }
    if let Some(v) = c.z_bound {
        cfg.z_bound = v;
    }
    if let Some(v) = c.fidelity_target {
        cfg.fidelity_target = v;
    }
    if let Some(v) = c.fidelity_floor {
        cfg.fidelity_floor = v;
    }
    if let Some(v) = c.sparsity {
        cfg.sparsity = v;
    }
    cfg.thermal = ThermalState { n_cm: c.n_cm.unwrap_or(0.0), n_br: c.n_br.unwrap_or(0.0) };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_solve(trap_path: &Path, c: &RunConfig, seed: u64, out: Option<&Path>) -> Result<()> {
    let trap = load_trap(trap_path)?;
    let cfg = search_config(&trap, c, seed)?;
    let outcome = solve_gate(&trap, &cfg)?;
    let best = &outcome.best;
    eprintln!(
        "best: infidelity {:e}, {} SDKs in {} groups ({} candidates refined)",
        best.metrics.infidelity,
        best.metrics.n_sdk,
        best.sequence.kicks.len(),
        outcome.ranked.len()
    );
    io::emit(out, &io::to_json(best)?)
}

#[derive(Serialize)]
struct EvalOutput {
    metrics: GateMetrics,
    fidelity: f64,
    matches_stored: bool,
}

fn cmd_eval(path: &Path, out: Option<&Path>) -> Result<()> {
    let sol = load_solution(path)?;
    let metrics = sol.reevaluate()?;
    let matches_stored = metrics == sol.metrics;
    io::emit(out, &io::to_json(&EvalOutput { fidelity: metrics.fidelity(), metrics, matches_stored })?)
}

#[derive(Serialize)]
struct VerifyOutput {
    analytic: GateMetrics,
    oracle: GateMetrics,
    theta_deviation: f64,
    displacement_deviation: f64,
    infidelity_deviation: f64,
    tolerance: f64,
    pass: bool,
}

fn cmd_verify(path: &Path, tol: f64, out: Option<&Path>) -> Result<()> {
    if !(tol > 0.0) {
        bail!("--tol must be positive, got {tol}");
    }
    let sol = load_solution(path)?;
    let trap = TrapConfig::from_record(&sol.trap)?;
    let analytic = evaluate(&sol.sequence, &trap, &sol.thermal);
    let oracle = oracle_metrics(&sol.sequence, &trap, &sol.thermal, ORACLE_RTOL)?;
    let displacement_deviation = analytic
        .displacements
        .iter()
        .zip(&oracle.displacements)
        .map(|(a, o)| (a.dx - o.dx).abs().max((a.dy - o.dy).abs()))
        .fold(0.0, f64::max);
    let theta_deviation = (analytic.theta - oracle.theta).abs();
    let infidelity_deviation = (analytic.infidelity - oracle.infidelity).abs();
    let worst = theta_deviation.max(displacement_deviation).max(infidelity_deviation);
    let report = VerifyOutput {
        analytic,
        oracle,
        theta_deviation,
        displacement_deviation,
        infidelity_deviation,
        tolerance: tol,
        pass: worst <= tol,
    };
    io::emit(out, &io::to_json(&report)?)?;
    if !report.pass {
        return Err(anyhow!(Mismatch(worst)));
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepCsvRow {
    q_x: f64,
    value: f64,
    infidelity: Option<f64>,
    n_sdk: Option<u64>,
    error: Option<String>,
}

fn cmd_sweep(traps: &[PathBuf], axis: SweepAxis, grid: &[f64], c: &RunConfig, seed: u64, out: Option<&Path>) -> Result<()> {
    let traps: Vec<TrapConfig> = traps.iter().map(|p| load_trap(p)).collect::<Result<_>>()?;
    let base = search_config(&traps[0], c, seed)?;
    // gate-time grids are given in trap periods
    let internal: Vec<f64> = match axis {
        SweepAxis::GateTime => grid.iter().map(|v| v * TAU).collect(),
        SweepAxis::RepRate => grid.to_vec(),
    };
    let rows = sweep(&traps, axis, &internal, &base)?;
    let rows: Vec<SweepCsvRow> = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| SweepCsvRow {
            q_x: r.q_x,
            value: grid[i % grid.len()],
            infidelity: r.infidelity,
            n_sdk: r.n_sdk,
            error: r.error,
        })
        .collect();
    io::emit(out, &io::to_csv(&rows)?)
}

#[derive(Serialize)]
struct NoiseOutput {
    report: NoiseReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    mixture: Option<SdkMixture>,
}

fn cmd_noise(path: &Path, c: &RunConfig, seed: u64, out: Option<&Path>) -> Result<()> {
    let sol = load_solution(path)?;
    let kind = c.kind.context("--kind is required")?;
    let mut ch = NoiseChannel::new(kind, c.sigma.context("--sigma is required")?, c.samples.unwrap_or(1000), seed);
    if let Some(v) = c.m_max {
        ch.m_max = v;
    }
    if let Some(v) = c.flip_fraction {
        ch.flip_fraction = v;
    }
    if let Some(v) = c.bins {
        ch.bins = v;
    }
    if let Some(v) = c.common_random_numbers {
        ch.common_random_numbers = v;
    }
    let output = if kind == NoiseKind::SdkError {
        let (report, mixture) = mc_sdk_errors(&sol, &ch, &sol.thermal)?;
        if mixture.truncation_warning {
            eprintln!("warning: binomial tail mass {:e} beyond m_max = {}", mixture.tail_mass, ch.m_max);
        }
        NoiseOutput { report, mixture: Some(mixture) }
    } else {
        NoiseOutput { report: mc_parameter_noise(&sol, &ch, &sol.thermal)?, mixture: None }
    };
    io::emit(out, &io::to_json(&output)?)
}

#[derive(Serialize)]
struct TrajRow {
    t: f64,
    #[serde(rename = "X_CM")]
    x_cm: f64,
    #[serde(rename = "Y_CM")]
    y_cm: f64,
    #[serde(rename = "X_BR")]
    x_br: f64,
    #[serde(rename = "Y_BR")]
    y_br: f64,
    #[serde(rename = "dPhi")]
    d_phi: f64,
}

fn cmd_traj(path: &Path, points: usize, tol: f64, out: Option<&Path>) -> Result<()> {
    if points < 2 {
        bail!("--points must be at least 2");
    }
    let sol = load_solution(path)?;
    let trap = TrapConfig::from_record(&sol.trap)?;
    let tg = sol.sequence.gate_time;
    let times: Vec<f64> = (0..points).map(|i| tg * i as f64 / (points - 1) as f64).collect();
    let traj = integrate(&sol.sequence, &trap, [(0.0, 0.0); 2], tol, &times)?;
    action_phase(&traj)?;
    let theta = theta_samples(&traj);
    let cm = displacement_samples(&traj, ModeLabel::Cm);
    let br = displacement_samples(&traj, ModeLabel::Br);
    let rows: Vec<TrajRow> = (0..points)
        .map(|i| TrajRow { t: times[i], x_cm: cm[i].0, y_cm: cm[i].1, x_br: br[i].0, y_br: br[i].1, d_phi: theta[i] })
        .collect();
    io::emit(out, &io::to_csv(&rows)?)
}

#[derive(Serialize)]
struct StabilityRow {
    a: f64,
    q: f64,
    trace: f64,
    stable: bool,
    beta: Option<f64>,
}

fn cmd_stability(a: (f64, f64), q: (f64, f64), n: (usize, usize), out: Option<&Path>) -> Result<()> {
    if n.0 < 2 || n.1 < 2 || !(a.1 > a.0) || !(q.1 > q.0) || q.0 < 0.0 {
        bail!("need a_max > a_min, q_max > q_min >= 0 and at least 2 points per axis");
    }
    let grid: Vec<(f64, f64)> = (0..n.1)
        .flat_map(|j| (0..n.0).map(move |i| (i, j)))
        .map(|(i, j)| (a.0 + (a.1 - a.0) * i as f64 / (n.0 - 1) as f64, q.0 + (q.1 - q.0) * j as f64 / (n.1 - 1) as f64))
        .collect();
    let rows: Vec<StabilityRow> = grid
        .par_iter()
        .map(|&(a, q)| -> Result<StabilityRow> {
            let trace = monodromy_trace(a, q, MONODROMY_RTOL)?;
            let stable = trace.abs() < 2.0;
            let beta = if stable { characteristic_exponent(&MathieuParams::new(a, q, 1.0, 0.0), BETA_TOL).ok() } else { None };
            Ok(StabilityRow { a, q, trace, stable, beta })
        })
        .collect::<Result<_>>()?;
    io::emit(out, &io::to_csv(&rows)?)
}
