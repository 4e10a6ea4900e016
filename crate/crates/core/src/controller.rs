//! Three-waveplate polarization controller and the feedback loop that drives it.
//!
//! The controller is a quarter-wave plate at azimuth `c1`, a half-wave plate at
//! azimuth `c2` and a quarter-wave plate fixed at azimuth 0, i.e. the matrix
//! `QWP(c1)·HWP(c2)·QWP(0)`. The loop measures the mean optical power leaving
//! the signal output of the receive splitter and lowers it by discrete-time
//! gradient descent on `(c1, c2)`, with central finite differences for the
//! gradient and step halving whenever a step would raise the power.
//!
//! Because the launched carrier is stronger than the signal, the signal-arm
//! power is smallest exactly when the controller undoes the channel's
//! polarization rotation, leaving the effective matrix diagonal.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{propagate, ChannelConfig, ChannelReport};
use crate::error::{ensure_finite, Error, Result};
use crate::jones::{half_wave_plate, pbs_split, quarter_wave_plate, rotation, JonesMatrix, PolPower};
use crate::waveform::{mean_power, DualPolWaveform};

pub const DEFAULT_MU: f64 = 0.5;
pub const DEFAULT_MU_MIN: f64 = 1e-4;
pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_GRAD_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 500;
pub const DEFAULT_MAX_RESTARTS: usize = 3;
/// Converged when the arm power difference is within this margin of the launch difference.
pub const DEFAULT_TARGET_MARGIN_DB: f64 = 1.0;

/// Controller matrix `QWP(c1)·HWP(c2)·QWP(0)`.
pub fn pc_matrix(c1: f64, c2: f64) -> Result<JonesMatrix> {
    Ok(quarter_wave_plate(c1)? * half_wave_plate(c2)? * quarter_wave_plate(0.0)?)
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// One recorded controller iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub c1: f64,
    pub c2: f64,
    /// Signal-arm (x) and carrier-arm (y) mean power at `(c1, c2)`.
    pub power: PolPower,
}

impl HistoryEntry {
    pub fn objective(&self) -> f64 {
        self.power.px / self.power.total()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub c1: f64,
    pub c2: f64,
    pub mu: f64,
    pub iteration: usize,
    pub history: Vec<HistoryEntry>,
    /// Finite-difference gradient estimated by the most recent step.
    pub gradient: [f64; 2],
    /// Whether the most recent step was taken (false when it was rejected and `mu` halved).
    pub last_accepted: bool,
}

impl ControllerState {
    pub fn new(c1: f64, c2: f64, mu: f64) -> Result<Self> {
        ensure_finite("c1", c1)?;
        ensure_finite("c2", c2)?;
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidArgument(format!("step size must be > 0, got {mu}")));
        }
        Ok(ControllerState {
            c1: wrap_angle(c1),
            c2: wrap_angle(c2),
            mu,
            iteration: 0,
            history: Vec::new(),
            gradient: [0.0; 2],
            last_accepted: true,
        })
    }

    pub fn gradient_norm(&self) -> f64 {
        self.gradient[0].hypot(self.gradient[1])
    }
}

/// Tuning of the descent loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerSettings {
    pub mu: f64,
    pub mu_min: f64,
    /// Finite-difference perturbation, radians.
    pub delta: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub max_restarts: usize,
    pub target_margin_db: f64,
    pub restart_seed: u64,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        ControllerSettings {
            mu: DEFAULT_MU,
            mu_min: DEFAULT_MU_MIN,
            delta: DEFAULT_DELTA,
            grad_tol: DEFAULT_GRAD_TOL,
            max_iter: DEFAULT_MAX_ITER,
            max_restarts: DEFAULT_MAX_RESTARTS,
            target_margin_db: DEFAULT_TARGET_MARGIN_DB,
            restart_seed: 0,
        }
    }
}

impl ControllerSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::Config {
                field: format!("controller.{field}"),
                reason: reason.into(),
            })
        };
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return bad("mu", "must be > 0");
        }
        if !(self.mu_min.is_finite() && self.mu_min > 0.0 && self.mu_min <= self.mu) {
            return bad("mu_min", "must be in (0, mu]");
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return bad("delta", "must be > 0");
        }
        if !(self.grad_tol.is_finite() && self.grad_tol >= 0.0) {
            return bad("grad_tol", "must be >= 0");
        }
        if self.max_iter == 0 {
            return bad("max_iter", "must be >= 1");
        }
        if !(self.target_margin_db.is_finite() && self.target_margin_db >= 0.0) {
            return bad("target_margin_db", "must be >= 0");
        }
        Ok(())
    }
}

/// Which receive-splitter output the photodetector watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Signal,
    Carrier,
}

/// The received field at the controller input together with what produced it.
///
/// Arm powers are photodetector averages over the measurement window. Since the
/// controller and splitter are linear and static, the average is taken once as
/// the field's 2×2 coherency matrix `⟨r rᴴ⟩`; the power behind any setting is
/// then a quadratic form in that matrix, equal to averaging the transformed
/// samples.
#[derive(Debug, Clone)]
pub struct Plant {
    received: DualPolWaveform,
    channel_matrix: JonesMatrix,
    rx_pbs_theta: f64,
    window_symbols: usize,
    coherency: [[Complex64; 2]; 2],
}

impl Plant {
    /// `window_symbols = None` averages over the whole frame.
    pub fn new(
        received: DualPolWaveform,
        channel_matrix: JonesMatrix,
        rx_pbs_theta: f64,
        window_symbols: Option<usize>,
    ) -> Result<Self> {
        ensure_finite("rx_pbs_theta", rx_pbs_theta)?;
        let window_symbols = window_symbols.unwrap_or(received.symbol_count());
        if window_symbols == 0 || window_symbols > received.symbol_count() {
            return Err(Error::InvalidArgument(format!(
                "measurement window of {window_symbols} symbols outside 1..={}",
                received.symbol_count()
            )));
        }
        let n = window_symbols * received.samples_per_symbol();
        let mut k = [[Complex64::new(0.0, 0.0); 2]; 2];
        for v in &received.samples()[..n] {
            let r = [v.ex, v.ey];
            for i in 0..2 {
                for j in 0..2 {
                    k[i][j] += r[i] * r[j].conj();
                }
            }
        }
        let inv = 1.0 / n as f64;
        k.iter_mut().flatten().for_each(|z| *z *= inv);
        if k[0][0].re + k[1][1].re <= 0.0 {
            return Err(Error::UndefinedMeasurement("received field carries no power".into()));
        }
        Ok(Plant {
            received,
            channel_matrix,
            rx_pbs_theta,
            window_symbols,
            coherency: k,
        })
    }

    /// Sends `launch` through `cfg` and wraps the result as a plant.
    pub fn through_channel(
        launch: &DualPolWaveform,
        cfg: &ChannelConfig,
        rx_pbs_theta: f64,
        window_symbols: Option<usize>,
    ) -> Result<(Self, ChannelReport)> {
        let (received, report) = propagate(launch, cfg)?;
        let plant = Plant::new(received, report.applied_matrix, rx_pbs_theta, window_symbols)?;
        Ok((plant, report))
    }

    pub fn received(&self) -> &DualPolWaveform {
        &self.received
    }

    pub fn channel_matrix(&self) -> &JonesMatrix {
        &self.channel_matrix
    }

    pub fn window_symbols(&self) -> usize {
        self.window_symbols
    }

    /// Controller followed by the receive splitter rotation.
    fn receive_matrix(&self, c1: f64, c2: f64) -> Result<JonesMatrix> {
        Ok(rotation(self.rx_pbs_theta) * pc_matrix(c1, c2)?)
    }

    /// Splitter rotation · controller · channel, noise excluded.
    pub fn effective_matrix(&self, c1: f64, c2: f64) -> Result<JonesMatrix> {
        Ok(self.receive_matrix(c1, c2)? * self.channel_matrix)
    }

    /// Mean power in the signal (x) and carrier (y) splitter outputs.
    pub fn arm_powers(&self, c1: f64, c2: f64) -> Result<PolPower> {
        let b = self.receive_matrix(c1, c2)?;
        let k = &self.coherency;
        let row_power = |row: &[Complex64; 2]| -> f64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..2 {
                for j in 0..2 {
                    acc += row[i] * k[i][j] * row[j].conj();
                }
            }
            acc.re.max(0.0)
        };
        Ok(PolPower {
            px: row_power(&b.m[0]),
            py: row_power(&b.m[1]),
        })
    }

    /// The same powers computed by pushing every sample through the controller
    /// and splitter and averaging.
    pub fn arm_powers_sampled(&self, c1: f64, c2: f64) -> Result<PolPower> {
        let (signal, carrier) = self.detect(c1, c2)?;
        let ps = mean_power(&signal, self.window_symbols)?;
        let pc = mean_power(&carrier, self.window_symbols)?;
        Ok(PolPower { px: ps.px, py: pc.py })
    }

    /// Signal-arm and carrier-arm waveforms at the given controller setting.
    pub fn detect(&self, c1: f64, c2: f64) -> Result<(DualPolWaveform, DualPolWaveform)> {
        let pc = pc_matrix(c1, c2)?;
        let mut sig = Vec::with_capacity(self.received.len());
        let mut car = Vec::with_capacity(self.received.len());
        for v in self.received.samples() {
            let (x_arm, y_arm) = pbs_split(pc * *v, self.rx_pbs_theta)?;
            sig.push(x_arm);
            car.push(y_arm);
        }
        Ok((self.received.with_samples(sig), self.received.with_samples(car)))
    }

    /// Normalized power `P ∈ [0, 1]` in the monitored arm.
    pub fn objective_for(&self, arm: Arm, c1: f64, c2: f64) -> Result<f64> {
        let p = self.arm_powers(c1, c2)?;
        let total = p.total();
        if total <= 0.0 {
            return Err(Error::UndefinedMeasurement("no power reaches the splitter".into()));
        }
        Ok(match arm {
            Arm::Signal => p.px / total,
            Arm::Carrier => p.py / total,
        })
    }

    pub fn objective(&self, c1: f64, c2: f64) -> Result<f64> {
        self.objective_for(Arm::Signal, c1, c2)
    }
}

/// Photodetector reading `P = px/(px+py)` on the signal arm at the state's setting.
pub fn measure_objective(state: &ControllerState, plant: &Plant) -> Result<f64> {
    plant.objective(state.c1, state.c2)
}

/// Central-difference gradient of the objective at `(c1, c2)`.
pub fn finite_difference_gradient(plant: &Plant, c1: f64, c2: f64, delta: f64) -> Result<[f64; 2]> {
    let d1 = plant.objective(c1 + delta, c2)? - plant.objective(c1 - delta, c2)?;
    let d2 = plant.objective(c1, c2 + delta)? - plant.objective(c1, c2 - delta)?;
    Ok([d1 / (2.0 * delta), d2 / (2.0 * delta)])
}

/// One iteration: estimate the gradient, try `c ← c − μ·∇P`, keep the move only
/// if the measured power does not rise, otherwise halve `μ` (down to `mu_min`).
pub fn gradient_step(state: &ControllerState, plant: &Plant, settings: &ControllerSettings) -> Result<ControllerState> {
    if state.mu.is_nan() || state.mu <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step size must be > 0, got {}",
            state.mu
        )));
    }
    let here = plant.objective(state.c1, state.c2)?;
    let g = finite_difference_gradient(plant, state.c1, state.c2, settings.delta)?;
    let c1 = wrap_angle(state.c1 - state.mu * g[0]);
    let c2 = wrap_angle(state.c2 - state.mu * g[1]);
    let there = plant.objective(c1, c2)?;

    let mut next = state.clone();
    next.gradient = g;
    next.iteration += 1;
    if there <= here {
        next.c1 = c1;
        next.c2 = c2;
        next.last_accepted = true;
    } else {
        next.mu = (state.mu * 0.5).max(settings.mu_min);
        next.last_accepted = false;
    }
    next.history.push(HistoryEntry {
        c1: next.c1,
        c2: next.c2,
        power: plant.arm_powers(next.c1, next.c2)?,
    });
    Ok(next)
}

/// Outcome of a descent run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub converged: bool,
    /// `(c1, c2)` the final run started from.
    pub initial_setting: (f64, f64),
    pub initial_power: PolPower,
    pub initial_power_diff_db: f64,
    pub final_power: PolPower,
    pub final_power_diff_db: f64,
    pub target_power_diff_db: f64,
    /// Iterations of the final run.
    pub iterations: usize,
    /// Iterations summed over the initial run and all restarts.
    pub total_iterations: usize,
    pub restarts: usize,
    pub effective_matrix: JonesMatrix,
    pub residual_offdiag: f64,
    /// Phase of the first diagonal entry of the effective matrix.
    pub residual_phase: f64,
    pub final_state: ControllerState,
}

/// Power difference in dB, with perfect separation reported as infinity.
fn separation_db(p: &PolPower) -> f64 {
    match p.difference_db() {
        Ok(db) => db,
        Err(_) if p.total() > 0.0 => f64::INFINITY,
        Err(_) => 0.0,
    }
}

/// Runs [`gradient_step`] until the gradient norm drops below `grad_tol`, a
/// rejected step leaves `μ` at its floor, or `max_iter` steps have run.
/// `converged` reports whether the final power difference reached `tol_power_diff_db`.
pub fn converge(
    initial: ControllerState,
    plant: &Plant,
    settings: &ControllerSettings,
    tol_power_diff_db: f64,
    max_iter: usize,
) -> Result<ConvergenceReport> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
    }
    let initial_setting = (initial.c1, initial.c2);
    let initial_power = plant.arm_powers(initial.c1, initial.c2)?;
    let mut state = initial;
    let start = state.iteration;
    while state.iteration - start < max_iter {
        let mu_before = state.mu;
        state = gradient_step(&state, plant, settings)?;
        if state.gradient_norm() < settings.grad_tol {
            break;
        }
        if !state.last_accepted && mu_before <= settings.mu_min {
            break;
        }
    }
    let final_power = plant.arm_powers(state.c1, state.c2)?;
    let final_power_diff_db = separation_db(&final_power);
    let effective_matrix = plant.effective_matrix(state.c1, state.c2)?;
    let iterations = state.iteration - start;
    Ok(ConvergenceReport {
        converged: final_power_diff_db >= tol_power_diff_db,
        initial_setting,
        initial_power,
        initial_power_diff_db: separation_db(&initial_power),
        final_power,
        final_power_diff_db,
        target_power_diff_db: tol_power_diff_db,
        iterations,
        total_iterations: iterations,
        restarts: 0,
        residual_offdiag: effective_matrix.max_offdiag(),
        residual_phase: effective_matrix.m[0][0].arg(),
        effective_matrix,
        final_state: state,
    })
}

/// Descent from `(c1, c2)`, followed by up to `max_restarts` runs from random
/// settings (seeded by `restart_seed`) while the target is not met.
pub fn converge_with_restarts(
    c1: f64,
    c2: f64,
    plant: &Plant,
    settings: &ControllerSettings,
    tol_power_diff_db: f64,
) -> Result<ConvergenceReport> {
    settings.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.restart_seed);
    let mut report = converge(
        ControllerState::new(c1, c2, settings.mu)?,
        plant,
        settings,
        tol_power_diff_db,
        settings.max_iter,
    )?;
    let mut total = report.iterations;
    let mut restarts = 0;
    while !report.converged && restarts < settings.max_restarts {
        restarts += 1;
        let start = ControllerState::new(rng.random_range(0.0..TAU), rng.random_range(0.0..PI), settings.mu)?;
        report = converge(start, plant, settings, tol_power_diff_db, settings.max_iter)?;
        total += report.iterations;
    }
    report.restarts = restarts;
    report.total_iterations = total;
    Ok(report)
}

/// Objective sampled on an `n × n` grid over `[0, 2π)²`, row index on `c1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerProfile {
    pub grid_n: usize,
    pub values: Vec<f64>,
}

impl PowerProfile {
    pub fn angle(&self, index: usize) -> f64 {
        TAU * index as f64 / self.grid_n as f64
    }

    pub fn at(&self, i1: usize, i2: usize) -> f64 {
        self.values[i1 * self.grid_n + i2]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Grid cells `(i1, i2)` whose value lies within `tol` of the grid minimum.
    pub fn minima(&self, tol: f64) -> Vec<(usize, usize)> {
        let m = self.min();
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v - m <= tol)
            .map(|(k, _)| (k / self.grid_n, k % self.grid_n))
            .collect()
    }

    /// Writes `c1, c2, P` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["c1", "c2", "P"])?;
        for i1 in 0..self.grid_n {
            for i2 in 0..self.grid_n {
                wtr.write_record(&[
                    self.angle(i1).to_string(),
                    self.angle(i2).to_string(),
                    self.at(i1, i2).to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn power_profile(plant: &Plant, grid_n: usize) -> Result<PowerProfile> {
    if grid_n < 16 {
        return Err(Error::InvalidArgument(format!(
            "grid must be at least 16 points, got {grid_n}"
        )));
    }
    let step = TAU / grid_n as f64;
    let values = (0..grid_n * grid_n)
        .into_par_iter()
        .map(|k| plant.objective((k / grid_n) as f64 * step, (k % grid_n) as f64 * step))
        .collect::<Result<Vec<_>>>()?;
    Ok(PowerProfile { grid_n, values })
}

/// Writes `iteration, c1, c2, p_signal_arm, p_carrier_arm, power_diff_db`;
/// iteration 0 is the starting point.
pub fn write_trace_csv(report: &ConvergenceReport, path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record([
        "iteration",
        "c1",
        "c2",
        "p_signal_arm",
        "p_carrier_arm",
        "power_diff_db",
    ])?;
    let state = &report.final_state;
    let first = HistoryEntry {
        c1: report.initial_setting.0,
        c2: report.initial_setting.1,
        power: report.initial_power,
    };
    for (i, e) in std::iter::once(&first).chain(&state.history).enumerate() {
        wtr.write_record(&[
            i.to_string(),
            e.c1.to_string(),
            e.c2.to_string(),
            e.power.px.to_string(),
            e.power.py.to_string(),
            separation_db(&e.power).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
