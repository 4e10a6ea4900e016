//! Configuration and experiment orchestration behind the `polmux` binary.
//!
//! A run builds the launch frame (balanced random QPSK on x, CW carrier on y),
//! sends it through the configured channel, and then evaluates the receiver
//! twice: once with the controller left at its starting setting and once after
//! the feedback loop has minimized the signal-arm power. Summaries are flat
//! `key=value` lines; plot data goes to CSV files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, ChannelReport};
use crate::controller::{
    converge_with_restarts, power_profile, write_trace_csv, ControllerSettings, ConvergenceReport, Plant, PowerProfile,
};
use crate::error::{Error, Result};
use crate::receiver::{constellation_export, receive, RxResult, MIN_PHASE_SYMBOLS};
use crate::waveform::{
    balanced_bits, launch_with_carrier, qpsk_modulate, DualPolWaveform, DEFAULT_FRAME_SYMBOLS, DEFAULT_POWER_DIFF_DB,
    DEFAULT_SAMPLES_PER_SYMBOL,
};

/// Default plant: mixes carrier and signal down to about 6 dB of separation.
pub const DEFAULT_THETA: f64 = 0.4;
pub const DEFAULT_PHI: f64 = 0.635;
pub const DEFAULT_BIT_RATE: f64 = 30e9;
pub const DEFAULT_FIBER_KM: f64 = 20.0;
pub const DEFAULT_GRID: usize = 64;

// Offsets that split the run seed into independent streams.
const NOISE_STREAM: u64 = 0x6e6f_6973_6500_0001;
const RESTART_STREAM: u64 = 0x7265_7374_6172_7402;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    /// Line rate in bit/s; QPSK runs at half this symbol rate.
    pub bit_rate: f64,
    pub samples_per_symbol: usize,
    pub frame_symbols: usize,
    /// Launch carrier-to-signal power ratio, dB.
    pub power_diff_db: f64,
    /// Receive splitter angle beyond what the channel matrix already holds.
    pub rx_pbs_theta: f64,
}

impl Default for LinkSection {
    fn default() -> Self {
        LinkSection {
            bit_rate: DEFAULT_BIT_RATE,
            samples_per_symbol: DEFAULT_SAMPLES_PER_SYMBOL,
            frame_symbols: DEFAULT_FRAME_SYMBOLS,
            power_diff_db: DEFAULT_POWER_DIFF_DB,
            rx_pbs_theta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub c1: f64,
    pub c2: f64,
    pub mu: f64,
    pub mu_min: f64,
    pub delta: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub max_restarts: usize,
    pub target_margin_db: f64,
    /// Photodetector averaging window in symbols; the whole frame when absent.
    pub window_symbols: Option<usize>,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let s = ControllerSettings::default();
        ControllerSection {
            c1: 0.0,
            c2: 0.0,
            mu: s.mu,
            mu_min: s.mu_min,
            delta: s.delta,
            grad_tol: s.grad_tol,
            max_iter: s.max_iter,
            max_restarts: s.max_restarts,
            target_margin_db: s.target_margin_db,
            window_symbols: None,
        }
    }
}

/// Everything a run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub seed: u64,
    pub link: LinkSection,
    pub channel: ChannelConfig,
    pub controller: ControllerSection,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            seed: 1,
            link: LinkSection::default(),
            channel: ChannelConfig {
                theta: DEFAULT_THETA,
                phi: DEFAULT_PHI,
                fiber_length_km: DEFAULT_FIBER_KM,
                ..ChannelConfig::default()
            },
            controller: ControllerSection::default(),
        }
    }
}

fn config_error(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl LinkConfig {
    /// Parses TOML text and validates it. Keys left out take their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: LinkConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .and_then(|span| key_at(text, span.start))
                .unwrap_or_else(|| "<config>".to_string());
            config_error(&field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        LinkConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("LinkConfig always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.link;
        if !(l.bit_rate.is_finite() && l.bit_rate > 0.0) {
            return Err(config_error("link.bit_rate", "must be > 0"));
        }
        if l.samples_per_symbol < 2 {
            return Err(config_error("link.samples_per_symbol", "must be >= 2"));
        }
        if l.frame_symbols < MIN_PHASE_SYMBOLS {
            return Err(config_error(
                "link.frame_symbols",
                format!("must be >= {MIN_PHASE_SYMBOLS}"),
            ));
        }
        if !(l.power_diff_db.is_finite() && l.power_diff_db > 0.0) {
            return Err(config_error("link.power_diff_db", "must be > 0"));
        }
        if !l.rx_pbs_theta.is_finite() {
            return Err(config_error("link.rx_pbs_theta", "must be finite"));
        }
        self.channel.validate()?;
        let c = &self.controller;
        if !c.c1.is_finite() {
            return Err(config_error("controller.c1", "must be finite"));
        }
        if !c.c2.is_finite() {
            return Err(config_error("controller.c2", "must be finite"));
        }
        if let Some(w) = c.window_symbols {
            if w == 0 || w > l.frame_symbols {
                return Err(config_error(
                    "controller.window_symbols",
                    "must be in 1..=frame_symbols",
                ));
            }
        }
        self.controller_settings().validate()
    }

    pub fn controller_settings(&self) -> ControllerSettings {
        let c = &self.controller;
        ControllerSettings {
            mu: c.mu,
            mu_min: c.mu_min,
            delta: c.delta,
            grad_tol: c.grad_tol,
            max_iter: c.max_iter,
            max_restarts: c.max_restarts,
            target_margin_db: c.target_margin_db,
            restart_seed: self.seed ^ RESTART_STREAM,
        }
    }

    pub fn symbol_rate(&self) -> f64 {
        self.link.bit_rate / 2.0
    }

    /// Arm power difference the controller must reach to count as converged.
    pub fn target_power_diff_db(&self) -> f64 {
        self.link.power_diff_db - self.controller.target_margin_db
    }
}

// Key name on the line containing byte offset `pos`, for parse error messages.
fn key_at(text: &str, pos: usize) -> Option<String> {
    let start = text[..pos.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next()?;
    let (key, _) = line.split_once('=')?;
    let key = key.trim();
    (!key.is_empty()).then(|| key.to_string())
}

/// Transmitter, channel and measured plant for one configuration.
#[derive(Debug, Clone)]
pub struct Link {
    pub config: LinkConfig,
    pub bits: Vec<bool>,
    pub launch: DualPolWaveform,
    pub plant: Plant,
    pub channel_report: ChannelReport,
}

impl Link {
    pub fn build(config: &LinkConfig) -> Result<Link> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bits = balanced_bits(config.link.frame_symbols, &mut rng);
        let signal = qpsk_modulate(&bits, config.symbol_rate(), config.link.samples_per_symbol)?;
        let launch = launch_with_carrier(&signal, config.link.power_diff_db)?;
        let channel = ChannelConfig {
            rng_seed: config.seed ^ NOISE_STREAM,
            ..config.channel.clone()
        };
        let (plant, channel_report) = Plant::through_channel(
            &launch,
            &channel,
            config.link.rx_pbs_theta,
            config.controller.window_symbols,
        )?;
        Ok(Link {
            config: config.clone(),
            bits,
            launch,
            plant,
            channel_report,
        })
    }

    /// Receiver output with the controller held at `(c1, c2)`.
    pub fn receive_at(&self, c1: f64, c2: f64) -> Result<RxResult> {
        let (signal_arm, carrier_arm) = self.plant.detect(c1, c2)?;
        receive(&signal_arm, &carrier_arm, &self.bits)
    }

    pub fn power_diff_at(&self, c1: f64, c2: f64) -> Result<f64> {
        self.plant.arm_powers(c1, c2)?.difference_db()
    }

    pub fn run_controller(&self) -> Result<ConvergenceReport> {
        let c = &self.config.controller;
        converge_with_restarts(
            c.c1,
            c.c2,
            &self.plant,
            &self.config.controller_settings(),
            self.config.target_power_diff_db(),
        )
    }
}

/// Flat ordered `key=value` record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub entries: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

/// Result of `simulate`.
#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub summary: Summary,
    pub before: RxResult,
    pub after: RxResult,
    pub report: Option<ConvergenceReport>,
}

impl SimulationOutcome {
    /// False only when the controller ran and missed its target.
    pub fn converged(&self) -> bool {
        self.report.as_ref().is_none_or(|r| r.converged)
    }
}

fn ensure_out_dir(out: Option<&Path>) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Transmit, propagate, and receive with the controller off and then on.
///
/// With `out` set, writes `constellation_before.csv`, `constellation_after.csv`,
/// `received.csv` and, when the controller ran, `trace.csv`.
pub fn cmd_simulate(config: &LinkConfig, controller_on: bool, out: Option<&Path>) -> Result<SimulationOutcome> {
    let link = Link::build(config)?;
    simulate_link(&link, controller_on, out)
}

fn simulate_link(link: &Link, controller_on: bool, out: Option<&Path>) -> Result<SimulationOutcome> {
    let cfg = &link.config;
    let (c1_0, c2_0) = (cfg.controller.c1, cfg.controller.c2);
    let before_diff = link.power_diff_at(c1_0, c2_0)?;
    let before = link.receive_at(c1_0, c2_0)?;

    let report = if controller_on {
        Some(link.run_controller()?)
    } else {
        None
    };
    let (c1, c2) = report
        .as_ref()
        .map_or((c1_0, c2_0), |r| (r.final_state.c1, r.final_state.c2));
    let after_diff = link.power_diff_at(c1, c2)?;
    let after = link.receive_at(c1, c2)?;

    let mut s = Summary::default();
    s.push("command", "simulate");
    s.push("seed", cfg.seed);
    s.push("controller", if controller_on { "on" } else { "off" });
    s.push("bit_rate", cfg.link.bit_rate);
    s.push("frame_symbols", cfg.link.frame_symbols);
    s.push("launch_power_diff_db", cfg.link.power_diff_db);
    s.push("theta", cfg.channel.theta);
    s.push("phi", cfg.channel.phi);
    s.push("fiber_length_km", cfg.channel.fiber_length_km);
    s.push(
        "accumulated_dispersion_ps_nm",
        link.channel_report.accumulated_dispersion_ps_nm,
    );
    s.push("noise_variance_per_pol", link.channel_report.noise_variance_per_pol);
    s.push("power_diff_before_db", before_diff);
    s.push("power_diff_after_db", after_diff);
    s.push("evm_before_percent", before.evm_percent);
    s.push("evm_after_percent", after.evm_percent);
    s.push("ber_before", before.ber);
    s.push("ber_after", after.ber);
    s.push("recovered_phase_before", before.recovered_phase);
    s.push("recovered_phase_after", after.recovered_phase);
    s.push("c1", c1);
    s.push("c2", c2);
    if let Some(r) = &report {
        s.push("converged", r.converged);
        s.push("target_power_diff_db", r.target_power_diff_db);
        s.push("iterations", r.iterations);
        s.push("total_iterations", r.total_iterations);
        s.push("restarts", r.restarts);
        s.push("residual_offdiag", r.residual_offdiag);
        s.push("residual_phase", r.residual_phase);
    }

    if let Some(dir) = out {
        ensure_out_dir(out)?;
        constellation_export(&before.iq_samples, dir.join("constellation_before.csv"))?;
        constellation_export(&after.iq_samples, dir.join("constellation_after.csv"))?;
        link.plant.received().write_csv(dir.join("received.csv"))?;
        if let Some(r) = &report {
            write_trace_csv(r, dir.join("trace.csv"))?;
        }
    }

    Ok(SimulationOutcome {
        summary: s,
        before,
        after,
        report,
    })
}

/// Objective over a `grid_n × grid_n` controller grid; writes `profile.csv` under `out`.
pub fn cmd_profile(config: &LinkConfig, grid_n: usize, out: Option<&Path>) -> Result<(Summary, PowerProfile)> {
    let link = Link::build(config)?;
    let profile = power_profile(&link.plant, grid_n)?;
    let minima = profile.minima(1e-9);
    let (i1, i2) = minima[0];

    let mut s = Summary::default();
    s.push("command", "profile");
    s.push("seed", config.seed);
    s.push("grid", grid_n);
    s.push("min_objective", profile.min());
    s.push("min_objective_db", 10.0 * profile.min().log10());
    s.push(
        "max_objective",
        profile.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    s.push("minima_count", minima.len());
    s.push("first_min_c1", profile.angle(i1));
    s.push("first_min_c2", profile.angle(i2));

    if let Some(dir) = out {
        ensure_out_dir(out)?;
        profile.write_csv(dir.join("profile.csv"))?;
    }
    Ok((s, profile))
}

/// Result of `dispersion-check`.
#[derive(Debug, Clone)]
pub struct DispersionCheck {
    pub summary: Summary,
    pub dispersed: SimulationOutcome,
    pub reference: SimulationOutcome,
    pub passed: bool,
}

/// Allowed gap between the dispersed and dispersion-free final power difference.
pub const DISPERSION_POWER_BAND_DB: f64 = 0.5;

/// Runs the configured link and the same link with dispersion switched off,
/// both with the controller on, and compares them.
pub fn cmd_dispersion_check(config: &LinkConfig, out: Option<&Path>) -> Result<DispersionCheck> {
    let dispersed = cmd_simulate(config, true, out.map(|d| d.join("dispersed")).as_deref())?;
    let mut flat = config.clone();
    flat.channel.dispersion_ps_nm_km = 0.0;
    let reference = cmd_simulate(&flat, true, out.map(|d| d.join("no_dispersion")).as_deref())?;

    let diff = |o: &SimulationOutcome| o.summary.get_f64("power_diff_after_db").unwrap_or(f64::NAN);
    let gap = (diff(&dispersed) - diff(&reference)).abs();
    let has_dispersion = config.channel.fiber_length_km * config.channel.dispersion_ps_nm_km != 0.0;
    let within_band = gap <= DISPERSION_POWER_BAND_DB;
    let evm_degraded = dispersed.after.evm_percent > reference.after.evm_percent;
    let passed = within_band && (evm_degraded || !has_dispersion);

    let mut s = Summary::default();
    s.push("command", "dispersion-check");
    s.push("seed", config.seed);
    s.push("fiber_length_km", config.channel.fiber_length_km);
    s.push("dispersion_ps_nm_km", config.channel.dispersion_ps_nm_km);
    s.push("power_diff_after_db", diff(&dispersed));
    s.push("power_diff_after_no_dispersion_db", diff(&reference));
    s.push("power_diff_gap_db", gap);
    s.push("evm_after_percent", dispersed.after.evm_percent);
    s.push("evm_after_no_dispersion_percent", reference.after.evm_percent);
    s.push("converged", dispersed.converged() && reference.converged());
    s.push("power_diff_within_band", within_band);
    s.push("evm_degraded", evm_degraded);
    s.push("check", if passed { "pass" } else { "fail" });

    Ok(DispersionCheck {
        summary: s,
        dispersed,
        reference,
        passed,
    })
}

/// Runs only the controller and writes its `trace.csv` under `out`.
pub fn cmd_converge_trace(config: &LinkConfig, out: Option<&Path>) -> Result<(Summary, ConvergenceReport)> {
    let link = Link::build(config)?;
    let report = link.run_controller()?;
    let mut s = Summary::default();
    s.push("command", "converge-trace");
    s.push("seed", config.seed);
    s.push("converged", report.converged);
    s.push("iterations", report.iterations);
    s.push("total_iterations", report.total_iterations);
    s.push("restarts", report.restarts);
    s.push("power_diff_initial_db", report.initial_power_diff_db);
    s.push("power_diff_final_db", report.final_power_diff_db);
    s.push("final_objective", report.final_power.px / report.final_power.total());
    s.push("c1", report.final_state.c1);
    s.push("c2", report.final_state.c2);
    s.push("residual_offdiag", report.residual_offdiag);
    s.push("residual_phase", report.residual_phase);
    if let Some(dir) = out {
        ensure_out_dir(out)?;
        write_trace_csv(&report, dir.join("trace.csv"))?;
    }
    Ok((s, report))
}
