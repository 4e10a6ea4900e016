//! Fiber and device impairments.
//!
//! The polarization part is the frequency-flat lumped matrix
//! [`composite_channel`](crate::jones::composite_channel). Chromatic dispersion is a
//! scalar all-pass filter applied to each polarization on its own, so it never
//! couples x and y. Noise is circular complex Gaussian, independent per
//! polarization, scaled from an OSNR in a 0.1 nm reference bandwidth.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ensure_finite, Error, Result};
use crate::jones::{composite_channel, JonesMatrix, JonesVector};
use crate::waveform::{mean_power, DualPolWaveform};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Standard single-mode fiber at 1550 nm.
pub const DEFAULT_DISPERSION_PS_NM_KM: f64 = 17.0;
pub const DEFAULT_WAVELENGTH_NM: f64 = 1550.0;
pub const OSNR_REFERENCE_NM: f64 = 0.1;

/// Optical signal-to-noise ratio setting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Osnr {
    #[default]
    Noiseless,
    Db(f64),
}

impl Serialize for Osnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Osnr::Noiseless => s.serialize_str("noiseless"),
            Osnr::Db(db) => s.serialize_f64(*db),
        }
    }
}

impl<'de> Deserialize<'de> for Osnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Osnr::Db(v)),
            Raw::Int(v) => Ok(Osnr::Db(v as f64)),
            Raw::Text(t) if t.eq_ignore_ascii_case("noiseless") => Ok(Osnr::Noiseless),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number of dB or \"noiseless\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Splitter/combiner misalignment, radians.
    pub theta: f64,
    /// Differential birefringence phase, radians.
    pub phi: f64,
    pub fiber_length_km: f64,
    pub dispersion_ps_nm_km: f64,
    pub center_wavelength_nm: f64,
    pub osnr_db: Osnr,
    /// Noise seed; the harness derives it from the run seed.
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            theta: 0.0,
            phi: 0.0,
            fiber_length_km: 0.0,
            dispersion_ps_nm_km: DEFAULT_DISPERSION_PS_NM_KM,
            center_wavelength_nm: DEFAULT_WAVELENGTH_NM,
            osnr_db: Osnr::Noiseless,
            rng_seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, reason: &str| Error::Config {
            field: format!("channel.{name}"),
            reason: reason.to_string(),
        };
        for (name, v) in [
            ("theta", self.theta),
            ("phi", self.phi),
            ("fiber_length_km", self.fiber_length_km),
            ("dispersion_ps_nm_km", self.dispersion_ps_nm_km),
            ("center_wavelength_nm", self.center_wavelength_nm),
        ] {
            if !v.is_finite() {
                return Err(field(name, "must be finite"));
            }
        }
        if self.fiber_length_km < 0.0 {
            return Err(field("fiber_length_km", "must be >= 0"));
        }
        if self.center_wavelength_nm <= 0.0 {
            return Err(field("center_wavelength_nm", "must be > 0"));
        }
        if let Osnr::Db(db) = self.osnr_db {
            if !db.is_finite() {
                return Err(field("osnr_db", "must be finite or \"noiseless\""));
            }
        }
        Ok(())
    }

    /// The lumped polarization matrix for this configuration.
    pub fn polarization_matrix(&self) -> Result<JonesMatrix> {
        composite_channel(self.theta, self.phi)
    }

    /// Group-velocity dispersion `β₂ = -D·λ²/(2πc)` in s²/m.
    pub fn beta2(&self) -> f64 {
        let d_si = self.dispersion_ps_nm_km * 1e-6;
        let lambda = self.center_wavelength_nm * 1e-9;
        -d_si * lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT)
    }

    /// Frequency width of the OSNR reference band at the carrier wavelength.
    pub fn reference_bandwidth_hz(&self) -> f64 {
        let lambda = self.center_wavelength_nm * 1e-9;
        SPEED_OF_LIGHT * OSNR_REFERENCE_NM * 1e-9 / (lambda * lambda)
    }
}

/// Diagnostics describing what [`propagate`] applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelReport {
    pub applied_matrix: JonesMatrix,
    pub beta2_s2_per_m: f64,
    pub accumulated_dispersion_ps_nm: f64,
    /// Complex noise variance added per polarization per sample; zero when noiseless.
    pub noise_variance_per_pol: f64,
}

pub fn apply_polarization_impairment(w: &DualPolWaveform, cfg: &ChannelConfig) -> Result<DualPolWaveform> {
    let a = cfg.polarization_matrix()?;
    Ok(w.transform(&a))
}

/// Filters each polarization with `H(ω) = exp(-j·β₂/2·ω²·L)`.
///
/// Frames that are not a power of two are zero-padded for the transform and
/// truncated back, which drops whatever energy spreads into the padding.
pub fn apply_chromatic_dispersion(w: &DualPolWaveform, cfg: &ChannelConfig) -> Result<DualPolWaveform> {
    ensure_finite("fiber_length_km", cfg.fiber_length_km)?;
    let length_m = cfg.fiber_length_km * 1e3;
    let beta2 = cfg.beta2();
    if length_m == 0.0 || beta2 == 0.0 {
        return Ok(w.clone());
    }

    let n = w.len();
    let nfft = n.next_power_of_two();
    let fs = w.sample_rate();
    let transfer: Vec<Complex64> = (0..nfft)
        .map(|k| {
            let bin = if k < nfft / 2 { k as f64 } else { k as f64 - nfft as f64 };
            let omega = 2.0 * PI * bin * fs / nfft as f64;
            Complex64::from_polar(1.0, -0.5 * beta2 * omega * omega * length_m)
        })
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(nfft);
    let inverse = planner.plan_fft_inverse(nfft);
    let filter = |component: Vec<Complex64>| -> Vec<Complex64> {
        let mut buf = component;
        buf.resize(nfft, Complex64::new(0.0, 0.0));
        forward.process(&mut buf);
        for (b, h) in buf.iter_mut().zip(&transfer) {
            *b *= h;
        }
        inverse.process(&mut buf);
        let scale = 1.0 / nfft as f64;
        buf.truncate(n);
        buf.iter_mut().for_each(|b| *b *= scale);
        buf
    };

    let xs = filter(w.x_component());
    let ys = filter(w.y_component());
    let samples = xs
        .into_iter()
        .zip(ys)
        .map(|(ex, ey)| JonesVector::new(ex, ey))
        .collect();
    Ok(w.with_samples(samples))
}

/// Per-polarization complex noise variance for a waveform of mean total power `total_power`.
pub fn noise_variance_per_pol(total_power: f64, sample_rate: f64, cfg: &ChannelConfig) -> f64 {
    match cfg.osnr_db {
        Osnr::Noiseless => 0.0,
        Osnr::Db(db) => {
            let osnr = 10f64.powf(db / 10.0);
            // OSNR counts noise from both polarizations in the reference band.
            let noise_in_ref = total_power / osnr;
            0.5 * noise_in_ref * sample_rate / cfg.reference_bandwidth_hz()
        }
    }
}

pub fn add_noise(w: &DualPolWaveform, cfg: &ChannelConfig) -> Result<DualPolWaveform> {
    let total = mean_power(w, w.symbol_count())?.total();
    let variance = noise_variance_per_pol(total, w.sample_rate(), cfg);
    if variance == 0.0 {
        return Ok(w.clone());
    }
    let normal =
        Normal::new(0.0, (0.5 * variance).sqrt()).map_err(|e| Error::InvalidArgument(format!("noise level: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut draw = || Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
    let samples = w
        .samples()
        .iter()
        .map(|v| {
            let nx = draw();
            let ny = draw();
            JonesVector::new(v.ex + nx, v.ey + ny)
        })
        .collect();
    Ok(w.with_samples(samples))
}

/// Polarization impairment, then dispersion, then noise.
pub fn propagate(w: &DualPolWaveform, cfg: &ChannelConfig) -> Result<(DualPolWaveform, ChannelReport)> {
    cfg.validate()?;
    let total = mean_power(w, w.symbol_count())?.total();
    let out = apply_polarization_impairment(w, cfg)?;
    let out = apply_chromatic_dispersion(&out, cfg)?;
    let out = add_noise(&out, cfg)?;
    let report = ChannelReport {
        applied_matrix: cfg.polarization_matrix()?,
        beta2_s2_per_m: cfg.beta2(),
        accumulated_dispersion_ps_nm: cfg.dispersion_ps_nm_km * cfg.fiber_length_km,
        noise_variance_per_pol: noise_variance_per_pol(total, w.sample_rate(), cfg),
    };
    Ok((out, report))
}
