//! Self-homodyne reception.
//!
//! The carrier-arm field acts as the local oscillator for the signal arm through
//! an ideal 90° hybrid and balanced photodiodes. What is left after that is a
//! constant phase, removed with a fourth-power estimator, and the result is
//! scored by EVM and bit errors.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::jones::JonesVector;
use crate::waveform::{demap, qpsk_decide, qpsk_symbol, DualPolWaveform};

/// Minimum number of symbols for a phase estimate.
pub const MIN_PHASE_SYMBOLS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct RxResult {
    /// Phase-corrected symbols, one per symbol period.
    pub iq_samples: Vec<Complex64>,
    pub evm_percent: f64,
    pub ber: f64,
    pub recovered_phase: f64,
}

// Splitter outputs carry a single polarization, so the arm's field is the sum
// of its components.
fn arm_field(v: &JonesVector) -> Complex64 {
    v.ex + v.ey
}

/// Beats the signal arm against the carrier arm and samples mid-symbol:
/// `E_sig · conj(E_car) / |E_car|`.
pub fn homodyne_detect(signal_arm: &DualPolWaveform, carrier_arm: &DualPolWaveform) -> Result<Vec<Complex64>> {
    if signal_arm.len() != carrier_arm.len()
        || signal_arm.samples_per_symbol() != carrier_arm.samples_per_symbol()
        || signal_arm.symbol_rate() != carrier_arm.symbol_rate()
    {
        return Err(Error::InvalidArgument(
            "signal and carrier arms differ in length or rate".into(),
        ));
    }
    let carrier_power: f64 = carrier_arm
        .samples()
        .iter()
        .map(|v| arm_field(v).norm_sqr())
        .sum::<f64>()
        / carrier_arm.len() as f64;
    if carrier_power.is_nan() || carrier_power <= 0.0 {
        return Err(Error::UndefinedMeasurement("carrier arm carries no power".into()));
    }
    let sps = signal_arm.samples_per_symbol();
    let iq = (0..signal_arm.symbol_count())
        .map(|k| {
            let i = k * sps + sps / 2;
            let sig = arm_field(&signal_arm.samples()[i]);
            let lo = arm_field(&carrier_arm.samples()[i]);
            let mag = lo.norm();
            if mag > 0.0 {
                sig * lo.conj() / mag
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    Ok(iq)
}

/// Fourth-power constant phase estimate, folded into `(-π/4, π/4]`, and the
/// de-rotated symbols.
pub fn phase_recover(iq: &[Complex64]) -> Result<(Vec<Complex64>, f64)> {
    if iq.len() < MIN_PHASE_SYMBOLS {
        return Err(Error::InvalidArgument(format!(
            "phase recovery needs at least {MIN_PHASE_SYMBOLS} symbols, got {}",
            iq.len()
        )));
    }
    let m4: Complex64 = iq.iter().map(|z| z.powu(4)).sum();
    if m4.norm() == 0.0 {
        return Err(Error::UndefinedMeasurement(
            "no fourth-power phase reference in the input".into(),
        ));
    }
    // QPSK points sit at odd multiples of π/4, whose fourth power is -1.
    let phase = (-m4).arg() / 4.0;
    let rot = Complex64::from_polar(1.0, -phase);
    Ok((iq.iter().map(|z| z * rot).collect(), phase))
}

/// RMS distance to the nearest ideal QPSK point, relative to the unit RMS
/// magnitude of the ideal constellation, in percent.
pub fn evm(iq: &[Complex64]) -> Result<f64> {
    if iq.is_empty() {
        return Err(Error::InvalidArgument("EVM of an empty sequence".into()));
    }
    let err: f64 = iq
        .iter()
        .map(|&z| {
            let (b0, b1) = qpsk_decide(z);
            (z - qpsk_symbol(b0, b1)).norm_sqr()
        })
        .sum::<f64>()
        / iq.len() as f64;
    Ok(100.0 * err.sqrt())
}

/// Bit error ratio against `bits`, taking the best of the four π/2 rotations of `iq`.
pub fn ber_with_rotation_search(iq: &[Complex64], bits: &[bool]) -> Result<f64> {
    let n = iq.len().min(bits.len() / 2);
    if n == 0 {
        return Err(Error::InvalidArgument(
            "BER needs at least one symbol and two bits".into(),
        ));
    }
    let best = (0..4)
        .map(|k| {
            let rot = Complex64::from_polar(1.0, k as f64 * FRAC_PI_2);
            let rx: Vec<Complex64> = iq[..n].iter().map(|z| z * rot).collect();
            demap(&rx).iter().zip(&bits[..2 * n]).filter(|(a, b)| a != b).count()
        })
        .min()
        .unwrap_or(0);
    Ok(best as f64 / (2 * n) as f64)
}

/// Full receive chain: detection, phase recovery, EVM and BER.
pub fn receive(signal_arm: &DualPolWaveform, carrier_arm: &DualPolWaveform, tx_bits: &[bool]) -> Result<RxResult> {
    let raw = homodyne_detect(signal_arm, carrier_arm)?;
    let (iq_samples, recovered_phase) = phase_recover(&raw)?;
    Ok(RxResult {
        evm_percent: evm(&iq_samples)?,
        ber: ber_with_rotation_search(&iq_samples, tx_bits)?,
        iq_samples,
        recovered_phase,
    })
}

/// Writes one `re, im` row per symbol.
pub fn constellation_export(iq: &[Complex64], path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["re", "im"])?;
    for z in iq {
        wtr.write_record(&[z.re.to_string(), z.im.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_constellation(path: impl AsRef<Path>) -> Result<Vec<Complex64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize::<(f64, f64)>()
        .map(|row| row.map(|(re, im)| Complex64::new(re, im)).map_err(Error::from))
        .collect()
}
