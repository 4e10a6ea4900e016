//! Sampled dual-polarization waveforms and QPSK symbol mapping.

use std::f64::consts::FRAC_1_SQRT_2;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::jones::{power_of, JonesMatrix, JonesVector, PolPower};

pub const DEFAULT_SAMPLES_PER_SYMBOL: usize = 8;
pub const DEFAULT_FRAME_SYMBOLS: usize = 4096;
/// Launch carrier-to-signal power ratio.
pub const DEFAULT_POWER_DIFF_DB: f64 = 15.0;

/// Time-sampled sequence of Jones vectors at an integer number of samples per symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPolWaveform {
    samples: Vec<JonesVector>,
    symbol_rate: f64,
    samples_per_symbol: usize,
}

impl DualPolWaveform {
    pub fn new(samples: Vec<JonesVector>, symbol_rate: f64, samples_per_symbol: usize) -> Result<Self> {
        if !(symbol_rate.is_finite() && symbol_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "symbol rate must be positive, got {symbol_rate}"
            )));
        }
        if samples_per_symbol < 2 {
            return Err(Error::InvalidArgument(format!(
                "samples per symbol must be at least 2, got {samples_per_symbol}"
            )));
        }
        if samples.len() < samples_per_symbol {
            return Err(Error::InvalidArgument(format!(
                "waveform needs at least one symbol ({samples_per_symbol} samples), got {}",
                samples.len()
            )));
        }
        Ok(DualPolWaveform {
            samples,
            symbol_rate,
            samples_per_symbol,
        })
    }

    pub fn samples(&self) -> &[JonesVector] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn symbol_rate(&self) -> f64 {
        self.symbol_rate
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.samples_per_symbol
    }

    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * self.samples_per_symbol as f64
    }

    /// Number of complete symbols held.
    pub fn symbol_count(&self) -> usize {
        self.samples.len() / self.samples_per_symbol
    }

    /// Same rates, new samples. The caller keeps the length valid.
    pub(crate) fn with_samples(&self, samples: Vec<JonesVector>) -> Self {
        debug_assert!(samples.len() >= self.samples_per_symbol);
        DualPolWaveform {
            samples,
            symbol_rate: self.symbol_rate,
            samples_per_symbol: self.samples_per_symbol,
        }
    }

    pub fn map_samples(&self, f: impl Fn(&JonesVector) -> JonesVector) -> Self {
        self.with_samples(self.samples.iter().map(f).collect())
    }

    /// Applies `m` to every sample.
    pub fn transform(&self, m: &JonesMatrix) -> Self {
        self.map_samples(|v| m * *v)
    }

    pub fn x_component(&self) -> Vec<Complex64> {
        self.samples.iter().map(|v| v.ex).collect()
    }

    pub fn y_component(&self) -> Vec<Complex64> {
        self.samples.iter().map(|v| v.ey).collect()
    }

    /// Writes `t, re_ex, im_ex, re_ey, im_ey` rows, one per sample.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["t", "re_ex", "im_ex", "re_ey", "im_ey"])?;
        let dt = 1.0 / self.sample_rate();
        for (i, v) in self.samples.iter().enumerate() {
            wtr.write_record(&[
                (i as f64 * dt).to_string(),
                v.ex.re.to_string(),
                v.ex.im.to_string(),
                v.ey.re.to_string(),
                v.ey.im.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Gray-coded QPSK: `00 → (1+j)/√2`, `01 → (-1+j)/√2`, `11 → (-1-j)/√2`, `10 → (1-j)/√2`.
pub fn qpsk_symbol(b0: bool, b1: bool) -> Complex64 {
    let re = if b1 { -FRAC_1_SQRT_2 } else { FRAC_1_SQRT_2 };
    let im = if b0 { -FRAC_1_SQRT_2 } else { FRAC_1_SQRT_2 };
    Complex64::new(re, im)
}

/// Hard decision, inverse of [`qpsk_symbol`].
pub fn qpsk_decide(s: Complex64) -> (bool, bool) {
    (s.im < 0.0, s.re < 0.0)
}

pub fn demap(symbols: &[Complex64]) -> Vec<bool> {
    symbols
        .iter()
        .flat_map(|&s| {
            let (b0, b1) = qpsk_decide(s);
            [b0, b1]
        })
        .collect()
}

/// A bit sequence and its QPSK symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct QpskFrame {
    bits: Vec<bool>,
    symbols: Vec<Complex64>,
}

impl QpskFrame {
    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        if !bits.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "QPSK needs an even number of bits, got {}",
                bits.len()
            )));
        }
        let symbols = bits.chunks_exact(2).map(|p| qpsk_symbol(p[0], p[1])).collect();
        Ok(QpskFrame {
            bits: bits.to_vec(),
            symbols,
        })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }
}

/// Random bits in which every QPSK symbol occurs equally often (up to the
/// remainder of `n_symbols / 4`), shuffled.
///
/// A frame built this way has zero symbol mean, so a finite-frame power average
/// carries no signal/carrier beat term, as with the long integration time of a
/// real power monitor.
pub fn balanced_bits<R: Rng + ?Sized>(n_symbols: usize, rng: &mut R) -> Vec<bool> {
    const DIBITS: [(bool, bool); 4] = [(false, false), (false, true), (true, true), (true, false)];
    let mut dibits: Vec<(bool, bool)> = (0..n_symbols / 4).flat_map(|_| DIBITS).collect();
    for _ in 0..n_symbols % 4 {
        dibits.push(DIBITS[rng.random_range(0..4)]);
    }
    dibits.shuffle(rng);
    dibits.into_iter().flat_map(|(a, b)| [a, b]).collect()
}

/// Maps `bits` to NRZ QPSK on the x polarization, y left dark.
pub fn qpsk_modulate(bits: &[bool], symbol_rate: f64, samples_per_symbol: usize) -> Result<DualPolWaveform> {
    let frame = QpskFrame::from_bits(bits)?;
    if frame.symbols.is_empty() {
        return Err(Error::InvalidArgument("QPSK frame needs at least one symbol".into()));
    }
    let samples = frame
        .symbols
        .iter()
        .flat_map(|&s| std::iter::repeat_n(JonesVector::new(s, Complex64::new(0.0, 0.0)), samples_per_symbol))
        .collect();
    DualPolWaveform::new(samples, symbol_rate, samples_per_symbol)
}

/// Adds a zero-phase CW carrier on y whose power exceeds the x signal power by `power_diff_db`.
pub fn launch_with_carrier(signal: &DualPolWaveform, power_diff_db: f64) -> Result<DualPolWaveform> {
    if !power_diff_db.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "power difference must be finite, got {power_diff_db}"
        )));
    }
    if signal.samples.iter().any(|v| v.ey != Complex64::new(0.0, 0.0)) {
        return Err(Error::InvalidArgument(
            "signal must be confined to the x polarization before the carrier is added".into(),
        ));
    }
    let signal_power = mean_power(signal, signal.symbol_count())?.px;
    let carrier = Complex64::new((signal_power * 10f64.powf(power_diff_db / 10.0)).sqrt(), 0.0);
    Ok(signal.map_samples(|v| JonesVector::new(v.ex, carrier)))
}

/// Time-averaged power over the first `window_symbols` symbols.
pub fn mean_power(w: &DualPolWaveform, window_symbols: usize) -> Result<PolPower> {
    if w.is_empty() {
        return Err(Error::InvalidArgument("cannot average an empty waveform".into()));
    }
    if window_symbols == 0 || window_symbols > w.symbol_count() {
        return Err(Error::InvalidArgument(format!(
            "window of {window_symbols} symbols outside 1..={}",
            w.symbol_count()
        )));
    }
    let n = window_symbols * w.samples_per_symbol;
    let sum = w.samples[..n].iter().fold(PolPower::default(), |acc, v| {
        let p = power_of(v);
        PolPower {
            px: acc.px + p.px,
            py: acc.py + p.py,
        }
    });
    Ok(PolPower {
        px: sum.px / n as f64,
        py: sum.py / n as f64,
    })
}

/// `10·log10(max/min)` of the two polarization powers.
pub fn power_difference_db(p: &PolPower) -> Result<f64> {
    p.difference_db()
}
