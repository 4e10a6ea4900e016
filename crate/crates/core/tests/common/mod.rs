//! nalgebra reference model of the controller and channel, built directly
//! from the waveplate definitions without touching `polmux::jones`.

#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use polmux::channel::{ChannelConfig, Osnr};
use polmux::controller::Plant;
use polmux::waveform::{balanced_bits, launch_with_carrier, qpsk_modulate, DualPolWaveform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type M2 = Matrix2<Complex64>;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn rot(a: f64) -> M2 {
    M2::new(c(a.cos(), 0.0), c(-a.sin(), 0.0), c(a.sin(), 0.0), c(a.cos(), 0.0))
}

pub fn rot_prime(a: f64) -> M2 {
    M2::new(c(-a.sin(), 0.0), c(-a.cos(), 0.0), c(a.cos(), 0.0), c(-a.sin(), 0.0))
}

pub fn retarder(gamma: f64) -> M2 {
    M2::new(
        Complex64::from_polar(1.0, -gamma / 2.0),
        c(0.0, 0.0),
        c(0.0, 0.0),
        Complex64::from_polar(1.0, gamma / 2.0),
    )
}

pub fn plate(gamma: f64, alpha: f64) -> M2 {
    rot(alpha) * retarder(gamma) * rot(-alpha)
}

pub fn plate_prime(gamma: f64, alpha: f64) -> M2 {
    rot_prime(alpha) * retarder(gamma) * rot(-alpha) - rot(alpha) * retarder(gamma) * rot_prime(-alpha)
}

pub fn channel(theta: f64, phi: f64) -> M2 {
    let d = M2::new(
        Complex64::from_polar(1.0, phi),
        c(0.0, 0.0),
        c(0.0, 0.0),
        Complex64::from_polar(1.0, -phi),
    );
    rot(theta) * d * rot(-theta)
}

/// Coherency matrix and controller-free transfer of one noiseless plant.
pub struct Reference {
    k: M2,
    a: M2,
}

impl Reference {
    pub fn new(launch: &DualPolWaveform, theta: f64, phi: f64) -> Self {
        let mut k = M2::zeros();
        for v in launch.samples() {
            let r = Vector2::new(v.ex, v.ey);
            k += r * r.adjoint();
        }
        k /= c(launch.len() as f64, 0.0);
        let a = channel(theta, phi);
        Reference {
            k: a * k * a.adjoint(),
            a,
        }
    }

    pub fn pc(c1: f64, c2: f64) -> M2 {
        plate(FRAC_PI_2, c1) * plate(PI, c2) * plate(FRAC_PI_2, 0.0)
    }

    pub fn objective(&self, c1: f64, c2: f64) -> f64 {
        let m = Self::pc(c1, c2);
        let out = m * self.k * m.adjoint();
        out[(0, 0)].re / (out[(0, 0)].re + out[(1, 1)].re)
    }

    pub fn gradient(&self, c1: f64, c2: f64) -> [f64; 2] {
        let m = Self::pc(c1, c2);
        let tr = self.k.trace().re;
        let dm1 = plate_prime(FRAC_PI_2, c1) * plate(PI, c2) * plate(FRAC_PI_2, 0.0);
        let dm2 = plate(FRAC_PI_2, c1) * plate_prime(PI, c2) * plate(FRAC_PI_2, 0.0);
        let d = |dm: M2| 2.0 * (dm * self.k * m.adjoint())[(0, 0)].re / tr;
        [d(dm1), d(dm2)]
    }

    pub fn effective(&self, c1: f64, c2: f64) -> M2 {
        Self::pc(c1, c2) * self.a
    }
}

pub fn launch(symbols: usize, seed: u64) -> DualPolWaveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = balanced_bits(symbols, &mut rng);
    let sig = qpsk_modulate(&bits, 15e9, 8).unwrap();
    launch_with_carrier(&sig, 15.0).unwrap()
}

pub fn plant(w: &DualPolWaveform, theta: f64, phi: f64) -> Plant {
    let cfg = ChannelConfig {
        theta,
        phi,
        fiber_length_km: 0.0,
        osnr_db: Osnr::Noiseless,
        ..ChannelConfig::default()
    };
    Plant::through_channel(w, &cfg, 0.0, None).unwrap().0
}
