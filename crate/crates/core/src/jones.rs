//! Jones calculus for fully polarized light.
//!
//! Angles are in radians. A positive angle rotates the device axes
//! counter-clockwise with respect to the reference frame, so that
//! [`rotator`] returns `[[cos θ, -sin θ], [sin θ, cos θ]]`. Phases use the
//! engineering convention `e^{jφ}`.

use std::ops::Mul;

use num_complex::Complex64;

use crate::error::{ensure_finite, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Optical field amplitudes on the x and y polarizations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JonesVector {
    pub ex: Complex64,
    pub ey: Complex64,
}

impl JonesVector {
    pub const fn new(ex: Complex64, ey: Complex64) -> Self {
        JonesVector { ex, ey }
    }

    pub const fn zero() -> Self {
        JonesVector { ex: ZERO, ey: ZERO }
    }

    /// Total power `|ex|² + |ey|²`.
    pub fn intensity(&self) -> f64 {
        self.ex.norm_sqr() + self.ey.norm_sqr()
    }

    pub fn is_finite(&self) -> bool {
        self.ex.is_finite() && self.ey.is_finite()
    }

    pub fn scale(&self, k: Complex64) -> Self {
        JonesVector::new(self.ex * k, self.ey * k)
    }
}

impl std::ops::Add for JonesVector {
    type Output = JonesVector;

    fn add(self, rhs: JonesVector) -> JonesVector {
        JonesVector::new(self.ex + rhs.ex, self.ey + rhs.ey)
    }
}

/// Mean (or instantaneous) optical power per polarization, linear units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolPower {
    pub px: f64,
    pub py: f64,
}

impl PolPower {
    pub fn total(&self) -> f64 {
        self.px + self.py
    }

    /// `10·log10(max/min)`; requires both powers to be strictly positive.
    pub fn difference_db(&self) -> Result<f64> {
        if !(self.px > 0.0 && self.py > 0.0) {
            return Err(Error::UndefinedMeasurement(format!(
                "power difference needs px > 0 and py > 0 (px={}, py={})",
                self.px, self.py
            )));
        }
        Ok(10.0 * (self.px.max(self.py) / self.px.min(self.py)).log10())
    }
}

/// A 2×2 complex operator acting on [`JonesVector`]s, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesMatrix {
    pub m: [[Complex64; 2]; 2],
}

impl JonesMatrix {
    pub const fn new(m00: Complex64, m01: Complex64, m10: Complex64, m11: Complex64) -> Self {
        JonesMatrix {
            m: [[m00, m01], [m10, m11]],
        }
    }

    pub const fn identity() -> Self {
        JonesMatrix::new(ONE, ZERO, ZERO, ONE)
    }

    pub const fn diagonal(d0: Complex64, d1: Complex64) -> Self {
        JonesMatrix::new(d0, ZERO, ZERO, d1)
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.m[row][col]
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let m = &self.m;
        JonesMatrix::new(m[0][0].conj(), m[1][0].conj(), m[0][1].conj(), m[1][1].conj())
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        JonesMatrix::new(m[0][0], m[1][0], m[0][1], m[1][1])
    }

    pub fn det(&self) -> Complex64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn trace(&self) -> Complex64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn scale(&self, k: Complex64) -> Self {
        let m = &self.m;
        JonesMatrix::new(m[0][0] * k, m[0][1] * k, m[1][0] * k, m[1][1] * k)
    }

    /// Largest entrywise deviation of `MᴴM` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let p = self.adjoint() * *self;
        let id = JonesMatrix::identity();
        let mut worst = 0.0_f64;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((p.m[r][c] - id.m[r][c]).norm());
            }
        }
        worst
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() < tol
    }

    /// Largest off-diagonal magnitude.
    pub fn max_offdiag(&self) -> f64 {
        self.m[0][1].norm().max(self.m[1][0].norm())
    }

    /// Smallest diagonal magnitude.
    pub fn min_diag(&self) -> f64 {
        self.m[0][0].norm().min(self.m[1][1].norm())
    }

    /// The two eigenvalues, from the characteristic polynomial.
    pub fn eigenvalues(&self) -> (Complex64, Complex64) {
        let half_tr = self.trace() * 0.5;
        let disc = (half_tr * half_tr - self.det()).sqrt();
        (half_tr + disc, half_tr - disc)
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|z| z.is_finite())
    }
}

impl Default for JonesMatrix {
    fn default() -> Self {
        JonesMatrix::identity()
    }
}

impl Mul for JonesMatrix {
    type Output = JonesMatrix;

    fn mul(self, rhs: JonesMatrix) -> JonesMatrix {
        let a = &self.m;
        let b = &rhs.m;
        JonesMatrix::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

impl Mul<JonesVector> for JonesMatrix {
    type Output = JonesVector;

    fn mul(self, v: JonesVector) -> JonesVector {
        JonesVector::new(
            self.m[0][0] * v.ex + self.m[0][1] * v.ey,
            self.m[1][0] * v.ex + self.m[1][1] * v.ey,
        )
    }
}

impl Mul<JonesVector> for &JonesMatrix {
    type Output = JonesVector;

    fn mul(self, v: JonesVector) -> JonesVector {
        *self * v
    }
}

pub(crate) fn rotation(theta: f64) -> JonesMatrix {
    let (s, c) = theta.sin_cos();
    JonesMatrix::new(
        Complex64::new(c, 0.0),
        Complex64::new(-s, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(c, 0.0),
    )
}

pub(crate) fn differential_phase(phi: f64) -> JonesMatrix {
    let p = Complex64::from_polar(1.0, phi);
    JonesMatrix::diagonal(p, p.conj())
}

/// Real rotation matrix `[[cos θ, -sin θ], [sin θ, cos θ]]`.
pub fn rotator(theta: f64) -> Result<JonesMatrix> {
    ensure_finite("theta", theta)?;
    Ok(rotation(theta))
}

/// Differential phase `diag(e^{jφ}, e^{-jφ})`.
pub fn phase_plate(phi: f64) -> Result<JonesMatrix> {
    ensure_finite("phi", phi)?;
    Ok(differential_phase(phi))
}

/// Linear retarder with retardance `retardance` and fast axis at `azimuth`:
/// `R(α)·diag(e^{-jΓ/2}, e^{jΓ/2})·R(-α)`.
pub fn waveplate(retardance: f64, azimuth: f64) -> Result<JonesMatrix> {
    ensure_finite("retardance", retardance)?;
    ensure_finite("azimuth", azimuth)?;
    Ok(rotation(azimuth) * differential_phase(-0.5 * retardance) * rotation(-azimuth))
}

pub fn quarter_wave_plate(azimuth: f64) -> Result<JonesMatrix> {
    waveplate(std::f64::consts::FRAC_PI_2, azimuth)
}

pub fn half_wave_plate(azimuth: f64) -> Result<JonesMatrix> {
    waveplate(std::f64::consts::PI, azimuth)
}

/// Polarization beam splitter whose axes are rotated by `theta`.
///
/// Returns the x output arm (field only on x) and the y output arm (field only on y).
pub fn pbs_split(input: JonesVector, theta: f64) -> Result<(JonesVector, JonesVector)> {
    ensure_finite("theta", theta)?;
    if !input.is_finite() {
        return Err(Error::InvalidArgument("PBS input must be finite".into()));
    }
    let rotated = rotation(theta) * input;
    Ok((JonesVector::new(rotated.ex, ZERO), JonesVector::new(ZERO, rotated.ey)))
}

/// Polarization beam combiner matching [`pbs_split`] at the same `theta`.
///
/// Only the x component of `x_arm` and the y component of `y_arm` are used.
pub fn pbc_combine(x_arm: JonesVector, y_arm: JonesVector, theta: f64) -> Result<JonesVector> {
    ensure_finite("theta", theta)?;
    Ok(rotation(-theta) * JonesVector::new(x_arm.ex, y_arm.ey))
}

/// Lumped splitter/combiner misalignment plus fiber birefringence:
/// `R(θ)·diag(e^{jφ}, e^{-jφ})·R(-θ)`, with equal splitter and combiner angles.
pub fn composite_channel(theta: f64, phi: f64) -> Result<JonesMatrix> {
    ensure_finite("theta", theta)?;
    ensure_finite("phi", phi)?;
    Ok(rotation(theta) * differential_phase(phi) * rotation(-theta))
}

/// Instantaneous power per polarization.
pub fn power_of(v: &JonesVector) -> PolPower {
    PolPower {
        px: v.ex.norm_sqr(),
        py: v.ey.norm_sqr(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn assert_mat_close(a: &JonesMatrix, b: &JonesMatrix, tol: f64) {
        for r in 0..2 {
            for k in 0..2 {
                let d = (a.m[r][k] - b.m[r][k]).norm();
                assert!(d < tol, "entry ({r},{k}) differs by {d}: {a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn rotator_zero_is_identity() {
        assert_eq!(rotator(0.0).unwrap(), JonesMatrix::identity());
    }

    #[test]
    fn rotator_quarter_turn() {
        let r = rotator(FRAC_PI_2).unwrap();
        let want = JonesMatrix::new(c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0));
        assert_mat_close(&r, &want, 1e-15);
        assert!((r.det() - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn non_finite_angles_are_rejected() {
        assert!(matches!(rotator(f64::NAN), Err(Error::InvalidArgument(_))));
        assert!(matches!(phase_plate(f64::INFINITY), Err(Error::InvalidArgument(_))));
        assert!(composite_channel(0.1, f64::NAN).is_err());
        assert!(pbs_split(JonesVector::zero(), f64::NEG_INFINITY).is_err());
        let bad = JonesVector::new(c(f64::NAN, 0.0), c(0.0, 0.0));
        assert!(pbs_split(bad, 0.0).is_err());
    }

    #[test]
    fn phase_plate_examples() {
        assert_eq!(phase_plate(0.0).unwrap(), JonesMatrix::identity());
        let p = phase_plate(FRAC_PI_2).unwrap();
        assert_mat_close(&p, &JonesMatrix::diagonal(c(0.0, 1.0), c(0.0, -1.0)), 1e-15);
        assert_eq!(p.m[0][1], ZERO);
        assert_eq!(p.m[1][0], ZERO);
    }

    #[test]
    fn pbs_split_examples() {
        let x = JonesVector::new(c(1.0, 0.0), ZERO);
        let (xa, ya) = pbs_split(x, 0.0).unwrap();
        assert_eq!(power_of(&xa).total(), 1.0);
        assert_eq!(power_of(&ya).total(), 0.0);

        let (xa, ya) = pbs_split(x, FRAC_PI_2).unwrap();
        assert!(power_of(&xa).total() < 1e-30);
        assert!((power_of(&ya).total() - 1.0).abs() < 1e-15);

        // Scalar equations evaluated directly.
        let (ex, ey, th) = (c(0.8, 0.0), c(0.0, 0.6), 0.3_f64);
        let want_x = ex * th.cos() - ey * th.sin();
        let want_y = ex * th.sin() + ey * th.cos();
        let (xa, ya) = pbs_split(JonesVector::new(ex, ey), th).unwrap();
        assert!((xa.ex - want_x).norm() < 1e-15 && xa.ey == ZERO);
        assert!((ya.ey - want_y).norm() < 1e-15 && ya.ex == ZERO);
        let sum = want_x.norm_sqr() + want_y.norm_sqr();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((xa.intensity() + ya.intensity() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pbc_combine_examples() {
        let v = JonesVector::new(c(0.3, -0.2), c(0.7, 0.1));
        let (xa, ya) = pbs_split(v, 0.0).unwrap();
        assert_eq!(pbc_combine(xa, ya, 0.0).unwrap(), v);

        let (xa, ya) = pbs_split(v, 0.7).unwrap();
        let back = pbc_combine(xa, ya, 0.7).unwrap();
        assert!((back.ex - v.ex).norm() < 1e-12 && (back.ey - v.ey).norm() < 1e-12);

        let out = pbc_combine(JonesVector::new(ONE, ZERO), JonesVector::new(ZERO, ONE), 0.0).unwrap();
        assert_eq!(out, JonesVector::new(ONE, ONE));
    }

    #[test]
    fn composite_channel_examples() {
        assert_mat_close(&composite_channel(0.4, 0.0).unwrap(), &JonesMatrix::identity(), 1e-15);
        let want = JonesMatrix::diagonal(Complex64::from_polar(1.0, 1.1), Complex64::from_polar(1.0, -1.1));
        assert_mat_close(&composite_channel(0.0, 1.1).unwrap(), &want, 1e-15);
    }

    #[test]
    fn power_of_examples() {
        assert_eq!(power_of(&JonesVector::new(ONE, ZERO)), PolPower { px: 1.0, py: 0.0 });
        assert_eq!(power_of(&JonesVector::zero()), PolPower { px: 0.0, py: 0.0 });
        assert_eq!(
            power_of(&JonesVector::new(c(3.0, 0.0), c(0.0, 4.0))),
            PolPower { px: 9.0, py: 16.0 }
        );
    }

    #[test]
    fn quarter_wave_plate_at_zero_azimuth() {
        let q = quarter_wave_plate(0.0).unwrap();
        let want = JonesMatrix::diagonal(
            Complex64::from_polar(1.0, -FRAC_PI_4),
            Complex64::from_polar(1.0, FRAC_PI_4),
        );
        assert_mat_close(&q, &want, 1e-15);
    }

    #[test]
    fn half_wave_plate_is_pi_periodic_in_azimuth() {
        let a = half_wave_plate(0.37).unwrap();
        let b = half_wave_plate(0.37 + PI).unwrap();
        assert_mat_close(&a, &b, 1e-15);
    }

    #[test]
    fn difference_db_requires_positive_powers() {
        assert!(PolPower { px: 0.0, py: 1.0 }.difference_db().is_err());
        assert!(PolPower { px: 1.0, py: 0.0 }.difference_db().is_err());
        let d = PolPower { px: 1.0, py: 4.0 }.difference_db().unwrap();
        assert!((d - 6.020599913279624).abs() < 1e-12);
    }

    fn angle() -> impl Strategy<Value = f64> {
        -10.0..10.0_f64
    }

    fn vector() -> impl Strategy<Value = JonesVector> {
        (-3.0..3.0_f64, -3.0..3.0_f64, -3.0..3.0_f64, -3.0..3.0_f64)
            .prop_map(|(a, b, x, y)| JonesVector::new(c(a, b), c(x, y)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rotators_compose_additively(a in angle(), b in angle()) {
            // Plain 2×2 real products.
            let (sa, ca) = a.sin_cos();
            let (sb, cb) = b.sin_cos();
            let prod = [[ca * cb - sa * sb, -ca * sb - sa * cb], [sa * cb + ca * sb, -sa * sb + ca * cb]];
            let r = rotator(a + b).unwrap();
            for (row, want) in r.m.iter().zip(&prod) {
                for (z, w) in row.iter().zip(want) {
                    prop_assert!((z.re - w).abs() < 1e-12);
                    prop_assert!(z.im == 0.0);
                }
            }
            let composed = rotator(a).unwrap() * rotator(b).unwrap();
            for (row, want) in composed.m.iter().zip(&r.m) {
                for (z, w) in row.iter().zip(want) {
                    prop_assert!((z - w).norm() < 1e-12);
                }
            }
        }

        #[test]
        fn phase_plate_has_unit_determinant(phi in angle()) {
            prop_assert!((phase_plate(phi).unwrap().det().norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn split_then_combine_is_identity(v in vector(), theta in angle()) {
            let (xa, ya) = pbs_split(v, theta).unwrap();
            let arms = xa.intensity() + ya.intensity();
            prop_assert!((arms - v.intensity()).abs() <= 1e-12 * v.intensity().max(1e-300));
            let back = pbc_combine(xa, ya, theta).unwrap();
            prop_assert!((back.ex - v.ex).norm() < 1e-12 && (back.ey - v.ey).norm() < 1e-12);
        }

        #[test]
        fn constructors_are_unitary(t in angle(), p in angle(), g in angle()) {
            for m in [
                rotator(t).unwrap(),
                phase_plate(p).unwrap(),
                waveplate(g, t).unwrap(),
                composite_channel(t, p).unwrap(),
            ] {
                prop_assert!(m.is_unitary(1e-12), "{m:?}");
            }
        }

        #[test]
        fn unitary_maps_conserve_power(v in vector(), t in angle(), p in angle()) {
            let m = composite_channel(t, p).unwrap() * quarter_wave_plate(p).unwrap();
            let out = m * v;
            prop_assert!((out.intensity() - v.intensity()).abs() <= 1e-12 * v.intensity().max(1e-300));
        }

        #[test]
        fn composite_eigenvalues_are_opposite_phases(t in angle(), p in angle()) {
            let (l0, l1) = composite_channel(t, p).unwrap().eigenvalues();
            let e = Complex64::from_polar(1.0, p);
            let direct = (l0 - e).norm().max((l1 - e.conj()).norm());
            let swapped = (l1 - e).norm().max((l0 - e.conj()).norm());
            prop_assert!(direct.min(swapped) < 1e-7, "{l0} {l1} vs e^(±j{p})");
        }
    }
}
