//! Direct bispectrum estimate and integrated bispectral intensity.
//!
//! The domain is every index pair `(k, l)` with `k, l >= 1` and
//! `k + l <= T - 1`, the full rectangle rather than the principal triangle.
//! For `T = 19` that is 153 pairs.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::rng::{open_unit, substream};
use crate::spectral::FourierCoefficients;

#[derive(Debug, Error)]
pub enum BispectralError {
    #[error("series has {0} observations; the bispectrum needs at least 4")]
    SeriesTooShort(usize),
    #[error("bispectral domain is empty")]
    EmptyDomain,
}

/// Squared magnitudes `|X(k)·X(l)·X*(k+l)|²` over the domain plus their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BispectrumSummary {
    magnitudes_sq: Vec<((usize, usize), f64)>,
    intensity: Option<f64>,
}

impl BispectrumSummary {
    /// Stored pairs in `(k, l)` lexicographic order.
    pub fn magnitudes_sq(&self) -> &[((usize, usize), f64)] {
        &self.magnitudes_sq
    }

    pub fn get(&self, k: usize, l: usize) -> Option<f64> {
        self.magnitudes_sq
            .binary_search_by(|(key, _)| key.cmp(&(k, l)))
            .ok()
            .map(|i| self.magnitudes_sq[i].1)
    }

    /// `M`, the number of stored pairs.
    pub fn domain_size(&self) -> usize {
        self.magnitudes_sq.len()
    }

    /// Set once [`bispectral_intensity`] has run.
    pub fn intensity(&self) -> Option<f64> {
        self.intensity
    }

    /// `None` while the intensity is unset or zero.
    pub fn log10_intensity(&self) -> Option<f64> {
        self.intensity.and_then(log10_intensity)
    }
}

/// Log10 of a positive intensity; zero has no logarithm and maps to `None`.
pub fn log10_intensity(intensity: f64) -> Option<f64> {
    (intensity > 0.0).then(|| intensity.log10())
}

pub fn bispectrum_direct(coeffs: &FourierCoefficients) -> Result<BispectrumSummary, BispectralError> {
    let n = coeffs.len();
    if n < 4 {
        return Err(BispectralError::SeriesTooShort(n));
    }
    let x = coeffs.values();
    let mut magnitudes_sq = Vec::with_capacity((n - 1) * (n - 2) / 2);
    for k in 1..n - 1 {
        for l in 1..n - k {
            let b = x[k] * x[l] * x[k + l].conj();
            magnitudes_sq.push(((k, l), b.norm_sqr()));
        }
    }
    Ok(BispectrumSummary {
        magnitudes_sq,
        intensity: None,
    })
}

/// Mean squared bispectrum magnitude; also stored on `summary`.
pub fn bispectral_intensity(summary: &mut BispectrumSummary) -> Result<f64, BispectralError> {
    if summary.magnitudes_sq.is_empty() {
        return Err(BispectralError::EmptyDomain);
    }
    let mean = summary.magnitudes_sq.iter().map(|(_, v)| v).sum::<f64>()
        / summary.magnitudes_sq.len() as f64;
    summary.intensity = Some(mean);
    Ok(mean)
}

/// Convenience: direct estimate followed by its intensity.
pub fn summarize(coeffs: &FourierCoefficients) -> Result<BispectrumSummary, BispectralError> {
    let mut s = bispectrum_direct(coeffs)?;
    bispectral_intensity(&mut s)?;
    Ok(s)
}

/// Same magnitudes, fresh uniform phases, conjugate symmetry kept so the
/// inverse transform stays real. `X(0)` and, for even `T`, `X(T/2)` must be
/// real, so they keep their magnitude with a random sign.
pub fn random_phase_surrogate(coeffs: &FourierCoefficients, seed: u64) -> FourierCoefficients {
    let x = coeffs.values();
    let n = x.len();
    let mut rng = substream(seed, 0);
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    if n == 0 {
        return FourierCoefficients::from_values(out);
    }
    out[0] = Complex64::new(x[0].norm() * x[0].re.signum(), 0.0);
    for k in 1..=(n - 1) / 2 {
        let phase = 2.0 * PI * open_unit(&mut rng);
        out[k] = Complex64::from_polar(x[k].norm(), phase);
        out[n - k] = out[k].conj();
    }
    if n % 2 == 0 {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        out[n / 2] = Complex64::new(sign * x[n / 2].norm(), 0.0);
    }
    FourierCoefficients::from_values(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;
    use crate::spectral::dft_real;
    use proptest::prelude::*;

    fn coeffs(x: &[f64]) -> FourierCoefficients {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
        FourierCoefficients::from_values(dft_real(&centred))
    }

    fn intensity_of(x: &[f64]) -> f64 {
        summarize(&coeffs(x)).unwrap().intensity().unwrap()
    }

    #[test]
    fn domain_size_matches_enumeration() {
        let s = bispectrum_direct(&coeffs(&[1.0; 19])).unwrap();
        let brute = (1..=17).map(|k| 18 - k).sum::<usize>();
        assert_eq!(brute, 153);
        assert_eq!(s.domain_size(), 153);
        for ((k, l), _) in s.magnitudes_sq() {
            assert!(*k >= 1 && *l >= 1 && k + l <= 18);
        }
    }

    #[test]
    fn zero_series_has_zero_intensity() {
        let mut s = bispectrum_direct(&coeffs(&[0.0; 19])).unwrap();
        assert!(s.magnitudes_sq().iter().all(|(_, v)| *v == 0.0));
        assert_eq!(bispectral_intensity(&mut s).unwrap(), 0.0);
        assert_eq!(s.log10_intensity(), None);
    }

    #[test]
    fn too_short_and_empty() {
        assert!(matches!(
            bispectrum_direct(&coeffs(&[1.0, 2.0, 3.0])),
            Err(BispectralError::SeriesTooShort(3))
        ));
        let mut empty = BispectrumSummary {
            magnitudes_sq: vec![],
            intensity: None,
        };
        assert!(matches!(bispectral_intensity(&mut empty), Err(BispectralError::EmptyDomain)));
    }

    #[test]
    fn magnitudes_are_symmetric_in_the_pair() {
        let x: Vec<f64> = (0..19).map(|i| ((i * i) % 7) as f64).collect();
        let s = bispectrum_direct(&coeffs(&x)).unwrap();
        for ((k, l), v) in s.magnitudes_sq() {
            let mirrored = s.get(*l, *k).unwrap();
            assert!((v - mirrored).abs() <= 1e-12 * v.abs().max(1e-300));
        }
    }

    #[test]
    fn sixth_order_homogeneity() {
        let x: Vec<f64> = (0..19).map(|i| (i as f64 * 1.3).sin() + 0.2 * i as f64).collect();
        let base = intensity_of(&x);
        for c in [0.5, 2.0, -3.0] {
            let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
            let want = base * c.powi(6);
            assert!((intensity_of(&scaled) - want).abs() <= 1e-9 * want);
        }
    }

    #[test]
    fn surrogate_properties() {
        let mut rng = substream(3, 0);
        let x: Vec<f64> = (0..19).map(|_| standard_normal(&mut rng)).collect();
        let c = coeffs(&x);
        let s1 = random_phase_surrogate(&c, 42);
        let s2 = random_phase_surrogate(&c, 42);
        assert_eq!(s1, s2);
        assert_ne!(s1, random_phase_surrogate(&c, 43));
        for (a, b) in c.values().iter().zip(s1.values()) {
            assert!((a.norm() - b.norm()).abs() <= 1e-12 * a.norm().max(1.0));
        }
        for v in s1.inverse() {
            assert!(v.im.abs() <= 1e-9);
        }
        // Round trip through the forward transform recovers the surrogate.
        let back: Vec<f64> = s1.inverse().iter().map(|v| v.re).collect();
        for (a, b) in dft_real(&back).iter().zip(s1.values()) {
            assert!((a - b).norm() <= 1e-9);
        }
    }

    #[test]
    fn surrogate_keeps_even_length_real() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.9).cos()).collect();
        let s = random_phase_surrogate(&coeffs(&x), 1);
        assert!(s.values()[10].im == 0.0);
        assert!(s.inverse().iter().all(|v| v.im.abs() <= 1e-9));
    }

    /// The intensity is a product of squared magnitudes, so phase
    /// randomization cannot change it.
    #[test]
    fn surrogates_share_the_intensity() {
        let x: Vec<f64> = (1..=19)
            .map(|t| {
                let w = 2.0 * PI * t as f64 / 19.0;
                (2.0 * w + 0.4).cos() + (3.0 * w + 1.1).cos() + (5.0 * w + 1.5).cos()
            })
            .collect();
        let c = coeffs(&x);
        let original = summarize(&c).unwrap().intensity().unwrap();
        for seed in 0..20 {
            let s = summarize(&random_phase_surrogate(&c, seed)).unwrap().intensity().unwrap();
            assert!((s - original).abs() <= 1e-9 * original);
        }
    }

    proptest! {
        #[test]
        fn invariant_under_reversal_and_shift(
            x in prop::collection::vec(-5.0f64..5.0, 6..25),
            shift in -100.0f64..100.0,
        ) {
            let base = intensity_of(&x);
            let reversed: Vec<f64> = x.iter().rev().copied().collect();
            let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
            let tol = 1e-9 * base.max(1e-12);
            prop_assert!((intensity_of(&reversed) - base).abs() <= tol);
            // Centring a shifted series leaves rounding of order |shift|·ε in it.
            prop_assert!((intensity_of(&shifted) - base).abs() <= 1e-8 * base.max(1e-12));
        }
    }

    #[test]
    fn white_noise_log_intensity_is_stable() {
        // Median log10 intensity over 200 replicate series, per seed family.
        let medians: Vec<f64> = (0..200u64)
            .map(|seed| {
                let mut logs: Vec<f64> = (0..50)
                    .map(|rep| {
                        let mut rng = substream(seed, rep);
                        let x: Vec<f64> = (0..19).map(|_| standard_normal(&mut rng)).collect();
                        intensity_of(&x).log10()
                    })
                    .collect();
                logs.sort_by(f64::total_cmp);
                logs[logs.len() / 2]
            })
            .collect();
        let lo = medians.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = medians.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 0.5, "spread {}", hi - lo);
    }
}
