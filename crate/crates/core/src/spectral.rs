//! Second-order spectral summaries of demeaned annual series.
//!
//! The DFT is the direct O(T²) sum with the time index running `1..=T`,
//! which for panels of a few dozen years is both exact enough and fast.
//! Smoothed densities come from a split-cosine-bell taper followed by one
//! or more modified-Daniell passes over the periodogram ordinates
//! `k = 1..=T/2`; band powers are plain sums of those ordinates.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::inference::{spearman, InferenceError};
use crate::panel::DemeanedSeries;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("series has {0} observations; at least 2 are required")]
    SeriesTooShort(usize),
    #[error("taper proportion {0} outside [0, 0.5]")]
    InvalidProportion(f64),
    #[error("smoothing span {span} invalid for {ordinates} ordinates (must be odd, >= 1, <= {max})")]
    InvalidSpan { span: usize, ordinates: usize, max: usize },
    #[error("band cutoffs must satisfy 0 < low ({low}) < mid ({mid}) < 0.5")]
    InvalidPartition { low: f64, mid: f64 },
    #[error("unit sets differ between partitions")]
    MismatchedUnitSets,
    #[error("need at least two partitions to compare")]
    TooFewPartitions,
    #[error("rank correlation failed: {0}")]
    Rank(#[from] InferenceError),
}

/// DFT coefficients `X(k)` for `k = 0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoefficients {
    values: Vec<Complex64>,
}

impl FourierCoefficients {
    pub fn from_values(values: Vec<Complex64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Series length `T`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest deviation from `X(T-k) = conj(X(k))`.
    pub fn conjugate_asymmetry(&self) -> f64 {
        let n = self.values.len();
        (1..n)
            .map(|k| (self.values[n - k] - self.values[k].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Inverse transform matching [`dft_real`]'s `t = 1..=T` convention.
    pub fn inverse(&self) -> Vec<Complex64> {
        let n = self.values.len();
        (1..=n)
            .map(|t| {
                self.values
                    .iter()
                    .enumerate()
                    .map(|(k, x)| x * twiddle(t * k, n).conj())
                    .sum::<Complex64>()
                    / n as f64
            })
            .collect()
    }
}

/// `exp(-2πi·m/n)` with the phase reduced mod `n` before scaling.
fn twiddle(m: usize, n: usize) -> Complex64 {
    let phase = -2.0 * PI * (m % n) as f64 / n as f64;
    Complex64::from_polar(1.0, phase)
}

/// `X(k) = Σ_{t=1}^{T} x(t)·exp(-2πi·t·k/T)`.
pub fn dft_real(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, &v)| v * twiddle((i + 1) * k, n))
                .sum()
        })
        .collect()
}

pub fn dft(series: &DemeanedSeries) -> Result<FourierCoefficients, SpectralError> {
    if series.len() < 2 {
        return Err(SpectralError::SeriesTooShort(series.len()));
    }
    let coeffs = FourierCoefficients::from_values(dft_real(&series.values));
    debug_assert!(
        coeffs.conjugate_asymmetry()
            <= 1e-9 * series.values.iter().map(|v| v.abs()).sum::<f64>().max(1.0),
        "DFT of real input lost conjugate symmetry"
    );
    Ok(coeffs)
}

/// `I(ω_k) = |X(k)|²/T` for `k = 1..=T/2`.
pub fn raw_periodogram(coeffs: &FourierCoefficients) -> Vec<f64> {
    let n = coeffs.len();
    (1..=n / 2)
        .map(|k| coeffs.values[k].norm_sqr() / n as f64)
        .collect()
}

/// Split cosine bell over the first and last `floor(proportion·T)` points.
pub fn taper(series: &DemeanedSeries, proportion: f64) -> Result<DemeanedSeries, SpectralError> {
    if !(0.0..=0.5).contains(&proportion) {
        return Err(SpectralError::InvalidProportion(proportion));
    }
    let n = series.len();
    let m = (proportion * n as f64).floor() as usize;
    let mut values = series.values.clone();
    for j in 0..m {
        let w = 0.5 * (1.0 - (PI * (j as f64 + 0.5) / m as f64).cos());
        values[j] *= w;
        values[n - 1 - j] *= w;
    }
    Ok(DemeanedSeries {
        values,
        ..series.clone()
    })
}

fn daniell_weights(span: usize) -> Vec<f64> {
    if span == 1 {
        return vec![1.0];
    }
    let m = (span - 1) / 2;
    let mut w = vec![1.0 / (2 * m) as f64; span];
    w[0] /= 2.0;
    w[span - 1] /= 2.0;
    w
}

/// Half-sample mirror index: `-1 -> 0`, `n -> n-1`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let r = i.rem_euclid(period);
    (if r < n { r } else { period - 1 - r }) as usize
}

/// Successive modified-Daniell passes, one per span, reflecting at both
/// ends of the ordinate axis so total mass is preserved.
pub fn smooth_periodogram(raw: &[f64], spans: &[usize]) -> Result<Vec<f64>, SpectralError> {
    let n = raw.len();
    let max = (2 * n).saturating_sub(1);
    let mut current = raw.to_vec();
    for &span in spans {
        if span == 0 || span % 2 == 0 || span > max {
            return Err(SpectralError::InvalidSpan {
                span,
                ordinates: n,
                max,
            });
        }
        let weights = daniell_weights(span);
        let m = (span / 2) as isize;
        current = (0..n as isize)
            .map(|i| {
                weights
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * current[reflect(i + j as isize - m, n)])
                    .sum()
            })
            .collect();
    }
    Ok(current)
}

/// Taper and smoothing settings for [`estimate_spectrum`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralParams {
    pub taper_proportion: f64,
    pub spans: Vec<usize>,
}

impl Default for SpectralParams {
    fn default() -> Self {
        Self {
            taper_proportion: 0.1,
            spans: vec![3],
        }
    }
}

/// Periodogram and smoothed density on the grid `f_k = k/T`, `k = 1..=T/2`.
///
/// `raw` is the periodogram of the untapered series; `smoothed` is the
/// Daniell-smoothed periodogram of the tapered series.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate {
    pub freqs: Vec<f64>,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub taper_proportion: f64,
    pub smoothing_spans: Vec<usize>,
}

pub fn estimate_spectrum(
    series: &DemeanedSeries,
    params: &SpectralParams,
) -> Result<SpectrumEstimate, SpectralError> {
    let n = series.len();
    let raw = raw_periodogram(&dft(series)?);
    let tapered = taper(series, params.taper_proportion)?;
    let smoothed = smooth_periodogram(&raw_periodogram(&dft(&tapered)?), &params.spans)?;
    Ok(SpectrumEstimate {
        freqs: (1..=n / 2).map(|k| k as f64 / n as f64).collect(),
        raw,
        smoothed,
        taper_proportion: params.taper_proportion,
        smoothing_spans: params.spans.clone(),
    })
}

/// Upper cutoffs of the low and mid bands on the normalized frequency axis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BandPartition {
    low_upper: f64,
    mid_upper: f64,
}

impl BandPartition {
    pub fn new(low_upper: f64, mid_upper: f64) -> Result<Self, SpectralError> {
        if !(0.0 < low_upper && low_upper < mid_upper && mid_upper < 0.5) {
            return Err(SpectralError::InvalidPartition {
                low: low_upper,
                mid: mid_upper,
            });
        }
        Ok(Self {
            low_upper,
            mid_upper,
        })
    }

    pub fn low_upper(&self) -> f64 {
        self.low_upper
    }

    pub fn mid_upper(&self) -> f64 {
        self.mid_upper
    }

    /// 0 = low, 1 = mid, 2 = high. Upper edges are closed.
    pub fn band_of(&self, f: f64) -> usize {
        if f <= self.low_upper {
            0
        } else if f <= self.mid_upper {
            1
        } else {
            2
        }
    }
}

impl Default for BandPartition {
    fn default() -> Self {
        Self {
            low_upper: 0.15,
            mid_upper: 0.30,
        }
    }
}

impl std::fmt::Display for BandPartition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.low_upper, self.mid_upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPower {
    pub p_low: f64,
    pub p_mid: f64,
    pub p_high: f64,
}

impl BandPower {
    pub fn total(&self) -> f64 {
        self.p_low + self.p_mid + self.p_high
    }
}

pub fn band_power(spec: &SpectrumEstimate, partition: &BandPartition) -> BandPower {
    let mut sums = [0.0; 3];
    for (f, s) in spec.freqs.iter().zip(&spec.smoothed) {
        sums[partition.band_of(*f)] += s;
    }
    BandPower {
        p_low: sums[0],
        p_mid: sums[1],
        p_high: sums[2],
    }
}

/// Spearman agreement of one pair of partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct RankAgreement {
    pub a: BandPartition,
    pub b: BandPartition,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    /// Every unordered pair, in input order.
    pub pairs: Vec<RankAgreement>,
}

impl SensitivityReport {
    /// Correlation between the first (reference) partition and the second.
    pub fn rho(&self) -> f64 {
        self.pairs[0].rho
    }

    pub fn min_rho(&self) -> f64 {
        self.pairs.iter().map(|p| p.rho).fold(f64::INFINITY, f64::min)
    }
}

/// Rank stability of per-unit low-band power across band definitions.
///
/// `low_powers[0]` is the reference partition; every pair is compared.
pub fn band_sensitivity(
    low_powers: &[(BandPartition, BTreeMap<String, f64>)],
) -> Result<SensitivityReport, SpectralError> {
    if low_powers.len() < 2 {
        return Err(SpectralError::TooFewPartitions);
    }
    let reference: Vec<&String> = low_powers[0].1.keys().collect();
    if low_powers
        .iter()
        .any(|(_, m)| m.len() != reference.len() || !m.keys().eq(reference.iter().copied()))
    {
        return Err(SpectralError::MismatchedUnitSets);
    }
    let mut pairs = Vec::new();
    for (i, (pa, a)) in low_powers.iter().enumerate() {
        for (pb, b) in &low_powers[i + 1..] {
            let xs: Vec<f64> = a.values().copied().collect();
            let ys: Vec<f64> = b.values().copied().collect();
            pairs.push(RankAgreement {
                a: *pa,
                b: *pb,
                rho: spearman(&xs, &ys)?,
            });
        }
    }
    Ok(SensitivityReport { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{open_unit, standard_normal, substream};
    use proptest::prelude::*;

    fn demeaned(values: Vec<f64>) -> DemeanedSeries {
        DemeanedSeries {
            fips: "00000".into(),
            values,
            mean: 0.0,
        }
    }

    fn cosine(k: usize, n: usize) -> Vec<f64> {
        (1..=n)
            .map(|t| (2.0 * PI * (k * t) as f64 / n as f64).cos())
            .collect()
    }

    /// Naive summation written independently of `dft_real`: explicit cos/sin
    /// with an unreduced phase.
    fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len() as f64;
        (0..x.len())
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (idx, v) in x.iter().enumerate() {
                    let t = (idx + 1) as f64;
                    let theta = 2.0 * PI * t * k as f64 / n;
                    re += v * theta.cos();
                    im -= v * theta.sin();
                }
                (re, im)
            })
            .collect()
    }

    #[test]
    fn zero_series_has_zero_spectrum() {
        let c = dft(&demeaned(vec![0.0; 19])).unwrap();
        assert!(c.values().iter().all(|v| v.norm() == 0.0));
        assert!(raw_periodogram(&c).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cosine_concentrates_at_its_frequency() {
        let c = dft(&demeaned(cosine(4, 19))).unwrap();
        assert!((c.values()[4].norm_sqr() - 90.25).abs() < 1e-9);
        for k in (1..=9).filter(|&k| k != 4) {
            assert!(c.values()[k].norm() <= 1e-9, "k={k}");
        }
        let pg = raw_periodogram(&c);
        assert!((pg[3] - 4.75).abs() < 1e-9);
        assert!(pg.iter().enumerate().all(|(i, v)| i == 3 || *v < 1e-18));
    }

    #[test]
    fn dft_matches_naive_oracle() {
        let mut rng = substream(11, 0);
        for _ in 0..20 {
            let x: Vec<f64> = (0..19).map(|_| standard_normal(&mut rng)).collect();
            let got = dft_real(&x);
            let want = naive_dft(&x);
            for (g, (re, im)) in got.iter().zip(want) {
                let scale = (re * re + im * im).sqrt().max(1.0);
                assert!((g.re - re).abs() <= 1e-10 * scale);
                assert!((g.im - im).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn inverse_round_trips() {
        let x: Vec<f64> = (0..19).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect();
        let back = FourierCoefficients::from_values(dft_real(&x)).inverse();
        for (a, b) in x.iter().zip(back) {
            assert!((a - b.re).abs() < 1e-12 && b.im.abs() < 1e-12);
        }
    }

    #[test]
    fn taper_examples() {
        let x = demeaned((0..19).map(|i| i as f64 - 9.0).collect());
        assert_eq!(taper(&x, 0.0).unwrap(), x);

        let ones = demeaned(vec![1.0; 19]);
        let t = taper(&ones, 0.1).unwrap();
        assert!((t.values[0] - 0.5).abs() < 1e-15);
        assert!((t.values[18] - 0.5).abs() < 1e-15);
        assert!(t.values[1..18].iter().all(|v| *v == 1.0));

        assert!(matches!(taper(&ones, 0.6), Err(SpectralError::InvalidProportion(_))));
        assert!(matches!(taper(&ones, -0.1), Err(SpectralError::InvalidProportion(_))));
    }

    #[test]
    fn smoothing_examples() {
        let raw = [0.0, 0.0, 9.0, 0.0, 0.0];
        assert_eq!(smooth_periodogram(&raw, &[1]).unwrap(), raw.to_vec());
        let s = smooth_periodogram(&raw, &[3]).unwrap();
        let want = [0.0, 2.25, 4.5, 2.25, 0.0];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        // Edge handling: the mirror repeats the boundary ordinate.
        let edge = smooth_periodogram(&[4.0, 0.0, 0.0], &[3]).unwrap();
        assert_eq!(edge, vec![3.0, 1.0, 0.0]);
    }

    #[test]
    fn invalid_spans() {
        let raw = vec![1.0; 9];
        for span in [0, 2, 19] {
            assert!(matches!(
                smooth_periodogram(&raw, &[span]),
                Err(SpectralError::InvalidSpan { .. })
            ));
        }
        assert!(smooth_periodogram(&raw, &[17]).is_ok());
    }

    #[test]
    fn band_indices_for_default_partition() {
        let p = BandPartition::default();
        let bands: Vec<usize> = (1..=9).map(|k| p.band_of(k as f64 / 19.0)).collect();
        assert_eq!(bands, vec![0, 0, 1, 1, 1, 2, 2, 2, 2]);
        // Closed upper edges.
        assert_eq!(p.band_of(0.15), 0);
        assert_eq!(p.band_of(0.30), 1);
    }

    #[test]
    fn uniform_density_band_counts() {
        let spec = SpectrumEstimate {
            freqs: (1..=9).map(|k| k as f64 / 19.0).collect(),
            raw: vec![1.0; 9],
            smoothed: vec![1.0; 9],
            taper_proportion: 0.0,
            smoothing_spans: vec![1],
        };
        let bp = band_power(&spec, &BandPartition::default());
        assert_eq!((bp.p_low, bp.p_mid, bp.p_high), (2.0, 3.0, 4.0));
    }

    #[test]
    fn pure_cosine_is_mid_band() {
        let params = SpectralParams {
            taper_proportion: 0.0,
            spans: vec![1],
        };
        let spec = estimate_spectrum(&demeaned(cosine(4, 19)), &params).unwrap();
        let bp = band_power(&spec, &BandPartition::default());
        assert!(bp.p_mid >= 0.99 * bp.total());
        // With no taper and no smoothing the path reduces to the periodogram.
        assert_eq!(spec.smoothed, spec.raw);
    }

    #[test]
    fn partition_validation() {
        assert!(BandPartition::new(0.3, 0.15).is_err());
        assert!(BandPartition::new(0.0, 0.15).is_err());
        assert!(BandPartition::new(0.15, 0.5).is_err());
        assert!(BandPartition::new(0.12, 0.28).is_ok());
    }

    fn ranks(values: &[f64]) -> BTreeMap<String, f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("{i:05}"), *v))
            .collect()
    }

    #[test]
    fn sensitivity_identical_and_reversed() {
        let a = BandPartition::default();
        let b = BandPartition::new(0.12, 0.28).unwrap();
        let x = ranks(&[1.0, 5.0, 3.0, 2.0, 4.0]);
        let same = band_sensitivity(&[(a, x.clone()), (b, x.clone())]).unwrap();
        assert!((same.rho() - 1.0).abs() < 1e-12);

        let rev = ranks(&[5.0, 1.0, 3.0, 4.0, 2.0]);
        let opposite = band_sensitivity(&[(a, x.clone()), (b, rev)]).unwrap();
        assert!((opposite.rho() + 1.0).abs() < 1e-12);

        let mut other = x.clone();
        other.insert("99999".into(), 1.0);
        assert!(matches!(
            band_sensitivity(&[(a, x), (b, other)]),
            Err(SpectralError::MismatchedUnitSets)
        ));
    }

    #[test]
    fn sensitivity_on_trend_panel() {
        let partitions = [BandPartition::default(), BandPartition::new(0.12, 0.28).unwrap()];
        let mut maps: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new(); 2];
        for unit in 0..100u64 {
            let mut rng = substream(5, unit);
            let slope = 4.0 * open_unit(&mut rng);
            let x: Vec<f64> = (1..=19)
                .map(|t| slope * t as f64 + 0.3 * standard_normal(&mut rng))
                .collect();
            let mean = x.iter().sum::<f64>() / 19.0;
            let series = demeaned(x.iter().map(|v| v - mean).collect());
            let spec = estimate_spectrum(&series, &SpectralParams::default()).unwrap();
            for (p, m) in partitions.iter().zip(maps.iter_mut()) {
                m.insert(format!("{unit:05}"), band_power(&spec, p).p_low);
            }
        }
        let input: Vec<_> = partitions.iter().copied().zip(maps).collect();
        assert!(band_sensitivity(&input).unwrap().rho() >= 0.95);
    }

    proptest! {
        #[test]
        fn parseval_holds(x in prop::collection::vec(-100.0f64..100.0, 2..40)) {
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let c = dft_real(&x);
            let spectral: f64 = c.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64;
            prop_assert!((energy - spectral).abs() <= 1e-9 * energy.max(1e-300));
        }

        #[test]
        fn dft_is_conjugate_symmetric(x in prop::collection::vec(-10.0f64..10.0, 2..40)) {
            let c = FourierCoefficients::from_values(dft_real(&x));
            prop_assert!(c.conjugate_asymmetry() <= 1e-9 * x.len() as f64 * 10.0);
        }

        #[test]
        fn smoothing_preserves_mass(
            raw in prop::collection::vec(0.0f64..50.0, 3..20),
            spans in prop::collection::vec(prop::sample::select(vec![1usize, 3, 5]), 1..3),
        ) {
            let spans: Vec<usize> = spans.into_iter().filter(|s| *s <= 2 * raw.len() - 1).collect();
            let out = smooth_periodogram(&raw, &spans).unwrap();
            let (a, b): (f64, f64) = (raw.iter().sum(), out.iter().sum());
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-300));
            prop_assert!(out.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn smoothing_keeps_palindromes(half in prop::collection::vec(0.0f64..10.0, 2..8), odd in any::<bool>()) {
            let mut raw = half.clone();
            let tail: Vec<f64> = if odd { half[..half.len() - 1].iter().rev().copied().collect() } else { half.iter().rev().copied().collect() };
            raw.extend(tail);
            let out = smooth_periodogram(&raw, &[3, 3]).unwrap();
            let n = out.len();
            for i in 0..n {
                prop_assert!((out[i] - out[n - 1 - i]).abs() <= 1e-12 * out[i].abs().max(1.0));
            }
        }

        #[test]
        fn band_power_closes(
            x in prop::collection::vec(-10.0f64..10.0, 8..30),
            low in 0.01f64..0.3,
            gap in 0.01f64..0.19,
        ) {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let series = demeaned(x.iter().map(|v| v - mean).collect());
            let spec = estimate_spectrum(&series, &SpectralParams::default()).unwrap();
            let bp = band_power(&spec, &BandPartition::new(low, low + gap).unwrap());
            let total: f64 = spec.smoothed.iter().sum();
            prop_assert!((bp.total() - total).abs() <= 1e-9 * total.max(1e-300));
        }

        #[test]
        fn tapering_never_adds_energy(x in prop::collection::vec(-10.0f64..10.0, 2..30), p in 0.0f64..0.5) {
            let series = demeaned(x);
            let t = taper(&series, p).unwrap();
            let e0: f64 = series.values.iter().map(|v| v * v).sum();
            let e1: f64 = t.values.iter().map(|v| v * v).sum();
            prop_assert!(e1 <= e0 + 1e-12);
        }
    }
}
