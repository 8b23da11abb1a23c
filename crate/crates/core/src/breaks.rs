//! Single-breakpoint piecewise-linear fits by exhaustive search.
//!
//! Time indices are 1-based: `t = 1..=T`. A break at `tau` splits the series
//! into `1..=tau` and `tau+1..=T`, each refit by its own OLS line.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use thiserror::Error;

use crate::panel::{CountySeries, Panel};

pub const DEFAULT_MIN_SEGMENT: usize = 5;

/// Candidates within this fraction of the total sum of squares of the
/// minimum count as tied; the earliest tied `tau` wins.
pub const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum BreakError {
    #[error("interval {start}..={end} has fewer than 2 points")]
    DegenerateInterval { start: usize, end: usize },
    #[error("interval {start}..={end} is outside a series of length {len}")]
    IntervalOutOfRange { start: usize, end: usize, len: usize },
    #[error("series of length {len} is shorter than 2h = {}", 2 * .h)]
    SeriesTooShortForBreak { len: usize, h: usize },
    #[error("minimum segment length must be at least 2, got {0}")]
    InvalidMinSegment(usize),
    #[error("fitted unit {0} has no cluster assignment")]
    UnassignedUnit(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentFit {
    pub alpha: f64,
    pub beta: f64,
    pub rss: f64,
}

/// OLS of `y[t-1]` on `t` over the 1-based inclusive interval.
pub fn fit_segment(y: &[f64], t_range: RangeInclusive<usize>) -> Result<SegmentFit, BreakError> {
    let (start, end) = (*t_range.start(), *t_range.end());
    if end < start + 1 {
        return Err(BreakError::DegenerateInterval { start, end });
    }
    if start == 0 || end > y.len() {
        return Err(BreakError::IntervalOutOfRange {
            start,
            end,
            len: y.len(),
        });
    }
    let seg = &y[start - 1..end];
    let n = seg.len() as f64;
    let t_bar = (start + end) as f64 / 2.0;
    let y_bar = seg.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in seg.iter().enumerate() {
        let dt = (start + i) as f64 - t_bar;
        sxy += dt * (v - y_bar);
        sxx += dt * dt;
    }
    let beta = sxy / sxx;
    let alpha = y_bar - beta * t_bar;
    // Residuals in centred form so the intercept's size does not leak in.
    let rss = seg
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let dt = (start + i) as f64 - t_bar;
            (v - y_bar - beta * dt).powi(2)
        })
        .sum();
    Ok(SegmentFit { alpha, beta, rss })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakFit {
    pub fips: String,
    /// Last index of the pre-break segment.
    pub tau_index: usize,
    /// Calendar year of `tau_index`, i.e. the last pre-break year.
    pub break_year: i32,
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub delta_beta: f64,
    pub rss: f64,
    pub candidate_rss: BTreeMap<usize, f64>,
}

pub fn find_breakpoint(series: &CountySeries, h: usize) -> Result<BreakFit, BreakError> {
    if h < 2 {
        return Err(BreakError::InvalidMinSegment(h));
    }
    let y = &series.rates;
    let t = y.len();
    if t < 2 * h {
        return Err(BreakError::SeriesTooShortForBreak { len: t, h });
    }
    let mut candidate_rss = BTreeMap::new();
    let mut segments = Vec::with_capacity(t - 2 * h + 1);
    for tau in h..=t - h {
        let pre = fit_segment(y, 1..=tau)?;
        let post = fit_segment(y, tau + 1..=t)?;
        candidate_rss.insert(tau, pre.rss + post.rss);
        segments.push((tau, pre, post));
    }
    let min = candidate_rss.values().copied().fold(f64::INFINITY, f64::min);
    let mean = y.iter().sum::<f64>() / t as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let cutoff = min + TIE_TOLERANCE * tss;
    let (tau, pre, post) = segments
        .into_iter()
        .find(|(tau, _, _)| candidate_rss[tau] <= cutoff)
        .expect("the minimum is always within the cutoff");
    Ok(BreakFit {
        fips: series.fips.clone(),
        tau_index: tau,
        break_year: series.start_year() + tau as i32 - 1,
        alpha1: pre.alpha,
        beta1: pre.beta,
        alpha2: post.alpha,
        beta2: post.beta,
        delta_beta: post.beta - pre.beta,
        rss: candidate_rss[&tau],
        candidate_rss,
    })
}

/// Fits for every unit long enough, plus the fips codes that were not.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BreakScan {
    pub fits: Vec<BreakFit>,
    pub excluded: Vec<String>,
}

pub fn find_breakpoints(panel: &Panel, h: usize) -> Result<BreakScan, BreakError> {
    if h < 2 {
        return Err(BreakError::InvalidMinSegment(h));
    }
    let results: Vec<_> = panel
        .series()
        .par_iter()
        .map(|s| (s.fips.clone(), find_breakpoint(s, h)))
        .collect();
    let mut scan = BreakScan::default();
    for (fips, r) in results {
        match r {
            Ok(fit) => scan.fits.push(fit),
            Err(BreakError::SeriesTooShortForBreak { .. }) => scan.excluded.push(fips),
            Err(e) => return Err(e),
        }
    }
    Ok(scan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBreakSummary {
    pub cluster: usize,
    pub eligible: usize,
    pub fitted: usize,
    pub detection_proportion: f64,
    /// Lower median; `None` when no unit in the cluster was fitted.
    pub median_break_year: Option<i32>,
    pub mean_delta_beta: Option<f64>,
    pub delta_beta_values: Vec<f64>,
}

/// Per-cluster summaries; `assignments` maps every clustered unit to its label.
pub fn summarize_breaks(
    fits: &[BreakFit],
    assignments: &BTreeMap<String, usize>,
) -> Result<Vec<ClusterBreakSummary>, BreakError> {
    let mut eligible: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in assignments.values() {
        *eligible.entry(c).or_default() += 1;
    }
    let mut by_cluster: BTreeMap<usize, Vec<&BreakFit>> = BTreeMap::new();
    for fit in fits {
        let c = assignments
            .get(&fit.fips)
            .ok_or_else(|| BreakError::UnassignedUnit(fit.fips.clone()))?;
        by_cluster.entry(*c).or_default().push(fit);
    }
    Ok(eligible
        .into_iter()
        .map(|(cluster, n)| {
            let members = by_cluster.remove(&cluster).unwrap_or_default();
            let mut years: Vec<i32> = members.iter().map(|f| f.break_year).collect();
            years.sort_unstable();
            let delta_beta_values: Vec<f64> = members.iter().map(|f| f.delta_beta).collect();
            let mean_delta_beta = (!delta_beta_values.is_empty())
                .then(|| delta_beta_values.iter().sum::<f64>() / delta_beta_values.len() as f64);
            ClusterBreakSummary {
                cluster,
                eligible: n,
                fitted: members.len(),
                detection_proportion: members.len() as f64 / n as f64,
                median_break_year: (!years.is_empty()).then(|| years[(years.len() - 1) / 2]),
                mean_delta_beta,
                delta_beta_values,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, substream};
    use proptest::prelude::*;

    fn series(rates: Vec<f64>) -> CountySeries {
        CountySeries {
            fips: "13001".into(),
            name: "A".into(),
            years: (2003..2003 + rates.len() as i32).collect(),
            rates,
        }
    }

    fn kink(t: usize) -> f64 {
        let t = t as f64;
        if t <= 10.0 {
            2.0 + t
        } else {
            12.0 + 3.0 * (t - 10.0)
        }
    }

    #[test]
    fn segment_examples() {
        let y: Vec<f64> = (1..=5).map(|t| 3.0 + 2.0 * t as f64).collect();
        let f = fit_segment(&y, 1..=5).unwrap();
        assert!((f.alpha - 3.0).abs() < 1e-12 && (f.beta - 2.0).abs() < 1e-12 && f.rss < 1e-20);

        let f = fit_segment(&[7.0; 9], 3..=8).unwrap();
        assert!((f.alpha - 7.0).abs() < 1e-12 && f.beta.abs() < 1e-12 && f.rss == 0.0);

        assert!(matches!(fit_segment(&y, 2..=2), Err(BreakError::DegenerateInterval { .. })));
        assert!(matches!(fit_segment(&y, 4..=6), Err(BreakError::IntervalOutOfRange { .. })));
    }

    #[test]
    fn segment_matches_normal_equations() {
        let mut rng = substream(11, 0);
        let y: Vec<f64> = (0..12).map(|_| 10.0 * standard_normal(&mut rng)).collect();
        let f = fit_segment(&y, 3..=10).unwrap();
        let ts: Vec<f64> = (3..=10).map(|t| t as f64).collect();
        let x = nalgebra::DMatrix::from_fn(8, 2, |i, j| if j == 0 { 1.0 } else { ts[i] });
        let yv = nalgebra::DVector::from_column_slice(&y[2..10]);
        let coef = (x.transpose() * &x).lu().solve(&(x.transpose() * yv)).unwrap();
        assert!((f.alpha - coef[0]).abs() <= 1e-10 * coef[0].abs().max(1.0));
        assert!((f.beta - coef[1]).abs() <= 1e-10 * coef[1].abs().max(1.0));
    }

    /// Brute-force oracle: every admissible tau with its RSS, computed by
    /// solving each segment's normal equations independently.
    fn oracle_rss(y: &[f64], h: usize) -> Vec<(usize, f64)> {
        let seg = |lo: usize, hi: usize| {
            let n = (hi - lo + 1) as f64;
            let (st, sy) = ((lo..=hi).map(|t| t as f64).sum::<f64>(), y[lo - 1..hi].iter().sum::<f64>());
            let stt = (lo..=hi).map(|t| (t * t) as f64).sum::<f64>();
            let sty = (lo..=hi).map(|t| t as f64 * y[t - 1]).sum::<f64>();
            let b = (n * sty - st * sy) / (n * stt - st * st);
            let a = (sy - b * st) / n;
            (lo..=hi).map(|t| (y[t - 1] - a - b * t as f64).powi(2)).sum::<f64>()
        };
        (h..=y.len() - h).map(|tau| (tau, seg(1, tau) + seg(tau + 1, y.len()))).collect()
    }

    #[test]
    fn noiseless_kink() {
        let y: Vec<f64> = (1..=19).map(kink).collect();
        let fit = find_breakpoint(&series(y.clone()), 5).unwrap();
        // The kink point t = 10 lies on both lines, so tau = 9 and tau = 10
        // both fit exactly; the earliest-tie rule reports 9.
        let zeros: Vec<usize> = oracle_rss(&y, 5).into_iter().filter(|(_, r)| *r < 1e-9).map(|(t, _)| t).collect();
        assert_eq!(zeros, vec![9, 10]);
        assert_eq!(fit.tau_index, 9);
        assert!((fit.beta1 - 1.0).abs() < 1e-10);
        assert!((fit.beta2 - 3.0).abs() < 1e-10);
        assert!((fit.delta_beta - 2.0).abs() < 1e-10);
        assert!(fit.rss < 1e-18);
    }

    #[test]
    fn noiseless_break_with_jump_is_unique() {
        let y: Vec<f64> = (1..=19).map(|t| kink(t) + if t > 10 { 1.5 } else { 0.0 }).collect();
        let fit = find_breakpoint(&series(y.clone()), 5).unwrap();
        let oracle = oracle_rss(&y, 5);
        assert_eq!(oracle.iter().filter(|(_, r)| *r < 1e-9).count(), 1);
        for (tau, r) in &oracle {
            assert!((fit.candidate_rss[tau] - r).abs() <= 1e-9 * r.max(1.0));
        }
        assert_eq!(fit.tau_index, 10);
        assert_eq!(fit.break_year, 2012);
        assert!((fit.delta_beta - 2.0).abs() < 1e-10);
        assert!(fit.rss < 1e-18);
    }

    #[test]
    fn pure_line_takes_earliest_tau() {
        let fit = find_breakpoint(&series((1..=19).map(|t| 5.0 + 0.4 * t as f64).collect()), 5).unwrap();
        assert_eq!(fit.tau_index, 5);
        assert!(fit.delta_beta.abs() < 1e-10);
    }

    #[test]
    fn candidate_set_and_invariants() {
        let mut rng = substream(5, 1);
        let y: Vec<f64> = (0..19).map(|_| standard_normal(&mut rng)).collect();
        for h in 2..=9 {
            let fit = find_breakpoint(&series(y.clone()), h).unwrap();
            assert_eq!(fit.candidate_rss.len(), 19 - 2 * h + 1);
            assert_eq!(*fit.candidate_rss.keys().next().unwrap(), h);
            assert_eq!(fit.rss, fit.candidate_rss[&fit.tau_index]);
            assert_eq!(fit.delta_beta, fit.beta2 - fit.beta1);
            let min = fit.candidate_rss.values().copied().fold(f64::INFINITY, f64::min);
            assert!(fit.rss <= min * (1.0 + 1e-9) + 1e-12);
            let whole = fit_segment(&y, 1..=19).unwrap();
            assert!(fit.rss <= whole.rss + 1e-12);
        }
        assert!(matches!(
            find_breakpoint(&series(y[..9].to_vec()), 5),
            Err(BreakError::SeriesTooShortForBreak { len: 9, h: 5 })
        ));
        assert!(find_breakpoint(&series(y[..10].to_vec()), 5).is_ok());
    }

    #[test]
    fn noisy_kink_recovers_tau() {
        let hits = (0..500u64)
            .filter(|&rep| {
                let mut rng = substream(2024, rep);
                let y = (1..=19).map(|t| kink(t) + 0.5 * standard_normal(&mut rng)).collect();
                let tau = find_breakpoint(&series(y), 5).unwrap().tau_index;
                tau.abs_diff(10) <= 1
            })
            .count();
        assert!(hits >= 450, "{hits}/500");
    }

    proptest! {
        #[test]
        fn translation_and_scale_equivariance(
            y in prop::collection::vec(0.0f64..50.0, 10..25),
            shift in -100.0f64..100.0,
            scale in 0.1f64..10.0,
        ) {
            let base = find_breakpoint(&series(y.clone()), 5).unwrap();
            let shifted = find_breakpoint(&series(y.iter().map(|v| v + shift).collect()), 5).unwrap();
            let scaled = find_breakpoint(&series(y.iter().map(|v| v * scale).collect()), 5).unwrap();
            let tss: f64 = {
                let m = y.iter().sum::<f64>() / y.len() as f64;
                y.iter().map(|v| (v - m).powi(2)).sum()
            };
            // Near-ties can legitimately flip under rounding; only compare
            // when the runner-up is clearly worse.
            let mut sorted: Vec<f64> = base.candidate_rss.values().copied().collect();
            sorted.sort_by(f64::total_cmp);
            let clear = sorted.len() < 2 || sorted[1] - sorted[0] > 1e-8 * tss.max(1e-12);
            for (tau, r) in &base.candidate_rss {
                prop_assert!((shifted.candidate_rss[tau] - r).abs() <= 1e-9 * tss.max(1.0));
                prop_assert!((scaled.candidate_rss[tau] - r * scale * scale).abs()
                    <= 1e-9 * tss.max(1.0) * scale * scale);
            }
            if clear {
                prop_assert_eq!(shifted.tau_index, base.tau_index);
                prop_assert_eq!(scaled.tau_index, base.tau_index);
                prop_assert!((shifted.alpha1 - base.alpha1 - shift).abs() <= 1e-8 * (1.0 + shift.abs()));
                prop_assert!((shifted.delta_beta - base.delta_beta).abs() <= 1e-9 * (1.0 + base.delta_beta.abs()));
                prop_assert!((scaled.beta1 - scale * base.beta1).abs() <= 1e-9 * (1.0 + scale * base.beta1.abs()));
            }
        }
    }

    fn fit(fips: &str, year: i32, delta: f64) -> BreakFit {
        BreakFit {
            fips: fips.into(),
            tau_index: 1,
            break_year: year,
            alpha1: 0.0,
            beta1: 0.0,
            alpha2: 0.0,
            beta2: delta,
            delta_beta: delta,
            rss: 0.0,
            candidate_rss: BTreeMap::new(),
        }
    }

    #[test]
    fn summary_examples() {
        let fits = vec![fit("a", 2014, 1.0), fit("b", 2014, 2.0), fit("c", 2014, 3.0)];
        let assign: BTreeMap<String, usize> =
            ["a", "b", "c"].iter().map(|s| (s.to_string(), 1)).collect();
        let s = summarize_breaks(&fits, &assign).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].median_break_year, Some(2014));
        assert_eq!(s[0].detection_proportion, 1.0);
        assert_eq!(s[0].mean_delta_beta, Some(2.0));
    }

    #[test]
    fn summary_lower_median_and_partial_detection() {
        let fits = vec![fit("a", 2012, 1.0), fit("b", 2015, 1.0)];
        let assign: BTreeMap<String, usize> = [("a", 2), ("b", 2), ("c", 2), ("d", 1)]
            .iter()
            .map(|(s, c)| (s.to_string(), *c))
            .collect();
        let s = summarize_breaks(&fits, &assign).unwrap();
        assert_eq!(s[0].cluster, 1);
        assert_eq!(s[0].fitted, 0);
        assert_eq!(s[0].median_break_year, None);
        assert_eq!(s[1].median_break_year, Some(2012));
        assert!((s[1].detection_proportion - 2.0 / 3.0).abs() < 1e-15);

        let orphan = vec![fit("z", 2010, 0.0)];
        assert!(matches!(summarize_breaks(&orphan, &assign), Err(BreakError::UnassignedUnit(_))));
    }

    #[test]
    fn panel_scan_reports_exclusions() {
        let long = CountySeries::from_start("13001", "A", 2003, (1..=19).map(kink).collect()).unwrap();
        let other = CountySeries::from_start("13003", "B", 2003, vec![1.0; 19]).unwrap();
        let panel = Panel::new(vec![long, other]).unwrap();
        let scan = find_breakpoints(&panel, 5).unwrap();
        assert_eq!(scan.fits.len(), 2);
        let scan = find_breakpoints(&panel, 10).unwrap();
        assert!(scan.fits.is_empty());
        assert_eq!(scan.excluded, vec!["13001", "13003"]);
    }
}
