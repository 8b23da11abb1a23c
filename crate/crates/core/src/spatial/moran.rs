use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{subset_weights, SpatialError, SpatialWeights};
use crate::rng::substream;

pub const MIN_PERMUTATIONS: usize = 99;

/// Permuted statistics within this distance of the observed one count as
/// at least as large, so exact ties are not lost to rounding.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MoranResult {
    pub observed_i: f64,
    pub expected_i: f64,
    pub p_value: f64,
    pub n_used: usize,
    pub n_permutations: usize,
    pub seed: u64,
    /// Units with a value but no neighbour among the valued units.
    pub islands_dropped: Vec<String>,
    /// Valued units absent from the weights.
    pub unmatched: Vec<String>,
}

struct Prepared {
    /// Row-wise `(neighbour, weight)` lists over the used units.
    rows: Vec<Vec<(usize, f64)>>,
    z: Vec<f64>,
    s0: f64,
    islands: Vec<String>,
    unmatched: Vec<String>,
}

impl Prepared {
    fn new(values: &BTreeMap<String, f64>, weights: &SpatialWeights) -> Result<Self, SpatialError> {
        let mut unmatched = Vec::new();
        let mut valued = BTreeSet::new();
        for (u, v) in values {
            if !v.is_finite() {
                continue;
            }
            if weights.index_of(u).is_some() {
                valued.insert(u.clone());
            } else {
                unmatched.push(u.clone());
            }
        }
        if valued.is_empty() {
            return Err(SpatialError::TooFewUnits(0));
        }
        let sub = subset_weights(weights, &valued)?;
        let islands: Vec<String> = sub.islands().into_iter().map(String::from).collect();
        let keep: BTreeSet<String> = valued.into_iter().filter(|u| !islands.contains(u)).collect();
        if keep.len() < 3 {
            return Err(SpatialError::TooFewUnits(keep.len()));
        }
        let w = subset_weights(&sub, &keep)?;
        let x: Vec<f64> = w.unit_ids().iter().map(|u| values[u]).collect();
        if x.iter().all(|v| *v == x[0]) {
            return Err(SpatialError::ConstantValues);
        }
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let z: Vec<f64> = x.iter().map(|v| v - mean).collect();
        if z.iter().all(|v| *v == 0.0) {
            return Err(SpatialError::ConstantValues);
        }
        let rows = (0..w.len())
            .map(|i| w.neighbor_indices(i).iter().map(|&j| (j, w.weight(i, j))).collect())
            .collect();
        let s0 = w.s0();
        if s0 == 0.0 {
            return Err(SpatialError::NoLinks);
        }
        Ok(Self {
            rows,
            z,
            s0,
            islands,
            unmatched,
        })
    }

    fn statistic(&self, z: &[f64]) -> f64 {
        let cross: f64 = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| z[i] * row.iter().map(|&(j, w)| w * z[j]).sum::<f64>())
            .sum();
        let ss: f64 = z.iter().map(|v| v * v).sum();
        (z.len() as f64 / self.s0) * cross / ss
    }
}

/// Global Moran's I over units that have a finite value and at least one
/// valued neighbour.
pub fn morans_i(values: &BTreeMap<String, f64>, weights: &SpatialWeights) -> Result<f64, SpatialError> {
    let p = Prepared::new(values, weights)?;
    Ok(p.statistic(&p.z))
}

/// One-sided (greater) permutation test; replicate `r` shuffles with its own
/// `(seed, r)` stream.
pub fn moran_permutation(
    values: &BTreeMap<String, f64>,
    weights: &SpatialWeights,
    n_permutations: usize,
    seed: u64,
) -> Result<MoranResult, SpatialError> {
    if n_permutations < MIN_PERMUTATIONS {
        return Err(SpatialError::TooFewPermutations(n_permutations));
    }
    let p = Prepared::new(values, weights)?;
    let observed = p.statistic(&p.z);
    let threshold = observed - TIE_EPS * (1.0 + observed.abs());
    let at_least = (0..n_permutations as u64)
        .into_par_iter()
        .filter(|&r| {
            let mut rng = substream(seed, r);
            let mut z = p.z.clone();
            z.shuffle(&mut rng);
            p.statistic(&z) >= threshold
        })
        .count();
    let n = p.z.len();
    Ok(MoranResult {
        observed_i: observed,
        expected_i: -1.0 / (n as f64 - 1.0),
        p_value: (at_least + 1) as f64 / (n_permutations + 1) as f64,
        n_used: n,
        n_permutations,
        seed,
        islands_dropped: p.islands,
        unmatched: p.unmatched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;
    use crate::spatial::{queen_contiguity, unit_square_grid, WeightStyle};

    fn rook_2x2() -> SpatialWeights {
        let links = [("a", vec!["b", "c"]), ("b", vec!["a", "d"]), ("c", vec!["a", "d"]), ("d", vec!["b", "c"])];
        let m = links
            .iter()
            .map(|(u, ns)| (u.to_string(), ns.iter().map(|s| s.to_string()).collect()))
            .collect();
        SpatialWeights::from_neighbors(m, WeightStyle::Binary).unwrap()
    }

    fn checkerboard() -> BTreeMap<String, f64> {
        [("a", 1.0), ("b", -1.0), ("c", -1.0), ("d", 1.0)]
            .iter()
            .map(|(u, v)| (u.to_string(), *v))
            .collect()
    }

    fn grid_values(w: &SpatialWeights, f: impl Fn(usize) -> f64) -> BTreeMap<String, f64> {
        w.unit_ids().iter().enumerate().map(|(i, u)| (u.clone(), f(i))).collect()
    }

    #[test]
    fn checkerboard_is_minus_one() {
        let i = morans_i(&checkerboard(), &rook_2x2()).unwrap();
        assert!((i + 1.0).abs() < 1e-9);
    }

    #[test]
    fn checkerboard_greater_test_is_near_one() {
        let r = moran_permutation(&checkerboard(), &rook_2x2(), 999, 7).unwrap();
        assert!(r.p_value > 0.9, "{}", r.p_value);
        assert_eq!(r.expected_i, -1.0 / 3.0);
    }

    #[test]
    fn gradient_is_strongly_positive() {
        let w = queen_contiguity(&unit_square_grid(10, 10)).unwrap();
        let values = grid_values(&w, |i| (i / 10 + i % 10) as f64);
        assert!(morans_i(&values, &w).unwrap() > 0.8);
        let r = moran_permutation(&values, &w, 999, 1).unwrap();
        assert_eq!(r.p_value, 0.001);
    }

    #[test]
    fn guards() {
        let w = queen_contiguity(&unit_square_grid(3, 3)).unwrap();
        let constant = grid_values(&w, |_| 2.5);
        assert!(matches!(morans_i(&constant, &w), Err(SpatialError::ConstantValues)));

        let edgeless = queen_contiguity(&[
            ("00001".to_string(), crate::spatial::Polygon::square(0.0, 0.0, 1.0)),
            ("00002".to_string(), crate::spatial::Polygon::square(5.0, 0.0, 1.0)),
            ("00003".to_string(), crate::spatial::Polygon::square(10.0, 0.0, 1.0)),
        ])
        .unwrap();
        let v = grid_values(&edgeless, |i| i as f64);
        assert!(matches!(morans_i(&v, &edgeless), Err(SpatialError::TooFewUnits(0))));

        let one: BTreeMap<String, f64> = [(w.unit_ids()[0].clone(), 1.0)].into();
        assert!(matches!(morans_i(&one, &w), Err(SpatialError::TooFewUnits(_))));

        let v = grid_values(&w, |i| i as f64);
        assert!(matches!(moran_permutation(&v, &w, 50, 0), Err(SpatialError::TooFewPermutations(50))));
    }

    #[test]
    fn missing_values_reweight_and_report_islands() {
        let w = queen_contiguity(&unit_square_grid(3, 3)).unwrap();
        // Keep a corner whose only valued neighbours are removed.
        let mut v = grid_values(&w, |i| (i * 7 % 5) as f64);
        for u in ["00002", "00004", "00005"] {
            v.insert(u.into(), f64::NAN);
        }
        v.insert("99999".into(), 1.0);
        let r = moran_permutation(&v, &w, 99, 3).unwrap();
        assert_eq!(r.islands_dropped, vec!["00001"]);
        assert_eq!(r.unmatched, vec!["99999"]);
        assert_eq!(r.n_used, 5);
    }

    #[test]
    fn affine_invariance_and_determinism() {
        let w = queen_contiguity(&unit_square_grid(6, 6)).unwrap();
        let mut rng = substream(9, 0);
        let x: Vec<f64> = (0..36).map(|_| standard_normal(&mut rng)).collect();
        let v = grid_values(&w, |i| x[i]);
        let base = morans_i(&v, &w).unwrap();
        for (a, b) in [(3.0, 1.0), (-0.5, 100.0), (1e4, -3.0)] {
            let t = grid_values(&w, |i| a * x[i] + b);
            assert!((morans_i(&t, &w).unwrap() - base).abs() < 1e-9);
        }
        let r1 = moran_permutation(&v, &w, 199, 11).unwrap();
        let r2 = moran_permutation(&v, &w, 199, 11).unwrap();
        assert_eq!(r1, r2);
        let row = w.clone().with_style(WeightStyle::Row);
        assert!(morans_i(&v, &row).unwrap().is_finite());
    }

    #[test]
    fn unit_order_invariance() {
        let polys = unit_square_grid(5, 5);
        let w = queen_contiguity(&polys).unwrap();
        let mut rev = polys.clone();
        rev.reverse();
        let w_rev = queen_contiguity(&rev).unwrap();
        let v = grid_values(&w, |i| ((i * 13) % 7) as f64);
        let a = moran_permutation(&v, &w, 199, 5).unwrap();
        let b = moran_permutation(&v, &w_rev, 199, 5).unwrap();
        assert_eq!(a, b);
    }
}
