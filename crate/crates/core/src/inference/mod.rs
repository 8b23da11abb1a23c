//! Regression and rank-correlation machinery: multiple OLS, nested-model
//! F-tests and Spearman's rho.

pub mod special;

use thiserror::Error;

pub use special::{beta_reg, f_upper_tail, ln_gamma};

/// p-values below this are reported as `below_floor` with this value.
pub const P_FLOOR: f64 = 1e-300;

const PIVOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("design is rank deficient (column `{0}`)")]
    RankDeficientDesign(String),
    #[error("{n} observations cannot support {p} coefficients")]
    TooFewObservations { n: usize, p: usize },
    #[error("column `{name}` has {got} rows, expected {expected}")]
    DesignLengthMismatch { name: String, got: usize, expected: usize },
    #[error("models are not nested: {0}")]
    NotNested(String),
    #[error("both models fit exactly; the F statistic is undefined")]
    ZeroResidualFull,
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("input is constant; correlation undefined")]
    ConstantInput,
}

/// Named regressor columns. An intercept column named `(Intercept)` is
/// always first.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Design {
    pub const INTERCEPT: &'static str = "(Intercept)";

    pub fn with_intercept(n: usize) -> Self {
        Self {
            names: vec![Self::INTERCEPT.to_string()],
            columns: vec![vec![1.0; n]],
        }
    }

    pub fn column(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.names.push(name.into());
        self.columns.push(values);
        self
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.columns[0].len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub rss: f64,
    pub df_residual: usize,
    pub n: usize,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    response: Vec<f64>,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }
}

/// Solves `A x = b` by Gauss-Jordan elimination with partial pivoting.
/// A pivot below `PIVOT_TOLERANCE` × the largest diagonal entry marks the
/// column as dependent.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, usize> {
    let p = b.len();
    let scale = (0..p).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[pivot][col].abs() <= PIVOT_TOLERANCE * scale || scale == 0.0 {
            return Err(col);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = 1.0 / a[col][col];
        for row in 0..p {
            if row != col {
                let factor = a[row][col] * inv;
                if factor != 0.0 {
                    for k in col..p {
                        a[row][k] -= factor * a[col][k];
                    }
                    b[row] -= factor * b[col];
                }
            }
        }
    }
    Ok((0..p).map(|i| b[i] / a[i][i]).collect())
}

/// Least squares via the normal equations, with one step of iterative
/// refinement.
pub fn ols(y: &[f64], design: &Design) -> Result<OlsFit, InferenceError> {
    let n = y.len();
    let p = design.columns.len();
    for (name, col) in design.names.iter().zip(&design.columns) {
        if col.len() != n {
            return Err(InferenceError::DesignLengthMismatch {
                name: name.clone(),
                got: col.len(),
                expected: n,
            });
        }
    }
    if n <= p {
        return Err(InferenceError::TooFewObservations { n, p });
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let xtx: Vec<Vec<f64>> = design
        .columns
        .iter()
        .map(|ci| design.columns.iter().map(|cj| dot(ci, cj)).collect())
        .collect();
    let xty: Vec<f64> = design.columns.iter().map(|c| dot(c, y)).collect();
    let rank_err = |col: usize| InferenceError::RankDeficientDesign(design.names[col].clone());

    let mut beta = solve(xtx.clone(), xty.clone()).map_err(rank_err)?;
    let correction: Vec<f64> = (0..p)
        .map(|i| xty[i] - dot(&xtx[i], &beta))
        .collect();
    let delta = solve(xtx, correction).map_err(rank_err)?;
    for (b, d) in beta.iter_mut().zip(delta) {
        *b += d;
    }

    let residuals: Vec<f64> = (0..n)
        .map(|i| y[i] - design.columns.iter().zip(&beta).map(|(c, b)| c[i] * b).sum::<f64>())
        .collect();
    let rss = residuals.iter().map(|r| r * r).sum::<f64>();
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let r_squared = if tss > 0.0 {
        (1.0 - rss / tss).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(OlsFit {
        names: design.names.clone(),
        coefficients: beta,
        rss,
        df_residual: n - p,
        n,
        r_squared,
        residuals,
        response: y.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NestedFResult {
    pub f_statistic: f64,
    pub df1: usize,
    pub df2: usize,
    /// Never below [`P_FLOOR`].
    pub p_value: f64,
    /// The exact tail probability was smaller than [`P_FLOOR`].
    pub below_floor: bool,
}

impl NestedFResult {
    /// `p` for display: `"< 1e-300"` under the floor.
    pub fn p_display(&self) -> String {
        if self.below_floor {
            format!("< {P_FLOOR:e}")
        } else {
            format!("{}", self.p_value)
        }
    }
}

/// F-test from residual sums of squares and residual degrees of freedom.
pub fn f_test_from_rss(
    rss_reduced: f64,
    df_reduced: usize,
    rss_full: f64,
    df_full: usize,
) -> Result<NestedFResult, InferenceError> {
    if df_full >= df_reduced {
        return Err(InferenceError::NotNested(format!(
            "full model has {df_full} residual df, reduced has {df_reduced}"
        )));
    }
    let tolerance = 1e-9 * rss_reduced.max(f64::MIN_POSITIVE);
    if rss_full > rss_reduced + tolerance {
        return Err(InferenceError::NotNested(format!(
            "full RSS {rss_full} exceeds reduced RSS {rss_reduced}"
        )));
    }
    let (df1, df2) = (df_reduced - df_full, df_full);
    let gain = (rss_reduced - rss_full).max(0.0);
    let exact_fit = rss_full <= 1e-14 * rss_reduced || rss_full == 0.0;
    if exact_fit {
        if gain == 0.0 {
            return Err(InferenceError::ZeroResidualFull);
        }
        return Ok(NestedFResult {
            f_statistic: f64::INFINITY,
            df1,
            df2,
            p_value: P_FLOOR,
            below_floor: true,
        });
    }
    let f_statistic = (gain / df1 as f64) / (rss_full / df2 as f64);
    let p = f_upper_tail(f_statistic, df1 as f64, df2 as f64);
    Ok(NestedFResult {
        f_statistic,
        df1,
        df2,
        p_value: p.max(P_FLOOR),
        below_floor: p < P_FLOOR,
    })
}

/// ANOVA comparison of two nested OLS fits of the same response.
pub fn nested_f_test(reduced: &OlsFit, full: &OlsFit) -> Result<NestedFResult, InferenceError> {
    if reduced.response != full.response {
        return Err(InferenceError::NotNested("models fit different responses".into()));
    }
    if let Some(extra) = reduced.names.iter().find(|n| !full.names.contains(n)) {
        return Err(InferenceError::NotNested(format!(
            "reduced term `{extra}` is absent from the full model"
        )));
    }
    f_test_from_rss(reduced.rss, reduced.df_residual, full.rss, full.df_residual)
}

/// Average (mid) ranks, 1-based.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, InferenceError> {
    if x.len() != y.len() {
        return Err(InferenceError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(InferenceError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, InferenceError> {
    if x.len() != y.len() {
        return Err(InferenceError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(InferenceError::TooFewObservations { n: x.len(), p: 3 });
    }
    pearson(&mid_ranks(x), &mid_ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, substream};
    use proptest::prelude::*;

    #[test]
    fn exact_linear_fit() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let fit = ols(&y, &Design::with_intercept(20).column("x", x)).unwrap();
        assert!(fit.rss < 1e-20);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.coefficient("x").unwrap() + 0.5).abs() < 1e-12);
        assert!((fit.coefficient(Design::INTERCEPT).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_regressor_has_zero_slope() {
        // Centred contrast orthogonal to y.
        let y = vec![1.0, 2.0, 1.0, 2.0];
        let x = vec![1.0, 1.0, -1.0, -1.0];
        let fit = ols(&y, &Design::with_intercept(4).column("x", x)).unwrap();
        assert!(fit.coefficient("x").unwrap().abs() < 1e-14);
        assert!((fit.coefficient(Design::INTERCEPT).unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn ols_errors() {
        let y = vec![1.0, 2.0, 3.0];
        let d = Design::with_intercept(3).column("a", vec![1.0, 2.0, 3.0]).column("b", vec![2.0, 4.0, 6.0]);
        assert!(matches!(ols(&y, &d), Err(InferenceError::TooFewObservations { .. })));
        let y = vec![1.0, 2.0, 3.0, 5.0, 4.0];
        let d = Design::with_intercept(5)
            .column("a", vec![1.0, 2.0, 3.0, 4.0, 5.0])
            .column("b", vec![2.0, 4.0, 6.0, 8.0, 10.0]);
        assert!(matches!(ols(&y, &d), Err(InferenceError::RankDeficientDesign(c)) if c == "b"));
        let d = Design::with_intercept(5).column("a", vec![1.0, 2.0]);
        assert!(matches!(ols(&y, &d), Err(InferenceError::DesignLengthMismatch { .. })));
    }

    #[test]
    fn identical_rss_gives_unit_p() {
        let r = f_test_from_rss(10.0, 20, 10.0, 19).unwrap();
        assert_eq!(r.f_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.below_floor);
    }

    #[test]
    fn perfect_full_fit_is_below_floor() {
        let mut rng = substream(9, 0);
        let n = 30;
        let z: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let w: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let y: Vec<f64> = z.iter().map(|v| 2.0 * v + 1.0).collect();
        let reduced = ols(&y, &Design::with_intercept(n).column("w", w.clone())).unwrap();
        let full = ols(&y, &Design::with_intercept(n).column("w", w).column("z", z)).unwrap();
        let r = nested_f_test(&reduced, &full).unwrap();
        assert!(r.below_floor);
        assert!(r.p_value <= P_FLOOR);
        assert_eq!(r.df1, 1);
        assert_eq!(r.df2, n - 3);
    }

    #[test]
    fn nesting_is_checked() {
        let y: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..10).map(|i| ((i * 7) % 5) as f64).collect();
        let fa = ols(&y, &Design::with_intercept(10).column("a", a)).unwrap();
        let fb = ols(&y, &Design::with_intercept(10).column("b", b)).unwrap();
        assert!(matches!(nested_f_test(&fa, &fb), Err(InferenceError::NotNested(_))));
        assert!(matches!(nested_f_test(&fa, &fa), Err(InferenceError::NotNested(_))));
        assert!(matches!(f_test_from_rss(0.0, 5, 0.0, 4), Err(InferenceError::ZeroResidualFull)));
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&x, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&x, &[5.0, 3.0, 1.0, 0.0, -9.0]).unwrap() + 1.0).abs() < 1e-15);
        let tied = spearman(&[1.0, 2.0, 2.0, 4.0], &[10.0, 20.0, 20.0, 40.0]).unwrap();
        assert!((tied - 1.0).abs() < 1e-15);
        assert_eq!(mid_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert!(matches!(spearman(&x, &[1.0, 2.0]), Err(InferenceError::LengthMismatch(5, 2))));
        assert!(matches!(spearman(&x, &[1.0; 5]), Err(InferenceError::ConstantInput)));
    }

    proptest! {
        #[test]
        fn residuals_are_orthogonal(seed in 0u64..1000) {
            let mut rng = substream(seed, 0);
            let n = 25;
            let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| standard_normal(&mut rng)).collect()).collect();
            let y: Vec<f64> = (0..n).map(|_| 5.0 * standard_normal(&mut rng)).collect();
            let mut d = Design::with_intercept(n);
            for (i, c) in cols.iter().enumerate() {
                d = d.column(format!("x{i}"), c.clone());
            }
            let fit = ols(&y, &d).unwrap();
            let scale = y.iter().map(|v| v.abs()).sum::<f64>();
            for c in d.columns.iter() {
                let dot: f64 = c.iter().zip(&fit.residuals).map(|(a, b)| a * b).sum();
                prop_assert!(dot.abs() <= 1e-8 * scale);
            }
        }

        #[test]
        fn f_is_invariant_to_response_scale(seed in 0u64..1000, c in 0.01f64..100.0) {
            let mut rng = substream(seed, 1);
            let n = 30;
            let a: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
            let b: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
            let y: Vec<f64> = (0..n).map(|i| a[i] + 0.3 * b[i] + standard_normal(&mut rng)).collect();
            let run = |y: &[f64]| {
                let r = ols(y, &Design::with_intercept(n).column("a", a.clone())).unwrap();
                let f = ols(y, &Design::with_intercept(n).column("a", a.clone()).column("b", b.clone())).unwrap();
                nested_f_test(&r, &f).unwrap().f_statistic
            };
            let scaled: Vec<f64> = y.iter().map(|v| c * v).collect();
            let (f0, f1) = (run(&y), run(&scaled));
            prop_assert!((f0 - f1).abs() <= 1e-9 * f0.abs().max(1.0));
        }

        #[test]
        fn spearman_ignores_monotone_maps(
            x in prop::collection::vec(-100.0f64..100.0, 3..30),
            y_seed in 0u64..1000,
            a in 0.1f64..3.0,
        ) {
            let mut rng = substream(y_seed, 2);
            let y: Vec<f64> = x.iter().map(|v| v + 20.0 * standard_normal(&mut rng)).collect();
            let Ok(base) = spearman(&x, &y) else { return Ok(()); };
            let fx: Vec<f64> = x.iter().map(|v| (a * v / 100.0).exp()).collect();
            let gy: Vec<f64> = y.iter().map(|v| v.powi(3) + v).collect();
            prop_assert!((spearman(&fx, &gy).unwrap() - base).abs() < 1e-12);
        }
    }
}
