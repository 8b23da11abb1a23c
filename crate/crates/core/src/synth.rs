//! Seeded synthetic panels with known structure.
//!
//! Unit `i` draws from `substream(seed, i)`, so units can be generated in
//! any order. Time runs `t = 1..=T`; frequencies are in cycles per year.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{CountySeries, Panel, PanelError};
use crate::rng::{open_unit, standard_normal, substream};
use crate::spatial::{unit_square_grid, Polygon};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("generated data failed panel validation (raise `level`?): {0}")]
    Panel(#[from] PanelError),
}

fn zero() -> f64 {
    0.0
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SynthKind {
    Sinusoid {
        #[serde(default = "one")]
        amplitude: f64,
        frequency: f64,
        #[serde(default = "zero")]
        phase: f64,
        #[serde(default = "zero")]
        noise_sd: f64,
        #[serde(default = "zero")]
        level: f64,
    },
    /// `cos(a t + p1) + cos(b t + p2) + cos((a + b) t + p1 + p2)` with
    /// phases drawn per unit.
    CoupledTriad {
        freq_a: f64,
        freq_b: f64,
        #[serde(default = "zero")]
        noise_sd: f64,
        #[serde(default = "zero")]
        level: f64,
    },
    /// Slope `beta1` through `tau`, then `beta2`, with the post-break line
    /// shifted by `jump` (0 gives a continuous kink). Unit slopes jitter by
    /// `slope_sd`.
    PiecewiseLinear {
        #[serde(default = "zero")]
        level: f64,
        beta1: f64,
        beta2: f64,
        tau: usize,
        #[serde(default = "zero")]
        jump: f64,
        #[serde(default = "zero")]
        noise_sd: f64,
        #[serde(default = "zero")]
        slope_sd: f64,
    },
    GaussianNoise {
        #[serde(default = "one")]
        sd: f64,
        #[serde(default = "zero")]
        level: f64,
    },
    /// Linear trends with slopes uniform on `[slope_min, slope_max]`.
    TrendPlusNoise {
        #[serde(default = "zero")]
        level: f64,
        slope_min: f64,
        slope_max: f64,
        #[serde(default = "one")]
        noise_sd: f64,
    },
    /// Units on a square grid; each slope is `slope_mean + slope_sd * s`
    /// where `s` is a smoothed standard field over the grid, and after
    /// `tau` the slope grows by `accel` times the same field value.
    SpatialSurface {
        #[serde(default = "zero")]
        level: f64,
        slope_mean: f64,
        #[serde(default = "one")]
        slope_sd: f64,
        #[serde(default)]
        window: usize,
        #[serde(default)]
        tau: usize,
        #[serde(default = "zero")]
        accel: f64,
        #[serde(default = "one")]
        noise_sd: f64,
    },
}

impl SynthKind {
    pub fn name(&self) -> &'static str {
        match self {
            SynthKind::Sinusoid { .. } => "sinusoid",
            SynthKind::CoupledTriad { .. } => "coupled-triad",
            SynthKind::PiecewiseLinear { .. } => "piecewise-linear",
            SynthKind::GaussianNoise { .. } => "gaussian-noise",
            SynthKind::TrendPlusNoise { .. } => "trend-plus-noise",
            SynthKind::SpatialSurface { .. } => "spatial-surface",
        }
    }

    pub const NAMES: [&'static str; 6] = [
        "sinusoid",
        "coupled-triad",
        "piecewise-linear",
        "gaussian-noise",
        "trend-plus-noise",
        "spatial-surface",
    ];

    /// A usable parameter set for each kind, levels high enough that rates
    /// stay non-negative.
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "sinusoid" => SynthKind::Sinusoid {
                amplitude: 1.0,
                frequency: 4.0 / 19.0,
                phase: 0.0,
                noise_sd: 0.0,
                level: 10.0,
            },
            "coupled-triad" => SynthKind::CoupledTriad {
                freq_a: 2.0 / 19.0,
                freq_b: 3.0 / 19.0,
                noise_sd: 0.0,
                level: 10.0,
            },
            "piecewise-linear" => SynthKind::PiecewiseLinear {
                level: 2.0,
                beta1: 1.0,
                beta2: 3.0,
                tau: 10,
                jump: 0.0,
                noise_sd: 0.5,
                slope_sd: 0.0,
            },
            "gaussian-noise" => SynthKind::GaussianNoise { sd: 1.0, level: 10.0 },
            "trend-plus-noise" => SynthKind::TrendPlusNoise {
                level: 40.0,
                slope_min: 0.2,
                slope_max: 2.0,
                noise_sd: 1.0,
            },
            "spatial-surface" => SynthKind::SpatialSurface {
                level: 40.0,
                slope_mean: 1.0,
                slope_sd: 0.5,
                window: 5,
                tau: 10,
                accel: 1.0,
                noise_sd: 0.5,
            },
            _ => return None,
        })
    }
}

fn default_start_year() -> i32 {
    2003
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub kind: SynthKind,
    pub seed: u64,
    pub n_years: usize,
    pub n_units: usize,
    #[serde(default = "default_start_year")]
    pub start_year: i32,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, seed: u64, n_years: usize, n_units: usize) -> Self {
        Self {
            kind,
            seed,
            n_years,
            n_units,
            start_year: default_start_year(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_years < 2 {
            return bad(format!("n_years = {} (need at least 2)", self.n_years));
        }
        if self.n_units == 0 {
            return bad("n_units = 0".into());
        }
        let freq_ok = |f: f64| f > 0.0 && f <= 0.5;
        let sd_ok = |s: f64| s.is_finite() && s >= 0.0;
        match &self.kind {
            SynthKind::Sinusoid { frequency, noise_sd, .. } => {
                if !freq_ok(*frequency) {
                    return bad(format!("frequency {frequency} outside (0, 0.5]"));
                }
                if !sd_ok(*noise_sd) {
                    return bad("noise_sd must be non-negative".into());
                }
            }
            SynthKind::CoupledTriad { freq_a, freq_b, noise_sd, .. } => {
                for f in [*freq_a, *freq_b, freq_a + freq_b] {
                    if !freq_ok(f) {
                        return bad(format!("frequency {f} outside (0, 0.5]"));
                    }
                }
                if !sd_ok(*noise_sd) {
                    return bad("noise_sd must be non-negative".into());
                }
            }
            SynthKind::PiecewiseLinear { tau, noise_sd, slope_sd, .. } => {
                if *tau < 1 || *tau >= self.n_years {
                    return bad(format!("tau {tau} outside 1..{}", self.n_years));
                }
                if !sd_ok(*noise_sd) || !sd_ok(*slope_sd) {
                    return bad("standard deviations must be non-negative".into());
                }
            }
            SynthKind::GaussianNoise { sd, .. } => {
                if !sd_ok(*sd) {
                    return bad("sd must be non-negative".into());
                }
            }
            SynthKind::TrendPlusNoise { slope_min, slope_max, noise_sd, .. } => {
                if slope_min > slope_max {
                    return bad("slope_min exceeds slope_max".into());
                }
                if !sd_ok(*noise_sd) {
                    return bad("noise_sd must be non-negative".into());
                }
            }
            SynthKind::SpatialSurface { tau, noise_sd, slope_sd, .. } => {
                if *tau >= self.n_years {
                    return bad(format!("tau {tau} outside 0..{}", self.n_years));
                }
                if !sd_ok(*noise_sd) || !sd_ok(*slope_sd) {
                    return bad("standard deviations must be non-negative".into());
                }
            }
        }
        Ok(())
    }

    /// Grid shape used for polygons and for the spatial-surface kind.
    pub fn grid_shape(&self) -> (usize, usize) {
        grid_shape(self.n_units)
    }
}

/// Near-square `rows × cols` grid holding `n` cells.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let cols = ((n as f64).sqrt().ceil() as usize).max(1);
    (n.div_ceil(cols), cols)
}

/// First `n` cells of [`grid_shape`]'s grid, keyed like the generated units.
pub fn grid_polygons(n: usize) -> Vec<(String, Polygon)> {
    let (rows, cols) = grid_shape(n);
    unit_square_grid(rows, cols).into_iter().take(n).collect()
}

pub fn unit_fips(i: usize) -> String {
    format!("{:05}", i + 1)
}

pub fn unit_name(i: usize) -> String {
    format!("Synth{:03}", i + 1)
}

fn noise(rng: &mut impl rand::RngCore, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        sd * standard_normal(rng)
    }
}

/// Unconstrained values for unit `i` (may be negative).
pub fn generate_values(spec: &SynthSpec, unit: usize) -> Result<Vec<f64>, SynthError> {
    spec.validate()?;
    let field = match spec.kind {
        SynthKind::SpatialSurface { window, .. } => {
            let (rows, cols) = spec.grid_shape();
            Some(smoothed_field(rows, cols, window, spec.seed))
        }
        _ => None,
    };
    Ok(unit_values(spec, unit, field.as_deref()))
}

fn unit_values(spec: &SynthSpec, unit: usize, field: Option<&[f64]>) -> Vec<f64> {
    let mut rng = substream(spec.seed, unit as u64);
    let big_t = spec.n_years;
    let ts = (1..=big_t).map(|t| t as f64);
    match spec.kind {
        SynthKind::Sinusoid { amplitude, frequency, phase, noise_sd, level } => ts
            .map(|t| level + amplitude * (2.0 * PI * frequency * t + phase).cos() + noise(&mut rng, noise_sd))
            .collect(),
        SynthKind::CoupledTriad { freq_a, freq_b, noise_sd, level } => {
            let p1 = 2.0 * PI * open_unit(&mut rng);
            let p2 = 2.0 * PI * open_unit(&mut rng);
            let (wa, wb) = (2.0 * PI * freq_a, 2.0 * PI * freq_b);
            ts.map(|t| {
                level
                    + (wa * t + p1).cos()
                    + (wb * t + p2).cos()
                    + ((wa + wb) * t + p1 + p2).cos()
                    + noise(&mut rng, noise_sd)
            })
            .collect()
        }
        SynthKind::PiecewiseLinear { level, beta1, beta2, tau, jump, noise_sd, slope_sd } => {
            let b1 = beta1 + noise(&mut rng, slope_sd);
            let b2 = beta2 + noise(&mut rng, slope_sd);
            let tau = tau as f64;
            ts.map(|t| {
                let trend = if t <= tau { b1 * t } else { b1 * tau + jump + b2 * (t - tau) };
                level + trend + noise(&mut rng, noise_sd)
            })
            .collect()
        }
        SynthKind::GaussianNoise { sd, level } => ts.map(|_| level + noise(&mut rng, sd)).collect(),
        SynthKind::TrendPlusNoise { level, slope_min, slope_max, noise_sd } => {
            let slope = slope_min + (slope_max - slope_min) * open_unit(&mut rng);
            ts.map(|t| level + slope * t + noise(&mut rng, noise_sd)).collect()
        }
        SynthKind::SpatialSurface { level, slope_mean, slope_sd, tau, accel, noise_sd, .. } => {
            let s = field.map_or(0.0, |f| f[unit]);
            let slope = slope_mean + slope_sd * s;
            let extra = accel * s;
            let tau = tau as f64;
            ts.map(|t| {
                let kink = if tau > 0.0 && t > tau { extra * (t - tau) } else { 0.0 };
                level + slope * t + kink + noise(&mut rng, noise_sd)
            })
            .collect()
        }
    }
}

/// Balanced panel with fips from [`unit_fips`] and names `SynthNNN County`.
pub fn generate(spec: &SynthSpec) -> Result<Panel, SynthError> {
    spec.validate()?;
    let field = match spec.kind {
        SynthKind::SpatialSurface { window, .. } => {
            let (rows, cols) = spec.grid_shape();
            Some(smoothed_field(rows, cols, window, spec.seed))
        }
        _ => None,
    };
    let series = (0..spec.n_units)
        .map(|i| {
            CountySeries::from_start(
                unit_fips(i),
                format!("{} County", unit_name(i)),
                spec.start_year,
                unit_values(spec, i, field.as_deref()),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Panel::new(series)?)
}

/// Row-major `rows × cols` field of iid standard normals smoothed by a
/// Gaussian-weighted moving average whose spread matches a `window`-wide
/// box (sd = window / sqrt(12)), rescaled to unit variance. Windows 0 and 1
/// give iid values.
fn smoothed_field(rows: usize, cols: usize, window: usize, seed: u64) -> Vec<f64> {
    // Stream index `u64::MAX - 1` keeps the field apart from per-unit noise.
    let mut rng = substream(seed, u64::MAX - 1);
    if window <= 1 {
        return (0..rows * cols).map(|_| standard_normal(&mut rng)).collect();
    }
    let sd = window as f64 / 12f64.sqrt();
    let m = (3.0 * sd).ceil() as usize;
    let side = 2 * m + 1;
    let kernel: Vec<f64> = (0..side * side)
        .map(|i| {
            let (dr, dc) = ((i / side) as f64 - m as f64, (i % side) as f64 - m as f64);
            (-(dr * dr + dc * dc) / (2.0 * sd * sd)).exp()
        })
        .collect();
    let norm = kernel.iter().map(|k| k * k).sum::<f64>().sqrt();
    let ec = cols + 2 * m;
    let raw: Vec<f64> = (0..(rows + 2 * m) * ec).map(|_| standard_normal(&mut rng)).collect();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut s = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                s += k * raw[(r + i / side) * ec + c + i % side];
            }
            out.push(s / norm);
        }
    }
    out
}

/// Unit-square grid polygons with smoothed Gaussian values.
pub fn spatial_surface(
    rows: usize,
    cols: usize,
    window: usize,
    seed: u64,
) -> Result<(Vec<(String, Polygon)>, BTreeMap<String, f64>), SynthError> {
    if rows < 2 || cols < 2 {
        return Err(SynthError::InvalidGrid(format!("{rows} x {cols} (need at least 2 x 2)")));
    }
    let polygons = unit_square_grid(rows, cols);
    let field = smoothed_field(rows, cols, window, seed);
    let values = polygons.iter().map(|(f, _)| f.clone()).zip(field).collect();
    Ok((polygons, values))
}
