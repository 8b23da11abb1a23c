//! Spectral phenotyping of short annual panels.
//!
//! The crate takes a balanced unit×year panel of non-negative rates and
//! derives, per unit, multiband spectral power, an integrated bispectral
//! intensity, a single-break piecewise-linear fit, and a phenotype cluster,
//! then measures how those features are organized in space with Moran's I
//! over queen-contiguity weights.
//!
//! Modules map onto the analysis stages:
//!
//! * [`panel`] loads, validates, harmonizes and demeans the input panel.
//! * [`spectral`] computes the DFT, periodograms, taper, Daniell smoothing and band powers.
//! * [`bispectral`] computes the direct bispectrum and its integrated intensity.
//! * [`cluster`] standardizes features and runs k-means with restarts.
//! * [`breaks`] fits single-breakpoint piecewise-linear trends.
//! * [`spatial`] builds queen contiguity and runs Moran permutation tests.
//! * [`inference`] provides OLS, nested F-tests and Spearman correlation.
//! * [`synth`] generates seeded synthetic panels with known ground truth.
//! * [`pipeline`] orchestrates every stage and writes the artifact set.

pub mod bispectral;
pub mod breaks;
pub mod cluster;
mod error;
pub mod inference;
pub mod panel;
pub mod pipeline;
pub mod rng;
pub mod spatial;
pub mod spectral;
pub mod synth;

pub use bispectral::{bispectral_intensity, bispectrum_direct, random_phase_surrogate, BispectrumSummary};
pub use breaks::{find_breakpoint, fit_segment, summarize_breaks, BreakFit, ClusterBreakSummary};
pub use cluster::{elbow_curve, kmeans, silhouette, standardize, ClusterModel, FeatureMatrix};
pub use error::{Error, Result};
pub use inference::{nested_f_test, ols, spearman, Design, NestedFResult, OlsFit};
pub use panel::{demean, harmonize_names, load_panel, CountySeries, DemeanedSeries, Panel, Schema};
pub use pipeline::{run_pipeline, run_stage, Manifest, PipelineConfig, PipelineError, Stage, UnitFeatureRecord};
pub use spatial::{
    moran_permutation, morans_i, queen_contiguity, subset_weights, MoranResult, Polygon,
    SpatialWeights, WeightStyle,
};
pub use spectral::{
    band_power, band_sensitivity, dft, raw_periodogram, smooth_periodogram, taper, BandPartition,
    BandPower, FourierCoefficients, SpectrumEstimate,
};
