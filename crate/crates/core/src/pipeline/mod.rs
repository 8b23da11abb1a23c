//! End-to-end orchestration.
//!
//! Stages run in a fixed order and each one writes its own artifacts. When a
//! stage fails its partial files are removed, so the output directory holds
//! exactly the artifacts of the stages that completed.

pub mod config;
pub mod geo;
pub mod output;
pub mod svg;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

pub use config::PipelineConfig;
use config::Comparison;
use geo::{GeoError, GeoLayer};
pub use output::Manifest;
use output::{fmt17, fmt_opt, fmt_opt_int};
use svg::SvgError;

use crate::bispectral::{self, BispectrumSummary};
use crate::breaks::{self, BreakScan, ClusterBreakSummary};
use crate::cluster::{self, ClusterModel, FeatureMatrix};
use crate::inference::{self, Design, InferenceError, NestedFResult, OlsFit};
use crate::panel::{self, Panel};
use crate::spatial::{self, MoranResult};
use crate::spectral::{self, BandPartition, SpectralParams, SpectrumEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Spectral,
    Bispectral,
    Clustering,
    Breaks,
    Spatial,
    Associations,
    Sensitivity,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Spectral,
        Stage::Bispectral,
        Stage::Clustering,
        Stage::Breaks,
        Stage::Spatial,
        Stage::Associations,
        Stage::Sensitivity,
        Stage::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Spectral => "spectral",
            Stage::Bispectral => "bispectral",
            Stage::Clustering => "clustering",
            Stage::Breaks => "breaks",
            Stage::Spatial => "spatial",
            Stage::Associations => "associations",
            Stage::Sensitivity => "sensitivity",
            Stage::Export => "export",
        }
    }

    /// Every file the stage may write.
    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[],
            Stage::Spectral => &["spectra.csv", "band_power.csv"],
            Stage::Bispectral => &["bispectrum.csv", "bispectrum_grid.csv"],
            Stage::Clustering => &["clusters.csv", "centroids.csv", "cluster_diagnostics.csv"],
            Stage::Breaks => &["breaks.csv", "cluster_break_summary.csv", "features.csv"],
            Stage::Spatial => &["moran.csv", "moran_report.txt"],
            Stage::Associations => &["associations.csv", "associations.txt"],
            Stage::Sensitivity => &["sensitivity.csv", "sensitivity_ftests.csv"],
            Stage::Export => &[
                "joined.geojson",
                "map_p_low.svg",
                "map_p_high.svg",
                "map_log10_intensity.svg",
                "map_cluster.svg",
                "boxplot_delta_beta.svg",
                "boxplot_break_year.svg",
            ],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Core(#[from] crate::Error),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Svg(#[from] SvgError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Missing(String),
}

fn core(e: impl Into<crate::Error>) -> StageError {
    StageError::Core(e.into())
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
    #[error("cannot prepare output directory {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

/// Per-unit output row. Fields a later stage did not produce stay `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnitFeatureRecord {
    pub fips: String,
    pub name: String,
    pub p_low: f64,
    pub p_mid: f64,
    pub p_high: f64,
    pub intensity: f64,
    pub log10_intensity: Option<f64>,
    pub cluster: Option<usize>,
    pub break_year: Option<i32>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub delta_beta: Option<f64>,
}

impl UnitFeatureRecord {
    pub fn empty(fips: &str) -> Self {
        Self {
            fips: fips.into(),
            ..Default::default()
        }
    }
}

pub const FEATURE_HEADER: [&str; 12] = [
    "fips",
    "name",
    "p_low",
    "p_mid",
    "p_high",
    "intensity",
    "log10_intensity",
    "cluster",
    "break_year",
    "beta1",
    "beta2",
    "delta_beta",
];

fn feature_row(r: &UnitFeatureRecord) -> Vec<String> {
    vec![
        r.fips.clone(),
        r.name.clone(),
        fmt17(r.p_low),
        fmt17(r.p_mid),
        fmt17(r.p_high),
        fmt17(r.intensity),
        fmt_opt(r.log10_intensity),
        fmt_opt_int(r.cluster),
        fmt_opt_int(r.break_year),
        fmt_opt(r.beta1),
        fmt_opt(r.beta2),
        fmt_opt(r.delta_beta),
    ]
}

/// Everything computed so far, in panel (fips) order.
#[derive(Debug, Clone, Default)]
pub struct Analysis {
    pub panel: Option<Panel>,
    pub layer: Option<GeoLayer>,
    pub spectra: Vec<SpectrumEstimate>,
    pub bispectra: Vec<BispectrumSummary>,
    pub records: Vec<UnitFeatureRecord>,
    /// Full-sample OLS slope of rate on time, per unit.
    pub overall_slope: Vec<f64>,
    pub features: Option<FeatureMatrix>,
    pub model: Option<ClusterModel>,
    pub breaks: BreakScan,
    pub break_summary: Vec<ClusterBreakSummary>,
    pub moran: Vec<(String, MoranResult)>,
    pub associations: Vec<AssociationResult>,
    pub warnings: Vec<String>,
}

impl Analysis {
    fn panel(&self) -> &Panel {
        self.panel.as_ref().expect("ingest runs first")
    }
}

/// Value of a named numeric feature for unit `i`.
pub fn feature_value(a: &Analysis, i: usize, name: &str) -> Option<f64> {
    let r = &a.records[i];
    let v = match name {
        "p_low" => Some(r.p_low),
        "p_mid" => Some(r.p_mid),
        "p_high" => Some(r.p_high),
        "intensity" => Some(r.intensity),
        "log10_intensity" => r.log10_intensity,
        "break_year" => r.break_year.map(f64::from),
        "beta1" => r.beta1,
        "beta2" => r.beta2,
        "delta_beta" => r.delta_beta,
        "overall_slope" => a.overall_slope.get(i).copied(),
        _ => None,
    };
    v.filter(|x| x.is_finite())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    pub comparison: Comparison,
    pub partition: BandPartition,
    pub n: usize,
    pub reduced: OlsFit,
    pub full: OlsFit,
    /// `None` when both models fit exactly.
    pub test: Option<NestedFResult>,
}

/// Outcome of a successful run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub analysis: Analysis,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
    stage_start: usize,
}

impl Artifacts {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), StageError> {
        let p = self.path(name);
        output::write_csv(&p, header, rows).map_err(|source| StageError::Io {
            path: p.display().to_string(),
            source,
        })
    }

    fn text(&mut self, name: &str, text: &str) -> Result<(), StageError> {
        let p = self.path(name);
        output::write_text(&p, text).map_err(|source| StageError::Io {
            path: p.display().to_string(),
            source,
        })
    }

    fn rollback(&mut self) {
        for p in self.written.drain(self.stage_start..) {
            let _ = fs::remove_file(p);
        }
    }
}

/// Runs every stage and writes the full artifact set plus the manifest.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutcome, PipelineError> {
    execute(cfg, Stage::Export, &Stage::ALL)
}

/// Computes everything `stage` depends on but writes only that stage's
/// artifacts and the manifest.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<RunOutcome, PipelineError> {
    execute(cfg, stage, &[stage])
}

fn execute(cfg: &PipelineConfig, last: Stage, write: &[Stage]) -> Result<RunOutcome, PipelineError> {
    let needs_polygons = last >= Stage::Spatial;
    cfg.validate(needs_polygons)?;
    let dir = cfg.output.dir.clone();
    let out_err = |source| PipelineError::Output {
        path: dir.display().to_string(),
        source,
    };
    fs::create_dir_all(&dir).map_err(out_err)?;
    for stage in write {
        for name in stage.artifacts() {
            remove_if_present(&dir.join(name)).map_err(out_err)?;
        }
    }
    remove_if_present(&dir.join(MANIFEST_FILE)).map_err(out_err)?;

    let mut art = Artifacts {
        dir: dir.clone(),
        written: Vec::new(),
        stage_start: 0,
    };
    let mut a = Analysis::default();
    for stage in Stage::ALL.into_iter().filter(|s| *s <= last) {
        art.stage_start = art.written.len();
        let out = write.contains(&stage).then_some(&mut art);
        let result = match stage {
            Stage::Ingest => ingest(cfg, &mut a, needs_polygons),
            Stage::Spectral => spectral_stage(cfg, &mut a, out),
            Stage::Bispectral => bispectral_stage(cfg, &mut a, out),
            Stage::Clustering => clustering_stage(cfg, &mut a, out),
            Stage::Breaks => breaks_stage(cfg, &mut a, out),
            Stage::Spatial => spatial_stage(cfg, &mut a, out),
            Stage::Associations => associations_stage(cfg, &mut a, out),
            Stage::Sensitivity => sensitivity_stage(cfg, &mut a, out),
            Stage::Export => export_stage(cfg, &mut a, out),
        };
        if let Err(source) = result {
            art.rollback();
            return Err(PipelineError::Stage { stage, source });
        }
    }
    let manifest = Manifest::from_files(&dir, &art.written).map_err(out_err)?;
    output::write_text(&dir.join(MANIFEST_FILE), &manifest.to_json()).map_err(out_err)?;
    Ok(RunOutcome { manifest, analysis: a })
}

fn remove_if_present(p: &Path) -> std::io::Result<()> {
    match fs::remove_file(p) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}

fn ingest(cfg: &PipelineConfig, a: &mut Analysis, needs_polygons: bool) -> Result<(), StageError> {
    let path = cfg.input.panel.as_ref().expect("validated");
    let mut p = panel::load_panel(path, &cfg.schema).map_err(core)?;
    if let Some(names) = &cfg.input.canonical_names {
        let canonical = panel::load_canonical_names(names).map_err(core)?;
        p = panel::harmonize_names(p, &canonical).map_err(core)?;
    }
    if needs_polygons {
        let polygons = cfg.input.polygons.as_ref().expect("validated");
        a.layer = Some(geo::read_geojson(polygons, &cfg.input.fips_property)?);
    }
    a.overall_slope = p
        .series()
        .iter()
        .map(|s| breaks::fit_segment(&s.rates, 1..=s.len()).map(|f| f.beta))
        .collect::<Result<_, _>>()
        .map_err(core)?;
    a.records = p
        .series()
        .iter()
        .map(|s| UnitFeatureRecord {
            name: s.name.clone(),
            ..UnitFeatureRecord::empty(&s.fips)
        })
        .collect();
    a.panel = Some(p);
    Ok(())
}

fn set_bands(a: &mut Analysis, partition: &BandPartition) {
    let bands: Vec<_> = a.spectra.iter().map(|s| spectral::band_power(s, partition)).collect();
    for (r, b) in a.records.iter_mut().zip(bands) {
        r.p_low = b.p_low;
        r.p_mid = b.p_mid;
        r.p_high = b.p_high;
    }
}

fn spectral_stage(cfg: &PipelineConfig, a: &mut Analysis, out: Option<&mut Artifacts>) -> Result<(), StageError> {
    let params = SpectralParams {
        taper_proportion: cfg.spectral.taper,
        spans: cfg.spectral.spans.clone(),
    };
    a.spectra = a
        .panel()
        .series()
        .par_iter()
        .map(|s| {
            let d = panel::demean(s).map_err(core)?;
            spectral::estimate_spectrum(&d, &params).map_err(core)
        })
        .collect::<Result<_, _>>()?;
    let partition = cfg.partition().map_err(|e| StageError::Missing(e.to_string()))?;
    set_bands(a, &partition);
    let Some(out) = out else { return Ok(()) };
    let mut rows = Vec::new();
    for (r, s) in a.records.iter().zip(&a.spectra) {
        for (k, ((f, raw), sm)) in s.freqs.iter().zip(&s.raw).zip(&s.smoothed).enumerate() {
            rows.push(vec![r.fips.clone(), (k + 1).to_string(), fmt17(*f), fmt17(*raw), fmt17(*sm)]);
        }
    }
    out.csv("spectra.csv", &["fips", "k", "frequency", "raw", "smoothed"], &rows)?;
    let rows: Vec<Vec<String>> = a
        .records
        .iter()
        .map(|r| vec![r.fips.clone(), r.name.clone(), fmt17(r.p_low), fmt17(r.p_mid), fmt17(r.p_high)])
        .collect();
    out.csv("band_power.csv", &["fips", "name", "p_low", "p_mid", "p_high"], &rows)
}

fn bispectral_stage(cfg: &PipelineConfig, a: &mut Analysis, out: Option<&mut Artifacts>) -> Result<(), StageError> {
    a.bispectra = a
        .panel()
        .series()
        .par_iter()
        .map(|s| {
            let d = panel::demean(s).map_err(core)?;
            let c = spectral::dft(&d).map_err(core)?;
            bispectral::summarize(&c).map_err(core)
        })
        .collect::<Result<_, _>>()?;
    for (r, b) in a.records.iter_mut().zip(&a.bispectra) {
        r.intensity = b.intensity().expect("summarize sets the intensity");
        r.log10_intensity = b.log10_intensity();
    }
    let Some(out) = out else { return Ok(()) };
    let rows: Vec<Vec<String>> = a
        .records
        .iter()
        .zip(&a.bispectra)
        .map(|(r, b)| {
            vec![
                r.fips.clone(),
                b.domain_size().to_string(),
                fmt17(r.intensity),
                fmt_opt(r.log10_intensity),
            ]
        })
        .collect();
    out.csv("bispectrum.csv", &["fips", "domain_size", "intensity", "log10_intensity"], &rows)?;
    if cfg.bispectral.dump_grid {
        let mut rows = Vec::new();
        for (r, b) in a.records.iter().zip(&a.bispectra) {
            for ((k, l), m) in b.magnitudes_sq() {
                rows.push(vec![r.fips.clone(), k.to_string(), l.to_string(), fmt17(*m)]);
            }
        }
        out.csv("bispectrum_grid.csv", &["fips", "k", "l", "magnitude_sq"], &rows)?;
    }
    Ok(())
}

fn cluster_matrix(a: &Analysis, columns: &[String]) -> Result<FeatureMatrix, StageError> {
    let values = (0..a.records.len())
        .map(|i| columns.iter().map(|c| feature_value(a, i, c).unwrap_or(f64::NAN)).collect())
        .collect();
    let ids = a.records.iter().map(|r| r.fips.clone()).collect();
    let m = FeatureMatrix::new(ids, columns.to_vec(), values).map_err(core)?;
    cluster::standardize(&m).map_err(core)
}

fn clustering_stage(cfg: &PipelineConfig, a: &mut Analysis, out: Option<&mut Artifacts>) -> Result<(), StageError> {
    let c = &cfg.clustering;
    let columns = cfg.cluster_features();
    let x = cluster_matrix(a, &columns)?;
    let model = cluster::kmeans(&x, c.k, c.restarts, c.seed).map_err(core)?;
    for (r, label) in a.records.iter_mut().zip(&model.assignments) {
        r.cluster = Some(*label);
    }
    if let Some(out) = out {
        let rows: Vec<Vec<String>> = a
            .records
            .iter()
            .map(|r| vec![r.fips.clone(), r.name.clone(), fmt_opt_int(r.cluster)])
            .collect();
        out.csv("clusters.csv", &["fips", "name", "cluster"], &rows)?;

        let mut header = vec!["cluster".to_string(), "size".to_string()];
        header.extend(columns.iter().map(|c| format!("z_{c}")));
        header.extend(columns.iter().cloned());
        let sizes = model.sizes();
        let rows: Vec<Vec<String>> = (1..=model.k)
            .map(|label| {
                let mut row = vec![label.to_string(), sizes[label - 1].to_string()];
                row.extend(model.centroids[label - 1].iter().map(|v| fmt17(*v)));
                for col in &columns {
                    let vals: Vec<f64> = (0..a.records.len())
                        .filter(|&i| a.records[i].cluster == Some(label))
                        .filter_map(|i| feature_value(a, i, col))
                        .collect();
                    row.push(fmt17(vals.iter().sum::<f64>() / vals.len() as f64));
                }
                row
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        out.csv("centroids.csv", &header, &rows)?;

        let n = x.n_units();
        let mut rows = Vec::new();
        for k in c.k_range[0]..=c.k_range[1].min(n) {
            let m = cluster::kmeans(&x, k, c.restarts, c.seed).map_err(core)?;
            let sil = if k >= 2 && k < n {
                Some(cluster::silhouette(&x, &m).map_err(core)?.mean)
            } else {
                None
            };
            rows.push(vec![k.to_string(), fmt17(m.wss), fmt_opt(sil)]);
        }
        out.csv("cluster_diagnostics.csv", &["k", "wss", "mean_silhouette"], &rows)?;
    }
    a.features = Some(x);
    a.model = Some(model);
    Ok(())
}

fn breaks_stage(cfg: &PipelineConfig, a: &mut Analysis, out: Option<&mut Artifacts>) -> Result<(), StageError> {
    let scan = breaks::find_breakpoints(a.panel(), cfg.breaks.h).map_err(core)?;
    let index: BTreeMap<String, usize> =
        a.records.iter().enumerate().map(|(i, r)| (r.fips.clone(), i)).collect();
    for fit in &scan.fits {
        let r = &mut a.records[index[&fit.fips]];
        r.break_year = Some(fit.break_year);
        r.beta1 = Some(fit.beta1);
        r.beta2 = Some(fit.beta2);
        r.delta_beta = Some(fit.delta_beta);
    }
    if !scan.excluded.is_empty() {
        a.warnings.push(format!(
            "{} units are shorter than 2h = {} and have no break fit",
            scan.excluded.len(),
            2 * cfg.breaks.h
        ));
    }
    let assignments: BTreeMap<String, usize> = a
        .records
        .iter()
        .filter_map(|r| r.cluster.map(|c| (r.fips.clone(), c)))
        .collect();
    a.break_summary = breaks::summarize_breaks(&scan.fits, &assignments).map_err(core)?;
    a.breaks = scan;
    let Some(out) = out else { return Ok(()) };

    let by_fips: BTreeMap<&str, &breaks::BreakFit> = a.breaks.fits.iter().map(|f| (f.fips.as_str(), f)).collect();
    let rows: Vec<Vec<String>> = a
        .records
        .iter()
        .zip(&a.overall_slope)
        .map(|(r, slope)| match by_fips.get(r.fips.as_str()) {
            Some(f) => vec![
                r.fips.clone(),
                r.name.clone(),
                "fitted".into(),
                f.tau_index.to_string(),
                f.break_year.to_string(),
                fmt17(f.alpha1),
                fmt17(f.beta1),
                fmt17(f.alpha2),
                fmt17(f.beta2),
                fmt17(f.delta_beta),
                fmt17(f.rss),
                fmt17(*slope),
            ],
            None => {
                let mut row = vec![r.fips.clone(), r.name.clone(), "too_short".into()];
                row.extend(std::iter::repeat_n("NA".to_string(), 8));
                row.push(fmt17(*slope));
                row
            }
        })
        .collect();
    out.csv(
        "breaks.csv",
        &[
            "fips",
            "name",
            "status",
            "tau_index",
            "break_year",
            "alpha1",
            "beta1",
            "alpha2",
            "beta2",
            "delta_beta",
            "rss",
            "overall_slope",
        ],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = a
        .break_summary
        .iter()
        .map(|s| {
            vec![
                s.cluster.to_string(),
                s.eligible.to_string(),
                s.fitted.to_string(),
                fmt17(s.detection_proportion),
                fmt_opt_int(s.median_break_year),
                fmt_opt(s.mean_delta_beta),
            ]
        })
        .collect();
    out.csv(
        "cluster_break_summary.csv",
        &["cluster", "eligible", "fitted", "detection_proportion", "median_break_year", "mean_delta_beta"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = a.records.iter().map(feature_row).collect();
    out.csv("features.csv", &FEATURE_HEADER, &rows)
}

fn spatial_stage(cfg: &PipelineConfig, a: &mut Analysis, out: Option<&mut Artifacts>) -> Result<(), StageError> {
    let layer = a.layer.as_ref().expect("polygons loaded at ingest");
    let weights = spatial::queen_contiguity(&layer.polygons())
        .map_err(core)?
        .with_style(cfg.spatial.weight_style);
    let s = &cfg.spatial;
    a.moran = s
        .features
        .iter()
        .map(|f| {
            let values: BTreeMap<String, f64> = (0..a.records.len())
                .filter_map(|i| feature_value(a, i, f).map(|v| (a.records[i].fips.clone(), v)))
                .collect();
            spatial::moran_permutation(&values, &weights, s.permutations, s.seed)
                .map(|m| (f.clone(), m))
                .map_err(core)
        })
        .collect::<Result<_, _>>()?;
    let Some(out) = out else { return Ok(()) };
    let rows: Vec<Vec<String>> = a
        .moran
        .iter()
        .map(|(f, m)| {
            vec![
                f.clone(),
                fmt17(m.observed_i),
                fmt17(m.expected_i),
                fmt17(m.p_value),
                m.n_used.to_string(),
                m.n_permutations.to_string(),
                m.seed.to_string(),
                s.weight_style.to_string(),
                m.islands_dropped.join(" "),
                m.unmatched.join(" "),
            ]
        })
        .collect();
    out.csv(
        "moran.csv",
        &[
            "feature",
            "observed_i",
            "expected_i",
            "p_value",
            "n_used",
            "n_permutations",
            "seed",
            "weight_style",
            "islands_dropped",
            "unmatched",
        ],
        &rows,
    )?;
    let mut text = format!(
        "Moran's I permutation tests\nweights: queen contiguity, {} style, {} units, {} links\npermutations: {}, seed: {}\n\n",
        s.weight_style,
        weights.len(),
        weights.n_links(),
        s.permutations,
        s.seed
    );
    for (f, m) in &a.moran {
        text.push_str(&format!(
            "{f}\n  I = {}\n  E[I] = {}\n  p = {}\n  units used = {}\n",
            fmt17(m.observed_i),
            fmt17(m.expected_i),
            fmt17(m.p_value),
            m.n_used
        ));
        if !m.islands_dropped.is_empty() {
            text.push_str(&format!("  islands dropped: {}\n", m.islands_dropped.join(", ")));
        }
        if !m.unmatched.is_empty() {
            text.push_str(&format!("  without polygon: {}\n", m.unmatched.join(", ")));
        }
    }
    out.text("moran_report.txt", &text)
}

fn fit_comparison(a: &Analysis, cmp: &Comparison, partition: BandPartition) -> Result<AssociationResult, StageError> {
    let names: Vec<&String> = std::iter::once(&cmp.response).chain(&cmp.reduced).chain(&cmp.added).collect();
    let rows: Vec<Vec<f64>> = (0..a.records.len())
        .filter_map(|i| names.iter().map(|n| feature_value(a, i, n)).collect::<Option<Vec<f64>>>())
        .collect();
    let n = rows.len();
    let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let mut reduced = Design::with_intercept(n);
    for (j, name) in cmp.reduced.iter().enumerate() {
        reduced = reduced.column(name.clone(), col(1 + j));
    }
    let mut full = reduced.clone();
    for (j, name) in cmp.added.iter().enumerate() {
        full = full.column(name.clone(), col(1 + cmp.reduced.len() + j));
    }
    let reduced = inference::ols(&y, &reduced).map_err(core)?;
    let full = inference::ols(&y, &full).map_err(core)?;
    let test = match inference::nested_f_test(&reduced, &full) {
        Ok(t) => Some(t),
        Err(InferenceError::ZeroResidualFull) => None,
        Err(e) => return Err(core(e)),
    };
    Ok(AssociationResult {
        comparison: cmp.clone(),
        partition,
        n,
        reduced,
        full,
        test,
    })
}

fn formula(response: &str, terms: &[String]) -> String {
    if terms.is_empty() {
        format!("{response} ~ 1")
    } else {
        format!("{response} ~ {}", terms.join(" + "))
    }
}

const ASSOCIATION_HEADER: [&str; 14] = [
    "comparison",
    "low_upper",
    "mid_upper",
    "model",
    "formula",
    "n",
    "rss",
    "df_residual",
    "r_squared",
    "f_statistic",
    "df1",
    "df2",
    "p_value",
    "p_below_floor",
];

fn association_rows(r: &AssociationResult) -> Vec<Vec<String>> {
    let c = &r.comparison;
    let full_terms: Vec<String> = c.reduced.iter().chain(&c.added).cloned().collect();
    let base = |model: &str, f: String, fit: &OlsFit| {
        vec![
            c.name.clone(),
            fmt17(r.partition.low_upper()),
            fmt17(r.partition.mid_upper()),
            model.to_string(),
            f,
            r.n.to_string(),
            fmt17(fit.rss),
            fit.df_residual.to_string(),
            fmt17(fit.r_squared),
        ]
    };
    let mut reduced = base("reduced", formula(&c.response, &c.reduced), &r.reduced);
    reduced.extend(std::iter::repeat_n("NA".to_string(), 5));
    let mut full = base("full", formula(&c.response, &full_terms), &r.full);
    match &r.test {
        Some(t) => full.extend([
            fmt17(t.f_statistic),
            t.df1.to_string(),
            t.df2.to_string(),
            fmt17(t.p_value),
            t.below_floor.to_string(),
        ]),
        None => full.extend(std::iter::repeat_n("NA".to_string(), 5)),
    }
    vec![reduced, full]
}

fn associations_stage(cfg: &PipelineConfig, a: &mut Analysis, out: Option<&mut Artifacts>) -> Result<(), StageError> {
    let partition = cfg.partition().map_err(|e| StageError::Missing(e.to_string()))?;
    a.associations = cfg
        .associations
        .comparisons
        .iter()
        .map(|c| fit_comparison(a, c, partition))
        .collect::<Result<_, _>>()?;
    let Some(out) = out else { return Ok(()) };
    let rows: Vec<Vec<String>> = a.associations.iter().flat_map(association_rows).collect();
    out.csv("associations.csv", &ASSOCIATION_HEADER, &rows)?;
    let mut text = String::from("Nested OLS comparisons\n");
    for r in &a.associations {
        let c = &r.comparison;
        let full_terms: Vec<String> = c.reduced.iter().chain(&c.added).cloned().collect();
        text.push_str(&format!(
            "\n{}\n  reduced: {}  rss = {}  df = {}\n  full:    {}  rss = {}  df = {}\n",
            c.name,
            formula(&c.response, &c.reduced),
            fmt17(r.reduced.rss),
            r.reduced.df_residual,
            formula(&c.response, &full_terms),
            fmt17(r.full.rss),
            r.full.df_residual,
        ));
        match &r.test {
            Some(t) => text.push_str(&format!(
                "  F({}, {}) = {}  p = {}\n",
                t.df1,
                t.df2,
                fmt17(t.f_statistic),
                if t.below_floor { t.p_display() } else { fmt17(t.p_value) }
            )),
            None => text.push_str("  both models fit exactly; F undefined\n"),
        }
        text.push_str(&format!("  units used: {}\n", r.n));
    }
    out.text("associations.txt", &text)
}

fn sensitivity_stage(cfg: &PipelineConfig, a: &mut Analysis, out: Option<&mut Artifacts>) -> Result<(), StageError> {
    let partitions = cfg.partitions().map_err(|e| StageError::Missing(e.to_string()))?;
    let mut lows = Vec::new();
    let mut tests = Vec::new();
    let primary = partitions[0];
    for p in &partitions {
        set_bands(a, p);
        lows.push((*p, a.records.iter().map(|r| (r.fips.clone(), r.p_low)).collect::<BTreeMap<_, _>>()));
        for c in &cfg.associations.comparisons {
            tests.push(fit_comparison(a, c, *p)?);
        }
    }
    set_bands(a, &primary);
    let report = spectral::band_sensitivity(&lows).map_err(core)?;
    let Some(out) = out else { return Ok(()) };
    let rows: Vec<Vec<String>> = report
        .pairs
        .iter()
        .map(|r| {
            vec![
                fmt17(r.a.low_upper()),
                fmt17(r.a.mid_upper()),
                fmt17(r.b.low_upper()),
                fmt17(r.b.mid_upper()),
                fmt17(r.rho),
            ]
        })
        .collect();
    out.csv(
        "sensitivity.csv",
        &["low_upper_a", "mid_upper_a", "low_upper_b", "mid_upper_b", "spearman_rho"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = tests.iter().flat_map(association_rows).collect();
    out.csv("sensitivity_ftests.csv", &ASSOCIATION_HEADER, &rows)
}

fn export_stage(cfg: &PipelineConfig, a: &mut Analysis, out: Option<&mut Artifacts>) -> Result<(), StageError> {
    let layer = a.layer.as_ref().expect("polygons loaded at ingest");
    let (joined, report) = geo::join_geo(&a.records, layer)?;
    if !report.polygons_without_record.is_empty() {
        a.warnings.push(format!(
            "polygons without a feature record (kept with null properties): {}",
            report.polygons_without_record.join(", ")
        ));
    }
    if !report.records_without_polygon.is_empty() {
        a.warnings.push(format!(
            "feature records without a polygon: {}",
            report.records_without_polygon.join(", ")
        ));
    }
    let Some(out) = out else { return Ok(()) };
    let mut text = serde_json::to_string_pretty(&joined).map_err(GeoError::from)?;
    text.push('\n');
    out.text("joined.geojson", &text)?;
    for prop in ["p_low", "p_high", "log10_intensity"] {
        let svg = svg::render_choropleth(&joined, prop, &cfg.output.palette)?;
        out.text(&format!("map_{prop}.svg"), &svg)?;
    }
    out.text("map_cluster.svg", &svg::render_categories(&joined, "cluster")?)?;

    let k = a.model.as_ref().map_or(0, |m| m.k);
    let groups = |value: &dyn Fn(&UnitFeatureRecord) -> Option<f64>| -> Vec<(String, Vec<f64>)> {
        (1..=k)
            .map(|c| {
                let vals = a.records.iter().filter(|r| r.cluster == Some(c)).filter_map(value).collect();
                (format!("cluster {c}"), vals)
            })
            .collect()
    };
    let delta = groups(&|r| r.delta_beta);
    out.text(
        "boxplot_delta_beta.svg",
        &svg::render_boxplot(&delta, "Slope change by cluster", "delta_beta"),
    )?;
    let years = groups(&|r| r.break_year.map(f64::from));
    out.text(
        "boxplot_break_year.svg",
        &svg::render_boxplot(&years, "Break year by cluster", "break_year"),
    )
}

/// Paths written by [`write_synthetic_inputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFiles {
    pub panel: PathBuf,
    pub polygons: PathBuf,
    pub names: PathBuf,
}

/// Panel CSV, grid polygons and canonical names for a synthetic spec, in
/// the formats the pipeline reads.
pub fn write_synthetic_inputs(spec: &crate::synth::SynthSpec, dir: &Path) -> Result<SynthFiles, StageError> {
    let p = crate::synth::generate(spec).map_err(core)?;
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| StageError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let files = SynthFiles {
        panel: dir.join("panel.csv"),
        polygons: dir.join("polygons.geojson"),
        names: dir.join("names.txt"),
    };
    let rows: Vec<Vec<String>> = p
        .series()
        .iter()
        .flat_map(|s| {
            s.years
                .iter()
                .zip(&s.rates)
                .map(|(y, r)| vec![s.name.clone(), s.fips.clone(), y.to_string(), fmt17(*r)])
        })
        .collect();
    output::write_csv(&files.panel, &["name", "fips", "year", "rate"], &rows).map_err(io(&files.panel))?;
    let layer = GeoLayer::from_polygons(&crate::synth::grid_polygons(spec.n_units));
    let mut geojson = serde_json::to_string_pretty(&layer.to_geojson("fips")).map_err(GeoError::from)?;
    geojson.push('\n');
    output::write_text(&files.polygons, &geojson).map_err(io(&files.polygons))?;
    let names: String = (0..spec.n_units).map(|i| crate::synth::unit_name(i) + "\n").collect();
    output::write_text(&files.names, &names).map_err(io(&files.names))?;
    Ok(files)
}
