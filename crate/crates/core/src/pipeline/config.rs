//! TOML run configuration with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::panel::Schema;
use crate::spatial::WeightStyle;
use crate::spectral::BandPartition;
use crate::synth::{SynthKind, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub panel: Option<PathBuf>,
    pub polygons: Option<PathBuf>,
    pub canonical_names: Option<PathBuf>,
    pub fips_property: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub taper: f64,
    pub spans: Vec<usize>,
    pub low_upper: f64,
    pub mid_upper: f64,
    /// Extra `[low_upper, mid_upper]` partitions for the sensitivity stage.
    pub alternatives: Vec<[f64; 2]>,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            taper: 0.1,
            spans: vec![3],
            low_upper: 0.15,
            mid_upper: 0.30,
            alternatives: vec![[0.12, 0.28], [0.18, 0.32]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BispectralConfig {
    /// Cluster on log10 intensity instead of the raw intensity.
    pub cluster_on_log: bool,
    /// Also write every `(k, l)` magnitude to `bispectrum_grid.csv`.
    pub dump_grid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
    pub include_mid: bool,
    /// Inclusive `[min, max]` range for the elbow and silhouette table.
    pub k_range: [usize; 2],
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            k: 4,
            restarts: 50,
            seed: 20_240_601,
            include_mid: false,
            k_range: [2, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BreaksConfig {
    pub h: usize,
}

impl Default for BreaksConfig {
    fn default() -> Self {
        Self { h: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialConfig {
    pub permutations: usize,
    pub seed: u64,
    pub weight_style: WeightStyle,
    pub features: Vec<String>,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            permutations: 999,
            seed: 20_240_602,
            weight_style: WeightStyle::Binary,
            features: ["p_low", "p_high", "log10_intensity", "delta_beta"]
                .map(String::from)
                .to_vec(),
        }
    }
}

/// One nested comparison: `response ~ reduced` against
/// `response ~ reduced + added`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub name: String,
    pub response: String,
    pub reduced: Vec<String>,
    pub added: Vec<String>,
}

impl Comparison {
    fn new(name: &str, response: &str, reduced: &[&str], added: &[&str]) -> Self {
        Self {
            name: name.into(),
            response: response.into(),
            reduced: reduced.iter().map(|s| s.to_string()).collect(),
            added: added.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationsConfig {
    pub comparisons: Vec<Comparison>,
}

impl Default for AssociationsConfig {
    fn default() -> Self {
        Self {
            comparisons: vec![
                Comparison::new("p_low_plus_intensity", "delta_beta", &["p_low"], &["log10_intensity"]),
                Comparison::new("slope_plus_intensity", "delta_beta", &["overall_slope"], &["log10_intensity"]),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub palette: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            palette: "viridis".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub schema: Schema,
    pub spectral: SpectralConfig,
    pub bispectral: BispectralConfig,
    pub clustering: ClusteringConfig,
    pub breaks: BreaksConfig,
    pub spatial: SpatialConfig,
    pub associations: AssociationsConfig,
    pub output: OutputConfig,
}

/// Columns that comparisons and Moran tests may reference.
pub const NUMERIC_FEATURES: &[&str] = &[
    "p_low",
    "p_mid",
    "p_high",
    "intensity",
    "log10_intensity",
    "break_year",
    "beta1",
    "beta2",
    "delta_beta",
    "overall_slope",
];

fn config_error(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let wrapped = format!("v = {value}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Sets `section.key` (any depth) in `table`.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<(), PipelineError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_error(format!("bad override key `{key}`")));
    }
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut node = table;
    for p in path {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_error(format!("`{p}` in `{key}` is not a section")))?;
    }
    node.insert(last.to_string(), parse_value(value));
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML text and applies `key=value` overrides in order.
    /// Relative input paths and the output directory resolve against `base`.
    pub fn from_toml(text: &str, overrides: &[(String, String)], base: &Path) -> Result<Self, PipelineError> {
        let mut table: toml::Table = text.parse().map_err(|e| config_error(format!("{e}")))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let mut cfg: PipelineConfig = table.try_into().map_err(|e| config_error(format!("{e}")))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut cfg.input.panel,
            &mut cfg.input.polygons,
            &mut cfg.input.canonical_names,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        resolve(&mut cfg.output.dir);
        if cfg.input.fips_property.is_empty() {
            cfg.input.fips_property = "fips".into();
        }
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults when `None`) and applies
    /// overrides. Override paths resolve against the working directory.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, PipelineError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_error(format!("cannot read {}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                // Overrides are relative to the caller, not the config file.
                let cwd = std::env::current_dir().unwrap_or_default();
                let overrides: Vec<(String, String)> = overrides
                    .iter()
                    .map(|(k, v)| {
                        let is_path = matches!(
                            k.as_str(),
                            "input.panel" | "input.polygons" | "input.canonical_names" | "output.dir"
                        );
                        if is_path && Path::new(v).is_relative() {
                            (k.clone(), toml_string(&cwd.join(v).to_string_lossy()))
                        } else {
                            (k.clone(), v.clone())
                        }
                    })
                    .collect();
                Self::from_toml(&text, &overrides, &base)
            }
            None => Self::from_toml("", overrides, &std::env::current_dir().unwrap_or_default()),
        }
    }

    pub fn partition(&self) -> Result<BandPartition, PipelineError> {
        BandPartition::new(self.spectral.low_upper, self.spectral.mid_upper)
            .map_err(|e| config_error(format!("spectral: {e}")))
    }

    /// Primary partition followed by the alternatives.
    pub fn partitions(&self) -> Result<Vec<BandPartition>, PipelineError> {
        let mut out = vec![self.partition()?];
        for [a, b] in &self.spectral.alternatives {
            out.push(BandPartition::new(*a, *b).map_err(|e| config_error(format!("spectral.alternatives: {e}")))?);
        }
        Ok(out)
    }

    /// Column names fed to k-means, in order.
    pub fn cluster_features(&self) -> Vec<String> {
        let mut f = vec!["p_low".to_string()];
        if self.clustering.include_mid {
            f.push("p_mid".into());
        }
        f.push("p_high".into());
        f.push(if self.bispectral.cluster_on_log { "log10_intensity" } else { "intensity" }.into());
        f
    }

    /// Checks ranges and referenced files. `needs_polygons` is false for
    /// single-stage runs that never touch geometry.
    pub fn validate(&self, needs_polygons: bool) -> Result<(), PipelineError> {
        let panel = self.input.panel.as_ref().ok_or_else(|| config_error("input.panel is required"))?;
        if !panel.is_file() {
            return Err(config_error(format!("input.panel {} does not exist", panel.display())));
        }
        if needs_polygons {
            let p = self
                .input
                .polygons
                .as_ref()
                .ok_or_else(|| config_error("input.polygons is required"))?;
            if !p.is_file() {
                return Err(config_error(format!("input.polygons {} does not exist", p.display())));
            }
        }
        if let Some(p) = &self.input.canonical_names {
            if !p.is_file() {
                return Err(config_error(format!("input.canonical_names {} does not exist", p.display())));
            }
        }
        if !(0.0..=0.5).contains(&self.spectral.taper) {
            return Err(config_error("spectral.taper must lie in [0, 0.5]"));
        }
        if self.spectral.spans.is_empty() || self.spectral.spans.iter().any(|s| s % 2 == 0) {
            return Err(config_error("spectral.spans must be a non-empty list of odd integers"));
        }
        self.partitions()?;
        let c = &self.clustering;
        if c.k == 0 || c.restarts == 0 {
            return Err(config_error("clustering.k and clustering.restarts must be positive"));
        }
        if c.k_range[0] == 0 || c.k_range[0] > c.k_range[1] {
            return Err(config_error("clustering.k_range must be [min, max] with 1 <= min <= max"));
        }
        if self.breaks.h < 2 {
            return Err(config_error("breaks.h must be at least 2"));
        }
        if self.spatial.permutations < crate::spatial::MIN_PERMUTATIONS {
            return Err(config_error(format!(
                "spatial.permutations must be at least {}",
                crate::spatial::MIN_PERMUTATIONS
            )));
        }
        let known = |f: &String| NUMERIC_FEATURES.contains(&f.as_str());
        if let Some(f) = self.spatial.features.iter().find(|f| !known(f)) {
            return Err(config_error(format!("spatial.features: unknown feature `{f}`")));
        }
        for cmp in &self.associations.comparisons {
            let cols = std::iter::once(&cmp.response).chain(&cmp.reduced).chain(&cmp.added);
            if let Some(f) = cols.clone().find(|f| !known(f)) {
                return Err(config_error(format!("associations `{}`: unknown feature `{f}`", cmp.name)));
            }
            if cmp.added.is_empty() {
                return Err(config_error(format!("associations `{}`: nothing added", cmp.name)));
            }
        }
        super::svg::palette(&self.output.palette)
            .ok_or_else(|| config_error(format!("unknown palette `{}`", self.output.palette)))?;
        Ok(())
    }
}

/// Builds a synthetic spec from optional TOML text, then `key=value`
/// overrides. Parameters the text leaves out come from the kind's preset;
/// the kind defaults to `trend-plus-noise`, the size to 100 units × 19 years.
pub fn synth_spec(text: Option<&str>, overrides: &[(String, String)]) -> Result<SynthSpec, PipelineError> {
    let mut table: toml::Table = text.unwrap_or("").parse().map_err(|e| config_error(format!("{e}")))?;
    for (k, v) in overrides {
        apply_override(&mut table, k, v)?;
    }
    let kind = match table.get("kind") {
        None => "trend-plus-noise".to_string(),
        Some(toml::Value::String(s)) => s.clone(),
        Some(other) => return Err(config_error(format!("kind must be a string, got {other}"))),
    };
    let preset = SynthKind::preset(&kind).ok_or_else(|| {
        config_error(format!("unknown synth kind `{kind}` (expected one of {})", SynthKind::NAMES.join(", ")))
    })?;
    let preset = toml::Table::try_from(SynthSpec::new(preset, 1, 19, 100)).map_err(|e| config_error(format!("{e}")))?;
    for (k, v) in preset {
        table.entry(k).or_insert(v);
    }
    let spec: SynthSpec = table.try_into().map_err(|e| config_error(format!("synth spec: {e}")))?;
    spec.validate().map_err(|e| config_error(e.to_string()))?;
    Ok(spec)
}

/// Quotes `s` as a TOML basic string.
pub fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}
