//! Panel ingest: CSV loading, balance validation, name harmonization and
//! per-unit demeaning.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: rate `{value}` is not numeric")]
    NonNumericRate { row: usize, value: String },
    #[error("row {row}: year `{value}` is not an integer")]
    NonNumericYear { row: usize, value: String },
    #[error("row {row}: rate {value} must be finite and non-negative")]
    InvalidRate { row: usize, value: f64 },
    #[error("row {row}: fips code `{value}` is not a 5-character code")]
    InvalidFips { row: usize, value: String },
    #[error("unit {name} ({fips}) has more than one row for year {year}")]
    DuplicateYearForUnit { fips: String, name: String, year: i32 },
    #[error("unit {name} ({fips}) is missing year {year}")]
    UnbalancedPanel { fips: String, name: String, year: i32 },
    #[error("duplicate fips code {0}")]
    DuplicateFips(String),
    #[error("panel has no rows")]
    EmptyPanel,
    #[error("series {fips}: {reason}")]
    InvalidSeries { fips: String, reason: String },
    #[error("series has {0} observations; at least 2 are required")]
    SeriesTooShort(usize),
    #[error("canonical name list is empty")]
    EmptyCanonicalList,
    #[error("no canonical match for {}", names.join(", "))]
    UnmatchedUnit { names: Vec<String> },
    #[error("`{name}` matches several canonical entries: {}", candidates.join(", "))]
    AmbiguousMatch { name: String, candidates: Vec<String> },
}

/// Column names used to read the panel CSV.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Schema {
    pub name: String,
    pub fips: String,
    pub year: String,
    pub rate: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            name: "name".into(),
            fips: "fips".into(),
            year: "year".into(),
            rate: "rate".into(),
        }
    }
}

/// One unit's annual rate trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CountySeries {
    pub fips: String,
    pub name: String,
    pub years: Vec<i32>,
    pub rates: Vec<f64>,
}

impl CountySeries {
    pub fn new(
        fips: impl Into<String>,
        name: impl Into<String>,
        years: Vec<i32>,
        rates: Vec<f64>,
    ) -> Result<Self, PanelError> {
        let fips = fips.into();
        let invalid = |reason: &str| PanelError::InvalidSeries {
            fips: fips.clone(),
            reason: reason.to_string(),
        };
        if years.len() != rates.len() {
            return Err(invalid("years and rates differ in length"));
        }
        if years.is_empty() {
            return Err(invalid("no observations"));
        }
        if years.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(invalid("years must increase in steps of one"));
        }
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(invalid("rates must be finite and non-negative"));
        }
        Ok(Self {
            fips,
            name: name.into(),
            years,
            rates,
        })
    }

    /// Builds a series spanning `start_year..start_year + rates.len()`.
    pub fn from_start(
        fips: impl Into<String>,
        name: impl Into<String>,
        start_year: i32,
        rates: Vec<f64>,
    ) -> Result<Self, PanelError> {
        let years = (0..rates.len() as i32).map(|i| start_year + i).collect();
        Self::new(fips, name, years, rates)
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn start_year(&self) -> i32 {
        self.years[0]
    }
}

/// A balanced unit×year panel, ordered by fips.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    series: Vec<CountySeries>,
    start_year: i32,
    n_years: usize,
    canonical_names: Vec<String>,
}

impl Panel {
    pub fn new(mut series: Vec<CountySeries>) -> Result<Self, PanelError> {
        let first = series.first().ok_or(PanelError::EmptyPanel)?;
        let start_year = first.start_year();
        let n_years = first.len();
        series.sort_by(|a, b| a.fips.cmp(&b.fips));
        for pair in series.windows(2) {
            if pair[0].fips == pair[1].fips {
                return Err(PanelError::DuplicateFips(pair[0].fips.clone()));
            }
        }
        for s in &series {
            let end = start_year + n_years as i32 - 1;
            if let Some(year) = (start_year..=end).find(|y| !s.years.contains(y)) {
                return Err(PanelError::UnbalancedPanel {
                    fips: s.fips.clone(),
                    name: s.name.clone(),
                    year,
                });
            }
            if s.len() != n_years {
                return Err(PanelError::InvalidSeries {
                    fips: s.fips.clone(),
                    reason: format!("spans {} years, panel spans {}", s.len(), n_years),
                });
            }
        }
        Ok(Self {
            series,
            start_year,
            n_years,
            canonical_names: Vec::new(),
        })
    }

    pub fn series(&self) -> &[CountySeries] {
        &self.series
    }

    pub fn start_year(&self) -> i32 {
        self.start_year
    }

    pub fn n_years(&self) -> usize {
        self.n_years
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn canonical_names(&self) -> &[String] {
        &self.canonical_names
    }

    pub fn get(&self, fips: &str) -> Option<&CountySeries> {
        self.series
            .binary_search_by(|s| s.fips.as_str().cmp(fips))
            .ok()
            .map(|i| &self.series[i])
    }
}

/// A centred series together with the mean that was removed.
#[derive(Debug, Clone, PartialEq)]
pub struct DemeanedSeries {
    pub fips: String,
    pub values: Vec<f64>,
    pub mean: f64,
}

impl DemeanedSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn load_panel(path: impl AsRef<Path>, schema: &Schema) -> Result<Panel, PanelError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| PanelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_panel(file, schema)
}

/// Reads a panel from any CSV source with a header row.
pub fn read_panel<R: Read>(reader: R, schema: &Schema) -> Result<Panel, PanelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PanelError::MissingColumn(name.to_string()))
    };
    let (name_col, fips_col, year_col, rate_col) = (
        column(&schema.name)?,
        column(&schema.fips)?,
        column(&schema.year)?,
        column(&schema.rate)?,
    );

    struct Unit {
        name: String,
        obs: BTreeMap<i32, f64>,
    }
    let mut units: BTreeMap<String, Unit> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let field = |c: usize| record.get(c).unwrap_or("");
        let fips = normalize_fips(field(fips_col)).ok_or_else(|| PanelError::InvalidFips {
            row,
            value: field(fips_col).to_string(),
        })?;
        let year: i32 = field(year_col).parse().map_err(|_| PanelError::NonNumericYear {
            row,
            value: field(year_col).to_string(),
        })?;
        let rate: f64 = field(rate_col).parse().map_err(|_| PanelError::NonNumericRate {
            row,
            value: field(rate_col).to_string(),
        })?;
        if !rate.is_finite() || rate < 0.0 {
            return Err(PanelError::InvalidRate { row, value: rate });
        }
        let unit = units.entry(fips.clone()).or_insert_with(|| Unit {
            name: field(name_col).to_string(),
            obs: BTreeMap::new(),
        });
        if unit.obs.insert(year, rate).is_some() {
            return Err(PanelError::DuplicateYearForUnit {
                fips,
                name: unit.name.clone(),
                year,
            });
        }
    }

    let first_year = units.values().filter_map(|u| u.obs.keys().next()).min().copied();
    let last_year = units.values().filter_map(|u| u.obs.keys().last()).max().copied();
    let (Some(first_year), Some(last_year)) = (first_year, last_year) else {
        return Err(PanelError::EmptyPanel);
    };

    let mut series = Vec::with_capacity(units.len());
    for (fips, unit) in units {
        if let Some(year) = (first_year..=last_year).find(|y| !unit.obs.contains_key(y)) {
            return Err(PanelError::UnbalancedPanel {
                fips,
                name: unit.name,
                year,
            });
        }
        let (years, rates) = unit.obs.into_iter().unzip();
        series.push(CountySeries::new(fips, unit.name, years, rates)?);
    }
    Panel::new(series)
}

/// Zero-pads purely numeric codes shorter than five characters (a common
/// artifact of spreadsheet export).
pub fn normalize_fips(raw: &str) -> Option<String> {
    let raw = raw.trim();
    if raw.is_empty() || !raw.chars().all(|c| c.is_ascii_alphanumeric()) {
        return None;
    }
    if raw.len() < 5 && raw.chars().all(|c| c.is_ascii_digit()) {
        return Some(format!("{raw:0>5}"));
    }
    (raw.len() == 5).then(|| raw.to_string())
}

/// Reads a newline-delimited canonical name list, skipping blank lines.
pub fn load_canonical_names(path: impl AsRef<Path>) -> Result<Vec<String>, PanelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PanelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn name_key(name: &str) -> String {
    let lower = name.trim().to_lowercase();
    lower
        .strip_suffix(" county")
        .unwrap_or(&lower)
        .trim_end()
        .to_string()
}

/// Replaces each unit name by its canonical spelling. Matching ignores case
/// and a trailing " County".
pub fn harmonize_names(panel: Panel, canonical: &[String]) -> Result<Panel, PanelError> {
    if canonical.is_empty() {
        return Err(PanelError::EmptyCanonicalList);
    }
    let mut index: HashMap<String, Vec<&String>> = HashMap::new();
    for name in canonical {
        let entry = index.entry(name_key(name)).or_default();
        if !entry.contains(&name) {
            entry.push(name);
        }
    }

    let mut unmatched = Vec::new();
    let mut series = panel.series;
    for s in &mut series {
        match index.get(&name_key(&s.name)).map(Vec::as_slice) {
            Some([only]) => s.name = (*only).clone(),
            Some(many) if many.len() > 1 => {
                return Err(PanelError::AmbiguousMatch {
                    name: s.name.clone(),
                    candidates: many.iter().map(|c| c.to_string()).collect(),
                })
            }
            _ => unmatched.push(s.name.clone()),
        }
    }
    if !unmatched.is_empty() {
        return Err(PanelError::UnmatchedUnit { names: unmatched });
    }
    Ok(Panel {
        series,
        canonical_names: canonical.to_vec(),
        ..panel
    })
}

pub fn demean(series: &CountySeries) -> Result<DemeanedSeries, PanelError> {
    let n = series.rates.len();
    if n < 2 {
        return Err(PanelError::SeriesTooShort(n));
    }
    let mut mean = series.rates.iter().sum::<f64>() / n as f64;
    // One refinement pass recovers the rounding left by the first mean.
    mean += series.rates.iter().map(|r| r - mean).sum::<f64>() / n as f64;
    Ok(DemeanedSeries {
        fips: series.fips.clone(),
        values: series.rates.iter().map(|r| r - mean).collect(),
        mean,
    })
}
