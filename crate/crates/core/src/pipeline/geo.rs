//! GeoJSON polygon input and the feature-to-polygon join.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde_json::{json, Map, Value};
use thiserror::Error;

use super::UnitFeatureRecord;
use crate::panel::normalize_fips;
use crate::spatial::Polygon;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid GeoJSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected a FeatureCollection")]
    NotFeatureCollection,
    #[error("feature {index} has no usable `{property}` property")]
    MissingFips { index: usize, property: String },
    #[error("feature {index} ({fips}): {reason}")]
    BadGeometry { index: usize, fips: String, reason: String },
    #[error("fips {0} appears in more than one feature")]
    DuplicateFips(String),
    #[error("no polygon matches any feature record")]
    NoMatchingUnits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoFeature {
    pub fips: String,
    /// Geometry exactly as read, written back unchanged by the join.
    pub geometry: Value,
    pub polygon: Polygon,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeoLayer {
    pub features: Vec<GeoFeature>,
}

impl GeoLayer {
    pub fn polygons(&self) -> Vec<(String, Polygon)> {
        self.features.iter().map(|f| (f.fips.clone(), f.polygon.clone())).collect()
    }

    pub fn from_polygons(polygons: &[(String, Polygon)]) -> Self {
        let features = polygons
            .iter()
            .map(|(fips, p)| GeoFeature {
                fips: fips.clone(),
                geometry: json!({
                    "type": "Polygon",
                    "coordinates": p.rings.iter().map(|r| r.iter().map(|v| vec![v[0], v[1]]).collect::<Vec<_>>()).collect::<Vec<_>>(),
                }),
                polygon: p.clone(),
            })
            .collect();
        Self { features }
    }

    /// FeatureCollection with only a fips property per feature.
    pub fn to_geojson(&self, fips_property: &str) -> Value {
        let features: Vec<Value> = self
            .features
            .iter()
            .map(|f| {
                let mut props = Map::new();
                props.insert(fips_property.to_string(), Value::String(f.fips.clone()));
                json!({"type": "Feature", "properties": props, "geometry": f.geometry})
            })
            .collect();
        json!({"type": "FeatureCollection", "features": features})
    }
}

fn ring(v: &Value) -> Option<Vec<[f64; 2]>> {
    v.as_array()?
        .iter()
        .map(|p| {
            let p = p.as_array()?;
            Some([p.first()?.as_f64()?, p.get(1)?.as_f64()?])
        })
        .collect()
}

fn rings_of(geometry: &Value) -> Result<Vec<Vec<[f64; 2]>>, String> {
    let kind = geometry.get("type").and_then(Value::as_str).ok_or("geometry has no type")?;
    let coords = geometry.get("coordinates").ok_or("geometry has no coordinates")?;
    let polygon = |c: &Value| -> Result<Vec<Vec<[f64; 2]>>, String> {
        c.as_array()
            .ok_or("polygon coordinates must be an array")?
            .iter()
            .map(|r| ring(r).ok_or_else(|| "ring positions must be [x, y] numbers".to_string()))
            .collect()
    };
    match kind {
        "Polygon" => polygon(coords),
        "MultiPolygon" => coords
            .as_array()
            .ok_or("multipolygon coordinates must be an array")?
            .iter()
            .map(polygon)
            .collect::<Result<Vec<_>, _>>()
            .map(|parts| parts.into_iter().flatten().collect()),
        other => Err(format!("unsupported geometry type {other}")),
    }
}

fn fips_of(props: Option<&Value>, property: &str) -> Option<String> {
    match props?.get(property)? {
        Value::String(s) => normalize_fips(s),
        Value::Number(n) => normalize_fips(&n.to_string()),
        _ => None,
    }
}

pub fn parse_geojson(text: &str, fips_property: &str) -> Result<GeoLayer, GeoError> {
    let root: Value = serde_json::from_str(text)?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoError::NotFeatureCollection);
    }
    let raw = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or(GeoError::NotFeatureCollection)?;
    let mut seen = BTreeSet::new();
    let mut features = Vec::with_capacity(raw.len());
    for (index, f) in raw.iter().enumerate() {
        let fips = fips_of(f.get("properties"), fips_property).ok_or_else(|| GeoError::MissingFips {
            index,
            property: fips_property.to_string(),
        })?;
        if !seen.insert(fips.clone()) {
            return Err(GeoError::DuplicateFips(fips));
        }
        let geometry = f.get("geometry").cloned().unwrap_or(Value::Null);
        let rings = rings_of(&geometry).map_err(|reason| GeoError::BadGeometry {
            index,
            fips: fips.clone(),
            reason,
        })?;
        features.push(GeoFeature {
            fips,
            geometry,
            polygon: Polygon::new(rings),
        });
    }
    Ok(GeoLayer { features })
}

pub fn read_geojson(path: &Path, fips_property: &str) -> Result<GeoLayer, GeoError> {
    let text = std::fs::read_to_string(path).map_err(|source| GeoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_geojson(&text, fips_property)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JoinReport {
    /// Polygons kept with null properties.
    pub polygons_without_record: Vec<String>,
    /// Records that have no polygon.
    pub records_without_polygon: Vec<String>,
}

fn num(v: Option<f64>) -> Value {
    v.and_then(serde_json::Number::from_f64).map_or(Value::Null, Value::Number)
}

/// Record fields as GeoJSON properties (missing values become null).
pub fn record_properties(r: &UnitFeatureRecord) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("fips".into(), Value::String(r.fips.clone()));
    m.insert("name".into(), Value::String(r.name.clone()));
    m.insert("p_low".into(), num(Some(r.p_low)));
    m.insert("p_mid".into(), num(Some(r.p_mid)));
    m.insert("p_high".into(), num(Some(r.p_high)));
    m.insert("intensity".into(), num(Some(r.intensity)));
    m.insert("log10_intensity".into(), num(r.log10_intensity));
    m.insert("cluster".into(), r.cluster.map_or(Value::Null, |c| json!(c)));
    m.insert("break_year".into(), r.break_year.map_or(Value::Null, |y| json!(y)));
    m.insert("beta1".into(), num(r.beta1));
    m.insert("beta2".into(), num(r.beta2));
    m.insert("delta_beta".into(), num(r.delta_beta));
    m
}

/// Original geometry per polygon with the matching record's properties.
pub fn join_geo(records: &[UnitFeatureRecord], layer: &GeoLayer) -> Result<(Value, JoinReport), GeoError> {
    let by_fips: BTreeMap<&str, &UnitFeatureRecord> = records.iter().map(|r| (r.fips.as_str(), r)).collect();
    let mut report = JoinReport::default();
    let mut matched = BTreeSet::new();
    let empty = UnitFeatureRecord::empty("");
    let null_keys: Vec<String> = record_properties(&empty).keys().cloned().collect();
    let features: Vec<Value> = layer
        .features
        .iter()
        .map(|f| {
            let props = match by_fips.get(f.fips.as_str()) {
                Some(r) => {
                    matched.insert(f.fips.as_str());
                    record_properties(r)
                }
                None => {
                    report.polygons_without_record.push(f.fips.clone());
                    let mut m: Map<String, Value> = null_keys.iter().map(|k| (k.clone(), Value::Null)).collect();
                    m.insert("fips".into(), Value::String(f.fips.clone()));
                    m
                }
            };
            json!({"type": "Feature", "properties": props, "geometry": f.geometry})
        })
        .collect();
    if matched.is_empty() {
        return Err(GeoError::NoMatchingUnits);
    }
    report.records_without_polygon = records
        .iter()
        .filter(|r| !matched.contains(r.fips.as_str()))
        .map(|r| r.fips.clone())
        .collect();
    Ok((json!({"type": "FeatureCollection", "features": features}), report))
}
