//! Static SVG figures: quantile choropleths, a categorical cluster map and
//! per-cluster boxplots. Output bytes depend only on the input.

use std::fmt::Write as _;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SvgError {
    #[error("property `{0}` is not numeric on any feature")]
    NonNumericProperty(String),
    #[error("no drawable geometry")]
    NoGeometry,
    #[error("unknown palette `{0}`")]
    UnknownPalette(String),
}

const WIDTH: f64 = 800.0;
const MARGIN: f64 = 10.0;
const LEGEND_W: f64 = 190.0;
const MISSING_FILL: &str = "#d9d9d9";

const VIRIDIS: [&str; 5] = ["#440154", "#3b528b", "#21918c", "#5ec962", "#fde725"];
const BLUES: [&str; 5] = ["#eff3ff", "#bdd7e7", "#6baed6", "#3182bd", "#08519c"];
const REDS: [&str; 5] = ["#fee5d9", "#fcae91", "#fb6a4a", "#de2d26", "#a50f15"];
const GREYS: [&str; 5] = ["#f7f7f7", "#cccccc", "#969696", "#636363", "#252525"];
const CATEGORICAL: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

pub fn palette(name: &str) -> Option<&'static [&'static str; 5]> {
    match name.to_ascii_lowercase().as_str() {
        "viridis" => Some(&VIRIDIS),
        "blues" => Some(&BLUES),
        "reds" => Some(&REDS),
        "greys" | "grays" => Some(&GREYS),
        _ => None,
    }
}

/// Type-7 sample quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Inner class breaks for up to five quantile classes. Breaks equal to the
/// extremes or to each other collapse, so constant data has one class.
pub fn quantile_breaks(values: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return vec![];
    }
    v.sort_by(f64::total_cmp);
    let (min, max) = (v[0], v[v.len() - 1]);
    let mut breaks: Vec<f64> = [0.2, 0.4, 0.6, 0.8]
        .iter()
        .map(|&p| quantile(&v, p))
        .filter(|b| *b > min && *b < max)
        .collect();
    breaks.dedup();
    breaks
}

/// Class index: values equal to a break fall in the lower class.
pub fn class_of(v: f64, breaks: &[f64]) -> usize {
    breaks.iter().filter(|b| v > **b).count()
}

fn class_colors(pal: &[&'static str; 5], n: usize) -> Vec<&'static str> {
    if n == 1 {
        return vec![pal[2]];
    }
    (0..n).map(|i| pal[(i * 4 + (n - 1) / 2) / (n - 1)]).collect()
}

/// Four significant digits for legends and axes.
fn short(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    if (-3..6).contains(&mag) {
        let decimals = (3 - mag).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.3e}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

type Rings = Vec<Vec<[f64; 2]>>;

fn feature_rings(f: &Value) -> Rings {
    let g = &f["geometry"];
    let ring = |r: &Value| -> Vec<[f64; 2]> {
        r.as_array()
            .map(|pts| {
                pts.iter()
                    .filter_map(|p| Some([p.get(0)?.as_f64()?, p.get(1)?.as_f64()?]))
                    .collect()
            })
            .unwrap_or_default()
    };
    let poly = |c: &Value| -> Rings { c.as_array().map(|rs| rs.iter().map(ring).collect()).unwrap_or_default() };
    match g["type"].as_str() {
        Some("Polygon") => poly(&g["coordinates"]),
        Some("MultiPolygon") => g["coordinates"]
            .as_array()
            .map(|ps| ps.iter().flat_map(poly).collect())
            .unwrap_or_default(),
        _ => vec![],
    }
}

struct Projection {
    min_x: f64,
    max_y: f64,
    scale: f64,
    height: f64,
}

impl Projection {
    fn fit(all: &[Rings]) -> Option<Self> {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in all.iter().flatten().flatten() {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        if !b[0].is_finite() {
            return None;
        }
        let span_x = (b[2] - b[0]).max(1e-12);
        let span_y = (b[3] - b[1]).max(1e-12);
        let scale = (WIDTH - 2.0 * MARGIN) / span_x;
        Some(Self {
            min_x: b[0],
            max_y: b[3],
            scale,
            height: span_y * scale + 2.0 * MARGIN,
        })
    }

    fn path(&self, rings: &Rings) -> String {
        let mut d = String::new();
        for r in rings {
            for (i, p) in r.iter().enumerate() {
                let x = MARGIN + (p[0] - self.min_x) * self.scale;
                let y = MARGIN + (self.max_y - p[1]) * self.scale;
                let _ = write!(d, "{}{:.2} {:.2}", if i == 0 { "M" } else { "L" }, x, y);
            }
            d.push('Z');
        }
        d
    }
}

fn map_svg(geojson: &Value, title: &str, fills: &[String], legend: &[(String, String)]) -> Result<String, SvgError> {
    let features = geojson["features"].as_array().ok_or(SvgError::NoGeometry)?;
    let rings: Vec<Rings> = features.iter().map(feature_rings).collect();
    let proj = Projection::fit(&rings).ok_or(SvgError::NoGeometry)?;
    let legend_h = 40.0 + 22.0 * legend.len() as f64;
    let height = proj.height.max(legend_h) + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"##,
        w = WIDTH + LEGEND_W,
        h = height
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="white"/>"##);
    let _ = writeln!(s, r##"<g transform="translate(0,30)" stroke="#333333" stroke-width="0.5" fill-rule="evenodd">"##);
    for ((f, r), fill) in features.iter().zip(&rings).zip(fills) {
        let fips = f["properties"]["fips"].as_str().unwrap_or("");
        let _ = writeln!(s, r##"<path d="{}" fill="{}"><title>{}</title></path>"##, proj.path(r), fill, esc(fips));
    }
    s.push_str("</g>\n");
    let _ = writeln!(s, r##"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="14">{}</text>"##, esc(title));
    let lx = WIDTH + 10.0;
    for (i, (color, label)) in legend.iter().enumerate() {
        let y = 40.0 + 22.0 * i as f64;
        let _ = writeln!(
            s,
            r##"<rect x="{lx:.0}" y="{y:.0}" width="16" height="16" fill="{color}" stroke="#333333" stroke-width="0.5"/><text x="{:.0}" y="{:.0}" font-family="sans-serif" font-size="11">{}</text>"##,
            lx + 22.0,
            y + 12.0,
            esc(label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Five-class quantile choropleth of a numeric property; null or missing
/// values are drawn grey.
pub fn render_choropleth(geojson: &Value, property: &str, palette_name: &str) -> Result<String, SvgError> {
    let pal = palette(palette_name).ok_or_else(|| SvgError::UnknownPalette(palette_name.into()))?;
    let features = geojson["features"].as_array().ok_or(SvgError::NoGeometry)?;
    let mut values = Vec::with_capacity(features.len());
    for f in features {
        match &f["properties"][property] {
            Value::Null => values.push(None),
            Value::Number(n) => values.push(n.as_f64()),
            _ => return Err(SvgError::NonNumericProperty(property.into())),
        }
    }
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(SvgError::NonNumericProperty(property.into()));
    }
    let breaks = quantile_breaks(&present);
    let colors = class_colors(pal, breaks.len() + 1);
    let fills: Vec<String> = values
        .iter()
        .map(|v| v.map_or(MISSING_FILL, |v| colors[class_of(v, &breaks)]).to_string())
        .collect();
    let min = present.iter().copied().fold(f64::INFINITY, f64::min);
    let max = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut edges = vec![min];
    edges.extend(&breaks);
    edges.push(max);
    let mut legend: Vec<(String, String)> = colors
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let label = if colors.len() == 1 {
                short(min)
            } else if i == 0 {
                format!("[{}, {}]", short(edges[0]), short(edges[1]))
            } else {
                format!("({}, {}]", short(edges[i]), short(edges[i + 1]))
            };
            (c.to_string(), label)
        })
        .collect();
    if values.iter().any(Option::is_none) {
        legend.push((MISSING_FILL.into(), "NA".into()));
    }
    map_svg(geojson, property, &fills, &legend)
}

/// One colour per integer label in `property`.
pub fn render_categories(geojson: &Value, property: &str) -> Result<String, SvgError> {
    let features = geojson["features"].as_array().ok_or(SvgError::NoGeometry)?;
    let labels: Vec<Option<i64>> = features.iter().map(|f| f["properties"][property].as_i64()).collect();
    let mut distinct: Vec<i64> = labels.iter().flatten().copied().collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.is_empty() {
        return Err(SvgError::NonNumericProperty(property.into()));
    }
    let color = |l: i64| CATEGORICAL[distinct.binary_search(&l).expect("label listed") % CATEGORICAL.len()];
    let fills: Vec<String> = labels.iter().map(|l| l.map_or(MISSING_FILL, color).to_string()).collect();
    let mut legend: Vec<(String, String)> =
        distinct.iter().map(|&l| (color(l).to_string(), format!("{property} {l}"))).collect();
    if labels.iter().any(Option::is_none) {
        legend.push((MISSING_FILL.into(), "NA".into()));
    }
    map_svg(geojson, property, &fills, &legend)
}

/// Tukey boxplots, one per group, whiskers at 1.5 IQR.
pub fn render_boxplot(groups: &[(String, Vec<f64>)], title: &str, y_label: &str) -> String {
    let (w, h) = (120.0 * groups.len().max(1) as f64 + 100.0, 420.0);
    let (top, bottom, left) = (40.0, 360.0, 70.0);
    let all: Vec<f64> = groups.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite()).collect();
    let (mut lo, mut hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let y = |v: f64| bottom - (v - lo) / (hi - lo) * (bottom - top);

    let mut s = String::new();
    let _ = writeln!(s, r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"##);
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="white"/>"##);
    let _ = writeln!(s, r##"<text x="{left}" y="22" font-family="sans-serif" font-size="14">{}</text>"##, esc(title));
    let _ = writeln!(s, r##"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"##);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{:.0}" y1="{yy:.2}" x2="{left}" y2="{yy:.2}" stroke="black"/><text x="{:.0}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"##,
            left - 4.0,
            left - 6.0,
            y(v) + 3.0,
            short(v),
            yy = y(v)
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="14" y="{:.0}" font-family="sans-serif" font-size="11" transform="rotate(-90 14 {:.0})" text-anchor="middle">{}</text>"##,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        esc(y_label)
    );
    for (gi, (name, vals)) in groups.iter().enumerate() {
        let cx = left + 60.0 + 120.0 * gi as f64;
        let color = CATEGORICAL[gi % CATEGORICAL.len()];
        let _ = writeln!(
            s,
            r##"<text x="{cx:.0}" y="{:.0}" font-family="sans-serif" font-size="11" text-anchor="middle">{} (n={})</text>"##,
            bottom + 20.0,
            esc(name),
            vals.len()
        );
        let mut v: Vec<f64> = vals.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let (q1, med, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let lo_w = v.iter().copied().find(|x| *x >= q1 - 1.5 * iqr).unwrap_or(q1);
        let hi_w = v.iter().rev().copied().find(|x| *x <= q3 + 1.5 * iqr).unwrap_or(q3);
        let _ = writeln!(
            s,
            r##"<line x1="{cx:.0}" y1="{:.2}" x2="{cx:.0}" y2="{:.2}" stroke="black"/><rect x="{:.0}" y="{:.2}" width="60" height="{:.2}" fill="{color}" fill-opacity="0.6" stroke="black"/><line x1="{:.0}" y1="{:.2}" x2="{:.0}" y2="{:.2}" stroke="black" stroke-width="2"/>"##,
            y(hi_w),
            y(lo_w),
            cx - 30.0,
            y(q3),
            (y(q1) - y(q3)).max(0.5),
            cx - 30.0,
            y(med),
            cx + 30.0,
            y(med)
        );
        for x in v.iter().filter(|x| **x < lo_w || **x > hi_w) {
            let _ = writeln!(s, r##"<circle cx="{cx:.0}" cy="{:.2}" r="2.5" fill="none" stroke="black"/>"##, y(*x));
        }
    }
    s.push_str("</svg>\n");
    s
}
