use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{SpatialError, SpatialWeights, WeightStyle};

/// Coordinates closer than this (in map units) are treated as the same point.
pub const SNAP: f64 = 1e-9;

/// Boundary rings of one unit: exterior rings, holes and multipolygon parts
/// all count as boundary. Rings may be open or closed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon {
    pub rings: Vec<Vec<[f64; 2]>>,
}

impl Polygon {
    pub fn new(rings: Vec<Vec<[f64; 2]>>) -> Self {
        Self { rings }
    }

    /// Axis-aligned square with lower-left corner `(x, y)`.
    pub fn square(x: f64, y: f64, side: f64) -> Self {
        Self::new(vec![vec![
            [x, y],
            [x + side, y],
            [x + side, y + side],
            [x, y + side],
            [x, y],
        ]])
    }

    fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in self.rings.iter().flatten() {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        b
    }
}

/// `rows × cols` unit squares, fips `00001..` in row-major order.
pub fn unit_square_grid(rows: usize, cols: usize) -> Vec<(String, Polygon)> {
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| (format!("{:05}", r * cols + c + 1), Polygon::square(c as f64, r as f64, 1.0)))
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Seg {
    a: [f64; 2],
    b: [f64; 2],
    owner: usize,
    pos: usize,
}

impl Seg {
    fn min_x(&self) -> f64 {
        self.a[0].min(self.b[0])
    }

    fn max_x(&self) -> f64 {
        self.a[0].max(self.b[0])
    }
}

fn same_point(p: [f64; 2], q: [f64; 2]) -> bool {
    (p[0] - q[0]).abs() <= SNAP && (p[1] - q[1]).abs() <= SNAP
}

/// Drops a closing vertex and consecutive duplicates.
fn clean_ring(ring: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(ring.len());
    for &p in ring {
        if out.last().is_none_or(|&q| !same_point(p, q)) {
            out.push(p);
        }
    }
    while out.len() > 1 && same_point(out[0], out[out.len() - 1]) {
        out.pop();
    }
    out
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn point_segment_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

/// Proper crossing or any endpoint within `SNAP` of the other segment.
fn segments_touch(s: &Seg, t: &Seg) -> bool {
    let (o1, o2) = (orient(s.a, s.b, t.a), orient(s.a, s.b, t.b));
    let (o3, o4) = (orient(t.a, t.b, s.a), orient(t.a, t.b, s.b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    point_segment_dist(t.a, s.a, s.b) <= SNAP
        || point_segment_dist(t.b, s.a, s.b) <= SNAP
        || point_segment_dist(s.a, t.a, t.b) <= SNAP
        || point_segment_dist(s.b, t.a, t.b) <= SNAP
}

/// Calls `visit` on every pair whose x-extents overlap; stops when it
/// returns true.
fn sweep(segs: &mut [Seg], mut visit: impl FnMut(&Seg, &Seg) -> bool) {
    segs.sort_by(|s, t| s.min_x().total_cmp(&t.min_x()));
    for i in 0..segs.len() {
        let reach = segs[i].max_x() + SNAP;
        for j in i + 1..segs.len() {
            if segs[j].min_x() > reach {
                break;
            }
            if visit(&segs[i], &segs[j]) {
                return;
            }
        }
    }
}

fn ring_segments(ring: &[[f64; 2]], owner: usize) -> impl Iterator<Item = Seg> + '_ {
    let m = ring.len();
    (0..m).map(move |pos| Seg {
        a: ring[pos],
        b: ring[(pos + 1) % m],
        owner,
        pos,
    })
}

fn validate(fips: &str, polygon: &Polygon) -> Result<Vec<Vec<[f64; 2]>>, SpatialError> {
    let invalid = |reason: String| SpatialError::InvalidGeometry {
        fips: fips.to_string(),
        reason,
    };
    if polygon.rings.is_empty() {
        return Err(invalid("no rings".into()));
    }
    let mut rings = Vec::with_capacity(polygon.rings.len());
    for (r, raw) in polygon.rings.iter().enumerate() {
        if raw.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid(format!("ring {r} has non-finite coordinates")));
        }
        let ring = clean_ring(raw);
        if ring.len() < 3 {
            return Err(invalid(format!("ring {r} has {} distinct vertices", ring.len())));
        }
        let m = ring.len();
        let mut segs: Vec<Seg> = ring_segments(&ring, 0).collect();
        let mut crossing = None;
        sweep(&mut segs, |s, t| {
            let gap = s.pos.abs_diff(t.pos);
            let adjacent = gap == 1 || gap == m - 1;
            if !adjacent && segments_touch(s, t) {
                crossing = Some((s.pos.min(t.pos), s.pos.max(t.pos)));
                return true;
            }
            false
        });
        if let Some((a, b)) = crossing {
            return Err(invalid(format!("ring {r} self-intersects at edges {a} and {b}")));
        }
        rings.push(ring);
    }
    Ok(rings)
}

fn snap_key(p: [f64; 2]) -> (i64, i64) {
    ((p[0] / SNAP).round() as i64, (p[1] / SNAP).round() as i64)
}

/// Units are neighbours when their boundaries share at least one point.
pub fn queen_contiguity(polygons: &[(String, Polygon)]) -> Result<SpatialWeights, SpatialError> {
    let mut by_fips: BTreeMap<&str, &Polygon> = BTreeMap::new();
    for (fips, poly) in polygons {
        if by_fips.insert(fips.as_str(), poly).is_some() {
            return Err(SpatialError::DuplicateUnit(fips.clone()));
        }
    }
    let unit_ids: Vec<String> = by_fips.keys().map(|s| s.to_string()).collect();
    let cleaned: Vec<Vec<Vec<[f64; 2]>>> = by_fips
        .iter()
        .map(|(fips, poly)| validate(fips, poly))
        .collect::<Result<_, _>>()?;
    let n = unit_ids.len();
    let mut links: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];

    let mut vertex_owners: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, rings) in cleaned.iter().enumerate() {
        for p in rings.iter().flatten() {
            let owners = vertex_owners.entry(snap_key(*p)).or_default();
            if owners.last() != Some(&i) {
                owners.push(i);
            }
        }
    }
    for owners in vertex_owners.values() {
        for (a, &i) in owners.iter().enumerate() {
            for &j in &owners[a + 1..] {
                if i != j {
                    links[i].insert(j);
                    links[j].insert(i);
                }
            }
        }
    }

    // Pairs with overlapping boxes that share no snapped vertex may still
    // touch along an edge or at a T-junction.
    let boxes: Vec<[f64; 4]> = by_fips.values().map(|p| p.bbox()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| boxes[a][0].total_cmp(&boxes[b][0]));
    for (oi, &i) in order.iter().enumerate() {
        for &j in &order[oi + 1..] {
            if boxes[j][0] > boxes[i][2] + SNAP {
                break;
            }
            let overlap_y = boxes[j][1] <= boxes[i][3] + SNAP && boxes[i][1] <= boxes[j][3] + SNAP;
            if !overlap_y || links[i].contains(&j) {
                continue;
            }
            let mut segs: Vec<Seg> = cleaned[i]
                .iter()
                .flat_map(|ring| ring_segments(ring, i))
                .chain(cleaned[j].iter().flat_map(|ring| ring_segments(ring, j)))
                .collect();
            let mut touch = false;
            sweep(&mut segs, |s, t| {
                touch = s.owner != t.owner && segments_touch(s, t);
                touch
            });
            if touch {
                links[i].insert(j);
                links[j].insert(i);
            }
        }
    }

    let neighbors = links.into_iter().map(|s| s.into_iter().collect()).collect();
    Ok(SpatialWeights::from_parts(unit_ids, neighbors, WeightStyle::Binary))
}
