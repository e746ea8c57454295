//! Boundary polygons, the regular computational grid, and the binary
//! membership matrix mapping grid points to areal units.
//!
//! Coordinates are assumed to be in a common projected planar unit; there is
//! no geodesic math here. Grid points sit at cell centers (offset by half a
//! step from the bounding box edge) so that summing field values against the
//! membership matrix is a midpoint quadrature of the area integral.

use std::path::Path;

use ndarray::Array2;
use serde_json::Value;

use crate::error::{Error, Result};

/// A simple polygon: one closed exterior ring, no holes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    ring: Vec<[f64; 2]>,
}

impl Polygon {
    /// Build from a closed ring (first vertex equal to last, at least 4
    /// vertices including the repeat).
    pub fn new(ring: Vec<[f64; 2]>) -> Result<Self> {
        if ring.len() < 4 {
            return Err(Error::Invalid(format!(
                "polygon ring needs at least 4 vertices (closing repeat included), got {}",
                ring.len()
            )));
        }
        if ring[0] != ring[ring.len() - 1] {
            return Err(Error::Invalid(
                "polygon ring is not closed (first vertex != last vertex)".into(),
            ));
        }
        if ring.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("polygon ring has non-finite coordinates".into()));
        }
        Ok(Polygon { ring })
    }

    /// The closed ring, with the first vertex repeated at the end.
    pub fn ring(&self) -> &[[f64; 2]] {
        &self.ring
    }

    /// Axis-aligned rectangle helper (counter-clockwise ring).
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Polygon {
            ring: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]],
        }
    }
}

/// A named partition of the territory into areal units.
#[derive(Debug, Clone)]
pub struct PolygonSet {
    pub name: String,
    polygons: Vec<Polygon>,
    labels: Vec<String>,
}

impl PolygonSet {
    pub fn new(name: impl Into<String>, polygons: Vec<Polygon>, labels: Vec<String>) -> Result<Self> {
        if polygons.is_empty() {
            return Err(Error::Invalid("no polygons".into()));
        }
        if polygons.len() != labels.len() {
            return Err(Error::Invalid(format!(
                "{} polygons but {} labels",
                polygons.len(),
                labels.len()
            )));
        }
        Ok(PolygonSet {
            name: name.into(),
            polygons,
            labels,
        })
    }

    /// Number of areal units K.
    pub fn k(&self) -> usize {
        self.polygons.len()
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Parse a GeoJSON-style FeatureCollection of simple polygons.
    ///
    /// Each feature must carry geometry type `"Polygon"` with exactly one
    /// exterior ring; interior rings are rejected. The unit label comes from
    /// the feature's `properties.id`, then the feature-level `id`, then the
    /// 0-based feature index.
    pub fn from_geojson_str(s: &str, name: impl Into<String>) -> Result<Self> {
        let v: Value = serde_json::from_str(s)
            .map_err(|e| Error::Invalid(format!("invalid JSON: {e}")))?;
        let ty = v.get("type").and_then(Value::as_str).unwrap_or("");
        if ty != "FeatureCollection" {
            return Err(Error::Invalid(format!(
                "expected a FeatureCollection, got type {ty:?}"
            )));
        }
        let features = v
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Invalid("FeatureCollection has no features array".into()))?;

        let mut polygons = Vec::new();
        let mut labels = Vec::new();
        for (idx, feat) in features.iter().enumerate() {
            let label = feature_label(feat, idx);
            let geom = feat
                .get("geometry")
                .and_then(Value::as_object)
                .ok_or_else(|| Error::Invalid(format!("feature {label:?} has no geometry")))?;
            let gtype = geom.get("type").and_then(Value::as_str).unwrap_or("");
            if gtype != "Polygon" {
                return Err(Error::Invalid(format!(
                    "feature {label:?}: geometry type {gtype:?} is not supported (want Polygon)"
                )));
            }
            let rings = geom
                .get("coordinates")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Invalid(format!("feature {label:?}: missing coordinates")))?;
            if rings.is_empty() {
                return Err(Error::Invalid(format!("feature {label:?}: no rings")));
            }
            if rings.len() > 1 {
                return Err(Error::Invalid(format!(
                    "feature {label:?}: interior rings (holes) are not supported"
                )));
            }
            let ring = parse_ring(&rings[0])
                .map_err(|e| Error::Invalid(format!("feature {label:?}: {e}")))?;
            let poly =
                Polygon::new(ring).map_err(|e| Error::Invalid(format!("feature {label:?}: {e}")))?;
            polygons.push(poly);
            labels.push(label);
        }
        if polygons.is_empty() {
            return Err(Error::Invalid("no polygons".into()));
        }
        PolygonSet::new(name, polygons, labels)
    }

    pub fn load_geojson(path: &Path, name: impl Into<String>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_geojson_str(&text, name)
            .map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Serialize back to a FeatureCollection. `extra` entries are added as
    /// top-level members (used for provenance); loaders ignore them.
    pub fn to_geojson(&self, extra: &[(&str, Value)]) -> String {
        let features: Vec<Value> = self
            .polygons
            .iter()
            .zip(&self.labels)
            .map(|(p, label)| {
                let coords: Vec<Vec<f64>> = p.ring().iter().map(|v| vec![v[0], v[1]]).collect();
                serde_json::json!({
                    "type": "Feature",
                    "properties": {"id": label},
                    "geometry": {"type": "Polygon", "coordinates": [coords]},
                })
            })
            .collect();
        let mut obj = serde_json::json!({
            "type": "FeatureCollection",
            "features": features,
        });
        if let Some(map) = obj.as_object_mut() {
            for (k, v) in extra {
                map.insert((*k).to_string(), v.clone());
            }
        }
        serde_json::to_string_pretty(&obj).expect("geojson serialization")
    }

    fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let mut xmin = f64::INFINITY;
        let mut ymin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for p in &self.polygons {
            for v in p.ring() {
                xmin = xmin.min(v[0]);
                xmax = xmax.max(v[0]);
                ymin = ymin.min(v[1]);
                ymax = ymax.max(v[1]);
            }
        }
        (xmin, ymin, xmax, ymax)
    }
}

fn feature_label(feat: &Value, idx: usize) -> String {
    let from_value = |v: &Value| -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    };
    feat.get("properties")
        .and_then(|p| p.get("id"))
        .and_then(|v| from_value(v))
        .or_else(|| feat.get("id").and_then(|v| from_value(v)))
        .unwrap_or_else(|| idx.to_string())
}

fn parse_ring(v: &Value) -> std::result::Result<Vec<[f64; 2]>, String> {
    let pts = v.as_array().ok_or("ring is not an array")?;
    let mut ring = Vec::with_capacity(pts.len());
    for pt in pts {
        let pair = pt.as_array().ok_or("ring vertex is not an array")?;
        if pair.len() < 2 {
            return Err("ring vertex has fewer than 2 coordinates".into());
        }
        let x = pair[0].as_f64().ok_or("non-numeric coordinate")?;
        let y = pair[1].as_f64().ok_or("non-numeric coordinate")?;
        ring.push([x, y]);
    }
    Ok(ring)
}

/// Regular computational lattice over the territory's bounding box.
///
/// Points are ordered x-fastest (row by row from `y0`), each at the center
/// of its cell, so `cell_area() = dx * dy` is the midpoint-quadrature weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub points: Vec<[f64; 2]>,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
}

impl Grid {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Identifier tying derived artifacts (membership matrices) to this grid.
    pub fn id(&self) -> String {
        format!(
            "{}x{}@({:?},{:?})+({:?},{:?})",
            self.nx, self.ny, self.x0, self.y0, self.dx, self.dy
        )
    }
}

/// Build a `resolution x resolution` cell-center lattice spanning the
/// bounding box of the polygon set.
pub fn build_grid(polygons: &PolygonSet, resolution: usize) -> Result<Grid> {
    build_grid_union(&[polygons], resolution)
}

/// Same as [`build_grid`] but spanning the union bounding box of several
/// polygon sets (the two boundary systems share one grid).
pub fn build_grid_union(sets: &[&PolygonSet], resolution: usize) -> Result<Grid> {
    if resolution < 2 {
        return Err(Error::Invalid(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    if sets.is_empty() {
        return Err(Error::Invalid("no polygon sets given".into()));
    }
    let mut xmin = f64::INFINITY;
    let mut ymin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for set in sets {
        let (a, b, c, d) = set.bounding_box();
        xmin = xmin.min(a);
        ymin = ymin.min(b);
        xmax = xmax.max(c);
        ymax = ymax.max(d);
    }
    let width = xmax - xmin;
    let height = ymax - ymin;
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(Error::Invalid(format!(
            "degenerate bounding box: width {width}, height {height}"
        )));
    }
    let dx = width / resolution as f64;
    let dy = height / resolution as f64;
    let mut points = Vec::with_capacity(resolution * resolution);
    for iy in 0..resolution {
        let y = ymin + (iy as f64 + 0.5) * dy;
        for ix in 0..resolution {
            let x = xmin + (ix as f64 + 0.5) * dx;
            points.push([x, y]);
        }
    }
    Ok(Grid {
        points,
        dx,
        dy,
        nx: resolution,
        ny: resolution,
        x0: xmin,
        y0: ymin,
    })
}

/// Position of a point relative to a polygon ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointPosition {
    Outside,
    Boundary,
    Interior,
}

/// Classify `point` against a closed ring: exact on-edge test first, then
/// the even-odd ray-crossing rule for the interior.
pub fn point_position(point: [f64; 2], ring: &[[f64; 2]]) -> PointPosition {
    let [px, py] = point;
    let m = ring.len() - 1; // last vertex repeats the first

    for e in 0..m {
        let [ax, ay] = ring[e];
        let [bx, by] = ring[e + 1];
        let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
        if cross == 0.0
            && px >= ax.min(bx)
            && px <= ax.max(bx)
            && py >= ay.min(by)
            && py <= ay.max(by)
        {
            return PointPosition::Boundary;
        }
    }

    let mut inside = false;
    let mut j = m - 1;
    for i in 0..m {
        let [xi, yi] = ring[i];
        let [xj, yj] = ring[j];
        if (yi > py) != (yj > py) {
            let x_cross = xj + (py - yj) * (xi - xj) / (yi - yj);
            if px < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    if inside {
        PointPosition::Interior
    } else {
        PointPosition::Outside
    }
}

/// True iff the point is strictly interior or on the boundary of the ring.
pub fn point_in_polygon(point: [f64; 2], ring: &[[f64; 2]]) -> bool {
    point_position(point, ring) != PointPosition::Outside
}

/// Binary K x n lookup table: entry (i, j) is 1 iff grid point j belongs to
/// polygon i. A point on a shared edge is assigned to the lowest-index
/// polygon that contains it, so every column sums to 0 or 1.
#[derive(Debug, Clone)]
pub struct MembershipMatrix {
    entries: Array2<u8>,
    pub polygon_set_name: String,
    pub grid_id: String,
    pub cell_area: f64,
}

impl MembershipMatrix {
    pub fn entries(&self) -> &Array2<u8> {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n(&self) -> usize {
        self.entries.ncols()
    }

    /// Validate externally supplied entries (0/1, column sums at most 1,
    /// row sums at least 1) and assemble a matrix.
    pub fn from_parts(
        entries: Array2<u8>,
        polygon_set_name: impl Into<String>,
        grid_id: impl Into<String>,
        cell_area: f64,
    ) -> Result<Self> {
        for ((i, j), &v) in entries.indexed_iter() {
            if v > 1 {
                return Err(Error::Invalid(format!(
                    "membership entry ({i}, {j}) is {v}, want 0 or 1"
                )));
            }
        }
        for j in 0..entries.ncols() {
            let col_sum: u32 = entries.column(j).iter().map(|&v| v as u32).sum();
            if col_sum > 1 {
                return Err(Error::Invalid(format!(
                    "grid point {j} belongs to {col_sum} polygons"
                )));
            }
        }
        for i in 0..entries.nrows() {
            if entries.row(i).iter().all(|&v| v == 0) {
                return Err(Error::Coverage {
                    name: i.to_string(),
                });
            }
        }
        Ok(MembershipMatrix {
            entries,
            polygon_set_name: polygon_set_name.into(),
            grid_id: grid_id.into(),
            cell_area,
        })
    }

    /// Plain-text form: first line `K n`, then K rows of space-separated 0/1.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.k(), self.n());
        for i in 0..self.k() {
            let row: Vec<String> = self.entries.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parse the plain-text form back into a raw 0/1 matrix.
    pub fn entries_from_text(s: &str) -> Result<Array2<u8>> {
        let mut lines = s.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Invalid("empty membership text".into()))?;
        let mut it = header.split_whitespace();
        let k: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Invalid("bad membership header".into()))?;
        let n: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Invalid("bad membership header".into()))?;
        if it.next().is_some() {
            return Err(Error::Invalid("membership header has extra tokens".into()));
        }
        let cells = k
            .checked_mul(n)
            .ok_or_else(|| Error::Invalid("membership size overflows".into()))?;
        if cells > 1 << 24 {
            return Err(Error::Invalid(format!(
                "membership matrix too large: {k} x {n}"
            )));
        }
        let mut entries = Array2::<u8>::zeros((k, n));
        for i in 0..k {
            let line = lines
                .next()
                .ok_or_else(|| Error::Invalid(format!("missing membership row {i}")))?;
            let mut count = 0;
            for (j, tok) in line.split_whitespace().enumerate() {
                if j >= n {
                    return Err(Error::Invalid(format!("membership row {i} too long")));
                }
                entries[(i, j)] = match tok {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        return Err(Error::Invalid(format!(
                            "membership entry ({i}, {j}) is {other:?}, want 0 or 1"
                        )))
                    }
                };
                count += 1;
            }
            if count != n {
                return Err(Error::Invalid(format!(
                    "membership row {i} has {count} entries, want {n}"
                )));
            }
        }
        if lines.next().is_some() {
            return Err(Error::Invalid("membership text has extra rows".into()));
        }
        Ok(entries)
    }
}

/// Compute the membership matrix of a grid against a polygon set.
///
/// Fails if any polygon captures no grid point (the grid is too coarse for
/// that unit) or if a grid point is strictly interior to two polygons
/// (the partition overlaps).
pub fn membership_matrix(grid: &Grid, polygons: &PolygonSet) -> Result<MembershipMatrix> {
    let k = polygons.k();
    let n = grid.n();
    let mut entries = Array2::<u8>::zeros((k, n));

    for (j, &pt) in grid.points.iter().enumerate() {
        let mut assigned: Option<usize> = None;
        let mut interior_hit: Option<usize> = None;
        for (i, poly) in polygons.polygons().iter().enumerate() {
            let pos = point_position(pt, poly.ring());
            if pos == PointPosition::Outside {
                continue;
            }
            if pos == PointPosition::Interior {
                if let Some(first) = interior_hit {
                    return Err(Error::Invalid(format!(
                        "polygons {:?} and {:?} overlap: grid point {j} is interior to both",
                        polygons.labels()[first],
                        polygons.labels()[i]
                    )));
                }
                interior_hit = Some(i);
            }
            if assigned.is_none() {
                assigned = Some(i);
            }
        }
        if let Some(i) = assigned {
            entries[(i, j)] = 1;
        }
    }

    for (i, label) in polygons.labels().iter().enumerate() {
        if entries.row(i).iter().all(|&v| v == 0) {
            return Err(Error::Coverage {
                name: label.clone(),
            });
        }
    }

    Ok(MembershipMatrix {
        entries,
        polygon_set_name: polygons.name.clone(),
        grid_id: grid.id(),
        cell_area: grid.cell_area(),
    })
}
