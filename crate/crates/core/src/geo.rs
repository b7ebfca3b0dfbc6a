//! Planar geometry in kilometres: local projection, administrative regions and
//! cluster ingestion.
//!
//! Everything downstream of this module works on [`PlanarPoint`]s measured in
//! km. Longitude/latitude input is mapped with a local equirectangular
//! projection about a fixed origin, which is accurate to well below the jitter
//! radii over a country-sized domain.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    /// East, km.
    pub x: f64,
    /// North, km.
    pub y: f64,
}

impl PlanarPoint {
    pub const ORIGIN: PlanarPoint = PlanarPoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// The point displaced by `radius` km in direction `angle` (radians, counter-clockwise from east).
    pub fn offset_polar(&self, radius: f64, angle: f64) -> PlanarPoint {
        let (s, c) = angle.sin_cos();
        PlanarPoint::new(self.x + radius * c, self.y + radius * s)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> PlanarPoint {
        PlanarPoint::new(self.x + dx, self.y + dy)
    }

    pub fn rotate_about(&self, center: &PlanarPoint, angle: f64) -> PlanarPoint {
        let (s, c) = angle.sin_cos();
        let dx = self.x - center.x;
        let dy = self.y - center.y;
        PlanarPoint::new(center.x + c * dx - s * dy, center.y + s * dx + c * dy)
    }
}

/// Local equirectangular projection about `origin` (lon, lat in degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub origin_lon: f64,
    pub origin_lat: f64,
}

impl Projection {
    pub fn new(origin_lon: f64, origin_lat: f64) -> Result<Self> {
        if !origin_lon.is_finite() || !origin_lat.is_finite() {
            return Err(Error::NonFinite("projection origin"));
        }
        if origin_lat.abs() >= 89.0 {
            return Err(Error::LatitudeOutOfRange(origin_lat));
        }
        Ok(Self { origin_lon, origin_lat })
    }

    pub fn project(&self, lon: f64, lat: f64) -> Result<PlanarPoint> {
        if !lon.is_finite() || !lat.is_finite() {
            return Err(Error::NonFinite("lon/lat"));
        }
        if lat.abs() >= 89.0 {
            return Err(Error::LatitudeOutOfRange(lat));
        }
        let cos0 = self.origin_lat.to_radians().cos();
        Ok(PlanarPoint::new(
            EARTH_RADIUS_KM * cos0 * (lon - self.origin_lon).to_radians(),
            EARTH_RADIUS_KM * (lat - self.origin_lat).to_radians(),
        ))
    }

    pub fn unproject(&self, p: &PlanarPoint) -> (f64, f64) {
        let cos0 = self.origin_lat.to_radians().cos();
        let lon = self.origin_lon + (p.x / (EARTH_RADIUS_KM * cos0)).to_degrees();
        let lat = self.origin_lat + (p.y / EARTH_RADIUS_KM).to_degrees();
        (lon, lat)
    }
}

/// Project `lonlat` with a local equirectangular map centred on `origin`.
pub fn project(lonlat: (f64, f64), origin: (f64, f64)) -> Result<PlanarPoint> {
    Projection::new(origin.0, origin.1)?.project(lonlat.0, lonlat.1)
}

/// Anything that can answer "is this point inside?".
///
/// `boundary_distance` is used to skip boundary correction for clusters far
/// from any edge; implementations may return a lower bound.
pub trait Region: Sync {
    fn contains(&self, p: &PlanarPoint) -> bool;

    fn boundary_distance(&self, p: &PlanarPoint) -> f64;
}

/// The unbounded plane.
#[derive(Debug, Clone, Copy, Default)]
pub struct Plane;

impl Region for Plane {
    fn contains(&self, _p: &PlanarPoint) -> bool {
        true
    }

    fn boundary_distance(&self, _p: &PlanarPoint) -> f64 {
        f64::INFINITY
    }
}

/// Closed half-plane `{p : (p - anchor) · normal >= 0}`.
#[derive(Debug, Clone, Copy)]
pub struct HalfPlane {
    pub anchor: PlanarPoint,
    pub normal: (f64, f64),
}

impl HalfPlane {
    pub fn new(anchor: PlanarPoint, normal: (f64, f64)) -> Self {
        let len = normal.0.hypot(normal.1);
        Self { anchor, normal: (normal.0 / len, normal.1 / len) }
    }
}

impl Region for HalfPlane {
    fn contains(&self, p: &PlanarPoint) -> bool {
        (p.x - self.anchor.x) * self.normal.0 + (p.y - self.anchor.y) * self.normal.1 >= 0.0
    }

    fn boundary_distance(&self, p: &PlanarPoint) -> f64 {
        ((p.x - self.anchor.x) * self.normal.0 + (p.y - self.anchor.y) * self.normal.1).abs()
    }
}

/// One polygon: an exterior ring and zero or more holes. Rings are stored
/// open (the closing vertex is not repeated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Vec<PlanarPoint>,
    pub holes: Vec<Vec<PlanarPoint>>,
}

impl Polygon {
    pub fn new(exterior: Vec<PlanarPoint>, holes: Vec<Vec<PlanarPoint>>) -> Self {
        Self { exterior: open_ring(exterior), holes: holes.into_iter().map(open_ring).collect() }
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(vec![PlanarPoint::new(x0, y0), PlanarPoint::new(x1, y0), PlanarPoint::new(x1, y1), PlanarPoint::new(x0, y1)], Vec::new())
    }

    fn rings(&self) -> impl Iterator<Item = &Vec<PlanarPoint>> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    fn edges(&self) -> impl Iterator<Item = (&PlanarPoint, &PlanarPoint)> {
        self.rings().flat_map(|ring| ring_edges(ring))
    }

    fn contains(&self, p: &PlanarPoint) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if on_segment(p, a, b) {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Centroid of the exterior ring (shoelace formula).
    pub fn centroid(&self) -> PlanarPoint {
        let mut area2 = 0.0;
        let (mut cx, mut cy) = (0.0, 0.0);
        for (a, b) in ring_edges(&self.exterior) {
            let cross = a.x * b.y - b.x * a.y;
            area2 += cross;
            cx += (a.x + b.x) * cross;
            cy += (a.y + b.y) * cross;
        }
        PlanarPoint::new(cx / (3.0 * area2), cy / (3.0 * area2))
    }
}

fn open_ring(mut ring: Vec<PlanarPoint>) -> Vec<PlanarPoint> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

fn ring_edges(ring: &[PlanarPoint]) -> impl Iterator<Item = (&PlanarPoint, &PlanarPoint)> {
    let n = ring.len();
    (0..n).map(move |i| (&ring[i], &ring[(i + 1) % n]))
}

fn cross(o: &PlanarPoint, a: &PlanarPoint, b: &PlanarPoint) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(p: &PlanarPoint, a: &PlanarPoint, b: &PlanarPoint) -> bool {
    let len = a.distance(b);
    let tol = 1e-12 * (1.0 + len + p.x.abs().max(p.y.abs()));
    if cross(a, b, p).abs() > tol * len.max(1.0) {
        return false;
    }
    p.x >= a.x.min(b.x) - tol && p.x <= a.x.max(b.x) + tol && p.y >= a.y.min(b.y) - tol && p.y <= a.y.max(b.y) + tol
}

fn segment_distance(p: &PlanarPoint, a: &PlanarPoint, b: &PlanarPoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(&PlanarPoint::new(a.x + t * dx, a.y + t * dy))
}

fn segments_cross(a: &PlanarPoint, b: &PlanarPoint, c: &PlanarPoint, d: &PlanarPoint) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

fn self_intersects(ring: &[PlanarPoint]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (&ring[i], &ring[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (&ring[j], &ring[(j + 1) % n]);
            if segments_cross(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

/// An administrative area (county). Multi-polygons are stored as several
/// polygons under one id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdminRegion {
    pub id: String,
    pub polygons: Vec<Polygon>,
}

impl AdminRegion {
    /// Validates ring sizes, outer-ring simplicity and hole containment.
    pub fn new(id: impl Into<String>, polygons: Vec<Polygon>) -> Result<Self> {
        let id = id.into();
        if polygons.is_empty() {
            return Err(Error::InvalidRegion { region: id, reason: "no polygons".into() });
        }
        for poly in &polygons {
            for ring in poly.rings() {
                if ring.iter().any(|p| !p.is_finite()) {
                    return Err(Error::NonFinite("polygon vertex"));
                }
                let mut distinct = ring.clone();
                distinct.dedup();
                if distinct.len() < 3 {
                    return Err(Error::DegeneratePolygon { region: id, vertices: distinct.len() });
                }
            }
            if self_intersects(&poly.exterior) {
                return Err(Error::InvalidRegion { region: id, reason: "self-intersecting outer ring".into() });
            }
            let outer = Polygon::new(poly.exterior.clone(), Vec::new());
            for hole in &poly.holes {
                let strictly_inside =
                    hole.iter().all(|v| outer.contains(v) && !ring_edges(&outer.exterior).any(|(a, b)| on_segment(v, a, b)));
                if !strictly_inside {
                    return Err(Error::InvalidRegion { region: id, reason: "hole not strictly inside its outer ring".into() });
                }
            }
        }
        Ok(Self { id, polygons })
    }

    pub fn rect(id: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(id, vec![Polygon::rect(x0, y0, x1, y1)])
    }

    /// Even-odd ray casting; points on any edge count as inside.
    pub fn contains(&self, p: &PlanarPoint) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }

    pub fn bbox(&self) -> (PlanarPoint, PlanarPoint) {
        let mut lo = PlanarPoint::new(f64::INFINITY, f64::INFINITY);
        let mut hi = PlanarPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in self.polygons.iter().flat_map(|poly| poly.exterior.iter()) {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> AdminRegion {
        self.map_vertices(|p| p.translate(dx, dy))
    }

    pub fn rotate_about(&self, center: &PlanarPoint, angle: f64) -> AdminRegion {
        self.map_vertices(|p| p.rotate_about(center, angle))
    }

    fn map_vertices(&self, f: impl Fn(&PlanarPoint) -> PlanarPoint) -> AdminRegion {
        let map_ring = |ring: &Vec<PlanarPoint>| ring.iter().map(&f).collect::<Vec<_>>();
        AdminRegion {
            id: self.id.clone(),
            polygons: self
                .polygons
                .iter()
                .map(|poly| Polygon { exterior: map_ring(&poly.exterior), holes: poly.holes.iter().map(map_ring).collect() })
                .collect(),
        }
    }
}

impl Region for AdminRegion {
    fn contains(&self, p: &PlanarPoint) -> bool {
        AdminRegion::contains(self, p)
    }

    fn boundary_distance(&self, p: &PlanarPoint) -> f64 {
        self.polygons.iter().flat_map(|poly| poly.edges()).map(|(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min)
    }
}

/// Regions keyed by id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegionSet {
    regions: BTreeMap<String, AdminRegion>,
}

impl RegionSet {
    pub fn new(regions: impl IntoIterator<Item = AdminRegion>) -> Self {
        Self { regions: regions.into_iter().map(|r| (r.id.clone(), r)).collect() }
    }

    pub fn get(&self, id: &str) -> Option<&AdminRegion> {
        self.regions.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AdminRegion> {
        self.regions.values()
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// The region containing `p`, if any (first by id order).
    pub fn locate(&self, p: &PlanarPoint) -> Option<&AdminRegion> {
        self.regions.values().find(|r| r.contains(p))
    }

    pub fn bbox(&self) -> (PlanarPoint, PlanarPoint) {
        let mut lo = PlanarPoint::new(f64::INFINITY, f64::INFINITY);
        let mut hi = PlanarPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (rlo, rhi) in self.regions.values().map(AdminRegion::bbox) {
            lo.x = lo.x.min(rlo.x);
            lo.y = lo.y.min(rlo.y);
            hi.x = hi.x.max(rhi.x);
            hi.y = hi.y.max(rhi.y);
        }
        (lo, hi)
    }

    /// A rectangle split into `nx` by `ny` equal cells with ids `r{row}c{col}`.
    pub fn grid(x0: f64, y0: f64, x1: f64, y1: f64, nx: usize, ny: usize) -> Self {
        let dx = (x1 - x0) / nx as f64;
        let dy = (y1 - y0) / ny as f64;
        let mut regions = Vec::with_capacity(nx * ny);
        for row in 0..ny {
            for col in 0..nx {
                let cx0 = x0 + col as f64 * dx;
                let cy0 = y0 + row as f64 * dy;
                regions.push(
                    AdminRegion::rect(format!("r{row}c{col}"), cx0, cy0, cx0 + dx, cy0 + dy).expect("grid cells are valid rectangles"),
                );
            }
        }
        Self::new(regions)
    }
}

/// One observed survey cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub id: String,
    pub location: PlanarPoint,
    pub urban: bool,
    /// Successes (binomial) or the continuous response (Gaussian).
    pub y: f64,
    /// Trials; 1 for the Gaussian family.
    pub n: u32,
    pub region: String,
}

/// How the cluster CSV encodes locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CoordMode {
    /// `lon,lat` columns and a lon/lat boundary file, projected to km.
    #[default]
    LonLat,
    /// `x_km,y_km` columns and a boundary file already in km.
    Km,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub clusters: Vec<ClusterRecord>,
    pub regions: RegionSet,
    /// Ids of rows dropped because the location is not inside the declared region.
    pub dropped: Vec<String>,
    pub projection: Option<Projection>,
}

/// Parse a GeoJSON FeatureCollection whose features carry a `region` property.
/// Coordinates pass through `map` (projection or identity).
pub fn parse_regions(reader: impl Read, map: &dyn Fn(f64, f64) -> Result<PlanarPoint>) -> Result<RegionSet> {
    let doc: serde_json::Value = serde_json::from_reader(reader)?;
    let features =
        doc.get("features").and_then(|f| f.as_array()).ok_or(Error::BadFeature { feature: 0, reason: "not a FeatureCollection".into() })?;
    let mut grouped: BTreeMap<String, Vec<Polygon>> = BTreeMap::new();
    for (i, feat) in features.iter().enumerate() {
        let bad = |reason: &str| Error::BadFeature { feature: i, reason: reason.to_string() };
        let id = match feat.get("properties").and_then(|p| p.get("region")) {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => return Err(bad("missing `region` property")),
        };
        let geom = feat.get("geometry").ok_or_else(|| bad("missing geometry"))?;
        let kind = geom.get("type").and_then(|t| t.as_str()).ok_or_else(|| bad("geometry without type"))?;
        let coords = geom.get("coordinates").ok_or_else(|| bad("geometry without coordinates"))?;
        let polys = match kind {
            "Polygon" => vec![parse_polygon(coords, map).map_err(|e| bad(&e))?],
            "MultiPolygon" => coords
                .as_array()
                .ok_or_else(|| bad("MultiPolygon coordinates must be an array"))?
                .iter()
                .map(|c| parse_polygon(c, map))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(&e))?,
            other => return Err(bad(&format!("unsupported geometry type {other}"))),
        };
        grouped.entry(id).or_default().extend(polys);
    }
    let regions = grouped.into_iter().map(|(id, polys)| AdminRegion::new(id, polys)).collect::<Result<Vec<_>>>()?;
    Ok(RegionSet::new(regions))
}

fn parse_polygon(coords: &serde_json::Value, map: &dyn Fn(f64, f64) -> Result<PlanarPoint>) -> std::result::Result<Polygon, String> {
    let rings = coords.as_array().ok_or("polygon coordinates must be an array")?;
    let mut parsed = Vec::with_capacity(rings.len());
    for ring in rings {
        let verts = ring.as_array().ok_or("ring must be an array")?;
        let mut pts = Vec::with_capacity(verts.len());
        for v in verts {
            let pair = v.as_array().ok_or("vertex must be an array")?;
            let (a, b) = match (pair.first().and_then(|x| x.as_f64()), pair.get(1).and_then(|x| x.as_f64())) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err("vertex must hold two numbers".into()),
            };
            pts.push(map(a, b).map_err(|e| e.to_string())?);
        }
        parsed.push(pts);
    }
    let mut it = parsed.into_iter();
    let exterior = it.next().ok_or("polygon without rings")?;
    Ok(Polygon::new(exterior, it.collect()))
}

fn lonlat_bbox_center(reader_bytes: &[u8]) -> Result<(f64, f64)> {
    let doc: serde_json::Value = serde_json::from_slice(reader_bytes)?;
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    fn walk(v: &serde_json::Value, lo: &mut (f64, f64), hi: &mut (f64, f64)) {
        if let Some(arr) = v.as_array() {
            if arr.len() >= 2 && arr[0].is_number() && arr[1].is_number() {
                let (x, y) = (arr[0].as_f64().unwrap_or(f64::NAN), arr[1].as_f64().unwrap_or(f64::NAN));
                lo.0 = lo.0.min(x);
                lo.1 = lo.1.min(y);
                hi.0 = hi.0.max(x);
                hi.1 = hi.1.max(y);
            } else {
                arr.iter().for_each(|a| walk(a, lo, hi));
            }
        }
    }
    if let Some(features) = doc.get("features").and_then(|f| f.as_array()) {
        for f in features {
            if let Some(c) = f.get("geometry").and_then(|g| g.get("coordinates")) {
                walk(c, &mut lo, &mut hi);
            }
        }
    }
    if !lo.0.is_finite() || !hi.0.is_finite() {
        return Err(Error::BadFeature { feature: 0, reason: "no coordinates found".into() });
    }
    Ok(((lo.0 + hi.0) / 2.0, (lo.1 + hi.1) / 2.0))
}

/// Read clusters and boundaries. Rows whose location falls outside their
/// declared region are dropped and reported in [`Ingested::dropped`].
///
/// Longitude/latitude data are projected about the centre of the boundary
/// file's bounding box.
pub fn ingest_clusters(csv_reader: impl Read, boundary_reader: impl Read, mode: CoordMode) -> Result<Ingested> {
    let mut boundary_bytes = Vec::new();
    let mut boundary_reader = boundary_reader;
    boundary_reader.read_to_end(&mut boundary_bytes)?;

    let projection = match mode {
        CoordMode::LonLat => {
            let (lon0, lat0) = lonlat_bbox_center(&boundary_bytes)?;
            Some(Projection::new(lon0, lat0)?)
        }
        CoordMode::Km => None,
    };
    let map = |a: f64, b: f64| -> Result<PlanarPoint> {
        match &projection {
            Some(proj) => proj.project(a, b),
            None if a.is_finite() && b.is_finite() => Ok(PlanarPoint::new(a, b)),
            None => Err(Error::NonFinite("coordinate")),
        }
    };
    let regions = parse_regions(boundary_bytes.as_slice(), &map)?;

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let (cx, cy) = match mode {
        CoordMode::LonLat => (col("lon")?, col("lat")?),
        CoordMode::Km => (col("x_km")?, col("y_km")?),
    };
    let (c_id, c_urban, c_y, c_n, c_region) = (col("id")?, col("urban")?, col("y")?, col("n")?, col("region")?);

    let mut clusters = Vec::new();
    let mut dropped = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let num = |c: usize, what: &str| -> Result<f64> {
            field(c).parse::<f64>().map_err(|_| Error::BadRow { row, reason: format!("unparsable {what} `{}`", field(c)) })
        };
        let location = map(num(cx, "x")?, num(cy, "y")?).map_err(|e| Error::BadRow { row, reason: e.to_string() })?;
        let urban = match field(c_urban) {
            "U" | "u" => true,
            "R" | "r" => false,
            other => return Err(Error::BadRow { row, reason: format!("urban must be U or R, got `{other}`") }),
        };
        let y = num(c_y, "y")?;
        let n = field(c_n).parse::<u32>().map_err(|_| Error::BadRow { row, reason: format!("unparsable n `{}`", field(c_n)) })?;
        if n < 1 {
            return Err(Error::BadRow { row, reason: "n must be at least 1".into() });
        }
        let region_id = field(c_region).to_string();
        let Some(region) = regions.get(&region_id) else {
            return Err(Error::UnknownRegion { row, region: region_id });
        };
        let id = field(c_id).to_string();
        if !region.contains(&location) {
            dropped.push(id);
            continue;
        }
        clusters.push(ClusterRecord { id, location, urban, y, n, region: region_id });
    }
    Ok(Ingested { clusters, regions, dropped, projection })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_square() -> AdminRegion {
        AdminRegion::rect("sq", 0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn project_origin_and_degree_lengths() {
        let p = project((36.8, -1.3), (36.8, -1.3)).unwrap();
        assert_eq!(p, PlanarPoint::ORIGIN);

        let one_degree = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        let p = project((37.8, 0.0), (36.8, 0.0)).unwrap();
        assert_abs_diff_eq!(p.x, one_degree, epsilon = 1e-9);
        assert_abs_diff_eq!(p.x, 111.19, epsilon = 5e-3);
        assert_abs_diff_eq!(p.y, 0.0);

        let p = project((36.8, -0.3), (36.8, -1.3)).unwrap();
        assert_abs_diff_eq!(p.x, 0.0);
        assert_abs_diff_eq!(p.y, one_degree, epsilon = 1e-9);
    }

    #[test]
    fn project_rejects_bad_input() {
        assert!(matches!(project((f64::NAN, 0.0), (0.0, 0.0)), Err(Error::NonFinite(_))));
        assert!(matches!(project((0.0, 89.5), (0.0, 0.0)), Err(Error::LatitudeOutOfRange(_))));
    }

    #[test]
    fn square_membership() {
        let sq = unit_square();
        assert!(sq.contains(&PlanarPoint::new(0.5, 0.5)));
        assert!(!sq.contains(&PlanarPoint::new(1.5, 0.5)));
        // edges and corners count as inside
        assert!(sq.contains(&PlanarPoint::new(1.0, 0.3)));
        assert!(sq.contains(&PlanarPoint::new(0.0, 0.0)));
        assert!(sq.contains(&PlanarPoint::new(0.4, 1.0)));
    }

    /// Winding number about `p` for a closed ring; nonzero means enclosed.
    fn winding(ring: &[PlanarPoint], p: &PlanarPoint) -> i32 {
        let mut w = 0;
        for i in 0..ring.len() {
            let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
            let is_left = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
            if a.y <= p.y {
                if b.y > p.y && is_left > 0.0 {
                    w += 1;
                }
            } else if b.y <= p.y && is_left < 0.0 {
                w -= 1;
            }
        }
        w
    }

    #[test]
    fn hole_excludes_points() {
        let outer = Polygon::rect(0.0, 0.0, 4.0, 4.0).exterior;
        let hole = Polygon::rect(1.0, 1.0, 3.0, 3.0).exterior;
        let region = AdminRegion::new("holed", vec![Polygon::new(outer.clone(), vec![hole.clone()])]).unwrap();
        for p in [PlanarPoint::new(2.0, 2.0), PlanarPoint::new(0.5, 0.5), PlanarPoint::new(3.5, 2.0), PlanarPoint::new(5.0, 2.0)] {
            let oracle = (winding(&outer, &p) != 0) && (winding(&hole, &p) == 0);
            assert_eq!(region.contains(&p), oracle, "{p:?}");
        }
        assert!(!region.contains(&PlanarPoint::new(2.0, 2.0)));
    }

    #[test]
    fn degenerate_and_invalid_regions_rejected() {
        let two = vec![PlanarPoint::new(0.0, 0.0), PlanarPoint::new(1.0, 0.0)];
        assert!(matches!(AdminRegion::new("d", vec![Polygon::new(two, vec![])]), Err(Error::DegeneratePolygon { vertices: 2, .. })));
        let bowtie = vec![PlanarPoint::new(0.0, 0.0), PlanarPoint::new(1.0, 1.0), PlanarPoint::new(1.0, 0.0), PlanarPoint::new(0.0, 1.0)];
        assert!(matches!(AdminRegion::new("b", vec![Polygon::new(bowtie, vec![])]), Err(Error::InvalidRegion { .. })));
        let outer = Polygon::rect(0.0, 0.0, 1.0, 1.0).exterior;
        let hole = Polygon::rect(0.5, 0.5, 2.0, 2.0).exterior;
        assert!(AdminRegion::new("h", vec![Polygon::new(outer, vec![hole])]).is_err());
    }

    #[test]
    fn multipolygon_regions() {
        let region = AdminRegion::new("m", vec![Polygon::rect(0.0, 0.0, 1.0, 1.0), Polygon::rect(5.0, 5.0, 6.0, 6.0)]).unwrap();
        assert!(region.contains(&PlanarPoint::new(5.5, 5.5)));
        assert!(!region.contains(&PlanarPoint::new(3.0, 3.0)));
    }

    #[test]
    fn boundary_distance_of_square() {
        let sq = AdminRegion::rect("s", 0.0, 0.0, 10.0, 10.0).unwrap();
        assert_abs_diff_eq!(sq.boundary_distance(&PlanarPoint::new(3.0, 5.0)), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sq.boundary_distance(&PlanarPoint::new(13.0, 14.0)), 5.0, epsilon = 1e-12);
    }

    const BOUNDARY: &str = r#"{"type":"FeatureCollection","features":[
        {"type":"Feature","properties":{"region":"A"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[10,0],[10,10],[0,10],[0,0]]]}},
        {"type":"Feature","properties":{"region":"B"},"geometry":{"type":"MultiPolygon","coordinates":[[[[10,0],[20,0],[20,10],[10,10],[10,0]]]]}}
    ]}"#;

    #[test]
    fn ingest_consistent_rows() {
        let csv = "id,x_km,y_km,urban,y,n,region\n1,1,1,U,3,10,A\n2,15,5,R,4,10,B\n3,9,9,R,0,5,A\n";
        let data = ingest_clusters(csv.as_bytes(), BOUNDARY.as_bytes(), CoordMode::Km).unwrap();
        assert_eq!(data.clusters.len(), 3);
        assert!(data.dropped.is_empty());
        assert!(data.clusters[0].urban);
        assert!(!data.clusters[1].urban);
        assert_eq!(data.regions.len(), 2);
    }

    #[test]
    fn ingest_drops_mismatched_region() {
        let csv = "id,x_km,y_km,urban,y,n,region\n1,1,1,U,3,10,A\n2,15,5,R,4,10,A\n3,9,9,R,0,5,A\n";
        let data = ingest_clusters(csv.as_bytes(), BOUNDARY.as_bytes(), CoordMode::Km).unwrap();
        assert_eq!(data.clusters.len(), 2);
        assert_eq!(data.dropped, vec!["2".to_string()]);
    }

    #[test]
    fn ingest_errors_identify_rows() {
        let missing = "id,x_km,urban,y,n,region\n1,1,U,3,10,A\n";
        assert!(matches!(
            ingest_clusters(missing.as_bytes(), BOUNDARY.as_bytes(), CoordMode::Km),
            Err(Error::MissingColumn(c)) if c == "y_km"
        ));
        let unknown = "id,x_km,y_km,urban,y,n,region\n1,1,1,U,3,10,A\n2,1,1,U,3,10,Z\n";
        assert!(matches!(
            ingest_clusters(unknown.as_bytes(), BOUNDARY.as_bytes(), CoordMode::Km),
            Err(Error::UnknownRegion { row: 2, .. })
        ));
        let bad_geom = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"region":"A"},"geometry":{"type":"Polygon","coordinates":[[[0,0],["x",0]]]}}]}"#;
        assert!(matches!(
            ingest_clusters("id,x_km,y_km,urban,y,n,region\n".as_bytes(), bad_geom.as_bytes(), CoordMode::Km),
            Err(Error::BadFeature { feature: 0, .. })
        ));
    }

    #[test]
    fn ingest_lonlat_projects_about_boundary_center() {
        let boundary = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"region":7},"geometry":{"type":"Polygon","coordinates":[[[36,-2],[38,-2],[38,0],[36,0],[36,-2]]]}}]}"#;
        let csv = "id,lon,lat,urban,y,n,region\na,37,-1,U,1,2,7\nb,39,-1,U,1,2,7\n";
        let data = ingest_clusters(csv.as_bytes(), boundary.as_bytes(), CoordMode::LonLat).unwrap();
        assert_eq!(data.clusters.len(), 1);
        assert_eq!(data.dropped, vec!["b".to_string()]);
        let p = data.clusters[0].location;
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-9);
    }

    #[test]
    #[ignore = "needs the access-restricted survey cluster file"]
    fn ingest_full_survey_file() {
        let dir = std::env::var("GEOMASK_SURVEY_DIR").expect("set GEOMASK_SURVEY_DIR");
        let csv = std::fs::File::open(format!("{dir}/clusters.csv")).unwrap();
        let geo = std::fs::File::open(format!("{dir}/counties.geojson")).unwrap();
        let data = ingest_clusters(csv, geo, CoordMode::LonLat).unwrap();
        assert_eq!(data.clusters.len() + data.dropped.len(), 1594);
        assert_eq!(data.clusters.len(), 1583);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn contains_is_translation_invariant(
                px in -5.0f64..5.0, py in -5.0f64..5.0, dx in -1e3f64..1e3, dy in -1e3f64..1e3
            ) {
                let region = AdminRegion::new("p", vec![Polygon::new(vec![
                    PlanarPoint::new(0.0, 0.0), PlanarPoint::new(3.0, -1.0), PlanarPoint::new(4.0, 2.0),
                    PlanarPoint::new(1.5, 1.0), PlanarPoint::new(0.5, 3.5),
                ], vec![])]).unwrap();
                let p = PlanarPoint::new(px, py);
                // keep away from edges where translation rounding could flip the result
                prop_assume!(region.boundary_distance(&p) > 1e-6);
                prop_assert_eq!(region.contains(&p), region.translate(dx, dy).contains(&p.translate(dx, dy)));
            }

            #[test]
            fn projection_round_trips(lon in 30.0f64..45.0, lat in -10.0f64..10.0) {
                let proj = Projection::new(37.9, 0.2).unwrap();
                let (lon2, lat2) = proj.unproject(&proj.project(lon, lat).unwrap());
                prop_assert!((lon - lon2).abs() < 1e-9 && (lat - lat2).abs() < 1e-9);
            }

            #[test]
            fn convex_polygon_contains_centroid(
                mut angles in proptest::collection::vec(0.0f64..std::f64::consts::TAU, 3..12),
                r in 0.5f64..30.0, cx in -50.0f64..50.0, cy in -50.0f64..50.0
            ) {
                // vertices on a circle in angular order always form a convex polygon
                angles.sort_by(f64::total_cmp);
                angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
                prop_assume!(angles.len() >= 3);
                let verts: Vec<_> = angles.iter().map(|a| PlanarPoint::new(cx + r * a.cos(), cy + r * a.sin())).collect();
                let poly = Polygon::new(verts, vec![]);
                let c = poly.centroid();
                let region = AdminRegion::new("c", vec![poly]).unwrap();
                prop_assert!(region.contains(&c));
            }
        }
    }
}
