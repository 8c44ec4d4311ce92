//! Spatial primitives shared by every metric module: area units, polygon
//! boolean operations, polyline buffering, and the binary green-cover raster.
//!
//! All coordinates are plain meters in one projected CRS. Inputs whose
//! coordinate ranges look like lon/lat degrees are rejected up front; the
//! engine never reprojects.

pub mod buffer;
pub mod raster;

use std::collections::BTreeMap;

use geo::{Area, BooleanOps, BoundingRect, Contains, Coord, MultiPolygon, Point, Polygon, Rect};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use buffer::{buffer_polyline, Buffer};
pub use raster::{rasterize_fraction, GreenRaster, RegionMask, ZonalFraction};

/// Administrative unit kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaKind {
    Ward,
    Lsoa,
}

/// A ward or LSOA polygon: the unit of all analysis.
#[derive(Debug, Clone)]
pub struct AreaUnit {
    pub id: String,
    pub kind: AreaKind,
    /// Boundary in projected metric coordinates; may be multi-part.
    pub boundary: MultiPolygon<f64>,
    pub population: f64,
    /// Covariates keyed by name (deterministic iteration order).
    pub covariates: BTreeMap<String, f64>,
}

impl AreaUnit {
    pub fn new(id: impl Into<String>, kind: AreaKind, boundary: MultiPolygon<f64>, population: f64) -> Self {
        AreaUnit {
            id: id.into(),
            kind,
            boundary,
            population,
            covariates: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 0.0 || !self.population.is_finite() {
            return Err(Error::domain(format!("area {}: negative population", self.id)));
        }
        validate_multipolygon(&self.boundary)
            .map_err(|e| Error::domain(format!("area {}: {e}", self.id)))
    }
}

/// Park/garden access per the source tagging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Access {
    Public,
    Restricted,
}

/// Park or garden kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Park,
    Garden,
}

/// A mapped green space polygon.
#[derive(Debug, Clone)]
pub struct GreenSpacePolygon {
    pub id: String,
    pub kind: SpaceKind,
    pub access: Access,
    pub boundary: MultiPolygon<f64>,
}

impl GreenSpacePolygon {
    pub fn area(&self) -> f64 {
        self.boundary.unsigned_area()
    }

    pub fn validate(&self) -> Result<()> {
        validate_multipolygon(&self.boundary)
            .map_err(|e| Error::domain(format!("green space {}: {e}", self.id)))
    }
}

/// Boolean operation selector for [`polygon_ops`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolygonOp {
    Intersect,
    Subtract,
    Union,
}

/// Boolean operation on two valid multipolygons. The result may be empty.
pub fn polygon_ops(a: &MultiPolygon<f64>, b: &MultiPolygon<f64>, op: PolygonOp) -> Result<MultiPolygon<f64>> {
    validate_multipolygon(a).map_err(|e| Error::domain(format!("operand a: {e}")))?;
    validate_multipolygon(b).map_err(|e| Error::domain(format!("operand b: {e}")))?;
    let out = match op {
        PolygonOp::Intersect => a.intersection(b),
        PolygonOp::Subtract => a.difference(b),
        PolygonOp::Union => a.union(b),
    };
    Ok(out)
}

/// Rejects empty, unclosed, self-intersecting, or zero-area boundaries.
pub fn validate_multipolygon(mp: &MultiPolygon<f64>) -> Result<()> {
    if mp.0.is_empty() {
        return Err(Error::domain("empty polygon".to_string()));
    }
    for poly in &mp.0 {
        validate_rings(poly)?;
    }
    if mp.unsigned_area() <= 0.0 {
        return Err(Error::domain("polygon has zero area".to_string()));
    }
    Ok(())
}

fn validate_rings(poly: &Polygon<f64>) -> Result<()> {
    for ring in std::iter::once(poly.exterior()).chain(poly.interiors()) {
        let pts = &ring.0;
        if pts.len() < 4 {
            return Err(Error::domain("ring has fewer than 4 points".to_string()));
        }
        if pts.first() != pts.last() {
            return Err(Error::domain("ring is not closed".to_string()));
        }
        for c in pts {
            if !c.x.is_finite() || !c.y.is_finite() {
                return Err(Error::domain("non-finite coordinate".to_string()));
            }
        }
        if ring_self_intersects(pts) {
            return Err(Error::domain("ring self-intersects".to_string()));
        }
    }
    Ok(())
}

// O(n^2) proper-crossing test; adequate for boundary data at ingest time.
fn ring_self_intersects(pts: &[Coord<f64>]) -> bool {
    let n = pts.len() - 1; // last repeats first
    for i in 0..n {
        for j in (i + 1)..n {
            // skip shared-vertex neighbours (and the closing pair 0 / n-1)
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(pts[i], pts[i + 1], pts[j], pts[j + 1]) {
                return true;
            }
        }
    }
    false
}

fn segments_cross(a: Coord<f64>, b: Coord<f64>, c: Coord<f64>, d: Coord<f64>) -> bool {
    let orient = |p: Coord<f64>, q: Coord<f64>, r: Coord<f64>| {
        let v = (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
        if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        }
    };
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0
}

/// Bounding rect of a multipolygon; errors on empty input.
pub fn bounds(mp: &MultiPolygon<f64>) -> Result<Rect<f64>> {
    mp.bounding_rect()
        .ok_or_else(|| Error::domain("empty polygon has no bounds".to_string()))
}

/// Heuristic: a dataset whose coordinates all fit inside lon/lat degree
/// ranges was almost certainly not projected to meters.
pub fn looks_geographic(rect: &Rect<f64>) -> bool {
    rect.min().x >= -180.0 && rect.max().x <= 180.0 && rect.min().y >= -90.0 && rect.max().y <= 90.0
}

/// Coordinates this large cannot be degrees; the dataset must be projected.
fn definitely_projected(rect: &Rect<f64>) -> bool {
    rect.min().x.abs().max(rect.max().x.abs()) > 1000.0
        || rect.min().y.abs().max(rect.max().y.abs()) > 1000.0
}

/// Detects mixing a lon/lat dataset with a projected one. Flags only when
/// one side is unambiguously projected (coordinates beyond any degree
/// range), the other fits entirely in degree ranges, and the two extents do
/// not even touch — a small region near the origin of a large metric grid
/// overlaps it and is left alone.
pub fn crs_mismatch(a: &Rect<f64>, b: &Rect<f64>) -> bool {
    let overlap = a.min().x <= b.max().x
        && b.min().x <= a.max().x
        && a.min().y <= b.max().y
        && b.min().y <= a.max().y;
    !overlap
        && ((definitely_projected(a) && looks_geographic(b))
            || (definitely_projected(b) && looks_geographic(a)))
}

/// Point-in-multipolygon test (boundary treated as outside, matching `geo`).
pub fn contains_point(mp: &MultiPolygon<f64>, p: Coord<f64>) -> bool {
    mp.contains(&Point::from(p))
}
