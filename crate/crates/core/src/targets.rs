//! Walking-accessibility targets over a population grid: whether each cell
//! can reach enough public green within a time budget, under three different
//! readings of "enough" (one 0.5 ha polygon, 0.5 ha of cumulative green
//! cover, one 2 ha polygon), and the population-weighted aggregation of the
//! per-cell flags to areas.

use std::collections::{BinaryHeap, BTreeSet, HashMap};

use geo::{Coord, MultiPolygon};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    contains_point, polygon_ops, validate_multipolygon, Access, AreaUnit, GreenRaster,
    GreenSpacePolygon, PolygonOp,
};
use crate::network::{dist, SegmentGraph};

/// A single public green polygon of at least this area satisfies the
/// baseline target.
pub const WHO_SINGLE_POLYGON_M2: f64 = 5_000.0;
/// Cumulative green cover of at least this area within reach satisfies the
/// green-cover variant of the baseline target.
pub const ESA_CUMULATIVE_M2: f64 = 5_000.0;
/// A single public green polygon of at least this area satisfies the
/// stricter target.
pub const NE_SINGLE_POLYGON_M2: f64 = 20_000.0;
/// Cells (and park boundary points) farther than this from every street
/// segment are treated as off the walking network.
pub const MAX_SNAP_DISTANCE_M: f64 = 200.0;

/// One tile of the population grid (~60 m squares in practice).
#[derive(Debug, Clone)]
pub struct PopulationCell {
    pub cell_id: String,
    pub centroid: Coord<f64>,
    pub cell_polygon: MultiPolygon<f64>,
    pub population: f64,
}

impl PopulationCell {
    pub fn new(
        cell_id: impl Into<String>,
        centroid: Coord<f64>,
        cell_polygon: MultiPolygon<f64>,
        population: f64,
    ) -> Self {
        PopulationCell {
            cell_id: cell_id.into(),
            centroid,
            cell_polygon,
            population,
        }
    }

    /// Square cell helper: side `size` centered on `centroid`.
    pub fn square(
        cell_id: impl Into<String>,
        centroid: Coord<f64>,
        size: f64,
        population: f64,
    ) -> Self {
        let h = size / 2.0;
        let poly = geo::Polygon::new(
            geo::LineString::from(vec![
                (centroid.x - h, centroid.y - h),
                (centroid.x + h, centroid.y - h),
                (centroid.x + h, centroid.y + h),
                (centroid.x - h, centroid.y + h),
                (centroid.x - h, centroid.y - h),
            ]),
            vec![],
        );
        PopulationCell::new(cell_id, centroid, MultiPolygon(vec![poly]), population)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.population.is_finite() || self.population < 0.0 {
            return Err(Error::domain(format!(
                "cell {}: negative population",
                self.cell_id
            )));
        }
        if !self.centroid.x.is_finite() || !self.centroid.y.is_finite() {
            return Err(Error::domain(format!(
                "cell {}: non-finite centroid",
                self.cell_id
            )));
        }
        validate_multipolygon(&self.cell_polygon)
            .map_err(|e| Error::domain(format!("cell {}: {e}", self.cell_id)))
    }
}

/// Everything within the walking budget of one cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachSet {
    pub cell_id: String,
    /// Ids of cells whose centroid is within the budget (always contains
    /// the cell itself).
    pub reachable_cells: BTreeSet<String>,
    /// Ids of public green polygons within the budget.
    pub reachable_green: BTreeSet<String>,
}

/// Per-cell compliance flags for the three targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetFlags {
    pub cell_id: String,
    pub who: bool,
    pub esa_who: bool,
    pub ne: bool,
}

/// Population-weighted target shares of one area; `None` where no
/// population was apportioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub area_id: String,
    pub who_share: Option<f64>,
    pub esa_who_share: Option<f64>,
    pub ne_share: Option<f64>,
}

/// Nearest point of a polyline to `p`: arc-length offset, snapped
/// coordinate, and distance. Polylines have at least two points.
fn project_to_polyline(pts: &[Coord<f64>], p: Coord<f64>) -> (f64, Coord<f64>, f64) {
    let mut best = (0.0, pts[0], dist(pts[0], p));
    let mut arc_before = 0.0;
    for pair in pts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let len = dist(a, b);
        if len > 0.0 {
            let t = (((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / (len * len))
                .clamp(0.0, 1.0);
            let q = Coord {
                x: a.x + t * (b.x - a.x),
                y: a.y + t * (b.y - a.y),
            };
            let d = dist(q, p);
            if d < best.2 {
                best = (arc_before + t * len, q, d);
            }
        }
        arc_before += len;
    }
    best
}

/// Where a point attaches to the street network.
#[derive(Debug, Clone, Copy)]
struct Snap {
    segment: usize,
    /// Arc-length offset of the snapped point along the segment.
    arc: f64,
    /// Straight-line access-leg length from the point to the network.
    access: f64,
}

/// Nearest segment point across the whole network; `None` on an empty
/// graph or when everything is farther than [`MAX_SNAP_DISTANCE_M`].
fn snap_to_network(graph: &SegmentGraph, p: Coord<f64>) -> Option<Snap> {
    let mut best: Option<Snap> = None;
    for (i, seg) in graph.segments.iter().enumerate() {
        let (arc, _, d) = project_to_polyline(&seg.geometry.0, p);
        if best.as_ref().is_none_or(|b| d < b.access) {
            best = Some(Snap {
                segment: i,
                arc,
                access: d,
            });
        }
    }
    best.filter(|b| b.access <= MAX_SNAP_DISTANCE_M)
}

/// Min-heap entry for the junction-graph search.
#[derive(PartialEq)]
struct QueueItem {
    cost: f64,
    junction: usize,
}

impl Eq for QueueItem {}

impl Ord for QueueItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap()
            .then_with(|| other.junction.cmp(&self.junction))
    }
}

impl PartialOrd for QueueItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Walking distances from a snapped origin to every junction within
/// `limit`, over the junction graph (junction = snapped endpoint cluster,
/// edge length = segment polyline length). Seeds already include the
/// origin's access leg and its offsets to the segment's two endpoints.
fn junction_distances(
    graph: &SegmentGraph,
    adjacency: &[Vec<(usize, f64)>],
    origin: &Snap,
    limit: f64,
) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; graph.junction_coords.len()];
    let mut heap = BinaryHeap::new();
    let (ja, jb) = graph.junctions[origin.segment];
    let seed_a = origin.access + origin.arc;
    let seed_b = origin.access + (graph.lengths[origin.segment] - origin.arc);
    for (j, seed) in [(ja, seed_a), (jb, seed_b)] {
        if seed <= limit && seed < d[j] {
            d[j] = seed;
            heap.push(QueueItem { cost: seed, junction: j });
        }
    }
    while let Some(QueueItem { cost, junction }) = heap.pop() {
        if cost > d[junction] {
            continue;
        }
        for &(next, len) in &adjacency[junction] {
            let nd = cost + len;
            if nd <= limit && nd < d[next] {
                d[next] = nd;
                heap.push(QueueItem { cost: nd, junction: next });
            }
        }
    }
    d
}

/// Walking distance from an origin to another snapped point, given the
/// origin's junction distances: best of the four endpoint routes and, on a
/// shared segment, the direct along-segment walk. Excludes the target's
/// access leg.
fn network_distance(
    graph: &SegmentGraph,
    origin: &Snap,
    origin_junction_dist: &[f64],
    target: &Snap,
) -> f64 {
    let (ja, jb) = graph.junctions[target.segment];
    let mut best = f64::INFINITY;
    let via_a = origin_junction_dist[ja] + target.arc;
    let via_b = origin_junction_dist[jb] + (graph.lengths[target.segment] - target.arc);
    best = best.min(via_a).min(via_b);
    if origin.segment == target.segment {
        best = best.min(origin.access + (origin.arc - target.arc).abs());
    }
    best
}

/// Computes each cell's reach set: other cells and public green polygons
/// within `budget_minutes` of walking at `speed_kmh`. Distances are network
/// shortest paths plus straight-line access legs; a green polygon also
/// counts when its boundary can be reached in a straight line or when it
/// contains the cell centroid. Cells farther than [`MAX_SNAP_DISTANCE_M`]
/// from the network keep a self-only reach set and leave a warning.
pub fn walking_reach(
    cells: &[PopulationCell],
    graph: &SegmentGraph,
    parks: &[GreenSpacePolygon],
    budget_minutes: f64,
    speed_kmh: f64,
    warnings: &mut Vec<String>,
) -> Result<Vec<ReachSet>> {
    if !(budget_minutes > 0.0) || !(speed_kmh > 0.0) {
        return Err(Error::config(format!(
            "walking budget and speed must be positive, got {budget_minutes} min at {speed_kmh} km/h"
        )));
    }
    for cell in cells {
        cell.validate()?;
    }
    let mut ids = std::collections::HashSet::new();
    for cell in cells {
        if !ids.insert(cell.cell_id.as_str()) {
            return Err(Error::domain(format!("duplicate cell id {}", cell.cell_id)));
        }
    }
    // meters walkable within the budget
    let limit = speed_kmh * 1000.0 / 60.0 * budget_minutes;

    let public: Vec<&GreenSpacePolygon> =
        parks.iter().filter(|p| p.access == Access::Public).collect();
    // nearest boundary point of each park to each cell is found per cell;
    // here we only pre-snap nothing, parks are few compared to cells
    let mut adjacency = vec![Vec::new(); graph.junction_coords.len()];
    for (s, &(ja, jb)) in graph.junctions.iter().enumerate() {
        adjacency[ja].push((jb, graph.lengths[s]));
        adjacency[jb].push((ja, graph.lengths[s]));
    }
    let snaps: Vec<Option<Snap>> = cells
        .iter()
        .map(|c| snap_to_network(graph, c.centroid))
        .collect();

    let reaches: Vec<(ReachSet, Option<String>)> = cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| {
            let mut reach = ReachSet {
                cell_id: cell.cell_id.clone(),
                reachable_cells: BTreeSet::from([cell.cell_id.clone()]),
                reachable_green: BTreeSet::new(),
            };
            let mut warning = None;

            // parks reachable without the network: containment or a
            // straight-line walk to the nearest boundary point
            let mut park_points = Vec::with_capacity(public.len());
            for park in &public {
                if contains_point(&park.boundary, cell.centroid) {
                    reach.reachable_green.insert(park.id.clone());
                    park_points.push(None);
                    continue;
                }
                let mut nearest: Option<(Coord<f64>, f64)> = None;
                for poly in &park.boundary.0 {
                    for ring in std::iter::once(poly.exterior()).chain(poly.interiors()) {
                        let (_, q, d) = project_to_polyline(&ring.0, cell.centroid);
                        if nearest.is_none_or(|(_, nd)| d < nd) {
                            nearest = Some((q, d));
                        }
                    }
                }
                // off-network legs are capped like access legs, otherwise a
                // straight beeline would always beat any network route
                let (q, d) = nearest.expect("valid park has boundary points");
                if d <= limit.min(MAX_SNAP_DISTANCE_M) {
                    reach.reachable_green.insert(park.id.clone());
                    park_points.push(None);
                } else {
                    park_points.push(Some(q));
                }
            }

            let Some(origin) = snaps[i] else {
                warning = Some(format!(
                    "cell {}: centroid farther than {MAX_SNAP_DISTANCE_M} m from every street segment; reach limited to the cell itself",
                    cell.cell_id
                ));
                return (reach, warning);
            };
            let jdist = junction_distances(graph, &adjacency, &origin, limit);

            for (j, other) in cells.iter().enumerate() {
                if j == i {
                    continue;
                }
                let Some(target) = snaps[j] else { continue };
                let walk = network_distance(graph, &origin, &jdist, &target) + target.access;
                if walk <= limit {
                    reach.reachable_cells.insert(other.cell_id.clone());
                }
            }

            // parks beyond a straight-line walk: route over the network to
            // the boundary point nearest the centroid
            for (park, q) in public.iter().zip(&park_points) {
                let Some(q) = q else { continue };
                let Some(gate) = snap_to_network(graph, *q) else { continue };
                let walk = network_distance(graph, &origin, &jdist, &gate) + gate.access;
                if walk <= limit {
                    reach.reachable_green.insert(park.id.clone());
                }
            }
            (reach, warning)
        })
        .collect();

    let mut out = Vec::with_capacity(reaches.len());
    for (reach, warning) in reaches {
        if let Some(w) = warning {
            warnings.push(w);
        }
        out.push(reach);
    }
    Ok(out)
}

/// True iff some single reachable public polygon is at least 0.5 ha.
pub fn who_target(reach: &ReachSet, parks: &[GreenSpacePolygon]) -> bool {
    single_polygon_target(reach, parks, WHO_SINGLE_POLYGON_M2)
}

/// True iff some single reachable public polygon is at least 2 ha.
pub fn ne_target(reach: &ReachSet, parks: &[GreenSpacePolygon]) -> bool {
    single_polygon_target(reach, parks, NE_SINGLE_POLYGON_M2)
}

fn single_polygon_target(reach: &ReachSet, parks: &[GreenSpacePolygon], threshold: f64) -> bool {
    parks.iter().any(|p| {
        p.access == Access::Public
            && reach.reachable_green.contains(&p.id)
            && p.area() >= threshold
    })
}

/// Green-cover area inside each cell polygon, in square meters.
pub fn cell_green_areas(cells: &[PopulationCell], raster: &GreenRaster) -> Result<Vec<f64>> {
    let px = raster.cell_size() * raster.cell_size();
    cells
        .iter()
        .map(|cell| {
            let mask = raster.mask(&cell.cell_polygon)?;
            Ok(raster.count_in(&mask) as f64 * px)
        })
        .collect()
}

/// True iff the green-cover area summed over all reachable cells is at
/// least 0.5 ha.
pub fn esa_who_target(
    reach: &ReachSet,
    cells: &[PopulationCell],
    raster: &GreenRaster,
) -> Result<bool> {
    let areas = cell_green_areas(cells, raster)?;
    Ok(esa_from_areas(reach, cells, &areas))
}

fn esa_from_areas(reach: &ReachSet, cells: &[PopulationCell], green_areas: &[f64]) -> bool {
    let total: f64 = cells
        .iter()
        .zip(green_areas)
        .filter(|(c, _)| reach.reachable_cells.contains(&c.cell_id))
        .map(|(_, a)| a)
        .sum();
    total >= ESA_CUMULATIVE_M2
}

/// Reach sets plus all three target flags for every cell.
pub fn compliance_flags(
    cells: &[PopulationCell],
    graph: &SegmentGraph,
    parks: &[GreenSpacePolygon],
    raster: &GreenRaster,
    budget_minutes: f64,
    speed_kmh: f64,
    warnings: &mut Vec<String>,
) -> Result<Vec<TargetFlags>> {
    let reaches = walking_reach(cells, graph, parks, budget_minutes, speed_kmh, warnings)?;
    let green_areas = cell_green_areas(cells, raster)?;
    Ok(reaches
        .iter()
        .map(|reach| TargetFlags {
            cell_id: reach.cell_id.clone(),
            who: who_target(reach, parks),
            esa_who: esa_from_areas(reach, cells, &green_areas),
            ne: ne_target(reach, parks),
        })
        .collect())
}

/// Population of the cell falling inside the area, proportional to the
/// overlap of the two polygons.
pub fn apportioned_population(cell: &PopulationCell, area: &AreaUnit) -> Result<f64> {
    use geo::{Area, BoundingRect};
    // cheap reject for the common fully-disjoint case
    if let (Some(cb), Some(ab)) = (cell.cell_polygon.bounding_rect(), area.boundary.bounding_rect())
    {
        if cb.min().x > ab.max().x
            || ab.min().x > cb.max().x
            || cb.min().y > ab.max().y
            || ab.min().y > cb.max().y
        {
            return Ok(0.0);
        }
    }
    let overlap = polygon_ops(&cell.cell_polygon, &area.boundary, PolygonOp::Intersect)?;
    let cell_area = cell.cell_polygon.unsigned_area();
    Ok(cell.population * overlap.unsigned_area() / cell_area)
}

/// Population-weighted target shares per area. Each cell contributes its
/// apportioned population as weight; an area that receives no population
/// reports missing shares and leaves a warning.
pub fn aggregate_targets(
    cells: &[PopulationCell],
    flags: &[TargetFlags],
    areas: &[AreaUnit],
    warnings: &mut Vec<String>,
) -> Result<Vec<TargetResult>> {
    if cells.len() != flags.len() {
        return Err(Error::config(format!(
            "{} cells but {} flag rows",
            cells.len(),
            flags.len()
        )));
    }
    let by_id: HashMap<&str, &TargetFlags> =
        flags.iter().map(|f| (f.cell_id.as_str(), f)).collect();
    for cell in cells {
        if !by_id.contains_key(cell.cell_id.as_str()) {
            return Err(Error::config(format!(
                "no target flags for cell {}",
                cell.cell_id
            )));
        }
    }
    let mut out = Vec::with_capacity(areas.len());
    for area in areas {
        let mut weight = 0.0;
        let mut who = 0.0;
        let mut esa = 0.0;
        let mut ne = 0.0;
        for cell in cells {
            let w = apportioned_population(cell, area)?;
            if w == 0.0 {
                continue;
            }
            let f = by_id[cell.cell_id.as_str()];
            weight += w;
            who += w * f.who as u8 as f64;
            esa += w * f.esa_who as u8 as f64;
            ne += w * f.ne as u8 as f64;
        }
        if weight > 0.0 {
            out.push(TargetResult {
                area_id: area.id.clone(),
                who_share: Some(who / weight),
                esa_who_share: Some(esa / weight),
                ne_share: Some(ne / weight),
            });
        } else {
            warnings.push(format!(
                "area {}: no population apportioned; target shares missing",
                area.id
            ));
            out.push(TargetResult {
                area_id: area.id.clone(),
                who_share: None,
                esa_who_share: None,
                ne_share: None,
            });
        }
    }
    Ok(out)
}
