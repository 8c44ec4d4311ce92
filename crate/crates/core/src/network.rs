//! Street segments and the segment adjacency graph.
//!
//! Segments are the unit of analysis: betweenness, buffering, and imagery
//! all attach to segments, not junctions. The graph is therefore built in
//! "dual" form — one node per segment, one link per pair of segments whose
//! endpoints meet at a junction — with three interchangeable link costs:
//!
//! * metric: half the length of each incident segment, so a path cost is
//!   the midpoint-to-midpoint distance along the street;
//! * angular: the turn angle in degrees at the shared junction;
//! * topological: one per junction crossed.
//!
//! Endpoints within a snap tolerance are treated as the same junction, so
//! minor digitization noise does not disconnect the network.

use geo::{Coord, LineString};

use crate::error::{Error, Result};

/// Default snap tolerance in meters for matching segment endpoints.
pub const DEFAULT_SNAP_TOLERANCE: f64 = 0.1;

/// One street segment: a junction-to-junction polyline.
#[derive(Debug, Clone)]
pub struct StreetSegment {
    pub id: String,
    pub geometry: LineString<f64>,
}

impl StreetSegment {
    pub fn new(id: impl Into<String>, geometry: LineString<f64>) -> Result<Self> {
        let id = id.into();
        if geometry.0.len() < 2 {
            return Err(Error::domain(format!(
                "segment {id} needs at least two points"
            )));
        }
        for c in &geometry.0 {
            if !c.x.is_finite() || !c.y.is_finite() {
                return Err(Error::domain(format!(
                    "segment {id} has non-finite coordinates"
                )));
            }
        }
        let s = StreetSegment { id, geometry };
        if s.length() <= 0.0 {
            return Err(Error::domain(format!("segment {} has zero length", s.id)));
        }
        Ok(s)
    }

    pub fn start(&self) -> Coord<f64> {
        self.geometry.0[0]
    }

    pub fn end(&self) -> Coord<f64> {
        *self.geometry.0.last().unwrap()
    }

    pub fn length(&self) -> f64 {
        self.geometry
            .0
            .windows(2)
            .map(|w| dist(w[0], w[1]))
            .sum()
    }

    /// Bearing of the start-to-end chord, degrees clockwise from north
    /// in [0, 360).
    pub fn azimuth(&self) -> f64 {
        let s = self.start();
        let e = self.end();
        let deg = (e.x - s.x).atan2(e.y - s.y).to_degrees();
        (deg + 360.0) % 360.0
    }

    /// Point halfway along the polyline by arc length.
    pub fn midpoint(&self) -> Coord<f64> {
        let half = self.length() / 2.0;
        let mut walked = 0.0;
        for w in self.geometry.0.windows(2) {
            let d = dist(w[0], w[1]);
            if walked + d >= half {
                let t = if d > 0.0 { (half - walked) / d } else { 0.0 };
                return Coord {
                    x: w[0].x + t * (w[1].x - w[0].x),
                    y: w[0].y + t * (w[1].y - w[0].y),
                };
            }
            walked += d;
        }
        self.end()
    }

    /// Unit tangent leaving the given endpoint into the segment.
    /// `at_start` picks the first vertex pair, otherwise the last (reversed).
    fn tangent_away_from(&self, at_start: bool) -> Coord<f64> {
        let pts = &self.geometry.0;
        let (from, to) = if at_start {
            (pts[0], pts[1])
        } else {
            (pts[pts.len() - 1], pts[pts.len() - 2])
        };
        let dx = to.x - from.x;
        let dy = to.y - from.y;
        let len = (dx * dx + dy * dy).sqrt();
        Coord { x: dx / len, y: dy / len }
    }
}

pub fn dist(a: Coord<f64>, b: Coord<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    (dx * dx + dy * dy).sqrt()
}

/// Which endpoint of a segment meets a junction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum End {
    Start,
    Finish,
}

/// A link between two segments that share a junction.
#[derive(Debug, Clone, Copy)]
pub struct DualLink {
    /// Index of the neighboring segment.
    pub to: usize,
    /// Turn angle in degrees at the junction, in [0, 180].
    pub angle: f64,
}

/// Segment adjacency graph.
///
/// `links[i]` lists the neighbors of segment `i`. Where several junction
/// pairings connect the same two segments (e.g. a loop meeting at both
/// ends), only the link with the smallest turn angle is kept.
#[derive(Debug, Clone)]
pub struct SegmentGraph {
    pub segments: Vec<StreetSegment>,
    pub links: Vec<Vec<DualLink>>,
    /// Junction id for each segment endpoint: `(start, end)`.
    pub junctions: Vec<(usize, usize)>,
    /// Snapped coordinate of each junction.
    pub junction_coords: Vec<Coord<f64>>,
    /// Cached polyline length per segment.
    pub lengths: Vec<f64>,
}

impl SegmentGraph {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Metric link cost between adjacent segments: midpoint to midpoint.
    pub fn metric_cost(&self, a: usize, b: usize) -> f64 {
        (self.lengths[a] + self.lengths[b]) / 2.0
    }
}

/// Builds the segment graph, snapping endpoints within `snap_tolerance`
/// meters into shared junctions.
pub fn build_graph(segments: Vec<StreetSegment>, snap_tolerance: f64) -> Result<SegmentGraph> {
    if !(snap_tolerance >= 0.0) || !snap_tolerance.is_finite() {
        return Err(Error::domain("snap tolerance must be non-negative"));
    }
    {
        let mut seen = std::collections::HashSet::with_capacity(segments.len());
        for s in &segments {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::domain(format!("duplicate segment id {}", s.id)));
            }
        }
    }

    // Cluster endpoints into junctions with a union-find over a spatial
    // hash grid; cells are sized to the tolerance so only neighboring
    // cells need pairwise checks.
    let n = segments.len();
    let mut endpoints: Vec<Coord<f64>> = Vec::with_capacity(2 * n);
    for s in &segments {
        endpoints.push(s.start());
        endpoints.push(s.end());
    }
    let labels = cluster_points(&endpoints, snap_tolerance);
    let n_junctions = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut junction_coords = vec![Coord { x: 0.0, y: 0.0 }; n_junctions];
    let mut counts = vec![0usize; n_junctions];
    for (i, &lab) in labels.iter().enumerate() {
        junction_coords[lab].x += endpoints[i].x;
        junction_coords[lab].y += endpoints[i].y;
        counts[lab] += 1;
    }
    for (c, &k) in junction_coords.iter_mut().zip(&counts) {
        c.x /= k as f64;
        c.y /= k as f64;
    }
    let junctions: Vec<(usize, usize)> =
        (0..n).map(|i| (labels[2 * i], labels[2 * i + 1])).collect();

    // Segments incident to each junction, with which end touches it.
    let mut incident: Vec<Vec<(usize, End)>> = vec![Vec::new(); n_junctions];
    for (i, &(js, je)) in junctions.iter().enumerate() {
        incident[js].push((i, End::Start));
        if je != js {
            incident[je].push((i, End::Finish));
        } else {
            // a loop: both ends at one junction still yields two incidences
            incident[je].push((i, End::Finish));
        }
    }

    // Pairwise links at each junction; keep the minimum angle per pair.
    let mut links: Vec<Vec<DualLink>> = vec![Vec::new(); n];
    for members in &incident {
        for (ai, &(a, a_end)) in members.iter().enumerate() {
            for &(b, b_end) in &members[ai + 1..] {
                if a == b {
                    continue;
                }
                let ta = segments[a].tangent_away_from(a_end == End::Start);
                let tb = segments[b].tangent_away_from(b_end == End::Start);
                let angle = turn_angle_degrees(ta, tb);
                upsert_min_angle(&mut links[a], b, angle);
                upsert_min_angle(&mut links[b], a, angle);
            }
        }
    }
    for l in &mut links {
        l.sort_by_key(|d| d.to);
    }

    let lengths = segments.iter().map(|s| s.length()).collect();
    Ok(SegmentGraph { segments, links, junctions, junction_coords, lengths })
}

/// Turn angle between two segments meeting at a junction, given unit
/// tangents pointing away from it. A straight continuation (tangents
/// opposed) is 0 degrees; a U-turn back along the same bearing is 180.
fn turn_angle_degrees(ta: Coord<f64>, tb: Coord<f64>) -> f64 {
    let dot = (ta.x * tb.x + ta.y * tb.y).clamp(-1.0, 1.0);
    180.0 - dot.acos().to_degrees()
}

fn upsert_min_angle(links: &mut Vec<DualLink>, to: usize, angle: f64) {
    if let Some(l) = links.iter_mut().find(|l| l.to == to) {
        if angle < l.angle {
            l.angle = angle;
        }
    } else {
        links.push(DualLink { to, angle });
    }
}

/// Groups points whose pairwise chains stay within `tol` into clusters and
/// returns a dense label per point. With `tol == 0` only exactly equal
/// points merge.
fn cluster_points(points: &[Coord<f64>], tol: f64) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..points.len()).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    fn union(parent: &mut Vec<usize>, a: usize, b: usize) {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }

    // Hash grid keyed by floor(coord / cell); tolerance zero still uses a
    // tiny positive cell so exact duplicates land together.
    let cell = if tol > 0.0 { tol } else { 1e-9 };
    let key = |c: Coord<f64>| -> (i64, i64) {
        ((c.x / cell).floor() as i64, (c.y / cell).floor() as i64)
    };
    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> =
        std::collections::HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    for (i, &p) in points.iter().enumerate() {
        let (kx, ky) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = grid.get(&(kx + dx, ky + dy)) {
                    for &j in bucket {
                        if j > i && dist(p, points[j]) <= tol {
                            union(&mut parent, i, j);
                        }
                    }
                }
            }
        }
    }

    // Dense labels in first-appearance order for determinism.
    let mut label_of_root: std::collections::HashMap<usize, usize> =
        std::collections::HashMap::new();
    let mut labels = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let root = find(&mut parent, i);
        let next = label_of_root.len();
        labels.push(*label_of_root.entry(root).or_insert(next));
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn seg(id: &str, pts: &[(f64, f64)]) -> StreetSegment {
        StreetSegment::new(
            id,
            LineString(pts.iter().map(|&(x, y)| Coord { x, y }).collect()),
        )
        .unwrap()
    }

    #[test]
    fn straight_continuation_turns_zero_degrees() {
        let g = build_graph(
            vec![seg("1", &[(0.0, 0.0), (10.0, 0.0)]), seg("2", &[(10.0, 0.0), (20.0, 0.0)])],
            DEFAULT_SNAP_TOLERANCE,
        )
        .unwrap();
        assert_eq!(g.links[0].len(), 1);
        assert_relative_eq!(g.links[0][0].angle, 0.0, epsilon = 1e-12);
        assert_relative_eq!(g.metric_cost(0, 1), 10.0);
    }

    #[test]
    fn right_angle_turn_is_ninety_degrees() {
        let g = build_graph(
            vec![seg("1", &[(0.0, 0.0), (10.0, 0.0)]), seg("2", &[(10.0, 0.0), (10.0, 10.0)])],
            DEFAULT_SNAP_TOLERANCE,
        )
        .unwrap();
        assert_relative_eq!(g.links[0][0].angle, 90.0, epsilon = 1e-12);
    }

    #[test]
    fn doubling_back_is_a_full_turn() {
        // second segment leaves the junction along the same bearing the
        // first arrived from
        let g = build_graph(
            vec![seg("1", &[(0.0, 0.0), (10.0, 0.0)]), seg("2", &[(10.0, 0.0), (0.0, 0.1)])],
            0.0,
        )
        .unwrap();
        assert!(g.links[0][0].angle > 179.0);
    }

    #[test]
    fn turn_angle_uses_vertices_at_the_junction() {
        // polyline that bends mid-segment: only the final approach vertex
        // pair should decide the angle
        let g = build_graph(
            vec![
                seg("1", &[(0.0, 0.0), (5.0, 5.0), (10.0, 5.0)]),
                seg("2", &[(10.0, 5.0), (20.0, 5.0)]),
            ],
            DEFAULT_SNAP_TOLERANCE,
        )
        .unwrap();
        assert_relative_eq!(g.links[0][0].angle, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn endpoints_within_tolerance_snap_together() {
        let g = build_graph(
            vec![seg("1", &[(0.0, 0.0), (10.0, 0.0)]), seg("2", &[(10.05, 0.0), (20.0, 0.0)])],
            0.1,
        )
        .unwrap();
        assert_eq!(g.links[0].len(), 1);
        let g2 = build_graph(
            vec![seg("1", &[(0.0, 0.0), (10.0, 0.0)]), seg("2", &[(10.5, 0.0), (20.0, 0.0)])],
            0.1,
        )
        .unwrap();
        assert!(g2.links[0].is_empty(), "gap beyond tolerance must not snap");
    }

    #[test]
    fn parallel_double_link_keeps_smaller_angle() {
        // two segments joined at both ends: a straight pair and a return
        // loop; the 0-degree pairing at the left junction must win over the
        // pairing at the right one
        let g = build_graph(
            vec![
                seg("1", &[(0.0, 0.0), (10.0, 0.0)]),
                seg("2", &[(10.0, 0.0), (10.0, 10.0), (0.0, 10.0), (0.0, 0.0)]),
            ],
            DEFAULT_SNAP_TOLERANCE,
        )
        .unwrap();
        assert_eq!(g.links[0].len(), 1);
        assert_relative_eq!(g.links[0][0].angle, 90.0, epsilon = 1e-9);
    }

    #[test]
    fn azimuth_is_chord_bearing_from_north() {
        assert_relative_eq!(seg("n", &[(0.0, 0.0), (0.0, 5.0)]).azimuth(), 0.0);
        assert_relative_eq!(seg("e", &[(0.0, 0.0), (5.0, 0.0)]).azimuth(), 90.0);
        assert_relative_eq!(seg("s", &[(0.0, 0.0), (0.0, -5.0)]).azimuth(), 180.0);
        assert_relative_eq!(seg("w", &[(0.0, 0.0), (-5.0, 0.0)]).azimuth(), 270.0);
    }

    #[test]
    fn midpoint_of_bent_polyline_is_halfway_by_length() {
        let s = seg("1", &[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)]);
        let m = s.midpoint();
        assert_relative_eq!(m.x, 10.0, epsilon = 1e-12);
        assert_relative_eq!(m.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn crossing_without_shared_endpoint_is_not_a_junction() {
        // an overpass: the geometries cross but no endpoints meet
        let g = build_graph(
            vec![seg("1", &[(0.0, -5.0), (0.0, 5.0)]), seg("2", &[(-5.0, 0.0), (5.0, 0.0)])],
            DEFAULT_SNAP_TOLERANCE,
        )
        .unwrap();
        assert!(g.links[0].is_empty());
        assert!(g.links[1].is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = build_graph(
            vec![seg("7", &[(0.0, 0.0), (1.0, 0.0)]), seg("7", &[(1.0, 0.0), (2.0, 0.0)])],
            0.1,
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn four_way_junction_links_all_pairs() {
        let g = build_graph(
            vec![
                seg("1", &[(-10.0, 0.0), (0.0, 0.0)]),
                seg("2", &[(0.0, 0.0), (10.0, 0.0)]),
                seg("3", &[(0.0, 0.0), (0.0, 10.0)]),
                seg("4", &[(0.0, -10.0), (0.0, 0.0)]),
            ],
            DEFAULT_SNAP_TOLERANCE,
        )
        .unwrap();
        for i in 0..4 {
            assert_eq!(g.links[i].len(), 3, "segment {i} should link to the other three");
        }
    }
}
