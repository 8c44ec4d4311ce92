//! Seeded synthetic study areas. Every generator is a pure function of its
//! seed, so fixtures are reproducible across runs and machines, and each
//! carries independently computed reference counts ("oracles") that tests
//! compare against the engine's own answers.

use std::collections::BTreeMap;

use geo::{Coord, LineString, MultiPolygon, Polygon};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::geometry::{Access, AreaKind, AreaUnit, GreenRaster, GreenSpacePolygon, SpaceKind};
use crate::metrics::StreetImageRecord;
use crate::network::StreetSegment;
use crate::prescriptions::{Condition, ConditionList, GpPractice, PrescriptionRow};
use crate::stats::{binarize_treatment, build_design, DesignMatrix};
use crate::targets::PopulationCell;

/// Side length of the synthetic town.
pub const MINI_EXTENT_M: f64 = 1200.0;
/// Ward side; the town is a 6×6 ward lattice.
pub const MINI_WARD_M: f64 = 200.0;
/// Green raster resolution.
pub const MINI_RASTER_CELL_M: f64 = 2.0;
/// Population grid resolution.
pub const MINI_POP_CELL_M: f64 = 60.0;

const WARDS_PER_SIDE: usize = 6;
const RASTER_SIDE: usize = 600;
const POP_CELLS_PER_SIDE: usize = 20;
const STREET_NODES_PER_SIDE: usize = 13;
const STREET_SPACING_M: f64 = 100.0;

/// Reference counts computed directly from the generator's own bookkeeping,
/// without going through the raster/zonal machinery under test.
#[derive(Debug, Clone, Default)]
pub struct MiniCityOracle {
    /// Green raster pixels per ward, by pixel-center membership.
    pub green_pixels: BTreeMap<String, u64>,
    /// Green pixels per ward that also lie inside a public park or garden.
    pub public_green_pixels: BTreeMap<String, u64>,
    /// Raster pixels per ward (the wards tile the raster evenly).
    pub pixels_per_ward: u64,
}

/// A complete self-consistent synthetic town: areas, streets, parks, green
/// cover, street imagery, population grid, and practice-level prescribing.
#[derive(Debug, Clone)]
pub struct MiniCity {
    pub areas: Vec<AreaUnit>,
    pub segments: Vec<StreetSegment>,
    pub parks: Vec<GreenSpacePolygon>,
    pub green: GreenRaster,
    pub images: Vec<StreetImageRecord>,
    pub cells: Vec<PopulationCell>,
    pub gps: Vec<GpPractice>,
    pub prescriptions: Vec<PrescriptionRow>,
    pub conditions: Vec<ConditionList>,
    pub oracle: MiniCityOracle,
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> MultiPolygon<f64> {
    MultiPolygon(vec![Polygon::new(
        LineString::from(vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]),
        vec![],
    )])
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        if self.0[x] != x {
            let root = self.find(self.0[x]);
            self.0[x] = root;
        }
        self.0[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra] = rb;
        }
    }
}

fn connected(n_nodes: usize, edges: &[(usize, usize)]) -> bool {
    if edges.is_empty() {
        return n_nodes <= 1;
    }
    let mut dsu = Dsu::new(n_nodes);
    for &(a, b) in edges {
        dsu.union(a, b);
    }
    let root = dsu.find(edges[0].0);
    (0..n_nodes).all(|i| dsu.find(i) == root)
}

/// Axis-aligned park footprint with even-integer bounds, so no raster pixel
/// center (always odd) ever lies exactly on a park edge.
#[derive(Debug, Clone, Copy)]
struct ParkRect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    public: bool,
}

impl ParkRect {
    fn contains(&self, x: f64, y: f64) -> bool {
        self.x0 < x && x < self.x1 && self.y0 < y && y < self.y1
    }
}

/// Builds the synthetic town for a seed. The layout is a jittered street
/// grid over a 6×6 ward lattice, parks of deliberately varied size and
/// access, a painted 2 m green raster, street imagery with coverage gaps,
/// a 60 m population grid, and a dozen GP practices with prescriptions
/// drawn per condition.
pub fn mini_city(seed: u64) -> MiniCity {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // wards with covariates
    let mut areas = Vec::new();
    for r in 0..WARDS_PER_SIDE {
        for c in 0..WARDS_PER_SIDE {
            let (x0, y0) = (c as f64 * MINI_WARD_M, r as f64 * MINI_WARD_M);
            let mut area = AreaUnit::new(
                format!("w{r}{c}"),
                AreaKind::Ward,
                rect(x0, y0, x0 + MINI_WARD_M, y0 + MINI_WARD_M),
                rng.gen_range(600..2400) as f64,
            );
            area.covariates.insert("imd_score".to_string(), rng.gen_range(5.0..60.0));
            area.covariates.insert("building_density".to_string(), rng.gen_range(0.05..0.95));
            area.covariates.insert("median_age".to_string(), rng.gen_range(25.0..55.0));
            area.covariates.insert("white_percent".to_string(), rng.gen_range(30.0..95.0));
            areas.push(area);
        }
    }

    // jittered street grid, thinned while staying connected
    let n = STREET_NODES_PER_SIDE;
    let mut nodes = vec![Coord { x: 0.0, y: 0.0 }; n * n];
    for j in 0..n {
        for i in 0..n {
            let jx: f64 = rng.gen_range(-15.0..15.0);
            let jy: f64 = rng.gen_range(-15.0..15.0);
            nodes[j * n + i] = Coord {
                x: (i as f64 * STREET_SPACING_M + jx).clamp(8.0, MINI_EXTENT_M - 8.0),
                y: (j as f64 * STREET_SPACING_M + jy).clamp(8.0, MINI_EXTENT_M - 8.0),
            };
        }
    }
    let mut edges = Vec::new();
    for j in 0..n {
        for i in 0..n {
            if i + 1 < n {
                edges.push((j * n + i, j * n + i + 1));
            }
            if j + 1 < n {
                edges.push((j * n + i, (j + 1) * n + i));
            }
        }
    }
    for _ in 0..40 {
        let victim = rng.gen_range(0..edges.len());
        let mut remaining = edges.clone();
        remaining.remove(victim);
        if connected(n * n, &remaining) {
            edges = remaining;
        }
    }
    let segments: Vec<StreetSegment> = edges
        .iter()
        .enumerate()
        .map(|(idx, &(a, b))| {
            StreetSegment::new(format!("s{idx:04}"), LineString(vec![nodes[a], nodes[b]]))
                .expect("grid segments are non-degenerate")
        })
        .collect();

    // parks: one NE-sized, two WHO-sized, two small, a restricted garden,
    // and a tiny public garden; all even-integer rectangles
    let mut even_jitter = |lo: i64, hi: i64| -> f64 { (rng.gen_range(lo..=hi) * 2) as f64 };
    let base: Vec<(&str, f64, f64, f64, f64, bool, SpaceKind)> = vec![
        ("p_major", 130.0, 820.0, 160.0, 150.0, true, SpaceKind::Park),
        ("p_mid_a", 640.0, 230.0, 80.0, 80.0, true, SpaceKind::Park),
        ("p_mid_b", 1000.0, 630.0, 90.0, 70.0, true, SpaceKind::Park),
        ("p_small_a", 260.0, 440.0, 40.0, 40.0, true, SpaceKind::Park),
        ("p_small_b", 830.0, 1010.0, 50.0, 30.0, true, SpaceKind::Park),
        ("g_closed", 430.0, 50.0, 70.0, 70.0, false, SpaceKind::Garden),
        ("g_tiny", 1080.0, 240.0, 20.0, 16.0, true, SpaceKind::Garden),
    ];
    let mut park_rects = Vec::new();
    let mut parks = Vec::new();
    for (id, bx, by, w, h, public, kind) in base {
        let x0 = bx + even_jitter(-10, 10);
        let y0 = by + even_jitter(-10, 10);
        let pr = ParkRect {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
            public,
        };
        park_rects.push(pr);
        parks.push(GreenSpacePolygon {
            id: id.to_string(),
            kind,
            access: if public { Access::Public } else { Access::Restricted },
            boundary: rect(pr.x0, pr.y0, pr.x1, pr.y1),
        });
    }

    // paint the 2 m green raster: park interiors, street-side planting,
    // and scattered cover
    let mut grid = vec![false; RASTER_SIDE * RASTER_SIDE];
    let cell = MINI_RASTER_CELL_M;
    let paint = |col: i64, row: i64, grid: &mut Vec<bool>| {
        if (0..RASTER_SIDE as i64).contains(&col) && (0..RASTER_SIDE as i64).contains(&row) {
            grid[row as usize * RASTER_SIDE + col as usize] = true;
        }
    };
    for pr in &park_rects {
        let c0 = (pr.x0 / cell).floor() as i64;
        let c1 = (pr.x1 / cell).ceil() as i64;
        let r0 = (pr.y0 / cell).floor() as i64;
        let r1 = (pr.y1 / cell).ceil() as i64;
        for row in r0..=r1 {
            for col in c0..=c1 {
                let cx = (col as f64 + 0.5) * cell;
                let cy = (row as f64 + 0.5) * cell;
                if pr.contains(cx, cy) {
                    paint(col, row, &mut grid);
                }
            }
        }
    }
    for s in &segments {
        if !rng.gen_bool(0.6) {
            continue;
        }
        let line = &s.geometry.0;
        for _ in 0..rng.gen_range(1..=3) {
            let t: f64 = rng.gen_range(0.1..0.9);
            let px = line[0].x + t * (line[1].x - line[0].x);
            let py = line[0].y + t * (line[1].y - line[0].y);
            let radius = 4.0;
            let c0 = ((px - radius) / cell).floor() as i64;
            let c1 = ((px + radius) / cell).ceil() as i64;
            let r0 = ((py - radius) / cell).floor() as i64;
            let r1 = ((py + radius) / cell).ceil() as i64;
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let cx = (col as f64 + 0.5) * cell;
                    let cy = (row as f64 + 0.5) * cell;
                    if (cx - px).powi(2) + (cy - py).powi(2) <= radius * radius {
                        paint(col, row, &mut grid);
                    }
                }
            }
        }
    }
    for _ in 0..6000 {
        let col = rng.gen_range(0..RASTER_SIDE as i64);
        let row = rng.gen_range(0..RASTER_SIDE as i64);
        paint(col, row, &mut grid);
    }
    let green = GreenRaster::from_fn(
        Coord { x: 0.0, y: 0.0 },
        cell,
        RASTER_SIDE,
        RASTER_SIDE,
        |center| {
            let col = (center.x / cell) as usize;
            let row = (center.y / cell) as usize;
            grid[row * RASTER_SIDE + col]
        },
    )
    .expect("raster dimensions are valid");

    // the oracle counts straight off the painted grid: a pixel belongs to
    // the ward containing its center, and is public-green when its center
    // falls inside a public rectangle
    let mut oracle = MiniCityOracle {
        pixels_per_ward: ((MINI_WARD_M / cell) * (MINI_WARD_M / cell)) as u64,
        ..Default::default()
    };
    for area in &areas {
        oracle.green_pixels.insert(area.id.clone(), 0);
        oracle.public_green_pixels.insert(area.id.clone(), 0);
    }
    for row in 0..RASTER_SIDE {
        for col in 0..RASTER_SIDE {
            if !grid[row * RASTER_SIDE + col] {
                continue;
            }
            let cx = (col as f64 + 0.5) * cell;
            let cy = (row as f64 + 0.5) * cell;
            let wr = (cy / MINI_WARD_M) as usize;
            let wc = (cx / MINI_WARD_M) as usize;
            let id = format!("w{wr}{wc}");
            *oracle.green_pixels.get_mut(&id).unwrap() += 1;
            if park_rects.iter().any(|p| p.public && p.contains(cx, cy)) {
                *oracle.public_green_pixels.get_mut(&id).unwrap() += 1;
            }
        }
    }

    // street imagery with deliberate coverage gaps
    let mut images = Vec::new();
    let mut img_seq = 0usize;
    for s in &segments {
        if !rng.gen_bool(0.85) {
            continue;
        }
        let line = &s.geometry.0;
        for _ in 0..rng.gen_range(1..=3) {
            let t: f64 = rng.gen_range(0.05..0.95);
            let px = line[0].x + t * (line[1].x - line[0].x);
            let py = line[0].y + t * (line[1].y - line[0].y);
            images.push(StreetImageRecord::new(
                format!("img{img_seq:05}"),
                px,
                py,
                rng.gen_range(0.0..0.8),
            ));
            img_seq += 1;
        }
    }

    // population grid; a handful of empty cells
    let mut cells = Vec::new();
    for r in 0..POP_CELLS_PER_SIDE {
        for c in 0..POP_CELLS_PER_SIDE {
            let pop = if rng.gen_bool(0.05) {
                0.0
            } else {
                rng.gen_range(5..80) as f64
            };
            cells.push(PopulationCell::square(
                format!("c{r:02}_{c:02}"),
                Coord {
                    x: (c as f64 + 0.5) * MINI_POP_CELL_M,
                    y: (r as f64 + 0.5) * MINI_POP_CELL_M,
                },
                MINI_POP_CELL_M,
                pop,
            ));
        }
    }

    // practices: each registered population is spread over a few wards
    let conditions = standard_conditions();
    let mut gps = Vec::new();
    for g in 0..12 {
        let node = nodes[rng.gen_range(0..nodes.len())];
        let mut patients_by_area = BTreeMap::new();
        let n_wards = rng.gen_range(2..=5);
        for _ in 0..n_wards {
            let ward = &areas[rng.gen_range(0..areas.len())];
            *patients_by_area.entry(ward.id.clone()).or_insert(0) += rng.gen_range(40..400);
        }
        gps.push(GpPractice {
            gp_code: format!("gp{g:02}"),
            location: node,
            patients_by_area,
        });
    }
    // every ward must appear in some practice's register so per-capita
    // rates are defined everywhere
    for area in &areas {
        let covered = gps.iter().any(|gp| gp.patients_by_area.contains_key(&area.id));
        if !covered {
            let g = rng.gen_range(0..gps.len());
            gps[g]
                .patients_by_area
                .insert(area.id.clone(), rng.gen_range(40..400));
        }
    }

    let mut prescriptions = Vec::new();
    for gp in &gps {
        for list in &conditions {
            if list.condition == Condition::Total {
                continue;
            }
            for _ in 0..rng.gen_range(2..=8) {
                let prefix = list
                    .bnf_codes
                    .iter()
                    .nth(rng.gen_range(0..list.bnf_codes.len()))
                    .unwrap();
                prescriptions.push(PrescriptionRow {
                    gp_code: gp.gp_code.clone(),
                    bnf_code: format!("{prefix}{:04}", rng.gen_range(0..10_000)),
                    items: rng.gen_range(1..20),
                    quantity: rng.gen_range(10..80),
                    cost: rng.gen_range(200..4000) as f64 / 100.0,
                });
            }
        }
        // rows outside every condition list, visible only in the total
        for _ in 0..rng.gen_range(1..=4) {
            prescriptions.push(PrescriptionRow {
                gp_code: gp.gp_code.clone(),
                bnf_code: format!("11{:06}", rng.gen_range(0..1_000_000)),
                items: rng.gen_range(1..10),
                quantity: rng.gen_range(5..40),
                cost: rng.gen_range(100..2000) as f64 / 100.0,
            });
        }
    }

    MiniCity {
        areas,
        segments,
        parks,
        green,
        images,
        cells,
        gps,
        prescriptions,
        conditions,
        oracle,
    }
}

/// Compact per-condition BNF prefixes for synthetic prescribing.
pub fn standard_conditions() -> Vec<ConditionList> {
    vec![
        ConditionList::new(Condition::Diabetes, ["0601".to_string()]),
        ConditionList::new(Condition::Hypertension, ["0205".to_string()]),
        ConditionList::new(Condition::Asthma, ["0301".to_string(), "0302".to_string()]),
        ConditionList::new(Condition::Depression, ["0403".to_string()]),
        ConditionList::new(Condition::Anxiety, ["0402".to_string()]),
        ConditionList::new(Condition::Opioids, ["0407".to_string()]),
        ConditionList::new(Condition::Total, []),
    ]
}

/// Small random street network for oracle comparisons: a jittered lattice
/// with random edges kept, so graphs vary in shape, density, and
/// connectedness while staying planar-ish and well-conditioned.
pub fn random_network(seed: u64, max_segments: usize) -> Vec<StreetSegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = rng.gen_range(3..=6);
    let ny = rng.gen_range(3..=6);
    let spacing = rng.gen_range(60.0..140.0);
    let mut nodes = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            nodes.push(Coord {
                x: i as f64 * spacing + rng.gen_range(-0.25 * spacing..0.25 * spacing),
                y: j as f64 * spacing + rng.gen_range(-0.25 * spacing..0.25 * spacing),
            });
        }
    }
    let keep = rng.gen_range(0.55..0.95);
    let mut segments = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let a = j * nx + i;
            for b in [
                (i + 1 < nx).then(|| j * nx + i + 1),
                (j + 1 < ny).then(|| (j + 1) * nx + i),
            ]
            .into_iter()
            .flatten()
            {
                if segments.len() >= max_segments {
                    break;
                }
                if rng.gen_bool(keep) {
                    segments.push(
                        StreetSegment::new(
                            format!("s{:03}", segments.len()),
                            LineString(vec![nodes[a], nodes[b]]),
                        )
                        .expect("lattice segments are non-degenerate"),
                    );
                }
            }
        }
    }
    if segments.is_empty() {
        segments.push(
            StreetSegment::new("s000", LineString(vec![nodes[0], nodes[1]])).unwrap(),
        );
    }
    segments
}

/// Large jittered street lattice for throughput tests; produces
/// `2·nodes_x·nodes_y − nodes_x − nodes_y` segments.
pub fn jittered_grid(
    nodes_x: usize,
    nodes_y: usize,
    spacing: f64,
    jitter: f64,
    seed: u64,
) -> Vec<StreetSegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(nodes_x * nodes_y);
    for j in 0..nodes_y {
        for i in 0..nodes_x {
            nodes.push(Coord {
                x: i as f64 * spacing + rng.gen_range(-jitter..jitter),
                y: j as f64 * spacing + rng.gen_range(-jitter..jitter),
            });
        }
    }
    let mut segments =
        Vec::with_capacity(2 * nodes_x * nodes_y);
    for j in 0..nodes_y {
        for i in 0..nodes_x {
            let a = j * nodes_x + i;
            if i + 1 < nodes_x {
                segments.push(
                    StreetSegment::new(
                        format!("s{:06}", segments.len()),
                        LineString(vec![nodes[a], nodes[a + 1]]),
                    )
                    .expect("lattice segments are non-degenerate"),
                );
            }
            if j + 1 < nodes_y {
                segments.push(
                    StreetSegment::new(
                        format!("s{:06}", segments.len()),
                        LineString(vec![nodes[a], nodes[a + nodes_x]]),
                    )
                    .expect("lattice segments are non-degenerate"),
                );
            }
        }
    }
    segments
}

/// Synthetic area table for effect-recovery experiments: four confounders
/// drive both a greenery score (hence the treatment split) and the outcome;
/// `delta` is then added to treated outcomes. Returns the design (outcome
/// already on the unit scale) and the treatment flags.
pub fn effect_study(n: usize, delta: f64, seed: u64) -> (DesignMatrix, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut imd = Vec::with_capacity(n);
    let mut density = Vec::with_capacity(n);
    let mut age = Vec::with_capacity(n);
    let mut white = Vec::with_capacity(n);
    let mut greenery = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    let side = (n as f64).sqrt().ceil() as usize;
    for i in 0..n {
        let im: f64 = rng.gen_range(5.0..60.0);
        let bd: f64 = rng.gen_range(0.05..0.95);
        let ag: f64 = rng.gen_range(25.0..55.0);
        let wh: f64 = rng.gen_range(30.0..95.0);
        // confounded assignment: leafier places skew less deprived, less
        // built-up, older
        let g = -0.012 * im - 0.35 * bd + 0.006 * ag + 0.002 * wh
            + 0.25 * rng.sample::<f64, _>(StandardNormal);
        // outcome depends on the same confounders plus noise
        let y = (0.45 + 0.004 * im - 0.08 * bd - 0.002 * ag - 0.0005 * wh
            + 0.01 * rng.sample::<f64, _>(StandardNormal))
        .clamp(0.0, 1.0);
        imd.push(Some(im));
        density.push(Some(bd));
        age.push(Some(ag));
        white.push(Some(wh));
        greenery.push(g);
        outcome.push(y);
        coords.push(((i % side) as f64 * 100.0, (i / side) as f64 * 100.0));
    }
    let treatment = binarize_treatment(&greenery);
    for i in 0..n {
        if treatment[i] {
            outcome[i] = (outcome[i] + delta).clamp(0.0, 1.0);
        }
    }
    let ids: Vec<String> = (0..n).map(|i| format!("a{i:03}")).collect();
    let outcome: Vec<Option<f64>> = outcome.into_iter().map(Some).collect();
    let columns = vec![
        ("imd_score".to_string(), imd),
        ("building_density".to_string(), density),
        ("median_age".to_string(), age),
        ("white_percent".to_string(), white),
    ];
    let mut warnings = Vec::new();
    let data = build_design(&ids, &outcome, &columns, &coords, &mut warnings)
        .expect("generated table is complete");
    (data, treatment)
}
