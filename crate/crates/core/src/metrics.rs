//! Per-area greenery scores: total green cover, on-road greenery measured
//! from the green-cover raster and from street-level imagery, and off-road
//! greenery. On-road aggregation weights each street segment by its
//! floored-log choice score, so busier through-routes count for more.

use geo::{BoundingRect, Coord, Rect};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::ChoiceScores;
use crate::error::{Error, Result};
use crate::geometry::{
    bounds, buffer_polyline, contains_point, rasterize_fraction, Access, AreaUnit, Buffer,
    GreenRaster, GreenSpacePolygon,
};
use crate::network::StreetSegment;

/// One street-level photograph with its measured green-pixel share.
#[derive(Debug, Clone, PartialEq)]
pub struct StreetImageRecord {
    pub image_id: String,
    /// Camera position in projected meters.
    pub location: Coord<f64>,
    /// Fraction of the image's pixels classified as vegetation.
    pub green_fraction: f64,
}

impl StreetImageRecord {
    pub fn new(image_id: impl Into<String>, x: f64, y: f64, green_fraction: f64) -> Self {
        StreetImageRecord {
            image_id: image_id.into(),
            location: Coord { x, y },
            green_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.location.x.is_finite() || !self.location.y.is_finite() {
            return Err(Error::domain(format!(
                "image {}: non-finite location",
                self.image_id
            )));
        }
        if !(0.0..=1.0).contains(&self.green_fraction) {
            return Err(Error::domain(format!(
                "image {}: green fraction {} outside [0, 1]",
                self.image_id, self.green_fraction
            )));
        }
        Ok(())
    }
}

/// Per-area greenery profile. Imagery scores and accessibility shares stay
/// `None` where the inputs cannot support them (no photographed segments,
/// zero population); missing is deliberately distinct from zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreeneryVector {
    pub area_id: String,
    pub g_total_ndvi: f64,
    pub g_onroad_ndvi: f64,
    pub g_onroad_gsv: Option<f64>,
    pub g_offroad: f64,
    pub who_share: Option<f64>,
    pub esa_who_share: Option<f64>,
    pub ne_share: Option<f64>,
}

impl GreeneryVector {
    /// Every present score must sit in the unit interval.
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if v.is_finite() && (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::domain(format!(
                    "area {}: {name} = {v} outside [0, 1]",
                    self.area_id
                )))
            }
        };
        unit("g_total_ndvi", self.g_total_ndvi)?;
        unit("g_onroad_ndvi", self.g_onroad_ndvi)?;
        unit("g_offroad", self.g_offroad)?;
        for (name, v) in [
            ("g_onroad_gsv", self.g_onroad_gsv),
            ("who_share", self.who_share),
            ("esa_who_share", self.esa_who_share),
            ("ne_share", self.ne_share),
        ] {
            if let Some(v) = v {
                unit(name, v)?;
            }
        }
        Ok(())
    }
}

/// Denominator of the per-segment raster score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NdviDenominator {
    /// Divide buffer green pixels by the containing area's pixel count (the
    /// published formulation; couples segment scores to area size).
    #[default]
    AreaPixels,
    /// Divide by the segment's own buffer pixel count instead.
    BufferPixels,
}

/// How a segment folds its images into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GsvMode {
    /// Average the image green fractions per segment.
    #[default]
    MeanPerSegment,
    /// Sum them, as the printed imagery equation reads.
    SumPerSegment,
}

/// Knobs for the greenery scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricConfig {
    pub ndvi_denominator: NdviDenominator,
    pub gsv_mode: GsvMode,
}

/// Street-network context shared by every area's scores: one buffer per
/// segment with its pixel counts against the public-green raster, plus the
/// buffered/unbuffered split of public green, all precomputed once per grid.
#[derive(Debug, Clone)]
pub struct RoadContext {
    ids: Vec<String>,
    /// Arc-length midpoints; a segment belongs to the area containing its
    /// midpoint, so each segment contributes to exactly one area.
    midpoints: Vec<Coord<f64>>,
    buffers: Vec<Buffer>,
    buffer_bounds: Vec<Rect<f64>>,
    /// Public-green pixels inside each segment's whole buffer.
    green_in_buffer: Vec<u64>,
    /// All grid pixels inside each segment's buffer.
    pixels_in_buffer: Vec<u64>,
    /// Public green on pixels covered by at least one buffer.
    on_green: GreenRaster,
    /// Public green on pixels covered by no buffer.
    off_green: GreenRaster,
    public_green: GreenRaster,
    half_width: f64,
}

impl RoadContext {
    /// Buffers every segment at `half_width` meters and tallies its pixels
    /// against `public_green` (see [`public_greenery`]).
    pub fn new(
        segments: &[StreetSegment],
        half_width: f64,
        public_green: &GreenRaster,
    ) -> Result<Self> {
        if !half_width.is_finite() || half_width <= 0.0 {
            return Err(Error::config(format!(
                "buffer half-width must be positive, got {half_width}"
            )));
        }
        let per: Vec<(Buffer, crate::geometry::RegionMask)> = segments
            .par_iter()
            .map(|s| {
                let buf = buffer_polyline(&s.geometry, half_width)
                    .map_err(|e| Error::domain(format!("segment {}: {e}", s.id)))?;
                let mask = public_green.mask_unchecked(&buf.geometry);
                Ok((buf, mask))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut union = GreenRaster::new(
            public_green.origin(),
            public_green.cell_size(),
            public_green.width(),
            public_green.height(),
        )
        .expect("source raster dimensions are valid");
        let mut buffers = Vec::with_capacity(per.len());
        let mut buffer_bounds = Vec::with_capacity(per.len());
        let mut green_in_buffer = Vec::with_capacity(per.len());
        let mut pixels_in_buffer = Vec::with_capacity(per.len());
        for (buf, mask) in per {
            green_in_buffer.push(public_green.count_in(&mask));
            pixels_in_buffer.push(mask.total);
            union.set_in(&mask);
            buffer_bounds.push(bounds(&buf.geometry)?);
            buffers.push(buf);
        }
        let on_green = public_green.and(&union).expect("union shares the source grid");
        let off_green = public_green
            .and_not(&union)
            .expect("union shares the source grid");

        Ok(RoadContext {
            ids: segments.iter().map(|s| s.id.clone()).collect(),
            midpoints: segments.iter().map(|s| s.midpoint()).collect(),
            buffers,
            buffer_bounds,
            green_in_buffer,
            pixels_in_buffer,
            on_green,
            off_green,
            public_green: public_green.clone(),
            half_width,
        })
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn public_green(&self) -> &GreenRaster {
        &self.public_green
    }

    pub fn buffer(&self, i: usize) -> &Buffer {
        &self.buffers[i]
    }

    /// Indices of segments whose midpoint lies inside the area.
    pub fn segments_in(&self, area: &AreaUnit) -> Vec<usize> {
        let bb = match area.boundary.bounding_rect() {
            Some(bb) => bb,
            None => return Vec::new(),
        };
        (0..self.midpoints.len())
            .filter(|&i| {
                let m = self.midpoints[i];
                m.x >= bb.min().x
                    && m.x <= bb.max().x
                    && m.y >= bb.min().y
                    && m.y <= bb.max().y
                    && contains_point(&area.boundary, m)
            })
            .collect()
    }

    /// Green fractions of the images inside each segment's buffer. An image
    /// sitting in several overlapping buffers contributes to each of them;
    /// images outside every buffer are dropped.
    pub fn assign_images(&self, images: &[StreetImageRecord]) -> Vec<Vec<f64>> {
        let mut per = vec![Vec::new(); self.buffers.len()];
        for img in images {
            for i in 0..self.buffers.len() {
                let bb = &self.buffer_bounds[i];
                if img.location.x < bb.min().x
                    || img.location.x > bb.max().x
                    || img.location.y < bb.min().y
                    || img.location.y > bb.max().y
                {
                    continue;
                }
                if contains_point(&self.buffers[i].geometry, img.location) {
                    per[i].push(img.green_fraction);
                }
            }
        }
        per
    }

    fn check_weights(&self, weights: &ChoiceScores) -> Result<()> {
        if weights.w.len() != self.len() {
            return Err(Error::config(format!(
                "choice scores cover {} segments but the road context holds {}",
                weights.w.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// Green share of the area: green pixels with centers inside the boundary
/// over all pixels with centers inside.
pub fn total_ndvi(area: &AreaUnit, raster: &GreenRaster) -> Result<f64> {
    let f = rasterize_fraction(raster, &area.boundary)?;
    if f.no_pixels {
        return Err(Error::domain(format!(
            "area {}: boundary covers no raster pixels (outside the raster extent?)",
            area.id
        )));
    }
    Ok(f.value)
}

/// Restricts green cover to pixels inside publicly accessible parks and
/// gardens. Polygons tagged restricted are ignored.
pub fn public_greenery(raster: &GreenRaster, parks: &[GreenSpacePolygon]) -> GreenRaster {
    let mut cover = GreenRaster::new(
        raster.origin(),
        raster.cell_size(),
        raster.width(),
        raster.height(),
    )
    .expect("source raster dimensions are valid");
    for park in parks.iter().filter(|p| p.access == Access::Public) {
        cover.burn(&park.boundary);
    }
    raster.and(&cover).expect("cover shares the source grid")
}

/// Importance-weighted mean of per-segment scores. Zero total weight falls
/// back to the plain mean so unweighted networks still aggregate; `None`
/// only when no segments are offered at all.
fn weighted_mean(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let wsum: f64 = pairs.iter().map(|(w, _)| w).sum();
    if wsum > 0.0 {
        Some(pairs.iter().map(|(w, g)| w * g).sum::<f64>() / wsum)
    } else {
        Some(pairs.iter().map(|(_, g)| g).sum::<f64>() / pairs.len() as f64)
    }
}

/// Raster-based on-road score of an area.
///
/// Every segment whose midpoint falls in the area contributes
/// `g(i) = public-green pixels inside its buffer / pixels in the area`
/// (buffer's own pixels under [`NdviDenominator::BufferPixels`]), combined
/// as `Σ w(i)·g(i) / Σ w(i)`. An area containing no segment midpoint scores
/// 0 and leaves a coverage warning.
pub fn onroad_ndvi(
    area: &AreaUnit,
    ctx: &RoadContext,
    weights: &ChoiceScores,
    config: &MetricConfig,
    warnings: &mut Vec<String>,
) -> Result<f64> {
    ctx.check_weights(weights)?;
    let area_mask = ctx.public_green.mask(&area.boundary)?;
    if area_mask.total == 0 {
        return Err(Error::domain(format!(
            "area {}: boundary covers no raster pixels (outside the raster extent?)",
            area.id
        )));
    }
    let selected = ctx.segments_in(area);
    if selected.is_empty() {
        warnings.push(format!(
            "area {}: no street segment midpoint inside the boundary; on-road score set to 0",
            area.id
        ));
        return Ok(0.0);
    }
    let mut pairs = Vec::with_capacity(selected.len());
    for i in selected {
        let denom = match config.ndvi_denominator {
            NdviDenominator::AreaPixels => area_mask.total,
            NdviDenominator::BufferPixels => ctx.pixels_in_buffer[i],
        };
        let g = if denom == 0 {
            warnings.push(format!(
                "area {}: segment {} buffer covers no raster pixels; scored 0",
                area.id, ctx.ids[i]
            ));
            0.0
        } else {
            ctx.green_in_buffer[i] as f64 / denom as f64
        };
        pairs.push((weights.w[i], g));
    }
    Ok(weighted_mean(&pairs).expect("selection is non-empty"))
}

/// Imagery-based on-road score: image green fractions folded per segment
/// according to [`GsvMode`], then aggregated like [`onroad_ndvi`]. Segments
/// without any image drop out of the mean; an area whose segments carry no
/// imagery at all yields `None` rather than 0.
pub fn onroad_gsv(
    area: &AreaUnit,
    ctx: &RoadContext,
    images: &[StreetImageRecord],
    weights: &ChoiceScores,
    config: &MetricConfig,
    warnings: &mut Vec<String>,
) -> Result<Option<f64>> {
    ctx.check_weights(weights)?;
    for img in images {
        img.validate()?;
    }
    let selected = ctx.segments_in(area);
    if selected.is_empty() {
        warnings.push(format!(
            "area {}: no street segment midpoint inside the boundary; imagery score missing",
            area.id
        ));
        return Ok(None);
    }
    let per_segment = ctx.assign_images(images);
    let mut pairs = Vec::new();
    for i in selected {
        let fractions = &per_segment[i];
        if fractions.is_empty() {
            continue;
        }
        let score = match config.gsv_mode {
            GsvMode::MeanPerSegment => {
                fractions.iter().sum::<f64>() / fractions.len() as f64
            }
            GsvMode::SumPerSegment => fractions.iter().sum::<f64>(),
        };
        pairs.push((weights.w[i], score));
    }
    match weighted_mean(&pairs) {
        Some(v) => Ok(Some(v)),
        None => {
            warnings.push(format!(
                "area {}: no imagery on any of its segments; imagery score missing",
                area.id
            ));
            Ok(None)
        }
    }
}

/// Share of the area's pixels that are public green outside every buffer.
pub fn offroad(area: &AreaUnit, ctx: &RoadContext) -> Result<f64> {
    let mask = ctx.public_green.mask(&area.boundary)?;
    if mask.total == 0 {
        return Err(Error::domain(format!(
            "area {}: boundary covers no raster pixels (outside the raster extent?)",
            area.id
        )));
    }
    Ok(ctx.off_green.count_in(&mask) as f64 / mask.total as f64)
}

/// Exact pixel split of an area's public green into buffered and unbuffered
/// parts; the two always partition the public-green count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decomposition {
    pub onroad_pixels: u64,
    pub offroad_pixels: u64,
    pub public_green_pixels: u64,
}

pub fn decomposition_counts(area: &AreaUnit, ctx: &RoadContext) -> Result<Decomposition> {
    let mask = ctx.public_green.mask(&area.boundary)?;
    Ok(Decomposition {
        onroad_pixels: ctx.on_green.count_in(&mask),
        offroad_pixels: ctx.off_green.count_in(&mask),
        public_green_pixels: ctx.public_green.count_in(&mask),
    })
}

/// All raster- and imagery-based scores for one area; accessibility shares
/// are filled in by a later pass. Non-fatal oddities (no segments, missing
/// imagery, on-road exceeding the total share because buffers spill past
/// the boundary) are appended to `warnings`.
pub fn greenery_vector(
    area: &AreaUnit,
    green_cover: &GreenRaster,
    ctx: &RoadContext,
    images: &[StreetImageRecord],
    weights: &ChoiceScores,
    config: &MetricConfig,
    warnings: &mut Vec<String>,
) -> Result<GreeneryVector> {
    let vector = GreeneryVector {
        area_id: area.id.clone(),
        g_total_ndvi: total_ndvi(area, green_cover)?,
        g_onroad_ndvi: onroad_ndvi(area, ctx, weights, config, warnings)?,
        g_onroad_gsv: onroad_gsv(area, ctx, images, weights, config, warnings)?,
        g_offroad: offroad(area, ctx)?,
        who_share: None,
        esa_who_share: None,
        ne_share: None,
    };
    // Buffer green is a subset of area green only while buffers stay inside
    // the boundary; segments hugging the edge can push past it, which is
    // worth flagging but not fatal.
    if vector.g_onroad_ndvi > vector.g_total_ndvi + 1e-12 {
        warnings.push(format!(
            "area {}: on-road score {:.6} exceeds the total green share {:.6}; buffers extend past the area boundary",
            area.id, vector.g_onroad_ndvi, vector.g_total_ndvi
        ));
    }
    vector.validate()?;
    Ok(vector)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::ChoiceMode;
    use approx::assert_relative_eq;
    use geo::{LineString, MultiPolygon, Polygon};

    fn raster(width: usize, height: usize) -> GreenRaster {
        GreenRaster::new(Coord { x: 0.0, y: 0.0 }, 1.0, width, height).unwrap()
    }

    fn rect_poly(x0: f64, y0: f64, x1: f64, y1: f64) -> MultiPolygon<f64> {
        MultiPolygon(vec![Polygon::new(
            LineString::from(vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]),
            vec![],
        )])
    }

    fn area(id: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> AreaUnit {
        AreaUnit::new(id, crate::geometry::AreaKind::Ward, rect_poly(x0, y0, x1, y1), 100.0)
    }

    fn seg(id: &str, a: (f64, f64), b: (f64, f64)) -> StreetSegment {
        StreetSegment::new(id, LineString::from(vec![a, b])).unwrap()
    }

    fn scores(w: Vec<f64>) -> ChoiceScores {
        ChoiceScores {
            c: vec![0.0; w.len()],
            w,
            radius: f64::INFINITY,
            mode: ChoiceMode::Topological,
        }
    }

    fn park(id: &str, x0: f64, y0: f64, x1: f64, y1: f64, access: Access) -> GreenSpacePolygon {
        GreenSpacePolygon {
            id: id.to_string(),
            kind: crate::geometry::SpaceKind::Park,
            access,
            boundary: rect_poly(x0, y0, x1, y1),
        }
    }

    /// Three horizontal 16 m segments inside a 20x20 area, 2x16-pixel flat
    /// buffers, with 8/16/24 green pixels painted into them respectively.
    fn three_segment_fixture() -> (AreaUnit, GreenRaster, Vec<StreetSegment>) {
        let mut pg = raster(60, 30);
        let segments = vec![
            seg("a", (2.0, 3.0), (18.0, 3.0)),
            seg("b", (2.0, 8.0), (18.0, 8.0)),
            seg("c", (2.0, 13.0), (18.0, 13.0)),
        ];
        // buffer of segment at y covers rows y-1 and y, cols 2..18
        for (row, n) in [(2usize, 8usize), (7, 16), (12, 24)] {
            for k in 0..n {
                pg.set(row + k / 16, 2 + k % 16, true);
            }
        }
        (area("w1", 0.0, 0.0, 20.0, 20.0), pg, segments)
    }

    #[test]
    fn total_fractions() {
        let mut r = raster(10, 10);
        for row in 0..5 {
            for col in 0..10 {
                r.set(row, col, true);
            }
        }
        let a = area("half", 0.0, 0.0, 10.0, 10.0);
        assert_eq!(total_ndvi(&a, &r).unwrap(), 0.5);

        let mut all = raster(10, 10);
        for row in 0..10 {
            for col in 0..10 {
                all.set(row, col, true);
            }
        }
        assert_eq!(total_ndvi(&a, &all).unwrap(), 1.0);
    }

    #[test]
    fn total_outside_raster_rejected() {
        let r = raster(10, 10);
        let a = area("far", 100.0, 100.0, 110.0, 110.0);
        assert!(matches!(total_ndvi(&a, &r), Err(Error::Domain(_))));
    }

    #[test]
    fn public_greenery_filters_parks() {
        let mut r = raster(10, 10);
        for row in 0..10 {
            for col in 0..10 {
                r.set(row, col, true);
            }
        }
        // no parks: nothing qualifies
        assert_eq!(public_greenery(&r, &[]).count_ones(), 0);

        // park covering the whole extent: raster unchanged
        let whole = park("p", 0.0, 0.0, 10.0, 10.0, Access::Public);
        let masked = public_greenery(&r, &[whole]);
        assert_eq!(masked.count_ones(), 100);

        // public west half plus restricted east half: only the west counts
        let west = park("w", 0.0, 0.0, 5.0, 10.0, Access::Public);
        let east = park("e", 5.0, 0.0, 10.0, 10.0, Access::Restricted);
        let masked = public_greenery(&r, &[west, east]);
        assert_eq!(masked.count_ones(), 50);
        assert!(masked.get(0, 0));
        assert!(!masked.get(0, 9));
    }

    #[test]
    fn weighted_mean_hand_example() {
        // ln 9 = 2 ln 3, so the weights reduce to 1:2:0 and the mean is
        // (1*0.10 + 2*0.40) / 3 = 0.30
        let pairs = [(3.0f64.ln(), 0.10), (9.0f64.ln(), 0.40), (0.0, 0.99)];
        assert_relative_eq!(weighted_mean(&pairs).unwrap(), 0.30, max_relative = 1e-12);
    }

    #[test]
    fn weighted_mean_zero_weight_excludes() {
        let pairs = [(3.0f64.ln(), 0.2), (0.0, 0.9)];
        assert_relative_eq!(weighted_mean(&pairs).unwrap(), 0.2, max_relative = 1e-12);
    }

    #[test]
    fn weighted_mean_zero_total_falls_back() {
        let pairs = [(0.0, 0.2), (0.0, 0.4)];
        assert_relative_eq!(weighted_mean(&pairs).unwrap(), 0.3, max_relative = 1e-12);
        assert!(weighted_mean(&[]).is_none());
    }

    #[test]
    fn onroad_weighted_over_area_pixels() {
        let (a, pg, segments) = three_segment_fixture();
        let ctx = RoadContext::new(&segments, 1.0, &pg).unwrap();
        let mut warnings = Vec::new();
        // buffers hold 8, 16, 24 green pixels over a 400-pixel area
        let w = vec![3.0f64.ln(), 9.0f64.ln(), 0.0];
        let got = onroad_ndvi(&a, &ctx, &scores(w), &MetricConfig::default(), &mut warnings).unwrap();
        // (1*0.02 + 2*0.04) / 3
        assert_relative_eq!(got, 0.1 / 3.0, max_relative = 1e-12);
        assert!(warnings.is_empty());

        // equal weights and equal per-segment scores collapse to that score
        let mut even = pg.clone();
        for (row, n) in [(2usize, 8usize), (7, 16), (12, 24)] {
            for k in 0..n {
                even.set(row + k / 16, 2 + k % 16, false);
            }
        }
        for row in [2usize, 7, 12] {
            for k in 0..8 {
                even.set(row, 2 + k, true);
            }
        }
        let ctx = RoadContext::new(&segments, 1.0, &even).unwrap();
        let got = onroad_ndvi(
            &a,
            &ctx,
            &scores(vec![2.0f64.ln(); 3]),
            &MetricConfig::default(),
            &mut warnings,
        )
        .unwrap();
        assert_relative_eq!(got, 8.0 / 400.0, max_relative = 1e-12);
    }

    #[test]
    fn onroad_zero_total_weight_falls_back() {
        let (a, pg, segments) = three_segment_fixture();
        let ctx = RoadContext::new(&segments, 1.0, &pg).unwrap();
        let mut warnings = Vec::new();
        let got = onroad_ndvi(
            &a,
            &ctx,
            &scores(vec![0.0; 3]),
            &MetricConfig::default(),
            &mut warnings,
        )
        .unwrap();
        // plain mean of 0.02, 0.04, 0.06
        assert_relative_eq!(got, 0.04, max_relative = 1e-12);
    }

    #[test]
    fn onroad_buffer_pixel_denominator() {
        let (a, pg, segments) = three_segment_fixture();
        let ctx = RoadContext::new(&segments, 1.0, &pg).unwrap();
        let mut warnings = Vec::new();
        let cfg = MetricConfig {
            ndvi_denominator: NdviDenominator::BufferPixels,
            ..MetricConfig::default()
        };
        let w = vec![3.0f64.ln(), 9.0f64.ln(), 0.0];
        let got = onroad_ndvi(&a, &ctx, &scores(w), &cfg, &mut warnings).unwrap();
        // per-buffer scores 8/32 and 16/32 weighted 1:2
        assert_relative_eq!(got, (0.25 + 2.0 * 0.5) / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn onroad_no_segments_scores_zero_with_warning() {
        let (_, pg, segments) = three_segment_fixture();
        let ctx = RoadContext::new(&segments, 1.0, &pg).unwrap();
        let empty = area("w2", 30.0, 20.0, 45.0, 28.0);
        let mut warnings = Vec::new();
        let got = onroad_ndvi(
            &empty,
            &ctx,
            &scores(vec![1.0; 3]),
            &MetricConfig::default(),
            &mut warnings,
        )
        .unwrap();
        assert_eq!(got, 0.0);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("no street segment midpoint"));
    }

    #[test]
    fn scaling_weights_leaves_scores() {
        let (a, pg, segments) = three_segment_fixture();
        let ctx = RoadContext::new(&segments, 1.0, &pg).unwrap();
        let mut warnings = Vec::new();
        let w = vec![3.0f64.ln(), 9.0f64.ln(), 0.7];
        let base = onroad_ndvi(&a, &ctx, &scores(w.clone()), &MetricConfig::default(), &mut warnings)
            .unwrap();
        for lambda in [1e-6, 0.5, 7.3, 1e9] {
            let scaled: Vec<f64> = w.iter().map(|x| x * lambda).collect();
            let got =
                onroad_ndvi(&a, &ctx, &scores(scaled), &MetricConfig::default(), &mut warnings)
                    .unwrap();
            assert_relative_eq!(got, base, max_relative = 1e-12);
        }
    }

    #[test]
    fn offroad_no_buffers_equals_public_fraction() {
        let (a, pg, _) = three_segment_fixture();
        let ctx = RoadContext::new(&[], 1.0, &pg).unwrap();
        let got = offroad(&a, &ctx).unwrap();
        assert_eq!(got, total_ndvi(&a, &pg).unwrap());
        assert_eq!(got, 48.0 / 400.0);
    }

    #[test]
    fn offroad_fully_buffered_area_is_zero() {
        let (a, pg, _) = three_segment_fixture();
        // one fat buffer swallowing the whole area
        let road = vec![seg("trunk", (0.0, 10.0), (20.0, 10.0))];
        let ctx = RoadContext::new(&road, 12.0, &pg).unwrap();
        assert_eq!(offroad(&a, &ctx).unwrap(), 0.0);
    }

    #[test]
    fn decomposition_partitions_public_green() {
        let mut pg = raster(40, 40);
        // deterministic scatter, coprime stride
        for k in 0..500u64 {
            let p = (k * 37) % 1600;
            pg.set((p / 40) as usize, (p % 40) as usize, true);
        }
        let segments = vec![
            seg("a", (5.0, 5.0), (35.0, 7.0)),
            seg("b", (10.0, 30.0), (30.0, 12.0)),
        ];
        let ctx = RoadContext::new(&segments, 2.5, &pg).unwrap();
        for a in [
            area("full", 0.0, 0.0, 40.0, 40.0),
            area("west", 0.0, 0.0, 20.0, 40.0),
            area("mid", 8.0, 8.0, 31.0, 29.0),
        ] {
            let d = decomposition_counts(&a, &ctx).unwrap();
            assert_eq!(d.onroad_pixels + d.offroad_pixels, d.public_green_pixels);
            assert!(d.public_green_pixels > 0);
        }
    }

    #[test]
    fn wider_buffers_grow_onroad_shrink_offroad() {
        let mut pg = raster(40, 40);
        for k in 0..500u64 {
            let p = (k * 37) % 1600;
            pg.set((p / 40) as usize, (p % 40) as usize, true);
        }
        let segments = vec![
            seg("a", (5.0, 5.0), (35.0, 7.0)),
            seg("b", (10.0, 30.0), (30.0, 12.0)),
        ];
        let a = area("full", 0.0, 0.0, 40.0, 40.0);
        let narrow = decomposition_counts(&a, &RoadContext::new(&segments, 1.5, &pg).unwrap()).unwrap();
        let wide = decomposition_counts(&a, &RoadContext::new(&segments, 4.0, &pg).unwrap()).unwrap();
        assert!(wide.onroad_pixels >= narrow.onroad_pixels);
        assert!(wide.offroad_pixels <= narrow.offroad_pixels);
    }

    #[test]
    fn gsv_mean_and_sum_modes() {
        let (a, pg, segments) = three_segment_fixture();
        let ctx = RoadContext::new(&segments, 1.0, &pg).unwrap();
        let images = vec![
            StreetImageRecord::new("i1", 5.0, 3.0, 0.2),
            StreetImageRecord::new("i2", 9.0, 3.0, 0.4),
        ];
        let mut warnings = Vec::new();
        // only segment "a" carries imagery, so the weighted mean is its score
        let got = onroad_gsv(
            &a,
            &ctx,
            &images,
            &scores(vec![1.0, 5.0, 2.0]),
            &MetricConfig::default(),
            &mut warnings,
        )
        .unwrap();
        assert_relative_eq!(got.unwrap(), 0.3, max_relative = 1e-12);

        let sum_cfg = MetricConfig {
            gsv_mode: GsvMode::SumPerSegment,
            ..MetricConfig::default()
        };
        let got = onroad_gsv(&a, &ctx, &images, &scores(vec![1.0, 5.0, 2.0]), &sum_cfg, &mut warnings)
            .unwrap();
        assert_relative_eq!(got.unwrap(), 0.6, max_relative = 1e-12);
    }

    #[test]
    fn gsv_one_image_per_segment_equal_weights() {
        let (a, pg, segments) = three_segment_fixture();
        let ctx = RoadContext::new(&segments, 1.0, &pg).unwrap();
        let images = vec![
            StreetImageRecord::new("i1", 5.0, 3.0, 0.25),
            StreetImageRecord::new("i2", 5.0, 8.0, 0.25),
            StreetImageRecord::new("i3", 5.0, 13.0, 0.25),
        ];
        let mut warnings = Vec::new();
        let got = onroad_gsv(
            &a,
            &ctx,
            &images,
            &scores(vec![1.0; 3]),
            &MetricConfig::default(),
            &mut warnings,
        )
        .unwrap();
        assert_relative_eq!(got.unwrap(), 0.25, max_relative = 1e-12);
    }

    #[test]
    fn gsv_missing_everywhere_is_none() {
        let (a, pg, segments) = three_segment_fixture();
        let ctx = RoadContext::new(&segments, 1.0, &pg).unwrap();
        let mut warnings = Vec::new();
        let got = onroad_gsv(
            &a,
            &ctx,
            &[],
            &scores(vec![1.0; 3]),
            &MetricConfig::default(),
            &mut warnings,
        )
        .unwrap();
        assert_eq!(got, None);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("no imagery"));
    }

    #[test]
    fn gsv_image_in_overlap_counts_for_both() {
        // two parallel segments 1 m apart with 1 m buffers share a strip
        let pg = raster(30, 30);
        let segments = vec![
            seg("n", (2.0, 10.0), (18.0, 10.0)),
            seg("s", (2.0, 11.0), (18.0, 11.0)),
        ];
        let a = area("w", 0.0, 0.0, 30.0, 30.0);
        let ctx = RoadContext::new(&segments, 1.0, &pg).unwrap();
        let images = vec![
            StreetImageRecord::new("shared", 10.0, 10.5, 0.8),
            StreetImageRecord::new("north-only", 10.0, 9.5, 0.2),
        ];
        let mut warnings = Vec::new();
        let got = onroad_gsv(
            &a,
            &ctx,
            &images,
            &scores(vec![1.0, 1.0]),
            &MetricConfig::default(),
            &mut warnings,
        )
        .unwrap();
        // n sees {0.8, 0.2} -> 0.5; s sees {0.8}
        assert_relative_eq!(got.unwrap(), (0.5 + 0.8) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn image_validation_rejects_bad_records() {
        assert!(StreetImageRecord::new("x", 0.0, 0.0, 1.2).validate().is_err());
        assert!(StreetImageRecord::new("x", f64::NAN, 0.0, 0.5).validate().is_err());
        assert!(StreetImageRecord::new("x", 0.0, 0.0, 1.0).validate().is_ok());
    }

    #[test]
    fn greenery_vector_assembles() {
        let (a, pg, segments) = three_segment_fixture();
        let ctx = RoadContext::new(&segments, 1.0, &pg).unwrap();
        let images = vec![StreetImageRecord::new("i1", 5.0, 3.0, 0.2)];
        let mut warnings = Vec::new();
        let v = greenery_vector(
            &a,
            &pg,
            &ctx,
            &images,
            &scores(vec![1.0; 3]),
            &MetricConfig::default(),
            &mut warnings,
        )
        .unwrap();
        assert_eq!(v.area_id, "w1");
        assert_eq!(v.g_total_ndvi, 48.0 / 400.0);
        assert_relative_eq!(v.g_onroad_ndvi, 0.04, max_relative = 1e-12);
        assert_relative_eq!(v.g_onroad_gsv.unwrap(), 0.2, max_relative = 1e-12);
        assert!(v.g_offroad <= v.g_total_ndvi);
        assert!(v.who_share.is_none());
        assert!(warnings.is_empty());
        v.validate().unwrap();
    }

    #[test]
    fn onroad_exceeding_total_flags_and_fails_validation() {
        // a tall green buffer hanging out of a tiny area pushes the on-road
        // numerator past the area's own pixel count
        let mut pg = raster(10, 10);
        for row in 0..6 {
            pg.set(row, 0, true);
        }
        let tiny = area("t", 0.0, 0.0, 2.0, 2.0);
        let segments = vec![seg("s", (0.5, 1.0), (1.5, 1.0))];
        let ctx = RoadContext::new(&segments, 5.0, &pg).unwrap();
        let mut warnings = Vec::new();
        let err = greenery_vector(
            &tiny,
            &pg,
            &ctx,
            &[],
            &scores(vec![1.0]),
            &MetricConfig::default(),
            &mut warnings,
        );
        assert!(matches!(err, Err(Error::Domain(_))));
        assert!(warnings.iter().any(|w| w.contains("exceeds the total green share")));
    }

    #[test]
    fn weight_length_mismatch_rejected() {
        let (a, pg, segments) = three_segment_fixture();
        let ctx = RoadContext::new(&segments, 1.0, &pg).unwrap();
        let mut warnings = Vec::new();
        let err = onroad_ndvi(&a, &ctx, &scores(vec![1.0]), &MetricConfig::default(), &mut warnings);
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
