//! Binary green-cover raster and the zonal overlay primitive.
//!
//! Pixels carry one bit (green / not green). Zonal statistics use
//! pixel-center containment with an even-odd scanline fill, so a pixel
//! belongs to a region iff its center does. Counting inside a region mask
//! runs on 64-bit words, which keeps large rasters cheap.

use geo::{Coord, MultiPolygon, Rect};

use crate::error::{Error, Result};
use crate::geometry::{bounds, crs_mismatch, validate_multipolygon};

/// Row-major bit grid in a projected metric CRS.
///
/// `origin` is the lower-left corner of the grid; row 0 is the southernmost
/// row. The center of pixel (row, col) is at
/// `origin + ((col + 0.5) * cell_size, (row + 0.5) * cell_size)`.
#[derive(Debug, Clone)]
pub struct GreenRaster {
    origin: Coord<f64>,
    cell_size: f64,
    width: usize,
    height: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl GreenRaster {
    pub fn new(origin: Coord<f64>, cell_size: f64, width: usize, height: usize) -> Result<Self> {
        if cell_size <= 0.0 || !cell_size.is_finite() {
            return Err(Error::domain("cell_size must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(Error::domain("raster must have at least one pixel"));
        }
        let words_per_row = width.div_ceil(64);
        Ok(GreenRaster {
            origin,
            cell_size,
            width,
            height,
            words_per_row,
            words: vec![0; words_per_row * height],
        })
    }

    /// Builds a raster by evaluating `f` at every pixel center.
    pub fn from_fn(
        origin: Coord<f64>,
        cell_size: f64,
        width: usize,
        height: usize,
        mut f: impl FnMut(Coord<f64>) -> bool,
    ) -> Result<Self> {
        let mut r = GreenRaster::new(origin, cell_size, width, height)?;
        for row in 0..height {
            for col in 0..width {
                if f(r.center(row, col)) {
                    r.set(row, col, true);
                }
            }
        }
        Ok(r)
    }

    pub fn origin(&self) -> Coord<f64> {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn extent(&self) -> Rect<f64> {
        Rect::new(
            self.origin,
            Coord {
                x: self.origin.x + self.width as f64 * self.cell_size,
                y: self.origin.y + self.height as f64 * self.cell_size,
            },
        )
    }

    pub fn center(&self, row: usize, col: usize) -> Coord<f64> {
        Coord {
            x: self.origin.x + (col as f64 + 0.5) * self.cell_size,
            y: self.origin.y + (row as f64 + 0.5) * self.cell_size,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.height && col < self.width);
        let w = self.words[row * self.words_per_row + col / 64];
        (w >> (col % 64)) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        debug_assert!(row < self.height && col < self.width);
        let idx = row * self.words_per_row + col / 64;
        let bit = 1u64 << (col % 64);
        if value {
            self.words[idx] |= bit;
        } else {
            self.words[idx] &= !bit;
        }
    }

    /// Total number of set pixels.
    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Set-bit count within `[col_start, col_end)` of one row.
    fn count_row_range(&self, row: usize, col_start: usize, col_end: usize) -> u64 {
        if col_start >= col_end {
            return 0;
        }
        let base = row * self.words_per_row;
        let (w0, b0) = (col_start / 64, col_start % 64);
        let (w1, b1) = ((col_end - 1) / 64, (col_end - 1) % 64 + 1);
        if w0 == w1 {
            let mask = (u64::MAX << b0) & (u64::MAX >> (64 - b1));
            return (self.words[base + w0] & mask).count_ones() as u64;
        }
        let mut total = (self.words[base + w0] & (u64::MAX << b0)).count_ones() as u64;
        for w in (w0 + 1)..w1 {
            total += self.words[base + w].count_ones() as u64;
        }
        total += (self.words[base + w1] & (u64::MAX >> (64 - b1))).count_ones() as u64;
        total
    }

    /// Requires identical grids (origin, cell size, dimensions).
    fn check_same_grid(&self, other: &GreenRaster) -> Result<()> {
        if self.origin != other.origin
            || self.cell_size != other.cell_size
            || self.width != other.width
            || self.height != other.height
        {
            return Err(Error::config("rasters are on different grids"));
        }
        Ok(())
    }

    pub fn and(&self, other: &GreenRaster) -> Result<GreenRaster> {
        self.check_same_grid(other)?;
        let mut out = self.clone();
        for (w, o) in out.words.iter_mut().zip(&other.words) {
            *w &= o;
        }
        Ok(out)
    }

    pub fn and_not(&self, other: &GreenRaster) -> Result<GreenRaster> {
        self.check_same_grid(other)?;
        let mut out = self.clone();
        for (w, o) in out.words.iter_mut().zip(&other.words) {
            *w &= !o;
        }
        Ok(out)
    }

    pub fn or_assign(&mut self, other: &GreenRaster) -> Result<()> {
        self.check_same_grid(other)?;
        for (w, o) in self.words.iter_mut().zip(&other.words) {
            *w |= o;
        }
        Ok(())
    }

    /// Sets every pixel whose center falls inside `region`.
    pub fn burn(&mut self, region: &MultiPolygon<f64>) {
        let mask = self.mask_unchecked(region);
        self.set_in(&mask);
    }

    /// Sets every pixel covered by a precomputed mask on this grid.
    pub(crate) fn set_in(&mut self, mask: &RegionMask) {
        for (row, c0, c1) in &mask.intervals {
            for col in *c0..*c1 {
                self.set(*row, col, true);
            }
        }
    }

    /// Scanline mask of `region` over this grid: per-row column intervals
    /// of pixels whose centers fall inside, plus the total pixel count.
    pub fn mask(&self, region: &MultiPolygon<f64>) -> Result<RegionMask> {
        validate_multipolygon(region)?;
        let rb = bounds(region)?;
        let re = self.extent();
        if crs_mismatch(&rb, &re) {
            return Err(Error::config(
                "region and raster coordinate ranges disagree (projected vs geographic)",
            ));
        }
        Ok(self.mask_unchecked(region))
    }

    /// [`mask`](Self::mask) without the validation pass, for geometry the
    /// engine constructed itself (segment buffers, burned park outlines).
    pub(crate) fn mask_unchecked(&self, region: &MultiPolygon<f64>) -> RegionMask {
        let mut intervals = Vec::new();
        let mut total = 0u64;
        let rb = match bounds(region) {
            Ok(r) => r,
            Err(_) => return RegionMask { intervals, total },
        };
        // rows whose center y could fall inside the region bounds
        let row_lo = ((rb.min().y - self.origin.y) / self.cell_size - 0.5).ceil().max(0.0) as i64;
        let row_hi = ((rb.max().y - self.origin.y) / self.cell_size - 0.5).floor() as i64;
        let row_hi = row_hi.min(self.height as i64 - 1);
        let mut crossings: Vec<f64> = Vec::new();
        for row in row_lo..=row_hi {
            if row < 0 {
                continue;
            }
            let yc = self.origin.y + (row as f64 + 0.5) * self.cell_size;
            crossings.clear();
            for poly in &region.0 {
                for ring in std::iter::once(poly.exterior()).chain(poly.interiors()) {
                    let pts = &ring.0;
                    for i in 0..pts.len() - 1 {
                        let (p, q) = (pts[i], pts[i + 1]);
                        // half-open span excludes horizontal edges and counts
                        // each vertex crossing exactly once
                        if (p.y <= yc && q.y > yc) || (q.y <= yc && p.y > yc) {
                            let t = (yc - p.y) / (q.y - p.y);
                            crossings.push(p.x + t * (q.x - p.x));
                        }
                    }
                }
            }
            if crossings.is_empty() {
                continue;
            }
            crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for pair in crossings.chunks_exact(2) {
                let (xa, xb) = (pair[0], pair[1]);
                // pixel centers in [xa, xb)
                let c0 = ((xa - self.origin.x) / self.cell_size - 0.5).ceil().max(0.0) as usize;
                let c1f = ((xb - self.origin.x) / self.cell_size - 0.5).ceil();
                if c1f <= 0.0 {
                    continue;
                }
                let c1 = (c1f as usize).min(self.width);
                if c0 < c1 {
                    intervals.push((row as usize, c0, c1));
                    total += (c1 - c0) as u64;
                }
            }
        }
        RegionMask { intervals, total }
    }

    /// Set-bit count inside a region mask.
    pub fn count_in(&self, mask: &RegionMask) -> u64 {
        let mut n = 0;
        for (row, c0, c1) in &mask.intervals {
            n += self.count_row_range(*row, *c0, *c1);
        }
        n
    }
}

/// Pixel-center membership of a region: sorted per-row column intervals.
#[derive(Debug, Clone, Default)]
pub struct RegionMask {
    pub intervals: Vec<(usize, usize, usize)>,
    pub total: u64,
}

impl RegionMask {
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

/// Zonal green fraction with a flag for regions that cover no pixel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZonalFraction {
    pub value: f64,
    pub no_pixels: bool,
}

/// Green fraction of `region`: green pixels with centers inside divided by
/// all pixels with centers inside. A region covering no pixel centers yields
/// 0 with `no_pixels` set.
pub fn rasterize_fraction(raster: &GreenRaster, region: &MultiPolygon<f64>) -> Result<ZonalFraction> {
    let mask = raster.mask(region)?;
    if mask.total == 0 {
        return Ok(ZonalFraction { value: 0.0, no_pixels: true });
    }
    let green = raster.count_in(&mask);
    Ok(ZonalFraction {
        value: green as f64 / mask.total as f64,
        no_pixels: false,
    })
}
