//! Choropleth export. For a chosen results column the values are
//! standardized to z-scores over the areas that have data (sample standard
//! deviation; a constant column gets z = 0 everywhere), then mapped onto a
//! sequential green ramp by t = (z - z_min) / (z_max - z_min), with t = 0.5
//! when the z-range is degenerate so a constant column fills uniformly.
//! The ramp interpolates linearly in RGB from #f7fcf5 (t = 0) to #00441b
//! (t = 1); areas without data are drawn in #d9d9d9. Every number in the
//! SVG is formatted through one fixed path, so identical inputs yield
//! byte-identical files.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Result};
use geo::MultiPolygon;

use crate::config::{PipelineConfig, METRIC_COLUMNS, SHARE_COLUMNS};
use crate::io::{self, atomic_write, fmt_f64};
use crate::stages::read_column_table;

/// Low end of the ramp (lightest green).
const RAMP_LO: [u8; 3] = [0xf7, 0xfc, 0xf5];
/// High end of the ramp (darkest green).
const RAMP_HI: [u8; 3] = [0x00, 0x44, 0x1b];
/// Fill for areas with no value.
const NO_DATA_FILL: &str = "#d9d9d9";

/// Linear RGB interpolation along the ramp; t is clamped to [0, 1].
pub fn ramp_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let channel = |lo: u8, hi: u8| -> u8 {
        (f64::from(lo) + t * (f64::from(hi) - f64::from(lo))).round() as u8
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        channel(RAMP_LO[0], RAMP_HI[0]),
        channel(RAMP_LO[1], RAMP_HI[1]),
        channel(RAMP_LO[2], RAMP_HI[2])
    )
}

/// Standardizes the non-missing values; missing stays missing. A column
/// with fewer than two values, or zero spread, maps to z = 0.
pub fn z_scores(values: &BTreeMap<String, Option<f64>>) -> BTreeMap<String, Option<f64>> {
    let present: Vec<f64> = values.values().filter_map(|v| *v).collect();
    let n = present.len();
    let mean = if n == 0 { 0.0 } else { present.iter().sum::<f64>() / n as f64 };
    let sd = if n < 2 {
        0.0
    } else {
        let ss: f64 = present.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n as f64 - 1.0)).sqrt()
    };
    values
        .iter()
        .map(|(id, v)| {
            let z = v.map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 });
            (id.clone(), z)
        })
        .collect()
}

/// Which results file carries a given column.
fn source_file(column: &str) -> Result<&'static str> {
    if METRIC_COLUMNS.contains(&column) {
        Ok("metrics.csv")
    } else if SHARE_COLUMNS.contains(&column) {
        Ok("targets.csv")
    } else {
        bail!(
            "unknown metric {column:?}; expected one of {} or {}",
            METRIC_COLUMNS.join(", "),
            SHARE_COLUMNS.join(", ")
        )
    }
}

/// Columns that can be exported given what the output directory holds.
fn exportable_columns(config: &PipelineConfig) -> Vec<&'static str> {
    let mut columns = Vec::new();
    if config.output.dir.join("metrics.csv").exists() {
        columns.extend_from_slice(&METRIC_COLUMNS);
    }
    if config.output.dir.join("targets.csv").exists() {
        columns.extend_from_slice(&SHARE_COLUMNS);
    }
    columns
}

struct AreaShape {
    id: String,
    boundary: MultiPolygon<f64>,
}

/// Renders one column to `choropleth_<column>.geojson` and
/// `choropleth_<column>.svg`; with no explicit metric, renders every column
/// present in the results. Returns the paths written.
pub fn export_choropleth(config: &PipelineConfig, metric: Option<&str>) -> Result<Vec<PathBuf>> {
    let areas = io::read_areas(&config.inputs.areas)?;
    let shapes: Vec<AreaShape> = areas
        .into_iter()
        .map(|a| AreaShape { id: a.id, boundary: a.boundary })
        .collect();

    let columns: Vec<&str> = match metric {
        Some(m) => {
            source_file(m)?;
            vec![m]
        }
        None => {
            let cols = exportable_columns(config);
            if cols.is_empty() {
                bail!(
                    "no results tables in {}; run the pipeline before exporting",
                    config.output.dir.display()
                );
            }
            cols
        }
    };

    let mut written = Vec::new();
    for column in columns {
        let file = source_file(column)?;
        let path = config.output.dir.join(file);
        if !path.exists() {
            bail!("{} is missing; run the stage that produces it first", path.display());
        }
        let table = read_column_table(&path, "area_id")?;
        let mut values: BTreeMap<String, Option<f64>> = BTreeMap::new();
        for shape in &shapes {
            let v = table.get(&shape.id).and_then(|row| row.get(column).copied().flatten());
            values.insert(shape.id.clone(), v);
        }
        let zs = z_scores(&values);

        let geojson_path = config.output.dir.join(format!("choropleth_{column}.geojson"));
        atomic_write(&geojson_path, &choropleth_geojson(&shapes, &values, &zs))?;
        written.push(geojson_path);

        let svg_path = config.output.dir.join(format!("choropleth_{column}.svg"));
        atomic_write(&svg_path, svg_document(column, &shapes, &values, &zs).as_bytes())?;
        written.push(svg_path);
    }
    Ok(written)
}

fn choropleth_geojson(
    shapes: &[AreaShape],
    values: &BTreeMap<String, Option<f64>>,
    zs: &BTreeMap<String, Option<f64>>,
) -> Vec<u8> {
    let features = shapes
        .iter()
        .map(|shape| {
            io::feature(
                geojson::Value::from(&shape.boundary),
                vec![
                    ("id".to_string(), serde_json::Value::String(shape.id.clone())),
                    ("value".to_string(), io::json_opt(values[&shape.id])),
                    ("z".to_string(), io::json_opt(zs[&shape.id])),
                ],
            )
        })
        .collect();
    io::feature_collection_bytes(features)
}

/// Two-decimal fixed formatting for SVG coordinates and labels.
fn svg_num(v: f64) -> String {
    format!("{v:.2}")
}

fn ring_path(ring: &geo::LineString<f64>, tx: &impl Fn(f64) -> f64, ty: &impl Fn(f64) -> f64) -> String {
    let mut d = String::new();
    // the closing coordinate repeats the first; Z closes the ring instead
    let coords: Vec<_> = ring.coords().collect();
    let len = if coords.len() > 1 && coords.first() == coords.last() {
        coords.len() - 1
    } else {
        coords.len()
    };
    for (i, c) in coords[..len].iter().enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        d.push_str(&format!("{cmd}{} {} ", svg_num(tx(c.x)), svg_num(ty(c.y))));
    }
    d.push('Z');
    d
}

fn svg_document(
    column: &str,
    shapes: &[AreaShape],
    values: &BTreeMap<String, Option<f64>>,
    zs: &BTreeMap<String, Option<f64>>,
) -> String {
    // bounding box over every ring coordinate
    let (mut minx, mut miny) = (f64::INFINITY, f64::INFINITY);
    let (mut maxx, mut maxy) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for shape in shapes {
        for poly in &shape.boundary {
            for ring in std::iter::once(poly.exterior()).chain(poly.interiors()) {
                for c in ring.coords() {
                    minx = minx.min(c.x);
                    miny = miny.min(c.y);
                    maxx = maxx.max(c.x);
                    maxy = maxy.max(c.y);
                }
            }
        }
    }
    let dx = (maxx - minx).max(1e-9);
    let dy = (maxy - miny).max(1e-9);

    const MAP_W: f64 = 760.0;
    const MARGIN: f64 = 20.0;
    const LEGEND_H: f64 = 70.0;
    let map_h = MAP_W * dy / dx;
    let width = MAP_W + 2.0 * MARGIN;
    let height = map_h + 2.0 * MARGIN + LEGEND_H;

    let tx = |x: f64| MARGIN + (x - minx) / dx * MAP_W;
    // SVG y grows downward; map coordinates grow upward
    let ty = |y: f64| MARGIN + map_h - (y - miny) / dy * map_h;

    let present: Vec<f64> = zs.values().filter_map(|z| *z).collect();
    let zmin = present.iter().copied().fold(f64::INFINITY, f64::min);
    let zmax = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = present.is_empty() || !(zmax > zmin);
    let t_of = |z: f64| if degenerate { 0.5 } else { (z - zmin) / (zmax - zmin) };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" width=\"{}\" height=\"{}\">\n",
        svg_num(width),
        svg_num(height),
        svg_num(width),
        svg_num(height)
    ));
    svg.push_str("<defs><linearGradient id=\"ramp\" x1=\"0\" y1=\"0\" x2=\"1\" y2=\"0\">");
    for i in 0..=10 {
        let t = f64::from(i) / 10.0;
        svg.push_str(&format!(
            "<stop offset=\"{}%\" stop-color=\"{}\"/>",
            i * 10,
            ramp_color(t)
        ));
    }
    svg.push_str("</linearGradient></defs>\n");
    svg.push_str(&format!(
        "<title>{}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n",
        xml_escape(column)
    ));

    for shape in shapes {
        let fill = match zs[&shape.id] {
            Some(z) => ramp_color(t_of(z)),
            None => NO_DATA_FILL.to_string(),
        };
        let mut d = String::new();
        for poly in &shape.boundary {
            for ring in std::iter::once(poly.exterior()).chain(poly.interiors()) {
                d.push_str(&ring_path(ring, &tx, &ty));
                d.push(' ');
            }
        }
        let label = match values[&shape.id] {
            Some(v) => format!("{}: {}", shape.id, fmt_f64(v)),
            None => format!("{}: no data", shape.id),
        };
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"{}\" fill-rule=\"evenodd\" stroke=\"#333333\" stroke-width=\"0.5\"><title>{}</title></path>\n",
            d.trim_end(),
            fill,
            xml_escape(&label)
        ));
    }

    // legend: gradient bar with the z-score range, plus the no-data swatch
    let ly = map_h + 2.0 * MARGIN + 8.0;
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"300\" height=\"12\" fill=\"url(#ramp)\" stroke=\"#333333\" stroke-width=\"0.5\"/>\n",
        svg_num(MARGIN),
        svg_num(ly)
    ));
    let (lo_label, hi_label) = if degenerate {
        ("-".to_string(), "-".to_string())
    } else {
        (svg_num(zmin), svg_num(zmax))
    };
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">z = {}</text>\n",
        svg_num(MARGIN),
        svg_num(ly + 24.0),
        lo_label
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">z = {}</text>\n",
        svg_num(MARGIN + 300.0),
        svg_num(ly + 24.0),
        hi_label
    ));
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\" stroke=\"#333333\" stroke-width=\"0.5\"/>\n",
        svg_num(MARGIN + 320.0),
        svg_num(ly),
        NO_DATA_FILL
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">no data</text>\n",
        svg_num(MARGIN + 338.0),
        svg_num(ly + 10.0)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
        svg_num(MARGIN),
        svg_num(MARGIN - 6.0),
        xml_escape(column)
    ));
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
