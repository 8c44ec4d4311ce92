//! Dataset readers and writers: GeoJSON feature collections, binary
//! green-cover rasters, the NHS-schema CSV tables, and the output tables.
//! Every writer goes through [`atomic_write`] so a crash never leaves a
//! half-written product behind.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use geo::{Coord, LineString, MultiPolygon};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use verdant_core::{
    Access, AreaKind, AreaUnit, Condition, ConditionList, GpPractice, GreenRaster,
    GreenSpacePolygon, PopulationCell, PrescriptionRow, SpaceKind, StreetImageRecord,
    StreetSegment,
};

// ---------------------------------------------------------------------------
// hashing and atomic writes

/// Hex SHA-256 of a byte slice.
pub fn digest_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Hex SHA-256 of a file's contents.
pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read {} for hashing", path.display()))?;
    Ok(digest_bytes(&bytes))
}

/// Writes `bytes` to `path` via a temporary sibling file and a rename, so
/// concurrent readers and interrupted runs never observe partial content.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp~",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = std::fs::File::create(&tmp)
            .with_context(|| format!("cannot create {}", tmp.display()))?;
        f.write_all(bytes)
            .with_context(|| format!("cannot write {}", tmp.display()))?;
        f.sync_all().ok();
    }
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot move {} into place", tmp.display()))?;
    Ok(())
}

/// Shortest round-trip decimal form of a float; the one float-to-text
/// convention every output table uses.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Optional float as a CSV field: missing values become empty cells.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Serializes string rows under a header; the single CSV-writing path so
/// quoting is uniform across every product.
pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(w.into_inner()?)
}

// ---------------------------------------------------------------------------
// GeoJSON

fn parse_feature_collection(path: &Path) -> Result<geojson::FeatureCollection> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let gj: geojson::GeoJson = text
        .parse()
        .with_context(|| format!("{} is not valid GeoJSON", path.display()))?;
    geojson::FeatureCollection::try_from(gj)
        .map_err(|e| anyhow!("{} is not a FeatureCollection: {e}", path.display()))
}

fn feature_id(feature: &geojson::Feature, index: usize) -> Result<String> {
    if let Some(props) = &feature.properties {
        match props.get("id") {
            Some(serde_json::Value::String(s)) => return Ok(s.clone()),
            Some(serde_json::Value::Number(n)) => return Ok(n.to_string()),
            Some(other) => bail!("feature {index}: id property must be a string, got {other}"),
            None => {}
        }
    }
    match &feature.id {
        Some(geojson::feature::Id::String(s)) => Ok(s.clone()),
        Some(geojson::feature::Id::Number(n)) => Ok(n.to_string()),
        None => bail!("feature {index}: no id property"),
    }
}

fn prop_str<'a>(feature: &'a geojson::Feature, key: &str) -> Option<&'a str> {
    feature
        .properties
        .as_ref()
        .and_then(|p| p.get(key))
        .and_then(|v| v.as_str())
}

fn prop_f64(feature: &geojson::Feature, key: &str) -> Option<f64> {
    feature
        .properties
        .as_ref()
        .and_then(|p| p.get(key))
        .and_then(|v| v.as_f64())
}

fn feature_multipolygon(feature: &geojson::Feature, index: usize) -> Result<MultiPolygon<f64>> {
    let geometry = feature
        .geometry
        .as_ref()
        .ok_or_else(|| anyhow!("feature {index}: missing geometry"))?;
    match &geometry.value {
        geojson::Value::Polygon(_) => {
            let poly: geo::Polygon<f64> = geometry
                .value
                .clone()
                .try_into()
                .map_err(|e| anyhow!("feature {index}: bad polygon: {e}"))?;
            Ok(MultiPolygon(vec![poly]))
        }
        geojson::Value::MultiPolygon(_) => geometry
            .value
            .clone()
            .try_into()
            .map_err(|e| anyhow!("feature {index}: bad multipolygon: {e}")),
        other => bail!(
            "feature {index}: expected Polygon or MultiPolygon, got {}",
            other.type_name()
        ),
    }
}

/// Reads areal units. Each feature needs `id`, `population` and an optional
/// `kind` ("ward" by default); any other numeric property is kept as a
/// covariate.
pub fn read_areas(path: &Path) -> Result<Vec<AreaUnit>> {
    let fc = parse_feature_collection(path)?;
    let mut areas = Vec::with_capacity(fc.features.len());
    let mut seen = std::collections::HashSet::new();
    for (index, feature) in fc.features.iter().enumerate() {
        let id = feature_id(feature, index)
            .with_context(|| format!("{}", path.display()))?;
        if !seen.insert(id.clone()) {
            bail!("{}: duplicate area id {id:?}", path.display());
        }
        let kind = match prop_str(feature, "kind") {
            None | Some("ward") => AreaKind::Ward,
            Some("lsoa") => AreaKind::Lsoa,
            Some(other) => bail!(
                "{}: area {id}: unknown kind {other:?} (expected \"ward\" or \"lsoa\")",
                path.display()
            ),
        };
        let population = prop_f64(feature, "population").ok_or_else(|| {
            anyhow!("{}: area {id}: missing numeric population property", path.display())
        })?;
        if !population.is_finite() || population < 0.0 {
            bail!("{}: area {id}: population {population} is not a non-negative number", path.display());
        }
        let boundary = feature_multipolygon(feature, index)
            .with_context(|| format!("{}: area {id}", path.display()))?;
        verdant_core::geometry::validate_multipolygon(&boundary)
            .map_err(|e| anyhow!("{}: area {id}: {e}", path.display()))?;
        let mut area = AreaUnit::new(id, kind, boundary, population);
        if let Some(props) = &feature.properties {
            for (key, value) in props {
                if matches!(key.as_str(), "id" | "kind" | "population") {
                    continue;
                }
                if let Some(v) = value.as_f64() {
                    area.covariates.insert(key.clone(), v);
                }
            }
        }
        areas.push(area);
    }
    Ok(areas)
}

/// Reads green-space polygons. Each feature needs `id`, `kind`
/// ("park"/"garden") and `access` ("public"/"restricted").
pub fn read_parks(path: &Path) -> Result<Vec<GreenSpacePolygon>> {
    let fc = parse_feature_collection(path)?;
    let mut parks = Vec::with_capacity(fc.features.len());
    let mut seen = std::collections::HashSet::new();
    for (index, feature) in fc.features.iter().enumerate() {
        let id = feature_id(feature, index)
            .with_context(|| format!("{}", path.display()))?;
        if !seen.insert(id.clone()) {
            bail!("{}: duplicate green-space id {id:?}", path.display());
        }
        let kind = match prop_str(feature, "kind") {
            Some("park") | None => SpaceKind::Park,
            Some("garden") => SpaceKind::Garden,
            Some(other) => bail!(
                "{}: green space {id}: unknown kind {other:?} (expected \"park\" or \"garden\")",
                path.display()
            ),
        };
        let access = match prop_str(feature, "access") {
            Some("public") => Access::Public,
            Some("restricted") => Access::Restricted,
            Some(other) => bail!(
                "{}: green space {id}: unknown access {other:?} (expected \"public\" or \"restricted\")",
                path.display()
            ),
            None => bail!("{}: green space {id}: missing access property", path.display()),
        };
        let boundary = feature_multipolygon(feature, index)
            .with_context(|| format!("{}: green space {id}", path.display()))?;
        let polygon = GreenSpacePolygon { id: id.clone(), kind, access, boundary };
        polygon
            .validate()
            .map_err(|e| anyhow!("{}: green space {id}: {e}", path.display()))?;
        parks.push(polygon);
    }
    Ok(parks)
}

/// Reads street centerlines: LineString features with an `id` property.
pub fn read_segments(path: &Path) -> Result<Vec<StreetSegment>> {
    let fc = parse_feature_collection(path)?;
    let mut segments = Vec::with_capacity(fc.features.len());
    let mut seen = std::collections::HashSet::new();
    for (index, feature) in fc.features.iter().enumerate() {
        let id = feature_id(feature, index)
            .with_context(|| format!("{}", path.display()))?;
        if !seen.insert(id.clone()) {
            bail!("{}: duplicate segment id {id:?}", path.display());
        }
        let geometry = feature
            .geometry
            .as_ref()
            .ok_or_else(|| anyhow!("{}: segment {id}: missing geometry", path.display()))?;
        let line: LineString<f64> = match &geometry.value {
            geojson::Value::LineString(_) => geometry
                .value
                .clone()
                .try_into()
                .map_err(|e| anyhow!("{}: segment {id}: bad linestring: {e}", path.display()))?,
            other => bail!(
                "{}: segment {id}: expected LineString, got {}",
                path.display(),
                other.type_name()
            ),
        };
        segments.push(
            StreetSegment::new(id.clone(), line)
                .map_err(|e| anyhow!("{}: segment {id}: {e}", path.display()))?,
        );
    }
    Ok(segments)
}

/// Builds one GeoJSON feature with the given geometry value and ordered
/// properties.
pub fn feature(
    geometry: geojson::Value,
    properties: Vec<(String, serde_json::Value)>,
) -> geojson::Feature {
    let mut map = geojson::JsonObject::new();
    for (k, v) in properties {
        map.insert(k, v);
    }
    geojson::Feature {
        bbox: None,
        geometry: Some(geojson::Geometry::new(geometry)),
        id: None,
        properties: Some(map),
        foreign_members: None,
    }
}

/// Serializes features as a FeatureCollection document.
pub fn feature_collection_bytes(features: Vec<geojson::Feature>) -> Vec<u8> {
    let fc = geojson::FeatureCollection { bbox: None, features, foreign_members: None };
    fc.to_string().into_bytes()
}

/// A float as a JSON value; non-finite values map to null, which GeoJSON
/// requires (JSON has no NaN).
pub fn json_f64(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map(serde_json::Value::Number).unwrap_or(serde_json::Value::Null)
}

pub fn json_opt(v: Option<f64>) -> serde_json::Value {
    v.map(json_f64).unwrap_or(serde_json::Value::Null)
}

// ---------------------------------------------------------------------------
// rasters

/// Reads a green-cover raster; the format follows the extension: `.asc` is
/// an ESRI ASCII grid (cells > 0.5 count as green), `.bgr` is the packed
/// binary layout documented on [`write_raster_binary`].
pub fn read_raster(path: &Path) -> Result<GreenRaster> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("asc") => read_raster_ascii(path),
        Some("bgr") => read_raster_binary(path),
        other => bail!(
            "{}: unknown raster extension {:?} (expected .asc or .bgr)",
            path.display(),
            other.unwrap_or("")
        ),
    }
}

fn read_raster_ascii(path: &Path) -> Result<GreenRaster> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut tokens = text.split_ascii_whitespace();
    let mut header: BTreeMap<String, f64> = BTreeMap::new();
    let mut first_value: Option<f64> = None;
    // Header lines are `key value` pairs; the grid body starts at the first
    // token that is a bare number.
    while let Some(tok) = tokens.next() {
        if let Ok(v) = tok.parse::<f64>() {
            first_value = Some(v);
            break;
        }
        let value: f64 = tokens
            .next()
            .ok_or_else(|| anyhow!("{}: header key {tok} without a value", path.display()))?
            .parse()
            .with_context(|| format!("{}: bad value for header key {tok}", path.display()))?;
        header.insert(tok.to_ascii_lowercase(), value);
    }
    let need = |key: &str| -> Result<f64> {
        header
            .get(key)
            .copied()
            .ok_or_else(|| anyhow!("{}: missing header line {key}", path.display()))
    };
    let ncols = need("ncols")? as usize;
    let nrows = need("nrows")? as usize;
    let xll = need("xllcorner")?;
    let yll = need("yllcorner")?;
    let cell = need("cellsize")?;
    let nodata = header.get("nodata_value").copied();
    let mut raster = GreenRaster::new(Coord { x: xll, y: yll }, cell, ncols, nrows)
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let mut count = 0usize;
    let mut put = |k: usize, v: f64| {
        // ASCII grids list rows north to south; storage is south-up.
        let (file_row, col) = (k / ncols, k % ncols);
        let row = nrows - 1 - file_row;
        let green = Some(v) != nodata && v > 0.5;
        raster.set(row, col, green);
    };
    if let Some(v) = first_value {
        put(count, v);
        count += 1;
    }
    for tok in tokens {
        if count >= ncols * nrows {
            bail!("{}: more than {ncols}x{nrows} grid values", path.display());
        }
        let v: f64 = tok
            .parse()
            .with_context(|| format!("{}: bad grid value {tok:?}", path.display()))?;
        put(count, v);
        count += 1;
    }
    if count != ncols * nrows {
        bail!(
            "{}: expected {} grid values, found {count}",
            path.display(),
            ncols * nrows
        );
    }
    Ok(raster)
}

/// ESRI ASCII grid document for a raster (rows north to south, 1 = green).
pub fn write_raster_ascii(raster: &GreenRaster) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&format!("ncols {}\n", raster.width()));
    out.push_str(&format!("nrows {}\n", raster.height()));
    out.push_str(&format!("xllcorner {}\n", fmt_f64(raster.origin().x)));
    out.push_str(&format!("yllcorner {}\n", fmt_f64(raster.origin().y)));
    out.push_str(&format!("cellsize {}\n", fmt_f64(raster.cell_size())));
    out.push_str("NODATA_value -9999\n");
    for file_row in 0..raster.height() {
        let row = raster.height() - 1 - file_row;
        let mut line = String::with_capacity(raster.width() * 2);
        for col in 0..raster.width() {
            if col > 0 {
                line.push(' ');
            }
            line.push(if raster.get(row, col) { '1' } else { '0' });
        }
        line.push('\n');
        out.push_str(&line);
    }
    out.into_bytes()
}

const RASTER_MAGIC: &[u8; 4] = b"BGR1";

/// Packed binary raster: magic `BGR1`; little-endian f64 origin x, origin
/// y, cell size; little-endian u64 width, height; then ceil(w*h/8) bytes
/// where cell k = row*width+col (row 0 southernmost) is bit k%8 (LSB first)
/// of byte k/8, set when green.
pub fn write_raster_binary(raster: &GreenRaster) -> Vec<u8> {
    let (w, h) = (raster.width(), raster.height());
    let mut out = Vec::with_capacity(4 + 8 * 5 + (w * h).div_ceil(8));
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&raster.origin().x.to_le_bytes());
    out.extend_from_slice(&raster.origin().y.to_le_bytes());
    out.extend_from_slice(&raster.cell_size().to_le_bytes());
    out.extend_from_slice(&(w as u64).to_le_bytes());
    out.extend_from_slice(&(h as u64).to_le_bytes());
    let mut bits = vec![0u8; (w * h).div_ceil(8)];
    for row in 0..h {
        for col in 0..w {
            if raster.get(row, col) {
                let k = row * w + col;
                bits[k / 8] |= 1 << (k % 8);
            }
        }
    }
    out.extend_from_slice(&bits);
    out
}

fn read_raster_binary(path: &Path) -> Result<GreenRaster> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let take = |offset: usize, len: usize| -> Result<&[u8]> {
        bytes
            .get(offset..offset + len)
            .ok_or_else(|| anyhow!("{}: truncated raster file", path.display()))
    };
    if take(0, 4)? != RASTER_MAGIC {
        bail!("{}: not a binary green raster (bad magic)", path.display());
    }
    let f = |o: usize| -> Result<f64> { Ok(f64::from_le_bytes(take(o, 8)?.try_into().unwrap())) };
    let u = |o: usize| -> Result<u64> { Ok(u64::from_le_bytes(take(o, 8)?.try_into().unwrap())) };
    let (x, y, cell) = (f(4)?, f(12)?, f(20)?);
    let (w, h) = (u(28)? as usize, u(36)? as usize);
    let bits = take(44, (w * h).div_ceil(8))?;
    let mut raster = GreenRaster::new(Coord { x, y }, cell, w, h)
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    for row in 0..h {
        for col in 0..w {
            let k = row * w + col;
            if bits[k / 8] & (1 << (k % 8)) != 0 {
                raster.set(row, col, true);
            }
        }
    }
    Ok(raster)
}

// ---------------------------------------------------------------------------
// CSV inputs

/// Reads typed CSV rows, tagging any malformed row with its 1-based line
/// number (the header is line 1).
fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(u64, T)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut rows = Vec::new();
    for (index, record) in reader.deserialize::<T>().enumerate() {
        let line = index as u64 + 2;
        let row =
            record.with_context(|| format!("{} line {line}: malformed row", path.display()))?;
        rows.push((line, row));
    }
    Ok(rows)
}

#[derive(Debug, Deserialize)]
struct ImageRow {
    image_id: String,
    x: f64,
    y: f64,
    green_fraction: f64,
}

/// Reads street-image records (`image_id,x,y,green_fraction`).
pub fn read_images(path: &Path) -> Result<Vec<StreetImageRecord>> {
    let mut images = Vec::new();
    for (line, row) in read_csv_rows::<ImageRow>(path)? {
        let record = StreetImageRecord::new(row.image_id, row.x, row.y, row.green_fraction);
        record
            .validate()
            .map_err(|e| anyhow!("{} line {line}: {e}", path.display()))?;
        images.push(record);
    }
    Ok(images)
}

#[derive(Debug, Deserialize)]
struct PopulationRow {
    cell_id: String,
    x: f64,
    y: f64,
    population: f64,
}

/// Reads the population grid (`cell_id,x,y,population`); each row becomes a
/// square cell of side `cell_size` centred on (x, y).
pub fn read_population(path: &Path, cell_size: f64) -> Result<Vec<PopulationCell>> {
    let mut cells = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (line, row) in read_csv_rows::<PopulationRow>(path)? {
        if !seen.insert(row.cell_id.clone()) {
            bail!("{} line {line}: duplicate cell id {:?}", path.display(), row.cell_id);
        }
        let cell = PopulationCell::square(
            row.cell_id,
            Coord { x: row.x, y: row.y },
            cell_size,
            row.population,
        );
        cell.validate()
            .map_err(|e| anyhow!("{} line {line}: {e}", path.display()))?;
        cells.push(cell);
    }
    Ok(cells)
}

/// One parsed covariates row; empty fields stay missing rather than zero.
#[derive(Debug, Clone, Deserialize)]
pub struct CovariateRow {
    pub area_id: String,
    pub imd_score: Option<f64>,
    pub building_density: Option<f64>,
    pub median_age: Option<f64>,
    pub white_percent: Option<f64>,
}

impl CovariateRow {
    pub fn get(&self, column: &str) -> Option<f64> {
        match column {
            "imd_score" => self.imd_score,
            "building_density" => self.building_density,
            "median_age" => self.median_age,
            "white_percent" => self.white_percent,
            _ => None,
        }
    }
}

/// Reads the area covariates table keyed by area id.
pub fn read_covariates(path: &Path) -> Result<Vec<(u64, CovariateRow)>> {
    let rows = read_csv_rows::<CovariateRow>(path)?;
    for (line, row) in &rows {
        for column in crate::config::CONFOUNDERS {
            if let Some(v) = row.get(column) {
                if !v.is_finite() {
                    bail!(
                        "{} line {line}: {column} = {v} is not a finite number",
                        path.display()
                    );
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Deserialize)]
pub struct DrugRow {
    pub bnf_code: String,
    pub name: String,
}

/// Reads the drug reference table (`bnf_code,name`).
pub fn read_drugs(path: &Path) -> Result<Vec<DrugRow>> {
    let rows = read_csv_rows::<DrugRow>(path)?;
    for (line, row) in &rows {
        if row.bnf_code.is_empty() {
            bail!("{} line {line}: empty bnf_code", path.display());
        }
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, Deserialize)]
pub struct GpRow {
    pub gp_code: String,
    pub x: f64,
    pub y: f64,
    pub status: String,
}

/// Reads the practice table (`gp_code,x,y,status`); status must be
/// "active" or "closed".
pub fn read_gps(path: &Path) -> Result<Vec<(u64, GpRow)>> {
    let rows = read_csv_rows::<GpRow>(path)?;
    let mut seen = std::collections::HashSet::new();
    for (line, row) in &rows {
        if row.gp_code.is_empty() {
            bail!("{} line {line}: empty gp_code", path.display());
        }
        if !seen.insert(row.gp_code.clone()) {
            bail!("{} line {line}: duplicate gp_code {:?}", path.display(), row.gp_code);
        }
        if !(row.x.is_finite() && row.y.is_finite()) {
            bail!("{} line {line}: non-finite practice coordinates", path.display());
        }
        if !matches!(row.status.as_str(), "active" | "closed") {
            bail!(
                "{} line {line}: status {:?} (expected \"active\" or \"closed\")",
                path.display(),
                row.status
            );
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Deserialize)]
pub struct PatientRow {
    pub gp_code: String,
    pub area_id: String,
    pub count: u64,
}

/// Reads the patient residence table (`gp_code,area_id,count`).
pub fn read_patients(path: &Path) -> Result<Vec<(u64, PatientRow)>> {
    read_csv_rows::<PatientRow>(path)
}

#[derive(Debug, Deserialize)]
struct PrescriptionCsvRow {
    gp_code: String,
    bnf_code: String,
    items: u64,
    quantity: u64,
    cost: f64,
}

/// Reads one monthly prescribing extract
/// (`gp_code,bnf_code,items,quantity,cost`).
pub fn read_prescriptions(path: &Path) -> Result<Vec<(u64, PrescriptionRow)>> {
    let mut rows = Vec::new();
    for (line, row) in read_csv_rows::<PrescriptionCsvRow>(path)? {
        let parsed = PrescriptionRow {
            gp_code: row.gp_code,
            bnf_code: row.bnf_code,
            items: row.items,
            quantity: row.quantity,
            cost: row.cost,
        };
        parsed
            .validate()
            .map_err(|e| anyhow!("{} line {line}: {e}", path.display()))?;
        rows.push((line, parsed));
    }
    Ok(rows)
}

#[derive(Debug, Deserialize)]
struct ConditionCodeRow {
    bnf_code: String,
    #[serde(default)]
    #[allow(dead_code)]
    name: String,
}

/// Reads one condition's BNF code list (`bnf_code,name`); a prescription
/// matches the condition when its code starts with any listed code.
pub fn read_condition_list(condition: Condition, path: &Path) -> Result<ConditionList> {
    let rows = read_csv_rows::<ConditionCodeRow>(path)?;
    let codes: Vec<String> = rows.into_iter().map(|(_, r)| r.bnf_code).collect();
    let list = ConditionList::new(condition, codes);
    list.validate().map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok(list)
}

///// Assembles practice records from the two NHS reference tables: active
/// practices keep their patient counts per area; closed practices and
/// orphan patient rows are reported through `warnings`.
pub fn build_practices(
    gps: &[(u64, GpRow)],
    patients: &[(u64, PatientRow)],
    warnings: &mut Vec<String>,
) -> Vec<GpPractice> {
    let mut by_code: BTreeMap<&str, GpPractice> = BTreeMap::new();
    let mut closed: Vec<&str> = Vec::new();
    for (_, gp) in gps {
        if gp.status == "closed" {
            closed.push(&gp.gp_code);
            continue;
        }
        by_code.insert(
            &gp.gp_code,
            GpPractice {
                gp_code: gp.gp_code.clone(),
                location: Coord { x: gp.x, y: gp.y },
                patients_by_area: BTreeMap::new(),
            },
        );
    }
    if !closed.is_empty() {
        warnings.push(format!(
            "{} closed practice(s) excluded: {}",
            closed.len(),
            closed.join(", ")
        ));
    }
    let mut orphans: Vec<u64> = Vec::new();
    for (line, row) in patients {
        match by_code.get_mut(row.gp_code.as_str()) {
            Some(gp) => {
                *gp.patients_by_area.entry(row.area_id.clone()).or_insert(0) += row.count;
            }
            None => orphans.push(*line),
        }
    }
    if !orphans.is_empty() {
        warnings.push(format!(
            "patient rows referencing unknown or closed practices skipped (lines {})",
            orphans.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", ")
        ));
    }
    // keep file order of the practice table for deterministic reporting
    let mut out = Vec::with_capacity(by_code.len());
    for (_, gp) in gps {
        if let Some(p) = by_code.remove(gp.gp_code.as_str()) {
            out.push(p);
        }
    }
    out
}
