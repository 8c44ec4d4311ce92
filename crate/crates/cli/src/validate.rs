//! Pre-run dataset validation: every input is parsed and cross-checked,
//! and the findings are split into fatal errors (the run cannot proceed)
//! and warnings (the run proceeds but the oddity is recorded). The report
//! serializes to JSON for machine consumption.

use std::collections::BTreeSet;
use std::path::Path;

use geo::BoundingRect;
use serde::{Deserialize, Serialize};
use verdant_core::geometry::{bounds, crs_mismatch};
use verdant_core::{AreaUnit, Condition, StreetSegment};

use crate::config::PipelineConfig;
use crate::io;

/// One validation finding; `rows` carries 1-based CSV line numbers when the
/// problem points at specific records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Finding {
    /// Stable machine-readable kind, e.g. "parse" or "unknown-area".
    pub code: String,
    /// Which input the finding is about (config label, not the full path).
    pub input: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<u64>,
}

/// Everything validate found, split by severity.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub fatal: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.fatal.is_empty()
    }

    fn fatal_finding(&mut self, code: &str, input: &str, message: impl Into<String>) {
        self.fatal.push(Finding {
            code: code.to_string(),
            input: input.to_string(),
            message: message.into(),
            rows: Vec::new(),
        });
    }

    fn warning(&mut self, code: &str, input: &str, message: impl Into<String>) {
        self.warnings.push(Finding {
            code: code.to_string(),
            input: input.to_string(),
            message: message.into(),
            rows: Vec::new(),
        });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn file_readable(report: &mut ValidationReport, input: &str, path: &Path) -> bool {
    if path.is_file() {
        true
    } else {
        report.fatal_finding(
            "missing-file",
            input,
            format!("{} does not exist or is not a file", path.display()),
        );
        false
    }
}

/// Parses and cross-checks every dataset named by `config`. Never panics on
/// bad data; every problem lands in the report.
pub fn validate(config: &PipelineConfig) -> ValidationReport {
    let mut report = ValidationReport::default();

    for (label, path) in config.input_files() {
        file_readable(&mut report, &label, &path);
    }
    if !report.ok() {
        return report;
    }

    // geometry datasets
    let areas = match io::read_areas(&config.inputs.areas) {
        Ok(a) => Some(a),
        Err(e) => {
            report.fatal_finding("parse", "areas", format!("{e:#}"));
            None
        }
    };
    let parks = match io::read_parks(&config.inputs.parks) {
        Ok(p) => Some(p),
        Err(e) => {
            report.fatal_finding("parse", "parks", format!("{e:#}"));
            None
        }
    };
    let segments = match io::read_segments(&config.inputs.segments) {
        Ok(s) => Some(s),
        Err(e) => {
            report.fatal_finding("parse", "segments", format!("{e:#}"));
            None
        }
    };
    let raster = match io::read_raster(&config.inputs.green_raster) {
        Ok(r) => Some(r),
        Err(e) => {
            report.fatal_finding("parse", "green_raster", format!("{e:#}"));
            None
        }
    };

    if let Some(areas) = &areas {
        if areas.is_empty() {
            report.fatal_finding("empty", "areas", "no areal units");
        }
    }
    if let Some(segments) = &segments {
        if segments.is_empty() {
            report.fatal_finding("empty", "segments", "no street segments");
        }
    }

    // extent cross-checks
    if let (Some(areas), Some(raster)) = (&areas, &raster) {
        check_extents(&mut report, areas, raster.extent());
    }
    if let (Some(segments), Some(raster)) = (&segments, &raster) {
        check_segment_extent(&mut report, segments, raster.extent());
    }
    if let Some(parks) = &parks {
        if !parks.iter().any(|p| p.access == verdant_core::Access::Public) {
            report.warning("no-public-green", "parks", "no public green space listed");
        }
    }

    // plain tabular datasets
    if let Err(e) = io::read_images(&config.inputs.images) {
        report.fatal_finding("parse", "images", format!("{e:#}"));
    }
    match io::read_population(&config.inputs.population, config.params.population_cell_m) {
        Ok(cells) => {
            if cells.is_empty() {
                report.fatal_finding("empty", "population", "no population cells");
            } else if cells.iter().all(|c| c.population == 0.0) {
                report.warning("zero-population", "population", "every cell has zero population");
            }
        }
        Err(e) => report.fatal_finding("parse", "population", format!("{e:#}")),
    }

    let covariates = match io::read_covariates(&config.inputs.covariates) {
        Ok(c) => Some(c),
        Err(e) => {
            report.fatal_finding("parse", "covariates", format!("{e:#}"));
            None
        }
    };
    if let (Some(areas), Some(rows)) = (&areas, &covariates) {
        let area_ids: BTreeSet<&str> = areas.iter().map(|a| a.id.as_str()).collect();
        let unknown: Vec<u64> = rows
            .iter()
            .filter(|(_, r)| !area_ids.contains(r.area_id.as_str()))
            .map(|(line, _)| *line)
            .collect();
        if !unknown.is_empty() {
            report.warnings.push(Finding {
                code: "unknown-area".into(),
                input: "covariates".into(),
                message: "rows reference area ids absent from the areas dataset".into(),
                rows: unknown,
            });
        }
        let covered: BTreeSet<&str> = rows.iter().map(|(_, r)| r.area_id.as_str()).collect();
        let missing: Vec<&str> =
            area_ids.iter().filter(|id| !covered.contains(**id)).copied().collect();
        if !missing.is_empty() {
            report.warning(
                "missing-covariates",
                "covariates",
                format!(
                    "{} area(s) have no covariate row and drop out of the statistics: {}",
                    missing.len(),
                    missing.join(", ")
                ),
            );
        }
    }

    // NHS tables
    let gps = match io::read_gps(&config.inputs.nhs.gps) {
        Ok(g) => Some(g),
        Err(e) => {
            report.fatal_finding("parse", "nhs.gps", format!("{e:#}"));
            None
        }
    };
    let patients = match io::read_patients(&config.inputs.nhs.patients) {
        Ok(p) => Some(p),
        Err(e) => {
            report.fatal_finding("parse", "nhs.patients", format!("{e:#}"));
            None
        }
    };
    if let Err(e) = io::read_drugs(&config.inputs.nhs.drugs) {
        report.fatal_finding("parse", "nhs.drugs", format!("{e:#}"));
    }

    if let (Some(areas), Some(patients)) = (&areas, &patients) {
        let area_ids: BTreeSet<&str> = areas.iter().map(|a| a.id.as_str()).collect();
        let unknown: Vec<u64> = patients
            .iter()
            .filter(|(_, r)| !area_ids.contains(r.area_id.as_str()))
            .map(|(line, _)| *line)
            .collect();
        if !unknown.is_empty() {
            report.fatal.push(Finding {
                code: "unknown-area".into(),
                input: "nhs.patients".into(),
                message: "patient rows reference area ids absent from the areas dataset".into(),
                rows: unknown,
            });
        }
    }
    if let (Some(gps), Some(patients)) = (&gps, &patients) {
        let codes: BTreeSet<&str> = gps.iter().map(|(_, g)| g.gp_code.as_str()).collect();
        let orphan: Vec<u64> = patients
            .iter()
            .filter(|(_, r)| !codes.contains(r.gp_code.as_str()))
            .map(|(line, _)| *line)
            .collect();
        if !orphan.is_empty() {
            report.warnings.push(Finding {
                code: "unknown-practice".into(),
                input: "nhs.patients".into(),
                message: "patient rows reference practices absent from the practice table".into(),
                rows: orphan,
            });
        }
    }

    // monthly prescribing extracts
    let listed = config.inputs.nhs.prescriptions.len() as u32;
    if listed == 0 {
        report.fatal_finding("empty", "nhs.prescriptions", "no prescribing files listed");
    } else if listed < config.inputs.nhs.expected_months {
        report.warning(
            "missing-months",
            "nhs.prescriptions",
            format!(
                "{listed} of {} monthly files listed; absent months are not imputed",
                config.inputs.nhs.expected_months
            ),
        );
    }
    let known_codes: Option<BTreeSet<&str>> =
        gps.as_ref().map(|g| g.iter().map(|(_, r)| r.gp_code.as_str()).collect());
    for (k, path) in config.inputs.nhs.prescriptions.iter().enumerate() {
        let label = format!("nhs.prescriptions[{k}]");
        match io::read_prescriptions(path) {
            Ok(rows) => {
                if let Some(codes) = &known_codes {
                    let orphan: Vec<u64> = rows
                        .iter()
                        .filter(|(_, r)| !codes.contains(r.gp_code.as_str()))
                        .map(|(line, _)| *line)
                        .collect();
                    if !orphan.is_empty() {
                        report.warnings.push(Finding {
                            code: "unknown-practice".into(),
                            input: label.clone(),
                            message:
                                "prescription rows reference unknown practices and are quarantined"
                                    .into(),
                            rows: orphan,
                        });
                    }
                }
            }
            Err(e) => report.fatal_finding("parse", &label, format!("{e:#}")),
        }
    }

    // condition lists
    for (name, path) in &config.inputs.conditions {
        let label = format!("conditions.{name}");
        match name.parse::<Condition>() {
            Ok(condition) => {
                if let Err(e) = io::read_condition_list(condition, path) {
                    report.fatal_finding("parse", &label, format!("{e:#}"));
                }
            }
            Err(e) => report.fatal_finding("config", &label, e.to_string()),
        }
    }

    report
}

/// Raster/areas cross-checks: mixed coordinate systems and disjoint extents
/// are both fatal — each makes every zonal statistic silently zero.
fn check_extents(report: &mut ValidationReport, areas: &[AreaUnit], raster_extent: geo::Rect<f64>) {
    let mut combined: Option<geo::Rect<f64>> = None;
    for area in areas {
        if let Ok(b) = bounds(&area.boundary) {
            combined = Some(match combined {
                None => b,
                Some(acc) => geo::Rect::new(
                    Coordinate {
                        x: acc.min().x.min(b.min().x),
                        y: acc.min().y.min(b.min().y),
                    },
                    Coordinate {
                        x: acc.max().x.max(b.max().x),
                        y: acc.max().y.max(b.max().y),
                    },
                ),
            });
        }
    }
    let Some(extent) = combined else { return };
    if crs_mismatch(&extent, &raster_extent) {
        report.fatal_finding(
            "crs-mismatch",
            "areas",
            "area coordinates look geographic (degrees) while the raster is projected, or vice versa",
        );
        return;
    }
    let overlap = extent.min().x <= raster_extent.max().x
        && raster_extent.min().x <= extent.max().x
        && extent.min().y <= raster_extent.max().y
        && raster_extent.min().y <= extent.max().y;
    if !overlap {
        report.fatal_finding(
            "disjoint-extents",
            "areas",
            "area extent does not overlap the raster extent",
        );
    }
}

type Coordinate = geo::Coord<f64>;

fn check_segment_extent(
    report: &mut ValidationReport,
    segments: &[StreetSegment],
    raster_extent: geo::Rect<f64>,
) {
    let mut combined: Option<geo::Rect<f64>> = None;
    for segment in segments {
        if let Some(b) = segment.geometry.bounding_rect() {
            combined = Some(match combined {
                None => b,
                Some(acc) => geo::Rect::new(
                    Coordinate {
                        x: acc.min().x.min(b.min().x),
                        y: acc.min().y.min(b.min().y),
                    },
                    Coordinate {
                        x: acc.max().x.max(b.max().x),
                        y: acc.max().y.max(b.max().y),
                    },
                ),
            });
        }
    }
    let Some(extent) = combined else { return };
    if crs_mismatch(&extent, &raster_extent) {
        report.fatal_finding(
            "crs-mismatch",
            "segments",
            "segment coordinates look geographic (degrees) while the raster is projected, or vice versa",
        );
        return;
    }
    let overlap = extent.min().x <= raster_extent.max().x
        && raster_extent.min().x <= extent.max().x
        && extent.min().y <= raster_extent.max().y
        && raster_extent.min().y <= extent.max().y;
    if !overlap {
        report.fatal_finding(
            "disjoint-extents",
            "segments",
            "segment extent does not overlap the raster extent",
        );
    }
}
