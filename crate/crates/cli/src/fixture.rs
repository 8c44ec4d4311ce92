//! Writes a complete synthetic dataset to disk in every input format the
//! pipeline reads, together with a ready-to-run config file. Used by the
//! integration tests and as a quick way to try the tool end to end.

use std::path::Path;

use anyhow::Result;
use verdant_core::synth::{self, MiniCity};
use verdant_core::{Condition, SpaceKind};

use crate::io::{
    atomic_write, csv_bytes, feature, feature_collection_bytes, fmt_f64, json_f64,
    write_raster_ascii,
};

/// Generates the synthetic town for `seed` and writes it under `dir`.
/// Returns the path of the generated config file.
pub fn write_fixture(seed: u64, dir: &Path) -> Result<std::path::PathBuf> {
    let city = synth::mini_city(seed);
    write_city(&city, seed, dir)
}

/// Writes an already-generated town; split out so tests can reuse the city.
pub fn write_city(city: &MiniCity, seed: u64, dir: &Path) -> Result<std::path::PathBuf> {
    // areas
    let features = city
        .areas
        .iter()
        .map(|a| {
            feature(
                geojson::Value::from(&a.boundary),
                vec![
                    ("id".to_string(), serde_json::Value::String(a.id.clone())),
                    ("kind".to_string(), serde_json::Value::String("ward".into())),
                    ("population".to_string(), json_f64(a.population)),
                ],
            )
        })
        .collect();
    atomic_write(&dir.join("areas.geojson"), &feature_collection_bytes(features))?;

    // parks
    let features = city
        .parks
        .iter()
        .map(|p| {
            feature(
                geojson::Value::from(&p.boundary),
                vec![
                    ("id".to_string(), serde_json::Value::String(p.id.clone())),
                    ("kind".to_string(),
                        serde_json::Value::String(
                            match p.kind {
                                SpaceKind::Park => "park",
                                SpaceKind::Garden => "garden",
                            }
                            .into(),
                        ),
                    ),
                    ("access".to_string(),
                        serde_json::Value::String(
                            match p.access {
                                verdant_core::Access::Public => "public",
                                verdant_core::Access::Restricted => "restricted",
                            }
                            .into(),
                        ),
                    ),
                ],
            )
        })
        .collect();
    atomic_write(&dir.join("parks.geojson"), &feature_collection_bytes(features))?;

    // segments
    let features = city
        .segments
        .iter()
        .map(|s| {
            feature(
                geojson::Value::from(&s.geometry),
                vec![("id".to_string(), serde_json::Value::String(s.id.clone()))],
            )
        })
        .collect();
    atomic_write(&dir.join("segments.geojson"), &feature_collection_bytes(features))?;

    // raster
    atomic_write(&dir.join("green.asc"), &write_raster_ascii(&city.green))?;

    // street images
    let rows: Vec<Vec<String>> = city
        .images
        .iter()
        .map(|img| {
            vec![
                img.image_id.clone(),
                fmt_f64(img.location.x),
                fmt_f64(img.location.y),
                fmt_f64(img.green_fraction),
            ]
        })
        .collect();
    atomic_write(
        &dir.join("images.csv"),
        &csv_bytes(&["image_id", "x", "y", "green_fraction"], &rows)?,
    )?;

    // population grid (cells are squares; the config carries the size)
    let rows: Vec<Vec<String>> = city
        .cells
        .iter()
        .map(|c| {
            vec![
                c.cell_id.clone(),
                fmt_f64(c.centroid.x),
                fmt_f64(c.centroid.y),
                fmt_f64(c.population),
            ]
        })
        .collect();
    atomic_write(
        &dir.join("population.csv"),
        &csv_bytes(&["cell_id", "x", "y", "population"], &rows)?,
    )?;

    // covariates
    let rows: Vec<Vec<String>> = city
        .areas
        .iter()
        .map(|a| {
            let get = |k: &str| a.covariates.get(k).copied().map(fmt_f64).unwrap_or_default();
            vec![
                a.id.clone(),
                get("imd_score"),
                get("building_density"),
                get("median_age"),
                get("white_percent"),
            ]
        })
        .collect();
    atomic_write(
        &dir.join("covariates.csv"),
        &csv_bytes(
            &["area_id", "imd_score", "building_density", "median_age", "white_percent"],
            &rows,
        )?,
    )?;

    // practices
    let rows: Vec<Vec<String>> = city
        .gps
        .iter()
        .map(|gp| {
            vec![
                gp.gp_code.clone(),
                fmt_f64(gp.location.x),
                fmt_f64(gp.location.y),
                "active".to_string(),
            ]
        })
        .collect();
    atomic_write(&dir.join("nhs/gps.csv"), &csv_bytes(&["gp_code", "x", "y", "status"], &rows)?)?;

    // patient residence counts
    let mut rows: Vec<Vec<String>> = Vec::new();
    for gp in &city.gps {
        for (area_id, count) in &gp.patients_by_area {
            rows.push(vec![gp.gp_code.clone(), area_id.clone(), count.to_string()]);
        }
    }
    atomic_write(
        &dir.join("nhs/patients.csv"),
        &csv_bytes(&["gp_code", "area_id", "count"], &rows)?,
    )?;

    // drug reference table: one row per distinct code in the prescriptions
    let mut codes: Vec<&str> =
        city.prescriptions.iter().map(|r| r.bnf_code.as_str()).collect();
    codes.sort_unstable();
    codes.dedup();
    let rows: Vec<Vec<String>> =
        codes.iter().map(|c| vec![c.to_string(), format!("Preparation {c}")]).collect();
    atomic_write(&dir.join("nhs/drugs.csv"), &csv_bytes(&["bnf_code", "name"], &rows)?)?;

    // monthly prescribing extracts: rows dealt round-robin over 12 months,
    // so the yearly sum equals the original table
    let mut months: Vec<Vec<Vec<String>>> = vec![Vec::new(); 12];
    for (k, row) in city.prescriptions.iter().enumerate() {
        months[k % 12].push(vec![
            row.gp_code.clone(),
            row.bnf_code.clone(),
            row.items.to_string(),
            row.quantity.to_string(),
            fmt_f64(row.cost),
        ]);
    }
    let mut prescription_paths = Vec::new();
    for (m, rows) in months.iter().enumerate() {
        let name = format!("nhs/prescriptions_{:02}.csv", m + 1);
        atomic_write(
            &dir.join(&name),
            &csv_bytes(&["gp_code", "bnf_code", "items", "quantity", "cost"], rows)?,
        )?;
        prescription_paths.push(name);
    }

    // condition code lists (the total is implicit, not a file)
    let mut condition_entries = Vec::new();
    for list in &city.conditions {
        if list.condition == Condition::Total {
            continue;
        }
        let name = list.condition.name();
        let rows: Vec<Vec<String>> = list
            .bnf_codes
            .iter()
            .map(|code| vec![code.clone(), format!("{name} agents {code}")])
            .collect();
        let rel = format!("conditions/{name}.csv");
        atomic_write(&dir.join(&rel), &csv_bytes(&["bnf_code", "name"], &rows)?)?;
        condition_entries.push((name.to_string(), rel));
    }

    // config
    let prescriptions_list = prescription_paths
        .iter()
        .map(|p| format!("\"{p}\""))
        .collect::<Vec<_>>()
        .join(", ");
    let condition_lines = condition_entries
        .iter()
        .map(|(name, rel)| format!("{name} = \"{rel}\""))
        .collect::<Vec<_>>()
        .join("\n");
    let config_text = format!(
        r#"# Synthetic-town analysis configuration (generator seed {seed}).
# Paths are relative to this file.

[inputs]
areas = "areas.geojson"
parks = "parks.geojson"
segments = "segments.geojson"
green_raster = "green.asc"
images = "images.csv"
population = "population.csv"
covariates = "covariates.csv"

[inputs.nhs]
drugs = "nhs/drugs.csv"
gps = "nhs/gps.csv"
patients = "nhs/patients.csv"
prescriptions = [{prescriptions_list}]

[inputs.conditions]
{condition_lines}

[params]
# street buffer half-width, meters (the buffer spans twice this)
buffer_half_width_m = 10.0
# metric radius restricting choice to nearby segment pairs, meters
choice_radius_m = 500.0
# path cost model for choice: "angular" or "topological"
choice_mode = "angular"
# endpoints closer than this snap to one junction, meters
snap_tolerance_m = 0.1
# walking budget for the accessibility targets, minutes
walk_budget_min = 5.0
# walking speed, km/h
walk_speed_kmh = 4.8
# side length of a population grid cell, meters
population_cell_m = {cell}
# bootstrap replicates per treatment/condition pair
bootstrap_replicates = 1000
# seed for every stochastic step
seed = {seed}
# greenery columns whose median split defines the treatment groups
treatments = ["g_total_ndvi", "g_onroad_ndvi", "g_onroad_gsv", "g_offroad"]
# locally weighted regression: which treatment column and condition to map
gwr_treatment = "g_onroad_ndvi"
gwr_condition = "total"

[output]
dir = "out"
"#,
        seed = seed,
        cell = fmt_f64(synth::MINI_POP_CELL_M),
    );
    let config_path = dir.join("config.toml");
    atomic_write(&config_path, config_text.as_bytes())?;
    Ok(config_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PipelineConfig;
    use crate::validate::validate;

    #[test]
    fn fixture_validates_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = write_fixture(11, dir.path()).unwrap();
        let config = PipelineConfig::load(&config_path).unwrap();
        let report = validate(&config);
        assert!(report.ok(), "fatal findings: {}", report.to_json());
    }

    #[test]
    fn fixture_files_are_deterministic() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_fixture(23, dir_a.path()).unwrap();
        write_fixture(23, dir_b.path()).unwrap();
        for name in ["areas.geojson", "green.asc", "nhs/patients.csv", "config.toml"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical seeds");
        }
    }
}
