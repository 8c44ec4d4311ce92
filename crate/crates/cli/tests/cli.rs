//! End-to-end behavior of the pipeline binary and library: validation
//! failure modes, exit codes, cache reuse and isolation, manifest
//! contents, and choropleth export rules.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use verdant_cli::config::PipelineConfig;
use verdant_cli::export::{export_choropleth, ramp_color};
use verdant_cli::fixture::write_fixture;
use verdant_cli::io;
use verdant_cli::pipeline::{run, RunManifest};
use verdant_cli::validate::validate;
use verdant_core::prescriptions::Condition;

const BIN: &str = env!("CARGO_BIN_EXE_verdant-cli");

fn load(config_path: &Path) -> PipelineConfig {
    PipelineConfig::load(config_path).expect("fixture config loads")
}

fn output_digests(out_dir: &Path) -> BTreeMap<String, String> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(out_dir).unwrap() {
        let entry = entry.unwrap();
        if !entry.file_type().unwrap().is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().to_string();
        if name == "manifest.json" {
            continue;
        }
        files.insert(name, io::digest_file(&entry.path()).unwrap());
    }
    files
}

fn statuses(manifest: &RunManifest) -> Vec<(String, String)> {
    manifest.stages.iter().map(|s| (s.name.clone(), s.status.clone())).collect()
}

#[test]
fn shipped_diabetes_reference_has_54_codes() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/conditions/diabetes.csv");
    let list = io::read_condition_list(Condition::Diabetes, &path).expect("shipped list parses");
    assert_eq!(list.bnf_codes.len(), 54);
    for code in ["0601022B0", "0601023AA", "0601012V0", "0212000AD", "0601021V0"] {
        assert!(list.bnf_codes.contains(code), "missing {code}");
    }
    assert!(list.bnf_codes.iter().all(|c| c.len() == 9));
}

#[test]
fn validate_reports_unknown_patient_area_with_row_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_fixture(3, dir.path()).unwrap();

    // append a patient row pointing at an area that does not exist
    let patients = dir.path().join("nhs/patients.csv");
    let mut text = std::fs::read_to_string(&patients).unwrap();
    let gp_code = text.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    let bad_line = text.lines().count() as u64 + 1;
    text.push_str(&format!("{gp_code},nowhere,17\n"));
    std::fs::write(&patients, text).unwrap();

    let report = validate(&load(&config_path));
    assert!(!report.ok());
    let finding = report
        .fatal
        .iter()
        .find(|f| f.code == "unknown-area" && f.input == "nhs.patients")
        .expect("unknown patient area must be fatal");
    assert_eq!(finding.rows, vec![bad_line], "finding must carry the offending row number");

    // and the binary exits 1 with the machine-readable report on stdout
    let out = Command::new(BIN)
        .args(["validate", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).expect("JSON report");
    assert!(!parsed["fatal"].as_array().unwrap().is_empty());
}

#[test]
fn validate_detects_mismatched_coordinate_systems() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_fixture(4, dir.path()).unwrap();

    // move every area coordinate into degree range away from the origin
    // while the raster and the rest of the bundle stay in projected metres
    let areas = dir.path().join("areas.geojson");
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&areas).unwrap()).unwrap();
    fn scale(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Array(items) => items.iter_mut().for_each(scale),
            serde_json::Value::Number(n) => {
                *v = serde_json::json!(n.as_f64().unwrap() / 20_000.0 - 50.0);
            }
            _ => {}
        }
    }
    for feature in doc["features"].as_array_mut().unwrap() {
        scale(&mut feature["geometry"]["coordinates"]);
    }
    std::fs::write(&areas, serde_json::to_string(&doc).unwrap()).unwrap();

    let report = validate(&load(&config_path));
    assert!(!report.ok());
    assert!(
        report.fatal.iter().any(|f| f.code == "crs-mismatch"),
        "degree-range areas against a metre raster must be fatal: {}",
        report.to_json()
    );
}

#[test]
fn run_exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_fixture(5, dir.path()).unwrap();
    let config_arg = config_path.to_str().unwrap();

    // 0: full run, then a fully cached rerun
    let out = Command::new(BIN).args(["run", "--config", config_arg]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches("computed").count(), 4, "{text}");

    let out = Command::new(BIN).args(["run", "--config", config_arg]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches("cached").count(), 4, "rerun must be a no-op: {text}");

    // 2: a stage failure (covariates emptied out from under the stats stage)
    let covariates = dir.path().join("covariates.csv");
    let original = std::fs::read(&covariates).unwrap();
    let header = String::from_utf8_lossy(&original).lines().next().unwrap().to_string();
    let mut sabotaged = format!("{header}\n");
    for line in String::from_utf8_lossy(&original).lines().skip(1) {
        let id = line.split(',').next().unwrap();
        sabotaged.push_str(&format!("{id},,,,\n"));
    }
    std::fs::write(&covariates, sabotaged).unwrap();
    let out = Command::new(BIN).args(["run", "--config", config_arg]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("failed"), "{text}");
    assert_eq!(text.matches("cached").count(), 3, "completed caches must survive: {text}");
    std::fs::write(&covariates, original).unwrap();

    // 1: fatal validation (an input file disappears)
    std::fs::remove_file(dir.path().join("green.asc")).unwrap();
    let out = Command::new(BIN).args(["run", "--config", config_arg]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).expect("JSON report");
    assert!(!parsed["fatal"].as_array().unwrap().is_empty());

    // 2: requesting a stage whose dependencies were never produced
    let dir2 = tempfile::tempdir().unwrap();
    let config2 = write_fixture(5, dir2.path()).unwrap();
    let out = Command::new(BIN)
        .args(["run", "--config", config2.to_str().unwrap(), "--stages", "stats"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("blocked"));

    // 1: unknown stage name
    let out = Command::new(BIN)
        .args(["run", "--config", config2.to_str().unwrap(), "--stages", "nonsense"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn deleted_cache_entries_are_rebuilt_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = load(&write_fixture(6, dir.path()).unwrap());
    let out_dir = config.output.dir.clone();
    run(&config, &[]).unwrap();
    let before = output_digests(&out_dir);

    // losing a product forces exactly that stage to recompute, bit-for-bit
    std::fs::remove_file(out_dir.join("metrics.csv")).unwrap();
    let manifest = run(&config, &[]).unwrap();
    assert_eq!(
        statuses(&manifest),
        [
            ("metrics", "computed"),
            ("targets", "cached"),
            ("prescriptions", "cached"),
            ("stats", "cached")
        ]
        .map(|(a, b)| (a.to_string(), b.to_string()))
    );
    assert_eq!(before, output_digests(&out_dir));

    // losing a stamp file does the same
    std::fs::remove_file(out_dir.join(".cache/stats.json")).unwrap();
    let manifest = run(&config, &[]).unwrap();
    assert_eq!(manifest.stages[3].status, "computed");
    assert_eq!(before, output_digests(&out_dir));

    // no write-ahead temporaries may survive a run
    for entry in std::fs::read_dir(&out_dir).unwrap() {
        let name = entry.unwrap().file_name().to_string_lossy().to_string();
        assert!(!name.ends_with(".tmp~"), "leftover temporary {name}");
    }
}

#[test]
fn covariate_edit_recomputes_only_the_stats_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = load(&write_fixture(7, dir.path()).unwrap());
    let out_dir = config.output.dir.clone();
    run(&config, &[]).unwrap();
    let before = output_digests(&out_dir);

    let covariates = dir.path().join("covariates.csv");
    let text = std::fs::read_to_string(&covariates).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut parts: Vec<String> = lines[1].split(',').map(String::from).collect();
    parts[1] = format!("{}", parts[1].parse::<f64>().unwrap() + 3.5);
    lines[1] = parts.join(",");
    std::fs::write(&covariates, lines.join("\n") + "\n").unwrap();

    let manifest = run(&config, &[]).unwrap();
    assert_eq!(
        statuses(&manifest),
        [
            ("metrics", "cached"),
            ("targets", "cached"),
            ("prescriptions", "cached"),
            ("stats", "computed")
        ]
        .map(|(a, b)| (a.to_string(), b.to_string()))
    );
    let after = output_digests(&out_dir);
    assert_eq!(before["metrics.csv"], after["metrics.csv"]);
    assert_eq!(before["targets.csv"], after["targets.csv"]);
    assert_eq!(before["prescriptions.csv"], after["prescriptions.csv"]);
    assert_ne!(before["ate.csv"], after["ate.csv"], "edited covariates must move the estimates");
}

#[test]
fn seed_override_recomputes_only_the_stats_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = load(&write_fixture(8, dir.path()).unwrap());
    run(&config, &[]).unwrap();
    let before = output_digests(&config.output.dir);

    config.params.seed = 99;
    let manifest = run(&config, &[]).unwrap();
    assert_eq!(manifest.stages[0].status, "cached");
    assert_eq!(manifest.stages[3].status, "computed");
    let after = output_digests(&config.output.dir);
    assert_eq!(before["metrics.csv"], after["metrics.csv"]);
    assert_ne!(before["ate.csv"], after["ate.csv"], "a new seed must redraw the bootstrap");
}

#[test]
fn manifest_records_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = load(&write_fixture(9, dir.path()).unwrap());
    let manifest = run(&config, &[]).unwrap();

    assert_eq!(manifest.software_version, env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest.config_hash.len(), 64);
    assert!(manifest.config_hash.chars().all(|c| c.is_ascii_hexdigit()));
    assert!(manifest.input_digests.len() >= 10);
    for label in ["areas", "green_raster", "nhs.patients", "nhs.prescriptions[0]"] {
        assert!(manifest.input_digests.contains_key(label), "missing digest for {label}");
    }
    assert!(manifest.input_digests.keys().any(|k| k.starts_with("conditions.")));
    assert_eq!(manifest.stages.len(), 4);
    for stage in &manifest.stages {
        assert_eq!(stage.status, "computed");
        assert!(!stage.outputs.is_empty());
        assert_eq!(stage.key.len(), 64);
    }

    // identical manifest on disk, modulo the timing fields
    let on_disk = RunManifest::load(&config.output.dir.join("manifest.json")).unwrap();
    assert_eq!(on_disk.config_hash, manifest.config_hash);
    assert_eq!(statuses(&on_disk), statuses(&manifest));
}

#[test]
fn share_treatments_flow_through_the_stats_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = load(&write_fixture(42, dir.path()).unwrap());
    config.params.treatments = vec!["who_share".to_string()];
    let manifest = run(&config, &[]).unwrap();
    assert!(!manifest.any_failed(), "{manifest:?}");
    let ate = std::fs::read_to_string(config.output.dir.join("ate.csv")).unwrap();
    assert!(
        ate.lines().skip(1).all(|l| l.starts_with("who_share,")),
        "estimates must be for the configured share treatment: {ate}"
    );
    assert!(ate.lines().count() > 1, "share treatment produced no estimates");

    // a share column whose median equals its maximum cannot be split into two
    // groups; the stage must finish with a warning per pair instead of failing
    let dir = tempfile::tempdir().unwrap();
    let mut config = load(&write_fixture(42, dir.path()).unwrap());
    config.params.treatments = vec!["esa_who_share".to_string()];
    let manifest = run(&config, &[]).unwrap();
    assert!(!manifest.any_failed(), "{manifest:?}");
    let stats = manifest.stages.iter().find(|s| s.name == "stats").unwrap();
    assert!(
        stats.warnings.iter().any(|w| w.contains("median split produced one group")),
        "degenerate split must be reported: {:?}",
        stats.warnings
    );
    let ate = std::fs::read_to_string(config.output.dir.join("ate.csv")).unwrap();
    assert_eq!(ate.lines().count(), 1, "no estimable pairs, header only: {ate}");
}

fn two_area_scenario(root: &Path) -> PipelineConfig {
    // two unit squares side by side, everything else unused by export
    let features = vec![
        io::feature(
            geojson::Value::from(&geo::MultiPolygon(vec![geo::Polygon::new(
                geo::LineString::from(vec![
                    (0.0, 0.0),
                    (100.0, 0.0),
                    (100.0, 100.0),
                    (0.0, 100.0),
                    (0.0, 0.0),
                ]),
                vec![],
            )])),
            vec![
                ("id".to_string(), serde_json::Value::String("a".into())),
                ("kind".to_string(), serde_json::Value::String("ward".into())),
                ("population".to_string(), serde_json::json!(100.0)),
            ],
        ),
        io::feature(
            geojson::Value::from(&geo::MultiPolygon(vec![geo::Polygon::new(
                geo::LineString::from(vec![
                    (100.0, 0.0),
                    (200.0, 0.0),
                    (200.0, 100.0),
                    (100.0, 100.0),
                    (100.0, 0.0),
                ]),
                vec![],
            )])),
            vec![
                ("id".to_string(), serde_json::Value::String("b".into())),
                ("kind".to_string(), serde_json::Value::String("ward".into())),
                ("population".to_string(), serde_json::json!(100.0)),
            ],
        ),
    ];
    let areas = root.join("areas.geojson");
    io::atomic_write(&areas, &io::feature_collection_bytes(features)).unwrap();
    let out = root.join("out");
    std::fs::create_dir_all(&out).unwrap();

    let mut config_text = String::new();
    config_text.push_str("[inputs]\n");
    for key in ["parks", "segments", "images", "population", "covariates"] {
        config_text.push_str(&format!("{key} = \"unused\"\n"));
    }
    config_text.push_str("areas = \"areas.geojson\"\ngreen_raster = \"unused\"\n");
    config_text.push_str("[inputs.nhs]\ndrugs = \"unused\"\ngps = \"unused\"\n");
    config_text.push_str("patients = \"unused\"\nprescriptions = [\"unused\"]\n");
    config_text.push_str("[inputs.conditions]\n[output]\ndir = \"out\"\n");
    let config_path = root.join("config.toml");
    std::fs::write(&config_path, config_text).unwrap();
    PipelineConfig::load(&config_path).unwrap()
}

fn path_fills(svg: &str) -> Vec<(String, String)> {
    // (fill, title) per area path, in document order
    svg.split("<path d=")
        .skip(1)
        .filter_map(|chunk| {
            let fill = chunk.split("fill=\"").nth(1)?.split('"').next()?.to_string();
            let title = chunk.split("<title>").nth(1)?.split("</title>").next()?.to_string();
            Some((fill, title))
        })
        .collect()
}

#[test]
fn export_extremes_land_on_the_ramp_ends() {
    let dir = tempfile::tempdir().unwrap();
    let config = two_area_scenario(dir.path());
    std::fs::write(
        config.output.dir.join("metrics.csv"),
        "area_id,g_total_ndvi,g_onroad_ndvi,g_onroad_gsv,g_offroad,warnings\na,0,0,,0,\nb,1,0,,0,\n",
    )
    .unwrap();
    export_choropleth(&config, Some("g_total_ndvi")).unwrap();

    let svg =
        std::fs::read_to_string(config.output.dir.join("choropleth_g_total_ndvi.svg")).unwrap();
    let fills = path_fills(&svg);
    assert_eq!(fills.len(), 2);
    assert_eq!(fills[0], ("#f7fcf5".to_string(), "a: 0".to_string()));
    assert_eq!(fills[1], ("#00441b".to_string(), "b: 1".to_string()));

    let geojson: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(config.output.dir.join("choropleth_g_total_ndvi.geojson"))
            .unwrap(),
    )
    .unwrap();
    let zs: Vec<f64> = geojson["features"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["properties"]["z"].as_f64().unwrap())
        .collect();
    assert!((zs[0] + zs[1]).abs() < 1e-12, "two-point z-scores must be symmetric: {zs:?}");
}

#[test]
fn export_constant_column_fills_uniformly_and_missing_areas_are_grey() {
    let dir = tempfile::tempdir().unwrap();
    let config = two_area_scenario(dir.path());
    // a constant value for one area, nothing for the other
    std::fs::write(
        config.output.dir.join("metrics.csv"),
        "area_id,g_total_ndvi,g_onroad_ndvi,g_onroad_gsv,g_offroad,warnings\na,0.4,0,,0,\n",
    )
    .unwrap();
    export_choropleth(&config, Some("g_total_ndvi")).unwrap();
    let svg =
        std::fs::read_to_string(config.output.dir.join("choropleth_g_total_ndvi.svg")).unwrap();
    let fills = path_fills(&svg);
    assert_eq!(fills[0].0, ramp_color(0.5), "single-value column must sit mid-ramp");
    assert_eq!(fills[1], ("#d9d9d9".to_string(), "b: no data".to_string()));

    // truly constant across both areas: identical mid-ramp fill everywhere
    std::fs::write(
        config.output.dir.join("metrics.csv"),
        "area_id,g_total_ndvi,g_onroad_ndvi,g_onroad_gsv,g_offroad,warnings\na,0.4,0,,0,\nb,0.4,0,,0,\n",
    )
    .unwrap();
    export_choropleth(&config, Some("g_total_ndvi")).unwrap();
    let svg =
        std::fs::read_to_string(config.output.dir.join("choropleth_g_total_ndvi.svg")).unwrap();
    let fills = path_fills(&svg);
    assert_eq!(fills[0].0, fills[1].0, "constant column must fill uniformly");
    assert_eq!(fills[0].0, ramp_color(0.5));
}

#[test]
fn export_svg_matches_the_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = two_area_scenario(dir.path());
    std::fs::write(
        config.output.dir.join("metrics.csv"),
        "area_id,g_total_ndvi,g_onroad_ndvi,g_onroad_gsv,g_offroad,warnings\na,0,0,,0,\nb,1,0,,0,\n",
    )
    .unwrap();
    export_choropleth(&config, Some("g_total_ndvi")).unwrap();
    let rendered = std::fs::read(config.output.dir.join("choropleth_g_total_ndvi.svg")).unwrap();
    let golden_path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/two_areas_golden.svg");
    let golden = std::fs::read(&golden_path).expect("golden file is checked in");
    assert_eq!(
        rendered,
        golden,
        "rendered SVG deviates from {} — if the change is intentional, regenerate the golden file",
        golden_path.display()
    );
}
