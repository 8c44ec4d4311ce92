//! Stage orchestration. Each stage's cache key digests everything that can
//! change its output — the relevant parameters, the input file contents,
//! and the keys of upstream stages — so a rerun with unchanged inputs is a
//! no-op, any edit recomputes exactly the stages it touches, and a deleted
//! product is rebuilt byte-identically. Orchestration itself is
//! single-threaded; stages parallelize internally.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::io::{atomic_write, digest_bytes, digest_file};
use crate::stages::{run_stage, stage_dependencies, STAGE_NAMES};

/// Bump when a stage's output format changes so stale caches never leak
/// into new runs.
const CACHE_FORMAT_VERSION: u32 = 1;

/// Per-stage cache stamp stored under `.cache/`; a stage is reusable when
/// its recorded key matches the freshly computed one and every listed
/// output still hashes to its recorded digest.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageStamp {
    stage: String,
    key: String,
    /// Relative output path -> content digest.
    outputs: BTreeMap<String, String>,
    warnings: Vec<String>,
}

/// What one stage did during a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// computed | cached | failed | blocked | skipped
    pub status: String,
    /// Wall-clock seconds; informational only, excluded from any
    /// determinism comparison.
    pub seconds: f64,
    pub key: String,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// The record of one `run` invocation, written to `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    /// Digest of the effective configuration (after CLI overrides).
    pub config_hash: String,
    /// Input label -> content digest for every configured input file.
    pub input_digests: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn any_failed(&self) -> bool {
        self.stages.iter().any(|s| matches!(s.status.as_str(), "failed" | "blocked"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
    }
}

/// The parameter subset that can change a stage's output; anything else
/// (e.g. the output directory) stays out of the key so renames do not
/// invalidate caches.
fn stage_params(config: &PipelineConfig, stage: &str) -> serde_json::Value {
    let p = &config.params;
    match stage {
        "metrics" => serde_json::json!({
            "buffer_half_width_m": p.buffer_half_width_m,
            "choice_radius_m": p.choice_radius_m,
            "choice_mode": p.choice_mode,
            "snap_tolerance_m": p.snap_tolerance_m,
            "ndvi_denominator": p.ndvi_denominator,
            "gsv_mode": p.gsv_mode,
        }),
        "targets" => serde_json::json!({
            "snap_tolerance_m": p.snap_tolerance_m,
            "walk_budget_min": p.walk_budget_min,
            "walk_speed_kmh": p.walk_speed_kmh,
            "population_cell_m": p.population_cell_m,
        }),
        "prescriptions" => serde_json::json!({
            "expected_months": config.inputs.nhs.expected_months,
        }),
        "stats" => serde_json::json!({
            "treatments": p.treatments,
            "bootstrap_replicates": p.bootstrap_replicates,
            "seed": p.seed,
            "gwr_treatment": p.gwr_treatment,
            "gwr_condition": p.gwr_condition,
            "gwr_bandwidth": p.gwr_bandwidth,
        }),
        _ => serde_json::Value::Null,
    }
}

/// Which configured input files feed a stage, by digest-map label prefix.
fn stage_input_labels(stage: &str) -> Vec<&'static str> {
    match stage {
        "metrics" => vec!["areas", "parks", "segments", "green_raster", "images"],
        "targets" => vec!["areas", "parks", "segments", "green_raster", "population"],
        "prescriptions" => {
            vec!["areas", "nhs.drugs", "nhs.gps", "nhs.patients", "nhs.prescriptions", "conditions"]
        }
        "stats" => vec!["areas", "covariates"],
        _ => vec![],
    }
}

fn stage_key(
    config: &PipelineConfig,
    stage: &str,
    input_digests: &BTreeMap<String, String>,
    upstream_keys: &BTreeMap<String, String>,
) -> String {
    let labels = stage_input_labels(stage);
    let inputs: BTreeMap<&String, &String> = input_digests
        .iter()
        .filter(|(label, _)| {
            labels.iter().any(|p| label.as_str() == *p || label.starts_with(&format!("{p}[")) || label.starts_with(&format!("{p}.")))
        })
        .collect();
    let upstream: BTreeMap<&str, &String> = stage_dependencies(config, stage)
        .iter()
        .filter_map(|dep| upstream_keys.get(*dep).map(|k| (*dep, k)))
        .collect();
    let material = serde_json::json!({
        "format": CACHE_FORMAT_VERSION,
        "stage": stage,
        "params": stage_params(config, stage),
        "inputs": inputs,
        "upstream": upstream,
    });
    digest_bytes(material.to_string().as_bytes())
}

fn stamp_path(out_dir: &Path, stage: &str) -> PathBuf {
    out_dir.join(".cache").join(format!("{stage}.json"))
}

/// A stamp is only trusted when its key matches and every output file still
/// carries the recorded digest.
fn cache_valid(out_dir: &Path, stage: &str, key: &str) -> Option<StageStamp> {
    let text = std::fs::read_to_string(stamp_path(out_dir, stage)).ok()?;
    let stamp: StageStamp = serde_json::from_str(&text).ok()?;
    if stamp.stage != stage || stamp.key != key {
        return None;
    }
    for (rel, digest) in &stamp.outputs {
        let actual = digest_file(&out_dir.join(rel)).ok()?;
        if actual != *digest {
            return None;
        }
    }
    Some(stamp)
}

/// Expands and orders the requested stage list; empty means everything.
fn plan(requested: &[String]) -> Result<Vec<&'static str>> {
    if requested.is_empty() {
        return Ok(STAGE_NAMES.to_vec());
    }
    let mut chosen = Vec::new();
    for name in requested {
        match STAGE_NAMES.iter().find(|s| **s == name.as_str()) {
            Some(s) => {
                if !chosen.contains(s) {
                    chosen.push(*s);
                }
            }
            None => bail!(
                "unknown stage {name:?}; expected a comma-separated subset of {}",
                STAGE_NAMES.join(", ")
            ),
        }
    }
    // dependency order regardless of the order given
    Ok(STAGE_NAMES.iter().copied().filter(|s| chosen.contains(s)).collect())
}

/// Executes the requested stages (all four when `requested` is empty) and
/// writes `manifest.json`. Every product is written atomically; a stage
/// failure blocks its dependents but leaves completed caches intact.
pub fn run(config: &PipelineConfig, requested: &[String]) -> Result<RunManifest> {
    let selected = plan(requested)?;
    let out_dir = &config.output.dir;
    std::fs::create_dir_all(out_dir.join(".cache"))
        .with_context(|| format!("cannot create {}", out_dir.display()))?;

    let mut input_digests = BTreeMap::new();
    for (label, path) in config.input_files() {
        let digest = digest_file(&path)
            .with_context(|| format!("cannot hash input {label} ({})", path.display()))?;
        input_digests.insert(label, digest);
    }
    let config_hash = digest_bytes(
        serde_json::to_string(config).context("config serializes")?.as_bytes(),
    );

    let mut upstream_keys: BTreeMap<String, String> = BTreeMap::new();
    let mut statuses: BTreeMap<&str, String> = BTreeMap::new();
    let mut records = Vec::new();

    for stage in STAGE_NAMES {
        let key = stage_key(config, stage, &input_digests, &upstream_keys);
        upstream_keys.insert(stage.to_string(), key.clone());
        let mut record = StageRecord {
            name: stage.to_string(),
            status: String::new(),
            seconds: 0.0,
            key: key.clone(),
            outputs: Vec::new(),
            error: None,
            warnings: Vec::new(),
        };

        if !selected.contains(&stage) {
            record.status = "skipped".into();
            statuses.insert(stage, record.status.clone());
            records.push(record);
            continue;
        }

        // dependencies must be fresh: either computed/cached this run, or
        // cache-valid from an earlier one
        let mut blocked_by = None;
        for dep in stage_dependencies(config, stage) {
            let fresh = match statuses.get(dep).map(String::as_str) {
                Some("computed") | Some("cached") => true,
                Some("failed") | Some("blocked") => false,
                // skipped or absent: fall back to its cache
                _ => cache_valid(out_dir, dep, &upstream_keys[dep]).is_some(),
            };
            if !fresh {
                blocked_by = Some(dep);
                break;
            }
        }
        if let Some(dep) = blocked_by {
            record.status = "blocked".into();
            record.error = Some(format!(
                "dependency stage {dep} has not produced up-to-date outputs; run it first"
            ));
            statuses.insert(stage, record.status.clone());
            records.push(record);
            continue;
        }

        if let Some(stamp) = cache_valid(out_dir, stage, &key) {
            record.status = "cached".into();
            record.outputs = stamp.outputs.keys().cloned().collect();
            record.warnings = stamp.warnings;
            statuses.insert(stage, record.status.clone());
            records.push(record);
            continue;
        }

        let started = Instant::now();
        match run_stage(config, stage, out_dir) {
            Ok(products) => {
                record.seconds = started.elapsed().as_secs_f64();
                let mut outputs = BTreeMap::new();
                for (rel, bytes) in &products.files {
                    atomic_write(&out_dir.join(rel), bytes)?;
                    outputs.insert(rel.clone(), digest_bytes(bytes));
                }
                let stamp = StageStamp {
                    stage: stage.to_string(),
                    key: key.clone(),
                    outputs: outputs.clone(),
                    warnings: products.warnings.clone(),
                };
                atomic_write(
                    &stamp_path(out_dir, stage),
                    serde_json::to_string_pretty(&stamp)?.as_bytes(),
                )?;
                record.status = "computed".into();
                record.outputs = outputs.into_keys().collect();
                record.warnings = products.warnings;
            }
            Err(e) => {
                record.seconds = started.elapsed().as_secs_f64();
                record.status = "failed".into();
                record.error = Some(format!("{e:#}"));
            }
        }
        statuses.insert(stage, record.status.clone());
        records.push(record);
    }

    let manifest = RunManifest {
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash,
        input_digests,
        stages: records,
    };
    atomic_write(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)
            .context("manifest serializes")?
            .as_bytes(),
    )?;
    Ok(manifest)
}

/// Convenience for tests and the report verb.
pub fn manifest_path(config: &PipelineConfig) -> PathBuf {
    config.output.dir.join("manifest.json")
}
