//! Plain-text run report: stage statuses and timings from the manifest,
//! warning counts, headline numbers from each results table, and the
//! estimated prescription reductions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use crate::config::{PipelineConfig, METRIC_COLUMNS, SHARE_COLUMNS};
use crate::io::fmt_f64;
use crate::pipeline::{manifest_path, RunManifest};
use crate::stages::read_column_table;

fn mean_of(table: &BTreeMap<String, BTreeMap<String, Option<f64>>>, column: &str) -> Option<f64> {
    let values: Vec<f64> =
        table.values().filter_map(|row| row.get(column).copied().flatten()).collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn push_table_means(
    out: &mut String,
    heading: &str,
    path: &Path,
    columns: &[&str],
) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let table = read_column_table(path, "area_id")?;
    let _ = writeln!(out, "{heading} ({} areas)", table.len());
    for column in columns {
        match mean_of(&table, column) {
            Some(m) => {
                let _ = writeln!(out, "  mean {column}: {}", fmt_f64(m));
            }
            None => {
                let _ = writeln!(out, "  mean {column}: no data");
            }
        }
    }
    Ok(())
}

/// Builds the report text for the latest run in the configured output
/// directory.
pub fn render(config: &PipelineConfig) -> Result<String> {
    let out_dir = &config.output.dir;
    let manifest = RunManifest::load(&manifest_path(config)).with_context(|| {
        format!("no manifest in {}; run the pipeline before reporting", out_dir.display())
    })?;

    let mut out = String::new();
    let _ = writeln!(out, "run report — {}", out_dir.display());
    let _ = writeln!(out, "version {}  config {}", manifest.software_version, &manifest.config_hash[..12]);
    let _ = writeln!(out);
    let _ = writeln!(out, "stages:");
    for stage in &manifest.stages {
        let timing = if stage.status == "computed" {
            format!("  {:.2}s", stage.seconds)
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "  {:<14} {:<9}{}  ({} outputs, {} warnings)",
            stage.name,
            stage.status,
            timing,
            stage.outputs.len(),
            stage.warnings.len()
        );
        if let Some(err) = &stage.error {
            let _ = writeln!(out, "    error: {err}");
        }
    }
    let warning_total: usize = manifest.stages.iter().map(|s| s.warnings.len()).sum();
    let _ = writeln!(out);
    let _ = writeln!(out, "warnings: {warning_total}");
    for stage in &manifest.stages {
        for w in &stage.warnings {
            let _ = writeln!(out, "  [{}] {w}", stage.name);
        }
    }
    let _ = writeln!(out);

    push_table_means(&mut out, "greenery metrics", &out_dir.join("metrics.csv"), &METRIC_COLUMNS)?;
    push_table_means(
        &mut out,
        "walking-target shares",
        &out_dir.join("targets.csv"),
        &SHARE_COLUMNS,
    )?;

    let ate_path = out_dir.join("ate.csv");
    if ate_path.exists() {
        let mut reader = csv::Reader::from_path(&ate_path)?;
        let headers = reader.headers()?.clone();
        let idx = |name: &str| headers.iter().position(|h| h == name);
        let (t_i, c_i, ate_i, sig_i) = (
            idx("treatment"),
            idx("condition"),
            idx("ate"),
            idx("significant"),
        );
        let mut total = 0usize;
        let mut lines = Vec::new();
        for record in reader.records() {
            let record = record?;
            total += 1;
            let get = |i: Option<usize>| i.and_then(|i| record.get(i)).unwrap_or("");
            if get(sig_i) == "true" {
                lines.push(format!(
                    "  {} on {}: ate {}",
                    get(t_i),
                    get(c_i),
                    get(ate_i)
                ));
            }
        }
        let _ = writeln!(out, "treatment effects: {} pairs, {} significant", total, lines.len());
        for line in lines {
            let _ = writeln!(out, "{line}");
        }
    }

    let red_path = out_dir.join("reductions.csv");
    if red_path.exists() {
        let mut reader = csv::Reader::from_path(&red_path)?;
        let headers = reader.headers()?.clone();
        let idx = |name: &str| headers.iter().position(|h| h == name);
        let (t_i, c_i, q_i, cost_i) = (
            idx("treatment"),
            idx("condition"),
            idx("quantity_reduction"),
            idx("cost_reduction"),
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "projected prescription reductions:");
        for record in reader.records() {
            let record = record?;
            let get = |i: Option<usize>| i.and_then(|i| record.get(i)).unwrap_or("");
            let _ = writeln!(
                out,
                "  {} on {}: quantity {}, cost {}",
                get(t_i),
                get(c_i),
                get(q_i),
                get(cost_i)
            );
        }
    }

    Ok(out)
}
