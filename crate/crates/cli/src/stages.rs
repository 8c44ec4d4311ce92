//! The four pipeline stages. Each stage reads its inputs, computes, and
//! returns its products as named in-memory files; the pipeline layer owns
//! writing, caching, and ordering. Stage output is a pure function of the
//! declared inputs — nothing here reads clocks, environment, or thread
//! timing — which is what makes byte-identical reruns possible.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use geo::Centroid;
use verdant_core::{
    aggregate_targets, area_rates, binarize_treatment, build_design, build_graph, choice,
    compliance_flags, greenery_vector, gwr_fit, normalize_scores, psm_ate, public_greenery,
    reduction_projection, AreaPrescriptionRate, Condition, ConditionList,
    DesignMatrix, GwrKernel, MetricConfig, RoadContext,
};

use crate::config::{PipelineConfig, CONFOUNDERS, METRIC_COLUMNS, SHARE_COLUMNS};
use crate::io;

/// What a stage hands back: files to write under the output directory plus
/// everything worth flagging to a human.
#[derive(Debug, Default)]
pub struct StageProducts {
    pub files: Vec<(String, Vec<u8>)>,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// metrics stage

/// Street-level greenery scores: choice weights over the street network,
/// then the four per-area measures (total cover, on-road by raster, on-road
/// by imagery, off-road).
pub fn metrics_stage(config: &PipelineConfig) -> Result<StageProducts> {
    let params = &config.params;
    let areas = io::read_areas(&config.inputs.areas)?;
    let parks = io::read_parks(&config.inputs.parks)?;
    let segments = io::read_segments(&config.inputs.segments)?;
    let raster = io::read_raster(&config.inputs.green_raster)?;
    let images = io::read_images(&config.inputs.images)?;

    let graph = build_graph(segments, params.snap_tolerance_m)?;
    let scores = choice(&graph, params.choice_radius_m, params.choice_mode)?;
    let normalized = normalize_scores(&scores.w);

    let public = public_greenery(&raster, &parks);
    let ctx = RoadContext::new(&graph.segments, params.buffer_half_width_m, &public)?;
    let metric_config =
        MetricConfig { ndvi_denominator: params.ndvi_denominator, gsv_mode: params.gsv_mode };

    let mut products = StageProducts::default();
    let mut metric_rows = Vec::with_capacity(areas.len());
    for area in &areas {
        let mut area_warnings = Vec::new();
        let vector = greenery_vector(
            area,
            &raster,
            &ctx,
            &images,
            &scores,
            &metric_config,
            &mut area_warnings,
        )
        .with_context(|| format!("area {}", area.id))?;
        metric_rows.push(vec![
            vector.area_id.clone(),
            io::fmt_f64(vector.g_total_ndvi),
            io::fmt_f64(vector.g_onroad_ndvi),
            io::fmt_opt(vector.g_onroad_gsv),
            io::fmt_f64(vector.g_offroad),
            area_warnings.join("; "),
        ]);
        products.warnings.extend(area_warnings);
    }
    products.files.push((
        "metrics.csv".to_string(),
        io::csv_bytes(
            &["area_id", "g_total_ndvi", "g_onroad_ndvi", "g_onroad_gsv", "g_offroad", "warnings"],
            &metric_rows,
        )?,
    ));

    let choice_rows: Vec<Vec<String>> = graph
        .segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            vec![
                s.id.clone(),
                io::fmt_f64(scores.c[i]),
                io::fmt_f64(scores.w[i]),
                io::fmt_f64(normalized[i]),
            ]
        })
        .collect();
    products.files.push((
        "choice.csv".to_string(),
        io::csv_bytes(&["segment_id", "c_raw", "w", "normalized_0_100"], &choice_rows)?,
    ));

    let features: Vec<geojson::Feature> = graph
        .segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            io::feature(
                geojson::Value::from(&s.geometry),
                vec![
                    ("segment_id".to_string(), serde_json::Value::String(s.id.clone())),
                    ("c_raw".to_string(), io::json_f64(scores.c[i])),
                    ("w".to_string(), io::json_f64(scores.w[i])),
                    ("normalized_0_100".to_string(), io::json_f64(normalized[i])),
                ],
            )
        })
        .collect();
    products
        .files
        .push(("choice.geojson".to_string(), io::feature_collection_bytes(features)));
    Ok(products)
}

// ---------------------------------------------------------------------------
// targets stage

/// Walking-accessibility targets: per-cell compliance flags, then
/// population-weighted shares per area.
pub fn targets_stage(config: &PipelineConfig) -> Result<StageProducts> {
    let params = &config.params;
    let areas = io::read_areas(&config.inputs.areas)?;
    let parks = io::read_parks(&config.inputs.parks)?;
    let segments = io::read_segments(&config.inputs.segments)?;
    let raster = io::read_raster(&config.inputs.green_raster)?;
    let cells = io::read_population(&config.inputs.population, params.population_cell_m)?;

    let graph = build_graph(segments, params.snap_tolerance_m)?;
    let mut products = StageProducts::default();
    let flags = compliance_flags(
        &cells,
        &graph,
        &parks,
        &raster,
        params.walk_budget_min,
        params.walk_speed_kmh,
        &mut products.warnings,
    )?;
    let results = aggregate_targets(&cells, &flags, &areas, &mut products.warnings)?;

    let flag_rows: Vec<Vec<String>> = flags
        .iter()
        .map(|f| {
            vec![
                f.cell_id.clone(),
                f.who.to_string(),
                f.esa_who.to_string(),
                f.ne.to_string(),
            ]
        })
        .collect();
    products.files.push((
        "target_flags.csv".to_string(),
        io::csv_bytes(&["cell_id", "who", "esa_who", "ne"], &flag_rows)?,
    ));

    let share_rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.area_id.clone(),
                io::fmt_opt(r.who_share),
                io::fmt_opt(r.esa_who_share),
                io::fmt_opt(r.ne_share),
            ]
        })
        .collect();
    products.files.push((
        "targets.csv".to_string(),
        io::csv_bytes(&["area_id", "who_share", "esa_who_share", "ne_share"], &share_rows)?,
    ));
    Ok(products)
}

// ---------------------------------------------------------------------------
// prescriptions stage

/// Condition lists in canonical condition order, read from the configured
/// files, with the implicit all-prescriptions total appended.
fn load_condition_lists(config: &PipelineConfig) -> Result<Vec<ConditionList>> {
    let mut lists = Vec::new();
    for condition in Condition::ALL {
        if condition == Condition::Total {
            continue;
        }
        if let Some(path) = config.inputs.conditions.get(condition.name()) {
            lists.push(io::read_condition_list(condition, path)?);
        }
    }
    lists.push(ConditionList::new(Condition::Total, Vec::<String>::new()));
    Ok(lists)
}

/// Practice-level prescribing apportioned to areas by patient residence,
/// then divided by apportioned patient counts.
pub fn prescriptions_stage(config: &PipelineConfig) -> Result<StageProducts> {
    let areas = io::read_areas(&config.inputs.areas)?;
    let gps = io::read_gps(&config.inputs.nhs.gps)?;
    let patients = io::read_patients(&config.inputs.nhs.patients)?;
    // parsed for schema validity; the table itself is reference data
    io::read_drugs(&config.inputs.nhs.drugs)?;

    let mut products = StageProducts::default();
    let practices = io::build_practices(&gps, &patients, &mut products.warnings);

    let mut rows = Vec::new();
    for path in &config.inputs.nhs.prescriptions {
        for (_, row) in io::read_prescriptions(path)? {
            rows.push(row);
        }
    }
    if (config.inputs.nhs.prescriptions.len() as u32) < config.inputs.nhs.expected_months {
        products.warnings.push(format!(
            "{} of {} monthly prescribing files listed; absent months are not imputed",
            config.inputs.nhs.prescriptions.len(),
            config.inputs.nhs.expected_months
        ));
    }

    let lists = load_condition_lists(config)?;
    let rates = area_rates(&rows, &lists, &practices, &areas, &mut products.warnings)?;

    // a configured condition that never matches anything is usually a list
    // or data problem worth surfacing
    for list in &lists {
        if list.condition == Condition::Total {
            continue;
        }
        let any = rates
            .iter()
            .any(|r| r.condition == list.condition && r.quantity_total > 0.0);
        if !any {
            products.warnings.push(format!(
                "condition {} matched no prescription rows",
                list.condition
            ));
        }
    }

    let rate_rows: Vec<Vec<String>> = rates
        .iter()
        .map(|r| {
            vec![
                r.area_id.clone(),
                r.condition.to_string(),
                io::fmt_opt(r.quantity_per_capita),
                io::fmt_opt(r.cost_per_capita),
            ]
        })
        .collect();
    products.files.push((
        "prescriptions.csv".to_string(),
        io::csv_bytes(&["area_id", "condition", "quantity_pc", "cost_pc"], &rate_rows)?,
    ));

    let total_rows: Vec<Vec<String>> = rates
        .iter()
        .map(|r| {
            vec![
                r.area_id.clone(),
                r.condition.to_string(),
                io::fmt_f64(r.quantity_total),
                io::fmt_f64(r.cost_total),
                r.patients.to_string(),
            ]
        })
        .collect();
    products.files.push((
        "prescription_totals.csv".to_string(),
        io::csv_bytes(
            &["area_id", "condition", "quantity_total", "cost_total", "patients"],
            &total_rows,
        )?,
    ));
    Ok(products)
}

// ---------------------------------------------------------------------------
// stats stage

/// Per-area column values parsed back from an upstream CSV product.
pub fn read_column_table(
    path: &Path,
    key_column: &str,
) -> Result<BTreeMap<String, BTreeMap<String, Option<f64>>>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let key_index = headers
        .iter()
        .position(|h| h == key_column)
        .ok_or_else(|| anyhow!("{}: no {key_column} column", path.display()))?;
    let mut table = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let key = record
            .get(key_index)
            .ok_or_else(|| anyhow!("{}: short row", path.display()))?
            .to_string();
        let mut row = BTreeMap::new();
        for (i, header) in headers.iter().enumerate() {
            if i == key_index || header == "warnings" {
                continue;
            }
            let field = record.get(i).unwrap_or("");
            let value = if field.is_empty() {
                None
            } else {
                Some(field.parse::<f64>().with_context(|| {
                    format!("{}: bad number {field:?} in column {header}", path.display())
                })?)
            };
            row.insert(header.clone(), value);
        }
        table.insert(key, row);
    }
    Ok(table)
}

/// Per-(area, condition) rows from the prescriptions products.
struct RateTables {
    /// Condition names in file order.
    conditions: Vec<String>,
    /// (area, condition) -> quantity per capita.
    quantity_pc: BTreeMap<(String, String), Option<f64>>,
    /// (area, condition) -> (quantity_total, cost_total).
    totals: BTreeMap<(String, String), (f64, f64)>,
}

fn read_rate_tables(out_dir: &Path) -> Result<RateTables> {
    let rates_path = out_dir.join("prescriptions.csv");
    let mut reader = csv::Reader::from_path(&rates_path)
        .with_context(|| format!("cannot read {}", rates_path.display()))?;
    let mut conditions = Vec::new();
    let mut quantity_pc = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let area = record.get(0).unwrap_or("").to_string();
        let condition = record.get(1).unwrap_or("").to_string();
        let qpc = match record.get(2).unwrap_or("") {
            "" => None,
            s => Some(s.parse::<f64>().with_context(|| {
                format!("{}: bad quantity_pc {s:?}", rates_path.display())
            })?),
        };
        if !conditions.contains(&condition) {
            conditions.push(condition.clone());
        }
        quantity_pc.insert((area, condition), qpc);
    }

    let totals_path = out_dir.join("prescription_totals.csv");
    let mut reader = csv::Reader::from_path(&totals_path)
        .with_context(|| format!("cannot read {}", totals_path.display()))?;
    let mut totals = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let area = record.get(0).unwrap_or("").to_string();
        let condition = record.get(1).unwrap_or("").to_string();
        let quantity: f64 = record.get(2).unwrap_or("0").parse()?;
        let cost: f64 = record.get(3).unwrap_or("0").parse()?;
        totals.insert((area, condition), (quantity, cost));
    }
    Ok(RateTables { conditions, quantity_pc, totals })
}

/// The estimation frame for one treatment/condition pair: complete-case
/// areas with raw outcome, treatment values, and confounders.
struct PairFrame {
    design: DesignMatrix,
    /// Outcome in raw per-capita units, aligned with the design rows.
    raw_outcome: Vec<f64>,
    /// Treatment values aligned with the design rows.
    treatment_values: Vec<f64>,
    /// Area totals for the condition, aligned with the design rows.
    rates: Vec<AreaPrescriptionRate>,
}

struct StatsInputs {
    area_ids: Vec<String>,
    coords: Vec<(f64, f64)>,
    boundaries: BTreeMap<String, geo::MultiPolygon<f64>>,
    metric_values: BTreeMap<String, BTreeMap<String, Option<f64>>>,
    share_values: Option<BTreeMap<String, BTreeMap<String, Option<f64>>>>,
    covariates: BTreeMap<String, io::CovariateRow>,
    rates: RateTables,
}

impl StatsInputs {
    fn treatment_value(&self, area: &str, column: &str) -> Option<f64> {
        let table = if METRIC_COLUMNS.contains(&column) {
            Some(&self.metric_values)
        } else if SHARE_COLUMNS.contains(&column) {
            self.share_values.as_ref()
        } else {
            None
        }?;
        table.get(area)?.get(column).copied().flatten()
    }

    /// Complete-case frame for one pair; `None` with a warning when too few
    /// areas carry every field.
    fn pair_frame(
        &self,
        treatment: &str,
        condition: &str,
        warnings: &mut Vec<String>,
    ) -> Result<Option<PairFrame>> {
        let n = self.area_ids.len();
        let mut outcome = Vec::with_capacity(n);
        let mut tvals = Vec::with_capacity(n);
        let mut confounders: Vec<(String, Vec<Option<f64>>)> = CONFOUNDERS
            .iter()
            .map(|c| (c.to_string(), Vec::with_capacity(n)))
            .collect();
        for id in &self.area_ids {
            outcome.push(
                self.rates
                    .quantity_pc
                    .get(&(id.clone(), condition.to_string()))
                    .copied()
                    .flatten(),
            );
            tvals.push(self.treatment_value(id, treatment));
            let row = self.covariates.get(id);
            for (name, column) in &mut confounders {
                column.push(row.and_then(|r| r.get(name)));
            }
        }
        // the treatment variable rides along as the first design column so
        // the same complete-case filter covers it
        let mut columns = vec![(treatment.to_string(), tvals)];
        columns.extend(confounders);
        let mut local = Vec::new();
        let design =
            match build_design(&self.area_ids, &outcome, &columns, &self.coords, &mut local) {
                Ok(d) => d,
                Err(verdant_core::Error::InsufficientData(m)) => {
                    warnings.push(format!(
                        "{treatment} x {condition}: skipped ({m})"
                    ));
                    return Ok(None);
                }
                Err(e) => return Err(e.into()),
            };
        warnings.extend(local.into_iter().map(|w| format!("{treatment} x {condition}: {w}")));

        let kept: BTreeMap<&str, usize> =
            design.area_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut raw_outcome = vec![0.0; design.area_ids.len()];
        let mut treatment_values = vec![0.0; design.area_ids.len()];
        let mut rates = vec![None; design.area_ids.len()];
        for id in &self.area_ids {
            if let Some(&slot) = kept.get(id.as_str()) {
                let key = (id.clone(), condition.to_string());
                raw_outcome[slot] = self.rates.quantity_pc[&key].expect("kept rows are complete");
                treatment_values[slot] = design.x[slot][0];
                let (quantity_total, cost_total) =
                    self.rates.totals.get(&key).copied().unwrap_or((0.0, 0.0));
                rates[slot] = Some(AreaPrescriptionRate {
                    area_id: id.clone(),
                    condition: condition.parse().map_err(|e: verdant_core::Error| anyhow!(e))?,
                    quantity_total,
                    cost_total,
                    patients: 0,
                    quantity_per_capita: Some(raw_outcome[slot]),
                    cost_per_capita: None,
                });
            }
        }
        Ok(Some(PairFrame {
            design,
            raw_outcome,
            treatment_values,
            rates: rates.into_iter().map(|r| r.expect("filled above")).collect(),
        }))
    }
}

fn load_stats_inputs(config: &PipelineConfig, out_dir: &Path) -> Result<StatsInputs> {
    let areas = io::read_areas(&config.inputs.areas)?;
    let mut coords = Vec::with_capacity(areas.len());
    let mut area_ids = Vec::with_capacity(areas.len());
    let mut boundaries = BTreeMap::new();
    for area in &areas {
        let c = area
            .boundary
            .centroid()
            .ok_or_else(|| anyhow!("area {}: degenerate boundary has no centroid", area.id))?;
        coords.push((c.x(), c.y()));
        area_ids.push(area.id.clone());
        boundaries.insert(area.id.clone(), area.boundary.clone());
    }
    let metric_values = read_column_table(&out_dir.join("metrics.csv"), "area_id")?;
    let share_values = if config.needs_target_shares() {
        Some(read_column_table(&out_dir.join("targets.csv"), "area_id")?)
    } else {
        None
    };
    let mut covariates = BTreeMap::new();
    for (_, row) in io::read_covariates(&config.inputs.covariates)? {
        covariates.insert(row.area_id.clone(), row);
    }
    let rates = read_rate_tables(out_dir)?;
    Ok(StatsInputs { area_ids, coords, boundaries, metric_values, share_values, covariates, rates })
}

/// Effect estimation and the regression surface. For every configured
/// treatment column and every condition: median-split treatment groups,
/// propensity-matched bootstrap effect on the min-max normalized outcome,
/// and the projected prescription reduction over control areas. One
/// configured pair additionally gets a locally weighted coefficient
/// surface.
pub fn stats_stage(config: &PipelineConfig, out_dir: &Path) -> Result<StageProducts> {
    let params = &config.params;
    let inputs = load_stats_inputs(config, out_dir)?;
    let mut products = StageProducts::default();

    let mut ate_rows: Vec<Vec<String>> = Vec::new();
    let mut reduction_rows: Vec<Vec<String>> = Vec::new();
    for treatment in &params.treatments {
        for condition in &inputs.rates.conditions {
            let Some(frame) =
                inputs.pair_frame(treatment, condition, &mut products.warnings)?
            else {
                continue;
            };
            let flags = binarize_treatment(&frame.treatment_values);
            if flags.iter().all(|&f| !f) || flags.iter().all(|&f| f) {
                products.warnings.push(format!(
                    "{treatment} x {condition}: median split produced one group; pair skipped"
                ));
                continue;
            }
            // propensity design: confounders only, outcome normalized
            let mut psm_design = frame.design.clone();
            psm_design.x = psm_design.x.iter().map(|row| row[1..].to_vec()).collect();
            psm_design.names = psm_design.names[1..].to_vec();
            match psm_design.normalize_outcome() {
                Ok(()) => {}
                Err(e) => {
                    products.warnings.push(format!(
                        "{treatment} x {condition}: outcome cannot be normalized ({e}); pair skipped"
                    ));
                    continue;
                }
            }
            let result = match psm_ate(
                &psm_design,
                &flags,
                treatment,
                params.bootstrap_replicates,
                params.seed,
            ) {
                Ok(r) => r,
                Err(e) => {
                    products.warnings.push(format!(
                        "{treatment} x {condition}: effect estimation failed ({e}); pair skipped"
                    ));
                    continue;
                }
            };
            if result.discarded > 0 {
                products.warnings.push(format!(
                    "{treatment} x {condition}: {} bootstrap resample(s) discarded and redrawn",
                    result.discarded
                ));
            }
            ate_rows.push(vec![
                treatment.clone(),
                condition.clone(),
                io::fmt_f64(result.ate_mean),
                io::fmt_f64(result.se),
                io::fmt_f64(result.ci99.0),
                io::fmt_f64(result.ci99.1),
                result.significant.to_string(),
            ]);

            // The bootstrap effect lives on the min-max normalized outcome
            // scale. For the reduction projection it is mapped back to raw
            // per-capita units via the normalization span and expressed as
            // a fraction of the mean control-group rate; that fraction of
            // the control areas' recorded totals is the projected change.
            let span = psm_design.norm.as_ref().map(|n| n.max - n.min).unwrap_or(0.0);
            let controls: Vec<f64> = flags
                .iter()
                .zip(&frame.raw_outcome)
                .filter(|(f, _)| !**f)
                .map(|(_, y)| *y)
                .collect();
            let mean_control = controls.iter().sum::<f64>() / controls.len() as f64;
            if controls.is_empty() || !(mean_control > 0.0) {
                products.warnings.push(format!(
                    "{treatment} x {condition}: zero mean control rate; no reduction projected"
                ));
                continue;
            }
            let fraction = result.ate_mean * span / mean_control;
            let (quantity_reduction, cost_reduction) =
                reduction_projection(&frame.rates, &flags, fraction, &mut products.warnings)?;
            reduction_rows.push(vec![
                treatment.clone(),
                condition.clone(),
                io::fmt_f64(quantity_reduction),
                io::fmt_f64(cost_reduction),
            ]);
        }
    }
    products.files.push((
        "ate.csv".to_string(),
        io::csv_bytes(
            &["treatment", "condition", "ate", "se", "ci_lo", "ci_hi", "significant"],
            &ate_rows,
        )?,
    ));
    products.files.push((
        "reductions.csv".to_string(),
        io::csv_bytes(
            &["treatment", "condition", "quantity_reduction", "cost_reduction"],
            &reduction_rows,
        )?,
    ));

    // locally weighted regression surface for the configured pair
    let treatment = &params.gwr_treatment;
    let condition = params.gwr_condition.as_str();
    match inputs.pair_frame(treatment, condition, &mut products.warnings)? {
        Some(mut frame) => {
            frame
                .design
                .normalize_outcome()
                .map_err(|e| anyhow!("{treatment} x {condition}: {e}"))?;
            match gwr_fit(&frame.design, GwrKernel::AdaptiveBisquare, params.gwr_bandwidth) {
                Ok(result) => {
                    let (geojson_bytes, csv_bytes, summary_bytes) = gwr_products(
                        &frame.design,
                        &result,
                        &inputs.boundaries,
                        treatment,
                        condition,
                    )?;
                    products.files.push(("gwr.geojson".to_string(), geojson_bytes));
                    products.files.push(("gwr.csv".to_string(), csv_bytes));
                    products.files.push(("gwr_summary.csv".to_string(), summary_bytes));
                }
                Err(e) => {
                    bail!("regression surface for {treatment} x {condition} failed: {e}");
                }
            }
        }
        None => {
            bail!(
                "regression surface for {treatment} x {condition} has too few complete areas"
            );
        }
    }
    Ok(products)
}

/// The three regression-surface products: a coefficient GeoJSON, a wide
/// per-area CSV, and a one-row fit summary.
fn gwr_products(
    design: &DesignMatrix,
    result: &verdant_core::GwrResult,
    boundaries: &BTreeMap<String, geo::MultiPolygon<f64>>,
    treatment: &str,
    condition: &str,
) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>)> {
    let mut features = Vec::with_capacity(design.area_ids.len());
    let mut csv_rows = Vec::with_capacity(design.area_ids.len());
    let mut header: Vec<String> = vec!["area_id".to_string()];
    for name in &result.names {
        header.push(format!("coef_{name}"));
        header.push(format!("se_{name}"));
    }
    header.push("residual".to_string());

    for (i, id) in design.area_ids.iter().enumerate() {
        let boundary = boundaries
            .get(id)
            .ok_or_else(|| anyhow!("no boundary for area {id}"))?;
        let mut properties = vec![("area_id".to_string(), serde_json::Value::String(id.clone()))];
        let mut row = vec![id.clone()];
        let coefs = result.coefficients[i].as_deref();
        let ses = result.standard_errors[i].as_deref();
        for (j, name) in result.names.iter().enumerate() {
            let coef = coefs.map(|c| c[j]);
            let se = ses.map(|s| s[j]);
            properties.push((format!("coef_{name}"), io::json_opt(coef)));
            properties.push((format!("se_{name}"), io::json_opt(se)));
            row.push(io::fmt_opt(coef));
            row.push(io::fmt_opt(se));
        }
        properties.push(("residual".to_string(), io::json_opt(result.residuals[i])));
        properties.push(("skipped".to_string(), serde_json::Value::Bool(coefs.is_none())));
        row.push(io::fmt_opt(result.residuals[i]));
        features.push(io::feature(geojson::Value::from(boundary), properties));
        csv_rows.push(row);
    }

    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let csv = io::csv_bytes(&header_refs, &csv_rows)?;
    let summary = io::csv_bytes(
        &["treatment", "condition", "kernel", "bandwidth", "aicc", "areas", "skipped"],
        &[vec![
            treatment.to_string(),
            condition.to_string(),
            "adaptive_bisquare".to_string(),
            result.bandwidth.to_string(),
            io::fmt_f64(result.aicc),
            design.area_ids.len().to_string(),
            result.skipped.len().to_string(),
        ]],
    )?;
    Ok((io::feature_collection_bytes(features), csv, summary))
}

/// Stage names in dependency order.
pub const STAGE_NAMES: [&str; 4] = ["metrics", "targets", "prescriptions", "stats"];

/// Which previously produced files a stage needs on disk before running.
pub fn stage_dependencies(config: &PipelineConfig, stage: &str) -> Vec<&'static str> {
    match stage {
        "stats" => {
            let mut deps = vec!["metrics", "prescriptions"];
            if config.needs_target_shares() {
                deps.insert(1, "targets");
            }
            deps
        }
        _ => Vec::new(),
    }
}

/// Runs one stage by name.
pub fn run_stage(config: &PipelineConfig, stage: &str, out_dir: &Path) -> Result<StageProducts> {
    match stage {
        "metrics" => metrics_stage(config),
        "targets" => targets_stage(config),
        "prescriptions" => prescriptions_stage(config),
        "stats" => stats_stage(config, out_dir),
        other => bail!("unknown stage {other:?}"),
    }
}
