//! Run configuration: a single TOML file naming every input dataset and
//! every tunable parameter. Relative paths are resolved against the config
//! file's own directory so a dataset folder can be moved as a unit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use verdant_core::{ChoiceMode, Condition, GsvMode, NdviDenominator};

/// Greenery metric columns accepted as treatment variables.
pub const METRIC_COLUMNS: [&str; 4] =
    ["g_total_ndvi", "g_onroad_ndvi", "g_onroad_gsv", "g_offroad"];

/// Accessibility share columns (produced by the targets stage) accepted as
/// treatment variables.
pub const SHARE_COLUMNS: [&str; 3] = ["who_share", "esa_who_share", "ne_share"];

/// Confounder columns read from the covariates table, in model order.
pub const CONFOUNDERS: [&str; 4] =
    ["imd_score", "building_density", "median_age", "white_percent"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Inputs,
    #[serde(default)]
    pub params: Params,
    pub output: Output,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    /// Areal units: GeoJSON FeatureCollection of Polygon/MultiPolygon
    /// features with `id`, `kind` ("ward"/"lsoa") and `population`.
    pub areas: PathBuf,
    /// Green spaces: GeoJSON FeatureCollection with `id`, `kind`
    /// ("park"/"garden") and `access` ("public"/"restricted").
    pub parks: PathBuf,
    /// Street centerlines: GeoJSON FeatureCollection of LineString features
    /// with an `id` property.
    pub segments: PathBuf,
    /// Binary green-cover raster, `.asc` (ESRI ASCII grid) or `.bgr`
    /// (flat binary, see the raster reader for the exact layout).
    pub green_raster: PathBuf,
    /// Street imagery: CSV `image_id,x,y,green_fraction`.
    pub images: PathBuf,
    /// Population grid: CSV `cell_id,x,y,population`; square cells of
    /// `population_cell_m` on a side centred on (x, y).
    pub population: PathBuf,
    /// Area covariates: CSV `area_id,imd_score,building_density,median_age,white_percent`.
    pub covariates: PathBuf,
    pub nhs: NhsInputs,
    /// Condition name -> CSV of `bnf_code,name` rows. A prescription counts
    /// toward a condition when its BNF code starts with any listed code.
    /// The all-prescriptions total is implicit and must not be listed.
    pub conditions: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NhsInputs {
    /// Drug reference table: CSV `bnf_code,name`.
    pub drugs: PathBuf,
    /// Practices: CSV `gp_code,x,y,status` (status "active" or "closed").
    pub gps: PathBuf,
    /// Patient residence counts: CSV `gp_code,area_id,count`.
    pub patients: PathBuf,
    /// Monthly prescribing extracts: CSV `gp_code,bnf_code,items,quantity,cost`.
    /// Every listed file is summed; nothing is imputed for absent months.
    pub prescriptions: Vec<PathBuf>,
    /// How many monthly files a complete period would have; fewer listed
    /// files produce a warning, never imputation.
    #[serde(default = "default_expected_months")]
    pub expected_months: u32,
}

fn default_expected_months() -> u32 {
    12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Street buffer half-width in meters (buffer spans twice this).
    pub buffer_half_width_m: f64,
    /// Metric radius for choice pair selection, meters.
    pub choice_radius_m: f64,
    /// Path cost model for choice: "angular" or "topological".
    pub choice_mode: ChoiceMode,
    /// Endpoints closer than this snap to one junction, meters.
    pub snap_tolerance_m: f64,
    /// Walking budget for the accessibility targets, minutes.
    pub walk_budget_min: f64,
    /// Walking speed, km/h.
    pub walk_speed_kmh: f64,
    /// Side length of a population grid cell, meters.
    pub population_cell_m: f64,
    /// Bootstrap replicates per treatment/condition pair.
    pub bootstrap_replicates: usize,
    /// Random seed for every stochastic step.
    pub seed: u64,
    /// Denominator of per-segment raster scores.
    pub ndvi_denominator: NdviDenominator,
    /// How a segment folds its images into one score.
    pub gsv_mode: GsvMode,
    /// Greenery columns whose median split defines treatment groups.
    pub treatments: Vec<String>,
    /// Treatment column for the locally weighted regression surface.
    pub gwr_treatment: String,
    /// Condition whose per-capita rate is the regression outcome.
    pub gwr_condition: String,
    /// Fixed neighbour count; omit to search by corrected AIC.
    pub gwr_bandwidth: Option<usize>,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            buffer_half_width_m: 10.0,
            choice_radius_m: 500.0,
            choice_mode: ChoiceMode::Angular,
            snap_tolerance_m: 0.1,
            walk_budget_min: 5.0,
            walk_speed_kmh: 4.8,
            population_cell_m: 100.0,
            bootstrap_replicates: 1000,
            seed: 42,
            ndvi_denominator: NdviDenominator::AreaPixels,
            gsv_mode: GsvMode::MeanPerSegment,
            treatments: METRIC_COLUMNS.iter().map(|s| s.to_string()).collect(),
            gwr_treatment: "g_onroad_ndvi".to_string(),
            gwr_condition: "total".to_string(),
            gwr_bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    /// Directory receiving every table, map, cache stamp, and the manifest.
    pub dir: PathBuf,
}

impl PipelineConfig {
    /// Parses `path` and resolves every relative input/output path against
    /// its parent directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.check_params()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        let i = &mut self.inputs;
        resolve(&mut i.areas);
        resolve(&mut i.parks);
        resolve(&mut i.segments);
        resolve(&mut i.green_raster);
        resolve(&mut i.images);
        resolve(&mut i.population);
        resolve(&mut i.covariates);
        resolve(&mut i.nhs.drugs);
        resolve(&mut i.nhs.gps);
        resolve(&mut i.nhs.patients);
        for p in &mut i.nhs.prescriptions {
            resolve(p);
        }
        for p in i.conditions.values_mut() {
            resolve(p);
        }
        resolve(&mut self.output.dir);
    }

    /// Range checks on every numeric parameter plus name checks on the
    /// treatment/condition selections.
    pub fn check_params(&self) -> Result<()> {
        let p = &self.params;
        let positive = [
            ("buffer_half_width_m", p.buffer_half_width_m),
            ("choice_radius_m", p.choice_radius_m),
            ("snap_tolerance_m", p.snap_tolerance_m),
            ("walk_budget_min", p.walk_budget_min),
            ("walk_speed_kmh", p.walk_speed_kmh),
            ("population_cell_m", p.population_cell_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                bail!("params.{name} must be a positive number, got {v}");
            }
        }
        if p.bootstrap_replicates < 2 {
            bail!(
                "params.bootstrap_replicates must be at least 2, got {}",
                p.bootstrap_replicates
            );
        }
        if p.treatments.is_empty() {
            bail!("params.treatments must name at least one greenery column");
        }
        for t in &self.params.treatments {
            if !Self::is_treatment_column(t) {
                bail!(
                    "params.treatments: unknown column {t:?}; expected one of {:?} or {:?}",
                    METRIC_COLUMNS,
                    SHARE_COLUMNS
                );
            }
        }
        if !Self::is_treatment_column(&p.gwr_treatment) {
            bail!(
                "params.gwr_treatment: unknown column {:?}; expected one of {:?} or {:?}",
                p.gwr_treatment,
                METRIC_COLUMNS,
                SHARE_COLUMNS
            );
        }
        p.gwr_condition
            .parse::<Condition>()
            .map_err(|e| anyhow::anyhow!("params.gwr_condition: {e}"))?;
        for name in self.inputs.conditions.keys() {
            let c = name
                .parse::<Condition>()
                .map_err(|e| anyhow::anyhow!("inputs.conditions: {e}"))?;
            if c == Condition::Total {
                bail!("inputs.conditions: the total is computed implicitly; do not list it");
            }
        }
        Ok(())
    }

    fn is_treatment_column(name: &str) -> bool {
        METRIC_COLUMNS.contains(&name) || SHARE_COLUMNS.contains(&name)
    }

    /// True when any configured treatment (or the regression treatment)
    /// comes from the targets stage rather than the metrics stage.
    pub fn needs_target_shares(&self) -> bool {
        self.params
            .treatments
            .iter()
            .map(String::as_str)
            .chain([self.params.gwr_treatment.as_str()])
            .any(|t| SHARE_COLUMNS.contains(&t))
    }

    /// Every input file the pipeline may read, as (label, path) pairs in a
    /// fixed order. Labels key the digest map in the manifest.
    pub fn input_files(&self) -> Vec<(String, PathBuf)> {
        let i = &self.inputs;
        let mut files = vec![
            ("areas".to_string(), i.areas.clone()),
            ("parks".to_string(), i.parks.clone()),
            ("segments".to_string(), i.segments.clone()),
            ("green_raster".to_string(), i.green_raster.clone()),
            ("images".to_string(), i.images.clone()),
            ("population".to_string(), i.population.clone()),
            ("covariates".to_string(), i.covariates.clone()),
            ("nhs.drugs".to_string(), i.nhs.drugs.clone()),
            ("nhs.gps".to_string(), i.nhs.gps.clone()),
            ("nhs.patients".to_string(), i.nhs.patients.clone()),
        ];
        for (k, p) in i.nhs.prescriptions.iter().enumerate() {
            files.push((format!("nhs.prescriptions[{k}]"), p.clone()));
        }
        for (name, p) in &i.conditions {
            files.push((format!("conditions.{name}"), p.clone()));
        }
        files
    }
}
