//! Core algorithms for area-level greenery exposure and its association
//! with prescribing outcomes.
//!
//! The crate is organized around the data flow of a study run:
//!
//! * [`geometry`] — area units, green-space polygons, polygon overlay, the
//!   binary green raster, and polyline buffering.
//! * [`network`] — street segments, junction snapping, and the segment
//!   adjacency graph with metric / angular / topological costs.
//! * [`choice`] — betweenness ("choice") scores over the segment graph with
//!   a metric radius, and the log-floored weights derived from them.
//! * [`metrics`] — the area-level greenery measures (total cover, public
//!   cover, on-road and off-road exposure).
//! * [`targets`] — walking-reach accessibility flags per population cell and
//!   their population-weighted aggregation.
//! * [`prescriptions`] — GP-practice prescription apportionment into areas
//!   and per-capita rates.
//! * [`stats`] — geographically weighted regression and propensity-score
//!   matching with bootstrap inference.
//! * [`synth`] — seeded synthetic study areas used by tests and benchmarks.

pub mod choice;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod network;
pub mod prescriptions;
pub mod stats;
pub mod synth;
pub mod targets;

pub use choice::{choice, normalize_scores, ChoiceMode, ChoiceScores};
pub use error::{Error, Result};
pub use geometry::{
    buffer_polyline, polygon_ops, rasterize_fraction, Access, AreaKind, AreaUnit, Buffer,
    GreenRaster, GreenSpacePolygon, PolygonOp, RegionMask, SpaceKind, ZonalFraction,
};
pub use metrics::{
    decomposition_counts, greenery_vector, offroad, onroad_gsv, onroad_ndvi, public_greenery,
    total_ndvi, Decomposition, GreeneryVector, GsvMode, MetricConfig, NdviDenominator,
    RoadContext, StreetImageRecord,
};
pub use network::{build_graph, SegmentGraph, StreetSegment};
pub use stats::{
    binarize_treatment, build_design, gwr_fit, logit, min_max_normalize, ols, propensity_scores,
    psm_ate, AteResult, DesignMatrix, GwrKernel, GwrResult, MinMax,
};

pub use prescriptions::{
    area_rates, condition_count, gp_fraction, partition_known_rows, patients_in_area, per_capita,
    reduction_projection, ApportionedTotals, AreaPrescriptionRate, Condition, ConditionList,
    GpPractice, PrescriptionRow, Quarantine,
};
pub use targets::{
    aggregate_targets, apportioned_population, compliance_flags, esa_who_target, ne_target,
    walking_reach, who_target, PopulationCell, ReachSet, TargetFlags, TargetResult,
};
