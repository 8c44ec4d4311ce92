//! Command-line pipeline around the analysis engine: validates input
//! bundles, runs the metrics / targets / prescriptions / stats stages with
//! content-keyed caching, exports choropleth maps, and prints run reports.

pub mod config;
pub mod export;
pub mod fixture;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod stages;
pub mod validate;
