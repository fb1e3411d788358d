//! Batch evaluation: pair selection, matching, orientation, densification
//! and scoring over tile manifests, with aggregate statistics.

mod config;
mod run;
mod stats;
mod synth;

pub use config::{method_label, stage_seed, LsmMode, RunConfig, LSM_SUFFIX};
pub use run::{
    collect_reports, grid_rect, read_report, DenseExtent, rect_grid, run_pipeline, tile_frame, write_json, RunSummary,
    DSM_FILE, MATCHES_FILE, ORIENTATION_FILE, REPORT_FILE, STATS_CSV, STATS_JSON,
};
pub use stats::{aggregate, five_number, AggregateStats, LsmChange, MethodStats, Summary, METRICS};
pub use synth::{write_synthetic_tile, SynthTileConfig};
