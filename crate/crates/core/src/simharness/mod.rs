//! Monte Carlo variance studies of the two weighted estimators and oracle
//! sweeps over the logistic coefficient grid.

mod sweep;
mod variance;

pub use sweep::{
    classify_quadrants, run_error_sweep, run_error_sweep_streaming, write_sweep_csv_header,
    write_sweep_row, PanelSummary, QuadrantCounts, SweepAccumulator, SweepGrid, SweepPoint,
    SweepSummary, GRID_COORDINATES, RARE_THRESHOLD,
};
pub use variance::{run_variance_study, write_variance_csv, VarianceReport, VarianceStudyConfig};
