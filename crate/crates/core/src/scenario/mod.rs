//! Configuration files, end-to-end runs and CSV artifacts.

mod config;
mod csv;
mod run;

pub use config::{
    load_config, parse_config, segment_scenario_text, validate_config, AnalysisSettings,
    ConfigError, ConfigFile, Diagnostics, RouteConfig, Scenario, ServoSettings, SimSettings,
    DEFAULT_MAX_SAMPLES,
};
pub use csv::{
    parse_series_csv, write_adev, write_adev_csv, write_budget_csv, write_psd, write_psd_csv,
    write_rejection_csv, write_series_csv,
};
pub use run::{
    render_report, run_scenario, run_to_dir, write_artifacts, AdevRow, RejectionSummary, RunError,
    RunOutcome, RunReport,
};
