//! File formats: delimited datasets, TOML configuration, JSON reports,
//! curve exports.

pub mod config;
pub mod dataset;
pub mod report;

pub use config::{CurveProfile, InitMode, InitSpec, KnotMode, KnotSpec, ProfilesFile, RunConfig, ScenarioFile};
pub use dataset::{read_dataset, ColumnMapping, ParsedDataset, RawTable, RowIssue};
pub use report::{
    read_json, write_curve_files, write_curves_svg, write_json, write_summary_csv, FitReport,
    GroupSummary, NpmleReport, SimulateReport, SummaryReport, SweepRow,
};
