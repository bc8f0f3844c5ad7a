//! Scenario files, ledger files, run reports and figures.

pub mod ledger_file;
pub mod plots;
pub mod report;
pub mod scenario_file;

pub use ledger_file::{
    file_digest, open_ledger, read_ledger, write_ledger, LedgerError, LedgerHeader, LedgerReader, LedgerWriter,
    COLUMNS, FORMAT_VERSION,
};
pub use plots::write_plots;
pub use report::{
    build_report, write_daily_table, write_report_files, write_summary, Conservation, ReportDay, RunReport,
};
pub use scenario_file::{load_scenario, parse_scenario, scenario_digest, validate, ScenarioErrors, ScenarioIssue};
