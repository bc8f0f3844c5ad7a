//! The discrete-time engine: calendar, daily planning and execution.

pub mod calendar;
pub mod engine;
pub mod plan;

pub use calendar::{seasonal_factor, CalendarProfile};
pub use engine::{run, DayMetrics, NullSink, RecordSink, RunError, RunOutput};
pub use plan::{activate_cards, daily_plan, PlannedTransaction};
