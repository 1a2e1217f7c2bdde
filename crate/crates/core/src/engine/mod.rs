//! Discrete-event simulation of the whole system.

pub mod config;
pub mod events;
pub mod experiment;
pub mod metrics;
pub mod sim;

pub use config::{Mode, ScenarioConfig};
pub use metrics::{aggregate, AggregateReport, RunReport, Summary};
pub use sim::{run, run_seed, Scenario, TraceRecord};
