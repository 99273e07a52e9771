//! Named experiments built from the simulation and analysis modules.

mod config;
mod pipeline;
mod report;
mod run;

pub use config::*;
pub use pipeline::*;
pub use report::*;
pub use run::*;
