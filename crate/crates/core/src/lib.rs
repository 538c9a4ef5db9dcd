//! Online assignment of reusable agents with rejection budgets.

pub mod analysis;
pub mod decomposition;
pub mod dp;
pub mod error;
pub mod fixtures;
pub mod generate;
pub mod ingest;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod sim;

pub use error::*;
pub use model::*;
