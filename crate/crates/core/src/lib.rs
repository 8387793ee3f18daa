pub mod awac;
pub mod error;
pub mod experiment;
pub mod game;
pub mod io;
pub mod live;
pub mod metrics;
pub mod movements;
pub mod nn;
pub mod policy;
pub mod sigproc;
pub mod subject;

pub use error::{Error, Result};
