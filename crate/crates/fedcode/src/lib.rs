//! Standard-library side of fedcode: JSON file formats, experiment runs
//! written to disk, the on-disk model registry, and the `fedcode` CLI.

pub mod error;
pub mod files;
pub mod run;
pub mod store;

pub use error::{Error, Result};
pub use store::RegistryStore;
