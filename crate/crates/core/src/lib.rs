pub mod error;
pub mod harness;
pub mod iblt;
pub mod compaction;
pub mod model;
pub mod obsort;
pub mod primitives;
pub mod selection;

pub use error::{Error, Result};
