pub mod dense;
pub mod error;
pub mod eval;
pub mod frame;
pub mod harness;
pub mod matching;
pub mod orientation;
pub mod pairs;
pub mod raster;
pub mod rpc;
pub mod synthetic;

pub use error::{Error, Result};
