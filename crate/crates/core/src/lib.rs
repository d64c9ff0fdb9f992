pub mod bench;
pub mod dynsys;
pub mod error;
pub mod koopman;
pub mod mc;
pub mod noise;
pub mod optuu;
pub mod prob;
pub mod quad;

pub use error::{Error, Result};
