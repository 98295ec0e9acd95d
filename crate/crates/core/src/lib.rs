pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::{Rng, Tensor};
pub mod ctc;
pub mod compress;
pub mod transducer;
pub mod data;
pub mod model;
