pub mod analysis;
pub mod chmm;
pub mod error;
pub mod estimate;
pub mod io;
pub mod model;
pub mod qhmm;
pub mod seed;
pub mod specfun;
pub mod volgrid;

pub use error::{Error, Result};
pub use model::{IidCategorical, SequenceModel};
