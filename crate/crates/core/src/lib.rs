//! Author gender prediction from tweets with an embedding-fusion CNN.

pub mod baseline;
pub mod corpus;
pub mod error;
pub mod io;
pub mod model;
pub mod tensor;
pub mod stats;
pub mod synth;
pub mod textpipe;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
