pub mod context;
pub mod crf;
pub mod data;
pub mod error;
pub mod intake;
pub mod par;
pub mod pipeline;
pub mod segnet;
pub mod synth;
pub mod volumetry;

pub use error::{Error, Result};
