pub mod adversarial;
pub mod config;
pub mod error;
pub mod experiment;
pub mod info;
pub mod jsd;
pub mod kv;
pub mod nn;
pub mod par;
pub mod scm;
pub mod synth;
pub mod theorem;

pub use error::{Error, Result};
