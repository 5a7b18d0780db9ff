//! File formats, configuration and the command implementations behind the
//! `ovpano` binary.

pub mod binio;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod kv;
pub mod report;
pub mod run;
pub mod scene_file;

pub use error::{Error, Result};
