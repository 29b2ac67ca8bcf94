//! Training-free, model-free diffusion trajectory planning for
//! tractor-trailer parking.

pub mod bsd;
pub mod cli;
pub mod config;
pub mod datastore;
pub mod dynamics;
pub mod eval;
pub mod error;
pub mod geometry;
pub mod library;
pub mod mbd;
pub mod numcore;
pub mod parkenv;
pub mod plan;
pub mod shield;
pub mod theory;

pub use error::{Error, Result};
