//! HTTP service and command line for retrieval-augmented query spelling
//! correction, built on `speller-core`.

pub mod cli;
pub mod service;
