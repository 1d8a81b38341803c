//! Retrieval-augmented spelling correction for search queries.
//!
//! Candidate product names are retrieved from an indexed catalog (BM25,
//! fuzzy BM25, or a remote dense retriever), placed in a fixed prompt, and
//! handed to a pluggable generation backend. The crate also scores
//! corrections with precision / recall / F1 and writes fine-tuning data.

pub mod backend;
pub mod catalog;
pub mod config;
pub mod distance;
pub mod eval;
pub mod finetune;
pub mod gateway;
pub mod pipeline;
pub mod prompt;
pub mod sparse;
pub mod text;

pub(crate) mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Duration::try_from_secs_f64(ms / 1e3).map_err(serde::de::Error::custom)
    }
}
