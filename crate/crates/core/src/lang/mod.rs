//! Language-specific lexing shared by ingestion, chunking and the metrics.

pub mod alc;
pub mod mumps;
