//! Deterministic microscopic traffic simulation for mixed fleets of human
//! drivers and automated vehicles.
//!
//! The crate is organized around pure building blocks: [`driver`] holds the
//! behavior laws, everything stateful lives in the engine and is driven by
//! explicitly seeded randomness, so a run is reproducible bit-for-bit across
//! machines and thread counts.

pub mod driver;
pub mod engine;
pub mod experiment;
pub mod ingest;
pub mod metrics;
pub mod net;
pub mod scenarios;
