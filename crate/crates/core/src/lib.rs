//! Uplink RAN delay toolkit.
//!
//! * [`simulator`] generates per-layer traces of a TDD uplink with segmentation and HARQ.
//! * [`journey_builder`] correlates raw traces back into per-packet journeys.
//! * [`decomposer`] splits each end-to-end delay into core, queuing, transmission,
//!   segmentation and retransmission delay.
//! * [`analytics`] turns decompositions into tail statistics and contribution reports.
//! * [`report`] ties the pipeline together for the command-line front end.

pub mod analytics;
pub mod decomposer;
pub mod journey_builder;
pub mod report;
pub mod simulator;
pub mod trace_model;

pub use decomposer::decompose;
pub use journey_builder::build_journeys;
pub use simulator::{simulate, ExperimentConfig};
pub use trace_model::{DelayDecomposition, Nanos, PacketJourney, Timestamp, TraceEvent};
