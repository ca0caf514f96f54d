//! Statistical forensics for polling-station election results.
//!
//! Round-number manipulation of reported results leaves an excess of
//! stations whose turnout or leader's result sits at a whole percentage.
//! This crate measures that excess against a per-station binomial null
//! model, builds jittered percentage histograms, attributes histogram peaks
//! to regions, and generates synthetic elections with injected fraud for
//! validating the detector.

pub mod anomaly;
pub mod binomial;
pub mod dataset;
pub mod histogram;
pub mod metrics;
pub mod regional;
pub mod report;
pub mod rng;
pub mod synth;

pub use dataset::{apply_filter, ElectionDataset, FilterSpec, StationRecord};
pub use metrics::{is_integer_hit, percent, station_percent, target_ballot_count, IntegerBand, JitterSpec, MetricKind};
