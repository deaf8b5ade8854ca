//! Conversion-count prediction for advertising campaigns under delayed
//! feedback: a shared MLP trunk with a bucket-tree classification expert, a
//! PCOC proxy-regression expert and a learned gate, plus a synthetic data
//! generator, evaluation harness and auto-bidding simulator.

pub mod bidsim;
pub mod bucket;
pub mod checkpoint;
pub mod experiment;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pcoc;
pub mod synth;
pub mod train;
pub mod tree;
