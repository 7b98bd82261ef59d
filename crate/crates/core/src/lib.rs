//! Core pipeline for early success prediction in online courses.
//!
//! Everything in this crate operates on in-memory data and is `no_std`
//! compatible (alloc required). File formats, checkpoints and the CLI live in
//! the companion `moocpred` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod datamodel;
pub mod error;
pub mod dropout;
pub mod experiments;
pub mod features;
pub mod meta;
pub mod models;
pub mod nn;
pub mod rng;
pub mod synth;
