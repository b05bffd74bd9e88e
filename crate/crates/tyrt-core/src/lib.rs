//! Int8 inference core for the sub-million-parameter detection network family:
//! quantized tensors and kernels, graph builders with parameter/MAC counting,
//! post-training calibration, a memory-budget tiling planner with a cycle
//! model, camera-front-end simulation, detection post-processing, and
//! stage-level energy bookkeeping.
//!
//! The crate is `no_std` + `alloc` so the runtime core stays portable to
//! microcontroller-class targets; all file and process I/O lives in the
//! companion CLI crate.

#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod build;
pub mod calib;
pub mod detect;
pub mod forward;
pub mod graph;
pub mod image;
pub mod kernels;
pub mod plan;
pub mod power;
pub mod quant;
pub mod tensor;
pub mod weights;
