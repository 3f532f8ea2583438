//! Weakly supervised nodule segmentation from clinical aspect-ratio
//! annotations.
//!
//! The pipeline turns the two measurement axes drawn during routine
//! ultrasound diagnosis into filled geometric pseudo-labels, trains a pair
//! of asymmetrically supervised segmentation networks on them, and
//! evaluates with overlap and surface-distance metrics. Clinical scans are
//! replaced by a synthetic speckle phantom generator so every experiment
//! here runs on the desk, CPU-only, and bit-reproducibly.
//!
//! Module map:
//! - [`geometry`]: annotation validation, the six pseudo-label shapes,
//!   cross rasterization, rigid perturbation, axis recovery from masks.
//! - [`tensor`], [`graph`], [`net`], [`optim`]: a small dense autodiff
//!   engine and the encoder-decoder backbone it trains.
//! - [`losses`]: asymmetric cross-entropy, inconsistency-masked mixed
//!   pseudo-label supervision, and the axis-projection prior loss.
//! - [`metrics`]: DSC / Jaccard / ASD / HD95 on an exact Euclidean
//!   distance transform, plus pseudo-label fidelity tables.
//! - [`synth`], [`dataset`]: phantom generation and on-disk dataset I/O.
//! - [`trainer`]: the dual-network co-training loop and evaluation.
//! - [`cli`]: the `asymseg` command-line front end.

pub mod checkpoint;
// pub mod cli;
pub mod dataset;
pub mod geometry;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod pgm;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use geometry::{AspectAnnotation, Point2, ShapeKind};
pub use mask::BinaryMask;
pub use tensor::Tensor;
