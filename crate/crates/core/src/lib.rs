//! Background-click supervised temporal action localization.
//!
//! The crate is `no_std` (with `alloc`) and contains every numerical piece of
//! the method: feature rescaling, click simulation, the affinity-modulated
//! temporal convolution network with hand-derived gradients, the four training
//! objectives, Adam, segment inference and detection metrics. File formats,
//! the training runner and the command-line tool live in the `backtal` crate.
//!
//! Layout conventions used throughout:
//!
//! * Feature sequences and activation sequences are stored frame-major: row `t`
//!   holds the vector for frame `t`, so a class activation sequence of shape
//!   `(C+1) x T` is kept as a `T x (C+1)` [`Matrix`].
//! * Class index 0 is background; action classes are `1..=C`.
//! * Click labels use `1` for an annotated background frame, `0` for a pseudo
//!   action frame and `-1` for unknown.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod clicks;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod inference;
pub mod losses;
pub mod math;
pub mod matrix;
pub mod network;
pub mod objective;
pub mod optim;
pub mod synth;

pub use config::{ModuleToggles, TrainConfig};
pub use data::{
    map_time_to_frame, rescale_to_fixed_length, ClickLabel, FeatureSequence, GroundTruthSegment,
    VideoAnnotation,
};
pub use error::{CoreError, Result};
pub use matrix::Matrix;
pub use network::{ModelParams, NetworkShape};
