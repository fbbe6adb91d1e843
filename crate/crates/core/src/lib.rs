//! RGB-D vision-language manipulation policy at toy scale: depth
//! preprocessing, a frozen patch encoder, perceiver resamplers, a gated
//! cross-attention decoder, a recurrent action head, imitation training and
//! a small tabletop simulator to train and evaluate it in.

pub mod analysis;
pub mod depth;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod model;
pub mod numerics;
pub mod persist;
pub mod policy;
pub mod sim;
pub mod training;

pub use error::{Error, Result};
