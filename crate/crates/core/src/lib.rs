//! Airborne acoustic search: synthesize UAV-borne microphone-array audio,
//! detect victim sounds with a masked-autoencoder sentinel, estimate
//! directions of arrival by GCC-PHAT and fuse them across hover points.

pub mod dsp;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod localization;
pub mod mae;
pub mod mission;
pub mod report;
pub mod ring_buffer;
pub mod scene;
