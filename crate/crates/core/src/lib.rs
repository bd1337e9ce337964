//! Event-camera 6-DOF pose tracking against photometric depth maps.
//!
//! The crate bundles everything needed to exercise the tracker without
//! sensor hardware: SE(3) geometry ([`geometry`]), the photometric map with
//! its on-disk formats ([`map`]), an event-camera simulator ([`sim`]), the
//! contrast measurement model ([`measurement`]), the robust per-event
//! Bayesian filter ([`tracker`]), trajectory error metrics ([`metrics`]),
//! stream/trajectory/config parsers ([`formats`], [`config`]), and synthetic
//! benchmark scenes ([`scene`]).
//!
//! The simulator's per-pixel loops run on rayon when the `parallel` feature
//! (default) is enabled and fall back to sequential iteration otherwise;
//! both paths produce identical output.

pub mod config;
pub mod event;
pub mod formats;
pub mod geometry;
pub mod map;
pub mod measurement;
pub mod metrics;
pub mod scene;
pub mod sim;
pub mod tracker;

pub use event::{Event, TimestampMap};
pub use geometry::{CameraIntrinsics, Pose};
pub use map::PhotometricMap;
