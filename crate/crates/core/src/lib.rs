//! Geographic-alignment contrastive learning.
//!
//! Image and location-caption encoders are trained with an InfoNCE objective
//! whose one-hot targets are replaced by distance-decayed soft labels, plus a
//! penalty on the spread of per-region accuracy. Evaluation treats
//! geo-localization as retrieval of location captions and reports geodesic
//! error alongside spatial-coherence diagnostics.
//!
//! Module map:
//!
//! | module | contents |
//! |---|---|
//! | [`geodesy`] | haversine distance, distance matrices |
//! | [`supervision`] | distance-decay kernel, hierarchical prior, soft labels |
//! | [`locfeat`] | location captions, token hashing, coordinate Fourier features |
//! | [`model`] | encoders, forward and backward passes |
//! | [`objective`] | hard/soft InfoNCE, regional fairness penalty |
//! | [`optim`] | AdamW, cosine schedule |
//! | [`trainer`] | training loop |
//! | [`eval`] | retrieval metrics and report |
//! | [`data`] | synthetic world, dataset file format, splits |
//! | [`config`], [`checkpoint`] | file formats |

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geodesy;
pub mod locfeat;
pub mod model;
pub mod objective;
pub mod optim;
pub mod par;
pub mod supervision;
pub mod trainer;

pub use error::{Error, Result};
