//! Quality-driven disorder handling for m-way sliding-window stream joins.
//!
//! Every input stream passes through a K-slack reordering buffer, the buffer
//! outputs are merged by a [`sync::Synchronizer`], and the merged stream feeds
//! the [`join::JoinOperator`]. A [`manager::BufferSizeManager`] periodically
//! picks the smallest common buffer size `K` whose modeled recall
//! ([`model::estimate_recall`]) meets the user's recall requirement.
//!
//! The [`harness`] module wires the pipeline, runs baselines, and measures the
//! produced recall against the ground truth computed by [`oracle`].

pub mod datagen;
pub mod engine;
pub mod error;
pub mod harness;
pub mod join;
pub mod kslack;
pub mod kv;
pub mod manager;
pub mod model;
pub mod oracle;
pub mod predicate;
pub mod profiler;
pub mod stats;
pub mod stream;
pub mod sync;

pub use error::{Error, Result};
pub use stream::{Millis, Timestamp, Tuple, Value};
