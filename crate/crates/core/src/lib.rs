//! Sock-puppet random-walk auditing of recommendation systems.
//!
//! The crate is organised as a pipeline:
//!
//! * [`catalog`] synthesizes a heavy-tailed video catalog with known latent
//!   properties (popularity, topic affinity, evoked emotion).
//! * [`platform`] simulates the audited platform: a search endpoint and a
//!   recommendation endpoint driven by a ground-truth [`platform::RecommendationPolicy`].
//! * [`auditor`] runs the random-walk protocol against any [`platform::PlatformDriver`]
//!   and selects the annotation sample.
//! * [`annotation`] simulates (or imports) Likert ratings and aggregates them.
//! * [`stats`] holds the Mann-Whitney U, Krippendorff's alpha and descriptive kernels.
//! * [`report`] turns an audit plus ratings into popularity/content test tables,
//!   agreement summaries, boxplot series and bias verdicts.
//! * [`config`] is the run configuration and [`cli`] the command-line stages.

pub mod annotation;
pub mod auditor;
pub mod catalog;
pub mod cli;
pub mod config;
pub mod platform;
pub mod provenance;
pub mod report;
pub mod rng;
pub mod stats;

/// Tool version embedded in every file the pipeline writes.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub use annotation::{RaterProfile, RatingRecord};
pub use auditor::{AuditRun, RandomWalk, StepRecord};
pub use catalog::{Catalog, CatalogConfig, Topic, TopicId, Video, VideoId};
pub use platform::{PlatformDriver, PlatformSim, RankedList, RecommendationPolicy};
pub use rng::RandomStream;
