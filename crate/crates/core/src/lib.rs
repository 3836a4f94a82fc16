//! Offline diagnostics for exploration saturation in recommender systems.
//!
//! The crate is organised as a file-friendly pipeline:
//!
//! * [`ingest`] parses interaction logs, splits them temporally, builds item
//!   clusters and sessions, and stratifies users by history length.
//! * [`models`] trains four recommenders (MostPopular, BPR-MF, a compact NCF
//!   and LightGCN) behind one scoring/ranking interface.
//! * [`metrics`] turns a fitted model and a test split into a table of
//!   recommendation events carrying an exploration level and utility proxies.
//! * [`saturation`] bins events into exploration quantiles, computes per-user
//!   marginal utility, and detects the quantile where it stops being positive.
//! * [`synth`] generates populations with known tolerance knees, which is how
//!   the detector is validated.
//!
//! Every stochastic step takes an explicit seed; identical inputs produce
//! bit-identical outputs.

pub mod error;
pub mod fixtures;
pub mod ingest;
pub mod metrics;
pub mod models;
pub mod saturation;
pub mod synth;
pub mod textio;

pub use error::{Error, Result};
pub use ingest::{Catalog, Interaction, InteractionLog, Session, Split, Stratum};
pub use metrics::{Axis, RecommendationEvent, UtilityProxy};
pub use models::{Model, ModelKind, Ranked, TrainConfig};
pub use saturation::{DetectionConfig, QuantileScheme, RuleFired, SaturationProfile};
pub use synth::SynthUserSpec;
