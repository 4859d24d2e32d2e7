//! Credibility classification of news articles from their text and the
//! agreement ("stance") between headline and body.

pub mod corpus;
pub mod encode;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod models;
pub mod scoring;
pub mod stance;

/// Bumped whenever a saved model or featurizer can no longer be read back.
pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

#[doc(hidden)]
pub mod testkit;
