//! Conversation analysis toolkit built around interpersonal-circumplex social
//! orientation tags.
//!
//! The pipeline has three stages:
//!
//! 1. **Tagging** ([`tagging`]): every utterance of a conversation gets one of
//!    eight circumplex tags (plus `Not Available` for empty utterances), either
//!    from a remote tagger service, from an LLM-style markdown prompt/response
//!    round trip, or from a deterministic keyword lexicon.
//! 2. **Prediction** ([`features`], [`model`]): per-conversation feature
//!    vectors (tag count fractions, sentiment count fractions, TF-IDF) feed a
//!    class-weighted logistic regression that predicts whether the
//!    conversation ends in failure (e.g. a personal attack) or success.
//! 3. **Analysis** ([`eval`], [`explain`]): seeded data ablations with Welch
//!    t-tests, annotator agreement (pairwise and Fleiss' kappa), counterfactual
//!    tag interventions, and cross-speaker tag co-occurrence ratios.
//!
//! [`corpus`] holds the conversation data model and its JSONL serialization;
//! [`synth`] generates seeded synthetic corpora with planted social dynamics
//! for tests and benchmarks. Everything downstream of input data is
//! deterministic: all randomness flows from explicit seeds.

pub mod corpus;
pub mod eval;
pub mod explain;
pub mod features;
pub mod model;
pub mod synth;
pub mod tagging;

pub(crate) mod util;
pub(crate) mod wire;

#[cfg(test)]
pub(crate) mod testserver;
