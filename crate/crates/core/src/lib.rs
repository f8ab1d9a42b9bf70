//! Curiosity-gated knowledge retrieval for LLM agents.
//!
//! Prior and posterior top-k log-probabilities of a next-screen description
//! are turned into a tail-adjusted Jensen–Shannon information gain
//! ([`divergence`]), accumulated per application with temporal decay
//! ([`gate`]), and, once the accumulated uncertainty exceeds a threshold,
//! used to drive retrieval from local knowledge sources ([`retrieval`]) into
//! versioned AppCards ([`appcards`]) that are injected into the agent prompt.
//! [`harness`] replays recorded episodes through the whole loop.

pub mod api;
pub mod appcards;
pub mod config;
pub mod distributions;
pub mod divergence;
pub mod dump;
pub mod gate;
pub mod harness;
pub mod retrieval;
pub mod text;
