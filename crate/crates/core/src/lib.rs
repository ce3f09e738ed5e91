//! Clustering, sentiment scoring and view construction for time-stepped
//! microblog corpora.
//!
//! The batch side ([`corpus`], [`cluster`], [`sentiment`], [`pipeline`])
//! turns raw posts into one scored cluster hierarchy per time step and writes
//! them to a [`store`]. The query side ([`explore`], [`layout`], [`query`])
//! picks a maximal antichain through each hierarchy for a topic or sentiment
//! query and lays it out as a nested treemap of tag clouds or as a ranked list.

pub mod cluster;
pub mod corpus;
mod error;
pub mod explore;
pub mod layout;
pub mod pipeline;
pub mod query;
pub mod sentiment;
pub mod store;

pub use error::{Error, Result};
