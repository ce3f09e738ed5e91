//! Ingestion of time-stamped posts into per-step user profile documents.
//!
//! Posts are partitioned into contiguous fixed-length time steps. Within a
//! step, every active user gets one profile: the concatenation of their posts
//! in timestamp order, tokenized and turned into an L2-normalized term
//! frequency vector over the step's dictionary.

mod ingest;
mod tokenize;
mod vector;

use std::collections::BTreeMap;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

pub use ingest::{parse_timestamp, read_all, read_posts, FileIngest};
pub use tokenize::{tokenize, Stoplist};
pub use vector::{Accumulator, Dictionary, SparseTermVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PostRecord {
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
}

/// Contiguous, non-overlapping time steps starting at `epoch_start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeStepSpec {
    pub epoch_start: DateTime<Utc>,
    pub step_length: TimeDelta,
    pub step_count: usize,
}

impl TimeStepSpec {
    pub fn new(
        epoch_start: DateTime<Utc>,
        step_length: TimeDelta,
        step_count: usize,
    ) -> Result<Self> {
        if step_length <= TimeDelta::zero() {
            return Err(Error::Config("time step length must be positive".into()));
        }
        if step_count == 0 {
            return Err(Error::Config("step count must be at least 1".into()));
        }
        Ok(Self {
            epoch_start,
            step_length,
            step_count,
        })
    }

    /// Smallest spec with steps aligned to multiples of `step_length` since the
    /// Unix epoch that covers every timestamp.
    pub fn covering(
        timestamps: impl IntoIterator<Item = DateTime<Utc>>,
        step_length: TimeDelta,
    ) -> Result<Self> {
        let step_secs = step_length.num_seconds();
        if step_secs <= 0 {
            return Err(Error::Config(
                "time step length must be at least one second".into(),
            ));
        }
        let (mut lo, mut hi) = (i64::MAX, i64::MIN);
        for ts in timestamps {
            lo = lo.min(ts.timestamp());
            hi = hi.max(ts.timestamp());
        }
        if lo > hi {
            return Err(Error::Invalid(
                "no timestamps to derive time steps from".into(),
            ));
        }
        let start = lo.div_euclid(step_secs) * step_secs;
        let count = ((hi - start) / step_secs + 1) as usize;
        let epoch_start = DateTime::from_timestamp(start, 0)
            .ok_or_else(|| Error::Invalid(format!("timestamp {start} out of range")))?;
        Self::new(epoch_start, step_length, count)
    }

    pub fn step_of(&self, ts: DateTime<Utc>) -> Option<usize> {
        let offset = ts - self.epoch_start;
        if offset < TimeDelta::zero() {
            return None;
        }
        let idx = offset.num_seconds() / self.step_length.num_seconds().max(1);
        usize::try_from(idx).ok().filter(|&i| i < self.step_count)
    }

    pub fn step_start(&self, step: usize) -> DateTime<Utc> {
        self.epoch_start + self.step_length * step as i32
    }

    /// Human-readable label: the date for day-aligned steps, else date and time.
    pub fn label(&self, step: usize) -> String {
        let start = self.step_start(step);
        if self.step_length.num_seconds() % 86_400 == 0 && start.timestamp() % 86_400 == 0 {
            start.format("%Y-%m-%d").to_string()
        } else {
            start.format("%Y-%m-%dT%H:%MZ").to_string()
        }
    }
}

/// How profile term counts become vector weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermWeighting {
    /// Raw term frequency, L2-normalized.
    #[default]
    Tf,
    /// Term frequency times `ln(N / df)`, L2-normalized.
    TfIdf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserProfile {
    pub user_id: String,
    pub step_index: usize,
    pub tokens: Vec<String>,
    pub vector: SparseTermVector,
}

impl UserProfile {
    /// A profile whose vector is empty (every token stoplisted or zero-weighted).
    pub fn is_degenerate(&self) -> bool {
        self.vector.is_empty()
    }
}

/// All profiles of one time step over the step's dictionary.
#[derive(Clone, Debug)]
pub struct StepCorpus {
    pub step_index: usize,
    pub dictionary: Dictionary,
    /// Sorted by user id.
    pub profiles: Vec<UserProfile>,
    pub post_count: usize,
}

impl StepCorpus {
    pub fn token_total(&self) -> usize {
        self.profiles.iter().map(|p| p.tokens.len()).sum()
    }

    pub fn degenerate_users(&self) -> impl Iterator<Item = &str> {
        self.profiles
            .iter()
            .filter(|p| p.is_degenerate())
            .map(|p| p.user_id.as_str())
    }

    pub fn clusterable(&self) -> impl Iterator<Item = &UserProfile> {
        self.profiles.iter().filter(|p| !p.is_degenerate())
    }
}

#[derive(Clone, Debug)]
pub struct ProfileBuild {
    pub steps: Vec<StepCorpus>,
    /// Posts whose timestamp fell outside every step.
    pub out_of_range: usize,
}

/// Term-count vector of `tokens`, weighted and L2-normalized. Tokens missing
/// from the dictionary are ignored; an empty result marks a degenerate profile.
pub fn vectorize(
    tokens: &[String],
    dictionary: &Dictionary,
    weighting: TermWeighting,
) -> SparseTermVector {
    let counts = tokens
        .iter()
        .filter_map(|t| dictionary.id(t))
        .map(|id| (id, 1.0));
    let tf = SparseTermVector::from_pairs(counts);
    let weighted = match weighting {
        TermWeighting::Tf => tf,
        TermWeighting::TfIdf => {
            let n = dictionary.doc_count().max(1) as f64;
            SparseTermVector::from_pairs(tf.iter().map(|(id, count)| {
                let df = dictionary.doc_freq(id).max(1) as f64;
                (id, count * (n / df).ln())
            }))
        }
    };
    weighted.normalized()
}

/// Groups posts into per-(user, step) profiles and vectorizes them.
///
/// Posts may arrive in any order; each user's tokens follow post timestamp
/// order, with arrival order breaking ties.
pub fn build_profiles(
    posts: impl IntoIterator<Item = PostRecord>,
    spec: &TimeStepSpec,
    stoplist: &Stoplist,
    weighting: TermWeighting,
) -> ProfileBuild {
    type UserPosts = BTreeMap<String, Vec<(DateTime<Utc>, usize, String)>>;
    let mut by_step: Vec<UserPosts> = vec![BTreeMap::new(); spec.step_count];
    let mut post_counts = vec![0usize; spec.step_count];
    let mut out_of_range = 0;
    for (seq, post) in posts.into_iter().enumerate() {
        match spec.step_of(post.timestamp) {
            Some(step) => {
                post_counts[step] += 1;
                by_step[step].entry(post.user_id).or_default().push((
                    post.timestamp,
                    seq,
                    post.text,
                ));
            }
            None => out_of_range += 1,
        }
    }

    let steps = by_step
        .into_iter()
        .enumerate()
        .map(|(step_index, users)| {
            let token_lists: Vec<(String, Vec<String>)> = users
                .into_iter()
                .map(|(user, mut posts)| {
                    posts.sort_by_key(|&(ts, seq, _)| (ts, seq));
                    let tokens = posts
                        .iter()
                        .flat_map(|(_, _, text)| tokenize(text, stoplist))
                        .collect();
                    (user, tokens)
                })
                .collect();
            let dictionary = Dictionary::build(token_lists.iter().map(|(_, t)| t));
            let profiles = token_lists
                .into_iter()
                .map(|(user_id, tokens)| {
                    let vector = vectorize(&tokens, &dictionary, weighting);
                    UserProfile {
                        user_id,
                        step_index,
                        tokens,
                        vector,
                    }
                })
                .collect();
            StepCorpus {
                step_index,
                dictionary,
                profiles,
                post_count: post_counts[step_index],
            }
        })
        .collect();
    ProfileBuild {
        steps,
        out_of_range,
    }
}
