use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Terms removed during tokenization. Files hold one term per line and may be
/// concatenated across languages.
#[derive(Clone, Debug, Default)]
pub struct Stoplist {
    terms: HashSet<String>,
}

impl Stoplist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut list = Self::new();
        list.extend_from_text_iter(terms);
        list
    }

    pub fn load<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let mut list = Self::new();
        for path in paths {
            let path = path.as_ref();
            let text = std::fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
            list.extend_from_text_iter(text.lines());
        }
        Ok(list)
    }

    fn extend_from_text_iter<I, S>(&mut self, lines: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for line in lines {
            let term = line.as_ref().trim();
            if !term.is_empty() && !term.starts_with("//") {
                self.terms.insert(term.to_lowercase());
            }
        }
    }

    pub fn contains(&self, term: &str) -> bool {
        self.terms.contains(term)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

fn looks_like_url(token: &str) -> bool {
    token.contains("://") || token.starts_with("www.")
}

fn normalize(raw: &str) -> Option<String> {
    let lower = raw.to_lowercase();
    if looks_like_url(&lower) {
        return None;
    }
    let token = lower
        .trim_start_matches(|c: char| !c.is_alphanumeric() && c != '#' && c != '@')
        .trim_end_matches(|c: char| !c.is_alphanumeric());
    if token.is_empty() || token.starts_with('@') || looks_like_url(token) {
        return None;
    }
    // a bare run of '#' carries no content
    if token.trim_start_matches('#').is_empty() {
        return None;
    }
    Some(token.to_owned())
}

/// Splits post text into lowercase tokens.
///
/// Mentions (`@user`) and URLs are removed, surrounding punctuation is
/// stripped, a leading `#` is kept so hashtags survive verbatim, and stoplisted
/// terms are dropped.
pub fn tokenize(text: &str, stoplist: &Stoplist) -> Vec<String> {
    text.split_whitespace()
        .filter_map(normalize)
        .filter(|t| !stoplist.contains(t))
        .collect()
}
