use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Trims, collapses internal whitespace runs to a single space and uppercases.
pub fn canonicalize_label(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_uppercase()
}

/// An unordered set of canonical diagnosis labels.
///
/// Every insertion goes through [`canonicalize_label`], so two members can
/// never differ only by case or surrounding whitespace. Empty strings are
/// never members.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet(BTreeSet<String>);

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts the canonical form of `raw`. Returns false for blank input or
    /// an already present label.
    pub fn insert(&mut self, raw: &str) -> bool {
        let label = canonicalize_label(raw);
        if label.is_empty() {
            return false;
        }
        self.0.insert(label)
    }

    pub fn contains(&self, raw: &str) -> bool {
        self.0.contains(&canonicalize_label(raw))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Members in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn union(&self, other: &LabelSet) -> LabelSet {
        LabelSet(self.0.union(&other.0).cloned().collect())
    }

    pub fn intersection(&self, other: &LabelSet) -> LabelSet {
        LabelSet(self.0.intersection(&other.0).cloned().collect())
    }

    pub fn intersection_len(&self, other: &LabelSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn is_subset(&self, other: &LabelSet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn to_vec(&self) -> Vec<String> {
        self.0.iter().cloned().collect()
    }
}

impl<S: AsRef<str>> FromIterator<S> for LabelSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut set = LabelSet::new();
        for s in iter {
            set.insert(s.as_ref());
        }
        set
    }
}

impl From<Vec<String>> for LabelSet {
    fn from(v: Vec<String>) -> Self {
        v.into_iter().collect()
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(s: LabelSet) -> Self {
        s.0.into_iter().collect()
    }
}

impl fmt::Display for LabelSet {
    /// Ascending, comma-joined. This is the answer-region form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for label in &self.0 {
            if !first {
                f.write_str(", ")?;
            }
            f.write_str(label)?;
            first = false;
        }
        Ok(())
    }
}
