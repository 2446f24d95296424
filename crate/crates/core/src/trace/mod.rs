//! The four-tier reasoning trace grammar.
//!
//! A well-formed trace is one `<think>` region holding the four section tag
//! pairs in fixed order, followed by one `<answer>` region:
//!
//! ```text
//! <think>
//! <rhythm>...</rhythm>
//! <conduction>...</conduction>
//! <morphology>...</morphology>
//! <impression>...</impression>
//! </think>
//! <answer>MI, STTC</answer>
//! ```
//!
//! Only whitespace may appear between structural tags. Section text is opaque
//! but may not contain any of the twelve grammar tags. Parsing never fails:
//! malformed text yields `tags_valid == false` and whatever sections could be
//! recovered.

mod labels;
mod parse;

pub use labels::{canonicalize_label, LabelSet};
pub use parse::{canonical_serialize, parse_trace, StructuredTrace};

use std::fmt;

use serde::{Deserialize, Serialize};

/// Fixed sentence standing in for an unremarkable section. The impression
/// has none: a missing impression is never filled in.
pub fn negative_sentence(kind: SectionKind) -> Option<&'static str> {
    match kind {
        SectionKind::Rhythm => Some("No rhythm abnormalities identified."),
        SectionKind::Conduction => Some("No conduction abnormalities identified."),
        SectionKind::Morphology => Some("No morphological abnormalities identified."),
        SectionKind::Impression => None,
    }
}

/// The mandatory clinical sections, in grammar order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionKind {
    Rhythm,
    Conduction,
    Morphology,
    Impression,
}

impl SectionKind {
    pub const ALL: [SectionKind; 4] = [
        SectionKind::Rhythm,
        SectionKind::Conduction,
        SectionKind::Morphology,
        SectionKind::Impression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SectionKind::Rhythm => "rhythm",
            SectionKind::Conduction => "conduction",
            SectionKind::Morphology => "morphology",
            SectionKind::Impression => "impression",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn open_tag(self) -> &'static str {
        match self {
            SectionKind::Rhythm => "<rhythm>",
            SectionKind::Conduction => "<conduction>",
            SectionKind::Morphology => "<morphology>",
            SectionKind::Impression => "<impression>",
        }
    }

    pub fn close_tag(self) -> &'static str {
        match self {
            SectionKind::Rhythm => "</rhythm>",
            SectionKind::Conduction => "</conduction>",
            SectionKind::Morphology => "</morphology>",
            SectionKind::Impression => "</impression>",
        }
    }

    pub fn from_name(name: &str) -> Option<SectionKind> {
        SectionKind::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// All twelve grammar tags in canonical order of appearance.
pub const GRAMMAR_TAGS: [&str; 12] = [
    THINK_OPEN,
    "<rhythm>",
    "</rhythm>",
    "<conduction>",
    "</conduction>",
    "<morphology>",
    "</morphology>",
    "<impression>",
    "</impression>",
    THINK_CLOSE,
    ANSWER_OPEN,
    ANSWER_CLOSE,
];
