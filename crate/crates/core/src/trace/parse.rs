use super::{
    canonicalize_label, LabelSet, SectionKind, ANSWER_CLOSE, ANSWER_OPEN, GRAMMAR_TAGS,
    THINK_CLOSE, THINK_OPEN,
};

const ANSWER_OPEN_IDX: usize = 10;
const ANSWER_CLOSE_IDX: usize = 11;

/// A parsed reasoning trace with the indicators the structure reward reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredTrace {
    sections: [String; 4],
    answer_text: String,
    answer_set: LabelSet,
    rejected_labels: Vec<String>,
    tags_valid: bool,
    section_valid: [bool; 4],
}

impl StructuredTrace {
    /// Builds a trace directly from section texts and an answer set, as if
    /// its canonical serialization had been parsed.
    pub fn from_parts(sections: [String; 4], answer_set: LabelSet) -> Self {
        let tags_valid = !sections
            .iter()
            .any(|s| GRAMMAR_TAGS.iter().any(|t| s.contains(t)));
        let section_valid = sections.clone().map(|s| !s.trim().is_empty());
        StructuredTrace {
            answer_text: answer_set.to_string(),
            sections,
            answer_set,
            rejected_labels: Vec::new(),
            tags_valid,
            section_valid,
        }
    }

    pub fn section(&self, kind: SectionKind) -> &str {
        &self.sections[kind.index()]
    }

    pub fn sections(&self) -> &[String; 4] {
        &self.sections
    }

    pub fn answer_text(&self) -> &str {
        &self.answer_text
    }

    pub fn answer_set(&self) -> &LabelSet {
        &self.answer_set
    }

    /// Canonicalized answer tokens that were not in the label vocabulary.
    pub fn rejected_labels(&self) -> &[String] {
        &self.rejected_labels
    }

    /// The tag-hierarchy indicator.
    pub fn tags_valid(&self) -> bool {
        self.tags_valid
    }

    /// Non-empty-section indicator for one section.
    pub fn section_valid(&self, kind: SectionKind) -> bool {
        self.section_valid[kind.index()]
    }

    /// Number of the five format rules this trace satisfies.
    pub fn satisfied_rules(&self) -> usize {
        usize::from(self.tags_valid) + self.section_valid.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, Copy)]
struct TagHit {
    tag: usize,
    start: usize,
    end: usize,
}

fn scan_tags(text: &str) -> Vec<TagHit> {
    let mut hits = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let rest = &text[i..];
            if let Some(tag) = GRAMMAR_TAGS.iter().position(|t| rest.starts_with(t)) {
                let end = i + GRAMMAR_TAGS[tag].len();
                hits.push(TagHit { tag, start: i, end });
                i = end;
                continue;
            }
        }
        i += 1;
    }
    hits
}

fn is_blank(s: &str) -> bool {
    s.trim().is_empty()
}

/// Checks the strict grammar over the scanned tag stream.
fn grammar_holds(text: &str, hits: &[TagHit]) -> bool {
    if hits.len() != GRAMMAR_TAGS.len() || hits.iter().enumerate().any(|(i, h)| h.tag != i) {
        return false;
    }
    if !is_blank(&text[..hits[0].start]) || !is_blank(&text[hits[ANSWER_CLOSE_IDX].end..]) {
        return false;
    }
    // Gaps between consecutive tags that are structural (not section or answer
    // bodies) must be whitespace only. Bodies sit after an even-indexed opener
    // in positions 1,3,5,7 and after the answer opener.
    (0..hits.len() - 1).all(|i| {
        let body = matches!(i, 1 | 3 | 5 | 7 | ANSWER_OPEN_IDX);
        body || is_blank(&text[hits[i].end..hits[i + 1].start])
    })
}

/// Text between the first `open` tag and the next `close` tag after it.
fn region<'t>(text: &'t str, hits: &[TagHit], open: usize, close: usize) -> Option<&'t str> {
    let first = hits.iter().position(|h| h.tag == open)?;
    let closing = hits[first + 1..].iter().find(|h| h.tag == close)?;
    Some(&text[hits[first].end..closing.start])
}

/// Parses arbitrary text into a [`StructuredTrace`]. Total: never fails.
///
/// Answer tokens are split on commas, semicolons and newlines and
/// canonicalized; only members of `label_vocab` enter the answer set.
pub fn parse_trace(raw_text: &str, label_vocab: &LabelSet) -> StructuredTrace {
    let hits = scan_tags(raw_text);
    let tags_valid = grammar_holds(raw_text, &hits);

    let sections = SectionKind::ALL.map(|kind| {
        let i = kind.index();
        region(raw_text, &hits, 1 + 2 * i, 2 + 2 * i)
            .unwrap_or("")
            .to_string()
    });
    let section_valid = sections.clone().map(|s| !is_blank(&s));

    let answer_text = region(raw_text, &hits, ANSWER_OPEN_IDX, ANSWER_CLOSE_IDX)
        .unwrap_or("")
        .to_string();
    let mut answer_set = LabelSet::new();
    let mut rejected_labels = Vec::new();
    for token in answer_text.split([',', ';', '\n']) {
        let label = canonicalize_label(token);
        if label.is_empty() {
            continue;
        }
        if label_vocab.contains(&label) {
            answer_set.insert(&label);
        } else {
            rejected_labels.push(label);
        }
    }

    StructuredTrace {
        sections,
        answer_text,
        answer_set,
        rejected_labels,
        tags_valid,
        section_valid,
    }
}

/// Emits the canonical text form: fixed tag order, one newline between
/// sections, answer labels ascending and comma-joined.
pub fn canonical_serialize(trace: &StructuredTrace) -> String {
    let mut out = String::new();
    out.push_str(THINK_OPEN);
    out.push('\n');
    for kind in SectionKind::ALL {
        out.push_str(kind.open_tag());
        out.push_str(trace.section(kind));
        out.push_str(kind.close_tag());
        out.push('\n');
    }
    out.push_str(THINK_CLOSE);
    out.push('\n');
    out.push_str(ANSWER_OPEN);
    out.push_str(&trace.answer_set().to_string());
    out.push_str(ANSWER_CLOSE);
    out
}
