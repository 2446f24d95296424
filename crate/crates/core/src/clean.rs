//! Rule-based cleaning of raw analysis records into canonical traces.
//!
//! Three passes: placeholder normalization, removal of records without an
//! impression, and deterministic restructuring through a field-name table.
//! Section text is only ever copied from the input or replaced by a fixed
//! negative sentence.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{
    canonical_serialize, negative_sentence, LabelSet, SectionKind, StructuredTrace,
};

/// Values treated as "nothing recorded", compared case-insensitively after
/// trimming.
pub const PLACEHOLDERS: [&str; 4] = ["", "none", "n/a", "-"];

pub fn is_placeholder(value: Option<&str>) -> bool {
    match value {
        None => true,
        Some(v) => {
            let v = v.trim().to_lowercase();
            PLACEHOLDERS.contains(&v.as_str())
        }
    }
}

/// One raw analysis. A `null` field counts as a placeholder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    #[serde(default)]
    pub source_sections: BTreeMap<String, Option<String>>,
    #[serde(default)]
    pub labels: Vec<String>,
}

/// A cleaned record. Its sections are the four canonical ones, so it reads
/// back as a [`RawRecord`] and cleans to itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanRecord {
    pub id: String,
    pub source_sections: BTreeMap<String, String>,
    pub labels: Vec<String>,
    pub trace: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub input: usize,
    pub kept: usize,
    pub dropped_missing_impression: usize,
    /// Section fields replaced by their canonical negative sentence.
    pub placeholders_normalized: usize,
    /// Kept records whose fields were not already exactly the four
    /// canonical section names.
    pub reformatted: usize,
}

impl fmt::Display for CleanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cleaned {} records: kept {}, dropped {} without impression, normalized {} placeholders, reformatted {}",
            self.input, self.kept, self.dropped_missing_impression, self.placeholders_normalized, self.reformatted
        )
    }
}

/// Field-name table mapping source field names onto sections. Names are
/// matched case-insensitively after trimming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMap {
    table: BTreeMap<String, SectionKind>,
}

impl Default for FieldMap {
    fn default() -> Self {
        let mut table = BTreeMap::new();
        for kind in SectionKind::ALL {
            table.insert(kind.name().to_string(), kind);
        }
        FieldMap { table }
    }
}

impl FieldMap {
    pub fn with_alias(mut self, field: &str, kind: SectionKind) -> Self {
        self.table.insert(field.trim().to_lowercase(), kind);
        self
    }

    /// Parses `field=section`.
    pub fn parse_alias(self, spec: &str) -> Result<Self> {
        let (field, section) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("alias {spec:?} is not field=section")))?;
        let kind = SectionKind::from_name(section.trim()).ok_or_else(|| {
            Error::InvalidInput(format!("unknown section {section:?} in alias {spec:?}"))
        })?;
        Ok(self.with_alias(field, kind))
    }

    pub fn section_of(&self, field: &str) -> Option<SectionKind> {
        self.table.get(&field.trim().to_lowercase()).copied()
    }
}

/// Replaces placeholder-only fields of the rhythm, conduction and morphology
/// sections with their negative sentence. Impressions and unmapped fields
/// are left alone. Returns the record and the number of fields replaced.
pub fn normalize_placeholders(record: &RawRecord, map: &FieldMap) -> (RawRecord, usize) {
    let mut out = record.clone();
    let mut replaced = 0;
    for (field, value) in &mut out.source_sections {
        let Some(sentence) = map.section_of(field).and_then(negative_sentence) else {
            continue;
        };
        if is_placeholder(value.as_deref()) {
            *value = Some(sentence.to_string());
            replaced += 1;
        }
    }
    (out, replaced)
}

fn has_impression(record: &RawRecord, map: &FieldMap) -> bool {
    record.source_sections.iter().any(|(field, value)| {
        map.section_of(field) == Some(SectionKind::Impression) && !is_placeholder(value.as_deref())
    })
}

/// Drops records whose impression is absent or placeholder-only.
pub fn filter_missing_impression(
    records: Vec<RawRecord>,
    map: &FieldMap,
) -> (Vec<RawRecord>, CleanReport) {
    let input = records.len();
    let kept: Vec<RawRecord> = records
        .into_iter()
        .filter(|r| has_impression(r, map))
        .collect();
    let report = CleanReport {
        input,
        kept: kept.len(),
        dropped_missing_impression: input - kept.len(),
        ..CleanReport::default()
    };
    (kept, report)
}

/// Final text of each section after mapping, merging and negative fill.
pub fn restructure_sections(record: &RawRecord, map: &FieldMap) -> Result<[String; 4]> {
    let mut unmapped = Vec::new();
    let mut parts: [Vec<&str>; 4] = Default::default();
    for (field, value) in &record.source_sections {
        match map.section_of(field) {
            None => unmapped.push(field.clone()),
            Some(kind) => {
                if !is_placeholder(value.as_deref()) {
                    parts[kind.index()].push(value.as_deref().unwrap_or_default().trim());
                }
            }
        }
    }
    if !unmapped.is_empty() {
        return Err(Error::UnmappableFields {
            id: record.id.clone(),
            keys: unmapped,
        });
    }
    let mut sections: [String; 4] = Default::default();
    for kind in SectionKind::ALL {
        let text = if parts[kind.index()].is_empty() {
            match negative_sentence(kind) {
                Some(s) => s.to_string(),
                None => {
                    return Err(Error::BadRecord {
                        id: record.id.clone(),
                        reason: "no impression".into(),
                    })
                }
            }
        } else {
            parts[kind.index()].join(" ")
        };
        if text.contains('<') {
            return Err(Error::BadRecord {
                id: record.id.clone(),
                reason: format!("{} text contains markup", kind.name()),
            });
        }
        sections[kind.index()] = text;
    }
    Ok(sections)
}

fn record_labels(record: &RawRecord) -> Result<LabelSet> {
    if let Some(bad) = record
        .labels
        .iter()
        .find(|l| l.contains([',', ';', '\n', '<']))
    {
        return Err(Error::BadRecord {
            id: record.id.clone(),
            reason: format!("label {bad:?} contains a delimiter"),
        });
    }
    Ok(record.labels.iter().collect())
}

/// Canonical trace for a record that passed filtering.
pub fn restructure(record: &RawRecord, map: &FieldMap) -> Result<String> {
    let sections = restructure_sections(record, map)?;
    Ok(canonical_serialize(&StructuredTrace::from_parts(
        sections,
        record_labels(record)?,
    )))
}

fn is_canonical_layout(record: &RawRecord) -> bool {
    record.source_sections.len() == 4
        && SectionKind::ALL
            .iter()
            .all(|k| record.source_sections.contains_key(k.name()))
}

/// Normalize, filter, restructure.
pub fn clean_records(
    records: Vec<RawRecord>,
    map: &FieldMap,
) -> Result<(Vec<CleanRecord>, CleanReport)> {
    let mut seen = BTreeMap::new();
    for r in &records {
        if r.id.trim().is_empty() {
            return Err(Error::BadRecord {
                id: r.id.clone(),
                reason: "empty id".into(),
            });
        }
        if seen.insert(r.id.as_str(), ()).is_some() {
            return Err(Error::BadRecord {
                id: r.id.clone(),
                reason: "duplicate id".into(),
            });
        }
    }
    let mut placeholders = 0;
    let normalized: Vec<RawRecord> = records
        .iter()
        .map(|r| {
            let (n, k) = normalize_placeholders(r, map);
            placeholders += k;
            n
        })
        .collect();
    let (kept, mut report) = filter_missing_impression(normalized, map);
    report.placeholders_normalized = placeholders;
    let mut out = Vec::with_capacity(kept.len());
    for r in &kept {
        let sections = restructure_sections(r, map)?;
        let labels = record_labels(r)?;
        if !is_canonical_layout(r) {
            report.reformatted += 1;
        }
        let trace = canonical_serialize(&StructuredTrace::from_parts(
            sections.clone(),
            labels.clone(),
        ));
        out.push(CleanRecord {
            id: r.id.clone(),
            source_sections: SectionKind::ALL
                .iter()
                .map(|k| (k.name().to_string(), sections[k.index()].clone()))
                .collect(),
            labels: labels.to_vec(),
            trace,
        });
    }
    Ok((out, report))
}
