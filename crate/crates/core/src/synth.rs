//! A synthetic multi-label signal task with grammar-perfect teacher traces.
//!
//! Every non-normal label owns one sinusoid on one channel. A record's signal
//! is the sum of its active templates plus white Gaussian noise, and its
//! teacher trace writes one fixed finding sentence per active label into that
//! label's evidence section.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Matrix, SignalRecord};
use crate::trace::{
    canonical_serialize, negative_sentence, LabelSet, SectionKind, StructuredTrace,
};

/// The label assigned when nothing else is active.
pub const NORMAL_LABEL: &str = "NORM";

pub const DEFAULT_LABELS: [&str; 5] = ["NORM", "MI", "STTC", "CD", "HYP"];

/// Prompt paired with every synthetic record.
pub const DEFAULT_QUERY: &str = "Analyze the ECG.";

/// One label's signature: a full-length sinusoid with an integer number of
/// cycles on one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTemplate {
    pub label: String,
    pub channel: usize,
    pub cycles: usize,
    pub amplitude: f64,
    pub section: SectionKind,
    pub sentence: String,
}

impl FeatureTemplate {
    pub fn value(&self, t: usize, steps: usize) -> f64 {
        self.amplitude * (2.0 * PI * self.cycles as f64 * t as f64 / steps as f64).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub labels: LabelSet,
    pub templates: Vec<FeatureTemplate>,
    pub noise_sigma: f64,
    /// Independent activation probability of each non-normal label.
    pub activation_prob: f64,
    pub min_labels: usize,
    pub max_labels: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub steps: usize,
    pub channels: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        let labels: LabelSet = DEFAULT_LABELS.iter().collect();
        TaskSpec::with_labels(labels, 4).expect("default labels are valid")
    }
}

impl TaskSpec {
    /// Default task over `labels` with one template per non-normal label.
    pub fn with_labels(labels: LabelSet, channels: usize) -> Result<Self> {
        if !labels.contains(NORMAL_LABEL) {
            return Err(Error::Infeasible(format!(
                "label set must include {NORMAL_LABEL}"
            )));
        }
        if channels == 0 {
            return Err(Error::Infeasible("need at least one channel".into()));
        }
        let templates = default_templates(&labels, channels);
        Ok(TaskSpec {
            labels,
            templates,
            noise_sigma: 1.0,
            activation_prob: 0.3,
            min_labels: 1,
            max_labels: 3,
            n_train: 2000,
            n_val: 200,
            n_test: 200,
            steps: 256,
            channels,
            seed: 0,
        })
    }

    pub fn template(&self, label: &str) -> Option<&FeatureTemplate> {
        self.templates.iter().find(|t| t.label == label)
    }

    /// Non-normal labels in template order.
    pub fn findings(&self) -> impl Iterator<Item = &str> {
        self.templates.iter().map(|t| t.label.as_str())
    }

    /// Probability of each possible count of active non-normal labels after
    /// the `[min_labels, max_labels]` acceptance filter, unnormalized.
    fn accepted_mass(&self) -> f64 {
        let n = self.templates.len();
        let p = self.activation_prob;
        (0..=n)
            .filter(|&k| self.count_accepted(k))
            .map(|k| binomial(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32))
            .sum()
    }

    /// Whether `k` active findings (k = 0 meaning the normal label alone)
    /// satisfies the label-count bounds.
    fn count_accepted(&self, k: usize) -> bool {
        let count = k.max(1);
        (self.min_labels..=self.max_labels).contains(&count)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Infeasible(m));
        if !self.labels.contains(NORMAL_LABEL) {
            return bad(format!("label set must include {NORMAL_LABEL}"));
        }
        if self.templates.len() + 1 != self.labels.len() {
            return bad("every non-normal label needs exactly one template".into());
        }
        let mut seen = BTreeMap::new();
        for t in &self.templates {
            if t.label == NORMAL_LABEL || !self.labels.contains(&t.label) {
                return bad(format!("template for unexpected label {}", t.label));
            }
            if seen.insert(t.label.clone(), ()).is_some() {
                return bad(format!("duplicate template for {}", t.label));
            }
            if t.channel >= self.channels {
                return bad(format!(
                    "{} uses channel {} of {}",
                    t.label, t.channel, self.channels
                ));
            }
            if t.section == SectionKind::Impression {
                return bad(format!(
                    "{} cannot use the impression as evidence section",
                    t.label
                ));
            }
        }
        for (i, a) in self.templates.iter().enumerate() {
            if self.templates[..i]
                .iter()
                .any(|b| b.channel == a.channel && b.cycles == a.cycles)
            {
                return bad(format!(
                    "{} shares its template with another label",
                    a.label
                ));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        if !(0.0..=1.0).contains(&self.activation_prob) {
            return bad(format!(
                "activation_prob must lie in [0, 1], got {}",
                self.activation_prob
            ));
        }
        if self.min_labels > self.max_labels {
            return bad(format!(
                "min_labels {} exceeds max_labels {}",
                self.min_labels, self.max_labels
            ));
        }
        if self.min_labels > self.labels.len() {
            return bad(format!(
                "min_labels {} exceeds the {} available labels",
                self.min_labels,
                self.labels.len()
            ));
        }
        if self.accepted_mass() <= 0.0 {
            return bad("no label subset satisfies the label-count bounds".into());
        }
        if self.steps == 0 || self.channels == 0 {
            return bad("signal must have positive length and channel count".into());
        }
        Ok(())
    }

    /// Exact probability that each label appears in a generated record.
    pub fn label_marginals(&self) -> Result<BTreeMap<String, f64>> {
        self.validate()?;
        let n = self.templates.len();
        let p = self.activation_prob;
        let z = self.accepted_mass();
        let mut out = BTreeMap::new();
        // A given finding is active in C(n-1, k-1) of the size-k subsets.
        let finding: f64 = (1..=n)
            .filter(|&k| self.count_accepted(k))
            .map(|k| binomial(n - 1, k - 1) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32))
            .sum();
        for label in self.findings() {
            out.insert(label.to_string(), finding / z);
        }
        let normal = if self.count_accepted(0) {
            (1.0 - p).powi(n as i32) / z
        } else {
            0.0
        };
        out.insert(NORMAL_LABEL.to_string(), normal);
        Ok(out)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Evidence section and finding sentence for well-known labels; anything
/// else gets a generic sentence in a round-robin section.
fn finding_text(label: &str, index: usize) -> (SectionKind, String) {
    match label {
        "MI" => (
            SectionKind::Morphology,
            "Pathological Q waves present.".into(),
        ),
        "STTC" => (
            SectionKind::Morphology,
            "ST segment depression present.".into(),
        ),
        "HYP" => (
            SectionKind::Morphology,
            "Increased QRS voltage present.".into(),
        ),
        "CD" => (
            SectionKind::Conduction,
            "Prolonged QRS duration present.".into(),
        ),
        other => {
            let section = [
                SectionKind::Rhythm,
                SectionKind::Conduction,
                SectionKind::Morphology,
            ][index % 3];
            (section, format!("Evidence of {other} present."))
        }
    }
}

fn default_templates(labels: &LabelSet, channels: usize) -> Vec<FeatureTemplate> {
    labels
        .iter()
        .filter(|l| *l != NORMAL_LABEL)
        .enumerate()
        .map(|(i, label)| {
            let (section, sentence) = finding_text(label, i);
            FeatureTemplate {
                label: label.to_string(),
                channel: i % channels,
                cycles: 6 + 3 * i,
                amplitude: 1.0,
                section,
                sentence,
            }
        })
        .collect()
}

/// The noiseless signal of one label's template alone.
pub fn template_signal(spec: &TaskSpec, label: &str) -> Result<SignalRecord> {
    let t = spec
        .template(label)
        .ok_or_else(|| Error::InvalidInput(format!("no template for label {label}")))?;
    let mut m = Matrix::zeros(spec.steps, spec.channels);
    for step in 0..spec.steps {
        m.data[step * spec.channels + t.channel] = t.value(step, spec.steps);
    }
    SignalRecord::new(m)
}

/// Teacher trace for a truth set: one finding sentence per active label in
/// its evidence section, the canonical negative elsewhere.
pub fn teacher_trace(spec: &TaskSpec, truth: &LabelSet) -> String {
    let mut sections: [Vec<&str>; 4] = Default::default();
    for t in &spec.templates {
        if truth.contains(&t.label) {
            sections[t.section.index()].push(&t.sentence);
        }
    }
    let findings: Vec<&str> = truth.iter().filter(|l| *l != NORMAL_LABEL).collect();
    let impression = if findings.is_empty() {
        "Normal ECG.".to_string()
    } else {
        format!("Findings consistent with {}.", findings.join(", "))
    };
    let text = SectionKind::ALL.map(|kind| match kind {
        SectionKind::Impression => impression.clone(),
        _ if sections[kind.index()].is_empty() => {
            negative_sentence(kind).unwrap_or_default().to_string()
        }
        _ => sections[kind.index()].join(" "),
    });
    canonical_serialize(&StructuredTrace::from_parts(text, truth.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub id: String,
    pub signal: SignalRecord,
    #[serde(rename = "labels")]
    pub truth: LabelSet,
    #[serde(rename = "trace")]
    pub teacher_trace: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub train: Vec<SynthRecord>,
    pub val: Vec<SynthRecord>,
    pub test: Vec<SynthRecord>,
}

fn draw_truth(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> LabelSet {
    loop {
        let active: Vec<&str> = spec
            .templates
            .iter()
            .filter(|_| rng.gen::<f64>() < spec.activation_prob)
            .map(|t| t.label.as_str())
            .collect();
        if spec.count_accepted(active.len()) {
            return if active.is_empty() {
                [NORMAL_LABEL].iter().collect()
            } else {
                active.iter().collect()
            };
        }
    }
}

/// Record `index` of the concatenated train/val/test sequence. Each record
/// draws from its own RNG stream, so records can be generated in any order.
fn generate_record(spec: &TaskSpec, index: usize, id: String) -> Result<SynthRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let truth = draw_truth(spec, &mut rng);
    let mut m = Matrix::zeros(spec.steps, spec.channels);
    for t in spec.templates.iter().filter(|t| truth.contains(&t.label)) {
        for step in 0..spec.steps {
            m.data[step * spec.channels + t.channel] += t.value(step, spec.steps);
        }
    }
    if spec.noise_sigma > 0.0 {
        let normal =
            Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Infeasible(e.to_string()))?;
        for v in &mut m.data {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(SynthRecord {
        id,
        signal: SignalRecord::new(m)?,
        teacher_trace: teacher_trace(spec, &truth),
        truth,
    })
}

pub fn generate_dataset(spec: &TaskSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut index = 0;
    let mut split = |name: &str, n: usize| -> Result<Vec<SynthRecord>> {
        let out = (0..n)
            .map(|i| generate_record(spec, index + i, format!("{name}-{i:05}")))
            .collect();
        index += n;
        out
    };
    Ok(SynthDataset {
        train: split("train", spec.n_train)?,
        val: split("val", spec.n_val)?,
        test: split("test", spec.n_test)?,
    })
}

/// Per-template correlation `⟨x, t⟩` on the template's channel.
pub fn matched_filter_scores(signal: &SignalRecord, spec: &TaskSpec) -> Vec<(String, f64, f64)> {
    spec.templates
        .iter()
        .map(|t| {
            let steps = signal.steps().min(spec.steps);
            let mut score = 0.0;
            let mut energy = 0.0;
            for step in 0..steps {
                let v = t.value(step, spec.steps);
                if t.channel < signal.channels() {
                    score += signal.at(step, t.channel) * v;
                }
                energy += v * v;
            }
            (t.label.clone(), score, energy / 2.0)
        })
        .collect()
}

/// Matched-filter detector thresholded halfway between the noiseless
/// statistic with the template off (0) and on (‖t‖²).
pub fn bayes_oracle(signal: &SignalRecord, spec: &TaskSpec) -> LabelSet {
    let mut out: LabelSet = matched_filter_scores(signal, spec)
        .into_iter()
        .filter(|(_, score, threshold)| score > threshold)
        .map(|(label, _, _)| label)
        .collect();
    if out.is_empty() {
        out.insert(NORMAL_LABEL);
    }
    out
}

/// The most frequent exact label set, ties broken by sorted order.
pub fn majority_label_set(records: &[SynthRecord]) -> LabelSet {
    let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.truth.to_vec()).or_default() += 1;
    }
    let mut best: Option<(&Vec<String>, usize)> = None;
    for (k, &c) in &counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k.iter().collect()).unwrap_or_default()
}

pub fn write_records(path: impl AsRef<Path>, records: &[SynthRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<SynthRecord>> {
    read_jsonl(path)
}

pub(crate) fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(item);
    }
    Ok(out)
}
