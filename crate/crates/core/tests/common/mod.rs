//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls the parser, the reward functions or
//! the metric code under test.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Mutex, OnceLock};

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;

use tracerl::cli::{run, Io};
use tracerl::policy::{Matrix, ModelConfig, SignalRecord};

pub const TAGS: [&str; 12] = [
    "<think>",
    "<rhythm>",
    "</rhythm>",
    "<conduction>",
    "</conduction>",
    "<morphology>",
    "</morphology>",
    "<impression>",
    "</impression>",
    "</think>",
    "<answer>",
    "</answer>",
];

pub const SECTIONS: [&str; 4] = ["rhythm", "conduction", "morphology", "impression"];

pub const VOCAB: [&str; 5] = ["NORM", "MI", "STTC", "CD", "HYP"];

/// Whole-text match of the strict grammar: the twelve tags in order with
/// whitespace between structural tags, and no tag inside any body.
pub fn oracle_tags_valid(text: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(
            r"(?s)\A\s*<think>\s*<rhythm>(.*?)</rhythm>\s*<conduction>(.*?)</conduction>\s*<morphology>(.*?)</morphology>\s*<impression>(.*?)</impression>\s*</think>\s*<answer>(.*?)</answer>\s*\z",
        )
        .unwrap()
    });
    match re.captures(text) {
        None => false,
        Some(c) => (1..=5).all(|i| {
            let body = c.get(i).unwrap().as_str();
            TAGS.iter().all(|t| !body.contains(t))
        }),
    }
}

/// Body of the first `<kind>` that has a matching close after it.
pub fn oracle_section(text: &str, kind: &str) -> String {
    static CACHE: OnceLock<Mutex<BTreeMap<String, Regex>>> = OnceLock::new();
    let re = CACHE
        .get_or_init(Default::default)
        .lock()
        .unwrap()
        .entry(kind.to_string())
        .or_insert_with(|| Regex::new(&format!(r"(?s)<{kind}>(.*?)</{kind}>")).unwrap())
        .clone();
    re.captures(text)
        .map(|c| c.get(1).unwrap().as_str().to_string())
        .unwrap_or_default()
}

/// Rules satisfied, counted one indicator at a time.
pub fn oracle_rules(text: &str) -> usize {
    let mut n = 0;
    if oracle_tags_valid(text) {
        n += 1;
    }
    for kind in SECTIONS {
        if !oracle_section(text, kind).trim().is_empty() {
            n += 1;
        }
    }
    n
}

pub fn oracle_structure(text: &str) -> f64 {
    oracle_rules(text) as f64 / 5.0
}

pub fn oracle_canon(label: &str) -> String {
    label
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_uppercase()
}

pub fn oracle_answer(text: &str, vocab: &[&str]) -> BTreeSet<String> {
    let body = oracle_section(text, "answer");
    body.split([',', ';', '\n'])
        .map(oracle_canon)
        .filter(|l| vocab.iter().any(|v| oracle_canon(v) == *l))
        .collect()
}

/// Dice by enumerating a universe and counting memberships.
pub fn oracle_dice(truth: &BTreeSet<String>, pred: &BTreeSet<String>) -> f64 {
    let universe: BTreeSet<&String> = truth.iter().chain(pred).collect();
    let mut both = 0usize;
    let mut in_truth = 0usize;
    let mut in_pred = 0usize;
    for label in universe {
        let (a, b) = (truth.contains(label), pred.contains(label));
        in_truth += a as usize;
        in_pred += b as usize;
        both += (a && b) as usize;
    }
    if in_truth + in_pred == 0 {
        return 1.0;
    }
    (2 * both) as f64 / (in_truth + in_pred) as f64
}

const WORDS: [&str; 14] = [
    "Sinus",
    "rhythm",
    "normal",
    "ST",
    "elevation",
    "QRS",
    "wide",
    "mi",
    "  ",
    "\n",
    "none",
    "<",
    ">",
    "x",
];

fn random_body<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(0..5);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_answer<R: Rng>(rng: &mut R) -> String {
    let pool = ["NORM", "mi", " sttc ", "CD", "hyp", "AFIB", "", "  "];
    let n = rng.gen_range(0..5);
    let seps = [", ", ";", "\n", ","];
    (0..n)
        .map(|_| *pool.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(seps.choose(rng).unwrap())
}

fn whitespace<R: Rng>(rng: &mut R) -> &'static str {
    ["", " ", "\n", "\t ", "  \n"][rng.gen_range(0..5)]
}

/// A well-formed trace assembled from random parts, as a token list so it
/// can be mutated.
fn valid_parts<R: Rng>(rng: &mut R) -> Vec<String> {
    let mut parts = vec![whitespace(rng).to_string(), "<think>".into()];
    for kind in SECTIONS {
        parts.push(whitespace(rng).into());
        parts.push(format!("<{kind}>"));
        parts.push(random_body(rng));
        parts.push(format!("</{kind}>"));
    }
    parts.push(whitespace(rng).into());
    parts.push("</think>".into());
    parts.push(whitespace(rng).into());
    parts.push("<answer>".into());
    parts.push(random_answer(rng));
    parts.push("</answer>".into());
    parts.push(whitespace(rng).into());
    parts
}

/// Random trace text: a valid trace with zero or more corruptions.
pub fn random_trace<R: Rng>(rng: &mut R) -> String {
    let mut parts = valid_parts(rng);
    let corruptions = rng.gen_range(0..4);
    for _ in 0..corruptions {
        let i = rng.gen_range(0..parts.len());
        match rng.gen_range(0..6) {
            0 => {
                parts.remove(i);
            }
            1 => {
                let p = parts[i].clone();
                parts.insert(i, p);
            }
            2 => {
                let j = rng.gen_range(0..parts.len());
                parts.swap(i, j);
            }
            3 => parts.insert(i, "junk".into()),
            4 => parts.insert(i, TAGS.choose(rng).unwrap().to_string()),
            _ => parts[i] = String::new(),
        }
    }
    parts.concat()
}

pub fn random_label_set<R: Rng>(rng: &mut R) -> BTreeSet<String> {
    VOCAB
        .iter()
        .filter(|_| rng.gen_bool(0.35))
        .map(|s| s.to_string())
        .collect()
}

/// A small policy shape that keeps per-coordinate finite differences cheap.
pub fn small_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        patch_len: 4,
        channels: 2,
        max_patches: 4,
        enc_layers: 1,
        enc_dim: 8,
        dec_layers: 2,
        dec_dim: 8,
        heads: 2,
        vocab_size,
        max_seq: 32,
        seed: 3,
    }
}

pub fn smooth_signal(steps: usize, channels: usize, phase: f64) -> SignalRecord {
    let data = (0..steps * channels)
        .map(|i| (0.37 * i as f64 + phase).sin() + 0.1 * (1.3 * i as f64).cos())
        .collect();
    SignalRecord::new(Matrix::from_vec(steps, channels, data).unwrap()).unwrap()
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(
    x: &mut [f64],
    i: usize,
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Runs the command line tool in-process and returns (exit, stdout, stderr).
pub fn cli_with_stdin(args: &[&str], input: &str) -> (i32, String, String) {
    let mut stdin = input.as_bytes();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["tracerl"];
    full.extend_from_slice(args);
    let code = run(
        full,
        Io {
            stdin: &mut stdin,
            stdout: &mut out,
            stderr: &mut err,
        },
    );
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

pub fn cli(args: &[&str]) -> (i32, String, String) {
    cli_with_stdin(args, "")
}

pub fn cli_ok(args: &[&str]) -> String {
    let (code, out, err) = cli(args);
    assert_eq!(code, 0, "{args:?} failed: {err}");
    out
}
