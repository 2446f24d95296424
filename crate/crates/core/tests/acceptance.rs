//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use common::*;
use tracerl::eval::{fleiss_kappa, quadratic_weighted_kappa, set_metrics, spearman_rho};
use tracerl::pipeline::{query_tokens, sft_examples};
use tracerl::policy::{
    assemble_input, encode_signal, logprob_grad, project, sample_group, Decoding, ModelConfig,
    PolicyParams, Tokenizer,
};
use tracerl::reward::{dice_reward, group_advantages, structure_reward};
use tracerl::synth::{generate_dataset, TaskSpec};
use tracerl::trace::{parse_trace, LabelSet};
use tracerl::train::{
    sft_loss_and_grad, sspo_objective_and_grad, GroupSample, PolicySnapshot, TrainConfig,
};

// Tolerances and budgets, pinned.
const ORACLE_CASES: usize = 10_000;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const ADV_GROUPS: usize = 1_000;
const ADV_MEAN_TOL_PER_G: f64 = 1e-9;
const ADV_STD_RANGE: (f64, f64) = (0.99, 1.0);
const ADV_SHIFT_TOL: f64 = 1e-9;
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, at the level of the central
/// difference's own rounding noise.
const FD_REL_FLOOR: f64 = 1e-6;
const FD_COORDS: usize = 100;
const FD_POINTS: usize = 3;
const FD_BUDGET: Duration = Duration::from_secs(120);
const ON_POLICY_TOL: f64 = 1e-6;
const KL_PAIRS: usize = 1_000;
const SFT_MIN_STRUCTURE: f64 = 0.95;
const SFT_MIN_SAMPLE_F1: f64 = 0.60;
const SSPO_MIN_DICE_GAIN: f64 = 0.05;
const SSPO_MIN_SSV: f64 = 99.0;
const E2E_BUDGET: Duration = Duration::from_secs(15 * 60);
const AGREEMENT_TOL: f64 = 1e-9;

// Learning rates used for the end-to-end run. The toy policy is far smaller
// than the model the defaults were set for; see the project notes.
const E2E_SFT_LR: &str = "1e-3";
const E2E_RL_LR: &str = "3e-4";
const E2E_RL_EPOCHS: &str = "5";

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1 reward oracle equivalence", reward_oracle_equivalence),
        ("2 structure reward range", structure_reward_range),
        ("3 advantage properties", advantage_properties),
        ("4 gradient correctness", gradient_correctness),
        ("5 on-policy identity", on_policy_identity),
        ("6 KL non-negativity", kl_non_negativity),
        ("7 end-to-end training effect", end_to_end_training),
        ("8 cleaning pipeline", cleaning_pipeline),
        ("9 metrics", metrics_fixtures),
        ("10 determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{tag} criterion {name}: {} [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn reward_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vocab: LabelSet = VOCAB.iter().collect();
    let mut mismatches = 0;
    let mut valid = 0;
    for _ in 0..ORACLE_CASES {
        let text = random_trace(&mut rng);
        let truth_set = random_label_set(&mut rng);
        let truth: LabelSet = truth_set.iter().collect();
        let parsed = parse_trace(&text, &vocab);
        let s = structure_reward(&parsed);
        let d = dice_reward(&truth, parsed.answer_set());
        let s_ref = oracle_structure(&text);
        let d_ref = oracle_dice(&truth_set, &oracle_answer(&text, &VOCAB));
        if s.to_bits() != s_ref.to_bits() || d.to_bits() != d_ref.to_bits() {
            mismatches += 1;
        }
        valid += (s == 1.0) as usize;
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < ORACLE_BUDGET,
        format!(
            "{ORACLE_CASES} cases ({valid} fully valid), {mismatches} mismatches, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn structure_reward_range() -> Outcome {
    let allowed: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let vocab: LabelSet = VOCAB.iter().collect();
    let mut bad = Vec::new();
    for mask in 0u32..32 {
        let tags_ok = mask & 1 == 1;
        let mut text = String::from("<think>");
        for (k, kind) in SECTIONS.iter().enumerate() {
            let filled = mask >> (k + 1) & 1 == 1;
            text.push_str(&format!(
                "<{kind}>{}</{kind}>",
                if filled { "finding" } else { " " }
            ));
        }
        text.push_str("</think><answer>MI</answer>");
        if !tags_ok {
            text.push_str("</answer>");
        }
        let r = structure_reward(&parse_trace(&text, &vocab));
        let expected = allowed[mask.count_ones() as usize];
        if !allowed.iter().any(|a| a.to_bits() == r.to_bits()) || r.to_bits() != expected.to_bits()
        {
            bad.push((mask, r));
        }
    }
    outcome(
        bad.is_empty(),
        format!("32 combinations, off-grid: {bad:?}"),
    )
}

fn advantage_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = 1e-8;
    let (mut worst_mean, mut worst_shift) = (0.0f64, 0.0f64);
    let (mut std_lo, mut std_hi) = (f64::INFINITY, 0.0f64);
    let mut checked_std = 0;
    for k in 0..ADV_GROUPS {
        let g = [2, 4, 8][k % 3];
        let scale = 10f64.powf(rng.gen_range(-3.0..1.0));
        let r: Vec<f64> = (0..g).map(|_| rng.gen_range(0.0..2.0) * scale).collect();
        let a = group_advantages(&r, eps).unwrap();
        let mean = a.advantages.iter().sum::<f64>() / g as f64;
        worst_mean = worst_mean.max(mean.abs() / (ADV_MEAN_TOL_PER_G * g as f64));
        if a.variance.sqrt() >= 100.0 * eps.sqrt() {
            let std =
                (a.advantages.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / g as f64).sqrt();
            std_lo = std_lo.min(std);
            std_hi = std_hi.max(std);
            checked_std += 1;
        }
        let c = rng.gen_range(-10.0..10.0);
        let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
        let b = group_advantages(&shifted, eps).unwrap();
        for (x, y) in a.advantages.iter().zip(&b.advantages) {
            worst_shift = worst_shift.max((x - y).abs());
        }
    }
    // Rounding can land a hair above 1.
    let pass = worst_mean <= 1.0
        && std_lo >= ADV_STD_RANGE.0
        && std_hi <= ADV_STD_RANGE.1 + 1e-12
        && worst_shift <= ADV_SHIFT_TOL;
    outcome(
        pass,
        format!(
            "mean/bound {worst_mean:.3}, std in [{std_lo:.6}, {std_hi:.12}] over {checked_std} groups, shift dev {worst_shift:.2e}"
        ),
    )
}

struct GradSetup {
    cfg: ModelConfig,
    tokenizer: Tokenizer,
    spec: TaskSpec,
}

fn grad_setup() -> GradSetup {
    let spec = TaskSpec {
        n_train: 4,
        n_val: 0,
        n_test: 0,
        seed: 11,
        ..TaskSpec::default()
    };
    let tokenizer = Tokenizer::new(&spec.labels);
    let cfg = tracerl::pipeline::model_config(&spec, &tokenizer, 0).unwrap();
    GradSetup {
        cfg,
        tokenizer,
        spec,
    }
}

/// A random point: fresh initialization plus a Gaussian perturbation so no
/// tensor sits at its special initial value.
fn random_point(cfg: &ModelConfig, seed: u64) -> PolicyParams {
    let mut c = cfg.clone();
    c.seed = seed;
    let mut p = PolicyParams::init(&c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for v in p.flat_mut() {
        *v += 0.05 * (rng.gen::<f64>() - 0.5);
    }
    p
}

fn check_coords(
    params: &PolicyParams,
    analytic: &[f64],
    rng: &mut ChaCha8Rng,
    f: impl Fn(&PolicyParams) -> f64,
) -> (f64, usize) {
    let cfg = params.config().clone();
    let mut x = params.flatten().to_vec();
    let mut worst: f64 = 0.0;
    let mut nonzero = 0;
    for _ in 0..FD_COORDS {
        let i = rng.gen_range(0..x.len());
        let numeric = central_difference(&mut x, i, FD_STEP, |v| {
            f(&PolicyParams::unflatten(&cfg, v.to_vec()).unwrap())
        });
        nonzero += (analytic[i] != 0.0) as usize;
        worst = worst.max(relative_error(analytic[i], numeric, FD_REL_FLOOR));
    }
    (worst, nonzero)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let s = grad_setup();
    let data = generate_dataset(&s.spec).unwrap();
    let batch = sft_examples(&data.train[..2], &s.tokenizer);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut report = Vec::new();
    let mut worst_all: f64 = 0.0;
    for point in 0..FD_POINTS as u64 {
        let params = random_point(&s.cfg, 100 + point);
        let (_, grad) = sft_loss_and_grad(&batch, &params).unwrap();
        let (w_sft, nz_sft) = check_coords(&params, &grad, &mut rng, |p| {
            sft_loss_and_grad(&batch, p).unwrap().0
        });

        // SSPO: samples from a nearby old policy, reference elsewhere.
        let old = random_point(&s.cfg, 200 + point);
        let reference = PolicySnapshot::capture(&random_point(&s.cfg, 300 + point));
        let ex = &data.train[2 + point as usize % 2];
        let query = query_tokens(&s.tokenizer);
        let group = sampled_group(&old, &s.tokenizer, ex, 3, 12, 7 + point);
        let adv = group_advantages(&[0.3, 1.4, 0.9], 1e-8).unwrap();
        let tcfg = TrainConfig::default();
        let obj = |p: &PolicyParams| {
            sspo_objective_and_grad(&ex.signal, &query, &group, &adv, p, &reference, &tcfg).unwrap()
        };
        let analytic = obj(&params).grad;
        let (w_rl, nz_rl) = check_coords(&params, &analytic, &mut rng, |p| obj(p).objective);
        worst_all = worst_all.max(w_sft).max(w_rl);
        report.push(format!(
            "point {point}: sft {w_sft:.1e} ({nz_sft} nonzero), sspo {w_rl:.1e} ({nz_rl} nonzero)"
        ));
    }
    let elapsed = start.elapsed();
    outcome(
        worst_all < FD_REL_TOL && elapsed < FD_BUDGET,
        format!("{}; {:.1}s", report.join("; "), elapsed.as_secs_f64()),
    )
}

fn sampled_group(
    params: &PolicyParams,
    tokenizer: &Tokenizer,
    ex: &tracerl::synth::SynthRecord,
    g: usize,
    max_new: usize,
    seed: u64,
) -> Vec<GroupSample> {
    let z = encode_signal(&ex.signal, params).unwrap();
    let input = assemble_input(
        &project(&z, params).unwrap(),
        &query_tokens(tokenizer),
        params,
    )
    .unwrap();
    sample_group(
        &input,
        g,
        Decoding::Temperature(1.0),
        max_new,
        tokenizer.eos(),
        params,
        seed,
    )
    .unwrap()
    .into_iter()
    .map(|r| GroupSample {
        tokens: r.tokens,
        old_logprobs: r.logprobs,
    })
    .collect()
}

fn on_policy_identity() -> Outcome {
    let s = grad_setup();
    let data = generate_dataset(&s.spec).unwrap();
    let query = query_tokens(&s.tokenizer);
    let tcfg = TrainConfig {
        kl_beta: 0.0,
        ..TrainConfig::default()
    };
    let mut worst: f64 = 0.0;
    for point in 0..3u64 {
        let params = random_point(&s.cfg, 400 + point);
        let ex = &data.train[point as usize];
        let group = sampled_group(&params, &s.tokenizer, ex, 4, 20, point);
        let adv = group_advantages(&[1.2, 0.2, 2.0, 0.9], 1e-8).unwrap();
        let reference = PolicySnapshot::capture(&random_point(&s.cfg, 500 + point));
        let out =
            sspo_objective_and_grad(&ex.signal, &query, &group, &adv, &params, &reference, &tcfg)
                .unwrap();
        let g = group.len() as f64;
        let mut reinforce = vec![0.0; params.len()];
        for (smp, a) in group.iter().zip(&adv.advantages) {
            let w = vec![a / g; smp.tokens.len()];
            logprob_grad(&ex.signal, &query, &smp.tokens, &w, &params, &mut reinforce).unwrap();
        }
        for (x, y) in out.grad.iter().zip(&reinforce) {
            worst = worst.max((x - y).abs());
        }
    }
    outcome(
        worst < ON_POLICY_TOL,
        format!("max coordinate deviation {worst:.2e}"),
    )
}

fn kl_non_negativity() -> Outcome {
    let tokenizer = Tokenizer::new(&VOCAB.iter().collect());
    let cfg = small_config(tokenizer.len());
    let query = tokenizer.encode("Analyze the ECG.");
    let tcfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut min_term, mut negatives, mut terms) = (f64::INFINITY, 0usize, 0usize);
    let mut identity_nonzero = 0usize;
    for pair in 0..KL_PAIRS as u64 {
        let theta = random_point(&cfg, 1000 + pair);
        let mut ref_params = theta.clone();
        let spread = 10f64.powf(rng.gen_range(-4.0..0.0));
        for v in ref_params.flat_mut() {
            *v += spread * (rng.gen::<f64>() - 0.5);
        }
        let reference = PolicySnapshot::capture(&ref_params);
        let signal = smooth_signal(16, 2, pair as f64);
        let z = encode_signal(&signal, &theta).unwrap();
        let input = assemble_input(&project(&z, &theta).unwrap(), &query, &theta).unwrap();
        let group: Vec<GroupSample> = sample_group(
            &input,
            2,
            Decoding::Temperature(1.0),
            8,
            tokenizer.eos(),
            &theta,
            pair,
        )
        .unwrap()
        .into_iter()
        .map(|r| GroupSample {
            tokens: r.tokens,
            old_logprobs: r.logprobs,
        })
        .collect();
        let adv = group_advantages(&[0.0, 1.0], 1e-8).unwrap();
        let out = sspo_objective_and_grad(&signal, &query, &group, &adv, &theta, &reference, &tcfg)
            .unwrap();
        for s in &out.samples {
            for &t in &s.kl_tokens {
                terms += 1;
                min_term = min_term.min(t);
                negatives += (t < 0.0) as usize;
            }
        }
        let same = PolicySnapshot::capture(&theta);
        let out =
            sspo_objective_and_grad(&signal, &query, &group, &adv, &theta, &same, &tcfg).unwrap();
        identity_nonzero += out
            .samples
            .iter()
            .flat_map(|s| &s.kl_tokens)
            .filter(|&&t| t != 0.0)
            .count();
    }
    outcome(
        negatives == 0 && identity_nonzero == 0,
        format!("{terms} terms, min {min_term:.3e}, {negatives} negative; {identity_nonzero} non-zero at identity"),
    )
}

fn read_report(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn end_to_end_training() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let sft_dir = format!("{d}/sft");
    let rl_dir = format!("{d}/sspo");
    cli_ok(&["gen-data", "--seed", "0", "--out-dir", d]);
    cli_ok(&[
        "sft",
        "--seed",
        "0",
        "--data-dir",
        d,
        "--out-dir",
        &sft_dir,
        "--sft-lr",
        E2E_SFT_LR,
    ]);
    let sft_ckpt = format!("{sft_dir}/sft.ckpt");
    cli_ok(&[
        "eval",
        "--data-dir",
        d,
        "--out-dir",
        &sft_dir,
        "--checkpoint",
        &sft_ckpt,
        "--split",
        "val",
    ]);
    cli_ok(&[
        "eval",
        "--data-dir",
        d,
        "--out-dir",
        &sft_dir,
        "--checkpoint",
        &sft_ckpt,
        "--split",
        "test",
    ]);
    cli_ok(&[
        "sspo",
        "--seed",
        "0",
        "--data-dir",
        d,
        "--out-dir",
        &rl_dir,
        "--sft-checkpoint",
        &sft_ckpt,
        "--rl-lr",
        E2E_RL_LR,
        "--rl-epochs",
        E2E_RL_EPOCHS,
    ]);
    let rl_ckpt = format!("{rl_dir}/sspo.ckpt");
    cli_ok(&[
        "eval",
        "--data-dir",
        d,
        "--out-dir",
        &rl_dir,
        "--checkpoint",
        &rl_ckpt,
        "--split",
        "test",
    ]);
    let val = read_report(&Path::new(&sft_dir).join("eval_val.json"));
    let sft_test = read_report(&Path::new(&sft_dir).join("eval_test.json"));
    let rl_test = read_report(&Path::new(&rl_dir).join("eval_test.json"));
    let f = |v: &Value, k: &str| v[k].as_f64().unwrap();
    let structure = f(&val, "mean_structure");
    let sample_f1 = val["metrics"]["sample_f1"].as_f64().unwrap();
    let (dice0, dice1) = (
        f(&sft_test, "mean_diagnosis"),
        f(&rl_test, "mean_diagnosis"),
    );
    let ssv = f(&rl_test, "ssv");
    let elapsed = start.elapsed();
    let pass = structure >= SFT_MIN_STRUCTURE
        && sample_f1 >= SFT_MIN_SAMPLE_F1
        && dice1 - dice0 >= SSPO_MIN_DICE_GAIN
        && ssv >= SSPO_MIN_SSV
        && elapsed < E2E_BUDGET;
    outcome(
        pass,
        format!(
            "SFT val structure {structure:.4}, sample-F1 {sample_f1:.4}; test Dice {dice0:.4} -> {dice1:.4} (gain {:.4}), SSPO SSV {ssv:.2}; {:.0}s",
            dice1 - dice0,
            elapsed.as_secs_f64()
        ),
    )
}

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn cleaning_pipeline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let input = fixture("raw_records.jsonl");
    let raw_lines: Vec<Value> = fs::read_to_string(&input)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // Census straight from the fixture: an impression that is present and not
    // a placeholder.
    let census = raw_lines
        .iter()
        .filter(|r| {
            match r["source_sections"]
                .get("impression")
                .and_then(Value::as_str)
            {
                Some(s) => !["", "none", "n/a", "-"].contains(&s.trim().to_lowercase().as_str()),
                None => false,
            }
        })
        .count();
    let first = format!("{d}/once");
    let (code, _, err) = cli(&[
        "clean",
        "--input",
        input.to_str().unwrap(),
        "--out-dir",
        &first,
    ]);
    assert_eq!(code, 0, "{err}");
    let produced = fs::read(format!("{first}/clean.jsonl")).unwrap();
    let golden = fs::read(fixture("clean_golden.jsonl")).unwrap();
    let report = read_report(&Path::new(&first).join("clean_report.json"));
    let kept = report["kept"].as_u64().unwrap() as usize;

    let none_id = raw_lines
        .iter()
        .find(|r| {
            r["source_sections"]["conduction"].as_str() == Some("None")
                && r["source_sections"].get("impression").is_some()
        })
        .and_then(|r| r["id"].as_str())
        .unwrap()
        .to_string();
    let cleaned: Vec<Value> = String::from_utf8(produced.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let mapped = cleaned
        .iter()
        .find(|r| r["id"] == none_id.as_str())
        .map(|r| {
            r["source_sections"]["conduction"].as_str()
                == Some("No conduction abnormalities identified.")
        })
        .unwrap_or(false);

    let second = format!("{d}/twice");
    cli_ok(&[
        "clean",
        "--input",
        &format!("{first}/clean.jsonl"),
        "--out-dir",
        &second,
    ]);
    let again = fs::read(format!("{second}/clean.jsonl")).unwrap();
    let pass = produced == golden && kept == census && mapped && again == produced;
    outcome(
        pass,
        format!(
            "golden match {}, kept {kept} vs census {census}, None mapping {mapped}, idempotent {}",
            produced == golden,
            again == produced
        ),
    )
}

fn metrics_fixtures() -> Outcome {
    let s = |xs: &[&str]| -> LabelSet { xs.iter().collect() };
    let m = set_metrics(&[(s(&["A"]), s(&["A"])), (s(&["A", "B"]), s(&["B", "C"]))]).unwrap();
    let hand =
        m.micro_precision == 2.0 / 3.0 && m.micro_recall == 2.0 / 3.0 && m.micro_f1 == 2.0 / 3.0;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut identity = true;
    for _ in 0..50 {
        let n = rng.gen_range(5..40);
        let raters = rng.gen_range(2..6);
        let k = rng.gen_range(2..5);
        let ratings: Vec<Vec<usize>> = (0..n)
            .map(|_| (0..raters).map(|_| rng.gen_range(0..k)).collect())
            .collect();
        let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64).collect();
        if let (Ok(got), Some(want)) = (fleiss_kappa(&ratings), oracle_fleiss(&ratings)) {
            worst = worst.max((got - want).abs());
        }
        if let (Ok(got), Some(want)) = (quadratic_weighted_kappa(&a, &b), oracle_qwk(&a, &b, k)) {
            worst = worst.max((got - want).abs());
        }
        if let (Ok(got), Some(want)) = (spearman_rho(&x, &y), oracle_spearman(&x, &y)) {
            worst = worst.max((got - want).abs());
        }
        let same: Vec<Vec<usize>> = a.iter().map(|&c| vec![c; raters]).collect();
        identity &= matches!(fleiss_kappa(&same), Ok(v) if (v - 1.0).abs() < AGREEMENT_TOL)
            || a.iter().all(|&c| c == a[0]);
        identity &= matches!(quadratic_weighted_kappa(&a, &a), Ok(v) if v == 1.0)
            || a.iter().all(|&c| c == a[0]);
        identity &= matches!(spearman_rho(&x, &x), Ok(v) if (v - 1.0).abs() < AGREEMENT_TOL)
            || x.iter().all(|&c| c == x[0]);
    }
    outcome(
        hand && identity && worst < AGREEMENT_TOL,
        format!(
            "hand fixture micro-F1 {:.17}, identity {identity}, oracle max deviation {worst:.2e}",
            m.micro_f1
        ),
    )
}

/// Fleiss' kappa from the subject-by-category count table.
fn oracle_fleiss(ratings: &[Vec<usize>]) -> Option<f64> {
    let n = ratings[0].len() as f64;
    let cats: Vec<usize> = {
        let mut c: Vec<usize> = ratings.iter().flatten().copied().collect();
        c.sort();
        c.dedup();
        c
    };
    let table: Vec<Vec<f64>> = ratings
        .iter()
        .map(|r| {
            cats.iter()
                .map(|&c| r.iter().filter(|&&x| x == c).count() as f64)
                .collect()
        })
        .collect();
    let subjects = table.len() as f64;
    let p_i: Vec<f64> = table
        .iter()
        .map(|row| (row.iter().map(|x| x * x).sum::<f64>() - n) / (n * (n - 1.0)))
        .collect();
    let p_bar = p_i.iter().sum::<f64>() / subjects;
    let p_j: Vec<f64> = (0..cats.len())
        .map(|j| table.iter().map(|row| row[j]).sum::<f64>() / (subjects * n))
        .collect();
    let p_e: f64 = p_j.iter().map(|p| p * p).sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return None;
    }
    Some((p_bar - p_e) / (1.0 - p_e))
}

/// Quadratic weighted kappa from the confusion matrix and the outer product
/// of the marginals.
fn oracle_qwk(a: &[usize], b: &[usize], k: usize) -> Option<f64> {
    let n = a.len() as f64;
    let mut obs = vec![vec![0.0; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        obs[x][y] += 1.0;
    }
    let ra: Vec<f64> = (0..k).map(|i| obs[i].iter().sum()).collect();
    let cb: Vec<f64> = (0..k).map(|j| (0..k).map(|i| obs[i][j]).sum()).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64) / (k as f64 - 1.0)).powi(2);
            num += w * obs[i][j];
            den += w * ra[i] * cb[j] / n;
        }
    }
    if den == 0.0 {
        return None;
    }
    Some(1.0 - num / den)
}

/// Spearman from average ranks counted directly.
fn oracle_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

fn hash_files(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if !path.is_file() {
            continue;
        }
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let bytes = fs::read(&path).unwrap();
        let digest = if name.ends_with(".manifest.json") {
            let mut v: Value = serde_json::from_slice(&bytes).unwrap();
            let obj = v.as_object_mut().unwrap();
            obj.remove("started_unix_ms");
            obj.remove("finished_unix_ms");
            Sha256::digest(v.to_string().as_bytes())
        } else {
            Sha256::digest(&bytes)
        };
        out.insert(name, hex::encode(digest));
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("run");
    let w = work.to_str().unwrap().to_string();
    let raw = fixture("raw_records.jsonl");
    let trace_file = dir.path().join("trace.txt");
    fs::write(
        &trace_file,
        "<think><rhythm>a</rhythm><conduction>b</conduction><morphology>c</morphology><impression>d</impression></think><answer>MI</answer>",
    )
    .unwrap();
    let steps: Vec<Vec<String>> = vec![
        vec![
            "gen-data",
            "--seed",
            "5",
            "--n-train",
            "24",
            "--n-val",
            "6",
            "--n-test",
            "6",
        ],
        vec!["clean", "--input", raw.to_str().unwrap()],
        vec![
            "sft",
            "--seed",
            "5",
            "--sft-epochs",
            "2",
            "--sft-batch",
            "8",
            "--sft-lr",
            "1e-3",
        ],
        vec![
            "sspo",
            "--seed",
            "5",
            "--sft-checkpoint",
            "SFT",
            "--rl-epochs",
            "1",
            "--rl-queries-per-epoch",
            "8",
            "--max-new-tokens",
            "40",
        ],
        vec![
            "eval",
            "--checkpoint",
            "RL",
            "--split",
            "val",
            "--judge",
            "stub",
            "--max-new-tokens",
            "40",
        ],
        vec![
            "score-trace",
            "--trace-file",
            trace_file.to_str().unwrap(),
            "--truth",
            "MI,CD",
        ],
        vec!["inspect", "RL"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    let sft = format!("{w}/sft.ckpt");
    let rl = format!("{w}/sspo.ckpt");
    let mut runs: Vec<(BTreeMap<String, String>, Vec<String>)> = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(&work);
        let mut stdouts = Vec::new();
        for step in &steps {
            let mut args: Vec<&str> = step
                .iter()
                .map(|a| match a.as_str() {
                    "SFT" => sft.as_str(),
                    "RL" => rl.as_str(),
                    other => other,
                })
                .collect();
            args.extend(["--out-dir", &w]);
            let out = cli_ok(&args);
            stdouts.push(out);
        }
        runs.push((hash_files(&work), stdouts));
    }
    let (a, b) = (&runs[0], &runs[1]);
    let differing: Vec<&String> = a.0.keys().filter(|k| a.0.get(*k) != b.0.get(*k)).collect();
    let pass = differing.is_empty() && a.0.len() == b.0.len() && a.1 == b.1 && a.0.len() >= 15;
    outcome(
        pass,
        format!(
            "{} files hashed across 7 subcommands, differing: {differing:?}, stdout equal {}",
            a.0.len(),
            a.1 == b.1
        ),
    )
}
