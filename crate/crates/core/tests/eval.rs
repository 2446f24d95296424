use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use tracerl::eval::{
    fleiss_kappa, judge_request, quadratic_weighted_kappa, set_metrics, spearman_rho,
    JudgeEndpoint, JudgeError, ScoreSource, RUBRIC_VERSION,
};
use tracerl::trace::{parse_trace, LabelSet};

fn labels(xs: &[&str]) -> LabelSet {
    xs.iter().collect()
}

#[test]
fn independent_raters_have_kappa_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ratings: Vec<Vec<usize>> = (0..10_000)
        .map(|_| (0..4).map(|_| rng.gen_range(0..3)).collect())
        .collect();
    let k = fleiss_kappa(&ratings).unwrap();
    assert!(k.abs() < 0.02, "{k}");
}

#[test]
fn perfect_agreement_statistics_are_one() {
    let a = vec![0, 1, 2, 2, 1, 0, 3];
    assert_eq!(quadratic_weighted_kappa(&a, &a).unwrap(), 1.0);
    let x = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0];
    assert!((spearman_rho(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    let rev: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((spearman_rho(&x, &rev).unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn degenerate_agreement_inputs_are_errors() {
    assert!(fleiss_kappa(&[]).is_err());
    assert!(quadratic_weighted_kappa(&[1, 2], &[1]).is_err());
    assert!(spearman_rho(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn exact_prediction_scores_one() {
    let pairs = vec![
        (labels(&["MI"]), labels(&["MI"])),
        (labels(&["CD", "HYP"]), labels(&["CD", "HYP"])),
    ];
    let m = set_metrics(&pairs).unwrap();
    assert_eq!((m.micro_f1, m.macro_f1, m.sample_f1), (1.0, 1.0, 1.0));
}

fn trace() -> tracerl::trace::StructuredTrace {
    parse_trace(
        "<think><rhythm>a</rhythm><conduction>b</conduction><morphology>c</morphology><impression>d</impression></think><answer>MI</answer>",
        &labels(&["MI", "NORM"]),
    )
}

/// Serves one connection: checks the request line, answers with `reply`.
fn one_shot_judge(reply: &'static str) -> (String, thread::JoinHandle<Value>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let mut stream = stream;
        stream.write_all(reply.as_bytes()).unwrap();
        serde_json::from_str(&line).unwrap()
    });
    (addr, handle)
}

#[test]
fn tcp_judge_round_trip() {
    let (addr, handle) =
        one_shot_judge("{\"ssv\":100,\"gtfa\":80,\"sd\":60.5,\"dlc\":40,\"es\":90}\n");
    let scores = judge_request(
        &trace(),
        &labels(&["MI"]),
        &JudgeEndpoint::parse(&format!("tcp://{addr}")),
    )
    .unwrap();
    assert_eq!(scores.source, ScoreSource::RemoteJudge);
    assert_eq!(
        (scores.ssv, scores.gtfa, scores.sd, scores.dlc, scores.es),
        (100.0, 80.0, 60.5, 40.0, 90.0)
    );
    let request = handle.join().unwrap();
    assert_eq!(request["rubric_version"], RUBRIC_VERSION);
    assert_eq!(request["truth"], serde_json::json!(["MI"]));
    assert!(request["trace"].as_str().unwrap().starts_with("<think>"));
}

#[test]
fn tcp_judge_out_of_range_is_reported() {
    let (addr, handle) =
        one_shot_judge("{\"ssv\":100,\"gtfa\":80,\"sd\":-1,\"dlc\":40,\"es\":90}\n");
    let err = judge_request(&trace(), &labels(&["MI"]), &JudgeEndpoint::Tcp(addr)).unwrap_err();
    assert!(
        matches!(err, JudgeError::OutOfRange { field: "sd", .. }),
        "{err}"
    );
    handle.join().unwrap();
}

#[test]
fn unreachable_judge_is_a_transport_error() {
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let err = judge_request(&trace(), &labels(&["MI"]), &JudgeEndpoint::Tcp(addr)).unwrap_err();
    assert!(matches!(err, JudgeError::Transport(_)));
}

#[test]
fn stub_judge_uses_local_ssv() {
    let s = judge_request(&trace(), &labels(&["MI"]), &JudgeEndpoint::Stub).unwrap();
    assert_eq!(
        (s.ssv, s.gtfa, s.es, s.source),
        (100.0, 50.0, 50.0, ScoreSource::Stub)
    );
    let broken = parse_trace("<think>", &labels(&["MI"]));
    assert_eq!(
        judge_request(&broken, &labels(&["MI"]), &JudgeEndpoint::Stub)
            .unwrap()
            .ssv,
        0.0
    );
}
