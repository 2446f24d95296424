//! Client for externally judged reasoning-quality scores.
//!
//! Wire protocol: the client opens a byte stream to the configured address,
//! writes one JSON object on one line
//! `{"trace": ..., "truth": [...], "rubric_version": ...}` and reads one JSON
//! line back with the five numeric fields `ssv, gtfa, sd, dlc, es`, each in
//! `[0, 100]`. No retries.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::structure_reward;
use crate::trace::{canonical_serialize, LabelSet, StructuredTrace};

pub const RUBRIC_VERSION: &str = "ssv-gtfa-sd-dlc-es/v1";
pub const STUB_SCORE: f64 = 50.0;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge transport: {0}")]
    Transport(#[from] io::Error),
    #[error("malformed judge response: {0}")]
    Malformed(String),
    #[error("judge score {field} = {value} outside [0, 100]")]
    OutOfRange { field: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    LocalRule,
    RemoteJudge,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub ssv: f64,
    pub gtfa: f64,
    pub sd: f64,
    pub dlc: f64,
    pub es: f64,
    pub source: ScoreSource,
}

/// Where judge requests go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JudgeEndpoint {
    /// Offline stand-in: SSV from the local rule, everything else 50.
    Stub,
    /// `host:port` of a line-oriented TCP judge.
    Tcp(String),
}

impl JudgeEndpoint {
    /// `"stub"` selects the stub; anything else is a TCP address, with an
    /// optional `tcp://` prefix.
    pub fn parse(address: &str) -> Self {
        match address.trim() {
            "stub" => JudgeEndpoint::Stub,
            other => JudgeEndpoint::Tcp(other.trim_start_matches("tcp://").to_string()),
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    trace: String,
    truth: &'a LabelSet,
    rubric_version: &'static str,
}

#[derive(Deserialize)]
struct Response {
    ssv: f64,
    gtfa: f64,
    sd: f64,
    dlc: f64,
    es: f64,
}

/// Local structural validity for one trace: 100 or 0.
pub fn local_ssv(trace: &StructuredTrace) -> f64 {
    if structure_reward(trace) == 1.0 {
        100.0
    } else {
        0.0
    }
}

/// Serializes one request line for `trace` and `truth`.
pub fn encode_request(trace: &StructuredTrace, truth: &LabelSet) -> String {
    let req = Request {
        trace: canonical_serialize(trace),
        truth,
        rubric_version: RUBRIC_VERSION,
    };
    serde_json::to_string(&req).expect("request is plain data")
}

/// Parses and range-checks one response line.
pub fn decode_response(line: &str) -> Result<JudgeScores, JudgeError> {
    let r: Response =
        serde_json::from_str(line.trim()).map_err(|e| JudgeError::Malformed(e.to_string()))?;
    for (field, value) in [
        ("ssv", r.ssv),
        ("gtfa", r.gtfa),
        ("sd", r.sd),
        ("dlc", r.dlc),
        ("es", r.es),
    ] {
        if !(0.0..=100.0).contains(&value) {
            return Err(JudgeError::OutOfRange { field, value });
        }
    }
    Ok(JudgeScores {
        ssv: r.ssv,
        gtfa: r.gtfa,
        sd: r.sd,
        dlc: r.dlc,
        es: r.es,
        source: ScoreSource::RemoteJudge,
    })
}

pub fn judge_request(
    trace: &StructuredTrace,
    truth: &LabelSet,
    endpoint: &JudgeEndpoint,
) -> Result<JudgeScores, JudgeError> {
    match endpoint {
        JudgeEndpoint::Stub => Ok(JudgeScores {
            ssv: local_ssv(trace),
            gtfa: STUB_SCORE,
            sd: STUB_SCORE,
            dlc: STUB_SCORE,
            es: STUB_SCORE,
            source: ScoreSource::Stub,
        }),
        JudgeEndpoint::Tcp(addr) => {
            let mut stream = TcpStream::connect(addr)?;
            stream.set_read_timeout(Some(Duration::from_secs(120)))?;
            let mut line = encode_request(trace, truth);
            line.push('\n');
            stream.write_all(line.as_bytes())?;
            stream.flush()?;
            let mut reply = String::new();
            BufReader::new(stream).read_line(&mut reply)?;
            if reply.is_empty() {
                return Err(JudgeError::Malformed("empty response".into()));
            }
            decode_response(&reply)
        }
    }
}
