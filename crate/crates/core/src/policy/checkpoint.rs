//! Checkpoint layout: a magic line, one JSON header line carrying the model
//! config and vocabulary, then the flat parameter vector as little-endian
//! `f64`. Reload is bit-exact.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, PolicyParams, Tokenizer};
use crate::error::{Error, Result};

const MAGIC: &str = "tracerl-checkpoint v1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
    params: usize,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    params: &PolicyParams,
    tokenizer: &Tokenizer,
) -> Result<()> {
    let header = Header {
        config: params.config().clone(),
        vocab: tokenizer.tokens().to_vec(),
        params: params.len(),
    };
    let io = |e| Error::io("checkpoint", e);
    writeln!(w, "{MAGIC}").map_err(io)?;
    let json = serde_json::to_string(&header).map_err(|e| Error::json("checkpoint header", e))?;
    writeln!(w, "{json}").map_err(io)?;
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for v in params.flatten() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes).map_err(io)
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<(PolicyParams, Tokenizer)> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let io = |e| Error::io("checkpoint", e);
    r.read_line(&mut line).map_err(io)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Checkpoint("missing magic line".into()));
    }
    line.clear();
    r.read_line(&mut line).map_err(io)?;
    let header: Header =
        serde_json::from_str(&line).map_err(|e| Error::json("checkpoint header", e))?;
    if header.vocab.len() != header.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary of {} tokens but config says {}",
            header.vocab.len(),
            header.config.vocab_size
        )));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() != header.params * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            header.params * 8,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = PolicyParams::unflatten(&header.config, data)?;
    let tokenizer = Tokenizer::from_tokens(header.vocab)?;
    if tokenizer.len() != header.config.vocab_size {
        return Err(Error::Checkpoint("vocabulary contains duplicates".into()));
    }
    Ok((params, tokenizer))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &PolicyParams,
    tokenizer: &Tokenizer,
) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, tokenizer)?;
    fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(PolicyParams, Tokenizer)> {
    let f = fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    read_checkpoint(f)
}
