//! Line-oriented text format:
//!
//! ```text
//! # num_intents=<n> input_dim=<d>
//! <speaker>\t<label>\t<T>\t<v_1> <v_2> ... <v_{T·d}>
//! ```
//!
//! Values are printed with 17 significant digits, which round-trips `f64` exactly.

use std::io::{BufRead, Write};

use super::Dataset;
use crate::error::{Error, Result};
use crate::model::{SpeakerId, Utterance};
use crate::tensor::Tensor;

pub fn write_dataset<W: Write>(mut out: W, ds: &Dataset) -> Result<()> {
    writeln!(
        out,
        "# num_intents={} input_dim={}",
        ds.num_intents(),
        ds.input_dim()
    )?;
    for u in ds.utterances() {
        write!(out, "{}\t{}\t{}\t", u.speaker(), u.label(), u.len())?;
        for (i, v) in u.features().data().iter().enumerate() {
            if i > 0 {
                out.write_all(b" ")?;
            }
            write!(out, "{v:.16e}")?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, what: &str, line: usize) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad {what} `{field}`")))
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("missing header line".into()))??;
    let mut num_intents = None;
    let mut input_dim = None;
    for field in header.trim_start_matches('#').split_whitespace() {
        match field.split_once('=') {
            Some(("num_intents", v)) => num_intents = Some(parse(v, "num_intents", 1)?),
            Some(("input_dim", v)) => input_dim = Some(parse(v, "input_dim", 1)?),
            _ => {
                return Err(Error::Parse(format!(
                    "line 1: unknown header field `{field}`"
                )))
            }
        }
    }
    let (num_intents, input_dim): (usize, usize) = match (num_intents, input_dim) {
        (Some(n), Some(d)) => (n, d),
        _ => {
            return Err(Error::Parse(
                "header needs num_intents and input_dim".into(),
            ))
        }
    };

    let mut utterances = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Parse(format!(
                "line {lineno}: expected 4 tab-separated columns, got {}",
                cols.len()
            )));
        }
        let speaker: u32 = parse(cols[0], "speaker id", lineno)?;
        let label: usize = parse(cols[1], "label", lineno)?;
        let t: usize = parse(cols[2], "length", lineno)?;
        let values = cols[3]
            .split_whitespace()
            .map(|v| parse::<f64>(v, "value", lineno))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != t * input_dim {
            return Err(Error::Parse(format!(
                "line {lineno}: expected {} values, got {}",
                t * input_dim,
                values.len()
            )));
        }
        let features = Tensor::new(vec![t, input_dim], values)?;
        utterances.push(Utterance::new(features, label, SpeakerId(speaker))?);
    }
    Dataset::new(utterances, num_intents, input_dim)
}
