//! Line-based text formats.
//!
//! Model files (`.bmtx`):
//!
//! ```text
//! # comment
//! bm 3
//! b 0 0.5
//! w 0 2 -1.25
//! c 0.0
//! ```
//!
//! Unlisted parameters are zero. Each unordered pair may appear at most once
//! and `c` at most once. Floats are written with 17 significant digits, so a
//! write/read cycle is bit-exact. Structure files use the same syntax; only
//! the `w` lines matter and their values are placeholders.
//!
//! Pattern files (`.pat`) start with `pat <N_V>` followed by one pattern per
//! line as `N_V` whitespace-separated `0`/`1` tokens.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::decimation::Structure;
use crate::error::{Error, Result};
use crate::model::{BoltzmannModel, PatternSet};

/// A parsed model file. `declared_edges` keeps every `w` line, including
/// zero-valued ones.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub model: BoltzmannModel,
    pub declared_edges: Vec<(usize, usize)>,
}

impl ModelFile {
    pub fn structure(&self) -> Structure {
        Structure::new(self.model.n(), self.declared_edges.iter().copied())
            .expect("edges were validated while parsing")
    }
}

fn float_repr(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_model(model: &BoltzmannModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "bm {}", model.n());
    for i in 0..model.n() {
        let _ = writeln!(out, "b {i} {}", float_repr(model.bias(i)));
    }
    for (i, j, w) in model.edges() {
        let _ = writeln!(out, "w {i} {j} {}", float_repr(w));
    }
    if model.constant() != 0.0 {
        let _ = writeln!(out, "c {}", float_repr(model.constant()));
    }
    out
}

/// Writes a structure as a model file with zero-valued placeholders.
pub fn write_structure(structure: &Structure) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "bm {}", structure.n());
    for &(i, j) in structure.edges() {
        let _ = writeln!(out, "w {i} {j} 0");
    }
    out
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(k, raw)| {
        let line = raw.trim();
        (!line.is_empty() && !line.starts_with('#')).then_some((k + 1, line))
    })
}

fn parse_index(tok: Option<&str>, n: usize, line: usize) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::parse(line, "missing node index"))?;
    let i: usize = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid node index `{tok}`")))?;
    if i >= n {
        return Err(Error::parse(line, format!("node index {i} out of range for {n} nodes")));
    }
    Ok(i)
}

fn parse_float(tok: Option<&str>, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::parse(line, "missing value"))?;
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid number `{tok}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value `{tok}`")));
    }
    Ok(v)
}

fn expect_end<'a>(mut toks: impl Iterator<Item = &'a str>, line: usize) -> Result<()> {
    match toks.next() {
        None => Ok(()),
        Some(extra) => Err(Error::parse(line, format!("unexpected token `{extra}`"))),
    }
}

pub fn parse_model(text: &str) -> Result<ModelFile> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(0, "empty file: expected `bm <N>` header"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("bm") {
        return Err(Error::parse(hline, "expected `bm <N>` header"));
    }
    let n: usize = toks
        .next()
        .and_then(|t| t.parse().ok())
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::parse(hline, "header needs a node count >= 1"))?;
    expect_end(toks, hline)?;

    let mut model = BoltzmannModel::zeros(n);
    let mut seen_bias = vec![false; n];
    let mut seen_pairs = BTreeSet::new();
    let mut declared = Vec::new();
    let mut seen_constant = false;

    for (line, content) in lines {
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("b") => {
                let i = parse_index(toks.next(), n, line)?;
                let v = parse_float(toks.next(), line)?;
                expect_end(toks, line)?;
                if std::mem::replace(&mut seen_bias[i], true) {
                    return Err(Error::parse(line, format!("bias {i} given twice")));
                }
                model.set_bias(i, v)?;
            }
            Some("w") => {
                let i = parse_index(toks.next(), n, line)?;
                let j = parse_index(toks.next(), n, line)?;
                let v = parse_float(toks.next(), line)?;
                expect_end(toks, line)?;
                if i == j {
                    return Err(Error::parse(line, format!("self-coupling w {i} {i} is not allowed")));
                }
                let key = (i.min(j), i.max(j));
                if !seen_pairs.insert(key) {
                    return Err(Error::parse(line, format!("pair ({}, {}) given twice", key.0, key.1)));
                }
                declared.push(key);
                model.set_coupling(i, j, v)?;
            }
            Some("c") => {
                let v = parse_float(toks.next(), line)?;
                expect_end(toks, line)?;
                if std::mem::replace(&mut seen_constant, true) {
                    return Err(Error::parse(line, "constant given twice"));
                }
                model.set_constant(v);
            }
            Some("bm") => return Err(Error::parse(line, "duplicate `bm` header")),
            Some(other) => return Err(Error::parse(line, format!("unknown record `{other}`"))),
            None => unreachable!("blank lines are filtered"),
        }
    }
    Ok(ModelFile {
        model,
        declared_edges: declared,
    })
}

pub fn parse_structure(text: &str) -> Result<Structure> {
    Ok(parse_model(text)?.structure())
}

pub fn write_patterns(patterns: &PatternSet) -> String {
    let mut out = format!("pat {}\n", patterns.visible_count());
    for p in patterns.patterns() {
        let row: Vec<&str> = p.iter().map(|&b| if b == 1 { "1" } else { "0" }).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_patterns(text: &str) -> Result<PatternSet> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(0, "empty file: expected `pat <N_V>` header"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("pat") {
        return Err(Error::parse(hline, "expected `pat <N_V>` header"));
    }
    let nv: usize = toks
        .next()
        .and_then(|t| t.parse().ok())
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::parse(hline, "header needs a visible count >= 1"))?;
    expect_end(toks, hline)?;

    let mut patterns = Vec::new();
    for (line, content) in lines {
        let row = content
            .split_whitespace()
            .map(|t| match t {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                _ => Err(Error::parse(line, format!("pattern entries must be 0 or 1, found `{t}`"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        if row.len() != nv {
            return Err(Error::parse(line, format!("expected {nv} entries, found {}", row.len())));
        }
        patterns.push(row);
    }
    PatternSet::new(nv, patterns)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    parse_model(&std::fs::read_to_string(path)?)
}

pub fn read_patterns(path: impl AsRef<Path>) -> Result<PatternSet> {
    parse_patterns(&std::fs::read_to_string(path)?)
}

pub fn read_structure(path: impl AsRef<Path>) -> Result<Structure> {
    parse_structure(&std::fs::read_to_string(path)?)
}
