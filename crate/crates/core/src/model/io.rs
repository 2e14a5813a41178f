//! Line-oriented model files.
//!
//! ```text
//! # optional comments
//! ising <node_count> <edge_count>
//! node <a> <h_a>          (one per node, in order)
//! edge <a> <b> <J_ab>     (one per edge)
//! ```
//!
//! Reals are written with Rust's shortest round-trip formatting, so a write
//! followed by a read reproduces every value bit for bit.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::{Graph, IsingModel};

pub fn write_model<W: Write>(model: &IsingModel, mut out: W) -> Result<()> {
    let g = model.graph();
    writeln!(out, "ising {} {}", g.node_count(), g.edge_count())?;
    for (a, h) in model.fields().iter().enumerate() {
        writeln!(out, "node {a} {h:?}")?;
    }
    for (&(a, b), j) in g.edges().iter().zip(model.couplings()) {
        writeln!(out, "edge {a} {b} {j:?}")?;
    }
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| parse_err(line, format!("cannot parse {what} from {tok:?}")))
}

pub fn read_model<R: BufRead>(input: R) -> Result<IsingModel> {
    let mut header: Option<(usize, usize)> = None;
    let mut fields: Vec<Option<f64>> = Vec::new();
    let mut edges = Vec::new();
    let mut couplings = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let kind = toks.next().unwrap_or_default();
        match (kind, header) {
            ("ising", None) => {
                let n: usize = parse_field(toks.next(), lineno, "node count")?;
                let m: usize = parse_field(toks.next(), lineno, "edge count")?;
                fields = vec![None; n];
                header = Some((n, m));
            }
            ("ising", Some(_)) => return Err(parse_err(lineno, "duplicate header")),
            (_, None) => return Err(parse_err(lineno, "expected 'ising' header first")),
            ("node", Some((n, _))) => {
                let a: usize = parse_field(toks.next(), lineno, "node index")?;
                let h: f64 = parse_field(toks.next(), lineno, "field")?;
                if a >= n {
                    return Err(parse_err(lineno, format!("node {a} out of range")));
                }
                if fields[a].replace(h).is_some() {
                    return Err(parse_err(lineno, format!("node {a} listed twice")));
                }
            }
            ("edge", Some(_)) => {
                let a: usize = parse_field(toks.next(), lineno, "endpoint")?;
                let b: usize = parse_field(toks.next(), lineno, "endpoint")?;
                let j: f64 = parse_field(toks.next(), lineno, "coupling")?;
                edges.push((a, b));
                couplings.push(j);
            }
            (other, _) => return Err(parse_err(lineno, format!("unknown record {other:?}"))),
        }
        if toks.next().is_some() {
            return Err(parse_err(lineno, "trailing tokens"));
        }
    }
    let (n, m) = header.ok_or_else(|| parse_err(0, "empty model file"))?;
    if edges.len() != m {
        return Err(parse_err(0, format!("header declares {m} edges, found {}", edges.len())));
    }
    let fields = fields
        .into_iter()
        .enumerate()
        .map(|(a, h)| h.ok_or_else(|| parse_err(0, format!("missing record for node {a}"))))
        .collect::<Result<Vec<_>>>()?;
    let (graph, perm) = Graph::with_permutation(n, edges)?;
    let mut ordered = vec![0.0; m];
    for (input, j) in couplings.into_iter().enumerate() {
        ordered[perm[input]] = j;
    }
    IsingModel::new(graph, ordered, fields)
}
