//! Plain-text parameter checkpoints.
//!
//! ```text
//! # spikan checkpoint v1
//! network x grid=3 degree=3 widths=1,3,3,5
//! tensor 0 coeffs 3 1 6
//! <values, one row of the last dimension per line>
//! tensor 0 base 3 1
//! <values>
//! ...
//! end
//! ```
//!
//! Values are written in Rust's shortest round-trip form, so a checkpoint
//! reloads bit for bit.

use std::fmt::Write as _;

use super::{KanLayer, KanNetwork};
use crate::bspline::SplineSpec;
use crate::error::{Error, Result};

const MAGIC: &str = "# spikan checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedNetwork {
    pub name: String,
    pub net: KanNetwork,
}

fn write_tensor(out: &mut String, layer: usize, name: &str, shape: &[usize], values: &[f64]) {
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "tensor {layer} {name} {}", dims.join(" "));
    for row in values.chunks(*shape.last().unwrap()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

pub fn write_checkpoint(nets: &[NamedNetwork]) -> String {
    let mut out = String::from(MAGIC);
    out.push('\n');
    for NamedNetwork { name, net } in nets {
        let widths: Vec<String> = net.widths().iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "network {name} grid={} degree={} widths={}",
            net.spec().grid(),
            net.spec().degree(),
            widths.join(",")
        );
        for (l, layer) in net.layers().iter().enumerate() {
            let nb = layer.spec().num_basis();
            write_tensor(
                &mut out,
                l,
                "coeffs",
                &[layer.n_out(), layer.n_in(), nb],
                layer.coeffs(),
            );
            write_tensor(&mut out, l, "base", &[layer.n_out(), layer.n_in()], layer.base());
        }
        out.push_str("end\n");
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    source: &'a str,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            self.last = i + 1;
            if !l.trim().is_empty() {
                return Some((i + 1, l));
            }
        }
        None
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(self.source, line, msg)
    }
}

fn parse_kv<'a>(tok: &'a str, key: &str) -> Option<&'a str> {
    tok.strip_prefix(key)?.strip_prefix('=')
}

fn read_tensor(lines: &mut Lines<'_>, layer: usize, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let (no, header) = lines
        .next()
        .ok_or_else(|| lines.err(lines.last, "unexpected end of checkpoint"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    let expect_dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    if toks.len() != 3 + shape.len()
        || toks[0] != "tensor"
        || toks[1] != layer.to_string()
        || toks[2] != name
        || toks[3..] != expect_dims.iter().map(String::as_str).collect::<Vec<_>>()[..]
    {
        return Err(lines.err(
            no,
            format!("expected `tensor {layer} {name} {}`", expect_dims.join(" ")),
        ));
    }
    let n: usize = shape.iter().product();
    let mut values = Vec::with_capacity(n);
    while values.len() < n {
        let (no, line) = lines
            .next()
            .ok_or_else(|| lines.err(lines.last, "tensor data truncated"))?;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| lines.err(no, format!("bad number {tok:?}")))?;
            values.push(v);
        }
        if values.len() > n {
            return Err(lines.err(no, "too many values for tensor"));
        }
    }
    Ok(values)
}

pub fn read_checkpoint(text: &str, source: &str) -> Result<Vec<NamedNetwork>> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        source,
        last: 0,
    };
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        Some((no, _)) => return Err(lines.err(no, "missing checkpoint magic line")),
        None => return Err(lines.err(0, "empty checkpoint")),
    }
    let mut nets = Vec::new();
    while let Some((no, line)) = lines.next() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 5 || toks[0] != "network" {
            return Err(lines.err(no, "expected `network <name> grid=.. degree=.. widths=..`"));
        }
        let name = toks[1].to_string();
        let grid: usize = parse_kv(toks[2], "grid")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| lines.err(no, "bad grid field"))?;
        let degree: usize = parse_kv(toks[3], "degree")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| lines.err(no, "bad degree field"))?;
        let widths: Vec<usize> = parse_kv(toks[4], "widths")
            .map(|v| {
                v.split(',')
                    .map(|w| w.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .and_then(|r| r.ok())
            .ok_or_else(|| lines.err(no, "bad widths field"))?;
        if widths.len() < 2 {
            return Err(lines.err(no, "network needs at least two widths"));
        }
        let spec = SplineSpec::new(grid, degree).map_err(|e| lines.err(no, e.to_string()))?;
        let nb = spec.num_basis();
        let mut layers = Vec::new();
        for (l, w) in widths.windows(2).enumerate() {
            let coeffs = read_tensor(&mut lines, l, "coeffs", &[w[1], w[0], nb])?;
            let base = read_tensor(&mut lines, l, "base", &[w[1], w[0]])?;
            let layer = KanLayer::from_parts(w[0], w[1], spec.clone(), coeffs, base)
                .map_err(|e| lines.err(lines.last, e.to_string()))?;
            layers.push(layer);
        }
        match lines.next() {
            Some((_, l)) if l.trim() == "end" => {}
            Some((no, _)) => return Err(lines.err(no, "expected `end`")),
            None => return Err(lines.err(lines.last, "missing `end`")),
        }
        nets.push(NamedNetwork {
            name,
            net: KanNetwork::from_layers(layers)?,
        });
    }
    Ok(nets)
}
