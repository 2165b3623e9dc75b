//! Plain-text network checkpoints.
//!
//! ```text
//! setrl-network 1
//! input 3
//! linear 64 3
//! <64 lines of 3 weights>
//! <1 line of 64 biases>
//! relu
//! ...
//! end
//! ```
//!
//! Values are written with `{:e}`, which round-trips `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Layer, Network};
use crate::error::{Error, Result};

const MAGIC: &str = "setrl-network";
const VERSION: u32 = 1;

fn join(values: impl Iterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:e}").unwrap();
    }
    s
}

fn bad(line: usize, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        line,
        reason: reason.into(),
    }
}

fn parse_row(line_no: usize, line: &str, expected: usize) -> Result<Vec<f64>> {
    let values = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| bad(line_no, format!("{t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(bad(line_no, format!("expected {expected} values, found {}", values.len())));
    }
    Ok(values)
}

impl Network {
    pub fn to_checkpoint(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\ninput {}\n", self.input_dim);
        for layer in &self.layers {
            match layer {
                Layer::Linear { weight, bias } => {
                    writeln!(out, "linear {} {}", weight.nrows(), weight.ncols()).unwrap();
                    for row in weight.rows() {
                        out.push_str(&join(row.iter().copied()));
                        out.push('\n');
                    }
                    out.push_str(&join(bias.iter().copied()));
                    out.push('\n');
                }
                Layer::Relu => out.push_str("relu\n"),
                Layer::Tanh => out.push_str("tanh\n"),
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Network> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(0, format!("unexpected end of file, wanted {what}")));

        let (n, header) = next("header")?;
        match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            [m, v] if *m == MAGIC => {
                if v.parse::<u32>().ok() != Some(VERSION) {
                    return Err(bad(n, format!("unsupported version {v}")));
                }
            }
            _ => return Err(bad(n, "missing setrl-network header")),
        }
        let (n, input) = next("input")?;
        let input_dim = input
            .strip_prefix("input ")
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| bad(n, "expected `input <dim>`"))?;

        let mut layers = Vec::new();
        loop {
            let (n, line) = next("layer")?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("end") => break,
                Some("relu") => layers.push(Layer::Relu),
                Some("tanh") => layers.push(Layer::Tanh),
                Some("linear") => {
                    let dims: Vec<usize> = parts
                        .map(|p| p.parse().map_err(|_| bad(n, format!("bad dimension {p:?}"))))
                        .collect::<Result<_>>()?;
                    let [rows, cols] = dims[..] else {
                        return Err(bad(n, "expected `linear <rows> <cols>`"));
                    };
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (n, row) = next("weight row")?;
                        data.extend(parse_row(n, row, cols)?);
                    }
                    let (n, row) = next("bias row")?;
                    let bias = Array1::from(parse_row(n, row, rows)?);
                    let weight = Array2::from_shape_vec((rows, cols), data).expect("row-major weights");
                    layers.push(Layer::Linear { weight, bias });
                }
                other => return Err(bad(n, format!("unknown layer {other:?}"))),
            }
        }
        Network::new(input_dim, layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Network> {
        Network::from_checkpoint(&std::fs::read_to_string(path)?)
    }
}
