//! Plain-text parameter checkpoints.
//!
//! Layout, one record per line:
//!
//! ```text
//! sagelab-checkpoint 1
//! net <name> <layer count>
//! layer <in_dim> <out_dim> <activation>
//! <in_dim values>            (out_dim lines, row-major weights)
//! <out_dim values>           (bias)
//! ...
//! ```
//!
//! Values are written with the shortest representation that parses back to the
//! same `f64`, so a write/read cycle is exact for `f64` and `f32` parameters.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, Layer};
use crate::scalar::Scalar;

const MAGIC: &str = "sagelab-checkpoint 1";

pub fn write_nets<T: Scalar>(nets: &[(&str, &DenseNet<T>)]) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    for (name, net) in nets {
        assert!(!name.contains(char::is_whitespace), "net names must not contain whitespace");
        writeln!(out, "net {name} {}", net.layers().len()).unwrap();
        for layer in net.layers() {
            writeln!(out, "layer {} {} {}", layer.in_dim(), layer.out_dim(), layer.activation()).unwrap();
            for row in layer.weights().chunks_exact(layer.in_dim()) {
                write_row(&mut out, row);
            }
            write_row(&mut out, layer.bias());
        }
    }
    out
}

fn write_row<T: Scalar>(out: &mut String, row: &[T]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{:?}", v.as_f64()).unwrap();
    }
    out.push('\n');
}

pub fn read_nets<T: Scalar>(text: &str) -> Result<Vec<(String, DenseNet<T>)>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::parse("checkpoint", format!("unexpected end of file, expected {what}")))
    };
    let (ln, magic) = next("header")?;
    if magic != MAGIC {
        return Err(Error::parse(format!("line {ln}"), "not a sagelab checkpoint"));
    }
    let mut nets = Vec::new();
    loop {
        let (ln, head) = match next("net") {
            Ok(v) => v,
            Err(_) => break,
        };
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "net" {
            return Err(Error::parse(format!("line {ln}"), "expected `net <name> <layers>`"));
        }
        let name = parts[1].to_string();
        let count: usize = parse_num(parts[2], ln)?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, head) = next("layer")?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "layer" {
                return Err(Error::parse(format!("line {ln}"), "expected `layer <in> <out> <activation>`"));
            }
            let in_dim: usize = parse_num(parts[1], ln)?;
            let out_dim: usize = parse_num(parts[2], ln)?;
            let activation: Activation = parts[3].parse()?;
            let mut weights = Vec::with_capacity(in_dim * out_dim);
            for _ in 0..out_dim {
                let (ln, row) = next("weight row")?;
                weights.extend(parse_row::<T>(row, in_dim, ln)?);
            }
            let (ln, row) = next("bias row")?;
            let bias = parse_row::<T>(row, out_dim, ln)?;
            layers.push(Layer::from_parts(in_dim, out_dim, weights, bias, activation)?);
        }
        nets.push((name, DenseNet::new(layers)?));
    }
    Ok(nets)
}

fn parse_num<N: std::str::FromStr>(s: &str, ln: usize) -> Result<N> {
    s.parse()
        .map_err(|_| Error::parse(format!("line {ln}"), format!("invalid number `{s}`")))
}

fn parse_row<T: Scalar>(row: &str, expected: usize, ln: usize) -> Result<Vec<T>> {
    let vals = row
        .split_whitespace()
        .map(|s| parse_num::<f64>(s, ln).map(T::lit))
        .collect::<Result<Vec<T>>>()?;
    if vals.len() != expected {
        return Err(Error::parse(
            format!("line {ln}"),
            format!("expected {expected} values, found {}", vals.len()),
        ));
    }
    Ok(vals)
}

pub fn save<T: Scalar>(path: &Path, nets: &[(&str, &DenseNet<T>)]) -> Result<()> {
    std::fs::write(path, write_nets(nets)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Vec<(String, DenseNet<T>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_nets(&text)
}
