//! Plain-text parameter snapshots.
//!
//! ```text
//! # dac-snapshot v1
//! <key> <d0>x<d1>... <v0> <v1> ...
//! ```
//!
//! One entry per line, keys in byte order. Values use Rust's shortest
//! round-trip formatting, so a save/load cycle is bit exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{MlpParams, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "# dac-snapshot v1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Snapshot {
    entries: BTreeMap<String, Tensor>,
}

impl Snapshot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: &Tensor) {
        self.entries.insert(key.into(), value.detached());
    }

    pub fn insert_scalar(&mut self, key: impl Into<String>, value: f64) {
        self.entries.insert(key.into(), Tensor::scalar(value));
    }

    /// Stores every layer of `net` under `prefix.layer{i}.{weight,bias}`.
    pub fn insert_mlp(&mut self, prefix: &str, net: &MlpParams) {
        for (name, t) in net.named_params() {
            self.insert(format!("{prefix}.{name}"), t);
        }
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.entries.get(key)
    }

    pub fn scalar(&self, key: &str) -> Result<f64> {
        self.get(key)
            .ok_or_else(|| Error::Snapshot(format!("missing key {key}")))?
            .item()
    }

    /// Rebuilds the network stored under `prefix`.
    pub fn mlp(&self, prefix: &str, head_scale: f64) -> Result<MlpParams> {
        let mut layers = Vec::new();
        loop {
            let i = layers.len();
            let (Some(w), Some(b)) = (
                self.get(&format!("{prefix}.layer{i}.weight")),
                self.get(&format!("{prefix}.layer{i}.bias")),
            ) else {
                break;
            };
            if w.shape().len() != 2 {
                return Err(Error::Snapshot(format!(
                    "{prefix}.layer{i}.weight must be rank 2, got {:?}",
                    w.shape()
                )));
            }
            layers.push(super::Linear {
                weight: w.clone(),
                bias: b.clone(),
            });
        }
        if layers.is_empty() {
            return Err(Error::Snapshot(format!("no layers under {prefix}")));
        }
        MlpParams::from_layers(layers, head_scale)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{MAGIC}")?;
        for (key, t) in &self.entries {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            write!(out, "{key} {}", shape.join("x"))?;
            for v in t.data() {
                write!(out, " {v:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(l)) if l == MAGIC => {}
            _ => return Err(Error::Snapshot("missing header line".into())),
        }
        let mut entries = BTreeMap::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_ascii_whitespace();
            let bad = |what: &str| Error::Snapshot(format!("line {}: {what}", n + 2));
            let key = fields.next().ok_or_else(|| bad("missing key"))?;
            let shape = fields
                .next()
                .ok_or_else(|| bad("missing shape"))?
                .split('x')
                .map(|d| d.parse::<usize>().map_err(|_| bad("bad shape")))
                .collect::<Result<Vec<_>>>()?;
            let data = fields
                .map(|v| v.parse::<f64>().map_err(|_| bad("bad value")))
                .collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))?;
            if entries.insert(key.to_string(), t).is_some() {
                return Err(bad("duplicate key"));
            }
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }
}
