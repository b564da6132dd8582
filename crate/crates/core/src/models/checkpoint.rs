//! Plain-text model checkpoints.
//!
//! ```text
//! cldrank-checkpoint v1
//! meta <key> <value>
//! block <name> <rows> <cols>
//! <row 0 values separated by spaces>
//! ...
//! ```
//! Values are written with Rust's shortest round-trip formatting, so a
//! parsed checkpoint reproduces the original parameters exactly.

use std::io::{BufRead, Write};

use crate::{Error, Result};

const HEADER: &str = "cldrank-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

impl Block {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, values.len());
        Block { name: name.into(), rows, cols, values }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub blocks: Vec<Block>,
}

impl Checkpoint {
    /// Set a metadata entry, replacing an existing one with the same key.
    pub fn meta(&mut self, key: &str, value: &str) {
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value.to_string(),
            None => self.meta.push((key.to_string(), value.to_string())),
        }
    }

    pub fn get_meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Validation(format!("checkpoint has no meta entry {key:?}")))
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Validation(format!("checkpoint has no block {name:?}")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k} {v}\n"));
        }
        for b in &self.blocks {
            out.push_str(&format!("block {} {} {}\n", b.name, b.rows, b.cols));
            for r in 0..b.rows {
                let row: Vec<String> = b.values[r * b.cols..(r + 1) * b.cols].iter().map(|v| v.to_string()).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        Self::parse(&s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            _ => return Err(Error::Parse { line: 1, msg: format!("expected header {HEADER:?}") }),
        }
        let mut ck = Checkpoint::default();
        while let Some((i, line)) = lines.next() {
            let lineno = i + 1;
            let err = |msg: String| Error::Parse { line: lineno, msg };
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| err("meta line without key".into()))?;
                    let value: Vec<&str> = parts.collect();
                    ck.meta(key, &value.join(" "));
                }
                Some("block") => {
                    let fields: Vec<&str> = parts.collect();
                    if fields.len() != 3 {
                        return Err(err("block line needs name, rows, cols".into()));
                    }
                    let rows: usize = fields[1].parse().map_err(|_| err(format!("bad row count {:?}", fields[1])))?;
                    let cols: usize = fields[2].parse().map_err(|_| err(format!("bad column count {:?}", fields[2])))?;
                    let mut values = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (j, row) = lines.next().ok_or_else(|| err(format!("block {} is truncated", fields[0])))?;
                        let before = values.len();
                        for tok in row.split_whitespace() {
                            let v: f64 = tok
                                .parse()
                                .map_err(|_| Error::Parse { line: j + 1, msg: format!("bad value {tok:?}") })?;
                            if !v.is_finite() {
                                return Err(Error::NonFinite(format!("value in block {} on line {}", fields[0], j + 1)));
                            }
                            values.push(v);
                        }
                        if values.len() - before != cols {
                            return Err(Error::Parse { line: j + 1, msg: format!("expected {cols} values") });
                        }
                    }
                    ck.blocks.push(Block::new(fields[0], rows, cols, values));
                }
                Some(other) => return Err(err(format!("unexpected record {other:?}"))),
                None => {}
            }
        }
        Ok(ck)
    }
}
