//! Flat `key = value` text: one pair per line, `#` starts a comment line.

use std::fmt::Display;
use std::str::FromStr;

use ovpano_core::geometry::VoxelGrid;
use ovpano_core::vocab::{ClassInfo, Vocabulary};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    origin: String,
    entries: Vec<(String, String, usize)>,
}

/// Equal when the key-value pairs match in order.
impl PartialEq for KvDoc {
    fn eq(&self, other: &Self) -> bool {
        self.entries().eq(other.entries())
    }
}

impl KvDoc {
    pub fn new(origin: &str) -> Self {
        Self {
            origin: origin.into(),
            entries: Vec::new(),
        }
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut doc = Self::new(origin);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(doc.err(i + 1, "expected `key = value`"));
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(doc.err(i + 1, "empty key"));
            }
            if doc.entries.iter().any(|(k, _, _)| k == key) {
                return Err(doc.err(i + 1, format!("duplicate key `{key}`")));
            }
            doc.entries.push((key.into(), v.trim().into(), i + 1));
        }
        Ok(doc)
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            origin: self.origin.clone(),
            line,
            msg: msg.into(),
        }
    }

    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.into(), value.to_string(), 0));
    }

    /// Replaces an existing value or appends a new pair.
    pub fn set(&mut self, key: &str, value: &str) {
        match self.entries.iter_mut().find(|(k, _, _)| k == key) {
            Some(e) => e.1 = value.into(),
            None => self.entries.push((key.into(), value.into(), 0)),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v, _)| (k.as_str(), v.as_str()))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _, _)| k == key).map(|(_, v, _)| v.as_str())
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.iter().find(|(k, _, _)| k == key).map_or(0, |e| e.2)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let v = self.raw(key).ok_or_else(|| self.err(0, format!("missing key `{key}`")))?;
        v.parse()
            .map_err(|e| self.err(self.line_of(key), format!("`{key}`: {e}")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let v = self.raw(key).ok_or_else(|| self.err(0, format!("missing key `{key}`")))?;
        v.split_whitespace()
            .map(|x| {
                x.parse()
                    .map_err(|e| self.err(self.line_of(key), format!("`{key}`: {e}")))
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v, _) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

pub fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Shortest text that parses back to the same `f64`.
pub fn float(x: f64) -> String {
    format!("{x:?}")
}

pub fn floats(xs: &[f64]) -> String {
    xs.iter().map(|&x| float(x)).collect::<Vec<_>>().join(" ")
}

pub fn push_vocab(doc: &mut KvDoc, vocab: &Vocabulary) {
    doc.push("classes", vocab.len());
    for (i, c) in vocab.classes().iter().enumerate() {
        doc.push(&format!("class.{i}.name"), &c.name);
        doc.push(&format!("class.{i}.thing"), c.is_thing);
        doc.push(&format!("class.{i}.base"), c.is_base);
        doc.push(&format!("class.{i}.labels"), c.labels.join(", "));
    }
}

pub fn read_vocab(doc: &KvDoc) -> Result<Vocabulary> {
    let n: usize = doc.get("classes")?;
    let mut classes = Vec::with_capacity(n.min(1024));
    for i in 0..n {
        let labels: String = doc.get(&format!("class.{i}.labels"))?;
        classes.push(ClassInfo {
            name: doc.get(&format!("class.{i}.name"))?,
            is_thing: doc.get(&format!("class.{i}.thing"))?,
            is_base: doc.get(&format!("class.{i}.base"))?,
            labels: labels.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        });
    }
    Ok(Vocabulary::new(classes)?)
}

pub fn push_grid(doc: &mut KvDoc, grid: &VoxelGrid) {
    doc.push("grid.size", floats(&grid.size));
    doc.push("grid.origin", floats(&grid.origin));
    doc.push("grid.extents", join(&grid.extents));
}

pub fn read_grid(doc: &KvDoc) -> Result<VoxelGrid> {
    let three = |key: &str| -> Result<[f64; 3]> {
        doc.list::<f64>(key)?
            .try_into()
            .map_err(|_| doc.err(doc.line_of(key), format!("`{key}` needs three values")))
    };
    let ext: [usize; 3] = doc
        .list::<usize>("grid.extents")?
        .try_into()
        .map_err(|_| doc.err(doc.line_of("grid.extents"), "`grid.extents` needs three values"))?;
    Ok(VoxelGrid::new(three("grid.size")?, three("grid.origin")?, ext)?)
}
