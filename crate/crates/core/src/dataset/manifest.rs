use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One labelled frame: image path relative to the manifest root, and
/// label 1 (polyp present) or 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub path: String,
    pub label: u8,
}

/// Ordered frame records. The CSV form is `relative_path,label` per line,
/// newline-terminated, without a header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    root: PathBuf,
    records: Vec<Record>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<Record>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if r.label > 1 {
                return Err(Error::InvalidArgument(format!("record {i}: label {} not 0 or 1", r.label)));
            }
            if r.path.is_empty() || r.path.contains('\n') {
                return Err(Error::InvalidArgument(format!("record {i}: invalid path {:?}", r.path)));
            }
            if !seen.insert(r.path.as_str()) {
                return Err(Error::InvalidArgument(format!("record {i}: duplicate path {}", r.path)));
            }
        }
        Ok(DatasetManifest {
            root: root.into(),
            records,
        })
    }

    /// Parses CSV text. `source` only labels error messages.
    pub fn parse(text: &str, root: impl Into<PathBuf>, source: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Manifest {
            path: source.to_path_buf(),
            line,
            message,
        };
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            let (path, label) = line
                .rsplit_once(',')
                .ok_or_else(|| err(line_no, format!("expected `path,label`, got {line:?}")))?;
            if path.is_empty() {
                return Err(err(line_no, "empty path".into()));
            }
            let label = match label {
                "0" => 0,
                "1" => 1,
                other => return Err(err(line_no, format!("label must be 0 or 1, got {other:?}"))),
            };
            if !seen.insert(path.to_string()) {
                return Err(err(line_no, format!("duplicate path {path}")));
            }
            records.push(Record {
                path: path.to_string(),
                label,
            });
        }
        Ok(DatasetManifest {
            root: root.into(),
            records,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 24);
        for r in &self.records {
            writeln!(out, "{},{}", r.path, r.label).expect("string write");
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label == 1).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.positives();
        p > 0 && p < self.records.len()
    }

    pub fn full_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.records[i].path)
    }

    pub(crate) fn subset(&self, indices: &[usize]) -> Self {
        DatasetManifest {
            root: self.root.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

/// Reads a manifest; image paths resolve against `root`, or against the
/// manifest's directory when `root` is `None`.
pub fn load_manifest(path: impl AsRef<Path>, root: Option<&Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = match root {
        Some(r) => r.to_path_buf(),
        None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    DatasetManifest::parse(&text, root, path)
}
