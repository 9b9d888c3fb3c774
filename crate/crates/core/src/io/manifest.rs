use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}` (expected train, valid or test)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Option<usize>,
    pub split: Option<Split>,
}

/// One entry per line: `path [TAB label [TAB split]]`. Blank lines and lines
/// starting with `#` are skipped; relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base).map_err(|m| Error::format(path, m))
    }

    pub fn parse(text: &str, base: &Path) -> std::result::Result<Self, String> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .quoting(false)
            .from_reader(text.as_bytes());
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let fields: Vec<&str> = rec.iter().map(str::trim).collect();
            if fields.iter().all(|f| f.is_empty()) {
                continue;
            }
            if fields.len() > 3 {
                return Err(format!("line {line}: expected at most 3 fields, got {}", fields.len()));
            }
            let path = base.join(fields[0]);
            if !seen.insert(path.clone()) {
                return Err(format!("line {line}: duplicate path {}", fields[0]));
            }
            let label = match fields.get(1).filter(|s| !s.is_empty()) {
                Some(l) => Some(l.parse::<usize>().map_err(|_| format!("line {line}: label `{l}` is not a class id"))?),
                None => None,
            };
            let split = match fields.get(2).filter(|s| !s.is_empty()) {
                Some(s) => Some(s.parse::<Split>().map_err(|e| format!("line {line}: {e}"))?),
                None => None,
            };
            entries.push(ManifestEntry { path, label, split });
        }
        Ok(Manifest { entries })
    }

    /// Loads a labeled manifest and checks every label is below `num_classes`.
    pub fn load_labeled(path: &Path, num_classes: usize) -> Result<Self> {
        let m = Self::load(path)?;
        for e in &m.entries {
            match e.label {
                None => return Err(Error::format(path, format!("{} has no label", e.path.display()))),
                Some(l) if l >= num_classes => {
                    return Err(Error::format(path, format!("{} has label {l}, but there are {num_classes} classes", e.path.display())))
                }
                _ => {}
            }
        }
        Ok(m)
    }

    /// Entries of one split.
    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Some(split)).collect()
    }

    /// Serializes with paths relative to `base` where possible.
    pub fn to_tsv(&self, base: &Path) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let p = e.path.strip_prefix(base).unwrap_or(&e.path);
            s.push_str(&p.to_string_lossy());
            if e.label.is_some() || e.split.is_some() {
                s.push('\t');
                if let Some(l) = e.label {
                    s.push_str(&l.to_string());
                }
            }
            if let Some(sp) = e.split {
                s.push('\t');
                s.push_str(&sp.to_string());
            }
            s.push('\n');
        }
        s
    }
}
