//! Corpus handling: a `manifest.csv` that maps cloud files to labels and
//! splits, plus an in-memory generator for synthetic corpora.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::io::load_cloud;
use super::synth::{ShapeKind, SynthOptions, synth_generate};
use super::PointCloud;
use crate::error::{Error, Result};

/// Which partition a corpus entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Manifest spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    /// Parses the manifest spelling.
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One row of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Cloud file path, relative to the manifest's directory.
    pub path: String,
    pub label: u32,
    pub split: Split,
}

/// Writes a `path,label,split` manifest.
pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(entries.len() * 32 + 24);
    writeln!(out, "path,label,split").unwrap();
    for e in entries {
        writeln!(out, "{},{},{}", e.path, e.label, e.split.as_str()).expect("write to vec");
    }
    std::fs::write(path, &out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a manifest written by [`write_manifest`].
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "path,label,split" => {}
        Some((_, header)) => {
            return Err(err(1, format!("expected header path,label,split, found {header:?}")));
        }
        None => return Err(err(1, "empty manifest".into())),
    }
    let mut entries = Vec::new();
    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(err(idx + 1, format!("expected 3 fields, found {}", fields.len())));
        }
        let label: u32 = fields[1]
            .trim()
            .parse()
            .map_err(|_| err(idx + 1, format!("bad label {:?}", fields[1])))?;
        let split = Split::parse(fields[2].trim())
            .ok_or_else(|| err(idx + 1, format!("unknown split {:?}", fields[2])))?;
        entries.push(ManifestEntry { path: fields[0].trim().to_string(), label, split });
    }
    if entries.is_empty() {
        return Err(err(1, "manifest lists no entries".into()));
    }
    Ok(entries)
}

/// An on-disk corpus: manifest plus the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Dataset {
    /// Opens the corpus described by a manifest file.
    pub fn open(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let entries = read_manifest(manifest)?;
        let root = manifest.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Ok(Dataset { root, entries })
    }

    /// All manifest rows.
    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Number of classes implied by the largest label.
    pub fn num_classes(&self) -> usize {
        self.entries.iter().map(|e| e.label as usize).max().unwrap_or(0) + 1
    }

    /// Loads every cloud of one split, with labels attached, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<PointCloud>> {
        let mut out = Vec::new();
        for e in self.entries.iter().filter(|e| e.split == split) {
            let cloud = load_cloud(self.root.join(&e.path))?;
            out.push(cloud.with_label(e.label));
        }
        if out.is_empty() {
            return Err(Error::Config(format!(
                "manifest has no {} entries",
                split.as_str()
            )));
        }
        Ok(out)
    }
}

/// Generates `per_class` clouds for every shape class, in label order.
///
/// The per-cloud seed mixes `base_seed`, the label, and the in-class index, so
/// two splits stay disjoint as long as their base seeds differ.
pub fn synth_split(
    per_class: usize,
    n_points: usize,
    opts: &SynthOptions,
    base_seed: u64,
) -> Result<Vec<PointCloud>> {
    if per_class == 0 {
        return Err(Error::param("synth_split", "per_class must be positive"));
    }
    let mut out = Vec::with_capacity(per_class * ShapeKind::ALL.len());
    for kind in ShapeKind::ALL {
        for i in 0..per_class {
            let seed = base_seed
                .wrapping_add((kind.label() as u64).wrapping_mul(1_000_003))
                .wrapping_add(i as u64);
            out.push(synth_generate(kind, n_points, opts, seed)?);
        }
    }
    Ok(out)
}

// ── tests ─────────────────────────────────────────────────────────────────
