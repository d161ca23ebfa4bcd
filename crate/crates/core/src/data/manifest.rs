use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    TrainLabeled,
    TrainUnlabeled,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::TrainLabeled => "train_labeled",
            Split::TrainUnlabeled => "train_unlabeled",
            Split::Test => "test",
        }
    }

    pub fn is_labeled(self) -> bool {
        !matches!(self, Split::TrainUnlabeled)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train_labeled" => Ok(Split::TrainLabeled),
            "train_unlabeled" => Ok(Split::TrainUnlabeled),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: String,
    pub mask: Option<String>,
    pub split: Split,
    pub patient_id: String,
}

/// Dataset manifest. Relative paths inside it resolve against `base_dir`,
/// the directory the manifest file was read from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            entries,
            base_dir: base_dir.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Structural checks: labeled splits carry masks, files exist, and no
    /// patient straddles two splits.
    pub fn validate(&self) -> Result<()> {
        let mut patient_split: BTreeMap<&str, Split> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.split.is_labeled() && e.mask.is_none() {
                return Err(Error::Manifest(format!(
                    "entry {i} ({}) is in split {} but has no mask",
                    e.image, e.split
                )));
            }
            let img = self.resolve(&e.image);
            if !img.is_file() {
                return Err(Error::Manifest(format!("missing image {}", img.display())));
            }
            if let Some(m) = &e.mask {
                let m = self.resolve(m);
                if !m.is_file() {
                    return Err(Error::Manifest(format!("missing mask {}", m.display())));
                }
            }
            match patient_split.get(e.patient_id.as_str()) {
                Some(&s) if s != e.split => {
                    return Err(Error::Manifest(format!(
                        "patient {} appears in both {s} and {}",
                        e.patient_id, e.split
                    )));
                }
                _ => {
                    patient_split.insert(&e.patient_id, e.split);
                }
            }
        }
        Ok(())
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split_entries(split).count()
    }

    /// Keep only the labeled-training entries of the first `n` patient ids in
    /// sorted order; other splits are untouched.
    pub fn restrict_labeled_patients(&self, n: usize) -> Self {
        let keep: BTreeSet<&str> = self
            .split_entries(Split::TrainLabeled)
            .map(|e| e.patient_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .take(n)
            .collect();
        let entries = self
            .entries
            .iter()
            .filter(|e| e.split != Split::TrainLabeled || keep.contains(e.patient_id.as_str()))
            .cloned()
            .collect();
        Self {
            entries,
            base_dir: self.base_dir.clone(),
        }
    }
}
