use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cloud::Species;
use crate::error::{Error, Result};

use super::Format;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    Unassigned,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(SplitTag::Train),
            "test" => Ok(SplitTag::Test),
            "unassigned" | "" => Ok(SplitTag::Unassigned),
            other => Err(Error::InvalidParameter(format!("unknown split tag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub id: String,
    pub scan_id: String,
    pub species: Species,
    pub split: SplitTag,
}

impl ManifestEntry {
    pub fn format(&self) -> Option<Format> {
        Format::from_path(&self.path)
    }

    /// `<scan_id>__<tree_id>`, the file-stem grammar of the dataset layout.
    pub fn stem(&self) -> String {
        format!("{}__{}", self.scan_id, self.id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fails on a repeated `(id, scan_id)` key.
    pub fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert((e.id.as_str(), e.scan_id.as_str())) {
                return Err(Error::DuplicateSegment {
                    id: e.id.clone(),
                    scan_id: e.scan_id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Walks `<root>/<species>/<scan_id>__<tree_id>.<ext>`; files with other
/// extensions are skipped. Entries are sorted by path.
pub fn scan_manifest(root: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for dir in sorted_children(root)? {
        if !dir.is_dir() {
            if Format::from_path(&dir).is_some() {
                return Err(Error::BadLayout(dir));
            }
            continue;
        }
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let species: Species = name.parse()?;
        for file in sorted_children(&dir)? {
            if !file.is_file() || Format::from_path(&file).is_none() {
                continue;
            }
            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let (scan_id, id) = stem
                .split_once("__")
                .filter(|(s, t)| !s.is_empty() && !t.is_empty())
                .ok_or_else(|| Error::BadLayout(file.clone()))?;
            entries.push(ManifestEntry {
                id: id.to_string(),
                scan_id: scan_id.to_string(),
                species,
                split: SplitTag::Unassigned,
                path: file.clone(),
            });
        }
    }
    let manifest = DatasetManifest { entries };
    manifest.check_unique()?;
    Ok(manifest)
}

fn sorted_children(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// CSV with header `path,id,scan_id,species,split`.
pub fn write_manifest_csv(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in &manifest.entries {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Relative entry paths are resolved against the manifest's directory.
pub fn read_manifest_csv(path: &Path) -> Result<DatasetManifest> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut r = csv::Reader::from_path(path)?;
    let mut entries = Vec::new();
    for row in r.deserialize() {
        let mut e: ManifestEntry = row?;
        if e.path.is_relative() {
            e.path = base.join(&e.path);
        }
        entries.push(e);
    }
    let manifest = DatasetManifest { entries };
    manifest.check_unique()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(root: &Path, rel: &str) {
        let p = root.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, "0 0 0\n").unwrap();
    }

    #[test]
    fn empty_root_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(scan_manifest(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn species_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "pine/a__1.xyz");
        touch(dir.path(), "birch/a__2.xyz");
        touch(dir.path(), "birch/notes.md");
        let m = scan_manifest(dir.path()).unwrap();
        assert_eq!(m.len(), 2);
        let pine = m.entries.iter().find(|e| e.id == "1").unwrap();
        assert_eq!(pine.species, Species::Pine);
        assert_eq!(pine.scan_id, "a");
        let birch = m.entries.iter().find(|e| e.id == "2").unwrap();
        assert_eq!(birch.species, Species::Birch);
    }

    #[test]
    fn duplicate_tree_across_species_is_error() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "pine/a__1.xyz");
        touch(dir.path(), "spruce/a__1.xyz");
        assert!(matches!(
            scan_manifest(dir.path()),
            Err(Error::DuplicateSegment { .. })
        ));
    }

    #[test]
    fn unknown_species_and_bad_stem() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "larch/a__1.xyz");
        assert!(matches!(scan_manifest(dir.path()), Err(Error::UnknownSpecies(_))));

        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "oak/no_separator.xyz");
        assert!(matches!(scan_manifest(dir.path()), Err(Error::BadLayout(_))));
    }

    #[test]
    fn csv_round_trip_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            entries: vec![ManifestEntry {
                path: PathBuf::from("pine/s__t.xyz"),
                id: "t".into(),
                scan_id: "s".into(),
                species: Species::Pine,
                split: SplitTag::Test,
            }],
        };
        let csv_path = dir.path().join("m.csv");
        write_manifest_csv(&m, &csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("path,id,scan_id,species,split\n"));
        let back = read_manifest_csv(&csv_path).unwrap();
        assert_eq!(back.entries[0].path, dir.path().join("pine/s__t.xyz"));
        assert_eq!(back.entries[0].split, SplitTag::Test);
    }
}
