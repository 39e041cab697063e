//! Reading and writing tree segments, and the on-disk dataset layout.
//!
//! Three formats are supported: whitespace-separated xyz text, PLY (ascii and
//! binary little-endian) and uncompressed LAS 1.2–1.4 with point formats 0–3.
//! Segment identity (`scan_id`, tree id, species) comes from the
//! `<root>/<species>/<scan_id>__<tree_id>.<ext>` layout; the text formats
//! additionally record it in header comments, which take precedence.

mod las;
mod manifest;
mod ply;
mod xyz;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cloud::{Species, TreeSegment};
use crate::error::{Error, Result};

pub use manifest::{
    read_manifest_csv, scan_manifest, write_manifest_csv, DatasetManifest, ManifestEntry, SplitTag,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    XyzText,
    Ply,
    Las,
}

impl Format {
    pub const EXTENSIONS: [(&'static str, Format); 4] = [
        ("xyz", Format::XyzText),
        ("txt", Format::XyzText),
        ("ply", Format::Ply),
        ("las", Format::Las),
    ];

    pub fn from_path(path: &Path) -> Option<Format> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        Self::EXTENSIONS
            .iter()
            .find(|(e, _)| *e == ext)
            .map(|(_, f)| *f)
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::XyzText => "xyz",
            Format::Ply => "ply",
            Format::Las => "las",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::XyzText => "xyz-text",
            Format::Ply => "ply",
            Format::Las => "las",
        })
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" | "xyz-text" | "txt" => Ok(Format::XyzText),
            "ply" => Ok(Format::Ply),
            "las" => Ok(Format::Las),
            other => Err(Error::InvalidParameter(format!("unknown format `{other}`"))),
        }
    }
}

/// Segment identity recovered from a path or from in-file comments.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct SegmentLabels {
    pub id: Option<String>,
    pub scan_id: Option<String>,
    pub species: Option<Species>,
}

impl SegmentLabels {
    fn from_path(path: &Path) -> Self {
        let (scan_id, id) = match path.file_stem().and_then(|s| s.to_str()) {
            Some(stem) => match stem.split_once("__") {
                Some((scan, tree)) => (Some(scan.to_string()), Some(tree.to_string())),
                None => (None, Some(stem.to_string())),
            },
            None => (None, None),
        };
        let species = path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse().ok());
        SegmentLabels {
            id,
            scan_id,
            species,
        }
    }

    fn overlay(self, other: SegmentLabels) -> SegmentLabels {
        SegmentLabels {
            id: other.id.or(self.id),
            scan_id: other.scan_id.or(self.scan_id),
            species: other.species.or(self.species),
        }
    }

    pub(crate) fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "id" => self.id = Some(value.to_string()),
            "scan_id" => self.scan_id = Some(value.to_string()),
            "species" => self.species = Some(value.parse()?),
            _ => {}
        }
        Ok(())
    }
}

pub fn read_segment(path: &Path, format: Format) -> Result<TreeSegment> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (cloud, labels) = match format {
        Format::XyzText => xyz::parse(path, &bytes)?,
        Format::Ply => ply::parse(path, &bytes)?,
        Format::Las => (las::parse(path, &bytes)?, SegmentLabels::default()),
    };
    cloud.validate()?;
    let labels = SegmentLabels::from_path(path).overlay(labels);
    Ok(TreeSegment {
        id: labels.id.unwrap_or_default(),
        scan_id: labels.scan_id.unwrap_or_default(),
        species: labels.species.unwrap_or(Species::Unknown),
        cloud,
    })
}

/// Reads a segment, picking the format from the file extension.
pub fn read_segment_auto(path: &Path) -> Result<TreeSegment> {
    let format = Format::from_path(path).ok_or_else(|| {
        Error::InvalidParameter(format!("{}: unrecognised extension", path.display()))
    })?;
    read_segment(path, format)
}

pub fn write_segment(segment: &TreeSegment, path: &Path, format: Format) -> Result<()> {
    let bytes = match format {
        Format::XyzText => xyz::encode(segment),
        Format::Ply => ply::encode(segment, ply::Encoding::BinaryLittleEndian),
        Format::Las => las::encode(&segment.cloud)?,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes an ascii PLY instead of the default binary encoding.
pub fn write_ply_ascii(segment: &TreeSegment, path: &Path) -> Result<()> {
    std::fs::write(path, ply::encode(segment, ply::Encoding::Ascii)).map_err(|e| Error::io(path, e))
}
