//! Line-delimited JSON dataset manifests.
//!
//! The first non-blank line is a header naming the split:
//!
//! ```text
//! {"split":"train"}
//! ```
//!
//! Every following non-blank line is one video-query pair:
//!
//! ```text
//! {"video_id":"v1","features":"feats/v1.feat","duration":30.0,
//!  "query_id":"q1","query":"person opens the door","tau_s":2.0,"tau_e":6.5}
//! ```
//!
//! | field      | type              | meaning                                          |
//! |------------|-------------------|--------------------------------------------------|
//! | `video_id` | string            | video key, also names the narration cache file   |
//! | `features` | path              | feature file, relative to the manifest directory |
//! | `duration` | seconds           | video length                                     |
//! | `periods`  | `[[s, e], ...]`   | optional per-row periods of the feature file     |
//! | `query_id` | string            | query key, unique within the manifest            |
//! | `query`    | string            | natural-language query                           |
//! | `tau_s`    | seconds           | ground-truth moment start                        |
//! | `tau_e`    | seconds           | ground-truth moment end                          |
//!
//! Lines starting with `#` are ignored.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{validate_periods, Period};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "cd-test-ood")]
    CdTestOod,
    #[serde(rename = "cg-novel-word")]
    CgNovelWord,
    #[serde(rename = "cg-novel-composition")]
    CgNovelComposition,
    #[serde(rename = "iid-test")]
    IidTest,
}

impl Split {
    pub const ALL: [Split; 5] =
        [Split::Train, Split::CdTestOod, Split::CgNovelWord, Split::CgNovelComposition, Split::IidTest];

    /// The three generalisation splits reported side by side.
    pub const GENERALIZATION: [Split; 3] = [Split::CdTestOod, Split::CgNovelWord, Split::CgNovelComposition];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::CdTestOod => "cd-test-ood",
            Split::CgNovelWord => "cg-novel-word",
            Split::CgNovelComposition => "cg-novel-composition",
            Split::IidTest => "iid-test",
        }
    }

    /// Column heading used in result tables.
    pub fn title(self) -> &'static str {
        match self {
            Split::Train => "Train",
            Split::CdTestOod => "CD-Test-ood",
            Split::CgNovelWord => "CG-Novel-word",
            Split::CgNovelComposition => "CG-Novel-composition",
            Split::IidTest => "IID-Test",
        }
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
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub features: PathBuf,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<Vec<[f64; 2]>>,
    pub query_id: String,
    pub query: String,
    pub tau_s: f64,
    pub tau_e: f64,
}

impl ManifestEntry {
    pub fn periods(&self) -> Option<Vec<Period>> {
        self.periods.as_ref().map(|ps| ps.iter().map(|p| Period::new(p[0], p[1])).collect())
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(format!("duration {} must be positive", self.duration));
        }
        if !(0.0 <= self.tau_s && self.tau_s < self.tau_e && self.tau_e <= self.duration) {
            return Err(format!(
                "annotation [{}, {}] out of bounds for video {} of duration {}",
                self.tau_s, self.tau_e, self.video_id, self.duration
            ));
        }
        if self.query.trim().is_empty() {
            return Err("empty query".into());
        }
        if let Some(periods) = self.periods() {
            validate_periods(&periods).map_err(|e| e.to_string())?;
            let end = periods.last().map(|p| p.end).unwrap_or(0.0);
            if (end - self.duration).abs() > 1e-9 {
                return Err(format!("periods end at {end}, duration is {}", self.duration));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative feature paths resolve against.
    pub base_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Header {
    split: Split,
}

impl DatasetManifest {
    pub fn feature_path(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.features.is_absolute() {
            entry.features.clone()
        } else {
            self.base_dir.join(&entry.features)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::validation(format!("manifest for split {} has no entries", self.split)));
        }
        let mut seen = HashSet::new();
        for (index, entry) in self.entries.iter().enumerate() {
            entry.validate().map_err(|message| Error::Entry { index, message })?;
            if !seen.insert((&entry.video_id, &entry.query_id)) {
                return Err(Error::Entry {
                    index,
                    message: format!("duplicate (video_id, query_id) = ({}, {})", entry.video_id, entry.query_id),
                });
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "missing header line".into()))?;
    let header: Header = serde_json::from_str(header).map_err(|e| parse_err(hline, format!("bad header: {e}")))?;
    let mut entries = Vec::new();
    for (line, body) in lines {
        let entry: ManifestEntry = serde_json::from_str(body).map_err(|e| parse_err(line, e.to_string()))?;
        entries.push(entry);
    }
    let manifest = DatasetManifest {
        split: header.split,
        entries,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut out = Vec::new();
    serde_json::to_writer(&mut out, &Header { split: manifest.split })?;
    out.push(b'\n');
    for entry in &manifest.entries {
        serde_json::to_writer(&mut out, entry)?;
        out.push(b'\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(i: usize, tau_e: f64) -> String {
        format!(
            r#"{{"video_id":"v{i}","features":"v{i}.feat","duration":10.0,"query_id":"q{i}","query":"a person sits","tau_s":1.0,"tau_e":{tau_e}}}"#
        )
    }

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("m.jsonl");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_valid_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{{\"split\":\"cg-novel-word\"}}\n{}\n\n{}\n{}\n", entry(0, 3.0), entry(1, 4.0), entry(2, 10.0));
        let m = load_manifest(&write(dir.path(), &body)).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.split, Split::CgNovelWord);
        assert_eq!(m.feature_path(&m.entries[0]), dir.path().join("v0.feat"));

        let p2 = dir.path().join("copy.jsonl");
        write_manifest(&p2, &m).unwrap();
        assert_eq!(load_manifest(&p2).unwrap().entries, m.entries);
    }

    #[test]
    fn out_of_bounds_annotation_names_entry() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{{\"split\":\"train\"}}\n{}\n{}\n", entry(0, 3.0), entry(1, 12.0));
        match load_manifest(&write(dir.path(), &body)) {
            Err(Error::Entry { index, message }) => {
                assert_eq!(index, 1);
                assert!(message.contains("v1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_manifest(&write(dir.path(), "{\"split\":\"train\"}\n")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_manifest(&write(dir.path(), "{\"split\":\"train\"}\n{oops\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = load_manifest(&write(dir.path(), "{\"split\":\"nope\"}\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
