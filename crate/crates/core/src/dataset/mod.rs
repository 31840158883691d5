//! Manifests, splits, label handling and synthetic corpus assembly.

mod corpus;
mod labels;
mod split;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm::Gray8;

pub use corpus::{largest_remainder, synthesize_corpus, CorpusConfig, DEFAULT_PROPORTIONS};
pub use labels::{aggregate_raters, binarize_labels, class_distribution, normalize_image, LabelPolicy, Task};
pub use split::{split_dataset, split_sizes, Grouping, SplitConfig};

pub const MANIFEST_HEADER: &str = "id,path,rater_a,rater_b,severity,split,volume";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
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
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            "test" => Ok(Split::Test),
            "unassigned" | "" => Ok(Split::Unassigned),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// One manifest row. `path` is relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub path: String,
    pub rater_a: usize,
    pub rater_b: usize,
    pub severity: Option<f64>,
    pub split: Split,
    pub volume: Option<String>,
}

/// Raw row as stored, so out-of-range labels can be reported by id.
#[derive(Deserialize)]
struct RawRecord {
    id: String,
    path: String,
    rater_a: i64,
    rater_b: i64,
    severity: Option<f64>,
    split: String,
    volume: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory that record paths are relative to.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

fn check_label(id: &str, label: i64) -> Result<usize> {
    if (0..=2).contains(&label) {
        Ok(label as usize)
    } else {
        Err(Error::LabelOutOfRange {
            id: id.to_string(),
            label,
        })
    }
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            records,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            check_label(&r.id, r.rater_a as i64)?;
            check_label(&r.id, r.rater_b as i64)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate record id {:?}", r.id)));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header = text.lines().next().unwrap_or_default().trim_end_matches('\r');
        if header != MANIFEST_HEADER {
            return Err(Error::InvalidArgument(format!(
                "{}: manifest header must be {MANIFEST_HEADER:?}, found {header:?}",
                path.display()
            )));
        }
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut records = Vec::new();
        for row in reader.deserialize::<RawRecord>() {
            let raw = row?;
            records.push(ManifestRecord {
                rater_a: check_label(&raw.id, raw.rater_a)?,
                rater_b: check_label(&raw.id, raw.rater_b)?,
                split: raw.split.parse()?,
                id: raw.id,
                path: raw.path,
                severity: raw.severity,
                volume: raw.volume.filter(|v| !v.is_empty()),
            });
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(root, records)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            writer.serialize(r)?;
        }
        writer
            .into_inner()
            .map_err(|e| Error::InvalidArgument(format!("manifest buffer: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn image_path(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Reads every image of `split` in manifest order, scaled to [0, 1].
    pub fn load_split(&self, split: Split, size: usize) -> Result<Vec<(&ManifestRecord, Vec<f32>)>> {
        let records: Vec<&ManifestRecord> = self.split(split).collect();
        if records.is_empty() {
            return Err(Error::EmptySplit(split.to_string()));
        }
        records
            .into_iter()
            .map(|r| {
                let path = self.image_path(r);
                let img = Gray8::read(&path)?;
                if img.width != size || img.height != size {
                    return Err(Error::shape(
                        "image size",
                        format!("{size}x{size}"),
                        format!("{}x{} ({})", img.width, img.height, path.display()),
                    ));
                }
                Ok((r, normalize_image(&img)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, a: usize, b: usize) -> ManifestRecord {
        ManifestRecord {
            id: id.into(),
            path: format!("images/{id}.pgm"),
            rater_a: a,
            rater_b: b,
            severity: None,
            split: Split::Unassigned,
            volume: None,
        }
    }

    #[test]
    fn csv_header_and_empty_optionals() {
        let mut r = record("a", 1, 2);
        r.severity = Some(2.5);
        let m = Manifest::new("", vec![r, record("b", 0, 0)]).unwrap();
        let text = String::from_utf8(m.to_csv().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], MANIFEST_HEADER);
        assert_eq!(lines[1], "a,images/a.pgm,1,2,2.5,unassigned,");
        assert_eq!(lines[2], "b,images/b.pgm,0,0,,unassigned,");
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Manifest::new("", vec![record("a", 0, 0), record("a", 1, 1)]).is_err());
    }

    #[test]
    fn read_rejects_out_of_range_label_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, format!("{MANIFEST_HEADER}\nx7,p.pgm,3,0,,train,\n")).unwrap();
        match Manifest::read(&path) {
            Err(Error::LabelOutOfRange { id, label }) => assert_eq!((id.as_str(), label), ("x7", 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn read_write_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut r = record("a", 2, 1);
        r.volume = Some("v1".into());
        r.split = Split::Eval;
        let m = Manifest::new(dir.path(), vec![r, record("b", 0, 1)]).unwrap();
        m.write(&path).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
    }
}
