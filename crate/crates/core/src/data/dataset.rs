//! Clip and split representation plus the on-disk dataset layout:
//!
//! ```text
//! root/manifest.csv                       clip_id,split,section,infiltration
//! root/<split>/<clip_id>/labels.csv       frame_index,state
//! root/<split>/<clip_id>/frame_%06d.png
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::preprocess::resize_bilinear;
use super::state::{first_grammar_violation, NeedleState, Section};
use crate::error::{DatasetError, Error, Result};

pub const MANIFEST: &str = "manifest.csv";
pub const LABELS: &str = "labels.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Validation, SplitKind::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for SplitKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "train" | "training" => Ok(SplitKind::Train),
            "validation" | "val" => Ok(SplitKind::Validation),
            "test" => Ok(SplitKind::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One insertion experiment: frames with one label each.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub id: String,
    pub section: Section,
    pub infiltration: bool,
    pub frames: Vec<RgbImage>,
    pub labels: Vec<NeedleState>,
}

impl VideoClip {
    /// Validates the label grammar and the infiltration flag.
    pub fn new(
        id: impl Into<String>,
        section: Section,
        infiltration: bool,
        frames: Vec<RgbImage>,
        labels: Vec<NeedleState>,
    ) -> Result<Self> {
        let id = id.into();
        if frames.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "clip {id}: {} frames but {} labels",
                frames.len(),
                labels.len()
            )));
        }
        validate_labels(&id, infiltration, &labels)?;
        Ok(Self {
            id,
            section,
            infiltration,
            frames,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NeedleState::COUNT] {
        let mut counts = [0; NeedleState::COUNT];
        for l in &self.labels {
            counts[l.index()] += 1;
        }
        counts
    }

    /// Copy with every frame resized to `side × side`.
    pub fn resized(&self, side: u32) -> VideoClip {
        VideoClip {
            frames: self.frames.iter().map(|f| resize_bilinear(f, side, side)).collect(),
            ..self.clone()
        }
    }
}

pub(crate) fn validate_labels(clip: &str, infiltration: bool, labels: &[NeedleState]) -> Result<(), DatasetError> {
    if let Some((frame_index, from, to)) = first_grammar_violation(labels) {
        return Err(DatasetError::GrammarViolation {
            clip: clip.to_string(),
            frame_index,
            from,
            to,
        });
    }
    let has_infil = labels.contains(&NeedleState::Infil);
    if has_infil != infiltration {
        return Err(DatasetError::InfiltrationFlag {
            clip: clip.to_string(),
            flag: infiltration,
            state: if has_infil { "contain" } else { "lack" },
        });
    }
    Ok(())
}

/// Training, validation and test clips. Clips never appear in two splits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataSplit {
    pub train: Vec<VideoClip>,
    pub validation: Vec<VideoClip>,
    pub test: Vec<VideoClip>,
}

impl DataSplit {
    pub fn get(&self, kind: SplitKind) -> &[VideoClip] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, kind: SplitKind) -> &mut Vec<VideoClip> {
        match kind {
            SplitKind::Train => &mut self.train,
            SplitKind::Validation => &mut self.validation,
            SplitKind::Test => &mut self.test,
        }
    }

    pub fn class_counts(&self, kind: SplitKind) -> [usize; NeedleState::COUNT] {
        let mut total = [0; NeedleState::COUNT];
        for clip in self.get(kind) {
            for (t, c) in total.iter_mut().zip(clip.class_counts()) {
                *t += c;
            }
        }
        total
    }

    /// Rejects a clip id present in more than one split (or twice in one).
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for kind in SplitKind::ALL {
            for clip in self.get(kind) {
                if !seen.insert(clip.id.as_str()) {
                    return Err(DatasetError::DuplicateClip(clip.id.clone()).into());
                }
            }
        }
        Ok(())
    }

    /// Copy with every frame resized to `side × side`.
    pub fn resized(&self, side: u32) -> DataSplit {
        let map = |clips: &[VideoClip]| clips.iter().map(|c| c.resized(side)).collect();
        DataSplit {
            train: map(&self.train),
            validation: map(&self.validation),
            test: map(&self.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub split: SplitKind,
    pub section: String,
    pub infiltration: String,
}

impl ManifestEntry {
    pub fn new(clip_id: &str, split: SplitKind, section: Section, infiltration: bool) -> Self {
        Self {
            clip_id: clip_id.to_string(),
            split,
            section: section.code().to_string(),
            infiltration: infiltration.to_string(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    frame_index: usize,
    state: String,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

pub fn clip_dir(root: &Path, split: SplitKind, clip_id: &str) -> PathBuf {
    root.join(split.dir_name()).join(clip_id)
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

/// Parsed manifest: `(entry, section, infiltration)` rows in file order.
pub fn read_manifest(root: &Path) -> Result<Vec<(ManifestEntry, Section, bool)>> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| DatasetError::MalformedManifest {
        line: 1,
        reason: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["clip_id", "split", "section", "infiltration"] {
        return Err(DatasetError::MalformedManifest {
            line: 1,
            reason: format!("unexpected header {headers:?}"),
        }
        .into());
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize::<ManifestEntry>().enumerate() {
        let line = i + 2;
        let entry = record.map_err(|e| DatasetError::MalformedManifest {
            line,
            reason: e.to_string(),
        })?;
        let section: Section = entry
            .section
            .parse()
            .map_err(|reason| DatasetError::MalformedManifest { line, reason })?;
        let infiltration = parse_flag(&entry.infiltration).ok_or_else(|| DatasetError::MalformedManifest {
            line,
            reason: format!("bad infiltration flag {:?}", entry.infiltration),
        })?;
        if entry.clip_id.is_empty() || entry.clip_id.contains(['/', '\\']) {
            return Err(DatasetError::MalformedManifest {
                line,
                reason: format!("bad clip id {:?}", entry.clip_id),
            }
            .into());
        }
        if !seen.insert(entry.clip_id.clone()) {
            return Err(DatasetError::DuplicateClip(entry.clip_id).into());
        }
        rows.push((entry, section, infiltration));
    }
    Ok(rows)
}

pub fn write_manifest(root: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let path = root.join(MANIFEST);
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&path)
        .map_err(|e| csv_io(&path, e))?;
    for e in entries {
        writer.serialize(e).map_err(|e| csv_io(&path, e))?;
    }
    writer.flush().map_err(|e| Error::io(&path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

pub fn read_labels(dir: &Path, clip: &str) -> Result<Vec<NeedleState>> {
    let path = dir.join(LABELS);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut labels = Vec::new();
    for (i, record) in reader.deserialize::<LabelRow>().enumerate() {
        let line = i + 2;
        let bad = |reason: String| DatasetError::MalformedLabels {
            clip: clip.to_string(),
            line,
            reason,
        };
        let row = record.map_err(|e| bad(e.to_string()))?;
        if row.frame_index != i {
            return Err(bad(format!("expected frame index {i}, found {}", row.frame_index)).into());
        }
        labels.push(row.state.parse().map_err(|e: super::state::ParseStateError| bad(e.to_string()))?);
    }
    Ok(labels)
}

/// Writes one clip's frames and label file under its split directory.
pub fn write_clip(root: &Path, split: SplitKind, clip: &VideoClip) -> Result<()> {
    let dir = clip_dir(root, split, &clip.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(LABELS);
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&path)
        .map_err(|e| csv_io(&path, e))?;
    for (i, label) in clip.labels.iter().enumerate() {
        writer
            .serialize(LabelRow {
                frame_index: i,
                state: label.name().to_string(),
            })
            .map_err(|e| csv_io(&path, e))?;
    }
    writer.flush().map_err(|e| Error::io(&path, e))?;
    for (i, frame) in clip.frames.iter().enumerate() {
        let path = dir.join(frame_file_name(i));
        frame
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| Error::io(&path, std::io::Error::other(e.to_string())))?;
    }
    Ok(())
}

pub fn read_frame(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| DatasetError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Resize frames to `side × side` as they are decoded.
    pub resize_to: Option<u32>,
}

/// Loads one clip directory.
pub fn load_clip(
    root: &Path,
    split: SplitKind,
    id: &str,
    section: Section,
    infiltration: bool,
    options: LoadOptions,
) -> Result<VideoClip> {
    let dir = clip_dir(root, split, id);
    let labels = read_labels(&dir, id)?;
    validate_labels(id, infiltration, &labels)?;
    let mut frames = Vec::with_capacity(labels.len());
    for index in 0..labels.len() {
        let path = dir.join(frame_file_name(index));
        if !path.is_file() {
            return Err(DatasetError::MissingFrame {
                clip: id.to_string(),
                index,
                path,
            }
            .into());
        }
        let frame = read_frame(&path)?;
        frames.push(match options.resize_to {
            Some(side) => resize_bilinear(&frame, side, side),
            None => frame,
        });
    }
    Ok(VideoClip {
        id: id.to_string(),
        section,
        infiltration,
        frames,
        labels,
    })
}

pub fn load_dataset(root: &Path) -> Result<DataSplit> {
    load_dataset_with(root, LoadOptions::default())
}

pub fn load_dataset_with(root: &Path, options: LoadOptions) -> Result<DataSplit> {
    let mut split = DataSplit::default();
    for (entry, section, infiltration) in read_manifest(root)? {
        let clip = load_clip(root, entry.split, &entry.clip_id, section, infiltration, options)?;
        split.get_mut(entry.split).push(clip);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use NeedleState::*;

    fn tiny_clip(id: &str, labels: Vec<NeedleState>, infiltration: bool) -> VideoClip {
        let frames = labels
            .iter()
            .map(|l| RgbImage::from_pixel(8, 6, Rgb([l.index() as u8 * 80, 10, 20])))
            .collect();
        VideoClip::new(id, Section::MC, infiltration, frames, labels).unwrap()
    }

    #[test]
    fn rejects_bad_grammar_in_memory() {
        let frames = vec![RgbImage::new(2, 2); 3];
        let err = VideoClip::new("x", Section::FL, true, frames, vec![NoNeedle, Infil, Fist]).unwrap_err();
        assert!(matches!(
            err,
            Error::Dataset(DatasetError::GrammarViolation { frame_index: 1, .. })
        ));
    }

    #[test]
    fn rejects_wrong_infiltration_flag() {
        let frames = vec![RgbImage::new(2, 2); 3];
        let err = VideoClip::new("x", Section::FL, true, frames, vec![NoNeedle, Fist, NoNeedle]).unwrap_err();
        assert!(matches!(err, Error::Dataset(DatasetError::InfiltrationFlag { .. })));
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = tiny_clip("MC_00", vec![NoNeedle, Fist, Infil, Fist, NoNeedle], true);
        let b = tiny_clip("MC_01", vec![NoNeedle, Fist, NoNeedle], false);
        write_clip(dir.path(), SplitKind::Train, &a).unwrap();
        write_clip(dir.path(), SplitKind::Test, &b).unwrap();
        write_manifest(
            dir.path(),
            &[
                ManifestEntry::new("MC_00", SplitKind::Train, Section::MC, true),
                ManifestEntry::new("MC_01", SplitKind::Test, Section::MC, false),
            ],
        )
        .unwrap();
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.starts_with("clip_id,split,section,infiltration\n"));
        assert!(!manifest.contains('\r'));

        let split = load_dataset(dir.path()).unwrap();
        assert_eq!(split.train, vec![a]);
        assert_eq!(split.test, vec![b]);
        assert!(split.validation.is_empty());
        split.check_disjoint().unwrap();

        let small = load_dataset_with(dir.path(), LoadOptions { resize_to: Some(4) }).unwrap();
        assert_eq!(small.train[0].frames[0].dimensions(), (4, 4));
    }

    #[test]
    fn duplicate_manifest_entry() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(MANIFEST),
            "clip_id,split,section,infiltration\nA,train,FL,true\nA,test,FL,true\n",
        )
        .unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Dataset(DatasetError::DuplicateClip(id)) if id == "A"));
    }

    #[test]
    fn malformed_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(MANIFEST),
            "clip_id,split,section,infiltration\nA,train,XX,true\n",
        )
        .unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Dataset(DatasetError::MalformedManifest { line: 2, .. })));
        fs::write(dir.path().join(MANIFEST), "id,split\nA,train\n").unwrap();
        assert!(matches!(
            load_dataset(dir.path()).unwrap_err(),
            Error::Dataset(DatasetError::MalformedManifest { line: 1, .. })
        ));
    }

    #[test]
    fn grammar_violation_on_disk_names_the_frame() {
        let dir = tempfile::tempdir().unwrap();
        let clip = tiny_clip("BL_00", vec![NoNeedle, NoNeedle, Fist, NoNeedle], false);
        write_clip(dir.path(), SplitKind::Validation, &clip).unwrap();
        let labels = clip_dir(dir.path(), SplitKind::Validation, "BL_00").join(LABELS);
        fs::write(&labels, "frame_index,state\n0,NoNeedle\n1,NoNeedle\n2,Infil\n3,Fist\n").unwrap();
        write_manifest(
            dir.path(),
            &[ManifestEntry::new("BL_00", SplitKind::Validation, Section::BL, true)],
        )
        .unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        match err {
            Error::Dataset(DatasetError::GrammarViolation { frame_index, from, to, .. }) => {
                assert_eq!((frame_index, from, to), (2, NoNeedle, Infil));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_frame_file() {
        let dir = tempfile::tempdir().unwrap();
        let clip = tiny_clip("FR_00", vec![NoNeedle, Fist, NoNeedle], false);
        write_clip(dir.path(), SplitKind::Train, &clip).unwrap();
        fs::remove_file(clip_dir(dir.path(), SplitKind::Train, "FR_00").join(frame_file_name(1))).unwrap();
        write_manifest(
            dir.path(),
            &[ManifestEntry::new("FR_00", SplitKind::Train, Section::FR, false)],
        )
        .unwrap();
        assert!(matches!(
            load_dataset(dir.path()).unwrap_err(),
            Error::Dataset(DatasetError::MissingFrame { index: 1, .. })
        ));
    }
}
