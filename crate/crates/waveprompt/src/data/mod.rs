//! Benchmark protocol types: manifests, waveform length normalization,
//! and the synthetic corpus generator.

mod synth;
mod wav;

pub use synth::{make_benchmark, notch_band, synth_generate, BenchmarkLayout, SyntheticSpec};
pub use wav::{read_wav, write_wav};

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AudioType {
    Speech,
    Sound,
    Singing,
    Music,
}

impl AudioType {
    pub const ALL: [AudioType; 4] =
        [AudioType::Speech, AudioType::Sound, AudioType::Singing, AudioType::Music];

    pub fn as_str(self) -> &'static str {
        match self {
            AudioType::Speech => "speech",
            AudioType::Sound => "sound",
            AudioType::Singing => "singing",
            AudioType::Music => "music",
        }
    }
}

impl fmt::Display for AudioType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AudioType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speech" => Ok(AudioType::Speech),
            "sound" => Ok(AudioType::Sound),
            "singing" => Ok(AudioType::Singing),
            "music" => Ok(AudioType::Music),
            other => Err(Error::Manifest(format!("unknown audio type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Logit index: real scores live at 0, fake at 1.
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(Error::Manifest(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
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
            "dev" => Ok(Split::Dev),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

/// One benchmark clip: identity, location, type, label, split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clip_id: String,
    /// Path relative to the manifest file's directory.
    pub path: String,
    pub audio_type: AudioType,
    pub label: Label,
    pub split: Split,
}

const MANIFEST_HEADER: &str = "clip_id\tpath\taudio_type\tlabel\tsplit";

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::with_capacity(entries.len() * 64);
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.clip_id, e.path, e.audio_type, e.label, e.split
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == MANIFEST_HEADER => {}
        Some(h) => {
            return Err(Error::Manifest(format!(
                "bad manifest header {h:?}, expected {MANIFEST_HEADER:?}"
            )))
        }
        None => return Err(Error::Manifest("empty manifest".into())),
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Manifest(format!(
                "line {}: expected 5 tab-separated fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let entry = ManifestEntry {
            clip_id: fields[0].to_string(),
            path: fields[1].to_string(),
            audio_type: fields[2].parse()?,
            label: fields[3].parse()?,
            split: fields[4].parse()?,
        };
        if !seen.insert(entry.clip_id.clone()) {
            return Err(Error::Manifest(format!("duplicate clip_id {:?}", entry.clip_id)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Normalize a waveform to exactly `l` samples: chop long input, repeat-tile
/// short input.
pub fn pad_or_chop(x: &[f64], l: usize) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Contract("pad_or_chop of an empty waveform".into()));
    }
    if x.len() >= l {
        return Ok(x[..l].to_vec());
    }
    let mut out = Vec::with_capacity(l);
    while out.len() < l {
        let take = (l - out.len()).min(x.len());
        out.extend_from_slice(&x[..take]);
    }
    Ok(out)
}

/// Resolve a manifest-relative clip path against the manifest location and
/// load it at the configured clip length.
pub fn load_clip(manifest_dir: &Path, entry: &ManifestEntry, clip_len: usize) -> Result<Vec<f64>> {
    let path = manifest_dir.join(&entry.path);
    let (samples, _sr) = read_wav(&path)?;
    pad_or_chop(&samples, clip_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_or_chop_identity() {
        let x: Vec<f64> = (0..64).map(f64::from).collect();
        assert_eq!(pad_or_chop(&x, 64).unwrap(), x);
    }

    #[test]
    fn pad_or_chop_takes_prefix() {
        let x: Vec<f64> = (0..200).map(f64::from).collect();
        let y = pad_or_chop(&x, 64).unwrap();
        assert_eq!(y, &x[..64]);
    }

    #[test]
    fn pad_or_chop_repeat_tiles() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = pad_or_chop(&x, 10).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn pad_or_chop_rejects_empty() {
        assert!(matches!(pad_or_chop(&[], 4), Err(Error::Contract(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        let entries = vec![
            ManifestEntry {
                clip_id: "speech_train_real_0000".into(),
                path: "../audio/speech_train_real_0000.wav".into(),
                audio_type: AudioType::Speech,
                label: Label::Real,
                split: Split::Train,
            },
            ManifestEntry {
                clip_id: "music_eval_fake_0001".into(),
                path: "../audio/music_eval_fake_0001.wav".into(),
                audio_type: AudioType::Music,
                label: Label::Fake,
                split: Split::Eval,
            },
        ];
        write_manifest(&path, &entries).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), entries);
    }

    #[test]
    fn manifest_rejects_duplicate_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        std::fs::write(
            &path,
            "clip_id\tpath\taudio_type\tlabel\tsplit\na\tx.wav\tspeech\treal\ttrain\na\ty.wav\tspeech\tfake\ttrain\n",
        )
        .unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Manifest(_))));
    }

    #[test]
    fn manifest_rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        std::fs::write(&path, "id\tpath\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Manifest(_))));
    }
}
