//! Tab-separated corpus manifests.
//!
//! ```text
//! # utterance_id  speaker_id  audio_path  severity  age
//! F02_B1_UW1      F02         F02/a.wav   low       -
//! ```
//!
//! `-` marks a missing label. Relative audio paths resolve against the
//! manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgeLabel {
    NonAged,
    Aged,
}

impl FromStr for AgeLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "aged" => Ok(AgeLabel::Aged),
            "nonaged" => Ok(AgeLabel::NonAged),
            other => Err(format!("age label must be aged, nonaged or -, got {other:?}")),
        }
    }
}

impl fmt::Display for AgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgeLabel::Aged => "aged",
            AgeLabel::NonAged => "nonaged",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRecord {
    pub severity: Option<String>,
    pub age: Option<AgeLabel>,
    /// Position of the speaker in the sorted speaker list.
    pub speaker_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub speaker_id: String,
    pub audio_path: PathBuf,
    pub labels: LabelRecord,
    /// 1-based line number in the source file.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Manifest(vec![format!("cannot read manifest {}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses and validates manifest text, collecting every bad line.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut problems = Vec::new();
        let mut entries = Vec::new();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
            if fields.len() != 5 {
                problems.push(format!(
                    "line {line}: expected 5 tab-separated fields, got {}",
                    fields.len()
                ));
                continue;
            }
            let (utt, spk, audio, sev, age) = (fields[0], fields[1], fields[2], fields[3], fields[4]);
            if utt.is_empty() || spk.is_empty() || audio.is_empty() {
                problems.push(format!("line {line}: empty utterance, speaker or path field"));
                continue;
            }
            if let Some(prev) = seen.insert(utt.to_string(), line) {
                problems.push(format!("line {line}: utterance id {utt:?} already used on line {prev}"));
                continue;
            }
            let age = match age {
                "-" => None,
                s => match s.parse::<AgeLabel>() {
                    Ok(a) => Some(a),
                    Err(e) => {
                        problems.push(format!("line {line}: {e}"));
                        continue;
                    }
                },
            };
            let severity = (sev != "-").then(|| sev.to_string());
            let path = Path::new(audio);
            let audio_path = if path.is_absolute() {
                path.to_path_buf()
            } else {
                base_dir.join(path)
            };
            entries.push(ManifestEntry {
                utterance_id: utt.to_string(),
                speaker_id: spk.to_string(),
                audio_path,
                labels: LabelRecord {
                    severity,
                    age,
                    speaker_index: 0,
                },
                line,
            });
        }

        // Label columns are all-or-nothing across the corpus.
        for (name, has) in [
            (
                "severity",
                entries.iter().map(|e| e.labels.severity.is_some()).collect::<Vec<_>>(),
            ),
            ("age", entries.iter().map(|e| e.labels.age.is_some()).collect()),
        ] {
            let labelled = has.iter().filter(|&&h| h).count();
            if labelled > 0 && labelled < has.len() {
                for (e, h) in entries.iter().zip(&has) {
                    if !h {
                        problems.push(format!(
                            "line {}: missing {name} label while other entries carry one",
                            e.line
                        ));
                    }
                }
            }
        }

        if entries.is_empty() && problems.is_empty() {
            problems.push("manifest has no entries".to_string());
        }
        if !problems.is_empty() {
            problems.sort_by_key(|p| line_of(p));
            return Err(Error::Manifest(problems));
        }

        let speakers: BTreeSet<String> = entries.iter().map(|e| e.speaker_id.clone()).collect();
        let index: BTreeMap<&String, usize> = speakers.iter().zip(0..).collect();
        for e in &mut entries {
            e.labels.speaker_index = index[&e.speaker_id];
        }
        Ok(Self { entries })
    }

    /// Reports every entry whose audio file does not exist.
    pub fn check_audio_paths(&self) -> Result<()> {
        let missing: Vec<String> = self
            .entries
            .iter()
            .filter(|e| !e.audio_path.is_file())
            .map(|e| format!("line {}: audio file {} not found", e.line, e.audio_path.display()))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Manifest(missing))
        }
    }

    pub fn speakers(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.speaker_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn severity_classes(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter_map(|e| e.labels.severity.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn has_severity(&self) -> bool {
        self.entries.iter().any(|e| e.labels.severity.is_some())
    }

    pub fn has_age(&self) -> bool {
        self.entries.iter().any(|e| e.labels.age.is_some())
    }

    pub fn speaker_of(&self, utterance_id: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.utterance_id == utterance_id)
            .map(|e| e.speaker_id.as_str())
    }
}

fn line_of(problem: &str) -> usize {
    problem
        .strip_prefix("line ")
        .and_then(|s| s.split(':').next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(0)
}
