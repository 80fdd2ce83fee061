//! Corpus loading, validation, patching, and serialization.
//!
//! On disk a corpus split is a directory of three parallel line-aligned
//! files: `seq.in` (space-separated tokens), `seq.out` (space-separated IOB
//! tags), and `label` (one intent per line). All files are UTF-8 with LF
//! line endings. This is the format the public SNIPS/ATIS distributions
//! ship in.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing corpus file: {0}")]
    MissingFile(PathBuf),
    #[error("line counts differ: {tokens} token lines, {tags} tag lines, {intents} intent lines in {dir}")]
    LineCountMismatch {
        dir: PathBuf,
        tokens: usize,
        tags: usize,
        intents: usize,
    },
    #[error("line {line}: {tokens} tokens but {tags} slot tags")]
    TokenTagMismatch {
        line: usize,
        tokens: usize,
        tags: usize,
    },
    #[error("line {line}: malformed slot tag `{tag}` (expected O, B-<label>, or I-<label>)")]
    MalformedTag { line: usize, tag: String },
    #[error("line {line}: empty utterance")]
    EmptyUtterance { line: usize },
    #[error("line {line}: empty intent label")]
    EmptyIntent { line: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("refusing to write empty split `{0}`")]
    EmptySplit(String),
    #[error("patch entry {index}: corrected slot tags have length {tags} but utterance has {tokens} tokens")]
    PatchLengthMismatch {
        index: usize,
        tokens: usize,
        tags: usize,
    },
    #[error("patch application failed: {} unmatched key(s), {} ambiguous key(s)\n{details}", unmatched.len(), ambiguous.len())]
    PatchKeysFailed {
        unmatched: Vec<String>,
        ambiguous: Vec<String>,
        details: String,
    },
    #[error("patch line {line}: {source}")]
    PatchParse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Whether tokens are lowercased at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Casing {
    Cased,
    #[default]
    Uncased,
}

/// One utterance with token-aligned IOB slot tags and an intent label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledUtterance {
    pub tokens: Vec<String>,
    pub slot_tags: Vec<String>,
    pub intent: String,
}

fn valid_tag(tag: &str) -> bool {
    tag == "O"
        || tag
            .strip_prefix("B-")
            .or_else(|| tag.strip_prefix("I-"))
            .is_some_and(|label| !label.is_empty())
}

impl LabeledUtterance {
    pub fn validate(&self, line: usize) -> Result<(), CorpusError> {
        if self.tokens.is_empty() {
            return Err(CorpusError::EmptyUtterance { line });
        }
        if self.intent.is_empty() {
            return Err(CorpusError::EmptyIntent { line });
        }
        if self.tokens.len() != self.slot_tags.len() {
            return Err(CorpusError::TokenTagMismatch {
                line,
                tokens: self.tokens.len(),
                tags: self.slot_tags.len(),
            });
        }
        for tag in &self.slot_tags {
            if !valid_tag(tag) {
                return Err(CorpusError::MalformedTag {
                    line,
                    tag: tag.clone(),
                });
            }
        }
        Ok(())
    }

    /// The exact-match key used by dataset patches.
    pub fn token_key(&self) -> String {
        self.tokens.join(" ")
    }
}

/// An ordered, validated set of utterances for one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub split: String,
    pub casing: Casing,
    pub utterances: Vec<LabeledUtterance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

/// Loads `dir/<split>/{seq.in,seq.out,label}`. In uncased mode tokens are
/// lowercased here, once, so every downstream stage sees one casing; slot
/// and intent labels keep their case either way.
pub fn load_corpus(dir: &Path, split: &str, casing: Casing) -> Result<Corpus, CorpusError> {
    let split_dir = dir.join(split);
    let read = |name: &str| -> Result<Vec<String>, CorpusError> {
        let path = split_dir.join(name);
        if !path.is_file() {
            return Err(CorpusError::MissingFile(path));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(text.lines().map(str::to_string).collect())
    };

    let token_lines = read("seq.in")?;
    let tag_lines = read("seq.out")?;
    let intent_lines = read("label")?;

    if token_lines.len() != tag_lines.len() || token_lines.len() != intent_lines.len() {
        return Err(CorpusError::LineCountMismatch {
            dir: split_dir,
            tokens: token_lines.len(),
            tags: tag_lines.len(),
            intents: intent_lines.len(),
        });
    }

    let mut utterances = Vec::with_capacity(token_lines.len());
    for (i, ((toks, tags), intent)) in token_lines
        .iter()
        .zip(&tag_lines)
        .zip(&intent_lines)
        .enumerate()
    {
        let line = i + 1;
        let tokens: Vec<String> = toks
            .split_whitespace()
            .map(|t| match casing {
                Casing::Uncased => t.to_lowercase(),
                Casing::Cased => t.to_string(),
            })
            .collect();
        let slot_tags: Vec<String> = tags.split_whitespace().map(str::to_string).collect();
        let utt = LabeledUtterance {
            tokens,
            slot_tags,
            intent: intent.trim().to_string(),
        };
        utt.validate(line)?;
        utterances.push(utt);
    }

    Ok(Corpus {
        split: split.to_string(),
        casing,
        utterances,
    })
}

/// Writes `dir/<split>/{seq.in,seq.out,label}`. Refuses to write an empty
/// split. `load_corpus(save_corpus(c))` round-trips exactly.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<(), CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptySplit(corpus.split.clone()));
    }
    let split_dir = dir.join(&corpus.split);
    fs::create_dir_all(&split_dir).map_err(io_err(&split_dir))?;

    let write = |name: &str, lines: Vec<String>| -> Result<(), CorpusError> {
        let path = split_dir.join(name);
        let mut file = fs::File::create(&path).map_err(io_err(&path))?;
        for line in lines {
            writeln!(file, "{line}").map_err(io_err(&path))?;
        }
        Ok(())
    };

    write(
        "seq.in",
        corpus.utterances.iter().map(|u| u.tokens.join(" ")).collect(),
    )?;
    write(
        "seq.out",
        corpus
            .utterances
            .iter()
            .map(|u| u.slot_tags.join(" "))
            .collect(),
    )?;
    write(
        "label",
        corpus.utterances.iter().map(|u| u.intent.clone()).collect(),
    )?;
    Ok(())
}

/// Intent and slot label vocabularies with reserved UNK entries.
///
/// Ordering is first-occurrence over the source corpus, so the same corpus
/// always produces the same index assignment. UNK sits at the last index of
/// each vocabulary; labels unseen at build time map to it, and a UNK
/// prediction never counts as correct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    intents: Vec<String>,
    slots: Vec<String>,
    #[serde(skip)]
    intent_index: HashMap<String, usize>,
    #[serde(skip)]
    slot_index: HashMap<String, usize>,
}

pub const UNK_LABEL: &str = "<unk>";

impl LabelVocabulary {
    fn rebuild_maps(&mut self) {
        self.intent_index = self
            .intents
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        self.slot_index = self
            .slots
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
    }

    pub fn from_labels(intents: Vec<String>, slots: Vec<String>) -> Self {
        let mut vocab = LabelVocabulary {
            intents,
            slots,
            intent_index: HashMap::new(),
            slot_index: HashMap::new(),
        };
        vocab.rebuild_maps();
        vocab
    }

    pub fn intents(&self) -> &[String] {
        &self.intents
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn num_intents(&self) -> usize {
        self.intents.len()
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn intent_unk(&self) -> usize {
        self.intents.len() - 1
    }

    pub fn slot_unk(&self) -> usize {
        self.slots.len() - 1
    }

    /// Index of an intent label; unseen labels map to UNK.
    pub fn intent_index(&self, label: &str) -> usize {
        self.intent_index
            .get(label)
            .copied()
            .unwrap_or_else(|| self.intent_unk())
    }

    /// Index of a slot tag; unseen tags map to UNK.
    pub fn slot_index(&self, tag: &str) -> usize {
        self.slot_index
            .get(tag)
            .copied()
            .unwrap_or_else(|| self.slot_unk())
    }

    pub fn intent_label(&self, index: usize) -> &str {
        &self.intents[index]
    }

    pub fn slot_label(&self, index: usize) -> &str {
        &self.slots[index]
    }
}

/// Builds vocabularies from a corpus in first-occurrence order.
/// `O` is always present in the slot vocabulary.
pub fn build_vocabularies(corpus: &Corpus) -> Result<LabelVocabulary, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut intents: Vec<String> = Vec::new();
    let mut slots: Vec<String> = vec!["O".to_string()];
    for utt in &corpus.utterances {
        if !intents.contains(&utt.intent) {
            intents.push(utt.intent.clone());
        }
        for tag in &utt.slot_tags {
            if !slots.contains(tag) {
                slots.push(tag.clone());
            }
        }
    }
    intents.push(UNK_LABEL.to_string());
    slots.push(UNK_LABEL.to_string());
    Ok(LabelVocabulary::from_labels(intents, slots))
}

/// One correction record. `match_tokens` is the exact original token
/// sequence; the optional fields are the replacements to apply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchEntry {
    pub match_tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_tags: Option<Vec<String>>,
}

/// A set of corrections keyed on exact original token sequences. Keying on
/// tokens rather than line numbers lets the patch survive re-shuffled
/// copies of the data; a key matching more than one utterance is an error.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetPatch {
    pub entries: Vec<PatchEntry>,
}

impl DatasetPatch {
    /// Parses line-delimited JSON records.
    pub fn from_jsonl(text: &str) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: PatchEntry = serde_json::from_str(line)
                .map_err(|source| CorpusError::PatchParse {
                    line: i + 1,
                    source,
                })?;
            entries.push(entry);
        }
        Ok(DatasetPatch { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_jsonl(&text)
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("patch entry serializes"))
            .map(|s| s + "\n")
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Counts of utterances changed per field by a patch application.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PatchSummary {
    pub changed_tokens: usize,
    pub changed_intents: usize,
    pub changed_slots: usize,
    pub total_changed: usize,
}

/// Applies a patch, returning the corrected corpus and change counts. The
/// input corpus is untouched. Every key must match exactly one utterance;
/// all unmatched and ambiguous keys are collected before failing.
pub fn apply_patch(
    corpus: &Corpus,
    patch: &DatasetPatch,
) -> Result<(Corpus, PatchSummary), CorpusError> {
    let mut key_positions: HashMap<&str, Vec<usize>> = HashMap::new();
    let keys: Vec<String> = corpus.utterances.iter().map(|u| u.token_key()).collect();
    for (i, key) in keys.iter().enumerate() {
        key_positions.entry(key.as_str()).or_default().push(i);
    }

    let mut unmatched = Vec::new();
    let mut ambiguous = Vec::new();
    let mut targets = Vec::with_capacity(patch.entries.len());
    for entry in &patch.entries {
        let key = entry.match_tokens.join(" ");
        match key_positions.get(key.as_str()).map(Vec::as_slice) {
            None | Some([]) => unmatched.push(key),
            Some([index]) => targets.push(*index),
            Some(_) => ambiguous.push(key),
        }
    }
    if !unmatched.is_empty() || !ambiguous.is_empty() {
        let mut details = String::new();
        for key in &unmatched {
            details.push_str(&format!("  unmatched: {key}\n"));
        }
        for key in &ambiguous {
            details.push_str(&format!("  ambiguous: {key}\n"));
        }
        return Err(CorpusError::PatchKeysFailed {
            unmatched,
            ambiguous,
            details,
        });
    }

    let mut patched = corpus.clone();
    let mut summary = PatchSummary::default();
    for (entry_index, (entry, &target)) in patch.entries.iter().zip(&targets).enumerate() {
        let utt = &mut patched.utterances[target];
        let mut changed = false;
        if let Some(tokens) = &entry.tokens {
            if *tokens != utt.tokens {
                utt.tokens = tokens.clone();
                summary.changed_tokens += 1;
                changed = true;
            }
        }
        if let Some(intent) = &entry.intent {
            if *intent != utt.intent {
                utt.intent = intent.clone();
                summary.changed_intents += 1;
                changed = true;
            }
        }
        if let Some(slot_tags) = &entry.slot_tags {
            if slot_tags.len() != utt.tokens.len() {
                return Err(CorpusError::PatchLengthMismatch {
                    index: entry_index,
                    tokens: utt.tokens.len(),
                    tags: slot_tags.len(),
                });
            }
            if *slot_tags != utt.slot_tags {
                utt.slot_tags = slot_tags.clone();
                summary.changed_slots += 1;
                changed = true;
            }
        }
        if changed {
            summary.total_changed += 1;
        }
        utt.validate(target + 1)?;
    }

    Ok((patched, summary))
}
