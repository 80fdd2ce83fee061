//! Construction of intent-augmented input sequences.
//!
//! The utterance is extended with a separator literal (`#` by default)
//! followed by a rendering of the intent label, so the encoder sees the
//! intent as part of its input. The label can be passed through raw or
//! split into its constituent words first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Casing;

pub const DEFAULT_SEPARATOR: &str = "#";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AugmentError {
    #[error("cannot render an empty intent label")]
    EmptyLabel,
}

/// How an intent label is turned into input words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntentRenderMode {
    /// The label as a single word.
    #[default]
    Raw,
    /// Split at lower-to-upper case boundaries, letter/digit boundaries,
    /// and non-alphanumeric separators (`_`, `.`, ...).
    CamelSplit,
}

/// An intent label rendered to surface words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentRendering {
    pub mode: IntentRenderMode,
    pub words: Vec<String>,
}

fn camel_split_word(chunk: &str) -> Vec<String> {
    let chars: Vec<char> = chunk.chars().collect();
    let mut words = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if i > 0 {
            let prev = chars[i - 1];
            let lower_to_upper = prev.is_lowercase() && c.is_uppercase();
            let digit_boundary = prev.is_alphabetic() && c.is_numeric()
                || prev.is_numeric() && c.is_alphabetic();
            if lower_to_upper || digit_boundary {
                words.push(std::mem::take(&mut current));
            }
        }
        current.push(c);
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Renders an intent label. In uncased mode the words are lowercased, in
/// cased mode they keep the label's casing.
pub fn render_intent(
    label: &str,
    mode: IntentRenderMode,
    casing: Casing,
) -> Result<IntentRendering, AugmentError> {
    if label.is_empty() {
        return Err(AugmentError::EmptyLabel);
    }
    let mut words: Vec<String> = match mode {
        IntentRenderMode::Raw => vec![label.to_string()],
        IntentRenderMode::CamelSplit => label
            .split(|c: char| !c.is_alphanumeric())
            .filter(|chunk| !chunk.is_empty())
            .flat_map(|chunk| camel_split_word(chunk))
            .collect(),
    };
    if words.is_empty() {
        // A label of pure separators has nothing to render.
        return Err(AugmentError::EmptyLabel);
    }
    if casing == Casing::Uncased {
        for word in &mut words {
            *word = word.to_lowercase();
        }
    }
    Ok(IntentRendering { mode, words })
}

/// The surface sequence `utterance ++ [separator] ++ rendered intent`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedInput {
    pub utterance_tokens: Vec<String>,
    pub separator: String,
    pub intent: IntentRendering,
}

impl AugmentedInput {
    /// Position of the separator in the surface sequence.
    pub fn separator_position(&self) -> usize {
        self.utterance_tokens.len()
    }

    pub fn surface_len(&self) -> usize {
        self.utterance_tokens.len() + 1 + self.intent.words.len()
    }

    pub fn surface_words(&self) -> Vec<String> {
        let mut words = self.utterance_tokens.clone();
        words.push(self.separator.clone());
        words.extend(self.intent.words.iter().cloned());
        words
    }
}

/// Builds the augmented surface sequence. Pure; the utterance must be
/// non-empty (guaranteed by corpus validation upstream).
pub fn build_augmented_input(
    utterance_tokens: &[String],
    intent: IntentRendering,
    separator: &str,
) -> AugmentedInput {
    AugmentedInput {
        utterance_tokens: utterance_tokens.to_vec(),
        separator: separator.to_string(),
        intent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(rendering: &IntentRendering) -> Vec<&str> {
        rendering.words.iter().map(String::as_str).collect()
    }

    #[test]
    fn camel_split_breaks_at_case_boundaries() {
        let r = render_intent("SearchCreativeWork", IntentRenderMode::CamelSplit, Casing::Uncased)
            .unwrap();
        assert_eq!(words(&r), ["search", "creative", "work"]);
    }

    #[test]
    fn camel_split_of_long_label() {
        // Hand-derived from the boundary rule: Get|Current|Time|At|Location.
        let r = render_intent(
            "GetCurrentTimeAtLocation",
            IntentRenderMode::CamelSplit,
            Casing::Uncased,
        )
        .unwrap();
        assert_eq!(words(&r), ["get", "current", "time", "at", "location"]);
    }

    #[test]
    fn camel_split_without_boundary_is_one_word() {
        let r = render_intent("play", IntentRenderMode::CamelSplit, Casing::Uncased).unwrap();
        assert_eq!(words(&r), ["play"]);
    }

    #[test]
    fn camel_split_handles_underscore_labels() {
        let r = render_intent("atis_flight", IntentRenderMode::CamelSplit, Casing::Uncased).unwrap();
        assert_eq!(words(&r), ["atis", "flight"]);
        let r = render_intent(
            "atis_ground_service",
            IntentRenderMode::CamelSplit,
            Casing::Uncased,
        )
        .unwrap();
        assert_eq!(words(&r), ["atis", "ground", "service"]);
    }

    #[test]
    fn camel_split_handles_digit_boundaries() {
        let r = render_intent("Top40Play", IntentRenderMode::CamelSplit, Casing::Uncased).unwrap();
        assert_eq!(words(&r), ["top", "40", "play"]);
    }

    #[test]
    fn cased_mode_keeps_label_casing() {
        let r = render_intent("SearchCreativeWork", IntentRenderMode::CamelSplit, Casing::Cased)
            .unwrap();
        assert_eq!(words(&r), ["Search", "Creative", "Work"]);
    }

    #[test]
    fn raw_mode_is_the_label_itself() {
        let r = render_intent("AddToPlaylist", IntentRenderMode::Raw, Casing::Uncased).unwrap();
        assert_eq!(words(&r), ["addtoplaylist"]);
        let r = render_intent("AddToPlaylist", IntentRenderMode::Raw, Casing::Cased).unwrap();
        assert_eq!(words(&r), ["AddToPlaylist"]);
    }

    #[test]
    fn empty_label_is_rejected() {
        assert_eq!(
            render_intent("", IntentRenderMode::Raw, Casing::Uncased),
            Err(AugmentError::EmptyLabel)
        );
        assert_eq!(
            render_intent("__", IntentRenderMode::CamelSplit, Casing::Uncased),
            Err(AugmentError::EmptyLabel)
        );
    }

    #[test]
    fn split_words_concatenate_back_to_the_label() {
        for label in ["SearchCreativeWork", "GetCurrentTimeAtLocation", "atis_flight"] {
            let r =
                render_intent(label, IntentRenderMode::CamelSplit, Casing::Uncased).unwrap();
            let concatenated: String = r.words.concat();
            let folded: String = label
                .chars()
                .filter(|c| c.is_alphanumeric())
                .collect::<String>()
                .to_lowercase();
            assert_eq!(concatenated, folded);
        }
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn augmented_surface_layout() {
        let utt = toks("what's the time in mumbai");
        let intent = render_intent(
            "GetCurrentTimeAtLocation",
            IntentRenderMode::CamelSplit,
            Casing::Uncased,
        )
        .unwrap();
        let aug = build_augmented_input(&utt, intent, DEFAULT_SEPARATOR);
        assert_eq!(aug.surface_len(), 5 + 1 + 5);
        assert_eq!(aug.separator_position(), 5);
        let surface = aug.surface_words();
        assert_eq!(surface.len(), 11);
        assert_eq!(surface[5], "#");
        assert_eq!(&surface[..5], utt.as_slice());
        assert_eq!(&surface[6..], ["get", "current", "time", "at", "location"]);
    }

    #[test]
    fn raw_rendering_appends_single_word() {
        let utt = toks("add this song");
        let intent = render_intent("AddToPlaylist", IntentRenderMode::Raw, Casing::Uncased).unwrap();
        let aug = build_augmented_input(&utt, intent, "#");
        assert_eq!(
            aug.surface_words(),
            toks("add this song # addtoplaylist")
        );
    }
}
