//! Subword tokenization with word-level alignment.
//!
//! The tokenizer is an injected interface; any subword scheme works as long
//! as every word maps to one or more pieces. The built-in implementation is
//! a greedy longest-match wordpiece tokenizer whose vocabulary is built
//! from the training corpus (whole words plus single-character fallback
//! pieces, so unseen words still decompose).
//!
//! [`tokenize_and_align`] produces the flags the rest of the stack depends
//! on: which subword starts each utterance word (these carry slot
//! supervision), where the separator sits, and which span of subwords
//! holds the appended intent label.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentedInput;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const CONTINUATION_PREFIX: &str = "##";

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error(
        "tokenized length {length} exceeds max_len {max_len} for utterance `{utterance}`"
    )]
    Overflow {
        utterance: String,
        length: usize,
        max_len: usize,
    },
    #[error("cannot tokenize an empty utterance")]
    EmptyUtterance,
}

/// Vocabulary lookup + greedy wordpiece encoding.
pub trait SubwordTokenizer {
    fn vocab_size(&self) -> usize;
    fn id_to_piece(&self, id: u32) -> &str;
    fn piece_to_id(&self, piece: &str) -> Option<u32>;
    /// Splits one word into subword ids; always returns at least one id
    /// (falling back to `[UNK]`).
    fn encode_word(&self, word: &str) -> Vec<u32>;
    fn pad_id(&self) -> u32;
    fn unk_id(&self) -> u32;
    fn cls_id(&self) -> u32;
    fn sep_id(&self) -> u32;
}

/// Greedy longest-match-first wordpiece tokenizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WordPieceTokenizer {
    pieces: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    max_word_chars: usize,
}

impl WordPieceTokenizer {
    /// Builds a tokenizer from an ordered piece list. The list must start
    /// with the four special tokens.
    pub fn from_pieces(pieces: Vec<String>) -> Self {
        assert_eq!(pieces[0], PAD_TOKEN);
        assert_eq!(pieces[1], UNK_TOKEN);
        assert_eq!(pieces[2], CLS_TOKEN);
        assert_eq!(pieces[3], SEP_TOKEN);
        let index = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as u32))
            .collect();
        WordPieceTokenizer {
            pieces,
            index,
            max_word_chars: 100,
        }
    }

    /// Builds a vocabulary from training-surface words in first-occurrence
    /// order: whole words first, then per-character fallback pieces.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut pieces: Vec<String> = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut seen: HashMap<String, ()> = pieces.iter().cloned().map(|p| (p, ())).collect();
        let mut chars: Vec<char> = Vec::new();
        let mut push = |pieces: &mut Vec<String>, seen: &mut HashMap<String, ()>, p: String| {
            if !seen.contains_key(&p) {
                seen.insert(p.clone(), ());
                pieces.push(p);
            }
        };
        for word in words {
            push(&mut pieces, &mut seen, word.to_string());
            for c in word.chars() {
                if !chars.contains(&c) {
                    chars.push(c);
                }
            }
        }
        for c in chars {
            push(&mut pieces, &mut seen, c.to_string());
            push(&mut pieces, &mut seen, format!("{CONTINUATION_PREFIX}{c}"));
        }
        Self::from_pieces(pieces)
    }

    /// Restores the piece index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as u32))
            .collect();
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }
}

impl SubwordTokenizer for WordPieceTokenizer {
    fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    fn id_to_piece(&self, id: u32) -> &str {
        &self.pieces[id as usize]
    }

    fn piece_to_id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    fn encode_word(&self, word: &str) -> Vec<u32> {
        let chars: Vec<char> = word.chars().collect();
        if chars.is_empty() || chars.len() > self.max_word_chars {
            return vec![self.unk_id()];
        }
        let mut ids = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                let fragment: String = chars[start..end].iter().collect();
                let candidate = if start == 0 {
                    fragment
                } else {
                    format!("{CONTINUATION_PREFIX}{fragment}")
                };
                if let Some(id) = self.piece_to_id(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    ids.push(id);
                    start = end;
                }
                None => return vec![self.unk_id()],
            }
        }
        ids
    }

    fn pad_id(&self) -> u32 {
        0
    }
    fn unk_id(&self) -> u32 {
        1
    }
    fn cls_id(&self) -> u32 {
        2
    }
    fn sep_id(&self) -> u32 {
        3
    }
}

/// Merges subword pieces back into words, stripping continuation markers.
pub fn pieces_to_words(pieces: &[&str]) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for piece in pieces {
        if let Some(rest) = piece.strip_prefix(CONTINUATION_PREFIX) {
            match words.last_mut() {
                Some(last) => last.push_str(rest),
                None => words.push(rest.to_string()),
            }
        } else {
            words.push(piece.to_string());
        }
    }
    words
}

/// What to tokenize: a plain utterance or an intent-augmented one.
#[derive(Debug, Clone)]
pub enum TokenizeInput<'a> {
    Plain(&'a [String]),
    Augmented(&'a AugmentedInput),
}

/// A tokenized sequence with word/subword alignment and the location of
/// the separator and intent chunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedEncoding {
    pub ids: Vec<u32>,
    /// True on the subword that starts each utterance word; these are the
    /// positions that carry slot supervision.
    pub first_subword: Vec<bool>,
    pub special: Vec<bool>,
    pub separator: Vec<bool>,
    pub intent_chunk: Vec<bool>,
    /// Utterance word index per subword; `None` for specials, the
    /// separator, and intent-chunk subwords.
    pub word_index: Vec<Option<usize>>,
    /// `[start, end)` over subword positions, strictly after the separator
    /// and before the trailing special token. `None` for plain inputs.
    pub intent_chunk_span: Option<(usize, usize)>,
}

impl AlignedEncoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_chunks(&self) -> usize {
        self.intent_chunk_span.map_or(0, |(s, e)| e - s)
    }

    /// Subword positions carrying slot supervision, in word order.
    pub fn supervised_positions(&self) -> Vec<usize> {
        self.first_subword
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }

    pub fn word_count(&self) -> usize {
        self.first_subword.iter().filter(|&&f| f).count()
    }
}

/// Tokenizes to subwords and records the alignment. Errors instead of
/// truncating when the sequence would exceed `max_len`: silent truncation
/// could delete the intent chunk.
pub fn tokenize_and_align(
    input: TokenizeInput,
    tokenizer: &dyn SubwordTokenizer,
    max_len: usize,
) -> Result<AlignedEncoding, TokenizeError> {
    let (utterance, augmented) = match input {
        TokenizeInput::Plain(tokens) => (tokens, None),
        TokenizeInput::Augmented(aug) => (aug.utterance_tokens.as_slice(), Some(aug)),
    };
    if utterance.is_empty() {
        return Err(TokenizeError::EmptyUtterance);
    }

    let mut enc = AlignedEncoding {
        ids: Vec::new(),
        first_subword: Vec::new(),
        special: Vec::new(),
        separator: Vec::new(),
        intent_chunk: Vec::new(),
        word_index: Vec::new(),
        intent_chunk_span: None,
    };

    let mut push = |enc: &mut AlignedEncoding,
                    id: u32,
                    first: bool,
                    special: bool,
                    separator: bool,
                    chunk: bool,
                    word: Option<usize>| {
        enc.ids.push(id);
        enc.first_subword.push(first);
        enc.special.push(special);
        enc.separator.push(separator);
        enc.intent_chunk.push(chunk);
        enc.word_index.push(word);
    };

    push(&mut enc, tokenizer.cls_id(), false, true, false, false, None);

    for (w, word) in utterance.iter().enumerate() {
        for (k, id) in tokenizer.encode_word(word).into_iter().enumerate() {
            push(&mut enc, id, k == 0, false, false, false, Some(w));
        }
    }

    if let Some(aug) = augmented {
        // The separator anchor is the first subword after the last
        // utterance subword, even if the literal splits into several.
        for (k, id) in tokenizer.encode_word(&aug.separator).into_iter().enumerate() {
            push(&mut enc, id, false, false, k == 0, false, None);
        }
        let chunk_start = enc.ids.len();
        for word in &aug.intent.words {
            for id in tokenizer.encode_word(word) {
                push(&mut enc, id, false, false, false, true, None);
            }
        }
        enc.intent_chunk_span = Some((chunk_start, enc.ids.len()));
    }

    push(&mut enc, tokenizer.sep_id(), false, true, false, false, None);

    if enc.ids.len() > max_len {
        return Err(TokenizeError::Overflow {
            utterance: utterance.join(" "),
            length: enc.ids.len(),
            max_len,
        });
    }
    Ok(enc)
}
