//! Span-level slot F1, intent accuracy, and sentence-level semantic frame
//! accuracy.
//!
//! Slot scores are micro-averaged over exactly matching `(label, start, end)`
//! spans, the conlleval convention used by the systems this toolkit is
//! compared against. Semantic frame accuracy is stricter: the intent and
//! every token's tag must match.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("gold and prediction lists have different lengths ({gold} vs {pred})")]
    ListLengthMismatch { gold: usize, pred: usize },
    #[error("sentence {index}: gold has {gold} tags but prediction has {pred}")]
    SentenceLengthMismatch {
        index: usize,
        gold: usize,
        pred: usize,
    },
}

/// A labeled token span, `start` inclusive and `end` exclusive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotSpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// Extracts maximal labeled spans from an IOB tag sequence.
///
/// Malformed continuations are repaired the way conlleval does: an `I-x`
/// that does not continue a span of label `x` opens a new span.
pub fn extract_spans(tags: &[String]) -> Vec<SlotSpan> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;

    for (i, tag) in tags.iter().enumerate() {
        let (opens_new, label) = match tag.split_once('-') {
            Some(("B", label)) => (true, Some(label)),
            Some(("I", label)) => (false, Some(label)),
            _ => (false, None),
        };
        match label {
            None => {
                if let Some((lab, start)) = open.take() {
                    spans.push(SlotSpan {
                        label: lab,
                        start,
                        end: i,
                    });
                }
            }
            Some(label) => {
                let continues = !opens_new
                    && matches!(&open, Some((lab, _)) if lab == label);
                if !continues {
                    if let Some((lab, start)) = open.take() {
                        spans.push(SlotSpan {
                            label: lab,
                            start,
                            end: i,
                        });
                    }
                    open = Some((label.to_string(), i));
                }
            }
        }
    }
    if let Some((lab, start)) = open {
        spans.push(SlotSpan {
            label: lab,
            start,
            end: tags.len(),
        });
    }
    spans
}

/// Renders a span set back to an IOB sequence of the given length.
/// Spans must be non-overlapping.
pub fn spans_to_tags(spans: &[SlotSpan], len: usize) -> Vec<String> {
    let mut tags = vec!["O".to_string(); len];
    for span in spans {
        for i in span.start..span.end.min(len) {
            let prefix = if i == span.start { "B" } else { "I" };
            tags[i] = format!("{}-{}", prefix, span.label);
        }
    }
    tags
}

/// Micro-averaged precision, recall, and F1 over exact span matches,
/// in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecallF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn prf(tp: usize, n_pred: usize, n_gold: usize) -> PrecisionRecallF1 {
    let precision = if n_pred == 0 {
        0.0
    } else {
        100.0 * tp as f64 / n_pred as f64
    };
    let recall = if n_gold == 0 {
        0.0
    } else {
        100.0 * tp as f64 / n_gold as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PrecisionRecallF1 {
        precision,
        recall,
        f1,
    }
}

fn check_aligned(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<(), MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::ListLengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(MetricsError::SentenceLengthMismatch {
                index: i,
                gold: g.len(),
                pred: p.len(),
            });
        }
    }
    Ok(())
}

/// Span-level slot scores over a corpus of gold/predicted tag sequences.
pub fn slot_f1(
    gold: &[Vec<String>],
    pred: &[Vec<String>],
) -> Result<PrecisionRecallF1, MetricsError> {
    check_aligned(gold, pred)?;
    let mut tp = 0usize;
    let mut n_pred = 0usize;
    let mut n_gold = 0usize;
    for (g, p) in gold.iter().zip(pred) {
        let gs = extract_spans(g);
        let ps = extract_spans(p);
        n_gold += gs.len();
        n_pred += ps.len();
        tp += ps.iter().filter(|s| gs.contains(s)).count();
    }
    Ok(prf(tp, n_pred, n_gold))
}

/// Per-label true-positive / predicted / gold counts, keyed by slot label.
pub fn per_label_counts(
    gold: &[Vec<String>],
    pred: &[Vec<String>],
) -> Result<BTreeMap<String, LabelCounts>, MetricsError> {
    check_aligned(gold, pred)?;
    let mut counts: BTreeMap<String, LabelCounts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let gs = extract_spans(g);
        let ps = extract_spans(p);
        for s in &gs {
            counts.entry(s.label.clone()).or_default().gold += 1;
        }
        for s in &ps {
            let entry = counts.entry(s.label.clone()).or_default();
            entry.predicted += 1;
            if gs.contains(s) {
                entry.correct += 1;
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

/// One scored sentence: intent label plus its token-level tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub intent: String,
    pub tags: Vec<String>,
}

/// Fraction of sentences (percent) whose intent and complete tag sequence
/// are both correct. Tag comparison is token-wise, not span-wise, so a
/// repaired `I-x` prediction does not count as matching a gold `B-x`.
pub fn semantic_frame_accuracy(
    gold: &[FrameRecord],
    pred: &[FrameRecord],
) -> Result<f64, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::ListLengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.tags.len() != p.tags.len() {
            return Err(MetricsError::SentenceLengthMismatch {
                index: i,
                gold: g.tags.len(),
                pred: p.tags.len(),
            });
        }
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let correct = gold
        .iter()
        .zip(pred)
        .filter(|(g, p)| g.intent == p.intent && g.tags == p.tags)
        .count();
    Ok(100.0 * correct as f64 / gold.len() as f64)
}

/// Percent of sentences with the correct intent.
pub fn intent_accuracy(gold: &[FrameRecord], pred: &[FrameRecord]) -> Result<f64, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::ListLengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let correct = gold
        .iter()
        .zip(pred)
        .filter(|(g, p)| g.intent == p.intent)
        .count();
    Ok(100.0 * correct as f64 / gold.len() as f64)
}

/// Full evaluation summary for one model/dataset pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Name identifying the run (config echo tells the rest).
    pub run_name: String,
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub slot_f1: f64,
    pub intent_accuracy: f64,
    pub semantic_frame_accuracy: f64,
    pub sentence_count: usize,
    pub per_label: BTreeMap<String, LabelCounts>,
    /// Echo of the experiment configuration that produced the predictions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_echo: Option<serde_json::Value>,
}

impl EvalReport {
    /// Scores predictions against gold records.
    pub fn compute(
        run_name: &str,
        gold: &[FrameRecord],
        pred: &[FrameRecord],
    ) -> Result<Self, MetricsError> {
        let gold_tags: Vec<Vec<String>> = gold.iter().map(|r| r.tags.clone()).collect();
        let pred_tags: Vec<Vec<String>> = pred.iter().map(|r| r.tags.clone()).collect();
        let slot = slot_f1(&gold_tags, &pred_tags)?;
        let per_label = per_label_counts(&gold_tags, &pred_tags)?;
        Ok(EvalReport {
            run_name: run_name.to_string(),
            slot_precision: slot.precision,
            slot_recall: slot.recall,
            slot_f1: slot.f1,
            intent_accuracy: intent_accuracy(gold, pred)?,
            semantic_frame_accuracy: semantic_frame_accuracy(gold, pred)?,
            sentence_count: gold.len(),
            per_label,
            config_echo: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{}: slot P {:.2} / R {:.2} / F1 {:.2}, intent acc {:.2}, frame acc {:.2} ({} sentences)",
            self.run_name,
            self.slot_precision,
            self.slot_recall,
            self.slot_f1,
            self.intent_accuracy,
            self.semantic_frame_accuracy,
            self.sentence_count
        )
    }
}
