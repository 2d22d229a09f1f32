//! Domain types for assistant dialogues: sessions, utterances, engagement
//! labels, and the segmentation of a labeled session into tasks.
//!
//! A *session* is a continuous user/system interaction. Each user utterance
//! may carry one of four engagement labels (Fulfillment, Continuation,
//! Reformulation, Abandonment). Fulfillment and Abandonment close a *task*;
//! the sequence of tasks carries the success/failure signal the metrics
//! module consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Who issued an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

/// Engagement status of a user utterance.
///
/// The variant order doubles as the fixed class order for classification:
/// Fulfillment, Continuation, Reformulation, Abandonment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EngagementLabel {
    /// Request understood and fulfilled.
    Fulfillment,
    /// Request understood, more turns needed.
    Continuation,
    /// Request misunderstood; the user repeats or rephrases next turn.
    Reformulation,
    /// Request not fulfilled and the user gives up on it.
    Abandonment,
}

impl EngagementLabel {
    /// All labels in fixed class order (F, C, R, A).
    pub const ALL: [EngagementLabel; 4] = [
        EngagementLabel::Fulfillment,
        EngagementLabel::Continuation,
        EngagementLabel::Reformulation,
        EngagementLabel::Abandonment,
    ];

    /// Single-character code used in log files.
    pub fn code(self) -> char {
        match self {
            EngagementLabel::Fulfillment => 'F',
            EngagementLabel::Continuation => 'C',
            EngagementLabel::Reformulation => 'R',
            EngagementLabel::Abandonment => 'A',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'F' => Some(EngagementLabel::Fulfillment),
            'C' => Some(EngagementLabel::Continuation),
            'R' => Some(EngagementLabel::Reformulation),
            'A' => Some(EngagementLabel::Abandonment),
            _ => None,
        }
    }

    /// Position in the fixed class order (F=0, C=1, R=2, A=3).
    pub fn class_index(self) -> usize {
        match self {
            EngagementLabel::Fulfillment => 0,
            EngagementLabel::Continuation => 1,
            EngagementLabel::Reformulation => 2,
            EngagementLabel::Abandonment => 3,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl std::fmt::Display for EngagementLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// A single message within a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    /// Ordinal within the session (0-based, contiguous).
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    /// Epoch seconds, when the log carries timestamps.
    pub timestamp: Option<f64>,
    /// Engagement label; only user utterances carry one.
    pub label: Option<EngagementLabel>,
}

/// A continuous user/system interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub dataset_id: String,
    pub utterances: Vec<Utterance>,
}

impl Session {
    pub fn new(id: impl Into<String>, dataset_id: impl Into<String>, utterances: Vec<Utterance>) -> Self {
        Session {
            id: id.into(),
            dataset_id: dataset_id.into(),
            utterances,
        }
    }

    /// User utterances in order.
    pub fn user_utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(|u| u.speaker == Speaker::User)
    }

    /// Engagement labels of the labeled user utterances, in order.
    pub fn labels(&self) -> Vec<EngagementLabel> {
        self.user_utterances().filter_map(|u| u.label).collect()
    }

    /// (utterance index, label) for each labeled user utterance, in order.
    pub fn labeled_user_turns(&self) -> Vec<(usize, EngagementLabel)> {
        self.user_utterances()
            .filter_map(|u| u.label.map(|l| (u.index, l)))
            .collect()
    }

    pub fn n_user_utterances(&self) -> usize {
        self.user_utterances().count()
    }
}

/// How a task ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskOutcome {
    /// Closed by a Fulfillment label.
    Success,
    /// Closed by an Abandonment label, or truncated on a Reformulation.
    Failure,
    /// Session ended on a Continuation; the task never resolved.
    Incomplete,
}

/// A contiguous run of labeled user turns serving one request.
///
/// `first` and `last` index into the labeled user-turn sequence the span was
/// segmented from (0-based, inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpan {
    pub first_user_turn: usize,
    pub last_user_turn: usize,
    pub outcome: TaskOutcome,
}

impl TaskSpan {
    /// Number of user utterances in the span.
    pub fn length(&self) -> usize {
        self.last_user_turn - self.first_user_turn + 1
    }
}

/// Segment a labeled user-turn sequence into tasks.
///
/// Greedy left-to-right scan: every Fulfillment closes the current task as
/// Success and every Abandonment closes it as Failure. A trailing open task
/// is closed as Failure when the session ends on a Reformulation (the last
/// observed act was a failed retry) and as Incomplete when it ends on a
/// Continuation.
pub fn segment_tasks(labels: &[EngagementLabel]) -> Result<Vec<TaskSpan>> {
    if labels.is_empty() {
        return Err(Error::EmptySession);
    }
    let mut spans = Vec::new();
    let mut start = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let outcome = match label {
            EngagementLabel::Fulfillment => Some(TaskOutcome::Success),
            EngagementLabel::Abandonment => Some(TaskOutcome::Failure),
            _ => None,
        };
        if let Some(outcome) = outcome {
            spans.push(TaskSpan {
                first_user_turn: start,
                last_user_turn: i,
                outcome,
            });
            start = i + 1;
        }
    }
    if start < labels.len() {
        let outcome = match labels[labels.len() - 1] {
            EngagementLabel::Reformulation => TaskOutcome::Failure,
            EngagementLabel::Continuation => TaskOutcome::Incomplete,
            _ => unreachable!("terminal F/A labels close their span in the scan"),
        };
        spans.push(TaskSpan {
            first_user_turn: start,
            last_user_turn: labels.len() - 1,
            outcome,
        });
    }
    Ok(spans)
}

/// A single invariant violation found by [`validate_session`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub utterance_index: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    /// Text empty after trimming.
    EmptyText,
    /// Engagement label attached to a system utterance.
    LabeledSystemUtterance,
    /// Timestamp decreased relative to an earlier utterance.
    NonMonotoneTimestamp,
    /// Utterance index does not match its position.
    NonContiguousIndex,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = match self.kind {
            ViolationKind::EmptyText => "empty text",
            ViolationKind::LabeledSystemUtterance => "label on a system utterance",
            ViolationKind::NonMonotoneTimestamp => "timestamp not non-decreasing",
            ViolationKind::NonContiguousIndex => "non-contiguous utterance index",
        };
        write!(f, "utterance {}: {}", self.utterance_index, what)
    }
}

/// Report every invariant violation in a session. Empty result means valid.
pub fn validate_session(session: &Session) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut last_ts: Option<f64> = None;
    for (pos, utt) in session.utterances.iter().enumerate() {
        if utt.index != pos {
            violations.push(Violation {
                utterance_index: pos,
                kind: ViolationKind::NonContiguousIndex,
            });
        }
        if utt.text.trim().is_empty() {
            violations.push(Violation {
                utterance_index: pos,
                kind: ViolationKind::EmptyText,
            });
        }
        if utt.label.is_some() && utt.speaker == Speaker::System {
            violations.push(Violation {
                utterance_index: pos,
                kind: ViolationKind::LabeledSystemUtterance,
            });
        }
        if let Some(ts) = utt.timestamp {
            if let Some(prev) = last_ts {
                if ts < prev {
                    violations.push(Violation {
                        utterance_index: pos,
                        kind: ViolationKind::NonMonotoneTimestamp,
                    });
                }
            }
            last_ts = Some(ts);
        }
    }
    violations
}
