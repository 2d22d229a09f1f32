//! Log ingestion: parse line-delimited utterance records, split concatenated
//! streams into sessions on time gaps, and summarize corpus statistics.
//!
//! The input format is one JSON object per line:
//! `{"session": str?, "stream": str?, "ts": number?, "speaker":
//! "user"|"system", "text": str, "label": "F"|"C"|"R"|"A"?}` — either an
//! explicit `session` id or a (`stream`, `ts`) pair must be present. Records
//! with explicit session ids are grouped directly; stream records are split
//! whenever the gap to the previous record of the same stream exceeds the
//! configured threshold.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dialogue::{segment_tasks, EngagementLabel, Session, Speaker, Utterance};
use crate::error::{Error, Result};
use crate::features::tokenize::tokenize;

/// Gap (seconds) beyond which consecutive records of one stream start a new
/// session. Strictly-greater comparison: a gap of exactly this many seconds
/// keeps the session together.
pub const DEFAULT_SESSION_GAP_SECONDS: f64 = 600.0;

/// One utterance of a concatenated conversation stream, before session
/// boundaries are known.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLogRecord {
    pub stream: String,
    pub speaker: Speaker,
    pub text: String,
    /// Epoch seconds; required for gap-based splitting.
    pub timestamp: Option<f64>,
    pub label: Option<EngagementLabel>,
}

/// Split time-ordered stream records into sessions on gaps strictly greater
/// than `gap_seconds`.
///
/// Records may interleave several streams; order within each stream must be
/// non-decreasing in time. Session ids are `<stream>-<counter>` with a
/// per-stream 1-based counter. Output is grouped by stream (streams in
/// first-appearance order), each stream's sessions chronological.
pub fn split_sessions(
    records: &[RawLogRecord],
    gap_seconds: f64,
    dataset_id: &str,
) -> Result<Vec<Session>> {
    if gap_seconds <= 0.0 || !gap_seconds.is_finite() {
        return Err(Error::Config("session gap must be positive".into()));
    }
    struct StreamState {
        last_ts: f64,
        open: Vec<(Speaker, String, f64, Option<EngagementLabel>)>,
        completed: Vec<Session>,
    }
    let mut states: HashMap<String, StreamState> = HashMap::new();
    let mut order: Vec<String> = Vec::new();

    let flush = |stream: &str, state: &mut StreamState, dataset_id: &str| {
        if state.open.is_empty() {
            return;
        }
        let counter = state.completed.len() + 1;
        let utterances = std::mem::take(&mut state.open)
            .into_iter()
            .enumerate()
            .map(|(i, (speaker, text, ts, label))| Utterance {
                index: i,
                speaker,
                text,
                timestamp: Some(ts),
                label,
            })
            .collect();
        state.completed.push(Session::new(
            format!("{stream}-{counter}"),
            dataset_id,
            utterances,
        ));
    };

    for (i, record) in records.iter().enumerate() {
        let Some(ts) = record.timestamp else {
            return Err(Error::InvalidInput(format!(
                "record {i}: missing timestamp for gap-based splitting"
            )));
        };
        if !states.contains_key(&record.stream) {
            states.insert(
                record.stream.clone(),
                StreamState {
                    last_ts: ts,
                    open: Vec::new(),
                    completed: Vec::new(),
                },
            );
            order.push(record.stream.clone());
        }
        let state = states.get_mut(&record.stream).expect("state just ensured");
        if !state.open.is_empty() {
            if ts < state.last_ts {
                return Err(Error::InvalidInput(format!(
                    "record {i}: timestamps not sorted within stream {:?}",
                    record.stream
                )));
            }
            if ts - state.last_ts > gap_seconds {
                flush(&record.stream, state, dataset_id);
            }
        }
        state
            .open
            .push((record.speaker, record.text.clone(), ts, record.label));
        state.last_ts = ts;
    }
    let mut sessions = Vec::new();
    for stream in &order {
        let state = states.get_mut(stream).expect("stream seen");
        flush(stream, state, dataset_id);
        sessions.append(&mut state.completed);
    }
    Ok(sessions)
}

/// Wire format of one input line. `dataset` is optional and overrides the
/// file-level dataset id, so concatenating several corpora into one file
/// keeps their identities (and their session ids apart).
#[derive(Debug, Serialize, Deserialize)]
struct JsonlLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    session: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stream: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ts: Option<f64>,
    speaker: Speaker,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dataset: Option<String>,
}

fn parse_label(raw: &str, line_no: usize) -> Result<EngagementLabel> {
    let mut chars = raw.chars();
    let (Some(c), None) = (chars.next(), chars.next()) else {
        return Err(Error::Parse {
            line: line_no,
            message: format!("label must be a single character, got {raw:?}"),
        });
    };
    EngagementLabel::from_code(c).ok_or_else(|| Error::Parse {
        line: line_no,
        message: format!("unknown label {raw:?} (expected F, C, R, or A)"),
    })
}

/// Parse line-delimited utterance records into sessions.
///
/// Lines with an explicit session id are grouped by (dataset, id) in
/// first-appearance order; stream lines are collected per (dataset, stream)
/// and split on time gaps. Every reported problem carries its 1-based line
/// number.
pub fn parse_jsonl(
    reader: impl BufRead,
    dataset_id: &str,
    gap_seconds: f64,
) -> Result<Vec<Session>> {
    struct ExplicitSession {
        dataset: String,
        id: String,
        utterances: Vec<Utterance>,
        last_ts: Option<f64>,
    }
    let mut explicit: Vec<ExplicitSession> = Vec::new();
    let mut explicit_index: HashMap<(String, String), usize> = HashMap::new();
    // Stream records grouped per dataset, datasets in first-appearance order.
    let mut stream_groups: Vec<(String, Vec<RawLogRecord>)> = Vec::new();
    let mut stream_index: HashMap<String, usize> = HashMap::new();

    for (line_idx, line) in reader.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonlLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let label = parsed
            .label
            .as_deref()
            .map(|raw| parse_label(raw, line_no))
            .transpose()?;
        if label.is_some() && parsed.speaker == Speaker::System {
            return Err(Error::Parse {
                line: line_no,
                message: "label on a system utterance".into(),
            });
        }
        if parsed.text.trim().is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty utterance text".into(),
            });
        }
        let dataset = parsed.dataset.unwrap_or_else(|| dataset_id.to_string());
        match (parsed.session, parsed.stream, parsed.ts) {
            (Some(session_id), _, ts) => {
                let key = (dataset.clone(), session_id.clone());
                let slot = *explicit_index.entry(key).or_insert_with(|| {
                    explicit.push(ExplicitSession {
                        dataset,
                        id: session_id,
                        utterances: Vec::new(),
                        last_ts: None,
                    });
                    explicit.len() - 1
                });
                let entry = &mut explicit[slot];
                if let (Some(prev), Some(cur)) = (entry.last_ts, ts) {
                    if cur < prev {
                        return Err(Error::Parse {
                            line: line_no,
                            message: "timestamp decreases within session".into(),
                        });
                    }
                }
                if ts.is_some() {
                    entry.last_ts = ts;
                }
                entry.utterances.push(Utterance {
                    index: entry.utterances.len(),
                    speaker: parsed.speaker,
                    text: parsed.text,
                    timestamp: ts,
                    label,
                });
            }
            (None, Some(stream), Some(ts)) => {
                let slot = *stream_index.entry(dataset.clone()).or_insert_with(|| {
                    stream_groups.push((dataset, Vec::new()));
                    stream_groups.len() - 1
                });
                let records = &mut stream_groups[slot].1;
                if let Some(last) = records
                    .iter()
                    .rev()
                    .find(|r| r.stream == stream)
                    .and_then(|r| r.timestamp)
                {
                    if ts < last {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("timestamp decreases within stream {stream:?}"),
                        });
                    }
                }
                records.push(RawLogRecord {
                    stream,
                    speaker: parsed.speaker,
                    text: parsed.text,
                    timestamp: Some(ts),
                    label,
                });
            }
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "line needs either \"session\" or both \"stream\" and \"ts\"".into(),
                });
            }
        }
    }

    let mut sessions: Vec<Session> = explicit
        .into_iter()
        .map(|s| Session::new(s.id, s.dataset, s.utterances))
        .collect();
    for (dataset, records) in &stream_groups {
        sessions.extend(split_sessions(records, gap_seconds, dataset)?);
    }
    Ok(sessions)
}

/// Read sessions from a JSONL file; the dataset id defaults to the file stem.
pub fn load_sessions(path: &Path, gap_seconds: f64) -> Result<Vec<Session>> {
    let dataset_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let file = std::fs::File::open(path)?;
    parse_jsonl(std::io::BufReader::new(file), &dataset_id, gap_seconds)
}

/// Write sessions in the JSONL input format (explicit session and dataset
/// ids), so that parsing the output reproduces the sessions exactly.
pub fn write_sessions_jsonl(sessions: &[Session], mut writer: impl Write) -> Result<()> {
    for session in sessions {
        for utt in &session.utterances {
            let line = JsonlLine {
                session: Some(session.id.clone()),
                stream: None,
                ts: utt.timestamp,
                speaker: utt.speaker,
                text: utt.text.clone(),
                label: utt.label.map(|l| l.code().to_string()),
                dataset: Some(session.dataset_id.clone()),
            };
            serde_json::to_writer(&mut writer, &line)?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Corpus statistics over labeled sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_sessions: usize,
    pub n_tasks: usize,
    /// Labeled user utterances per task.
    pub utt_per_task: f64,
    /// Mean token count over all user utterances (labeled or not).
    pub words_per_user_utt: f64,
    pub n_labeled_utts: usize,
    /// Fraction of labeled utterances per label code, keyed F/C/R/A.
    pub label_fractions: BTreeMap<char, f64>,
}

/// Compute corpus statistics. Every session must contain at least one
/// labeled user utterance.
pub fn dataset_stats(sessions: &[Session]) -> Result<CorpusStats> {
    if sessions.is_empty() {
        return Err(Error::InvalidInput("no sessions".into()));
    }
    let mut n_tasks = 0usize;
    let mut n_labeled = 0usize;
    let mut label_counts: BTreeMap<char, usize> = EngagementLabel::ALL
        .iter()
        .map(|l| (l.code(), 0))
        .collect();
    let mut word_total = 0usize;
    let mut user_utts = 0usize;
    for session in sessions {
        let labels = session.labels();
        if labels.is_empty() {
            return Err(Error::InvalidInput(format!(
                "session {}: no labels",
                session.id
            )));
        }
        n_tasks += segment_tasks(&labels)?.len();
        n_labeled += labels.len();
        for label in labels {
            *label_counts.entry(label.code()).or_insert(0) += 1;
        }
        for utt in session.user_utterances() {
            word_total += tokenize(&utt.text).len();
            user_utts += 1;
        }
    }
    Ok(CorpusStats {
        n_sessions: sessions.len(),
        n_tasks,
        utt_per_task: n_labeled as f64 / n_tasks as f64,
        words_per_user_utt: word_total as f64 / user_utts as f64,
        n_labeled_utts: n_labeled,
        label_fractions: label_counts
            .into_iter()
            .map(|(code, count)| (code, count as f64 / n_labeled as f64))
            .collect(),
    })
}
