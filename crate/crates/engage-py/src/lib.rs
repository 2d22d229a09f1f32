//! Python bindings for the `engage` library.
//!
//! Exposes the pieces a notebook session actually reaches for: loading
//! dialogue logs, tokenization and text similarity, task segmentation, the
//! per-session and corpus engagement metrics, and a train/predict wrapper
//! around the L1-regularized engagement classifier.
//!
//! Sessions cross the boundary as `Session` objects; labels travel as their
//! single-letter codes (F, C, R, A) and metric reports as plain dicts, so no
//! Python-side schema is required. Syntactic-annotation sidecars are not
//! exposed here — configure the syntactic feature group through the CLI
//! instead.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use engage::dialogue::{
    self, EngagementLabel, Session, Speaker, TaskOutcome, TaskSpan, Utterance,
};
use engage::features::similarity;
use engage::features::{build_rows, tokenize, ContextSetting, FeatureConfig, FittedPipeline};
use engage::ingest::{self, DEFAULT_SESSION_GAP_SECONDS};
use engage::learn::{train, LogRegModel, TrainConfig};
use engage::metrics::{corpus_aggregate, session_metrics, AggregationMode, SessionMetrics};
use engage::Error;

/// Map library errors onto the closest builtin Python exception.
fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Internal(_) | Error::Leakage(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_label(code: &str) -> PyResult<EngagementLabel> {
    let mut chars = code.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => EngagementLabel::from_code(c)
            .ok_or_else(|| PyValueError::new_err(format!("unknown engagement label {code:?}"))),
        _ => Err(PyValueError::new_err(format!(
            "engagement label must be one letter, got {code:?}"
        ))),
    }
}

fn parse_label_string(labels: &str) -> PyResult<Vec<EngagementLabel>> {
    labels
        .chars()
        .map(|c| {
            EngagementLabel::from_code(c)
                .ok_or_else(|| PyValueError::new_err(format!("unknown engagement label {c:?}")))
        })
        .collect()
}

fn outcome_name(outcome: TaskOutcome) -> &'static str {
    match outcome {
        TaskOutcome::Success => "success",
        TaskOutcome::Failure => "failure",
        TaskOutcome::Incomplete => "incomplete",
    }
}

fn spans_as_tuples(spans: &[TaskSpan]) -> Vec<(usize, usize, String)> {
    spans
        .iter()
        .map(|s| {
            (
                s.first_user_turn,
                s.last_user_turn,
                outcome_name(s.outcome).to_string(),
            )
        })
        .collect()
}

fn session_metrics_dict<'py>(py: Python<'py>, m: &SessionMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("success_rate", m.success_rate)?;
    d.set_item("reform_rate", m.reform_rate)?;
    d.set_item("fatigue_value", m.fatigue_value)?;
    d.set_item("efficiency_rate", m.efficiency_rate)?;
    d.set_item("ue_score", m.ue_score)?;
    d.set_item("n_tasks", m.n_tasks)?;
    d.set_item("n_labeled_utts", m.n_labeled_utts)?;
    Ok(d)
}

/// A continuous user/system interaction.
///
/// Build one from `(speaker, text, label)` turns, or load a corpus with
/// [`load_sessions`]. `speaker` is `"user"` or `"system"`; `label` is an
/// engagement code letter or `None`.
#[pyclass(name = "Session", module = "engage_py")]
struct PySession {
    inner: Session,
}

#[pymethods]
impl PySession {
    #[new]
    fn new(
        id: String,
        dataset_id: String,
        turns: Vec<(String, String, Option<String>)>,
    ) -> PyResult<Self> {
        let mut utterances = Vec::with_capacity(turns.len());
        for (index, (speaker, text, label)) in turns.into_iter().enumerate() {
            let speaker = match speaker.to_lowercase().as_str() {
                "user" => Speaker::User,
                "system" => Speaker::System,
                other => {
                    return Err(PyValueError::new_err(format!(
                        "turn {index}: speaker must be 'user' or 'system', got {other:?}"
                    )))
                }
            };
            let label = match label {
                Some(code) => {
                    if speaker != Speaker::User {
                        return Err(PyValueError::new_err(format!(
                            "turn {index}: only user turns carry engagement labels"
                        )));
                    }
                    Some(parse_label(&code)?)
                }
                None => None,
            };
            utterances.push(Utterance {
                index,
                speaker,
                text,
                timestamp: None,
                label,
            });
        }
        Ok(PySession {
            inner: Session::new(id, dataset_id, utterances),
        })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn dataset_id(&self) -> String {
        self.inner.dataset_id.clone()
    }

    /// The session's turns as `(speaker, text, label)` tuples.
    fn turns(&self) -> Vec<(String, String, Option<String>)> {
        self.inner
            .utterances
            .iter()
            .map(|u| {
                (
                    match u.speaker {
                        Speaker::User => "user".to_string(),
                        Speaker::System => "system".to_string(),
                    },
                    u.text.clone(),
                    u.label.map(|l| l.code().to_string()),
                )
            })
            .collect()
    }

    /// Engagement codes of the labeled user turns, in order (e.g. "RCFFFRA").
    fn labels(&self) -> String {
        self.inner.labels().iter().map(|l| l.code()).collect()
    }

    /// Task spans as `(first_user_turn, last_user_turn, outcome)` tuples.
    fn tasks(&self) -> PyResult<Vec<(usize, usize, String)>> {
        let spans = dialogue::segment_tasks(&self.inner.labels()).map_err(to_py_err)?;
        Ok(spans_as_tuples(&spans))
    }

    /// Per-session engagement metrics as a dict.
    #[pyo3(signature = (alpha = 2))]
    fn metrics<'py>(&self, py: Python<'py>, alpha: u32) -> PyResult<Bound<'py, PyDict>> {
        let m = session_metrics(&self.inner, alpha).map_err(to_py_err)?;
        session_metrics_dict(py, &m)
    }

    fn __len__(&self) -> usize {
        self.inner.utterances.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Session(id={:?}, dataset_id={:?}, turns={}, labels={:?})",
            self.inner.id,
            self.inner.dataset_id,
            self.inner.utterances.len(),
            self.labels(),
        )
    }
}

fn unwrap_sessions(py: Python<'_>, sessions: &[Py<PySession>]) -> Vec<Session> {
    sessions.iter().map(|s| s.borrow(py).inner.clone()).collect()
}

/// Split text into lowercase word tokens, the way every feature extractor
/// and similarity measure in the library does.
#[pyfunction(name = "tokenize")]
fn tokenize_py(text: &str) -> Vec<String> {
    tokenize(text)
}

/// Edit distance between two strings, by characters.
#[pyfunction(name = "levenshtein")]
fn levenshtein_py(a: &str, b: &str) -> usize {
    similarity::levenshtein(a, b)
}

/// Edit distance scaled into [0, 1] by the longer string's length.
#[pyfunction(name = "normalized_edit_distance")]
fn normalized_edit_distance_py(a: &str, b: &str) -> f64 {
    similarity::normalized_edit_distance(a, b)
}

/// Jaccard similarity of the two texts' token sets.
#[pyfunction(name = "jaccard_similarity")]
fn jaccard_similarity_py(a: &str, b: &str) -> f64 {
    similarity::jaccard_of_slices(&tokenize(a), &tokenize(b))
}

/// Segment a label string (e.g. "RCFFFRA") into task spans, returned as
/// `(first_user_turn, last_user_turn, outcome)` tuples.
#[pyfunction(name = "segment_tasks")]
fn segment_tasks_py(labels: &str) -> PyResult<Vec<(usize, usize, String)>> {
    let parsed = parse_label_string(labels)?;
    let spans = dialogue::segment_tasks(&parsed).map_err(to_py_err)?;
    Ok(spans_as_tuples(&spans))
}

/// Engagement metrics of a bare label string, without building a session.
#[pyfunction(name = "metrics_from_labels", signature = (labels, alpha = 2))]
fn metrics_from_labels_py<'py>(
    py: Python<'py>,
    labels: &str,
    alpha: u32,
) -> PyResult<Bound<'py, PyDict>> {
    let parsed = parse_label_string(labels)?;
    let utterances = parsed
        .into_iter()
        .enumerate()
        .map(|(index, label)| Utterance {
            index,
            speaker: Speaker::User,
            text: String::new(),
            timestamp: None,
            label: Some(label),
        })
        .collect();
    let session = Session::new("labels", "labels", utterances);
    let m = session_metrics(&session, alpha).map_err(to_py_err)?;
    session_metrics_dict(py, &m)
}

/// Load sessions from a JSONL dialogue log.
///
/// Records with explicit session ids are grouped by id; timestamped stream
/// records are split into sessions wherever the silence gap exceeds
/// `gap_seconds`.
#[pyfunction(name = "load_sessions", signature = (path, gap_seconds = DEFAULT_SESSION_GAP_SECONDS))]
fn load_sessions_py(path: PathBuf, gap_seconds: f64) -> PyResult<Vec<PySession>> {
    let sessions = ingest::load_sessions(&path, gap_seconds).map_err(to_py_err)?;
    Ok(sessions
        .into_iter()
        .map(|inner| PySession { inner })
        .collect())
}

/// Aggregate engagement metrics over many sessions.
///
/// `per_session_mean=False` pools raw task/utterance counts across sessions;
/// `True` averages the per-session metrics instead, skipping undefined ones.
#[pyfunction(
    name = "corpus_metrics",
    signature = (sessions, alpha = 2, per_session_mean = false, low_threshold = 0.2)
)]
fn corpus_metrics_py<'py>(
    py: Python<'py>,
    sessions: Vec<Py<PySession>>,
    alpha: u32,
    per_session_mean: bool,
    low_threshold: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let sessions = unwrap_sessions(py, &sessions);
    let mode = if per_session_mean {
        AggregationMode::PerSessionMean
    } else {
        AggregationMode::PoolCounts
    };
    let report = corpus_aggregate(&sessions, alpha, mode, low_threshold).map_err(to_py_err)?;
    let s = &report.summary;
    let d = PyDict::new(py);
    d.set_item(
        "mode",
        if per_session_mean { "per_session_mean" } else { "pooled" },
    )?;
    d.set_item("alpha", s.alpha)?;
    d.set_item("n_sessions", s.n_sessions)?;
    d.set_item("n_tasks", s.n_tasks)?;
    d.set_item("n_labeled_utts", s.n_labeled_utts)?;
    d.set_item("success_rate", s.success_rate)?;
    d.set_item("reform_rate", s.reform_rate)?;
    d.set_item("fatigue_value", s.fatigue_value)?;
    d.set_item("efficiency_rate", s.efficiency_rate)?;
    d.set_item("ue_score", s.ue_score)?;
    d.set_item("n_sessions_success_undefined", s.n_sessions_success_undefined)?;
    d.set_item("n_low_engagement_sessions", s.n_low_engagement_sessions)?;
    d.set_item("low_engagement_threshold", s.low_engagement_threshold)?;
    Ok(d)
}

/// Engagement-status classifier: a feature pipeline fitted on labeled
/// sessions plus an L1-regularized multinomial logistic regression model.
///
/// Build one with [`Classifier.fit`]; `predict` and `predict_proba` then
/// score any sessions, returning one entry per labeled user turn.
#[pyclass(name = "Classifier", module = "engage_py")]
struct PyClassifier {
    pipeline: FittedPipeline,
    model: LogRegModel,
    setting: ContextSetting,
}

impl PyClassifier {
    /// Feature-extract the labeled user turns of `sessions` with the fitted
    /// pipeline, keeping the row identities for the result.
    fn prepare(
        &self,
        py: Python<'_>,
        sessions: Vec<Py<PySession>>,
    ) -> PyResult<(Vec<(String, usize)>, engage::features::SparseMatrix)> {
        let sessions = unwrap_sessions(py, &sessions);
        let rows = build_rows(&sessions, self.setting).map_err(to_py_err)?;
        if rows.is_empty() {
            return Err(PyValueError::new_err(
                "no labeled user utterances to score",
            ));
        }
        let all: Vec<usize> = (0..rows.len()).collect();
        let out = self
            .pipeline
            .transform(&rows, &all, None)
            .map_err(to_py_err)?;
        let keys = rows
            .into_iter()
            .map(|r| (r.session_id, r.user_turn))
            .collect();
        Ok((keys, out.matrix))
    }
}

#[pymethods]
impl PyClassifier {
    /// Fit the feature pipeline and classifier on labeled sessions.
    ///
    /// `context` names the utterance window ("cur_utt", "cur", "next",
    /// "prev", or "all"); `groups` the feature families to extract ("basic",
    /// "phrasal", "syntactic", "ngram", "topic" — syntactic needs sidecar
    /// annotations, which this binding does not carry, so it is off by
    /// default along with the slower topic features).
    #[staticmethod]
    #[pyo3(signature = (
        sessions,
        context = "next",
        groups = None,
        with_similarity = true,
        lam = 1.0,
        max_iterations = 1000,
        seed = 0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        sessions: Vec<Py<PySession>>,
        context: &str,
        groups: Option<Vec<String>>,
        with_similarity: bool,
        lam: f64,
        max_iterations: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let setting: ContextSetting = context.parse().map_err(to_py_err)?;
        let group_names = groups.unwrap_or_else(|| {
            ["basic", "phrasal", "ngram"].map(String::from).to_vec()
        });
        let groups = group_names
            .iter()
            .map(|g| g.parse().map_err(to_py_err))
            .collect::<PyResult<_>>()?;

        let sessions = unwrap_sessions(py, &sessions);
        let rows = build_rows(&sessions, setting).map_err(to_py_err)?;
        if rows.is_empty() {
            return Err(PyValueError::new_err(
                "no labeled user utterances to train on",
            ));
        }
        let config = FeatureConfig {
            setting,
            groups,
            with_similarity,
            ..FeatureConfig::default()
        };
        let all: Vec<usize> = (0..rows.len()).collect();
        let pipeline = FittedPipeline::fit(&rows, &all, &config, None).map_err(to_py_err)?;
        let out = pipeline.transform(&rows, &all, None).map_err(to_py_err)?;
        let train_cfg = TrainConfig {
            lambda: lam,
            max_iterations,
            seed,
            ..TrainConfig::default()
        };
        let model = train(&out.matrix, &out.labels, &train_cfg).map_err(to_py_err)?;
        Ok(PyClassifier {
            pipeline,
            model,
            setting,
        })
    }

    /// Predict engagement codes, one `(session_id, user_turn, label)` tuple
    /// per labeled user turn.
    fn predict(
        &self,
        py: Python<'_>,
        sessions: Vec<Py<PySession>>,
    ) -> PyResult<Vec<(String, usize, String)>> {
        let (keys, matrix) = self.prepare(py, sessions)?;
        let classes = self.model.predict(&matrix).map_err(to_py_err)?;
        Ok(keys
            .into_iter()
            .zip(classes)
            .map(|((session_id, user_turn), class)| {
                let code = EngagementLabel::from_class_index(class)
                    .map(|l| l.code().to_string())
                    .unwrap_or_else(|| class.to_string());
                (session_id, user_turn, code)
            })
            .collect())
    }

    /// Class probabilities in F, C, R, A order, one
    /// `(session_id, user_turn, [p_f, p_c, p_r, p_a])` tuple per labeled
    /// user turn.
    fn predict_proba(
        &self,
        py: Python<'_>,
        sessions: Vec<Py<PySession>>,
    ) -> PyResult<Vec<(String, usize, Vec<f64>)>> {
        let (keys, matrix) = self.prepare(py, sessions)?;
        let proba = self.model.predict_proba(&matrix).map_err(to_py_err)?;
        Ok(keys
            .into_iter()
            .zip(proba.rows())
            .map(|((session_id, user_turn), row)| (session_id, user_turn, row.to_vec()))
            .collect())
    }

    /// Engagement codes in model class order.
    #[getter]
    fn class_order(&self) -> String {
        EngagementLabel::ALL.iter().map(|l| l.code()).collect()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.model.n_features()
    }

    #[getter]
    fn n_zero_weights(&self) -> usize {
        self.model.n_zero_weights()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.model.lambda
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.model.iterations
    }

    #[getter]
    fn final_objective(&self) -> f64 {
        self.model.final_objective
    }

    fn __repr__(&self) -> String {
        format!(
            "Classifier(context={:?}, n_features={}, nonzero_weights={}, lambda={})",
            self.setting.name(),
            self.model.n_features(),
            self.model.weights.len() - self.model.n_zero_weights(),
            self.model.lambda,
        )
    }
}

/// Dialogue engagement metrics and engagement-status prediction.
#[pymodule]
fn engage_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySession>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(tokenize_py, m)?)?;
    m.add_function(wrap_pyfunction!(levenshtein_py, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_edit_distance_py, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard_similarity_py, m)?)?;
    m.add_function(wrap_pyfunction!(segment_tasks_py, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_from_labels_py, m)?)?;
    m.add_function(wrap_pyfunction!(load_sessions_py, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_metrics_py, m)?)?;
    m.add("DEFAULT_SESSION_GAP_SECONDS", DEFAULT_SESSION_GAP_SECONDS)?;
    Ok(())
}
