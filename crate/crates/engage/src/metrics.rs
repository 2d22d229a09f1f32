//! Session- and corpus-level engagement metrics.
//!
//! Five quantities summarize how well a session went: the success rate over
//! closed tasks, the reformulation rate over labeled utterances, a fatigue
//! value that grows with task length beyond a tolerance `alpha`, an
//! efficiency rate combining the last two, and an overall engagement score
//! averaging success and efficiency. Corpus aggregation pools raw counts
//! across sessions by default; a per-session-mean mode is available behind a
//! flag.

use serde::{Deserialize, Serialize};

use crate::dialogue::{segment_tasks, EngagementLabel, Session, TaskOutcome, TaskSpan};
use crate::error::{Error, Result};

/// Default tolerance for task length before fatigue accrues.
pub const DEFAULT_ALPHA: u32 = 2;

/// Default cutoff below which a session counts as low-engagement.
pub const DEFAULT_LOW_ENGAGEMENT_THRESHOLD: f64 = 0.2;

/// Engagement metrics for one session.
///
/// `success_rate` (and therefore `ue_score`) is `None` when the session has
/// no closed task to judge, i.e. every task is Incomplete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub success_rate: Option<f64>,
    pub reform_rate: f64,
    pub fatigue_value: f64,
    pub efficiency_rate: f64,
    pub ue_score: Option<f64>,
    pub n_tasks: usize,
    pub n_labeled_utts: usize,
}

/// Fraction of closed tasks that succeeded.
///
/// Incomplete tasks are excluded from numerator and denominator: success is
/// undefined for a task that never resolved. Returns `None` when no task
/// closed at all.
pub fn success_rate(tasks: &[TaskSpan]) -> Result<Option<f64>> {
    if tasks.is_empty() {
        return Err(Error::EmptySession);
    }
    let successes = tasks.iter().filter(|t| t.outcome == TaskOutcome::Success).count();
    let failures = tasks.iter().filter(|t| t.outcome == TaskOutcome::Failure).count();
    let closed = successes + failures;
    if closed == 0 {
        return Ok(None);
    }
    Ok(Some(successes as f64 / closed as f64))
}

/// Fraction of labeled user utterances that are Reformulations.
pub fn reform_rate(labels: &[EngagementLabel]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptySession);
    }
    let reforms = labels
        .iter()
        .filter(|&&l| l == EngagementLabel::Reformulation)
        .count();
    Ok(reforms as f64 / labels.len() as f64)
}

/// Mean thresholded task length: each task contributes
/// `max(0, length − alpha) + 1`, so the value is at least 1.
///
/// Incomplete tasks are included — their turns cost the user effort even
/// though their outcome is unknown.
pub fn fatigue_value(tasks: &[TaskSpan], alpha: u32) -> Result<f64> {
    if alpha < 1 {
        return Err(Error::Config("alpha must be a positive integer".into()));
    }
    if tasks.is_empty() {
        return Err(Error::EmptySession);
    }
    let total: f64 = tasks
        .iter()
        .map(|t| t.length().saturating_sub(alpha as usize) as f64 + 1.0)
        .sum();
    Ok(total / tasks.len() as f64)
}

/// Combine reformulation rate and fatigue into one efficiency figure:
/// `(1 − reform) / fatigue`. Stays in [0,1] because fatigue ≥ 1.
pub fn efficiency_rate(reform: f64, fatigue: f64) -> f64 {
    (1.0 - reform) / fatigue
}

/// Overall engagement: the arithmetic mean of success and efficiency.
pub fn ue_score(success: f64, efficiency: f64) -> f64 {
    (success + efficiency) / 2.0
}

/// Compute all five metrics for one session.
///
/// Errors with "no labels" when the session has no labeled user utterance.
pub fn session_metrics(session: &Session, alpha: u32) -> Result<SessionMetrics> {
    let labels = session.labels();
    if labels.is_empty() {
        return Err(Error::InvalidInput(format!(
            "session {}: no labels",
            session.id
        )));
    }
    let tasks = segment_tasks(&labels)?;
    let success = success_rate(&tasks)?;
    let reform = reform_rate(&labels)?;
    let fatigue = fatigue_value(&tasks, alpha)?;
    let efficiency = efficiency_rate(reform, fatigue);
    Ok(SessionMetrics {
        success_rate: success,
        reform_rate: reform,
        fatigue_value: fatigue,
        efficiency_rate: efficiency,
        ue_score: success.map(|s| ue_score(s, efficiency)),
        n_tasks: tasks.len(),
        n_labeled_utts: labels.len(),
    })
}

/// How corpus-level metrics combine per-session data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Pool raw task/utterance counts across sessions (default). Matches
    /// utterance-level percentage reporting.
    PoolCounts,
    /// Average each per-session metric, skipping undefined values.
    PerSessionMean,
}

/// Corpus-level metric summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub mode: AggregationMode,
    pub alpha: u32,
    pub n_sessions: usize,
    pub n_tasks: usize,
    pub n_labeled_utts: usize,
    pub success_rate: Option<f64>,
    pub reform_rate: f64,
    pub fatigue_value: f64,
    pub efficiency_rate: f64,
    pub ue_score: Option<f64>,
    /// Sessions whose success rate was undefined (all tasks Incomplete);
    /// they contribute nothing to the corpus success rate.
    pub n_sessions_success_undefined: usize,
    /// Sessions with a defined engagement score below the threshold.
    pub n_low_engagement_sessions: usize,
    pub low_engagement_threshold: f64,
}

/// One row of the per-session table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetricsRow {
    pub session_id: String,
    #[serde(flatten)]
    pub metrics: SessionMetrics,
}

/// Summary plus the per-session table used for CSV/scatter export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub summary: CorpusMetrics,
    pub per_session: Vec<SessionMetricsRow>,
}

/// Aggregate metrics over a corpus of sessions.
///
/// Sessions without any labeled user utterance are rejected — filter them
/// out during ingestion. At least one session is required.
pub fn corpus_aggregate(
    sessions: &[Session],
    alpha: u32,
    mode: AggregationMode,
    low_threshold: f64,
) -> Result<CorpusReport> {
    if sessions.is_empty() {
        return Err(Error::InvalidInput("no sessions to aggregate".into()));
    }
    let mut per_session = Vec::with_capacity(sessions.len());
    let mut pooled_success_tasks = 0usize;
    let mut pooled_closed_tasks = 0usize;
    let mut pooled_reform_utts = 0usize;
    let mut pooled_labeled_utts = 0usize;
    let mut pooled_fatigue_sum = 0.0f64;
    let mut pooled_tasks = 0usize;
    let mut n_success_undefined = 0usize;
    let mut n_low = 0usize;

    for session in sessions {
        let metrics = session_metrics(session, alpha)?;
        let labels = session.labels();
        let tasks = segment_tasks(&labels)?;
        pooled_success_tasks += tasks
            .iter()
            .filter(|t| t.outcome == TaskOutcome::Success)
            .count();
        pooled_closed_tasks += tasks
            .iter()
            .filter(|t| t.outcome != TaskOutcome::Incomplete)
            .count();
        pooled_reform_utts += labels
            .iter()
            .filter(|&&l| l == EngagementLabel::Reformulation)
            .count();
        pooled_labeled_utts += labels.len();
        pooled_fatigue_sum += tasks
            .iter()
            .map(|t| t.length().saturating_sub(alpha as usize) as f64 + 1.0)
            .sum::<f64>();
        pooled_tasks += tasks.len();
        if metrics.success_rate.is_none() {
            n_success_undefined += 1;
        }
        if metrics.ue_score.is_some_and(|ue| ue < low_threshold) {
            n_low += 1;
        }
        per_session.push(SessionMetricsRow {
            session_id: session.id.clone(),
            metrics,
        });
    }

    let (success, reform, fatigue, efficiency, ue) = match mode {
        AggregationMode::PoolCounts => {
            let success = (pooled_closed_tasks > 0)
                .then(|| pooled_success_tasks as f64 / pooled_closed_tasks as f64);
            let reform = pooled_reform_utts as f64 / pooled_labeled_utts as f64;
            let fatigue = pooled_fatigue_sum / pooled_tasks as f64;
            let efficiency = efficiency_rate(reform, fatigue);
            (success, reform, fatigue, efficiency, success.map(|s| ue_score(s, efficiency)))
        }
        AggregationMode::PerSessionMean => {
            let mean = |values: Vec<f64>| -> Option<f64> {
                (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
            };
            let success = mean(
                per_session
                    .iter()
                    .filter_map(|r| r.metrics.success_rate)
                    .collect(),
            );
            let reform = mean(per_session.iter().map(|r| r.metrics.reform_rate).collect())
                .expect("at least one session");
            let fatigue = mean(per_session.iter().map(|r| r.metrics.fatigue_value).collect())
                .expect("at least one session");
            let efficiency = mean(
                per_session
                    .iter()
                    .map(|r| r.metrics.efficiency_rate)
                    .collect(),
            )
            .expect("at least one session");
            let ue = mean(per_session.iter().filter_map(|r| r.metrics.ue_score).collect());
            (success, reform, fatigue, efficiency, ue)
        }
    };

    Ok(CorpusReport {
        summary: CorpusMetrics {
            mode,
            alpha,
            n_sessions: sessions.len(),
            n_tasks: pooled_tasks,
            n_labeled_utts: pooled_labeled_utts,
            success_rate: success,
            reform_rate: reform,
            fatigue_value: fatigue,
            efficiency_rate: efficiency,
            ue_score: ue,
            n_sessions_success_undefined: n_success_undefined,
            n_low_engagement_sessions: n_low,
            low_engagement_threshold: low_threshold,
        },
        per_session,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{Speaker, Utterance};
    use proptest::prelude::*;

    use EngagementLabel::*;

    const TOL: f64 = 1e-9;

    fn spans_of(labels: &[EngagementLabel]) -> Vec<TaskSpan> {
        segment_tasks(labels).unwrap()
    }

    /// Session with the label sequence of the annotated restaurant dialogue:
    /// R C F F F R A, plus an unlabeled closing turn.
    fn restaurant_session() -> Session {
        let labels = [
            Some(Reformulation),
            Some(Continuation),
            Some(Fulfillment),
            Some(Fulfillment),
            Some(Fulfillment),
            Some(Reformulation),
            Some(Abandonment),
            None,
        ];
        session_from_labels("restaurant", &labels)
    }

    /// Build a session alternating user/system turns with the given user labels.
    fn session_from_labels(id: &str, labels: &[Option<EngagementLabel>]) -> Session {
        let mut utterances = Vec::new();
        for (turn, label) in labels.iter().enumerate() {
            utterances.push(Utterance {
                index: utterances.len(),
                speaker: Speaker::User,
                text: format!("user turn {turn}"),
                timestamp: None,
                label: *label,
            });
            utterances.push(Utterance {
                index: utterances.len(),
                speaker: Speaker::System,
                text: format!("system turn {turn}"),
                timestamp: None,
                label: None,
            });
        }
        Session::new(id, "test", utterances)
    }

    #[test]
    fn restaurant_session_quintuple() {
        let m = session_metrics(&restaurant_session(), DEFAULT_ALPHA).unwrap();
        assert!((m.success_rate.unwrap() - 0.75).abs() < TOL);
        assert!((m.reform_rate - 2.0 / 7.0).abs() < TOL);
        assert!((m.fatigue_value - 1.25).abs() < TOL);
        assert!((m.efficiency_rate - (1.0 - 2.0 / 7.0) / 1.25).abs() < TOL);
        assert!((m.efficiency_rate - 0.571428571).abs() < 1e-6);
        assert!((m.ue_score.unwrap() - 0.660714285).abs() < 1e-6);
        assert_eq!(m.n_tasks, 4);
        assert_eq!(m.n_labeled_utts, 7);
    }

    #[test]
    fn success_rate_boundaries() {
        assert_eq!(success_rate(&spans_of(&[Fulfillment, Fulfillment])).unwrap(), Some(1.0));
        assert_eq!(success_rate(&spans_of(&[Abandonment])).unwrap(), Some(0.0));
        // All-Incomplete: a lone trailing continuation never closes.
        assert_eq!(success_rate(&spans_of(&[Continuation])).unwrap(), None);
        assert!(success_rate(&[]).is_err());
    }

    #[test]
    fn reform_rate_boundaries() {
        assert!((reform_rate(&[Fulfillment, Continuation]).unwrap() - 0.0).abs() < TOL);
        assert!((reform_rate(&[Reformulation, Reformulation]).unwrap() - 1.0).abs() < TOL);
        assert!(reform_rate(&[]).is_err());
    }

    #[test]
    fn fatigue_examples() {
        // Restaurant spans have lengths (3,1,1,2): (2+1+1+1)/4.
        assert!((fatigue_value(&spans_of(&restaurant_session().labels()), 2).unwrap() - 1.25).abs() < TOL);
        // All tasks within tolerance → exactly 1.
        assert!((fatigue_value(&spans_of(&[Fulfillment, Fulfillment]), 2).unwrap() - 1.0).abs() < TOL);
        // Single task of length 5 with alpha 2 → max(0, 5−2)+1 = 4.
        let long_task = spans_of(&[Continuation, Continuation, Continuation, Continuation, Fulfillment]);
        assert!((fatigue_value(&long_task, 2).unwrap() - 4.0).abs() < TOL);
        assert!(matches!(fatigue_value(&long_task, 0), Err(Error::Config(_))));
    }

    #[test]
    fn efficiency_and_ue_identities() {
        assert!((efficiency_rate(0.0, 1.0) - 1.0).abs() < TOL);
        assert!((efficiency_rate(1.0, 3.0) - 0.0).abs() < TOL);
        assert!((ue_score(1.0, 1.0) - 1.0).abs() < TOL);
    }

    #[test]
    fn single_abandonment_session_scores_half() {
        let session = session_from_labels("a", &[Some(Abandonment)]);
        let m = session_metrics(&session, DEFAULT_ALPHA).unwrap();
        assert_eq!(m.success_rate, Some(0.0));
        assert!((m.reform_rate - 0.0).abs() < TOL);
        assert!((m.fatigue_value - 1.0).abs() < TOL);
        assert!((m.efficiency_rate - 1.0).abs() < TOL);
        assert!((m.ue_score.unwrap() - 0.5).abs() < TOL);
    }

    #[test]
    fn all_fulfillment_sessions_score_one() {
        for k in 1..=5 {
            let labels: Vec<_> = std::iter::repeat(Some(Fulfillment)).take(k).collect();
            let m = session_metrics(&session_from_labels("f", &labels), DEFAULT_ALPHA).unwrap();
            assert!((m.ue_score.unwrap() - 1.0).abs() < TOL, "k={k}");
        }
    }

    #[test]
    fn unlabeled_session_is_rejected() {
        let session = session_from_labels("u", &[None, None]);
        let err = session_metrics(&session, DEFAULT_ALPHA).unwrap_err();
        assert!(err.to_string().contains("no labels"));
    }

    #[test]
    fn pooled_aggregation_sums_counts() {
        // 4 success tasks in one session; 3 success + 1 failure in the other:
        // pooled 7 of 8 closed tasks.
        let s1 = session_from_labels(
            "s1",
            &[Some(Fulfillment), Some(Fulfillment), Some(Fulfillment), Some(Fulfillment)],
        );
        let s2 = session_from_labels(
            "s2",
            &[Some(Fulfillment), Some(Fulfillment), Some(Fulfillment), Some(Abandonment)],
        );
        let report = corpus_aggregate(
            &[s1, s2],
            DEFAULT_ALPHA,
            AggregationMode::PoolCounts,
            DEFAULT_LOW_ENGAGEMENT_THRESHOLD,
        )
        .unwrap();
        assert!((report.summary.success_rate.unwrap() - 0.875).abs() < TOL);
        assert_eq!(report.summary.n_tasks, 8);
        assert_eq!(report.per_session.len(), 2);
    }

    #[test]
    fn pooling_and_mean_modes_differ() {
        // Per-session success rates 1.0 and 0.25; pooled 2/5.
        let s1 = session_from_labels("s1", &[Some(Fulfillment)]);
        let s2 = session_from_labels(
            "s2",
            &[Some(Fulfillment), Some(Abandonment), Some(Abandonment), Some(Abandonment)],
        );
        let sessions = vec![s1, s2];
        let pooled = corpus_aggregate(&sessions, 2, AggregationMode::PoolCounts, 0.2).unwrap();
        let mean = corpus_aggregate(&sessions, 2, AggregationMode::PerSessionMean, 0.2).unwrap();
        assert!((pooled.summary.success_rate.unwrap() - 0.4).abs() < TOL);
        assert!((mean.summary.success_rate.unwrap() - 0.625).abs() < TOL);
    }

    #[test]
    fn single_session_corpus_equals_session_metrics() {
        let session = restaurant_session();
        let m = session_metrics(&session, 2).unwrap();
        let report = corpus_aggregate(&[session], 2, AggregationMode::PoolCounts, 0.2).unwrap();
        assert_eq!(report.summary.success_rate, m.success_rate);
        assert!((report.summary.reform_rate - m.reform_rate).abs() < TOL);
        assert!((report.summary.fatigue_value - m.fatigue_value).abs() < TOL);
        assert!((report.summary.efficiency_rate - m.efficiency_rate).abs() < TOL);
        assert_eq!(report.summary.ue_score.is_some(), m.ue_score.is_some());
    }

    #[test]
    fn low_engagement_sessions_are_counted() {
        // R...R A: reform-heavy failure drives UE below 0.2.
        let bad = session_from_labels(
            "bad",
            &[Some(Reformulation), Some(Reformulation), Some(Reformulation), Some(Abandonment)],
        );
        let good = session_from_labels("good", &[Some(Fulfillment)]);
        let report = corpus_aggregate(&[bad, good], 2, AggregationMode::PoolCounts, 0.2).unwrap();
        assert_eq!(report.summary.n_low_engagement_sessions, 1);
    }

    #[test]
    fn undefined_success_sessions_are_counted_and_excluded() {
        let open = session_from_labels("open", &[Some(Continuation), Some(Continuation)]);
        let closed = session_from_labels("closed", &[Some(Fulfillment)]);
        let report = corpus_aggregate(&[open, closed], 2, AggregationMode::PoolCounts, 0.2).unwrap();
        assert_eq!(report.summary.n_sessions_success_undefined, 1);
        // The open session's tasks do not enter the success denominator.
        assert!((report.summary.success_rate.unwrap() - 1.0).abs() < TOL);
        // ...but they do enter fatigue: lengths (2, 1) with alpha 2 → 1.0.
        assert!((report.summary.fatigue_value - 1.0).abs() < TOL);
    }

    fn arb_label() -> impl Strategy<Value = EngagementLabel> {
        prop_oneof![
            Just(Fulfillment),
            Just(Continuation),
            Just(Reformulation),
            Just(Abandonment),
        ]
    }

    proptest! {
        #[test]
        fn efficiency_and_ue_stay_in_unit_interval(
            labels in proptest::collection::vec(arb_label(), 1..50),
            alpha in 1u32..6,
        ) {
            let wrapped: Vec<_> = labels.iter().map(|&l| Some(l)).collect();
            let m = session_metrics(&session_from_labels("p", &wrapped), alpha).unwrap();
            prop_assert!(m.fatigue_value >= 1.0 - TOL);
            prop_assert!((-TOL..=1.0 + TOL).contains(&m.efficiency_rate));
            if let Some(ue) = m.ue_score {
                prop_assert!((-TOL..=1.0 + TOL).contains(&ue));
            }
            if let (Some(s), Some(ue)) = (m.success_rate, m.ue_score) {
                prop_assert!((ue - (s + m.efficiency_rate) / 2.0).abs() < TOL);
            }
            prop_assert!((m.efficiency_rate - (1.0 - m.reform_rate) / m.fatigue_value).abs() < TOL);
        }

        #[test]
        fn metrics_depend_only_on_labels_and_alpha(
            labels in proptest::collection::vec(arb_label(), 1..30),
        ) {
            let wrapped: Vec<_> = labels.iter().map(|&l| Some(l)).collect();
            let mut renamed = session_from_labels("q", &wrapped);
            for utt in &mut renamed.utterances {
                utt.text = "completely different text".into();
            }
            let m1 = session_metrics(&session_from_labels("q", &wrapped), 2).unwrap();
            let m2 = session_metrics(&renamed, 2).unwrap();
            prop_assert_eq!(m1, m2);
        }

        #[test]
        fn inserting_a_reformulation_never_raises_efficiency(
            labels in proptest::collection::vec(arb_label(), 1..30),
            pos_seed in 0usize..29,
        ) {
            // Insert strictly before the final label so the trailing-task
            // outcome rule sees the same terminator.
            let pos = pos_seed % labels.len();
            let mut longer = labels.clone();
            longer.insert(pos, Reformulation);
            let base = session_metrics(
                &session_from_labels("b", &labels.iter().map(|&l| Some(l)).collect::<Vec<_>>()),
                2,
            ).unwrap();
            let bumped = session_metrics(
                &session_from_labels("b", &longer.iter().map(|&l| Some(l)).collect::<Vec<_>>()),
                2,
            ).unwrap();
            prop_assert!(bumped.efficiency_rate <= base.efficiency_rate + TOL);
        }

        #[test]
        fn lengthening_a_task_never_lowers_fatigue(
            lengths in proptest::collection::vec(1usize..8, 1..10),
            which in 0usize..10,
            alpha in 1u32..5,
        ) {
            let make_spans = |lengths: &[usize]| {
                let mut spans = Vec::new();
                let mut start = 0;
                for &len in lengths {
                    spans.push(TaskSpan {
                        first_user_turn: start,
                        last_user_turn: start + len - 1,
                        outcome: TaskOutcome::Success,
                    });
                    start += len;
                }
                spans
            };
            let mut bumped = lengths.clone();
            let idx = which % lengths.len();
            bumped[idx] += 1;
            let f0 = fatigue_value(&make_spans(&lengths), alpha).unwrap();
            let f1 = fatigue_value(&make_spans(&bumped), alpha).unwrap();
            prop_assert!(f1 >= f0 - TOL);
        }
    }
}
