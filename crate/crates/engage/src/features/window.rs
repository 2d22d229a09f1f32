//! Context windows: which utterances around a target user utterance the
//! feature extractors may look at.

use serde::{Deserialize, Serialize};

use crate::dialogue::{Session, Speaker};
use crate::error::{Error, Result};

/// How much context surrounds the target utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSetting {
    /// Target user utterance only.
    CurUtt,
    /// Target plus the following system utterance.
    Cur,
    /// Target, following system utterance, and following user utterance.
    Next,
    /// Preceding user and system utterances plus the target.
    Prev,
    /// All five slots.
    All,
}

impl ContextSetting {
    pub const ALL_SETTINGS: [ContextSetting; 5] = [
        ContextSetting::CurUtt,
        ContextSetting::Cur,
        ContextSetting::Next,
        ContextSetting::Prev,
        ContextSetting::All,
    ];

    /// Slots this setting exposes, in chronological order.
    pub fn slots(self) -> &'static [Slot] {
        match self {
            ContextSetting::CurUtt => &[Slot::UserCur],
            ContextSetting::Cur => &[Slot::UserCur, Slot::SysNext],
            ContextSetting::Next => &[Slot::UserCur, Slot::SysNext, Slot::UserNext],
            ContextSetting::Prev => &[Slot::UserPrev, Slot::SysPrev, Slot::UserCur],
            ContextSetting::All => &[
                Slot::UserPrev,
                Slot::SysPrev,
                Slot::UserCur,
                Slot::SysNext,
                Slot::UserNext,
            ],
        }
    }

    /// Adjacent user slots compared against the target for similarity
    /// features. The two narrowest settings carry none.
    pub fn similarity_slots(self) -> &'static [Slot] {
        match self {
            ContextSetting::CurUtt | ContextSetting::Cur => &[],
            ContextSetting::Next => &[Slot::UserNext],
            ContextSetting::Prev => &[Slot::UserPrev],
            ContextSetting::All => &[Slot::UserPrev, Slot::UserNext],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ContextSetting::CurUtt => "cur_utt",
            ContextSetting::Cur => "cur",
            ContextSetting::Next => "next",
            ContextSetting::Prev => "prev",
            ContextSetting::All => "all",
        }
    }
}

impl std::str::FromStr for ContextSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "cur_utt" => Ok(ContextSetting::CurUtt),
            "cur" => Ok(ContextSetting::Cur),
            "next" => Ok(ContextSetting::Next),
            "prev" => Ok(ContextSetting::Prev),
            "all" => Ok(ContextSetting::All),
            other => Err(Error::Config(format!("unknown context setting {other:?}"))),
        }
    }
}

/// One position in a context window. `Global` is not a real slot: it tags
/// registry columns derived from the whole window (position features,
/// similarity features).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    #[serde(rename = "user_utt_-1")]
    UserPrev,
    #[serde(rename = "sys_utt_-1")]
    SysPrev,
    #[serde(rename = "user_utt_0")]
    UserCur,
    #[serde(rename = "sys_utt_+1")]
    SysNext,
    #[serde(rename = "user_utt_+1")]
    UserNext,
    #[serde(rename = "global")]
    Global,
}

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::UserPrev => "user_utt_-1",
            Slot::SysPrev => "sys_utt_-1",
            Slot::UserCur => "user_utt_0",
            Slot::SysNext => "sys_utt_+1",
            Slot::UserNext => "user_utt_+1",
            Slot::Global => "global",
        }
    }

    pub fn is_user(self) -> bool {
        matches!(self, Slot::UserPrev | Slot::UserCur | Slot::UserNext)
    }
}

impl std::fmt::Display for Slot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Text of one utterance occupying a window slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotText {
    /// Index of the utterance within its session.
    pub utterance_index: usize,
    /// Stable id used to join sidecar annotations: `<session_id>:<index>`.
    pub utterance_id: String,
    pub text: String,
}

/// The context a single training/prediction row is built from.
///
/// Only slots belonging to `setting` are ever populated; slots that fall off
/// the session boundary stay `None` (extractors emit presence flags for
/// them). Labels are deliberately absent from this type: feature extraction
/// must not see them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub setting: ContextSetting,
    pub user_prev: Option<SlotText>,
    pub sys_prev: Option<SlotText>,
    pub user_cur: SlotText,
    pub sys_next: Option<SlotText>,
    pub user_next: Option<SlotText>,
    /// 0-based ordinal of the target among the session's user utterances.
    pub user_turn: usize,
    /// Total user utterances in the session.
    pub total_user_turns: usize,
}

impl ContextWindow {
    pub fn slot(&self, slot: Slot) -> Option<&SlotText> {
        match slot {
            Slot::UserPrev => self.user_prev.as_ref(),
            Slot::SysPrev => self.sys_prev.as_ref(),
            Slot::UserCur => Some(&self.user_cur),
            Slot::SysNext => self.sys_next.as_ref(),
            Slot::UserNext => self.user_next.as_ref(),
            Slot::Global => None,
        }
    }

    /// The setting's slots paired with their text where present.
    pub fn in_scope_slots(&self) -> impl Iterator<Item = (Slot, Option<&SlotText>)> {
        self.setting.slots().iter().map(|&s| (s, self.slot(s)))
    }

    pub fn is_dialogue_start(&self) -> bool {
        self.user_turn == 0
    }

    pub fn is_dialogue_end(&self) -> bool {
        self.user_turn + 1 == self.total_user_turns
    }

    /// Human-readable transcript of the window, one line per textual slot,
    /// used by failure exports and CLI inspection output.
    pub fn render(&self) -> String {
        let mut lines = Vec::new();
        for (slot, text) in self.in_scope_slots() {
            if slot == Slot::Global {
                continue;
            }
            match text {
                Some(t) => lines.push(format!("{}: {}", slot.name(), t.text)),
                None => lines.push(format!("{}: <absent>", slot.name())),
            }
        }
        lines.join("\n")
    }
}

/// Build the context window for the `user_turn`-th user utterance
/// (0-based) of a session.
///
/// The target must exist and carry a label; neighbouring slots are the
/// nearest user/system utterances on each side, left absent past the
/// session boundary or outside the setting.
pub fn build_context(session: &Session, user_turn: usize, setting: ContextSetting) -> Result<ContextWindow> {
    let user_indices: Vec<usize> = session
        .utterances
        .iter()
        .filter(|u| u.speaker == Speaker::User)
        .map(|u| u.index)
        .collect();
    let total_user_turns = user_indices.len();
    let Some(&target_index) = user_indices.get(user_turn) else {
        return Err(Error::InvalidInput(format!(
            "session {}: user turn {} out of range (have {})",
            session.id, user_turn, total_user_turns
        )));
    };
    let target = &session.utterances[target_index];
    if target.label.is_none() {
        return Err(Error::InvalidInput(format!(
            "session {}: user turn {} is unlabeled",
            session.id, user_turn
        )));
    }

    fn nearest(
        session: &Session,
        range: impl Iterator<Item = usize>,
        speaker: Speaker,
    ) -> Option<SlotText> {
        let mut range = range;
        range
            .find(|&i| session.utterances[i].speaker == speaker)
            .map(|index| SlotText {
                utterance_index: index,
                utterance_id: format!("{}:{}", session.id, index),
                text: session.utterances[index].text.clone(),
            })
    }
    let slot_text = |index: usize| SlotText {
        utterance_index: index,
        utterance_id: format!("{}:{}", session.id, index),
        text: session.utterances[index].text.clone(),
    };

    let wants = |slot: Slot| setting.slots().contains(&slot);
    let after = target_index + 1..session.utterances.len();
    let user_prev = wants(Slot::UserPrev)
        .then(|| nearest(session, (0..target_index).rev(), Speaker::User))
        .flatten();
    let sys_prev = wants(Slot::SysPrev)
        .then(|| nearest(session, (0..target_index).rev(), Speaker::System))
        .flatten();
    let sys_next = wants(Slot::SysNext)
        .then(|| nearest(session, after.clone(), Speaker::System))
        .flatten();
    let user_next = wants(Slot::UserNext)
        .then(|| nearest(session, after, Speaker::User))
        .flatten();

    Ok(ContextWindow {
        setting,
        user_prev,
        sys_prev,
        user_cur: slot_text(target_index),
        sys_next,
        user_next,
        user_turn,
        total_user_turns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::restaurant_session;

    fn text_of(slot: &Option<SlotText>) -> Option<&str> {
        slot.as_ref().map(|s| s.text.as_str())
    }

    #[test]
    fn next_window_on_sixth_user_turn() {
        // 1-based turn #6 is the first "Postcode" request; the user repeats
        // it verbatim after the system's unhelpful reply.
        let session = restaurant_session();
        let w = build_context(&session, 5, ContextSetting::Next).unwrap();
        assert_eq!(w.user_cur.text, "Postcode");
        assert!(text_of(&w.sys_next).unwrap().starts_with("Golden wok is a nice"));
        assert_eq!(text_of(&w.user_next), Some("Postcode"));
        // Slots outside the setting stay empty even though the session has them.
        assert_eq!(w.user_prev, None);
        assert_eq!(w.sys_prev, None);
    }

    #[test]
    fn prev_window_on_first_user_turn_has_one_previous_slot() {
        // The session opens with a system greeting, so the first user turn
        // has a previous system utterance but no previous user utterance.
        let session = restaurant_session();
        let w = build_context(&session, 0, ContextSetting::Prev).unwrap();
        assert_eq!(w.user_cur.text, "Moderately priced");
        assert_eq!(w.user_prev, None);
        assert!(text_of(&w.sys_prev).unwrap().starts_with("Hello, welcome"));
        assert!(w.is_dialogue_start());
        assert!(!w.is_dialogue_end());
    }

    #[test]
    fn next_window_on_last_labeled_turn_still_sees_the_goodbye() {
        // User turn 6 ("Postcode", labeled A) is followed by the unlabeled
        // goodbye, which fills user_utt_+1.
        let session = restaurant_session();
        let w = build_context(&session, 6, ContextSetting::Next).unwrap();
        assert_eq!(text_of(&w.user_next), Some("Thank you good bye"));
        assert!(!w.is_dialogue_end());
        assert_eq!(w.total_user_turns, 8);
    }

    #[test]
    fn boundary_slots_are_absent() {
        // Strip the trailing goodbye so the A-labeled turn is the last user
        // turn: NEXT then has no user_utt_+1 but keeps the system reply.
        let mut session = restaurant_session();
        session.utterances.truncate(15);
        let w = build_context(&session, 6, ContextSetting::Next).unwrap();
        assert_eq!(w.user_next, None);
        assert!(w.sys_next.is_some());
        assert!(w.is_dialogue_end());
    }

    #[test]
    fn cur_utt_setting_has_only_the_target() {
        let session = restaurant_session();
        let w = build_context(&session, 3, ContextSetting::CurUtt).unwrap();
        assert_eq!(w.user_cur.text, "Address");
        assert!(w.user_prev.is_none() && w.sys_prev.is_none());
        assert!(w.sys_next.is_none() && w.user_next.is_none());
        assert_eq!(w.user_cur.utterance_id, "restaurant-1:7");
    }

    #[test]
    fn all_setting_fills_every_available_slot() {
        let session = restaurant_session();
        let w = build_context(&session, 3, ContextSetting::All).unwrap();
        assert_eq!(text_of(&w.user_prev), Some("Moderate"));
        assert!(text_of(&w.sys_prev).unwrap().starts_with("Golden wok"));
        assert!(text_of(&w.sys_next).unwrap().starts_with("Sure , golden wok"));
        assert_eq!(text_of(&w.user_next), Some("Phone number"));
    }

    #[test]
    fn out_of_range_and_unlabeled_turns_are_rejected() {
        let session = restaurant_session();
        assert!(build_context(&session, 99, ContextSetting::Cur).is_err());
        // User turn 7 is the unlabeled goodbye.
        assert!(build_context(&session, 7, ContextSetting::Cur).is_err());
    }

    #[test]
    fn similarity_slots_follow_the_setting() {
        assert!(ContextSetting::CurUtt.similarity_slots().is_empty());
        assert!(ContextSetting::Cur.similarity_slots().is_empty());
        assert_eq!(ContextSetting::Next.similarity_slots(), &[Slot::UserNext]);
        assert_eq!(ContextSetting::Prev.similarity_slots(), &[Slot::UserPrev]);
        assert_eq!(
            ContextSetting::All.similarity_slots(),
            &[Slot::UserPrev, Slot::UserNext]
        );
    }

    #[test]
    fn setting_names_round_trip() {
        for setting in ContextSetting::ALL_SETTINGS {
            let parsed: ContextSetting = setting.name().parse().unwrap();
            assert_eq!(parsed, setting);
        }
        assert!("sideways".parse::<ContextSetting>().is_err());
    }
}
