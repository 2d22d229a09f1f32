//! Shared fixtures for unit tests.

use crate::dialogue::{EngagementLabel, Session, Speaker, Utterance};

/// The annotated Cambridge restaurant-inquiry session used as a worked
/// example across the crate: 8 user turns (7 labeled R,C,F,F,F,R,A) and 8
/// system turns, alternating system-first.
pub fn restaurant_session() -> Session {
    use EngagementLabel::*;
    let turns: Vec<(Speaker, &str, Option<EngagementLabel>)> = vec![
        (
            Speaker::System,
            "Hello, welcome to the Cambridge restaurant system? You can ask for restaurants by area, price range or food type. How may I help you?",
            None,
        ),
        (Speaker::User, "Moderately priced", Some(Reformulation)),
        (Speaker::System, "What part of town do you have in mind?", None),
        (Speaker::User, "North", Some(Continuation)),
        (
            Speaker::System,
            "Would you like something in the cheap, moderate, or expensive price range?",
            None,
        ),
        (Speaker::User, "Moderate", Some(Fulfillment)),
        (
            Speaker::System,
            "Golden wok is a nice restaurant in the north of town in the moderate price range",
            None,
        ),
        (Speaker::User, "Address", Some(Fulfillment)),
        (Speaker::System, "Sure , golden wok is on 191 Histon Road Chesterton", None),
        (Speaker::User, "Phone number", Some(Fulfillment)),
        (Speaker::System, "The phone number of golden wok is 01223 350688", None),
        (Speaker::User, "Postcode", Some(Reformulation)),
        (
            Speaker::System,
            "Golden wok is a nice restaurant in the north of town in the moderate price range",
            None,
        ),
        (Speaker::User, "Postcode", Some(Abandonment)),
        (
            Speaker::System,
            "Golden wok is a nice restaurant in the north of town in the moderate price range",
            None,
        ),
        (Speaker::User, "Thank you good bye", None),
    ];
    let utterances = turns
        .into_iter()
        .enumerate()
        .map(|(i, (speaker, text, label))| Utterance {
            index: i,
            speaker,
            text: text.to_string(),
            timestamp: None,
            label,
        })
        .collect();
    Session::new("restaurant-1", "restaurant", utterances)
}
