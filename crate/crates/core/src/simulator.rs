//! Role-playing dialog generation: synthetic passengers talk to the
//! assistant, and a judge keeps only good dialogs.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialog::{ModelChoice, ModelTier};
use crate::engine::{Assistant, EngineError};
use crate::eval::{score_response_with, DEFAULT_THRESHOLD};
use crate::geo::PoiDatabase;
use crate::llm::{Completion, Message, PromptBundle};
use crate::model::{ConversationGoal, DialogSession, Poi, Role, TripOrder, TurnRecord};

pub const DEFAULT_MAX_ROUNDS: u32 = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub occupation: String,
    pub age: u32,
}

/// What synthetic profiles are drawn from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSchema {
    pub occupations: Vec<String>,
    pub min_age: u32,
    pub max_age: u32,
}

impl Default for ProfileSchema {
    fn default() -> Self {
        let occupations =
            ["Lawyer", "Teacher", "Nurse", "Software engineer", "Student", "Chef", "Accountant", "Retiree"];
        Self { occupations: occupations.iter().map(|s| s.to_string()).collect(), min_age: 18, max_age: 75 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub profile: Profile,
    pub goal: ConversationGoal,
    pub intent: String,
    pub start: Poi,
    pub end: Poi,
    #[serde(with = "crate::timefmt")]
    pub timestamp: NaiveDateTime,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<crate::model::Coord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogRecord {
    pub scenario: Scenario,
    pub session: DialogSession,
    #[serde(default)]
    pub quality: Option<u8>,
    #[serde(default)]
    pub kept: bool,
    #[serde(default)]
    pub max_rounds_exceeded: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("the POI database needs at least two entries")]
    InsufficientPois,
    #[error("the record has no rounds to judge")]
    EmptyRecord,
    #[error("the profile schema has no occupations or an empty age range")]
    BadSchema,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

const TIME_PHRASES: [&str; 6] = [
    "",
    "tomorrow at 9 am",
    "tomorrow morning",
    "day after tomorrow at 6 pm",
    "next friday at 8:30 am",
    "this evening",
];

fn intent_script(goal: ConversationGoal, start: &str, end: &str, other: &str, when: &str) -> Vec<String> {
    let when = if when.is_empty() { String::new() } else { alloc::format!(" {when}") };
    let ride = alloc::format!("Take me from {start} to {end}{when}.");
    let lines: Vec<String> = match goal {
        ConversationGoal::CreateOrder => alloc::vec![ride, "Great, thank you.".into()],
        ConversationGoal::ModifyOrder => alloc::vec![
            alloc::format!("Take me from {start} to {other}{when}."),
            alloc::format!("Change the destination to {end} instead."),
        ],
        ConversationGoal::ConfirmOrder => alloc::vec![ride, "Yes, confirm the order.".into()],
        ConversationGoal::CancelOrder => {
            alloc::vec![ride, "Yes, confirm the order.".into(), "Sorry, please cancel it.".into()]
        }
        ConversationGoal::PolicyInquiry => alloc::vec!["How many car types can I book now?".into(), ride],
        ConversationGoal::ChitChat => alloc::vec!["Hello there!".into(), ride, "Thanks!".into()],
    };
    lines
}

/// Draws a scenario. Equal seeds give equal scenarios.
pub fn generate_scenario(seed: u64, db: &PoiDatabase, schema: &ProfileSchema) -> Result<Scenario, SimError> {
    let pois = db.entries();
    if pois.len() < 2 {
        return Err(SimError::InsufficientPois);
    }
    if schema.occupations.is_empty() || schema.min_age > schema.max_age {
        return Err(SimError::BadSchema);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let occupation = schema.occupations.choose(&mut rng).cloned().unwrap_or_default();
    let age = rng.gen_range(schema.min_age..=schema.max_age);
    let i = rng.gen_range(0..pois.len());
    let mut j = rng.gen_range(0..pois.len() - 1);
    if j >= i {
        j += 1;
    }
    let mut k = rng.gen_range(0..pois.len());
    if k == i || k == j {
        k = (0..pois.len()).find(|x| *x != i && *x != j).unwrap_or(j);
    }
    let goal = ConversationGoal::ALL[rng.gen_range(0..ConversationGoal::ALL.len())];
    let when = TIME_PHRASES[rng.gen_range(0..TIME_PHRASES.len())];
    let day = NaiveDate::from_ymd_opt(2024, 8, 1).expect("valid date") + Duration::days(rng.gen_range(0..60));
    let timestamp = day.and_hms_opt(rng.gen_range(6..20), [0, 15, 30, 45][rng.gen_range(0..4)], 0).expect("valid time");
    let (start, end, other) = (pois[i].clone(), pois[j].clone(), pois[k].clone());
    let script = intent_script(goal, &start.display_name, &end.display_name, &other.display_name, when);
    let intent = alloc::format!(
        "{}: travel from {} to {}{}",
        goal.as_str(),
        start.display_name,
        end.display_name,
        if when.is_empty() { String::new() } else { alloc::format!(", {when}") }
    );
    Ok(Scenario {
        profile: Profile { occupation, age },
        goal,
        intent,
        start,
        end,
        timestamp,
        seed,
        script: Some(script),
        device: None,
    })
}

/// The passenger side of a simulated dialog.
pub trait UserAgent {
    /// The next utterance, or `None` when the passenger is done.
    fn next_utterance(&mut self, scenario: &Scenario, session: &DialogSession) -> Option<String>;
}

/// Replays a fixed list of utterances, then stops.
#[derive(Clone, Debug, Default)]
pub struct ScriptedUser {
    pub lines: Vec<String>,
    cursor: usize,
}

impl ScriptedUser {
    pub fn new(lines: Vec<String>) -> Self {
        Self { lines, cursor: 0 }
    }

    pub fn from_scenario(scenario: &Scenario) -> Self {
        Self::new(scenario.script.clone().unwrap_or_default())
    }
}

impl UserAgent for ScriptedUser {
    fn next_utterance(&mut self, _: &Scenario, _: &DialogSession) -> Option<String> {
        let line = self.lines.get(self.cursor).cloned();
        self.cursor += 1;
        line
    }
}

pub const DONE_MARKER: &str = "[DONE]";

/// Role-plays the passenger with a hosted model. The model answers with
/// the next utterance, or [`DONE_MARKER`] to end the dialog.
pub struct ModelUser {
    pub backend: Arc<dyn Completion>,
    pub choice: ModelChoice,
}

impl ModelUser {
    pub fn new(backend: Arc<dyn Completion>, endpoint_key: impl Into<String>) -> Self {
        Self {
            backend,
            choice: ModelChoice { tier: ModelTier::Large, endpoint_key: endpoint_key.into(), fine_tuned: false },
        }
    }

    fn prompt(scenario: &Scenario, session: &DialogSession) -> PromptBundle {
        let system = alloc::format!(
            "### stage: user_simulation\nYou are a passenger using a ride-hailing assistant.\n\
             Profile: {}, {} years old.\nIntent: {}\nCurrent time: {}\n\
             Speak one short message at a time. Reply with {DONE_MARKER} once your intent is fulfilled.",
            scenario.profile.occupation,
            scenario.profile.age,
            scenario.intent,
            crate::timefmt::format(&scenario.timestamp),
        );
        // Roles are mirrored: the assistant's replies are the model's input.
        let mut messages = alloc::vec![Message { role: Role::User, text: "Hello, where would you like to go?".into() }];
        for t in &session.turns {
            messages.push(Message { role: Role::Assistant, text: t.user.text.clone() });
            messages.push(Message { role: Role::User, text: t.assistant.text.clone() });
        }
        PromptBundle::new(system, messages)
    }
}

impl UserAgent for ModelUser {
    fn next_utterance(&mut self, scenario: &Scenario, session: &DialogSession) -> Option<String> {
        let text = self.backend.complete(&self.choice, &Self::prompt(scenario, session)).ok()?;
        let text = text.trim();
        (!text.is_empty() && !text.contains(DONE_MARKER)).then(|| text.to_string())
    }
}

/// Anything that can take one user turn.
pub trait TurnHandler {
    fn take_turn(&self, session: &mut DialogSession, text: &str, now: NaiveDateTime)
        -> Result<TurnRecord, EngineError>;
}

impl TurnHandler for Assistant {
    fn take_turn(
        &self,
        session: &mut DialogSession,
        text: &str,
        now: NaiveDateTime,
    ) -> Result<TurnRecord, EngineError> {
        self.handle_turn(session, text, now).map(|o| o.record)
    }
}

/// Alternates passenger and assistant until the passenger stops or the cap
/// is reached. Each round happens one minute after the previous one.
pub fn run_session(
    scenario: &Scenario,
    assistant: &dyn TurnHandler,
    user: &mut dyn UserAgent,
    max_rounds: u32,
) -> Result<DialogRecord, SimError> {
    let id = alloc::format!("sim-{}", scenario.seed);
    let mut session = DialogSession::new(id, scenario.timestamp, scenario.device.or(Some(scenario.start.coord())));
    let mut exceeded = false;
    while let Some(text) = user.next_utterance(scenario, &session) {
        if session.turns.len() as u32 >= max_rounds {
            exceeded = true;
            break;
        }
        let now = scenario.timestamp + Duration::minutes(session.turns.len() as i64);
        assistant.take_turn(&mut session, &text, now)?;
    }
    Ok(DialogRecord { scenario: scenario.clone(), session, quality: None, kept: false, max_rounds_exceeded: exceeded })
}

pub enum Judge<'a> {
    Rubric,
    /// Asks a model for a 0 to 5 score per round.
    Model {
        backend: &'a dyn Completion,
        choice: ModelChoice,
    },
}

/// Zero when the model is unreachable or answers without a digit.
pub fn model_score(backend: &dyn Completion, choice: &ModelChoice, turn: &TurnRecord) -> u8 {
    let system = "### stage: judge\nScore the assistant response from 0 to 5 for accuracy, relevance, \
                  consistency with the order and tool results, and concision. Answer with the number only.";
    let body = alloc::format!(
        "User: {}\nOutcome: {}\nAssistant: {}",
        turn.user.text,
        serde_json::to_string(&turn.outcome).unwrap_or_default(),
        turn.assistant.text
    );
    let bundle = PromptBundle::new(system, alloc::vec![Message { role: Role::User, text: body }]);
    backend
        .complete(choice, &bundle)
        .ok()
        .and_then(|t| t.trim().chars().find(char::is_ascii_digit))
        .and_then(|c| c.to_digit(10))
        .map_or(0, |d| d.min(5) as u8)
}

/// Scores every round and keeps the record when its worst round reaches
/// the threshold.
pub fn quality_filter(mut record: DialogRecord, judge: &Judge<'_>, threshold: u8) -> Result<DialogRecord, SimError> {
    if record.session.turns.is_empty() {
        return Err(SimError::EmptyRecord);
    }
    let mut current: Option<TripOrder> = None;
    let mut worst = 5u8;
    for turn in &record.session.turns {
        if let Some(o) = &turn.order_snapshot {
            current = Some(o.clone());
        }
        let score = match judge {
            Judge::Rubric => score_response_with(turn, current.as_ref(), None).unwrap_or(0),
            Judge::Model { backend, choice } => model_score(*backend, choice, turn),
        };
        worst = worst.min(score);
    }
    record.quality = Some(worst);
    record.kept = worst >= threshold && !record.max_rounds_exceeded;
    Ok(record)
}

/// Generates, runs and filters `count` scenarios with seeds `seed..seed+count`.
pub fn simulate_corpus(
    seed: u64,
    count: u64,
    db: &PoiDatabase,
    schema: &ProfileSchema,
    assistant: &dyn TurnHandler,
    judge: &Judge<'_>,
    threshold: Option<u8>,
) -> Result<Vec<DialogRecord>, SimError> {
    let threshold = threshold.unwrap_or(DEFAULT_THRESHOLD);
    (seed..seed + count)
        .map(|s| {
            let scenario = generate_scenario(s, db, schema)?;
            let mut user = ScriptedUser::from_scenario(&scenario);
            let record = run_session(&scenario, assistant, &mut user, DEFAULT_MAX_ROUNDS)?;
            if record.session.turns.is_empty() {
                return Ok(record);
            }
            quality_filter(record, judge, threshold)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::RoutePlanner;
    use crate::heuristic::HeuristicModel;
    use crate::kb::index_kb;

    fn db() -> PoiDatabase {
        PoiDatabase::new(alloc::vec![
            Poi::new("Guangdong Museum East Gate", 23.1155, 113.3300, 1001),
            Poi::new("Terminal T2 of Guangzhou Baiyun international airport", 23.3672, 113.2998, 2506217808),
            Poi::new("Canton Tower", 23.1066, 113.3245, 1002),
            Poi::new("Zhujiang New Town Library", 23.1170, 113.3260, 1003),
        ])
        .unwrap()
    }

    fn assistant() -> Assistant {
        let kb = index_kb(r#"{"question":"How many car types can I book now?","answer":"You can choose Express, Premier, Luxe or Taxi.","id":"car-types"}"#).unwrap();
        Assistant::new(Arc::new(db()), Arc::new(RoutePlanner::default()), Arc::new(kb), Arc::new(HeuristicModel))
    }

    struct Endless;
    impl UserAgent for Endless {
        fn next_utterance(&mut self, _: &Scenario, _: &DialogSession) -> Option<String> {
            Some("Hello there!".into())
        }
    }

    #[test]
    fn scenarios_are_seeded() {
        let a = generate_scenario(42, &db(), &ProfileSchema::default()).unwrap();
        assert_eq!(a, generate_scenario(42, &db(), &ProfileSchema::default()).unwrap());
        assert_ne!(a.start.id, a.end.id);
        let one = PoiDatabase::new(alloc::vec![Poi::new("Canton Tower", 23.1066, 113.3245, 1002)]).unwrap();
        assert_eq!(generate_scenario(1, &one, &ProfileSchema::default()), Err(SimError::InsufficientPois));
    }

    #[test]
    fn empty_script_and_cap() {
        let s = generate_scenario(7, &db(), &ProfileSchema::default()).unwrap();
        let a = assistant();
        let r = run_session(&s, &a, &mut ScriptedUser::new(Vec::new()), DEFAULT_MAX_ROUNDS).unwrap();
        assert!(r.session.turns.is_empty() && !r.kept);
        assert_eq!(quality_filter(r, &Judge::Rubric, 4), Err(SimError::EmptyRecord));
        let r = run_session(&s, &a, &mut Endless, DEFAULT_MAX_ROUNDS).unwrap();
        assert!(r.max_rounds_exceeded);
        assert_eq!(r.session.turns.len(), 8);
    }

    #[test]
    fn corpus_is_reproducible_and_filter_is_consistent() {
        let a = assistant();
        let run = || simulate_corpus(0, 12, &db(), &ProfileSchema::default(), &a, &Judge::Rubric, None).unwrap();
        let first = run();
        assert_eq!(first, run());
        for r in &first {
            assert_eq!(r.kept, r.quality.is_some_and(|q| q >= DEFAULT_THRESHOLD) && !r.max_rounds_exceeded);
        }
    }
}
