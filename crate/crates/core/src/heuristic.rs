//! A deterministic stand-in for the hosted models.
//!
//! [`HeuristicModel`] reads the `### stage:` header of a prompt and the
//! context block of its final message, then answers the way a fine-tuned
//! model is expected to: a goal label, tool calls, a replier label or a
//! templated reply. It needs no network and makes the whole pipeline
//! reproducible.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{json, Map, Value};

use crate::dialog::{select_replier, ModelChoice, ReplierKind};
use crate::kb::QaPair;
use crate::llm::{Completion, GatewayError, PromptBundle};
use crate::model::{ConversationGoal, OrderState, Slot, TripOrder};
use crate::planner::OutcomeKind;
use crate::prompt::{self, KEY_ORDER, KEY_OUTCOME, KEY_PENDING, KEY_RETRIEVED};
use crate::temporal::weekday_abbrev;
use crate::text;

pub const CONFIRM_CTA: &str = "Click the 'Confirm' button to place this order.";

const KNOWLEDGE_MARKERS: &[&str] = &[
    "policy",
    "policies",
    "how many",
    "restaurant",
    "restaurants",
    "traffic",
    "refund",
    "fee",
    "fees",
    "rule",
    "rules",
    "restriction",
    "restrictions",
    "table",
    "weather",
    "luggage",
    "pet",
    "pets",
    "invoice",
    "insurance",
];
const CANCEL_MARKERS: &[&str] = &["cancel", "call it off", "never mind"];
const CONFIRM_MARKERS: &[&str] = &["confirm", "yes", "go ahead", "sounds good", "place the order", "place it"];
const MODIFY_MARKERS: &[&str] = &["change", "instead", "modify", "make it", "switch", "update", "rather"];
const CREATE_MARKERS: &[&str] = &[
    "go to",
    "take me",
    "ride",
    "book",
    "from",
    "pick me up",
    "drive me",
    "get me",
    "head to",
    "going to",
    "get to",
    "taxi",
    "car to",
    "trip",
    "arrive at",
];
const CAR_TYPES: &[&str] = &["express", "premier", "luxe", "taxi"];
const GREETINGS: &[&str] = &["hello", "hi", "hey", "thanks", "thank you", "good morning", "good evening"];

fn any_word(text: &str, words: &[&str]) -> bool {
    words.iter().any(|w| text::contains_word_ci(text, w))
}

/// Keyword classifier used when the model answer is unusable and by the
/// heuristic backend. Earlier rules win: knowledge questions, then cancel,
/// confirm, modify, create, and finally small talk.
pub fn lexicon_goal(query: &str, pending: &[&str]) -> ConversationGoal {
    let order_words = any_word(query, CANCEL_MARKERS)
        || any_word(query, CONFIRM_MARKERS)
        || any_word(query, MODIFY_MARKERS)
        || any_word(query, CREATE_MARKERS)
        || pick_candidate(query, pending).is_some();
    if any_word(query, KNOWLEDGE_MARKERS)
        || (query.trim_end().ends_with('?') && !order_words && !any_word(query, GREETINGS))
    {
        return ConversationGoal::PolicyInquiry;
    }
    if any_word(query, CANCEL_MARKERS) {
        return ConversationGoal::CancelOrder;
    }
    if any_word(query, CONFIRM_MARKERS) {
        return ConversationGoal::ConfirmOrder;
    }
    if any_word(query, MODIFY_MARKERS) {
        return ConversationGoal::ModifyOrder;
    }
    if any_word(query, CREATE_MARKERS) || pick_candidate(query, pending).is_some() || mentions_destination(query) {
        return ConversationGoal::CreateOrder;
    }
    ConversationGoal::ChitChat
}

fn mentions_destination(query: &str) -> bool {
    to_phrases(&query.to_ascii_lowercase()).next().is_some()
}

/// Index of the candidate the query picks, by ordinal or by the tokens
/// that tell the candidates apart.
pub fn pick_candidate(query: &str, candidates: &[&str]) -> Option<usize> {
    if candidates.is_empty() {
        return None;
    }
    let q = text::token_set(query);
    for (word, idx) in [("first", 0usize), ("1st", 0), ("second", 1), ("2nd", 1), ("third", 2), ("3rd", 2)] {
        if q.iter().any(|t| t == word) && idx < candidates.len() {
            return Some(idx);
        }
    }
    if q.iter().any(|t| t == "last") {
        return Some(candidates.len() - 1);
    }
    let sets: Vec<Vec<String>> = candidates.iter().map(|c| text::token_set(c)).collect();
    let scores: Vec<usize> = sets
        .iter()
        .map(|set| {
            set.iter()
                .filter(|t| sets.iter().filter(|s| s.contains(t)).count() < sets.len())
                .filter(|t| q.contains(t))
                .count()
        })
        .collect();
    let best = *scores.iter().max()?;
    if best == 0 || scores.iter().filter(|s| **s == best).count() > 1 {
        return None;
    }
    scores.iter().position(|s| *s == best)
}

/// Words that follow an infinitive "to" rather than a place.
const VERBS_AFTER_TO: &[&str] = &[
    "go", "book", "get", "be", "make", "change", "switch", "ride", "take", "have", "order", "place", "head", "travel",
    "arrive", "leave", "catch", "visit", "know", "ask", "confirm", "cancel", "modify", "see", "reach", "come", "pick",
    "use", "call", "depart", "eat", "find", "drive", "fly", "meet", "return", "stay", "update", "try", "do", "like",
    "want", "hear", "there", "me",
];
const BOUNDARY_WORDS: &[&str] = &[
    "to",
    "from",
    "via",
    "through",
    "instead",
    "please",
    "then",
    "with",
    "for",
    "by",
    "before",
    "at",
    "and then",
    "and book",
    "and i",
    "and make",
    "and please",
    "so",
    "but",
    "because",
    "which",
    "in a",
    "in an",
    "using",
];
const START_MARKERS: &[&str] = &[
    "pick me up at",
    "pick me up from",
    "pick up at",
    "pick up from",
    "pickup at",
    "pickup from",
    "starting from",
    "start from",
    "leaving from",
    "i am at",
    "i'm at",
    "from",
];
const VIA_MARKERS: &[&str] = &["stopping at", "stop by", "stop at", "passing", "via", "through"];
const END_MARKERS: &[&str] = &["arrive at", "destination is", "drop me off at", "drop me at", "drop off at"];

/// Text from `at` up to the first punctuation mark or boundary word.
fn phrase_at(lower: &str, at: usize) -> Option<(usize, usize)> {
    let rest = &lower[at..];
    let mut end = rest.find(['.', ',', '!', '?', ';', '\n']).unwrap_or(rest.len());
    for w in BOUNDARY_WORDS {
        if let Some(i) = text::find_word_ci(&rest[..end], w) {
            end = end.min(i);
        }
    }
    let raw = &rest[..end];
    let lead = raw.len() - raw.trim_start().len();
    let mut s = at + lead;
    let e = at + raw.trim_end().len();
    for article in ["the ", "a ", "an "] {
        if lower[s..e].starts_with(article) {
            s += article.len();
        }
    }
    (s < e).then_some((s, e))
}

fn is_car_phrase(phrase: &str) -> bool {
    CAR_TYPES.iter().any(|c| phrase == *c || phrase.strip_suffix(" car").is_some_and(|p| p == *c))
}

/// Place phrases introduced by "to", skipping infinitives and car types.
fn to_phrases(lower: &str) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut from = 0;
    core::iter::from_fn(move || loop {
        let at = from + text::find_word_ci(lower.get(from..)?, "to")?;
        from = at + 2;
        let after = lower[from..].trim_start();
        let next_word: String = after.chars().take_while(|c| c.is_alphanumeric() || *c == '\'').collect();
        if next_word.is_empty() || VERBS_AFTER_TO.contains(&next_word.as_str()) {
            continue;
        }
        if let Some((s, e)) = phrase_at(lower, from) {
            if !is_car_phrase(&lower[s..e]) && !text::content_tokens(&lower[s..e]).is_empty() {
                return Some((s, e));
            }
        }
    })
}

fn marker_phrase(lower: &str, markers: &[&str]) -> Option<(usize, usize)> {
    markers.iter().find_map(|m| {
        let at = text::find_word_ci(lower, m)?;
        phrase_at(lower, at + m.len()).filter(|(s, e)| !is_car_phrase(&lower[*s..*e]))
    })
}

/// Date and time arguments for the time tools, in canonical grammar form.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TimeMention {
    pub date: String,
    pub time: String,
    pub arrival: bool,
}

struct Scan<'a> {
    lower: &'a str,
    words: Vec<(usize, usize)>,
}

impl<'a> Scan<'a> {
    fn new(lower: &'a str) -> Self {
        let mut words = Vec::new();
        let mut start = None;
        for (i, c) in lower.char_indices() {
            let word_char = c.is_alphanumeric() || c == ':' || c == '-' || c == '\'';
            match (word_char, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    words.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            words.push((s, lower.len()));
        }
        Self { lower, words }
    }

    fn word(&self, i: usize) -> &'a str {
        self.words.get(i).map_or("", |(s, e)| self.lower[*s..*e].trim_end_matches([':', '-', '\'']))
    }
}

fn weekday_of(word: &str) -> Option<chrono::Weekday> {
    use chrono::Weekday::*;
    Some(match word {
        "monday" => Mon,
        "tuesday" => Tue,
        "wednesday" => Wed,
        "thursday" => Thu,
        "friday" => Fri,
        "saturday" => Sat,
        "sunday" => Sun,
        _ => return None,
    })
}

fn clock(h: u32, m: u32, meridiem: Option<&str>) -> Option<String> {
    let h = match meridiem {
        Some("pm") if h < 12 => h + 12,
        Some("am") if h == 12 => 0,
        _ => h,
    };
    (h < 24 && m < 60).then(|| alloc::format!("{h:02}:{m:02}:00"))
}

/// Parses `6`, `6pm`, `6:30`, `18:30`, `6:30pm` into hour and minute plus a
/// glued meridiem.
fn split_clock(word: &str) -> Option<(u32, u32, Option<&'static str>)> {
    let (body, glued) = if let Some(b) = word.strip_suffix("pm") {
        (b, Some("pm"))
    } else if let Some(b) = word.strip_suffix("am") {
        (b, Some("am"))
    } else {
        (word, None)
    };
    let (h, m) = match body.split_once(':') {
        Some((h, m)) => (h.parse().ok()?, m.parse().ok()?),
        None => (body.parse().ok()?, 0),
    };
    Some((h, m, glued))
}

/// Finds the first date and time mention and the byte spans they cover.
pub fn extract_time(query: &str) -> (TimeMention, Vec<(usize, usize)>) {
    let lower = query.to_ascii_lowercase();
    let scan = Scan::new(&lower);
    let mut out = TimeMention::default();
    let mut spans = Vec::new();
    let n = scan.words.len();
    let mut i = 0;
    while i < n {
        let w = scan.word(i);
        let span = |a: usize, b: usize| (scan.words[a].0, scan.words[b].1);
        if out.date.is_empty() {
            if w == "day" && scan.word(i + 1) == "after" && scan.word(i + 2) == "tomorrow" {
                out.date = "day after tomorrow".into();
                spans.push(span(i, i + 2));
                i += 3;
                continue;
            }
            if w == "tomorrow" || w == "today" {
                out.date = w.into();
                spans.push(span(i, i));
                i += 1;
                continue;
            }
            if w == "tonight" {
                out.date = "today".into();
                if out.time.is_empty() {
                    out.time = "evening".into();
                }
                spans.push(span(i, i));
                i += 1;
                continue;
            }
            if let Some(wd) = weekday_of(w) {
                let prev = if i > 0 { scan.word(i - 1) } else { "" };
                let abbrev = weekday_abbrev(wd);
                let (date, first) = match prev {
                    "next" => (alloc::format!("1 week later, {abbrev}"), i - 1),
                    "this" => (alloc::format!("this {abbrev}"), i - 1),
                    "coming" | "on" => (alloc::format!("coming {abbrev}"), i - 1),
                    _ => (alloc::format!("coming {abbrev}"), i),
                };
                let first =
                    if first > 0 && prev == "coming" && scan.word(first - 1) == "this" { first - 1 } else { first };
                out.date = date;
                spans.push(span(first, i));
                i += 1;
                continue;
            }
            if w == "in" && scan.word(i + 2).starts_with("day") {
                if let Ok(k) = scan.word(i + 1).parse::<u32>() {
                    out.date = alloc::format!("{k} days later");
                    spans.push(span(i, i + 2));
                    i += 3;
                    continue;
                }
            }
            if w.len() == 10 && w.as_bytes()[4] == b'-' && chrono::NaiveDate::parse_from_str(w, "%Y-%m-%d").is_ok() {
                out.date = w.into();
                let first = if i > 0 && scan.word(i - 1) == "on" { i - 1 } else { i };
                spans.push(span(first, i));
                i += 1;
                continue;
            }
        }
        if out.time.is_empty() {
            if matches!(w, "morning" | "noon" | "evening") {
                let mut first = i;
                while first > 0 && matches!(scan.word(first - 1), "in" | "the" | "at" | "this") {
                    first -= 1;
                }
                if scan.word(first) == "this" && out.date.is_empty() {
                    out.date = "today".into();
                }
                out.time = w.into();
                spans.push(span(first, i));
                i += 1;
                continue;
            }
            let prev = if i > 0 { scan.word(i - 1) } else { "" };
            if let Some((h, m, glued)) = split_clock(w) {
                let next = scan.word(i + 1);
                let spoken =
                    matches!(next, "am" | "pm" | "a.m" | "p.m")
                        .then(|| if next.starts_with('a') { "am" } else { "pm" });
                let meridiem = glued.or(spoken);
                let introduced = matches!(prev, "at" | "by" | "before" | "around");
                let oclock = next == "o'clock";
                if meridiem.is_some() || introduced || oclock || w.contains(':') {
                    if let Some(t) = clock(h, m, meridiem) {
                        out.time = t;
                        out.arrival = matches!(prev, "by" | "before");
                        let first = if introduced || prev == "at" { i - 1 } else { i };
                        let last = if spoken.is_some() || oclock { i + 1 } else { i };
                        spans.push(span(first, last));
                        i = last + 1;
                        continue;
                    }
                }
            }
        }
        i += 1;
    }
    if text::contains_word_ci(&lower, "arrive") || text::contains_word_ci(&lower, "be there") {
        out.arrival = !out.time.is_empty();
    }
    (out, spans)
}

/// Spans of price ceilings and car-type mentions, which are constraints
/// rather than places.
fn constraint_spans(lower: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    for m in
        ["less than", "under", "at most", "no more than", "not more than", "below", "cheaper than", "within", "maximum"]
    {
        if let Some(at) = text::find_word_ci(lower, m) {
            let rest = &lower[at + m.len()..];
            let skip = rest.len() - rest.trim_start().len();
            let num_len =
                rest[skip..].find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '$')).unwrap_or(rest.len() - skip);
            if num_len == 0 {
                continue;
            }
            let mut end = at + m.len() + skip + num_len;
            for unit in [" dollars", " dollar", " yuan", " rmb", " bucks"] {
                if lower[end..].starts_with(unit) {
                    end += unit.len();
                }
            }
            spans.push((at, end));
        }
    }
    for c in CAR_TYPES {
        if let Some(at) = text::find_word_ci(lower, c) {
            spans.push((at, at + c.len()));
        }
    }
    spans
}

fn blank(lower: &str, spans: &[(usize, usize)]) -> String {
    let mut out = String::from(lower);
    for (s, e) in spans {
        // Same length so offsets stay valid; the comma acts as a boundary.
        let filler: String = core::iter::once(',').chain(core::iter::repeat(' ')).take(e - s).collect();
        out.replace_range(s..e, &filler);
    }
    out
}

fn call(function: &str, args: Value) -> String {
    json!({ "function": function, "arguments": args }).to_string()
}

fn poi_search(query: &str, span: (usize, usize), slot: Slot) -> String {
    let slot = match slot {
        Slot::StartLoc => "start",
        Slot::ViaLoc => "via",
        _ => "end",
    };
    call("POI_search", json!({ "POI_name": query[span.0..span.1].trim(), "slot": slot }))
}

/// Tool calls for a planning prompt, one wire-format line each.
pub fn plan_calls(query: &str, pending: &[&str], current: Option<&TripOrder>, modifying: bool) -> Vec<String> {
    let mut out = Vec::new();
    let (time, mut spans) = extract_time(query);
    let lower = query.to_ascii_lowercase();
    spans.extend(constraint_spans(&lower));
    let cleaned = blank(&lower, &spans);

    let picked = pick_candidate(query, pending);
    if let Some(i) = picked {
        out.push(call("POI_select", json!({ "Selected_POI_name": pending[i] })));
    }

    let start = marker_phrase(&cleaned, START_MARKERS);
    let via = marker_phrase(&cleaned, VIA_MARKERS);
    let mut end = marker_phrase(&cleaned, END_MARKERS)
        .or_else(|| to_phrases(&cleaned).filter(|(s, _)| start.is_none_or(|(a, b)| *s < a || *s >= b)).last());
    let awaiting = current.is_some_and(|o| o.state == OrderState::AwaitingPoiSelection);
    if end.is_none() && start.is_none() && via.is_none() && picked.is_none() && !awaiting && !modifying {
        // A bare reply to "where to?" names the missing slot.
        let missing_end = current.is_none_or(|o| o.end_loc.is_none());
        if missing_end && time.date.is_empty() && time.time.is_empty() && !cleaned.trim().is_empty() {
            end = phrase_at(&cleaned, 0).filter(|(s, e)| looks_like_place(&cleaned[*s..*e]));
        }
    }
    for (span, slot) in [(start, Slot::StartLoc), (via, Slot::ViaLoc), (end, Slot::EndLoc)] {
        if let Some(span) = span {
            out.push(poi_search(query, span, slot));
        }
    }

    if !time.date.is_empty() || !time.time.is_empty() {
        let function = if time.arrival { "Get_arrival_time" } else { "Get_departure_time" };
        out.push(call(function, json!({ "date": time.date, "time": time.time })));
    }
    out
}

fn looks_like_place(phrase: &str) -> bool {
    let toks = text::content_tokens(phrase);
    !toks.is_empty()
        && toks.len() <= 8
        && !GREETINGS.iter().any(|g| text::contains_word_ci(phrase, g))
        && !any_word(phrase, CONFIRM_MARKERS)
        && !any_word(phrase, CANCEL_MARKERS)
}

fn place(order: &TripOrder) -> (String, String) {
    let name = |p: &Option<crate::model::Poi>| p.as_ref().map_or_else(|| "?".to_string(), |p| p.display_name.clone());
    (name(&order.start_loc), name(&order.end_loc))
}

fn when(order: &TripOrder) -> String {
    match order.depart_time {
        Some(t) => alloc::format!("{} on {}", t.format("%H:%M"), t.format("%Y-%m-%d")),
        None => "now".into(),
    }
}

fn order_summary(order: &TripOrder) -> String {
    let (start, end) = place(order);
    let mut s = alloc::format!("{} from {start}", order.car_type.as_deref().unwrap_or("ride"));
    if let Some(v) = &order.via_loc {
        s.push_str(&alloc::format!(" via {}", v.display_name));
    }
    s.push_str(&alloc::format!(" to {end}, departing at {}", when(order)));
    if let Some(a) = order.arrive_time {
        s.push_str(&alloc::format!(" and arriving around {}", a.format("%H:%M")));
    }
    if let Some(p) = order.price {
        s.push_str(&alloc::format!(", for {p} dollars"));
    }
    s
}

fn slot_question(slot: Slot) -> &'static str {
    match slot {
        Slot::StartLoc => "Where should the driver pick you up?",
        Slot::ViaLoc => "Where would you like to stop on the way?",
        Slot::EndLoc => "Where would you like to go?",
        Slot::DepartTime => "When would you like to leave?",
    }
}

/// Templated reply for an outcome.
pub fn render_reply(outcome: &OutcomeKind, retrieved: &[QaPair], replier: Option<ReplierKind>) -> String {
    match outcome {
        OutcomeKind::OrderPlanned { order, .. } => {
            alloc::format!("I've planned your trip: {}. {CONFIRM_CTA}", order_summary(order))
        }
        OutcomeKind::OrderModified { order, .. } => {
            alloc::format!("I've updated your trip: {}. {CONFIRM_CTA}", order_summary(order))
        }
        OutcomeKind::OrderConfirmed { order } => {
            let (start, _) = place(order);
            alloc::format!("Your order is confirmed. The driver will pick you up at {start} at {}.", when(order))
        }
        OutcomeKind::OrderCancelled { .. } => "Your order has been cancelled.".into(),
        OutcomeKind::SlotElicitation { missing } => {
            missing.first().map_or("Could you tell me more about your trip?", |s| slot_question(*s)).into()
        }
        OutcomeKind::PoiDisambiguation { candidates, .. } => {
            let names: Vec<&str> = candidates.iter().map(|c| c.display_name.as_str()).collect();
            alloc::format!("I found several places: {}. Which one do you mean?", names.join(", "))
        }
        OutcomeKind::InfeasibleRequest { reason, suggestion } => {
            let mut s = alloc::format!("Sorry, I can't do that: {reason}.");
            if let Some(order) = suggestion {
                s.push_str(&alloc::format!(" The closest option is {}. {CONFIRM_CTA}", order_summary(order)));
            }
            s
        }
        OutcomeKind::NonOrderTurn { goal } => match (retrieved.first(), goal) {
            (Some(top), _) if replier != Some(ReplierKind::ErrorHandling) => top.answer.clone(),
            (_, ConversationGoal::ChitChat) => "Hello! Where would you like to go today?".into(),
            (_, ConversationGoal::PolicyInquiry) => {
                "Sorry, I don't have information about that. I can help you book a ride.".into()
            }
            _ => "Sorry, I couldn't work out what to do with that request. Could you rephrase it?".into(),
        },
    }
}

/// Answers every prompt stage without a network call.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeuristicModel;

impl Completion for HeuristicModel {
    fn complete(&self, _choice: &ModelChoice, bundle: &PromptBundle) -> Result<String, GatewayError> {
        bundle.check()?;
        let stage = prompt::header(&bundle.system, "stage")
            .ok_or_else(|| GatewayError::InvalidPrompt("missing stage header".into()))?;
        let (ctx, query) = prompt::read_context(bundle.last_text());
        let pending: Vec<&str> = ctx.get(KEY_PENDING).map_or_else(Vec::new, |p| p.split(" | ").collect());
        let outcome = || -> Result<OutcomeKind, GatewayError> {
            let raw = ctx.get(KEY_OUTCOME).ok_or_else(|| GatewayError::InvalidPrompt("missing outcome".into()))?;
            serde_json::from_str(raw).map_err(|e| GatewayError::InvalidPrompt(e.to_string()))
        };
        match stage {
            "classify" => Ok(lexicon_goal(query, &pending).as_str().into()),
            "planning" => {
                let current: Option<TripOrder> = ctx.get(KEY_ORDER).and_then(|o| serde_json::from_str(o).ok());
                let modifying = prompt::header(&bundle.system, "goal") == Some("ModifyOrder");
                Ok(plan_calls(query, &pending, current.as_ref(), modifying).join("\n"))
            }
            "replier_selection" => Ok(select_replier(&outcome()?, false).as_str().into()),
            "generation" => {
                let retrieved: Vec<QaPair> =
                    ctx.get(KEY_RETRIEVED).and_then(|r| serde_json::from_str(r).ok()).unwrap_or_default();
                let replier = prompt::header(&bundle.system, "replier").and_then(ReplierKind::parse);
                Ok(render_reply(&outcome()?, &retrieved, replier))
            }
            other => Err(GatewayError::InvalidPrompt(alloc::format!("unknown stage `{other}`"))),
        }
    }
}

/// Arguments of one rendered call, for tests and diagnostics.
pub fn call_arguments(line: &str) -> Option<(String, Map<String, Value>)> {
    let v: Value = serde_json::from_str(line).ok()?;
    Some((v["function"].as_str()?.to_string(), v["arguments"].as_object()?.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn calls(q: &str) -> Vec<(String, Map<String, Value>)> {
        plan_calls(q, &[], None, false).iter().filter_map(|l| call_arguments(l)).collect()
    }

    #[test]
    fn lexicon_priorities() {
        use ConversationGoal::*;
        assert_eq!(lexicon_goal("Hello, Xiaodi. I want to go to Huateng Garden.", &[]), CreateOrder);
        assert_eq!(lexicon_goal("Can you book a restaurant for me?", &[]), PolicyInquiry);
        assert_eq!(lexicon_goal("How many car types can I book now?", &[]), PolicyInquiry);
        assert_eq!(lexicon_goal("Please cancel it.", &[]), CancelOrder);
        assert_eq!(lexicon_goal("Yes, go ahead.", &[]), ConfirmOrder);
        assert_eq!(lexicon_goal("Change the destination to the museum instead.", &[]), ModifyOrder);
        assert_eq!(lexicon_goal("Hello there!", &[]), ChitChat);
        assert_eq!(lexicon_goal("Is it raining?", &[]), PolicyInquiry);
        let pending = ["Huateng Garden South Gate", "Huateng Garden North Gate"];
        assert_eq!(lexicon_goal("The South one please.", &pending), CreateOrder);
    }

    #[test]
    fn candidate_picks() {
        let pending = ["Huateng Garden South Gate", "Huateng Garden North Gate"];
        assert_eq!(pick_candidate("The South one please", &pending), Some(0));
        assert_eq!(pick_candidate("the second", &pending), Some(1));
        assert_eq!(pick_candidate("Huateng Garden", &pending), None);
        assert_eq!(pick_candidate("north", &[]), None);
    }

    #[test]
    fn time_phrases() {
        let (t, _) = extract_time("Book a car to the airport next Friday at 6 pm");
        assert_eq!((t.date.as_str(), t.time.as_str(), t.arrival), ("1 week later, Fri", "18:00:00", false));
        let (t, _) = extract_time("tomorrow morning");
        assert_eq!((t.date.as_str(), t.time.as_str()), ("tomorrow", "morning"));
        let (t, _) = extract_time("I need to arrive by 9:30am on 2024-09-02");
        assert_eq!((t.date.as_str(), t.time.as_str(), t.arrival), ("2024-09-02", "09:30:00", true));
        let (t, _) = extract_time("in 3 days at 7");
        assert_eq!((t.date.as_str(), t.time.as_str()), ("3 days later", "07:00:00"));
        let (t, _) = extract_time("this Saturday 12pm");
        assert_eq!((t.date.as_str(), t.time.as_str()), ("this Sat", "12:00:00"));
        let (t, _) = extract_time("go to the museum");
        assert_eq!(t, TimeMention::default());
    }

    #[test]
    fn location_phrases() {
        let c = calls("Hello, Xiaodi. I want to go to Huateng Garden.");
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].1["POI_name"], "Huateng Garden");
        assert_eq!(c[0].1["slot"], "end");

        let c = calls(
            "Take me from the Intersection of Lou Shan Guan Road and Mao Tai Road to Terminal T2 tomorrow at 8am",
        );
        assert_eq!(c[0].1["POI_name"], "Intersection of Lou Shan Guan Road and Mao Tai Road");
        assert_eq!(c[0].1["slot"], "start");
        assert_eq!(c[1].1["POI_name"], "Terminal T2");
        assert_eq!(c[2].0, "Get_departure_time");

        let c = calls("I want to go to the museum via Dongli Main Gate in a Luxe under 80 dollars");
        let names: Vec<&str> = c.iter().map(|(_, a)| a["POI_name"].as_str().unwrap()).collect();
        assert_eq!(names, vec!["Dongli Main Gate", "museum"]);
    }

    #[test]
    fn selection_and_constraints() {
        let pending = ["Huateng South", "Huateng North"];
        let lines = plan_calls("The South one please, and book an order less than 40 dollars.", &pending, None, false);
        assert_eq!(lines.len(), 1);
        let (f, a) = call_arguments(&lines[0]).unwrap();
        assert_eq!((f.as_str(), a["Selected_POI_name"].as_str()), ("POI_select", Some("Huateng South")));
        assert!(plan_calls("Switch to Luxe", &[], None, true).is_empty());
    }

    #[test]
    fn bare_destination_reply() {
        let c = calls("Museum East Gate.");
        assert_eq!(c[0].1["POI_name"], "Museum East Gate");
        assert!(calls("Hello!").is_empty());
    }

    #[test]
    fn time_after_to_is_not_a_place() {
        let c = calls("Change it to the day after tomorrow at 8 am");
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].0, "Get_departure_time");
        assert_eq!(c[0].1["date"], "day after tomorrow");
    }

    #[test]
    fn arrive_at_names_the_destination() {
        let q = "I need to arrive at Shanghai Hongqiao Railway Station by 9 am tomorrow";
        assert_eq!(lexicon_goal(q, &[]), ConversationGoal::CreateOrder);
        let c = calls(q);
        assert_eq!(c[0].1["POI_name"], "Shanghai Hongqiao Railway Station");
        assert_eq!(c[1].0, "Get_arrival_time");
        assert_eq!(lexicon_goal("Hi Xiaodi, how are you today?", &[]), ConversationGoal::ChitChat);
    }
}
