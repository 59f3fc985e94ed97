//! Round and session accuracy over labeled dialogs, and the rule-based
//! response rubric.
//!
//! Order accuracy counts only rounds that carry an order truth (or a human
//! label); response accuracy counts every round. A ratio with an empty
//! denominator is reported as 1.0 so a corpus without, say, order rounds
//! does not look like a failure.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::dialog::ReplierKind;
use crate::heuristic::CONFIRM_CTA;
use crate::model::{ConversationGoal, DialogSession, GoalGroup, OrderState, Price, TripOrder, TurnRecord};
use crate::planner::OutcomeKind;
use crate::text;

pub const DEFAULT_THRESHOLD: u8 = 4;
/// A response longer than this multiple of the golden response is redundant.
pub const REDUNDANCY_FACTOR: usize = 3;

/// Expected order state after a round. Ids identify POIs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderTruth {
    pub goal: ConversationGoal,
    #[serde(default)]
    pub start: Option<u64>,
    #[serde(default)]
    pub via: Option<u64>,
    #[serde(default)]
    pub end: Option<u64>,
    #[serde(default, with = "crate::timefmt::option")]
    pub depart_time: Option<NaiveDateTime>,
    #[serde(default, with = "crate::timefmt::option")]
    pub arrive_time: Option<NaiveDateTime>,
    #[serde(default)]
    pub car_type: Option<String>,
    #[serde(default)]
    pub price: Option<Price>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<OrderState>,
}

impl OrderTruth {
    /// The truth an order would produce if it were exactly right.
    pub fn of(goal: ConversationGoal, order: &TripOrder) -> Self {
        Self {
            goal,
            start: order.start_loc.as_ref().map(|p| p.id),
            via: order.via_loc.as_ref().map(|p| p.id),
            end: order.end_loc.as_ref().map(|p| p.id),
            depart_time: order.depart_time,
            arrive_time: order.arrive_time,
            car_type: order.car_type.clone(),
            price: order.price,
            state: Some(order.state),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTruth {
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<OrderTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden_response: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSession {
    pub session: DialogSession,
    #[serde(default)]
    pub truths: Vec<RoundTruth>,
}

impl LabeledSession {
    pub fn truth(&self, round: u32) -> Option<&RoundTruth> {
        self.truths.iter().find(|t| t.round == round)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("round has no order truth")]
    MissingTruth,
    #[error("assistant response is empty")]
    EmptyResponse,
    #[error("corpus is empty")]
    EmptyCorpus,
}

/// Checks the order after a round against its truth: start, via, end,
/// departure, arrival, price with car type, and the goal. Times must match
/// to the second, prices to the tenth, places by id.
pub fn score_order_with(turn: &TurnRecord, order: Option<&TripOrder>, truth: &OrderTruth) -> bool {
    if turn.goal != truth.goal {
        return false;
    }
    let id = |p: &Option<crate::model::Poi>| p.as_ref().map(|p| p.id);
    let Some(o) = order else {
        return truth.start.is_none() && truth.end.is_none() && truth.price.is_none() && truth.state.is_none();
    };
    id(&o.start_loc) == truth.start
        && id(&o.via_loc) == truth.via
        && id(&o.end_loc) == truth.end
        && o.depart_time == truth.depart_time
        && o.arrive_time == truth.arrive_time
        && o.car_type == truth.car_type
        && o.price == truth.price
        && truth.state.is_none_or(|s| s == o.state)
}

pub fn score_order_round(turn: &TurnRecord, truth: Option<&OrderTruth>) -> Result<bool, EvalError> {
    let truth = truth.ok_or(EvalError::MissingTruth)?;
    Ok(score_order_with(turn, turn.order_snapshot.as_ref(), truth))
}

const APOLOGY_MARKERS: &[&str] = &["sorry", "unfortunately", "apologize", "cannot", "can't", "unable"];
const PROMISE_MARKERS: &[&str] = &[
    "booked a table",
    "reserved a table",
    "book the restaurant for you",
    "booked the restaurant",
    "real-time traffic is",
    "traffic right now is",
    "i will call the driver",
    "i have called the driver",
    "i'll call the driver",
    "guaranteed",
];
/// Words any ride-hailing reply may use without echoing the context.
const DOMAIN_WORDS: &[&str] = &[
    "ride",
    "trip",
    "order",
    "driver",
    "car",
    "pick",
    "go",
    "book",
    "place",
    "where",
    "when",
    "help",
    "destination",
    "hello",
    "hi",
    "welcome",
];

/// Decimal amounts (`42.0`) and amounts followed by a currency word.
fn mentioned_prices(s: &str) -> Vec<Price> {
    let lower = s.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit()
            && (i == 0 || !(bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == b':' || bytes[i - 1] == b'-'))
        {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            let num = lower[start..i].trim_end_matches('.');
            let next = lower[i..].trim_start();
            let prev_dollar = start > 0 && bytes[start - 1] == b'$';
            let followed = i < bytes.len() && matches!(bytes[i], b':' | b'-');
            let money = prev_dollar || ["dollar", "yuan", "rmb", "bucks"].iter().any(|u| next.starts_with(u));
            if !followed && (num.contains('.') || money) {
                if let Ok(v) = num.parse::<f64>() {
                    out.push(Price::from_units(v));
                }
            }
        } else {
            i += 1;
        }
    }
    out
}

/// `HH:MM` clock mentions.
fn mentioned_clocks(s: &str) -> Vec<String> {
    let b = s.as_bytes();
    let digit = |j: usize| b.get(j).is_some_and(u8::is_ascii_digit);
    let mut out = Vec::new();
    for i in 1..b.len() {
        if b[i] != b':' || !digit(i - 1) || !digit(i + 1) || !digit(i + 2) {
            continue;
        }
        let h_start = if i >= 2 && digit(i - 2) { i - 2 } else { i - 1 };
        let hour: u32 = s[h_start..i].parse().unwrap_or(99);
        out.push(alloc::format!("{hour:02}:{}", &s[i + 1..i + 3]));
    }
    out
}

fn order_refs<'a>(turn: &'a TurnRecord, order: Option<&'a TripOrder>) -> Vec<&'a TripOrder> {
    let mut v: Vec<&TripOrder> = Vec::new();
    v.extend(order);
    v.extend(turn.order_snapshot.as_ref());
    v.extend(turn.outcome.order());
    v
}

fn context_text(turn: &TurnRecord, orders: &[&TripOrder]) -> String {
    let mut ctx = String::new();
    ctx.push_str(&turn.user.text);
    ctx.push(' ');
    for o in orders {
        for p in [&o.start_loc, &o.via_loc, &o.end_loc].into_iter().flatten() {
            ctx.push_str(&p.display_name);
            ctx.push(' ');
        }
        ctx.push_str(o.car_type.as_deref().unwrap_or(""));
        ctx.push(' ');
    }
    if let OutcomeKind::PoiDisambiguation { candidates, .. } = &turn.outcome {
        for c in candidates {
            ctx.push_str(&c.display_name);
            ctx.push(' ');
        }
    }
    if let OutcomeKind::InfeasibleRequest { reason, .. } = &turn.outcome {
        ctx.push_str(reason);
        ctx.push(' ');
    }
    for q in &turn.retrieved {
        ctx.push_str(&q.question);
        ctx.push(' ');
        ctx.push_str(&q.answer);
        ctx.push(' ');
    }
    ctx
}

fn contradicts(turn: &TurnRecord, orders: &[&TripOrder], reply: &str) -> bool {
    let retrieved_text: String = turn.retrieved.iter().map(|q| alloc::format!("{} ", q.answer)).collect();

    let mut prices: Vec<Price> = turn.outcome.quotes().iter().map(|q| q.price).collect();
    prices.extend(orders.iter().filter_map(|o| o.price));
    prices.extend(orders.iter().filter_map(|o| o.constraints.price_ceiling));
    prices.extend(mentioned_prices(&turn.user.text));
    prices.extend(mentioned_prices(&retrieved_text));
    if let OutcomeKind::InfeasibleRequest { reason, .. } = &turn.outcome {
        prices.extend(mentioned_prices(reason));
    }
    if mentioned_prices(reply).iter().any(|p| !prices.contains(p)) {
        return true;
    }

    let mut clocks: Vec<String> = orders
        .iter()
        .flat_map(|o| [o.depart_time, o.arrive_time])
        .flatten()
        .map(|t| alloc::format!("{}", t.format("%H:%M")))
        .collect();
    clocks.extend(mentioned_clocks(&turn.user.text));
    clocks.extend(mentioned_clocks(&retrieved_text));
    if let OutcomeKind::InfeasibleRequest { reason, .. } = &turn.outcome {
        clocks.extend(mentioned_clocks(reason));
    }
    if mentioned_clocks(reply).iter().any(|c| !clocks.contains(c)) {
        return true;
    }

    let claims = |words: &[&str]| {
        words.iter().any(|w| text::contains_word_ci(reply, w) && !text::contains_word_ci(&retrieved_text, w))
    };
    let confirmed = matches!(turn.outcome, OutcomeKind::OrderConfirmed { .. });
    let cancelled = matches!(turn.outcome, OutcomeKind::OrderCancelled { .. });
    if (!confirmed && claims(&["is confirmed", "has been confirmed", "been placed"]))
        || (!cancelled && claims(&["is cancelled", "has been cancelled", "is canceled", "has been canceled"]))
    {
        return true;
    }
    if PROMISE_MARKERS.iter().any(|m| text::contains_ci(reply, m) && !text::contains_ci(&retrieved_text, m)) {
        return true;
    }
    let abnormal =
        matches!(turn.outcome, OutcomeKind::InfeasibleRequest { .. }) || turn.tool_results.iter().any(|r| !r.is_ok());
    abnormal && !APOLOGY_MARKERS.iter().any(|m| text::contains_word_ci(reply, m))
}

fn overlap_ratio(part: &str, whole: &str) -> f64 {
    let p = text::content_token_set(part);
    if p.is_empty() {
        return 1.0;
    }
    let w = text::content_token_set(whole);
    text::intersection_len(&p, &w) as f64 / p.len() as f64
}

fn addresses(turn: &TurnRecord, reply: &str) -> bool {
    let has_cta = text::contains_ci(reply, "click the 'confirm' button");
    match &turn.outcome {
        OutcomeKind::OrderPlanned { order, .. } | OutcomeKind::OrderModified { order, .. } => {
            has_cta
                || order.end_loc.as_ref().is_some_and(|p| text::contains_ci(reply, &p.display_name))
                || order.price.is_some_and(|p| mentioned_prices(reply).contains(&p))
        }
        OutcomeKind::OrderConfirmed { .. } => text::contains_ci(reply, "confirm"),
        OutcomeKind::OrderCancelled { .. } => text::contains_ci(reply, "cancel"),
        OutcomeKind::SlotElicitation { .. } => reply.contains('?'),
        OutcomeKind::PoiDisambiguation { candidates, .. } => {
            reply.contains('?') && candidates.iter().any(|c| text::contains_ci(reply, &c.display_name))
        }
        OutcomeKind::InfeasibleRequest { .. } => true,
        OutcomeKind::NonOrderTurn { .. } => match turn.retrieved.first() {
            Some(top) if turn.replier == ReplierKind::KnowledgeEnhanced => overlap_ratio(&top.answer, reply) >= 0.5,
            _ => true,
        },
    }
}

fn has_template_elements(turn: &TurnRecord, reply: &str) -> bool {
    let has_cta = text::contains_ci(reply, CONFIRM_CTA);
    let apology = APOLOGY_MARKERS.iter().any(|m| text::contains_word_ci(reply, m));
    match &turn.outcome {
        OutcomeKind::OrderPlanned { .. } | OutcomeKind::OrderModified { .. } => has_cta,
        OutcomeKind::InfeasibleRequest { suggestion: Some(_), .. } => apology && has_cta,
        OutcomeKind::InfeasibleRequest { suggestion: None, .. } => apology,
        OutcomeKind::NonOrderTurn { .. } => match turn.retrieved.first() {
            Some(top) if turn.replier == ReplierKind::KnowledgeEnhanced => overlap_ratio(&top.answer, reply) >= 0.8,
            _ => true,
        },
        _ => true,
    }
}

/// Rule-based 1 to 5 ladder. `order` is the session's order after the
/// round; `golden` bounds the length before a reply counts as redundant.
pub fn score_response_with(
    turn: &TurnRecord,
    order: Option<&TripOrder>,
    golden: Option<&str>,
) -> Result<u8, EvalError> {
    let reply = turn.assistant.text.trim();
    if reply.is_empty() {
        return Err(EvalError::EmptyResponse);
    }
    let orders = order_refs(turn, order);
    let mut ctx = text::content_token_set(&context_text(turn, &orders));
    ctx.extend(DOMAIN_WORDS.iter().map(|w| String::from(*w)));
    ctx.sort();
    ctx.dedup();
    if text::intersection_len(&text::content_token_set(reply), &ctx) == 0 {
        return Ok(1);
    }
    if contradicts(turn, &orders, reply) {
        return Ok(2);
    }
    if golden.is_some_and(|g| reply.chars().count() > REDUNDANCY_FACTOR * g.trim().chars().count().max(1)) {
        return Ok(3);
    }
    if !addresses(turn, reply) {
        return Ok(3);
    }
    Ok(if has_template_elements(turn, reply) { 5 } else { 4 })
}

pub fn score_response_rubric(turn: &TurnRecord) -> Result<u8, EvalError> {
    score_response_with(turn, turn.order_snapshot.as_ref(), None)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub roa: f64,
    pub rra: f64,
    pub soa: f64,
    pub sra: f64,
    pub order_rounds: usize,
    pub response_rounds: usize,
    pub sessions: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub sessions: usize,
    pub rounds: usize,
    pub order_rounds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub roa: f64,
    pub rra: f64,
    pub soa: f64,
    pub sra: f64,
    pub per_goal: BTreeMap<ConversationGoal, Ratios>,
    pub per_group: BTreeMap<GoalGroup, Ratios>,
    pub counts: Counts,
}

/// Per-round verdicts: `order` is `None` for rounds without a truth or label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundVerdict {
    pub goal: ConversationGoal,
    pub order: Option<bool>,
    pub response: bool,
}

/// Scores every round of a session in order, tracking the session's order
/// as it evolves.
pub fn verdicts(labeled: &LabeledSession, threshold: u8) -> Vec<RoundVerdict> {
    let mut current: Option<TripOrder> = None;
    labeled
        .session
        .turns
        .iter()
        .map(|turn| {
            if let Some(o) = &turn.order_snapshot {
                current = Some(o.clone());
            }
            let truth = labeled.truth(turn.user.round_id);
            let order = match (truth.and_then(|t| t.order.as_ref()), turn.ground_truth) {
                (Some(t), _) => Some(score_order_with(turn, current.as_ref(), t)),
                (None, Some(label)) => Some(label.order_correct),
                (None, None) => None,
            };
            let response = match turn.ground_truth {
                Some(label) => label.response_correct,
                None => {
                    let golden = truth.and_then(|t| t.golden_response.as_deref());
                    score_response_with(turn, current.as_ref(), golden).is_ok_and(|s| s >= threshold)
                }
            };
            RoundVerdict { goal: turn.goal, order, response }
        })
        .collect()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Default)]
struct Tally {
    order_ok: usize,
    order_n: usize,
    resp_ok: usize,
    resp_n: usize,
    soa_ok: usize,
    soa_n: usize,
    sra_ok: usize,
    sra_n: usize,
}

impl Tally {
    fn add_session(&mut self, rounds: &[&RoundVerdict]) {
        if rounds.is_empty() {
            return;
        }
        let labeled: Vec<bool> = rounds.iter().filter_map(|r| r.order).collect();
        self.order_ok += labeled.iter().filter(|b| **b).count();
        self.order_n += labeled.len();
        if !labeled.is_empty() {
            self.soa_n += 1;
            self.soa_ok += usize::from(labeled.iter().all(|b| *b));
        }
        self.resp_ok += rounds.iter().filter(|r| r.response).count();
        self.resp_n += rounds.len();
        self.sra_n += 1;
        self.sra_ok += usize::from(rounds.iter().all(|r| r.response));
    }

    fn ratios(&self) -> Ratios {
        Ratios {
            roa: ratio(self.order_ok, self.order_n),
            rra: ratio(self.resp_ok, self.resp_n),
            soa: ratio(self.soa_ok, self.soa_n),
            sra: ratio(self.sra_ok, self.sra_n),
            order_rounds: self.order_n,
            response_rounds: self.resp_n,
            sessions: self.sra_n,
        }
    }
}

/// Aggregates per-session verdicts. Exposed so reports can be built from
/// labels that did not come from [`verdicts`].
pub fn aggregate(sessions: &[Vec<RoundVerdict>]) -> Result<MetricsReport, EvalError> {
    if sessions.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut all = Tally::default();
    let mut per_goal: BTreeMap<ConversationGoal, Tally> = BTreeMap::new();
    let mut per_group: BTreeMap<GoalGroup, Tally> = BTreeMap::new();
    let mut counts = Counts { sessions: sessions.len(), ..Counts::default() };
    for rounds in sessions {
        all.add_session(&rounds.iter().collect::<Vec<_>>());
        counts.rounds += rounds.len();
        counts.order_rounds += rounds.iter().filter(|r| r.order.is_some()).count();
        for goal in ConversationGoal::ALL {
            let subset: Vec<&RoundVerdict> = rounds.iter().filter(|r| r.goal == goal).collect();
            if !subset.is_empty() {
                per_goal.entry(goal).or_default().add_session(&subset);
            }
        }
        for group in [GoalGroup::Order, GoalGroup::Policy, GoalGroup::ChitChat] {
            let subset: Vec<&RoundVerdict> = rounds.iter().filter(|r| r.goal.group() == group).collect();
            if !subset.is_empty() {
                per_group.entry(group).or_default().add_session(&subset);
            }
        }
    }
    let r = all.ratios();
    Ok(MetricsReport {
        roa: r.roa,
        rra: r.rra,
        soa: r.soa,
        sra: r.sra,
        per_goal: per_goal.into_iter().map(|(g, t)| (g, t.ratios())).collect(),
        per_group: per_group.into_iter().map(|(g, t)| (g, t.ratios())).collect(),
        counts,
    })
}

pub fn compute_metrics(corpus: &[LabeledSession], threshold: u8) -> Result<MetricsReport, EvalError> {
    let all: Vec<Vec<RoundVerdict>> = corpus.iter().map(|s| verdicts(s, threshold)).collect();
    aggregate(&all)
}

/// Plain-text table: one row per goal group, then per goal, then overall.
pub fn render_table(report: &MetricsReport) -> String {
    let mut out = String::from("| Scope | ROA | SOA | RRA | SRA | Rounds |\n|---|---|---|---|---|---|\n");
    let mut row = |name: &str, r: &Ratios| {
        out.push_str(&alloc::format!(
            "| {name} | {:.2}% | {:.2}% | {:.2}% | {:.2}% | {} |\n",
            r.roa * 100.0,
            r.soa * 100.0,
            r.rra * 100.0,
            r.sra * 100.0,
            r.response_rounds
        ));
    };
    for (g, r) in &report.per_group {
        row(&alloc::format!("{g:?}"), r);
    }
    for (g, r) in &report.per_goal {
        row(g.as_str(), r);
    }
    let overall = Ratios {
        roa: report.roa,
        rra: report.rra,
        soa: report.soa,
        sra: report.sra,
        order_rounds: report.counts.order_rounds,
        response_rounds: report.counts.rounds,
        sessions: report.counts.sessions,
    };
    row("Overall", &overall);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Quote;
    use crate::model::{GroundTruth, Poi, Utterance};
    use crate::timefmt;
    use alloc::vec;
    use proptest::prelude::*;

    fn dt(s: &str) -> NaiveDateTime {
        timefmt::parse(s).unwrap()
    }

    fn planned() -> TripOrder {
        let mut o = TripOrder::draft("s-r1");
        o.state = OrderState::Planned;
        o.start_loc = Some(Poi::new("Dongli Garden-Main Gate", 31.1871, 121.5181, 2002));
        o.end_loc = Some(Poi::new("Huateng Garden South-Gate", 31.2301, 121.4452, 2003));
        o.depart_time = Some(dt("2024-08-28 12:00:00"));
        o.arrive_time = Some(dt("2024-08-28 12:20:00"));
        o.distance = Some(12.0);
        o.duration = Some(20.0);
        o.car_type = Some("Express".into());
        o.price = Some(Price::from_units(42.0));
        o
    }

    fn turn(outcome: OutcomeKind, reply: &str) -> TurnRecord {
        let now = dt("2024-08-28 12:00:00");
        TurnRecord {
            user: Utterance::user(1, "Take me to Huateng Garden South-Gate", now),
            function_calls: vec![],
            tool_results: vec![],
            order_snapshot: outcome.order().cloned(),
            pending: None,
            goal: ConversationGoal::CreateOrder,
            outcome,
            replier: ReplierKind::Specialized,
            retrieved: vec![],
            assistant: Utterance::assistant(1, reply, now),
            ground_truth: None,
        }
    }

    fn planned_turn(reply: &str) -> TurnRecord {
        let quotes = vec![
            Quote { car_type: "Express".into(), price: Price::from_units(42.0) },
            Quote { car_type: "Luxe".into(), price: Price::from_units(80.0) },
        ];
        turn(OutcomeKind::OrderPlanned { order: planned(), quotes }, reply)
    }

    #[test]
    fn cta_reply_scores_five() {
        let t = planned_turn("Sure. Click the 'Confirm' button to place this order.");
        assert_eq!(score_response_rubric(&t), Ok(5));
    }

    #[test]
    fn wrong_price_scores_two() {
        let t = planned_turn("Your Express ride costs 35.0 dollars. Click the 'Confirm' button to place this order.");
        assert_eq!(score_response_rubric(&t), Ok(2));
        let t = planned_turn(
            "Your Express ride costs 42.0 dollars and leaves at 12:00. Click the 'Confirm' button to place this order.",
        );
        assert_eq!(score_response_rubric(&t), Ok(5));
        let t = planned_turn("Your Express ride leaves at 13:00. Click the 'Confirm' button to place this order.");
        assert_eq!(score_response_rubric(&t), Ok(2));
    }

    #[test]
    fn ladder_bottom_rungs() {
        assert_eq!(score_response_rubric(&planned_turn("   ")), Err(EvalError::EmptyResponse));
        assert_eq!(score_response_rubric(&planned_turn("Bananas are yellow.")), Ok(1));
        assert_eq!(score_response_rubric(&planned_turn("Your ride to Huateng Garden South-Gate is ready.")), Ok(4));
        let t = planned_turn(
            "Your ride to Huateng Garden South-Gate is ready. Click the 'Confirm' button to place this order.",
        );
        assert_eq!(score_response_with(&t, t.order_snapshot.as_ref(), Some("Confirm?")), Ok(3));
    }

    #[test]
    fn false_claims_and_missing_apology() {
        assert_eq!(score_response_rubric(&planned_turn("Your ride to Huateng Garden South-Gate is confirmed.")), Ok(2));
        let t = turn(
            OutcomeKind::InfeasibleRequest { reason: "no quote ≤ 40.0".into(), suggestion: None },
            "The ride is 42.0",
        );
        assert_eq!(score_response_rubric(&t), Ok(2));
        let t = turn(
            OutcomeKind::InfeasibleRequest { reason: "no quote ≤ 40.0".into(), suggestion: Some(planned()) },
            "Sorry, no car is under 40.0. The Express at 42.0 is closest. Click the 'Confirm' button to place this order.",
        );
        assert_eq!(score_response_rubric(&t), Ok(5));
    }

    #[test]
    fn order_truth_matching() {
        let t = planned_turn("x");
        let truth = OrderTruth::of(ConversationGoal::CreateOrder, &planned());
        assert_eq!(score_order_round(&t, Some(&truth)), Ok(true));
        let mut wrong = truth.clone();
        wrong.price = Some(Price::from_units(80.0));
        assert_eq!(score_order_round(&t, Some(&wrong)), Ok(false));
        let mut wrong = truth.clone();
        wrong.goal = ConversationGoal::ModifyOrder;
        assert_eq!(score_order_round(&t, Some(&wrong)), Ok(false));
        assert_eq!(score_order_round(&t, None), Err(EvalError::MissingTruth));
    }

    fn labeled(pattern: &[bool]) -> LabeledSession {
        let mut s = DialogSession::new("s", dt("2024-08-28 12:00:00"), None);
        for (i, ok) in pattern.iter().enumerate() {
            let mut t = planned_turn("Sure. Click the 'Confirm' button to place this order.");
            t.user.round_id = i as u32 + 1;
            t.assistant.round_id = i as u32 + 1;
            t.ground_truth = Some(GroundTruth { order_correct: *ok, response_correct: *ok });
            s.turns.push(t);
        }
        LabeledSession { session: s, truths: vec![] }
    }

    #[test]
    fn hand_counted_fixture() {
        let corpus = [labeled(&[true, true]), labeled(&[true, false]), labeled(&[false])];
        let r = compute_metrics(&corpus, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.roa, 0.6);
        assert_eq!(r.soa, 1.0 / 3.0);
        assert_eq!(r.counts, Counts { sessions: 3, rounds: 5, order_rounds: 5 });
        assert_eq!(compute_metrics(&[], 4), Err(EvalError::EmptyCorpus));
        let perfect = compute_metrics(&[labeled(&[true]), labeled(&[true, true])], 4).unwrap();
        assert_eq!((perfect.roa, perfect.rra, perfect.soa, perfect.sra), (1.0, 1.0, 1.0, 1.0));
    }

    // Independent recount over flat booleans.
    fn oracle(sessions: &[Vec<(u8, Option<bool>, bool)>]) -> (f64, f64, f64, f64) {
        let flat: Vec<&(u8, Option<bool>, bool)> = sessions.iter().flatten().collect();
        let orders: Vec<bool> = flat.iter().filter_map(|r| r.1).collect();
        let div = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
        let roa = div(orders.iter().filter(|b| **b).count(), orders.len());
        let rra = div(flat.iter().filter(|r| r.2).count(), flat.len());
        let with_orders: Vec<_> = sessions.iter().filter(|s| s.iter().any(|r| r.1.is_some())).collect();
        let soa = div(with_orders.iter().filter(|s| s.iter().all(|r| r.1 != Some(false))).count(), with_orders.len());
        let nonempty: Vec<_> = sessions.iter().filter(|s| !s.is_empty()).collect();
        let sra = div(nonempty.iter().filter(|s| s.iter().all(|r| r.2)).count(), nonempty.len());
        (roa, rra, soa, sra)
    }

    proptest! {
        #[test]
        fn aggregate_matches_recount(
            corpus in proptest::collection::vec(
                proptest::collection::vec((0u8..6, proptest::option::of(any::<bool>()), any::<bool>()), 0..8),
                1..50,
            )
        ) {
            let verdicts: Vec<Vec<RoundVerdict>> = corpus
                .iter()
                .map(|s| s.iter().map(|&(g, order, response)| RoundVerdict {
                    goal: ConversationGoal::ALL[g as usize],
                    order,
                    response,
                }).collect())
                .collect();
            let r = aggregate(&verdicts).unwrap();
            let (roa, rra, soa, sra) = oracle(&corpus);
            prop_assert_eq!((r.roa, r.rra, r.soa, r.sra), (roa, rra, soa, sra));
            prop_assert!(r.soa < 1.0 || r.roa == 1.0);
            prop_assert!(r.sra < 1.0 || r.rra == 1.0);
            let goal_rounds: usize = r.per_goal.values().map(|g| g.response_rounds).sum();
            prop_assert_eq!(goal_rounds, r.counts.rounds);
            for v in [r.roa, r.rra, r.soa, r.sra] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn contradiction_lowers_a_five(extra in 43u32..79) {
            let base = "Your Express ride costs 42.0 dollars. Click the 'Confirm' button to place this order.";
            prop_assert_eq!(score_response_rubric(&planned_turn(base)), Ok(5));
            let worse = alloc::format!("{base} Or {extra}.5 dollars for Luxe.");
            prop_assert!(score_response_rubric(&planned_turn(&worse)).unwrap() < 5);
        }
    }
}
