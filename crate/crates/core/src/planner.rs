//! Goal classification, slot filling through tool calls, and the order
//! lifecycle.
//!
//! ```text
//!   DRAFT ──await──▶ AWAITING_POI_SELECTION ──select──▶ DRAFT
//!   DRAFT | AWAITING ──create──▶ PLANNED ──modify──▶ PLANNED
//!   PLANNED ──confirm──▶ CONFIRMED
//!   PLANNED | CONFIRMED ──cancel──▶ CANCELLED   (absorbing)
//! ```

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dialog::{resolve_model, ReplierKind, RoutingTable, Stage};
use crate::geo::{self, GeoError, PoiDatabase, Quote, RoutePlan, RoutePlanner};
use crate::heuristic::lexicon_goal;
use crate::llm::{Completion, GatewayError};
use crate::model::{
    validate_order, ConversationGoal, Coord, DialogSession, OrderState, PendingSelection, Poi, Price, Slot, TripOrder,
    Utterance,
};
use crate::prompt::{self, PromptSet};
use crate::temporal::{self, TemporalError};
use crate::text;
use crate::timefmt;
use crate::tools::{
    arg_number, arg_text, load_specs, parse_function_calls, Args, FunctionCall, Registry, RegistryError, ToolFailure,
    ToolResult, DEFAULT_ANNOTATIONS,
};

/// Candidates are offered when the runner-up scores within this fraction of
/// the best match.
pub const DISAMBIGUATION_MARGIN: f64 = 0.25;
/// Offered candidates must score at least this fraction of the best.
pub const CANDIDATE_FLOOR: f64 = 0.75;
pub const DEFAULT_CAR_TYPE: &str = "Express";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum OutcomeKind {
    SlotElicitation {
        missing: Vec<Slot>,
    },
    PoiDisambiguation {
        slot: Slot,
        candidates: Vec<Poi>,
    },
    OrderPlanned {
        order: TripOrder,
        quotes: Vec<Quote>,
    },
    OrderConfirmed {
        order: TripOrder,
    },
    OrderCancelled {
        order: TripOrder,
    },
    OrderModified {
        order: TripOrder,
        quotes: Vec<Quote>,
    },
    InfeasibleRequest {
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        suggestion: Option<TripOrder>,
    },
    NonOrderTurn {
        goal: ConversationGoal,
    },
}

impl OutcomeKind {
    pub fn name(&self) -> &'static str {
        match self {
            OutcomeKind::SlotElicitation { .. } => "SlotElicitation",
            OutcomeKind::PoiDisambiguation { .. } => "PoiDisambiguation",
            OutcomeKind::OrderPlanned { .. } => "OrderPlanned",
            OutcomeKind::OrderConfirmed { .. } => "OrderConfirmed",
            OutcomeKind::OrderCancelled { .. } => "OrderCancelled",
            OutcomeKind::OrderModified { .. } => "OrderModified",
            OutcomeKind::InfeasibleRequest { .. } => "InfeasibleRequest",
            OutcomeKind::NonOrderTurn { .. } => "NonOrderTurn",
        }
    }

    /// The order this outcome is about, if any.
    pub fn order(&self) -> Option<&TripOrder> {
        match self {
            OutcomeKind::OrderPlanned { order, .. }
            | OutcomeKind::OrderConfirmed { order }
            | OutcomeKind::OrderCancelled { order }
            | OutcomeKind::OrderModified { order, .. } => Some(order),
            OutcomeKind::InfeasibleRequest { suggestion, .. } => suggestion.as_ref(),
            _ => None,
        }
    }

    pub fn quotes(&self) -> &[Quote] {
        match self {
            OutcomeKind::OrderPlanned { quotes, .. } | OutcomeKind::OrderModified { quotes, .. } => quotes,
            _ => &[],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome {
    pub goal: ConversationGoal,
    pub kind: OutcomeKind,
    pub tool_trace: Vec<(FunctionCall, ToolResult)>,
    /// The session's order after this turn, when the turn changed it.
    pub order: Option<TripOrder>,
    /// Candidates awaiting a choice; set exactly when `order` awaits one.
    pub pending: Option<PendingSelection>,
}

impl PlanOutcome {
    fn new(goal: ConversationGoal, kind: OutcomeKind) -> Self {
        Self { goal, kind, tool_trace: Vec::new(), order: None, pending: None }
    }

    pub fn trace_has_error(&self) -> bool {
        self.tool_trace.iter().any(|(_, r)| !r.is_ok())
    }

    pub fn calls(&self) -> Vec<FunctionCall> {
        self.tool_trace.iter().map(|(c, _)| c.clone()).collect()
    }

    pub fn results(&self) -> Vec<ToolResult> {
        self.tool_trace.iter().map(|(_, r)| r.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderAction {
    Create,
    Modify(Vec<Slot>),
    Confirm,
    Cancel,
    AwaitSelection,
    Select,
}

impl OrderAction {
    pub fn name(&self) -> &'static str {
        match self {
            OrderAction::Create => "create",
            OrderAction::Modify(_) => "modify",
            OrderAction::Confirm => "confirm",
            OrderAction::Cancel => "cancel",
            OrderAction::AwaitSelection => "await selection",
            OrderAction::Select => "select",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanError {
    EmptyQuery,
    IllegalTransition { from: Option<OrderState>, action: &'static str },
    Gateway(GatewayError),
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanError::EmptyQuery => f.write_str("empty query"),
            PlanError::Gateway(e) => write!(f, "planning model failed: {e}"),
            PlanError::IllegalTransition { from: None, action } => write!(f, "there is no order to {action}"),
            PlanError::IllegalTransition { from: Some(OrderState::Confirmed), action: "create" | "modify" } => {
                f.write_str("the current order is already confirmed; cancel it before booking a different ride")
            }
            PlanError::IllegalTransition { from: Some(OrderState::Confirmed), action: "confirm" } => {
                f.write_str("the order is already confirmed")
            }
            PlanError::IllegalTransition { from: Some(OrderState::Cancelled), action } => {
                write!(f, "the order was cancelled, so there is nothing to {action}")
            }
            PlanError::IllegalTransition { from: Some(state), action } => {
                write!(f, "cannot {action} an order in state {state}")
            }
        }
    }
}

impl core::error::Error for PlanError {}

/// One pure step of the order state machine.
pub fn apply_order_action(order: &TripOrder, action: &OrderAction) -> Result<TripOrder, PlanError> {
    use OrderState::*;
    let next = match (order.state, action) {
        (Draft | AwaitingPoiSelection, OrderAction::Create) => Planned,
        (Planned, OrderAction::Modify(_)) => Planned,
        (Planned, OrderAction::Confirm) => Confirmed,
        (Planned | Confirmed, OrderAction::Cancel) => Cancelled,
        (Draft | AwaitingPoiSelection, OrderAction::AwaitSelection) => AwaitingPoiSelection,
        (AwaitingPoiSelection, OrderAction::Select) => Draft,
        (from, a) => return Err(PlanError::IllegalTransition { from: Some(from), action: a.name() }),
    };
    let mut out = order.clone();
    out.state = next;
    Ok(out)
}

/// Everything a tool may read during one turn. Session identity comes from
/// here, never from model-supplied arguments.
#[derive(Clone, Debug)]
pub struct TurnEnv {
    pub db: Arc<PoiDatabase>,
    pub router: Arc<RoutePlanner>,
    pub session_id: String,
    pub device: Option<Coord>,
    pub round: u32,
    pub now: NaiveDateTime,
    pub pending: Option<PendingSelection>,
    pub order: Option<TripOrder>,
}

impl TurnEnv {
    fn fresh_order_id(&self) -> String {
        alloc::format!("{}-r{}", self.session_id, self.round)
    }
}

fn geo_code(e: &GeoError) -> &'static str {
    match e {
        GeoError::EmptyQuery => "EmptyQuery",
        GeoError::NoMatch(_) => "NoMatch",
        GeoError::NoLocationFix => "NoLocationFix",
        GeoError::AmbiguousSelection(_) => "AmbiguousSelection",
        GeoError::NotInCandidates(_) => "NotInCandidates",
        GeoError::ZeroLengthRoute => "ZeroLengthRoute",
        GeoError::DuplicateId(_) => "DuplicateId",
        GeoError::CoordinateOutOfRange(_) => "CoordinateOutOfRange",
        GeoError::MalformedRecord { .. } => "MalformedRecord",
        GeoError::NoTariffs => "NoTariffs",
    }
}

fn geo_failure(e: GeoError) -> ToolFailure {
    ToolFailure::new(geo_code(&e), e.to_string())
}

fn time_failure(e: TemporalError) -> ToolFailure {
    let code = match e {
        TemporalError::UnrecognizedExpression { .. } => "UnrecognizedExpression",
        TemporalError::PastDatetime { .. } => "PastDatetime",
        TemporalError::OutOfRange => "OutOfRange",
    };
    ToolFailure::new(code, e.to_string())
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, ToolFailure> {
    serde_json::to_value(v).map_err(|e| ToolFailure::new("Serialization", e.to_string()))
}

fn resolve_args(args: &Args, now: NaiveDateTime) -> Result<NaiveDateTime, ToolFailure> {
    let expr = temporal::parse_time_expr(arg_text(args, "date").unwrap_or(""), arg_text(args, "time").unwrap_or(""))
        .map_err(time_failure)?;
    temporal::resolve_time(&expr, now).map_err(time_failure)
}

fn poi_by_id(env: &TurnEnv, args: &Args, key: &str) -> Result<Option<Poi>, ToolFailure> {
    let Some(raw) = arg_number(args, key) else {
        return Ok(None);
    };
    // Ids are whole numbers; anything else cannot name a POI.
    if raw < 0.0 || libm::trunc(raw) != raw {
        return Err(ToolFailure::new("UnknownPoi", alloc::format!("{key} {raw} is not a POI id")));
    }
    env.db
        .get(raw as u64)
        .cloned()
        .map(Some)
        .ok_or_else(|| ToolFailure::new("UnknownPoi", alloc::format!("no POI with id {raw}")))
}

fn depart_arg(args: &Args, env: &TurnEnv) -> Result<NaiveDateTime, ToolFailure> {
    match arg_text(args, "depart_time") {
        None => Ok(env.now),
        Some(t) => {
            timefmt::parse(t).ok_or_else(|| ToolFailure::new("BadDatetime", alloc::format!("bad datetime `{t}`")))
        }
    }
}

/// Plans the route named by `SrcId`/`ViaId`/`DstId` and fills an order with
/// the quote for `car_type`.
fn build_order(env: &TurnEnv, args: &Args, mut order: TripOrder) -> Result<TripOrder, ToolFailure> {
    let start = poi_by_id(env, args, "SrcId")?.ok_or_else(|| ToolFailure::new("UnknownPoi", "missing SrcId"))?;
    let end = poi_by_id(env, args, "DstId")?.ok_or_else(|| ToolFailure::new("UnknownPoi", "missing DstId"))?;
    let via = poi_by_id(env, args, "ViaId")?;
    let depart = depart_arg(args, env)?;
    let plan = env.router.plan_route(&start, via.as_ref(), &end, depart).map_err(geo_failure)?;
    let car = arg_text(args, "car_type").unwrap_or(DEFAULT_CAR_TYPE);
    let quote =
        plan.quote(car).ok_or_else(|| ToolFailure::new("UnknownCarType", alloc::format!("no tariff for `{car}`")))?;
    order.start_loc = Some(start);
    order.via_loc = via;
    order.end_loc = Some(end);
    order.depart_time = Some(plan.depart_time);
    order.arrive_time = Some(plan.arrive_time);
    order.distance = Some(plan.distance);
    order.duration = Some(plan.duration);
    order.car_type = Some(quote.car_type.clone());
    order.price = Some(quote.price);
    Ok(order)
}

fn current_order_for<'a>(env: &'a TurnEnv, args: &Args) -> Result<&'a TripOrder, ToolFailure> {
    let id = arg_text(args, "order_id").unwrap_or("");
    env.order
        .as_ref()
        .filter(|o| o.order_id == id)
        .ok_or_else(|| ToolFailure::new("UnknownOrder", alloc::format!("no order `{id}` in this session")))
}

fn transition_failure(e: PlanError) -> ToolFailure {
    ToolFailure::new("IllegalTransition", e.to_string())
}

/// Registry with the annotated specs bound to their implementations.
pub fn standard_registry(annotations: &str) -> Result<Registry<TurnEnv>, RegistryError> {
    let mut r = Registry::new();
    for spec in load_specs(annotations)? {
        r.register_tool(spec)?;
    }
    r.bind("Get_current_location", |_, env: &TurnEnv| {
        let device = env.device.ok_or_else(|| geo_failure(GeoError::NoLocationFix))?;
        to_value(&env.db.near(device))
    });
    r.bind("POI_search", |args, env: &TurnEnv| {
        let name = arg_text(args, "POI_name").unwrap_or("");
        let hits = env.db.search(name, env.device).map_err(geo_failure)?;
        to_value(&hits.into_iter().map(|h| h.poi).collect::<Vec<_>>())
    });
    r.bind("POI_select", |args, env: &TurnEnv| {
        let candidates: Vec<Poi> = match args.get("POI_list") {
            Some(list) => {
                serde_json::from_value(list.clone()).map_err(|e| ToolFailure::new("BadCandidates", e.to_string()))?
            }
            None => env.pending.as_ref().map(|p| p.candidates.clone()).unwrap_or_default(),
        };
        let name = arg_text(args, "Selected_POI_name").unwrap_or("");
        to_value(&geo::poi_select(&candidates, name).map_err(geo_failure)?)
    });
    r.bind("Get_departure_time", |args, env: &TurnEnv| {
        Ok(Value::String(timefmt::format(&resolve_args(args, env.now)?)))
    });
    r.bind("Get_arrival_time", |args, env: &TurnEnv| Ok(Value::String(timefmt::format(&resolve_args(args, env.now)?))));
    r.bind("Route_planning_API", |args, env: &TurnEnv| {
        let point = |lat: &str, lng: &str, id: &str| -> Result<Option<Poi>, ToolFailure> {
            let (Some(lat), Some(lng)) = (arg_number(args, lat), arg_number(args, lng)) else {
                return Ok(None);
            };
            let id = arg_number(args, id).map_or(0, |v| v as u64);
            let name = env.db.get(id).map_or_else(String::new, |p| p.display_name.clone());
            let poi = Poi::new(name, lat, lng, id);
            if !poi.coord().in_range() {
                return Err(geo_failure(GeoError::CoordinateOutOfRange(id)));
            }
            Ok(Some(poi))
        };
        let start = point("SrcLat", "SrcLng", "SrcId")?.ok_or_else(|| ToolFailure::new("MissingPoint", "source"))?;
        let end = point("DstLat", "DstLng", "DstId")?.ok_or_else(|| ToolFailure::new("MissingPoint", "destination"))?;
        let via = point("ViaLat", "ViaLng", "ViaId")?;
        let plan = env.router.plan_route(&start, via.as_ref(), &end, depart_arg(args, env)?).map_err(geo_failure)?;
        to_value(&plan)
    });
    r.bind("Order_create", |args, env: &TurnEnv| {
        let base = match &env.order {
            Some(o) if matches!(o.state, OrderState::Draft | OrderState::AwaitingPoiSelection) => o.clone(),
            Some(o) if o.state == OrderState::Confirmed => {
                return Err(transition_failure(PlanError::IllegalTransition { from: Some(o.state), action: "create" }))
            }
            _ => TripOrder::draft(env.fresh_order_id()),
        };
        let filled = build_order(env, args, base)?;
        to_value(&apply_order_action(&filled, &OrderAction::Create).map_err(transition_failure)?)
    });
    r.bind("Order_modify", |args, env: &TurnEnv| {
        let current = current_order_for(env, args)?;
        let filled = build_order(env, args, current.clone())?;
        to_value(&apply_order_action(&filled, &OrderAction::Modify(Vec::new())).map_err(transition_failure)?)
    });
    r.bind("Order_confirm", |args, env: &TurnEnv| {
        let current = current_order_for(env, args)?;
        to_value(&apply_order_action(current, &OrderAction::Confirm).map_err(transition_failure)?)
    });
    r.bind("Order_cancel", |args, env: &TurnEnv| {
        let current = current_order_for(env, args)?;
        to_value(&apply_order_action(current, &OrderAction::Cancel).map_err(transition_failure)?)
    });
    Ok(r)
}

/// Reads a "less than / under / at most N" price ceiling from the query.
pub fn parse_price_ceiling(query: &str) -> Option<Price> {
    const MARKERS: [&str; 9] = [
        "less than",
        "under",
        "at most",
        "no more than",
        "not more than",
        "below",
        "cheaper than",
        "within",
        "maximum",
    ];
    let lower = query.to_lowercase();
    MARKERS
        .iter()
        .filter_map(|m| text::find_word_ci(&lower, m).map(|at| at + m.len()))
        .filter_map(|end| {
            let rest = lower[end..].trim_start().trim_start_matches(['$', '¥']);
            let num: String = rest.chars().take_while(|c| c.is_ascii_digit() || *c == '.').collect();
            let num = num.trim_end_matches('.');
            num.parse::<f64>().ok().map(|v| (end, Price::from_units(v)))
        })
        .min_by_key(|(at, _)| *at)
        .map(|(_, p)| p)
}

/// The tariff named in the query, if any.
pub fn parse_car_preference<'a>(query: &str, car_types: impl Iterator<Item = &'a str>) -> Option<String> {
    car_types
        .filter_map(|c| text::find_word_ci(query, c).map(|at| (at, c)))
        .min_by_key(|(at, _)| *at)
        .map(|(_, c)| c.to_string())
}

/// Slot assignments gathered from one turn's tool results.
#[derive(Clone, Debug, Default)]
struct Extraction {
    start: Option<Poi>,
    via: Option<Poi>,
    end: Option<Poi>,
    here: Option<Vec<Poi>>,
    depart: Option<NaiveDateTime>,
    arrive_by: Option<NaiveDateTime>,
    ambiguous: Option<PendingSelection>,
    failure: Option<String>,
    searched: Vec<Slot>,
}

impl Extraction {
    fn assign(&mut self, slot: Slot, poi: Poi) {
        match slot {
            Slot::StartLoc => self.start = Some(poi),
            Slot::ViaLoc => self.via = Some(poi),
            Slot::EndLoc => self.end = Some(poi),
            Slot::DepartTime => {}
        }
    }

    fn changed_slots(&self) -> Vec<Slot> {
        let mut v = Vec::new();
        if self.start.is_some() {
            v.push(Slot::StartLoc);
        }
        if self.via.is_some() {
            v.push(Slot::ViaLoc);
        }
        if self.end.is_some() {
            v.push(Slot::EndLoc);
        }
        if self.depart.is_some() || self.arrive_by.is_some() {
            v.push(Slot::DepartTime);
        }
        v
    }
}

/// Splits a search result into a single pick or an ambiguous candidate set.
fn rank_search(name: &str, hits: Vec<Poi>) -> Result<Poi, Vec<Poi>> {
    let scores: Vec<f64> = hits.iter().map(|p| geo::lexical_score(name, &p.display_name)).collect();
    let s1 = scores[0];
    if hits.len() == 1 || s1 <= 0.0 || (s1 - scores[1]) / s1 >= DISAMBIGUATION_MARGIN {
        return Ok(hits.into_iter().next().expect("non-empty"));
    }
    Err(hits.into_iter().zip(scores).filter(|(_, s)| *s >= CANDIDATE_FLOOR * s1).map(|(p, _)| p).collect())
}

fn payload<T: serde::de::DeserializeOwned>(res: &ToolResult) -> Option<T> {
    res.payload.clone().and_then(|v| serde_json::from_value(v).ok())
}

/// Plans orders for one assistant: tool registry, geography, and the model
/// that turns queries into calls.
pub struct Planner {
    pub db: Arc<PoiDatabase>,
    pub router: Arc<RoutePlanner>,
    pub registry: Arc<Registry<TurnEnv>>,
    pub routing: RoutingTable,
    pub prompts: PromptSet,
    pub backend: Arc<dyn Completion>,
}

impl fmt::Debug for Planner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Planner").field("pois", &self.db.len()).field("registry", &self.registry).finish()
    }
}

impl Planner {
    pub fn new(db: Arc<PoiDatabase>, router: Arc<RoutePlanner>, backend: Arc<dyn Completion>) -> Self {
        Self {
            db,
            router,
            registry: Arc::new(standard_registry(DEFAULT_ANNOTATIONS).expect("shipped annotations are valid")),
            routing: RoutingTable::default(),
            prompts: PromptSet::default(),
            backend,
        }
    }

    fn env(&self, session: &DialogSession, now: NaiveDateTime) -> TurnEnv {
        TurnEnv {
            db: self.db.clone(),
            router: self.router.clone(),
            session_id: session.session_id.clone(),
            device: session.device,
            round: session.next_round(),
            now,
            pending: session.pending_candidates.clone(),
            order: session.current_order.clone(),
        }
    }

    /// Asks the planning model for the goal; an unusable answer falls back
    /// to the keyword lexicon.
    pub fn classify_goal(&self, session: &DialogSession, query: &Utterance) -> Result<ConversationGoal, PlanError> {
        let text = query.text.trim();
        if text.is_empty() {
            return Err(PlanError::EmptyQuery);
        }
        let choice = resolve_model(&self.routing, ReplierKind::Specialized, Stage::Planning)
            .map_err(|_| PlanError::Gateway(GatewayError::MissingConfig("planning".into())))?;
        let bundle = prompt::classify_prompt(&self.prompts, session, text, query.timestamp);
        let answer = self.backend.complete(&choice, &bundle).map_err(PlanError::Gateway)?;
        Ok(answer
            .lines()
            .find_map(ConversationGoal::parse)
            .unwrap_or_else(|| lexicon_goal(text, pending_names(session).as_slice())))
    }

    pub fn plan_turn(
        &self,
        session: &DialogSession,
        query: &Utterance,
        goal: ConversationGoal,
        now: NaiveDateTime,
    ) -> Result<PlanOutcome, PlanError> {
        if query.text.trim().is_empty() {
            return Err(PlanError::EmptyQuery);
        }
        let env = self.env(session, now);
        let state = session.current_order.as_ref().map(|o| o.state);
        match goal {
            ConversationGoal::PolicyInquiry | ConversationGoal::ChitChat => {
                Ok(PlanOutcome::new(goal, OutcomeKind::NonOrderTurn { goal }))
            }
            ConversationGoal::ConfirmOrder => self.lifecycle(&env, goal, "Order_confirm", state, OrderState::Planned),
            ConversationGoal::CancelOrder => self.lifecycle(&env, goal, "Order_cancel", state, OrderState::Confirmed),
            ConversationGoal::CreateOrder => {
                let base = match session.current_order.as_ref() {
                    Some(o) if o.state == OrderState::Confirmed => {
                        return Err(PlanError::IllegalTransition { from: Some(o.state), action: "create" })
                    }
                    Some(o) if matches!(o.state, OrderState::Draft | OrderState::AwaitingPoiSelection) => o.clone(),
                    _ => TripOrder::draft(env.fresh_order_id()),
                };
                self.fill_and_plan(session, &env, query, goal, base, false)
            }
            ConversationGoal::ModifyOrder => match session.current_order.as_ref() {
                Some(o) if o.state == OrderState::Planned => {
                    self.fill_and_plan(session, &env, query, goal, o.clone(), true)
                }
                // A change while slots are still being collected is just more slots.
                Some(o) if matches!(o.state, OrderState::Draft | OrderState::AwaitingPoiSelection) => {
                    self.fill_and_plan(session, &env, query, ConversationGoal::CreateOrder, o.clone(), false)
                }
                other => Err(PlanError::IllegalTransition { from: other.map(|o| o.state), action: "modify" }),
            },
        }
    }

    /// Confirm or cancel. `also_from` is the second state the action is
    /// legal from besides PLANNED (cancel also works on CONFIRMED).
    fn lifecycle(
        &self,
        env: &TurnEnv,
        goal: ConversationGoal,
        function: &str,
        state: Option<OrderState>,
        also_from: OrderState,
    ) -> Result<PlanOutcome, PlanError> {
        let action = if goal == ConversationGoal::ConfirmOrder { "confirm" } else { "cancel" };
        let order =
            env.order.as_ref().filter(|_| matches!(state, Some(s) if s == OrderState::Planned || s == also_from));
        let Some(order) = order else {
            let from = state.filter(|s| !matches!(s, OrderState::Draft | OrderState::AwaitingPoiSelection));
            return Err(PlanError::IllegalTransition { from, action });
        };
        let mut args = Args::new();
        args.insert("order_id".into(), Value::String(order.order_id.clone()));
        let call = FunctionCall::new(function, args);
        let res = self.registry.dispatch(&call, env);
        let updated: Option<TripOrder> = payload(&res);
        let mut out = PlanOutcome::new(goal, OutcomeKind::NonOrderTurn { goal });
        out.kind = match (&updated, goal) {
            (Some(o), ConversationGoal::ConfirmOrder) => OutcomeKind::OrderConfirmed { order: o.clone() },
            (Some(o), _) => OutcomeKind::OrderCancelled { order: o.clone() },
            (None, _) => OutcomeKind::InfeasibleRequest {
                reason: res.error_ref().map_or_else(|| "order update failed".into(), |e| e.to_string()),
                suggestion: None,
            },
        };
        out.order = updated;
        out.tool_trace.push((call, res));
        Ok(out)
    }

    fn extraction_calls(
        &self,
        session: &DialogSession,
        query: &Utterance,
        goal: ConversationGoal,
    ) -> Result<Result<Vec<FunctionCall>, String>, PlanError> {
        let choice = resolve_model(&self.routing, ReplierKind::Specialized, Stage::Planning)
            .map_err(|_| PlanError::Gateway(GatewayError::MissingConfig("planning".into())))?;
        let specs: Vec<_> = self.registry.specs().collect();
        let listing = prompt::tool_listing(&specs);
        let bundle = prompt::planning_prompt(&self.prompts, goal, &listing, session, &query.text, query.timestamp);
        let raw = self.backend.complete(&choice, &bundle).map_err(PlanError::Gateway)?;
        Ok(parse_function_calls(&raw).map_err(|e| e.to_string()))
    }

    fn run_extraction(
        &self,
        env: &TurnEnv,
        calls: Vec<FunctionCall>,
        trace: &mut Vec<(FunctionCall, ToolResult)>,
    ) -> Extraction {
        let mut ex = Extraction::default();
        for call in calls {
            let res = self.registry.dispatch(&call, env);
            if let Some(err) = res.error_ref() {
                ex.failure.get_or_insert_with(|| err.to_string());
                trace.push((call, res));
                continue;
            }
            match call.function.as_str() {
                "POI_search" => {
                    let slot = call.text_arg("slot").and_then(Slot::parse).unwrap_or(Slot::EndLoc);
                    let name = call.text_arg("POI_name").unwrap_or("");
                    ex.searched.push(slot);
                    if let Some(hits) = payload::<Vec<Poi>>(&res).filter(|h| !h.is_empty()) {
                        match rank_search(name, hits) {
                            Ok(poi) => ex.assign(slot, poi),
                            Err(candidates) => {
                                ex.ambiguous.get_or_insert(PendingSelection { slot, candidates });
                            }
                        }
                    }
                }
                "POI_select" => {
                    let slot = call
                        .text_arg("slot")
                        .and_then(Slot::parse)
                        .or(env.pending.as_ref().map(|p| p.slot))
                        .unwrap_or(Slot::EndLoc);
                    if let Some(poi) = payload::<Poi>(&res) {
                        ex.assign(slot, poi);
                    }
                }
                "Get_current_location" => ex.here = payload(&res),
                "Get_departure_time" => ex.depart = payload::<String>(&res).and_then(|s| timefmt::parse(&s)),
                "Get_arrival_time" => ex.arrive_by = payload::<String>(&res).and_then(|s| timefmt::parse(&s)),
                _ => {}
            }
            trace.push((call, res));
        }
        ex
    }

    fn fill_and_plan(
        &self,
        session: &DialogSession,
        env: &TurnEnv,
        query: &Utterance,
        goal: ConversationGoal,
        mut order: TripOrder,
        modifying: bool,
    ) -> Result<PlanOutcome, PlanError> {
        let mut out = PlanOutcome::new(goal, OutcomeKind::NonOrderTurn { goal });
        let calls = match self.extraction_calls(session, query, goal)? {
            Ok(calls) => calls,
            Err(reason) => {
                out.kind = OutcomeKind::InfeasibleRequest {
                    reason: alloc::format!("the request could not be understood ({reason})"),
                    suggestion: None,
                };
                return Ok(out);
            }
        };
        let ex = self.run_extraction(env, calls, &mut out.tool_trace);
        if let Some(reason) = ex.failure.clone() {
            out.kind = OutcomeKind::InfeasibleRequest { reason, suggestion: None };
            return Ok(out);
        }

        let ceiling = parse_price_ceiling(&query.text);
        let car_pref = parse_car_preference(&query.text, self.router.tariffs.car_types());
        let constraints_changed = ceiling.is_some() || car_pref.is_some();
        if ceiling.is_some() {
            order.constraints.price_ceiling = ceiling;
        }
        if car_pref.is_some() {
            order.constraints.car_type = car_pref;
        }
        if modifying && ex.changed_slots().is_empty() && !constraints_changed && ex.ambiguous.is_none() {
            out.kind = OutcomeKind::InfeasibleRequest {
                reason: "no change to the order was recognized".into(),
                suggestion: None,
            };
            return Ok(out);
        }

        // A modification that needs a fresh choice of place starts a new draft
        // from the planned order's slots.
        if modifying && ex.ambiguous.is_some() {
            let mut draft = TripOrder::draft(env.fresh_order_id());
            draft.start_loc = order.start_loc.clone();
            draft.via_loc = order.via_loc.clone();
            draft.end_loc = order.end_loc.clone();
            draft.depart_time = order.depart_time;
            draft.constraints = order.constraints.clone();
            order = draft;
        }

        if let Some(p) = ex.start.clone() {
            order.start_loc = Some(p);
        }
        if let Some(p) = ex.via.clone() {
            order.via_loc = Some(p);
        }
        if let Some(p) = ex.end.clone() {
            order.end_loc = Some(p);
        }
        if let Some(t) = ex.depart {
            order.depart_time = Some(t);
            order.constraints.arrive_by = None;
        }
        if let Some(t) = ex.arrive_by {
            order.constraints.arrive_by = Some(t);
        }
        if order.start_loc.is_none() {
            order.start_loc = match &ex.here {
                Some(here) => here.first().cloned(),
                None if env.device.is_some() => {
                    let call = FunctionCall::new("Get_current_location", Args::new());
                    let res = self.registry.dispatch(&call, env);
                    let here: Option<Vec<Poi>> = payload(&res);
                    out.tool_trace.push((call, res));
                    here.and_then(|h| h.into_iter().next())
                }
                None => None,
            };
        }

        if let Some(pending) = ex.ambiguous {
            if matches!(pending.slot, Slot::StartLoc) && ex.start.is_none() {
                order.start_loc = None;
            }
            let awaiting = apply_order_action(&order, &OrderAction::AwaitSelection)?;
            out.kind = OutcomeKind::PoiDisambiguation { slot: pending.slot, candidates: pending.candidates.clone() };
            out.order = Some(awaiting);
            out.pending = Some(pending);
            return Ok(out);
        }
        if order.state == OrderState::AwaitingPoiSelection {
            order = apply_order_action(&order, &OrderAction::Select)?;
        }

        let mut missing = Vec::new();
        if order.start_loc.is_none() {
            missing.push(Slot::StartLoc);
        }
        if order.end_loc.is_none() {
            missing.push(Slot::EndLoc);
        }
        if !missing.is_empty() {
            out.kind = OutcomeKind::SlotElicitation { missing };
            out.order = Some(order);
            return Ok(out);
        }

        let start = order.start_loc.clone().expect("checked");
        let end = order.end_loc.clone().expect("checked");
        let via = order.via_loc.clone();
        let depart = match order.constraints.arrive_by {
            Some(target) => match self.back_compute_departure(&start, via.as_ref(), &end, target, env.now) {
                Ok(t) => t,
                Err(reason) => {
                    out.kind = OutcomeKind::InfeasibleRequest { reason, suggestion: None };
                    return Ok(out);
                }
            },
            None => order.depart_time.unwrap_or(env.now),
        };

        let route_call = route_call(&start, via.as_ref(), &end, depart);
        let route_res = self.registry.dispatch(&route_call, env);
        let plan: Option<RoutePlan> = payload(&route_res);
        let route_err = route_res.error_ref().map(ToString::to_string);
        out.tool_trace.push((route_call, route_res));
        let Some(plan) = plan else {
            out.kind = OutcomeKind::InfeasibleRequest {
                reason: route_err.unwrap_or_else(|| "route planning failed".into()),
                suggestion: None,
            };
            return Ok(out);
        };

        let (car, infeasible) = choose_quote(&plan, &order);
        let mut args = route_ids(&start, via.as_ref(), &end);
        args.insert("depart_time".into(), Value::String(timefmt::format(&depart)));
        args.insert("car_type".into(), Value::String(car));
        let function = if modifying && order.state == OrderState::Planned {
            args.insert("order_id".into(), Value::String(order.order_id.clone()));
            "Order_modify"
        } else {
            "Order_create"
        };
        let env_with_order = TurnEnv { order: Some(order.clone()), ..env.clone() };
        let call = FunctionCall::new(function, args);
        let res = self.registry.dispatch(&call, &env_with_order);
        let created: Option<TripOrder> = payload(&res);
        let create_err = res.error_ref().map(ToString::to_string);
        out.tool_trace.push((call, res));
        let Some(created) = created else {
            out.kind = OutcomeKind::InfeasibleRequest {
                reason: create_err.unwrap_or_else(|| "order creation failed".into()),
                suggestion: None,
            };
            return Ok(out);
        };
        let mut created = created;
        created.constraints = order.constraints.clone();
        debug_assert!(validate_order(&created).is_empty());
        out.order = Some(created.clone());
        out.kind = match infeasible {
            Some(reason) => OutcomeKind::InfeasibleRequest { reason, suggestion: Some(created) },
            None if function == "Order_modify" => OutcomeKind::OrderModified { order: created, quotes: plan.quotes },
            None => OutcomeKind::OrderPlanned { order: created, quotes: plan.quotes },
        };
        Ok(out)
    }

    /// Latest departure whose planned arrival is not after `target`.
    fn back_compute_departure(
        &self,
        start: &Poi,
        via: Option<&Poi>,
        end: &Poi,
        target: NaiveDateTime,
        now: NaiveDateTime,
    ) -> Result<NaiveDateTime, String> {
        let fail = |e: GeoError| e.to_string();
        let first = self.router.plan_route(start, via, end, target).map_err(fail)?;
        let mut depart = target - (first.arrive_time - first.depart_time);
        // The departure can fall in a different speed band; shift once more.
        let second = self.router.plan_route(start, via, end, depart).map_err(fail)?;
        if second.arrive_time > target {
            depart -= second.arrive_time - target;
        }
        if depart < now {
            return Err(alloc::format!(
                "arriving by {} would need a departure at {}, which has already passed",
                timefmt::format(&target),
                timefmt::format(&depart)
            ));
        }
        Ok(depart)
    }
}

fn pending_names(session: &DialogSession) -> Vec<&str> {
    session.pending_candidates.iter().flat_map(|p| p.candidates.iter().map(|c| c.display_name.as_str())).collect()
}

fn route_ids(start: &Poi, via: Option<&Poi>, end: &Poi) -> Args {
    let mut args = Args::new();
    args.insert("SrcId".into(), json!(start.id));
    args.insert("DstId".into(), json!(end.id));
    if let Some(v) = via {
        args.insert("ViaId".into(), json!(v.id));
    }
    args
}

fn route_call(start: &Poi, via: Option<&Poi>, end: &Poi, depart: NaiveDateTime) -> FunctionCall {
    let mut args = route_ids(start, via, end);
    args.insert("SrcLat".into(), json!(start.lat));
    args.insert("SrcLng".into(), json!(start.lng));
    args.insert("DstLat".into(), json!(end.lat));
    args.insert("DstLng".into(), json!(end.lng));
    if let Some(v) = via {
        args.insert("ViaLat".into(), json!(v.lat));
        args.insert("ViaLng".into(), json!(v.lng));
    }
    args.insert("depart_time".into(), Value::String(timefmt::format(&depart)));
    FunctionCall::new("Route_planning_API", args)
}

/// Picks the car type: an explicit preference, else the cheapest quote under
/// the ceiling, else the default. Returns the infeasibility reason when the
/// ceiling cannot be met; the cheapest (or preferred) quote is then offered.
fn choose_quote(plan: &RoutePlan, order: &TripOrder) -> (String, Option<String>) {
    let c = &order.constraints;
    let ceiling_reason = |p: Price| alloc::format!("no quote ≤ {p}");
    if let Some(pref) = c.car_type.as_deref().and_then(|t| plan.quote(t)) {
        let over = c.price_ceiling.filter(|cap| pref.price > *cap);
        return (pref.car_type.clone(), over.map(ceiling_reason));
    }
    if let Some(cap) = c.price_ceiling {
        let fitting = plan.quotes.iter().filter(|q| q.price <= cap).min_by_key(|q| q.price);
        return match fitting {
            Some(q) => (q.car_type.clone(), None),
            None => {
                let cheapest = plan.cheapest().map_or(DEFAULT_CAR_TYPE.to_string(), |q| q.car_type.clone());
                (cheapest, Some(ceiling_reason(cap)))
            }
        };
    }
    let default = plan
        .quote(DEFAULT_CAR_TYPE)
        .or(plan.quotes.first())
        .map_or(DEFAULT_CAR_TYPE.to_string(), |q| q.car_type.clone());
    (default, None)
}

/// Adds `minutes` to a datetime at second resolution.
pub fn add_minutes(t: NaiveDateTime, minutes: f64) -> NaiveDateTime {
    t + Duration::seconds(crate::model::minutes_to_seconds(minutes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(state: OrderState) -> TripOrder {
        let mut o = TripOrder::draft("o");
        o.state = state;
        o
    }

    const ACTIONS: [OrderAction; 6] = [
        OrderAction::Create,
        OrderAction::Modify(Vec::new()),
        OrderAction::Confirm,
        OrderAction::Cancel,
        OrderAction::AwaitSelection,
        OrderAction::Select,
    ];

    #[test]
    fn canonical_transitions() {
        assert_eq!(
            apply_order_action(&order(OrderState::Planned), &OrderAction::Confirm).unwrap().state,
            OrderState::Confirmed
        );
        assert!(matches!(
            apply_order_action(&order(OrderState::Cancelled), &OrderAction::Confirm),
            Err(PlanError::IllegalTransition { .. })
        ));
        assert!(
            apply_order_action(&order(OrderState::Confirmed), &OrderAction::Modify(alloc::vec![Slot::EndLoc])).is_err()
        );
        assert_eq!(
            apply_order_action(&order(OrderState::Confirmed), &OrderAction::Cancel).unwrap().state,
            OrderState::Cancelled
        );
    }

    #[test]
    fn full_transition_table() {
        use OrderState::*;
        let expected = |s: OrderState, a: &OrderAction| -> Option<OrderState> {
            match (s, a) {
                (Draft, OrderAction::Create) | (AwaitingPoiSelection, OrderAction::Create) => Some(Planned),
                (Planned, OrderAction::Modify(_)) => Some(Planned),
                (Planned, OrderAction::Confirm) => Some(Confirmed),
                (Planned, OrderAction::Cancel) | (Confirmed, OrderAction::Cancel) => Some(Cancelled),
                (Draft, OrderAction::AwaitSelection) | (AwaitingPoiSelection, OrderAction::AwaitSelection) => {
                    Some(AwaitingPoiSelection)
                }
                (AwaitingPoiSelection, OrderAction::Select) => Some(Draft),
                _ => None,
            }
        };
        for s in OrderState::ALL {
            for a in &ACTIONS {
                assert_eq!(apply_order_action(&order(s), a).ok().map(|o| o.state), expected(s, a), "{s} {a:?}");
            }
        }
    }

    #[test]
    fn ceilings_and_car_types() {
        assert_eq!(parse_price_ceiling("book a order less than 40 dollars"), Some(Price::from_units(40.0)));
        assert_eq!(parse_price_ceiling("under $35.5 please"), Some(Price::from_units(35.5)));
        assert_eq!(parse_price_ceiling("at most 50."), Some(Price::from_units(50.0)));
        assert_eq!(parse_price_ceiling("go to the museum"), None);
        let types = ["Express", "Premier", "Luxe", "Taxi"];
        assert_eq!(parse_car_preference("make it a luxe", types.into_iter()), Some("Luxe".into()));
        assert_eq!(parse_car_preference("taxis", types.into_iter()), None);
    }

    #[test]
    fn transition_messages() {
        let e = PlanError::IllegalTransition { from: None, action: "confirm" };
        assert_eq!(e.to_string(), "there is no order to confirm");
    }
}
