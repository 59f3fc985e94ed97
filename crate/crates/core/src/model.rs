//! Trip orders, POIs, utterances and dialog sessions.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dialog::ReplierKind;
use crate::kb::QaPair;
use crate::planner::OutcomeKind;
use crate::tools::{FunctionCall, ToolResult};

/// A geographic coordinate in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coord {
    pub lat: f64,
    pub lng: f64,
}

impl Coord {
    pub const fn new(lat: f64, lng: f64) -> Self {
        Self { lat, lng }
    }

    pub fn in_range(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lng)
    }
}

/// A named point of interest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub display_name: String,
    pub lat: f64,
    pub lng: f64,
    pub id: u64,
}

impl Poi {
    pub fn new(display_name: impl Into<String>, lat: f64, lng: f64, id: u64) -> Self {
        Self { display_name: display_name.into(), lat, lng, id }
    }

    pub fn coord(&self) -> Coord {
        Coord::new(self.lat, self.lng)
    }
}

/// A fare in currency units, held at 0.1 resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Price(i64);

impl Price {
    pub const fn from_tenths(tenths: i64) -> Self {
        Self(tenths)
    }

    /// Rounds half away from zero to the nearest tenth.
    pub fn from_units(units: f64) -> Self {
        Self(libm::round(units * 10.0) as i64)
    }

    pub const fn tenths(self) -> i64 {
        self.0
    }

    pub fn units(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{}", abs / 10, abs % 10)
    }
}

impl Serialize for Price {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.units())
    }
}

impl<'de> Deserialize<'de> for Price {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(Price::from_units)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OrderState {
    Draft,
    AwaitingPoiSelection,
    Planned,
    Confirmed,
    Cancelled,
}

impl OrderState {
    pub const ALL: [OrderState; 5] = [
        OrderState::Draft,
        OrderState::AwaitingPoiSelection,
        OrderState::Planned,
        OrderState::Confirmed,
        OrderState::Cancelled,
    ];

    pub fn is_terminal(self) -> bool {
        self == OrderState::Cancelled
    }

    /// PLANNED and CONFIRMED orders carry a complete route and quote.
    pub fn is_committed(self) -> bool {
        matches!(self, OrderState::Planned | OrderState::Confirmed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OrderState::Draft => "DRAFT",
            OrderState::AwaitingPoiSelection => "AWAITING_POI_SELECTION",
            OrderState::Planned => "PLANNED",
            OrderState::Confirmed => "CONFIRMED",
            OrderState::Cancelled => "CANCELLED",
        }
    }
}

impl fmt::Display for OrderState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// User-stated constraints carried alongside an order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OrderConstraints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_ceiling: Option<Price>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub car_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::timefmt::option")]
    pub arrive_by: Option<NaiveDateTime>,
}

impl OrderConstraints {
    pub fn is_empty(&self) -> bool {
        self.price_ceiling.is_none() && self.car_type.is_none() && self.arrive_by.is_none()
    }
}

/// The trip order record plus its lifecycle state.
///
/// Every slot is optional so that DRAFT and AWAITING_POI_SELECTION orders
/// can hold partially collected information; [`validate_order`] enforces
/// completeness once the order is PLANNED or CONFIRMED.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripOrder {
    pub order_id: String,
    pub state: OrderState,
    pub start_loc: Option<Poi>,
    #[serde(default)]
    pub via_loc: Option<Poi>,
    pub end_loc: Option<Poi>,
    #[serde(with = "crate::timefmt::option")]
    pub depart_time: Option<NaiveDateTime>,
    #[serde(with = "crate::timefmt::option")]
    pub arrive_time: Option<NaiveDateTime>,
    /// Kilometers.
    pub distance: Option<f64>,
    /// Minutes.
    pub duration: Option<f64>,
    pub car_type: Option<String>,
    pub price: Option<Price>,
    #[serde(default, skip_serializing_if = "OrderConstraints::is_empty")]
    pub constraints: OrderConstraints,
}

impl TripOrder {
    pub fn draft(order_id: impl Into<String>) -> Self {
        Self {
            order_id: order_id.into(),
            state: OrderState::Draft,
            start_loc: None,
            via_loc: None,
            end_loc: None,
            depart_time: None,
            arrive_time: None,
            distance: None,
            duration: None,
            car_type: None,
            price: None,
            constraints: OrderConstraints::default(),
        }
    }
}

/// Converts fractional minutes to whole seconds.
pub fn minutes_to_seconds(minutes: f64) -> i64 {
    libm::round(minutes * 60.0) as i64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    MissingField(&'static str),
    IdenticalEndpoints,
    NonPositiveDistance,
    NonPositiveDuration,
    NegativePrice,
    ArrivalMismatch,
    CoordinateOutOfRange(&'static str),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingField(name) => write!(f, "missing {name}"),
            Violation::IdenticalEndpoints => f.write_str("identical endpoints"),
            Violation::NonPositiveDistance => f.write_str("distance must be positive"),
            Violation::NonPositiveDuration => f.write_str("duration must be positive"),
            Violation::NegativePrice => f.write_str("price must be non-negative"),
            Violation::ArrivalMismatch => f.write_str("arrive_time != depart_time + duration"),
            Violation::CoordinateOutOfRange(slot) => write!(f, "{slot} coordinate out of range"),
        }
    }
}

/// Checks every order invariant that applies in the order's current state.
pub fn validate_order(order: &TripOrder) -> Vec<Violation> {
    let mut out = Vec::new();
    for (slot, poi) in [("start_loc", &order.start_loc), ("via_loc", &order.via_loc), ("end_loc", &order.end_loc)] {
        if let Some(poi) = poi {
            if !poi.coord().in_range() {
                out.push(Violation::CoordinateOutOfRange(slot));
            }
        }
    }
    if order.price.is_some_and(|p| p.tenths() < 0) {
        out.push(Violation::NegativePrice);
    }
    if !order.state.is_committed() {
        return out;
    }

    let required: [(&'static str, bool); 8] = [
        ("start_loc", order.start_loc.is_some()),
        ("end_loc", order.end_loc.is_some()),
        ("depart_time", order.depart_time.is_some()),
        ("arrive_time", order.arrive_time.is_some()),
        ("distance", order.distance.is_some()),
        ("duration", order.duration.is_some()),
        ("car_type", order.car_type.is_some()),
        ("price", order.price.is_some()),
    ];
    for (name, present) in required {
        if !present {
            out.push(Violation::MissingField(name));
        }
    }
    if let (Some(s), Some(e)) = (&order.start_loc, &order.end_loc) {
        if s.id == e.id {
            out.push(Violation::IdenticalEndpoints);
        }
    }
    if order.distance.is_some_and(|d| d.is_nan() || d <= 0.0) {
        out.push(Violation::NonPositiveDistance);
    }
    if order.duration.is_some_and(|d| d.is_nan() || d <= 0.0) {
        out.push(Violation::NonPositiveDuration);
    }
    if let (Some(dep), Some(arr), Some(dur)) = (order.depart_time, order.arrive_time, order.duration) {
        if dep + Duration::seconds(minutes_to_seconds(dur)) != arr {
            out.push(Violation::ArrivalMismatch);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub round_id: u32,
    pub role: Role,
    pub text: String,
    #[serde(with = "crate::timefmt")]
    pub timestamp: NaiveDateTime,
}

impl Utterance {
    pub fn user(round_id: u32, text: impl Into<String>, timestamp: NaiveDateTime) -> Self {
        Self { round_id, role: Role::User, text: text.into(), timestamp }
    }

    pub fn assistant(round_id: u32, text: impl Into<String>, timestamp: NaiveDateTime) -> Self {
        Self { round_id, role: Role::Assistant, text: text.into(), timestamp }
    }
}

/// What the user wants from a single turn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConversationGoal {
    CreateOrder,
    ModifyOrder,
    ConfirmOrder,
    CancelOrder,
    PolicyInquiry,
    ChitChat,
}

/// Coarse reporting groups: order handling, policy questions, chit-chat.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GoalGroup {
    Order,
    Policy,
    ChitChat,
}

impl ConversationGoal {
    pub const ALL: [ConversationGoal; 6] = [
        ConversationGoal::CreateOrder,
        ConversationGoal::ModifyOrder,
        ConversationGoal::ConfirmOrder,
        ConversationGoal::CancelOrder,
        ConversationGoal::PolicyInquiry,
        ConversationGoal::ChitChat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConversationGoal::CreateOrder => "CreateOrder",
            ConversationGoal::ModifyOrder => "ModifyOrder",
            ConversationGoal::ConfirmOrder => "ConfirmOrder",
            ConversationGoal::CancelOrder => "CancelOrder",
            ConversationGoal::PolicyInquiry => "PolicyInquiry",
            ConversationGoal::ChitChat => "ChitChat",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        let label = label.trim();
        Self::ALL.into_iter().find(|g| g.as_str().eq_ignore_ascii_case(label))
    }

    pub fn group(self) -> GoalGroup {
        match self {
            ConversationGoal::PolicyInquiry => GoalGroup::Policy,
            ConversationGoal::ChitChat => GoalGroup::ChitChat,
            _ => GoalGroup::Order,
        }
    }

    pub fn is_order_goal(self) -> bool {
        self.group() == GoalGroup::Order
    }
}

impl fmt::Display for ConversationGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An order slot the planner can elicit or disambiguate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    StartLoc,
    ViaLoc,
    EndLoc,
    DepartTime,
}

impl Slot {
    pub fn as_str(self) -> &'static str {
        match self {
            Slot::StartLoc => "start_loc",
            Slot::ViaLoc => "via_loc",
            Slot::EndLoc => "end_loc",
            Slot::DepartTime => "depart_time",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "start" | "start_loc" | "src" | "origin" | "pickup" => Some(Slot::StartLoc),
            "via" | "via_loc" => Some(Slot::ViaLoc),
            "end" | "end_loc" | "dst" | "destination" | "dropoff" => Some(Slot::EndLoc),
            "depart_time" | "time" => Some(Slot::DepartTime),
            _ => None,
        }
    }
}

/// Candidates offered to the user for one location slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingSelection {
    pub slot: Slot,
    pub candidates: Vec<Poi>,
}

/// Human or judge labels attached to a logged turn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub order_correct: bool,
    pub response_correct: bool,
}

/// One completed round: the user query, everything the assistant did for
/// it, and the response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub user: Utterance,
    #[serde(default)]
    pub function_calls: Vec<FunctionCall>,
    #[serde(default)]
    pub tool_results: Vec<ToolResult>,
    #[serde(default)]
    pub order_snapshot: Option<TripOrder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<PendingSelection>,
    pub goal: ConversationGoal,
    pub outcome: OutcomeKind,
    pub replier: ReplierKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieved: Vec<QaPair>,
    pub assistant: Utterance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("round {got} is out of order (expected {expected})")]
    NonMonotonicRound { expected: u32, got: u32 },
    #[error("pending candidates must be present exactly when the order awaits a POI selection")]
    PendingMismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogSession {
    pub session_id: String,
    #[serde(with = "crate::timefmt")]
    pub created_at: NaiveDateTime,
    /// Device coordinate used by current-location lookups.
    #[serde(default)]
    pub device: Option<Coord>,
    #[serde(default)]
    pub turns: Vec<TurnRecord>,
    #[serde(default)]
    pub current_order: Option<TripOrder>,
    #[serde(default)]
    pub pending_candidates: Option<PendingSelection>,
}

impl DialogSession {
    pub fn new(session_id: impl Into<String>, created_at: NaiveDateTime, device: Option<Coord>) -> Self {
        Self {
            session_id: session_id.into(),
            created_at,
            device,
            turns: Vec::new(),
            current_order: None,
            pending_candidates: None,
        }
    }

    pub fn last_round(&self) -> u32 {
        self.turns.last().map_or(0, |t| t.user.round_id)
    }

    pub fn next_round(&self) -> u32 {
        self.last_round() + 1
    }

    /// Appends a completed turn. The order snapshot, when present, becomes
    /// the current order and the turn's pending selection replaces the
    /// session's.
    pub fn append_turn(&mut self, turn: TurnRecord) -> Result<(), SessionError> {
        let expected = self.next_round();
        if turn.user.round_id != expected {
            return Err(SessionError::NonMonotonicRound { expected, got: turn.user.round_id });
        }
        let order = turn.order_snapshot.as_ref().or(self.current_order.as_ref());
        let awaiting = order.is_some_and(|o| o.state == OrderState::AwaitingPoiSelection);
        let has_pending = turn.pending.as_ref().is_some_and(|p| !p.candidates.is_empty());
        if awaiting != has_pending {
            return Err(SessionError::PendingMismatch);
        }
        if let Some(order) = &turn.order_snapshot {
            self.current_order = Some(order.clone());
        }
        self.pending_candidates = turn.pending.clone();
        self.turns.push(turn);
        Ok(())
    }

    /// `(user, assistant)` text pairs in round order.
    pub fn history(&self) -> impl Iterator<Item = (&str, &str)> {
        self.turns.iter().map(|t| (t.user.text.as_str(), t.assistant.text.as_str()))
    }
}
