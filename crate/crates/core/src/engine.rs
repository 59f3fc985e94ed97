//! One assistant turn end to end: classify, plan, pick a replier, retrieve,
//! generate, and record.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use chrono::NaiveDateTime;

use crate::dialog::{consult_selector, generate_response, ReplierKind, RoutingTable, FALLBACK_APOLOGY};
use crate::geo::{PoiDatabase, RoutePlanner};
use crate::heuristic::lexicon_goal;
use crate::kb::{KbIndex, QaPair, DEFAULT_K};
use crate::llm::Completion;
use crate::model::{ConversationGoal, DialogSession, OrderState, SessionError, TripOrder, TurnRecord, Utterance};
use crate::planner::{apply_order_action, OrderAction, OutcomeKind, PlanError, PlanOutcome, Planner};
use crate::prompt::PromptSet;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("empty query")]
    EmptyQuery,
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("{0}")]
    Transition(PlanError),
    #[error("no order `{0}` in this session")]
    UnknownOrder(String),
}

/// What a turn produced besides the record itself.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnOutput {
    pub record: TurnRecord,
    /// Set when a model call failed and the turn degraded to a fallback.
    pub gateway_failure: Option<String>,
    /// Whether the replier-selection model agreed with the rule, when asked.
    pub selector_agreed: Option<bool>,
}

pub struct Assistant {
    pub planner: Planner,
    pub kb: Arc<KbIndex>,
    pub k: usize,
}

impl core::fmt::Debug for Assistant {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Assistant").field("planner", &self.planner).field("kb", &self.kb.len()).finish()
    }
}

impl Assistant {
    pub fn new(
        db: Arc<PoiDatabase>,
        router: Arc<RoutePlanner>,
        kb: Arc<KbIndex>,
        backend: Arc<dyn Completion>,
    ) -> Self {
        Self { planner: Planner::new(db, router, backend), kb, k: DEFAULT_K }
    }

    pub fn with_routing(mut self, routing: RoutingTable) -> Self {
        self.planner.routing = routing;
        self
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.planner.prompts = prompts;
        self
    }

    /// Runs one turn and appends it to the session.
    pub fn handle_turn(
        &self,
        session: &mut DialogSession,
        text: &str,
        now: NaiveDateTime,
    ) -> Result<TurnOutput, EngineError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(EngineError::EmptyQuery);
        }
        let query = Utterance::user(session.next_round(), text, now);
        let mut gateway_failure = None;

        let goal = match self.planner.classify_goal(session, &query) {
            Ok(g) => g,
            Err(e) => {
                gateway_failure = Some(e.to_string());
                let pending: Vec<&str> = session
                    .pending_candidates
                    .iter()
                    .flat_map(|p| p.candidates.iter().map(|c| c.display_name.as_str()))
                    .collect();
                lexicon_goal(text, &pending)
            }
        };

        let plan = match self.planner.plan_turn(session, &query, goal, now) {
            Ok(p) => p,
            Err(PlanError::EmptyQuery) => return Err(EngineError::EmptyQuery),
            Err(e @ PlanError::IllegalTransition { .. }) => infeasible(goal, e.to_string()),
            Err(e @ PlanError::Gateway(_)) => {
                gateway_failure.get_or_insert_with(|| e.to_string());
                infeasible(goal, "the trip planner is unavailable right now".into())
            }
        };

        let retrieved: Vec<QaPair> = match plan.kind {
            OutcomeKind::NonOrderTurn { .. } => self.kb.retrieve(text, self.k).into_iter().map(|s| s.pair).collect(),
            _ => Vec::new(),
        };

        let p = &self.planner;
        let (replier, selector_agreed) =
            consult_selector(&plan.kind, plan.trace_has_error(), text, &p.routing, &p.prompts, p.backend.as_ref());

        // Prompts see the session as it stands after planning.
        let mut view = session.clone();
        if let Some(order) = &plan.order {
            view.current_order = Some(order.clone());
        }
        let reply = match generate_response(
            replier,
            &view,
            &plan.kind,
            &retrieved,
            text,
            now,
            &p.routing,
            &p.prompts,
            p.backend.as_ref(),
        ) {
            Ok(r) => r,
            Err(e) => {
                gateway_failure.get_or_insert_with(|| e.to_string());
                FALLBACK_APOLOGY.to_string()
            }
        };

        let pending = if plan.order.is_some() { plan.pending.clone() } else { session.pending_candidates.clone() };
        let record = TurnRecord {
            user: query.clone(),
            function_calls: plan.calls(),
            tool_results: plan.results(),
            order_snapshot: plan.order.clone(),
            pending,
            goal: plan.goal,
            outcome: plan.kind,
            replier,
            retrieved,
            assistant: Utterance::assistant(query.round_id, reply, now),
            ground_truth: None,
        };
        session.append_turn(record.clone())?;
        Ok(TurnOutput { record, gateway_failure, selector_agreed })
    }

    /// Applies a confirm or cancel that arrives outside the conversation,
    /// such as a button press.
    pub fn order_action(
        &self,
        session: &mut DialogSession,
        order_id: &str,
        action: OrderAction,
    ) -> Result<TripOrder, EngineError> {
        apply_session_action(session, order_id, &action)
    }
}

/// Shared by live handling and log replay.
pub fn apply_session_action(
    session: &mut DialogSession,
    order_id: &str,
    action: &OrderAction,
) -> Result<TripOrder, EngineError> {
    let current = session
        .current_order
        .as_ref()
        .filter(|o| o.order_id == order_id)
        .ok_or_else(|| EngineError::UnknownOrder(order_id.into()))?;
    if !matches!(action, OrderAction::Confirm | OrderAction::Cancel) {
        return Err(EngineError::Transition(PlanError::IllegalTransition {
            from: Some(current.state),
            action: action.name(),
        }));
    }
    let next = apply_order_action(current, action).map_err(EngineError::Transition)?;
    debug_assert!(next.state != OrderState::AwaitingPoiSelection);
    session.current_order = Some(next.clone());
    Ok(next)
}

fn infeasible(goal: ConversationGoal, reason: String) -> PlanOutcome {
    PlanOutcome {
        goal,
        kind: OutcomeKind::InfeasibleRequest { reason, suggestion: None },
        tool_trace: Vec::new(),
        order: None,
        pending: None,
    }
}

/// Counts replier use across a session.
pub fn replier_counts(session: &DialogSession) -> Vec<(ReplierKind, usize)> {
    crate::dialog::tally(session.turns.iter().map(|t| t.replier))
}
