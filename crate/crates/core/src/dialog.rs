//! Replier selection, cost-tiered model assignment and response generation.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::kb::QaPair;
use crate::llm::{Completion, GatewayError};
use crate::model::{ConversationGoal, DialogSession};
use crate::planner::OutcomeKind;
use crate::prompt::{self, PromptSet};

/// Sent when the generation backend fails.
pub const FALLBACK_APOLOGY: &str = "Sorry, I'm having trouble answering right now. Please try again in a moment.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReplierKind {
    Specialized,
    ErrorHandling,
    KnowledgeEnhanced,
}

impl ReplierKind {
    pub const ALL: [ReplierKind; 3] =
        [ReplierKind::Specialized, ReplierKind::ErrorHandling, ReplierKind::KnowledgeEnhanced];

    pub fn as_str(self) -> &'static str {
        match self {
            ReplierKind::Specialized => "Specialized",
            ReplierKind::ErrorHandling => "ErrorHandling",
            ReplierKind::KnowledgeEnhanced => "KnowledgeEnhanced",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        let label = label.trim();
        Self::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(label))
    }

    pub fn template(self) -> &'static str {
        match self {
            ReplierKind::Specialized => "specialized",
            ReplierKind::ErrorHandling => "error_handling",
            ReplierKind::KnowledgeEnhanced => "knowledge_enhanced",
        }
    }
}

impl fmt::Display for ReplierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelTier {
    Large,
    Medium,
    Small,
}

impl ModelTier {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelTier::Large => "LARGE",
            ModelTier::Medium => "MEDIUM",
            ModelTier::Small => "SMALL",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelChoice {
    pub tier: ModelTier,
    pub endpoint_key: String,
    pub fine_tuned: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Planning,
    ReplierSelection,
    Generation,
}

/// A tier plus whether the fine-tuned variant is used. The endpoint key
/// defaults to `<tier>` or `<tier>-ft`, lowercased.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub tier: ModelTier,
    pub fine_tuned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_key: Option<String>,
}

impl Assignment {
    pub fn new(tier: ModelTier, fine_tuned: bool) -> Self {
        Self { tier, fine_tuned, endpoint_key: None }
    }

    pub fn key(&self) -> String {
        self.endpoint_key.clone().unwrap_or_else(|| {
            let mut k = self.tier.as_str().to_ascii_lowercase();
            if self.fine_tuned {
                k.push_str("-ft");
            }
            k
        })
    }
}

/// Stage and replier to model assignments plus the endpoint keys that have
/// a configured backend.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingTable {
    pub planning: Assignment,
    pub replier_selection: Assignment,
    pub specialized: Assignment,
    pub error_handling: Assignment,
    pub knowledge_enhanced: Assignment,
    #[serde(default)]
    pub endpoints: BTreeSet<String>,
}

impl Default for RoutingTable {
    fn default() -> Self {
        let mut t = Self {
            planning: Assignment::new(ModelTier::Large, true),
            replier_selection: Assignment::new(ModelTier::Small, true),
            specialized: Assignment::new(ModelTier::Medium, true),
            error_handling: Assignment::new(ModelTier::Large, false),
            knowledge_enhanced: Assignment::new(ModelTier::Medium, false),
            endpoints: BTreeSet::new(),
        };
        t.endpoints = t.required_keys();
        t
    }
}

impl RoutingTable {
    pub fn assignment(&self, kind: ReplierKind, stage: Stage) -> &Assignment {
        match (stage, kind) {
            (Stage::Planning, _) => &self.planning,
            (Stage::ReplierSelection, _) => &self.replier_selection,
            (Stage::Generation, ReplierKind::Specialized) => &self.specialized,
            (Stage::Generation, ReplierKind::ErrorHandling) => &self.error_handling,
            (Stage::Generation, ReplierKind::KnowledgeEnhanced) => &self.knowledge_enhanced,
        }
    }

    /// Endpoint keys referenced by any assignment.
    pub fn required_keys(&self) -> BTreeSet<String> {
        [&self.planning, &self.replier_selection, &self.specialized, &self.error_handling, &self.knowledge_enhanced]
            .into_iter()
            .map(Assignment::key)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum DialogError {
    #[error("no endpoint configured for {tier:?} (key `{key}`)")]
    MissingConfig { tier: ModelTier, key: String },
    #[error("{kind} generation failed: {source}")]
    Gateway { kind: ReplierKind, source: GatewayError },
}

/// Rule-based replier choice. Any failed tool call routes to error handling.
pub fn select_replier(outcome: &OutcomeKind, trace_has_error: bool) -> ReplierKind {
    if trace_has_error {
        return ReplierKind::ErrorHandling;
    }
    match outcome {
        OutcomeKind::OrderPlanned { .. }
        | OutcomeKind::OrderConfirmed { .. }
        | OutcomeKind::OrderCancelled { .. }
        | OutcomeKind::OrderModified { .. }
        | OutcomeKind::SlotElicitation { .. }
        | OutcomeKind::PoiDisambiguation { .. } => ReplierKind::Specialized,
        OutcomeKind::InfeasibleRequest { .. } => ReplierKind::ErrorHandling,
        OutcomeKind::NonOrderTurn { goal } => match goal {
            ConversationGoal::PolicyInquiry | ConversationGoal::ChitChat => ReplierKind::KnowledgeEnhanced,
            // An order goal only lands here if planning was skipped.
            _ => ReplierKind::ErrorHandling,
        },
    }
}

pub fn resolve_model(table: &RoutingTable, kind: ReplierKind, stage: Stage) -> Result<ModelChoice, DialogError> {
    let a = table.assignment(kind, stage);
    let key = a.key();
    if !table.endpoints.contains(&key) {
        return Err(DialogError::MissingConfig { tier: a.tier, key });
    }
    Ok(ModelChoice { tier: a.tier, endpoint_key: key, fine_tuned: a.fine_tuned })
}

/// Strips a leading `Reply:` label some models echo from the demonstrations.
fn clean_reply(raw: &str) -> String {
    let t = raw.trim();
    t.strip_prefix("Reply:").map_or(t, str::trim).to_string()
}

#[allow(clippy::too_many_arguments)]
pub fn generate_response(
    kind: ReplierKind,
    session: &DialogSession,
    outcome: &OutcomeKind,
    retrieved: &[QaPair],
    query: &str,
    now: NaiveDateTime,
    table: &RoutingTable,
    prompts: &PromptSet,
    backend: &dyn Completion,
) -> Result<String, DialogError> {
    let choice = resolve_model(table, kind, Stage::Generation)?;
    let bundle = prompt::generation_prompt(prompts, kind.template(), session, outcome, retrieved, query, now);
    let text = backend.complete(&choice, &bundle).map_err(|source| DialogError::Gateway { kind, source })?;
    let text = clean_reply(&text);
    if text.is_empty() {
        return Err(DialogError::Gateway { kind, source: GatewayError::BadResponse("empty reply".into()) });
    }
    Ok(text)
}

/// Asks the selector model, then lets the rule overrule any disagreement.
/// Returns the final kind and whether the model agreed.
pub fn consult_selector(
    outcome: &OutcomeKind,
    trace_has_error: bool,
    query: &str,
    table: &RoutingTable,
    prompts: &PromptSet,
    backend: &dyn Completion,
) -> (ReplierKind, Option<bool>) {
    let rule = select_replier(outcome, trace_has_error);
    let Ok(choice) = resolve_model(table, rule, Stage::ReplierSelection) else {
        return (rule, None);
    };
    let bundle = prompt::selection_prompt(prompts, outcome, query);
    let proposed = backend.complete(&choice, &bundle).ok().and_then(|t| t.lines().find_map(ReplierKind::parse));
    (rule, proposed.map(|p| p == rule))
}

/// Per-kind tallies, used by reports.
pub fn tally(kinds: impl IntoIterator<Item = ReplierKind>) -> Vec<(ReplierKind, usize)> {
    let mut counts = [0usize; 3];
    for k in kinds {
        counts[k as usize] += 1;
    }
    ReplierKind::ALL.into_iter().zip(counts).collect()
}
