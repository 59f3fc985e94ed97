//! Prompt templates and the context block every stage appends to its final
//! message.
//!
//! The final user message of each prompt is a run of `Key: value` lines
//! closed by a `Query: <text>` line. System prompts open with
//! `### stage: <stage>`. The heuristic backend and scripted rules both rely
//! on this layout.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::NaiveDateTime;

use crate::kb::QaPair;
use crate::llm::{Message, PromptBundle};
use crate::model::{ConversationGoal, DialogSession, Role};
use crate::planner::OutcomeKind;
use crate::timefmt;
use crate::tools::ToolSpec;

pub const KEY_TIME: &str = "Current time";
pub const KEY_PENDING: &str = "Pending candidates";
pub const KEY_ORDER: &str = "Current order";
pub const KEY_OUTCOME: &str = "Outcome";
pub const KEY_RETRIEVED: &str = "Retrieved";
pub const KEY_QUERY: &str = "Query";

/// Names accepted by [`PromptSet::set`], matching the shipped file stems.
pub const TEMPLATE_NAMES: [&str; 7] =
    ["classify", "plan_create", "plan_modify", "select_replier", "specialized", "error_handling", "knowledge_enhanced"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<&'static str, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        let shipped = [
            include_str!("../templates/classify.txt"),
            include_str!("../templates/plan_create.txt"),
            include_str!("../templates/plan_modify.txt"),
            include_str!("../templates/select_replier.txt"),
            include_str!("../templates/specialized.txt"),
            include_str!("../templates/error_handling.txt"),
            include_str!("../templates/knowledge_enhanced.txt"),
        ];
        Self { templates: TEMPLATE_NAMES.into_iter().zip(shipped.map(String::from)).collect() }
    }
}

impl PromptSet {
    pub fn get(&self, name: &str) -> &str {
        self.templates.get(name).map_or("", String::as_str)
    }

    /// Replaces a template; returns false for an unknown name.
    pub fn set(&mut self, name: &str, text: impl Into<String>) -> bool {
        match TEMPLATE_NAMES.iter().find(|n| **n == name) {
            Some(n) => {
                self.templates.insert(n, text.into());
                true
            }
            None => false,
        }
    }
}

/// Substitutes `{{key}}` placeholders. Unknown placeholders are left as is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&alloc::format!("{{{{{k}}}}}"), v);
    }
    out
}

pub fn context_block(lines: &[(&str, String)], query: &str) -> String {
    let mut out = String::new();
    for (k, v) in lines {
        out.push_str(k);
        out.push_str(": ");
        // Keep each value on one line so the block stays parseable.
        out.push_str(&v.replace('\n', " "));
        out.push('\n');
    }
    out.push_str(KEY_QUERY);
    out.push_str(": ");
    out.push_str(&query.replace('\n', " "));
    out
}

/// Splits a context block back into its keyed lines and the query.
pub fn read_context(text: &str) -> (BTreeMap<&str, &str>, &str) {
    let mut map = BTreeMap::new();
    let mut query = "";
    for line in text.lines() {
        if let Some((k, v)) = line.split_once(": ") {
            if k == KEY_QUERY {
                query = v;
            } else {
                map.insert(k, v);
            }
        }
    }
    (map, query)
}

/// The value of the `### <key>: ` header line in a system prompt.
pub fn header<'a>(system: &'a str, key: &str) -> Option<&'a str> {
    system.lines().find_map(|l| {
        l.strip_prefix("### ")
            .and_then(|rest| rest.strip_prefix(key))
            .and_then(|rest| rest.strip_prefix(": "))
            .map(str::trim)
    })
}

pub fn tool_listing(specs: &[&ToolSpec]) -> String {
    let mut out = String::new();
    for s in specs {
        out.push_str(&serde_json::to_string(s).unwrap_or_default());
        out.push('\n');
    }
    out
}

fn history(session: &DialogSession) -> Vec<Message> {
    let mut out = Vec::new();
    for t in &session.turns {
        out.push(Message { role: Role::User, text: t.user.text.clone() });
        let mut reply = String::new();
        for c in &t.function_calls {
            reply.push_str(&c.raw_text);
            reply.push('\n');
        }
        reply.push_str(&t.assistant.text);
        out.push(Message { role: Role::Assistant, text: reply });
    }
    out
}

fn session_lines(session: &DialogSession, now: NaiveDateTime) -> Vec<(&'static str, String)> {
    let mut lines = alloc::vec![(KEY_TIME, timefmt::format(&now))];
    if let Some(p) = &session.pending_candidates {
        let names: Vec<&str> = p.candidates.iter().map(|c| c.display_name.as_str()).collect();
        lines.push((KEY_PENDING, names.join(" | ")));
    }
    if let Some(o) = &session.current_order {
        lines.push((KEY_ORDER, serde_json::to_string(o).unwrap_or_default()));
    }
    lines
}

pub fn classify_prompt(set: &PromptSet, session: &DialogSession, query: &str, now: NaiveDateTime) -> PromptBundle {
    let mut messages = history(session);
    messages.push(Message { role: Role::User, text: context_block(&session_lines(session, now), query) });
    let mut p = PromptBundle::new(set.get("classify"), messages);
    p.max_tokens = 8;
    p
}

pub fn planning_prompt(
    set: &PromptSet,
    goal: ConversationGoal,
    tools: &str,
    session: &DialogSession,
    query: &str,
    now: NaiveDateTime,
) -> PromptBundle {
    let name = if goal == ConversationGoal::ModifyOrder { "plan_modify" } else { "plan_create" };
    let mut messages = history(session);
    messages.push(Message { role: Role::User, text: context_block(&session_lines(session, now), query) });
    PromptBundle::new(render(set.get(name), &[("tools", tools)]), messages)
}

pub fn selection_prompt(set: &PromptSet, outcome: &OutcomeKind, query: &str) -> PromptBundle {
    let ctx = context_block(&[(KEY_OUTCOME, serde_json::to_string(outcome).unwrap_or_default())], query);
    let mut p = PromptBundle::new(set.get("select_replier"), alloc::vec![Message { role: Role::User, text: ctx }]);
    p.max_tokens = 8;
    p
}

pub fn generation_prompt(
    set: &PromptSet,
    template: &str,
    session: &DialogSession,
    outcome: &OutcomeKind,
    retrieved: &[QaPair],
    query: &str,
    now: NaiveDateTime,
) -> PromptBundle {
    let listing: Vec<String> = retrieved.iter().map(|q| alloc::format!("Q: {} A: {}", q.question, q.answer)).collect();
    let system = render(set.get(template), &[("retrieved", &listing.join("\n"))]);
    let mut lines = alloc::vec![
        (KEY_TIME, timefmt::format(&now)),
        (KEY_OUTCOME, serde_json::to_string(outcome).unwrap_or_default()),
    ];
    if !retrieved.is_empty() {
        lines.push((KEY_RETRIEVED, serde_json::to_string(retrieved).unwrap_or_default()));
    }
    let mut messages = history(session);
    messages.push(Message { role: Role::User, text: context_block(&lines, query) });
    let mut p = PromptBundle::new(system, messages);
    p.temperature = 0.0;
    p
}
