//! Instruction-set export: turns logged in a time range become training
//! pairs in five categories, one line-delimited file each.
//!
//! Every exported turn yields one planning record, one replier-selection
//! record and one record for the replier that answered it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use ridechat_core::dialog::ReplierKind;
use ridechat_core::llm::PromptBundle;
use ridechat_core::model::{DialogSession, Role, TurnRecord};
use ridechat_core::prompt::{self, PromptSet};
use ridechat_core::timefmt;
use ridechat_core::tools::{load_specs, DEFAULT_ANNOTATIONS};

use crate::store::{apply, LogRecord, StoreError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    OrderPlanning,
    ReplierSelection,
    Specialized,
    ErrorHandling,
    KnowledgeEnhanced,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::OrderPlanning,
        Category::ReplierSelection,
        Category::Specialized,
        Category::ErrorHandling,
        Category::KnowledgeEnhanced,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::OrderPlanning => "order_planning",
            Category::ReplierSelection => "replier_selection",
            Category::Specialized => "specialized",
            Category::ErrorHandling => "error_handling",
            Category::KnowledgeEnhanced => "knowledge_enhanced",
        }
    }

    pub fn of_replier(kind: ReplierKind) -> Self {
        match kind {
            ReplierKind::Specialized => Category::Specialized,
            ReplierKind::ErrorHandling => Category::ErrorHandling,
            ReplierKind::KnowledgeEnhanced => Category::KnowledgeEnhanced,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub category: Category,
    pub instruction: String,
    pub input: String,
    pub output: String,
    #[serde(with = "timefmt")]
    pub collected_at: NaiveDateTime,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstructionSets {
    pub records: BTreeMap<Category, Vec<InstructionRecord>>,
}

impl InstructionSets {
    pub fn counts(&self) -> BTreeMap<Category, usize> {
        Category::ALL.into_iter().map(|c| (c, self.records.get(&c).map_or(0, Vec::len))).collect()
    }

    fn push(&mut self, r: InstructionRecord) {
        self.records.entry(r.category).or_default().push(r);
    }
}

/// Replays `records` and converts every turn whose user timestamp falls in
/// `[from, to]`. Prompts are rebuilt from the session as it stood before
/// the turn, so inputs match what the models saw.
pub fn build_instruction_sets(
    records: &[LogRecord],
    from: NaiveDateTime,
    to: NaiveDateTime,
    prompts: &PromptSet,
) -> Result<InstructionSets, StoreError> {
    let specs = load_specs(DEFAULT_ANNOTATIONS).map_err(|e| StoreError::Corrupt { line: 0, message: e.to_string() })?;
    let listing = prompt::tool_listing(&specs.iter().collect::<Vec<_>>());
    let mut sessions: BTreeMap<String, DialogSession> = BTreeMap::new();
    let mut out = InstructionSets::default();
    for rec in records {
        if let LogRecord::Turn { session_id, record } = rec {
            let at = record.user.timestamp;
            if (from..=to).contains(&at) {
                let before = sessions.get(session_id).ok_or_else(|| StoreError::UnknownSession(session_id.clone()))?;
                for r in turn_records(before, record, prompts, &listing) {
                    out.push(r);
                }
            }
        }
        apply(&mut sessions, rec)?;
    }
    Ok(out)
}

fn turn_records(
    before: &DialogSession,
    turn: &TurnRecord,
    prompts: &PromptSet,
    listing: &str,
) -> [InstructionRecord; 3] {
    let at = turn.user.timestamp;
    let query = turn.user.text.as_str();
    let record = |category, bundle: PromptBundle, output: String| InstructionRecord {
        category,
        instruction: bundle.system.clone(),
        input: flatten(&bundle),
        output,
        collected_at: at,
    };

    let planning = prompt::planning_prompt(prompts, turn.goal, listing, before, query, at);
    let mut plan_out = format!("goal: {}", turn.goal.as_str());
    for c in &turn.function_calls {
        plan_out.push('\n');
        plan_out.push_str(&c.raw_text);
    }

    let selection = prompt::selection_prompt(prompts, &turn.outcome, query);

    let mut view = before.clone();
    if let Some(o) = &turn.order_snapshot {
        view.current_order = Some(o.clone());
    }
    let generation =
        prompt::generation_prompt(prompts, turn.replier.template(), &view, &turn.outcome, &turn.retrieved, query, at);

    [
        record(Category::OrderPlanning, planning, plan_out),
        record(Category::ReplierSelection, selection, turn.replier.as_str().into()),
        record(Category::of_replier(turn.replier), generation, turn.assistant.text.clone()),
    ]
}

/// Conversation messages as `User:` / `Assistant:` lines.
fn flatten(bundle: &PromptBundle) -> String {
    bundle
        .messages
        .iter()
        .map(|m| {
            let who = match m.role {
                Role::User => "User",
                Role::Assistant => "Assistant",
            };
            format!("{who}: {}", m.text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Writes `<category>.jsonl` for all five categories, empty ones included.
pub fn write_instruction_sets(sets: &InstructionSets, out_dir: &Path) -> std::io::Result<BTreeMap<Category, usize>> {
    fs::create_dir_all(out_dir)?;
    for c in Category::ALL {
        let mut f = fs::File::create(out_dir.join(format!("{}.jsonl", c.as_str())))?;
        for r in sets.records.get(&c).into_iter().flatten() {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
    }
    Ok(sets.counts())
}
