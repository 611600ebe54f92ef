//! Structured dialogue model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::retrieval::{KnowledgeSnippet, SnippetId};
use crate::text::normalize_value;

/// Maximum number of gold snippets an annotator may attach to a turn.
pub const MAX_GOLD_SNIPPETS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotValue {
    pub domain: String,
    pub slot: String,
    pub value: String,
}

impl SlotValue {
    pub fn new(domain: impl Into<String>, slot: impl Into<String>, value: impl Into<String>) -> Self {
        Self { domain: domain.into(), slot: slot.into(), value: value.into() }
    }

    /// `(domain, slot, normalized value)`.
    pub fn normalized(&self) -> (String, String, String) {
        (self.domain.clone(), self.slot.clone(), normalize_value(&self.value))
    }
}

/// Cumulative user constraints as of one turn. At most one value per
/// `(domain, slot)`; iteration is sorted by `(domain, slot)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SlotValue>", into = "Vec<SlotValue>")]
pub struct BeliefState {
    entries: BTreeMap<(String, String), String>,
}

impl BeliefState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a slot, returning the previous value if there was one.
    pub fn set(&mut self, domain: &str, slot: &str, value: &str) -> Option<String> {
        self.entries.insert((domain.to_string(), slot.to_string()), value.to_string())
    }

    pub fn get(&self, domain: &str, slot: &str) -> Option<&str> {
        self.entries.get(&(domain.to_string(), slot.to_string())).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = SlotValue> + '_ {
        self.entries.iter().map(|((d, s), v)| SlotValue::new(d, s, v))
    }

    pub fn normalized_set(&self) -> BTreeSet<(String, String, String)> {
        self.iter().map(|sv| sv.normalized()).collect()
    }
}

impl TryFrom<Vec<SlotValue>> for BeliefState {
    type Error = String;

    fn try_from(values: Vec<SlotValue>) -> std::result::Result<Self, String> {
        let mut b = BeliefState::new();
        for sv in values {
            if sv.domain.is_empty() || sv.slot.is_empty() {
                return Err("belief entry with empty domain or slot".into());
            }
            if b.set(&sv.domain, &sv.slot, &sv.value).is_some() {
                return Err(format!("duplicate belief entry {}-{}", sv.domain, sv.slot));
            }
        }
        Ok(b)
    }
}

impl From<BeliefState> for Vec<SlotValue> {
    fn from(b: BeliefState) -> Self {
        b.iter().collect()
    }
}

impl FromIterator<SlotValue> for BeliefState {
    /// Later entries for the same `(domain, slot)` overwrite earlier ones.
    fn from_iter<I: IntoIterator<Item = SlotValue>>(iter: I) -> Self {
        let mut b = BeliefState::new();
        for sv in iter {
            b.set(&sv.domain, &sv.slot, &sv.value);
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogAct {
    pub act: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<String>,
}

impl DialogAct {
    pub fn new(act: &str) -> Self {
        Self { act: act.to_string(), slot: None, values: Vec::new() }
    }

    pub fn with_slot(act: &str, slot: &str) -> Self {
        Self { act: act.to_string(), slot: Some(slot.to_string()), values: Vec::new() }
    }

    pub fn with_value(act: &str, slot: &str, value: &str) -> Self {
        Self { act: act.to_string(), slot: Some(slot.to_string()), values: vec![value.to_string()] }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.act.is_empty() {
            return Err("act type is empty".into());
        }
        if !self.values.is_empty() && self.slot.is_none() {
            return Err(format!("act {} has values but no slot", self.act));
        }
        if self.slot.as_deref() == Some("") {
            return Err(format!("act {} has an empty slot name", self.act));
        }
        Ok(())
    }
}

/// Oracle database search result attached to a system turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbResult {
    pub service: String,
    pub match_count: usize,
    #[serde(default)]
    pub records: Vec<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub domain: String,
}

impl Entity {
    pub fn new(name: impl Into<String>, domain: impl Into<String>) -> Self {
        Self { name: name.into(), domain: domain.into() }
    }

    /// Retrieval query: domain name followed by entity name.
    pub fn query(&self) -> String {
        format!("{} {}", self.domain, self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Speaker {
    User,
    System,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::User => "USER",
            Speaker::System => "SYSTEM",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub utterance: String,
    #[serde(default)]
    pub belief: BeliefState,
    #[serde(default)]
    pub acts: Vec<DialogAct>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db: Option<DbResult>,
    #[serde(default)]
    pub enriched: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold_snippet_ids: Vec<SnippetId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enriched_utterance: Option<String>,
}

impl Turn {
    pub fn user(utterance: &str, belief: BeliefState, acts: Vec<DialogAct>) -> Self {
        Self {
            speaker: Speaker::User,
            utterance: utterance.to_string(),
            belief,
            acts,
            db: None,
            enriched: false,
            gold_snippet_ids: Vec::new(),
            enriched_utterance: None,
        }
    }

    pub fn system(utterance: &str, belief: BeliefState, acts: Vec<DialogAct>, db: Option<DbResult>) -> Self {
        Self { speaker: Speaker::System, db, ..Self::user(utterance, belief, acts) }
    }

    /// The text actually said: the enriched response when present.
    pub fn text(&self) -> &str {
        self.enriched_utterance.as_deref().unwrap_or(&self.utterance)
    }

    pub fn is_system(&self) -> bool {
        self.speaker == Speaker::System
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub domains: Vec<String>,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub entities: Vec<Entity>,
    /// Candidate knowledge snippets shipped with the dialogue (released data
    /// or synthetic generation). Empty when knowledge comes from retrieval.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub knowledge: Vec<KnowledgeSnippet>,
}

impl Dialogue {
    pub fn system_turns(&self) -> impl Iterator<Item = (usize, &Turn)> {
        self.turns.iter().enumerate().filter(|(_, t)| t.is_system())
    }

    pub fn snippet(&self, id: &SnippetId) -> Option<&KnowledgeSnippet> {
        self.knowledge.iter().find(|k| &k.id == id)
    }

    /// Checks every structural invariant of the dialogue and its turns.
    pub fn validate(&self) -> Result<()> {
        let err = |turn: Option<usize>, msg: String| Err(CoreError::validation(&self.id, turn, msg));
        if self.id.is_empty() {
            return err(None, "empty dialogue id".into());
        }
        for (i, t) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Speaker::User } else { Speaker::System };
            if t.speaker != expected {
                return err(Some(i), format!("expected {expected} turn, found {}", t.speaker));
            }
            if t.enriched != !t.gold_snippet_ids.is_empty() {
                return err(Some(i), "enriched flag must agree with the presence of gold snippets".into());
            }
            if t.gold_snippet_ids.len() > MAX_GOLD_SNIPPETS {
                return err(
                    Some(i),
                    format!("{} gold snippets (at most {MAX_GOLD_SNIPPETS})", t.gold_snippet_ids.len()),
                );
            }
            if t.enriched && t.speaker != Speaker::System {
                return err(Some(i), "only system turns can be enriched".into());
            }
            for a in &t.acts {
                if let Err(m) = a.validate() {
                    return err(Some(i), m);
                }
            }
            for sv in t.belief.iter() {
                if sv.domain.is_empty() || sv.slot.is_empty() {
                    return err(Some(i), "belief entry with empty domain or slot".into());
                }
            }
            if let Some(db) = &t.db {
                if db.match_count < db.records.len() {
                    return err(Some(i), format!("match_count {} below {} records", db.match_count, db.records.len()));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.entities {
            if e.name.is_empty() {
                return err(None, "entity with empty name".into());
            }
            if !seen.insert((&e.name, &e.domain)) {
                return err(None, format!("duplicate entity {} ({})", e.name, e.domain));
            }
        }
        Ok(())
    }
}

/// Dialogue ids must be unique within a dataset.
pub fn validate_dataset(dialogues: &[Dialogue]) -> Result<()> {
    let mut ids = BTreeSet::new();
    for d in dialogues {
        d.validate()?;
        if !ids.insert(d.id.as_str()) {
            return Err(CoreError::validation(&d.id, None, "duplicate dialogue id"));
        }
    }
    Ok(())
}
