//! Entity extraction from belief states and acts, and dataset filtering.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::{BeliefState, DialogAct, Dialogue, Entity};
use crate::text::normalize_value;

pub const DEFAULT_EXCLUDED_DOMAINS: &[&str] = &["alarm", "banks", "payment"];
pub const DEFAULT_MAX_ENTITIES: usize = 10;

/// Which slots hold entity names, per domain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntitySlots(pub BTreeMap<String, Vec<String>>);

impl EntitySlots {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, domain: &str, slots: &[&str]) -> Self {
        self.0.insert(domain.to_string(), slots.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn is_entity_slot(&self, domain: &str, slot: &str) -> bool {
        self.0.get(domain).is_some_and(|s| s.iter().any(|x| x == slot))
    }

    /// First of `domains` that designates `slot`.
    fn domain_for<'a>(&self, domains: &'a [String], slot: &str) -> Option<&'a str> {
        domains.iter().find(|d| self.is_entity_slot(d, slot)).map(String::as_str)
    }
}

/// Accumulates entities in first-appearance order, deduplicated by
/// normalized `(name, domain)`.
#[derive(Debug, Default)]
pub struct EntityCollector {
    seen: HashSet<(String, String)>,
    out: Vec<Entity>,
}

impl EntityCollector {
    pub fn push(&mut self, name: &str, domain: &str) {
        if name.trim().is_empty() {
            return;
        }
        if self.seen.insert((normalize_value(name), domain.to_string())) {
            self.out.push(Entity::new(name, domain));
        }
    }

    pub fn belief(&mut self, b: &BeliefState, slots: &EntitySlots) {
        for sv in b.iter() {
            if slots.is_entity_slot(&sv.domain, &sv.slot) {
                self.push(&sv.value, &sv.domain);
            }
        }
    }

    /// Acts carry no domain of their own; the first of `domains` designating
    /// the act's slot is used.
    pub fn acts(&mut self, acts: &[DialogAct], domains: &[String], slots: &EntitySlots) {
        for a in acts {
            let Some(slot) = &a.slot else { continue };
            if let Some(d) = slots.domain_for(domains, slot) {
                for v in &a.values {
                    self.push(v, d);
                }
            }
        }
    }

    pub fn finish(self) -> Vec<Entity> {
        self.out
    }
}

/// Entities mentioned in designated slots of any belief state or act, in
/// order of first appearance.
pub fn extract_entities(d: &Dialogue, slots: &EntitySlots) -> Vec<Entity> {
    let mut c = EntityCollector::default();
    for t in &d.turns {
        c.belief(&t.belief, slots);
        c.acts(&t.acts, &d.domains, slots);
    }
    c.finish()
}

/// Entities of one turn's belief and acts.
pub fn turn_entities(belief: &BeliefState, acts: &[DialogAct], domains: &[String], slots: &EntitySlots) -> Vec<Entity> {
    let mut c = EntityCollector::default();
    c.acts(acts, domains, slots);
    c.belief(belief, slots);
    c.finish()
}

/// Fills `entities` from the slot configuration where the data carries no
/// annotation of its own.
pub fn ensure_entities(ds: &mut [Dialogue], slots: &EntitySlots) {
    for d in ds.iter_mut().filter(|d| d.entities.is_empty()) {
        d.entities = extract_entities(d, slots);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub excluded_domains: Vec<String>,
    pub max_entities: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            excluded_domains: DEFAULT_EXCLUDED_DOMAINS.iter().map(|s| s.to_string()).collect(),
            max_entities: DEFAULT_MAX_ENTITIES,
        }
    }
}

/// Drops dialogues touching an excluded domain (case-insensitive) or with
/// more than `max_entities` entities.
pub fn filter_dialogues(ds: Vec<Dialogue>, config: &FilterConfig) -> Vec<Dialogue> {
    let excluded: HashSet<String> = config.excluded_domains.iter().map(|d| d.to_lowercase()).collect();
    ds.into_iter()
        .filter(|d| d.entities.len() <= config.max_entities)
        .filter(|d| !d.domains.iter().any(|x| excluded.contains(&x.to_lowercase())))
        .collect()
}
