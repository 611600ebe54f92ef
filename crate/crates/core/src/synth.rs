//! Deterministic synthetic dialogues with a paired knowledge corpus.
//!
//! Each dialogue follows search, offer (optionally rejected once), optional
//! information request, booking, confirmation, success and goodbye. Two
//! system turns can be enriched: the confirmation (knowledge about the booked
//! entity) and the success notification (knowledge about the city). A user
//! cue phrase in the preceding turn signals enrichment.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BeliefState, DbResult, DialogAct, Dialogue, Entity, Turn};
use crate::entities::{extract_entities, turn_entities, EntitySlots};
use crate::error::{CoreError, Result};
use crate::retrieval::{candidates_for_dialogue, Article, CorpusIndex, KnowledgeSnippet};
use crate::text::{lm_text, normalize_value};

pub const DEFAULT_SCHEMA: &str = include_str!("../assets/synth_schema.toml");
pub const CITY_SLOT: &str = "city";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSchema {
    pub version: u32,
    pub enrichment_rate: f64,
    pub reject_prob: f64,
    pub info_prob: f64,
    pub chitchat_template: String,
    pub cue_phrases: Vec<String>,
    pub cities: Vec<String>,
    #[serde(default)]
    pub shared_values: BTreeMap<String, Vec<String>>,
    pub domains: Vec<DomainSchema>,
    pub dialogue: DialogueTemplates,
    pub corpus: CorpusSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSchema {
    pub name: String,
    pub noun: String,
    pub entity_slot: String,
    pub search_intent: String,
    pub book_intent: String,
    pub search_slots: Vec<String>,
    pub info_slots: Vec<String>,
    pub booking_slots: Vec<String>,
    pub entities: Vec<String>,
    /// A list of values, or the name of a `shared_values` list.
    pub values: BTreeMap<String, ValueSpec>,
    pub templates: DomainTemplates,
    pub info_names: BTreeMap<String, String>,
    pub info_answers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueSpec {
    List(Vec<String>),
    Shared(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainTemplates {
    pub user_search: Vec<String>,
    pub user_info: Vec<String>,
    pub user_book: Vec<String>,
    pub sys_offer: String,
    pub sys_confirm: String,
    pub sys_success: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTemplates {
    pub user_reject: Vec<String>,
    pub sys_reoffer: String,
    pub user_affirm: Vec<String>,
    pub user_thanks: Vec<String>,
    pub sys_goodbye: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSchema {
    pub filler_articles: usize,
    pub short_name: Vec<String>,
    pub long_name: Vec<String>,
    pub city_short: Vec<String>,
    pub city_long: Vec<String>,
    pub plain: Vec<String>,
    pub adj: Vec<String>,
    pub thing: Vec<String>,
    pub group: Vec<String>,
    pub region: Vec<String>,
    pub season: Vec<String>,
    pub year: Vec<String>,
}

impl SynthSchema {
    pub fn default_schema() -> Self {
        Self::from_toml(DEFAULT_SCHEMA).expect("bundled schema is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: SynthSchema = toml::from_str(text).map_err(|e| CoreError::Config(format!("synthetic schema: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn domain(&self, name: &str) -> Option<&DomainSchema> {
        self.domains.iter().find(|d| d.name == name)
    }

    /// Entity slots: each domain's entity slot plus the city.
    pub fn entity_slots(&self) -> EntitySlots {
        let mut s = EntitySlots::new();
        for d in &self.domains {
            s = s.with(&d.name, &[&d.entity_slot, CITY_SLOT]);
        }
        s
    }

    fn values<'a>(&'a self, d: &'a DomainSchema, slot: &str) -> Result<&'a [String]> {
        if slot == CITY_SLOT {
            return Ok(&self.cities);
        }
        match d.values.get(slot) {
            Some(ValueSpec::List(v)) => Ok(v),
            Some(ValueSpec::Shared(name)) => self
                .shared_values
                .get(name)
                .map(Vec::as_slice)
                .ok_or_else(|| CoreError::Config(format!("{}: unknown shared value list {name:?}", d.name))),
            None => Err(CoreError::Config(format!("{}: no values for slot {slot:?}", d.name))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(CoreError::Config(m));
        if self.domains.is_empty() {
            return cfg("synthetic schema has no domains".into());
        }
        if !(0.0..=1.0).contains(&self.enrichment_rate)
            || !(0.0..=1.0).contains(&self.reject_prob)
            || !(0.0..=1.0).contains(&self.info_prob)
        {
            return cfg("probabilities must lie in [0, 1]".into());
        }
        let nonempty = [
            ("cue_phrases", self.cue_phrases.len()),
            ("cities", self.cities.len()),
            ("user_reject", self.dialogue.user_reject.len()),
            ("user_affirm", self.dialogue.user_affirm.len()),
            ("user_thanks", self.dialogue.user_thanks.len()),
            ("corpus.short_name", self.corpus.short_name.len()),
            ("corpus.long_name", self.corpus.long_name.len()),
            ("corpus.city_short", self.corpus.city_short.len()),
            ("corpus.city_long", self.corpus.city_long.len()),
            ("corpus.plain", self.corpus.plain.len()),
        ];
        for (what, n) in nonempty {
            if n == 0 {
                return cfg(format!("{what} is empty"));
            }
        }
        if self.corpus.short_name.len() < 2 || self.corpus.long_name.len() < 2 || self.corpus.city_long.len() < 2 {
            return cfg("corpus needs at least two short and two long templates".into());
        }
        let mut names = BTreeSet::new();
        for c in &self.cities {
            check_value("city", c)?;
            names.insert(normalize_value(c));
        }
        let mut domain_names = BTreeSet::new();
        for d in &self.domains {
            if !domain_names.insert(&d.name) {
                return cfg(format!("duplicate domain {}", d.name));
            }
            if d.entities.len() < 2 {
                return cfg(format!("{}: at least two entities are needed", d.name));
            }
            if d.booking_slots.is_empty() {
                return cfg(format!("{}: no booking slots", d.name));
            }
            for e in &d.entities {
                check_value("entity", e)?;
                if !names.insert(normalize_value(e)) {
                    return cfg(format!("entity or city name {e:?} is not unique"));
                }
            }
            for s in d.search_slots.iter().chain(&d.info_slots).chain(&d.booking_slots) {
                let vals = self.values(d, s)?;
                if vals.is_empty() {
                    return cfg(format!("{}: empty value list for {s}", d.name));
                }
                for v in vals {
                    check_value(s, v)?;
                }
            }
            for s in &d.info_slots {
                if !d.info_names.contains_key(s) || !d.info_answers.contains_key(s) {
                    return cfg(format!("{}: info slot {s} needs a name and an answer template", d.name));
                }
            }
            for t in [&d.templates.user_search, &d.templates.user_info, &d.templates.user_book] {
                if t.is_empty() {
                    return cfg(format!("{}: empty template list", d.name));
                }
            }
        }
        Ok(())
    }
}

/// Values must tokenize to themselves (up to case) so the language model
/// can copy them from utterances into belief states.
fn check_value(what: &str, v: &str) -> Result<()> {
    if v.trim().is_empty() || lm_text(v) != normalize_value(v) {
        return Err(CoreError::Config(format!("{what} value {v:?} must be non-empty words without punctuation")));
    }
    Ok(())
}

/// Replaces every `{key}`; an unknown key is a configuration error.
pub fn fill(template: &str, vars: &BTreeMap<&str, String>) -> Result<String> {
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close =
            rest[open..].find('}').ok_or_else(|| CoreError::Config(format!("unclosed placeholder in {template:?}")))?;
        let key = &rest[open + 1..open + close];
        let v =
            vars.get(key).ok_or_else(|| CoreError::Config(format!("unknown placeholder {{{key}}} in {template:?}")))?;
        out.push_str(v);
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthTallies {
    pub dialogues: usize,
    pub turns: usize,
    pub system_turns: usize,
    pub enriched_turns: usize,
    /// Summed over dialogues.
    pub entities: usize,
    /// Summed over dialogues.
    pub snippets: usize,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dialogues: Vec<Dialogue>,
    pub corpus: Vec<Article>,
    pub tallies: SynthTallies,
}

/// The paired corpus plus, for each entity and city (normalized), the long
/// sentences that mention it.
pub struct Corpus {
    pub articles: Vec<Article>,
    pub facts: BTreeMap<String, Vec<String>>,
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, v: &'a [T]) -> &'a T {
    v.choose(rng).expect("validated non-empty")
}

fn two_distinct<'a>(rng: &mut ChaCha8Rng, v: &'a [String]) -> (&'a String, &'a String) {
    let pair: Vec<&String> = v.choose_multiple(rng, 2).collect();
    (pair[0], pair[1])
}

fn word_vars(rng: &mut ChaCha8Rng, c: &CorpusSchema) -> BTreeMap<&'static str, String> {
    let mut m = BTreeMap::new();
    let (a, a2) = two_distinct(rng, &c.adj);
    let (t, t2) = two_distinct(rng, &c.thing);
    m.insert("adj", a.clone());
    m.insert("adj2", a2.clone());
    m.insert("thing", t.clone());
    m.insert("thing2", t2.clone());
    m.insert("group", pick(rng, &c.group).clone());
    m.insert("region", pick(rng, &c.region).clone());
    m.insert("season", pick(rng, &c.season).clone());
    m.insert("year", pick(rng, &c.year).clone());
    m
}

fn sentence(rng: &mut ChaCha8Rng, c: &CorpusSchema, template: &str, extra: &[(&'static str, &str)]) -> Result<String> {
    let mut vars = word_vars(rng, c);
    for (k, v) in extra {
        vars.insert(k, v.to_string());
    }
    let s = fill(template, &vars)?;
    let mut chars = s.chars();
    Ok(match chars.next() {
        Some(f) => f.to_uppercase().collect::<String>() + chars.as_str(),
        None => s,
    })
}

/// An article about `name`: two short sentences, two long ones, and plain
/// filler, over three paragraphs (only the first two become snippets).
fn planted_article(
    rng: &mut ChaCha8Rng,
    c: &CorpusSchema,
    name: &str,
    short: &[String],
    long: &[String],
    extra: &[(&'static str, &str)],
) -> Result<(Article, Vec<String>)> {
    let mut vars: Vec<(&'static str, &str)> = vec![("name", name)];
    vars.extend_from_slice(extra);
    let (s1, s2) = two_distinct(rng, short);
    let (l1, l2) = two_distinct(rng, long);
    let short1 = sentence(rng, c, s1, &vars)?;
    let short2 = sentence(rng, c, s2, &vars)?;
    let long1 = sentence(rng, c, l1, &vars)?;
    let long2 = sentence(rng, c, l2, &vars)?;
    let mut plain = Vec::new();
    for _ in 0..5 {
        let t = pick(rng, &c.plain).clone();
        plain.push(sentence(rng, c, &t, &[])?);
    }
    let mut p0 = [short1, long1.clone(), plain[0].clone(), plain[1].clone()];
    let mut p1 = [short2, long2.clone(), plain[2].clone()];
    p0.shuffle(rng);
    p1.shuffle(rng);
    let paragraphs = vec![p0.join(" "), p1.join(" "), format!("{} {}", plain[3], plain[4])];
    Ok((Article::new(name, paragraphs), vec![long1, long2]))
}

/// Generates the corpus paired with `schema`: one article per entity and per
/// city plus filler articles.
pub fn generate_corpus(schema: &SynthSchema, seed: u64) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0_4b05);
    let c = &schema.corpus;
    let mut articles = Vec::new();
    let mut facts = BTreeMap::new();
    for d in &schema.domains {
        for e in &d.entities {
            let city = pick(&mut rng, &schema.cities).clone();
            let (a, f) =
                planted_article(&mut rng, c, e, &c.short_name, &c.long_name, &[("noun", &d.noun), ("city", &city)])?;
            articles.push(a);
            facts.insert(normalize_value(e), f);
        }
    }
    for city in &schema.cities {
        let (a, f) = planted_article(&mut rng, c, city, &c.city_short, &c.city_long, &[])?;
        articles.push(a);
        facts.insert(normalize_value(city), f);
    }
    for i in 0..c.filler_articles {
        let title = format!("{} {} {i}", capitalize(pick(&mut rng, &c.adj)), capitalize(pick(&mut rng, &c.thing)));
        let mut paras = Vec::new();
        for _ in 0..2 {
            let mut p = Vec::new();
            for _ in 0..3 {
                let t = pick(&mut rng, &c.plain).clone();
                p.push(sentence(&mut rng, c, &t, &[])?);
            }
            paras.push(p.join(" "));
        }
        articles.push(Article::new(title, paras));
    }
    Ok(Corpus { articles, facts })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map_or_else(String::new, |f| f.to_uppercase().collect::<String>() + c.as_str())
}

struct Builder<'a> {
    domain: &'a DomainSchema,
    turns: Vec<Turn>,
    belief: BeliefState,
}

impl<'a> Builder<'a> {
    fn user(&mut self, text: String, acts: Vec<DialogAct>) {
        self.turns.push(Turn::user(&text, self.belief.clone(), acts));
    }

    fn system(&mut self, text: String, acts: Vec<DialogAct>, db: Option<DbResult>) {
        self.turns.push(Turn::system(&text, self.belief.clone(), acts, db));
    }

    fn set(&mut self, slot: &str, value: &str) {
        self.belief.set(&self.domain.name, slot, value);
    }
}

fn vars<'a>(pairs: &[(&'a str, &str)]) -> BTreeMap<&'a str, String> {
    pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
}

/// Fixed per-entity attributes, so an entity's record is the same in every dialogue.
fn entity_record(
    schema: &SynthSchema,
    d: &DomainSchema,
    name: &str,
    city: &str,
    seed: u64,
) -> Result<BTreeMap<String, String>> {
    let h = name.bytes().fold(seed ^ 0x9e37_79b9, |h, b| h.wrapping_mul(0x100_0000_01b3).wrapping_add(b as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let mut rec = BTreeMap::new();
    rec.insert(d.entity_slot.clone(), name.to_string());
    rec.insert(CITY_SLOT.to_string(), city.to_string());
    for s in &d.info_slots {
        rec.insert(s.clone(), pick(&mut rng, schema.values(d, s)?).clone());
    }
    Ok(rec)
}

fn generate_dialogue(
    schema: &SynthSchema,
    corpus: &Corpus,
    index: &CorpusIndex,
    id: String,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Dialogue> {
    let d = pick(rng, &schema.domains);
    let dt = &schema.dialogue;
    let mut b = Builder { domain: d, turns: Vec::new(), belief: BeliefState::new() };

    let city = pick(rng, &schema.cities).clone();
    let mut search = vec![(CITY_SLOT, city.clone())];
    for s in &d.search_slots {
        search.push((s.as_str(), pick(rng, schema.values(d, s)?).clone()));
    }
    let sv: Vec<(&str, &str)> = search.iter().map(|(k, v)| (*k, v.as_str())).collect();
    let text = fill(pick(rng, &d.templates.user_search), &vars(&sv))?;
    let mut acts = vec![DialogAct::with_value("INFORM_INTENT", "intent", &d.search_intent)];
    for (k, v) in &search {
        acts.push(DialogAct::with_value("INFORM", k, v));
        b.set(k, v);
    }
    b.user(text, acts);

    let offered: Vec<&String> = d.entities.choose_multiple(rng, 2).collect();
    let count = rng.gen_range(2..=15usize).to_string();
    let mut name = offered[0].clone();
    let db_for = |n: &str| -> Result<DbResult> {
        Ok(DbResult {
            service: d.name.clone(),
            match_count: count.parse().unwrap(),
            records: vec![entity_record(schema, d, n, &city, seed)?],
        })
    };
    let text = fill(&d.templates.sys_offer, &vars(&[("count", &count), ("city", &city), ("name", &name)]))?;
    b.system(
        text,
        vec![
            DialogAct::with_value("OFFER", &d.entity_slot, &name),
            DialogAct::with_value("INFORM_COUNT", "count", &count),
        ],
        Some(db_for(&name)?),
    );
    if rng.gen_bool(schema.reject_prob) {
        b.user(pick(rng, &dt.user_reject).clone(), vec![DialogAct::new("REQUEST_ALTS")]);
        name = offered[1].clone();
        let text = fill(&dt.sys_reoffer, &vars(&[("name", &name)]))?;
        b.system(text, vec![DialogAct::with_value("OFFER", &d.entity_slot, &name)], Some(db_for(&name)?));
    }
    let db = db_for(&name)?;
    if rng.gen_bool(schema.info_prob) {
        let slot = pick(rng, &d.info_slots);
        let text =
            fill(pick(rng, &d.templates.user_info), &vars(&[("info_name", &d.info_names[slot]), ("name", &name)]))?;
        b.user(text, vec![DialogAct::with_slot("REQUEST", slot)]);
        let value = db.records[0][slot].clone();
        let text = fill(&d.info_answers[slot], &vars(&[("value", &value)]))?;
        b.system(text, vec![DialogAct::with_value("INFORM", slot, &value)], Some(db.clone()));
    }

    let mut booking = Vec::new();
    for s in &d.booking_slots {
        booking.push((s.as_str(), pick(rng, schema.values(d, s)?).clone()));
    }
    let mut bv: Vec<(&str, &str)> = booking.iter().map(|(k, v)| (*k, v.as_str())).collect();
    bv.push(("name", &name));
    bv.push(("city", &city));
    let text = fill(pick(rng, &d.templates.user_book), &vars(&bv))?;
    let mut acts = vec![DialogAct::with_value("INFORM_INTENT", "intent", &d.book_intent)];
    b.set(&d.entity_slot, &name);
    for (k, v) in &booking {
        acts.push(DialogAct::with_value("INFORM", k, v));
        b.set(k, v);
    }
    b.user(text, acts);
    let confirm_turn = b.turns.len();
    let text = fill(&d.templates.sys_confirm, &vars(&bv))?;
    let mut acts = vec![
        DialogAct::with_value("CONFIRM", &d.entity_slot, &name),
        DialogAct::with_value("CONFIRM", CITY_SLOT, &city),
    ];
    acts.extend(booking.iter().map(|(k, v)| DialogAct::with_value("CONFIRM", k, v)));
    b.system(text, acts, Some(db.clone()));

    b.user(pick(rng, &dt.user_affirm).clone(), vec![DialogAct::new("AFFIRM")]);
    let success_turn = b.turns.len();
    let text = fill(&d.templates.sys_success, &vars(&[("name", &name)]))?;
    b.system(text, vec![DialogAct::new("NOTIFY_SUCCESS")], Some(db.clone()));
    b.user(pick(rng, &dt.user_thanks).clone(), vec![DialogAct::new("THANK_YOU"), DialogAct::new("GOODBYE")]);
    b.system(dt.sys_goodbye.clone(), vec![DialogAct::new("GOODBYE")], None);

    let mut dialogue =
        Dialogue { id, domains: vec![d.name.clone()], turns: b.turns, entities: Vec::new(), knowledge: Vec::new() };
    let slots = schema.entity_slots();
    let n_sys = dialogue.system_turns().count();
    let opportunities = [(confirm_turn, name.clone()), (success_turn, city.clone())];
    let q = (schema.enrichment_rate * n_sys as f64 / opportunities.len() as f64).min(1.0);
    for (t, about) in opportunities {
        if !rng.gen_bool(q) {
            continue;
        }
        let turn = &dialogue.turns[t];
        let entities = turn_entities(&turn.belief, &turn.acts, &dialogue.domains, &slots);
        let candidates = candidates_for_dialogue(index, &entities);
        let facts = &corpus.facts[&normalize_value(&about)];
        let fact = pick(rng, facts);
        let Some(snippet) = candidates.iter().find(|k| &k.text == fact) else {
            log::warn!("{}: fact about {about} not retrieved; turn {t} left plain", dialogue.id);
            continue;
        };
        let cue = pick(rng, &schema.cue_phrases);
        let prev = &mut dialogue.turns[t - 1];
        prev.utterance = format!("{} {cue}", prev.utterance);
        let chat = fill(&schema.chitchat_template, &vars(&[("fact", &snippet.text)]))?;
        let turn = &mut dialogue.turns[t];
        turn.enriched = true;
        turn.gold_snippet_ids = vec![snippet.id.clone()];
        turn.enriched_utterance = Some(format!("{} {chat}", turn.utterance));
        add_snippet(&mut dialogue.knowledge, snippet);
    }
    dialogue.entities = extract_entities(&dialogue, &slots);
    Ok(dialogue)
}

fn add_snippet(list: &mut Vec<KnowledgeSnippet>, s: &KnowledgeSnippet) {
    if !list.iter().any(|k| k.id == s.id) {
        list.push(s.clone());
    }
}

/// Generates `n` dialogues and the paired corpus. Bitwise deterministic in
/// `(schema, n, seed)`.
pub fn generate_synthetic(schema: &SynthSchema, n: usize, seed: u64) -> Result<SynthOutput> {
    schema.validate()?;
    if n == 0 {
        return Err(CoreError::Config("at least one dialogue must be generated".into()));
    }
    let corpus = generate_corpus(schema, seed)?;
    let index = CorpusIndex::build(corpus.articles.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dialogues = Vec::with_capacity(n);
    let width = n.to_string().len();
    for i in 0..n {
        dialogues.push(generate_dialogue(schema, &corpus, &index, format!("synth_{i:0width$}"), seed, &mut rng)?);
    }
    let mut t = SynthTallies { dialogues: n, ..Default::default() };
    for d in &dialogues {
        t.turns += d.turns.len();
        t.system_turns += d.system_turns().count();
        t.enriched_turns += d.turns.iter().filter(|x| x.enriched).count();
        t.entities += d.entities.len();
        t.snippets += d.knowledge.len();
    }
    Ok(SynthOutput { dialogues, corpus: corpus.articles, tallies: t })
}

/// Entities named in the schema (for tests and corpus checks).
pub fn schema_entities(schema: &SynthSchema) -> Vec<Entity> {
    let mut v: Vec<Entity> = schema
        .domains
        .iter()
        .flat_map(|d| d.entities.iter().map(move |e| Entity::new(e.as_str(), d.name.as_str())))
        .collect();
    for d in &schema.domains {
        v.extend(schema.cities.iter().map(|c| Entity::new(c.as_str(), d.name.as_str())));
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;
    use crate::ingest::dataset_json;

    #[test]
    fn default_schema_is_valid() {
        let s = SynthSchema::default_schema();
        assert_eq!(s.domains.len(), 4);
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = SynthSchema::default_schema();
        let a = generate_synthetic(&s, 1, 7).unwrap();
        let b = generate_synthetic(&s, 1, 7).unwrap();
        assert_eq!(dataset_json(&a.dialogues).to_string(), dataset_json(&b.dialogues).to_string());
        assert_eq!(a.corpus, b.corpus);
    }

    #[test]
    fn zero_dialogues_is_an_error() {
        assert!(matches!(generate_synthetic(&SynthSchema::default_schema(), 0, 1), Err(CoreError::Config(_))));
    }

    #[test]
    fn empty_domain_set_is_an_error() {
        let text = DEFAULT_SCHEMA.replace("[[domains]]", "[[unused]]");
        assert!(SynthSchema::from_toml(&text).is_err());
        let mut s = SynthSchema::default_schema();
        s.domains.clear();
        assert!(matches!(generate_synthetic(&s, 1, 1), Err(CoreError::Config(_))));
    }

    #[test]
    fn generated_dialogues_are_valid() {
        let out = generate_synthetic(&SynthSchema::default_schema(), 60, 3).unwrap();
        validate_dataset(&out.dialogues).unwrap();
        for d in &out.dialogues {
            for t in d.turns.iter().filter(|t| t.enriched) {
                for id in &t.gold_snippet_ids {
                    assert!(d.snippet(id).is_some());
                }
            }
        }
        assert!(out.tallies.enriched_turns > 0);
    }

    #[test]
    fn every_entity_has_an_article() {
        let s = SynthSchema::default_schema();
        let c = generate_corpus(&s, 0).unwrap();
        let titles: BTreeSet<&str> = c.articles.iter().map(|a| a.title.as_str()).collect();
        for e in schema_entities(&s) {
            assert!(titles.contains(e.name.as_str()), "{}", e.name);
        }
    }

    #[test]
    fn fill_placeholders() {
        let v = vars(&[("a", "x")]);
        assert_eq!(fill("{a} and {a}", &v).unwrap(), "x and x");
        assert!(fill("{b}", &v).is_err());
        assert!(fill("{a", &v).is_err());
    }
}
