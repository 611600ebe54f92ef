//! Reading and writing SGD- and KETOD-format dialogue files.
//!
//! The field mapping is documented in `docs/data-format.md`. Everything
//! specific to the KETOD release lives in [`ketod`] so that field names can
//! be adjusted in one place.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::data::{validate_dataset, BeliefState, DbResult, DialogAct, Dialogue, Entity, SlotValue, Speaker, Turn};
use crate::error::{CoreError, Result};
use crate::retrieval::KnowledgeSnippet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Sgd,
    Ketod,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Format::Sgd),
            "ketod" => Ok(Format::Ketod),
            _ => Err(format!("unknown dataset format {s:?} (expected sgd or ketod)")),
        }
    }
}

/// `Restaurants_1` -> `restaurants`.
pub fn domain_of(service: &str) -> String {
    let base = match service.rsplit_once('_') {
        Some((b, n)) if !b.is_empty() && !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) => b,
        _ => service,
    };
    base.to_lowercase()
}

/// Loads a JSON file holding a list of dialogues, or every `*.json` file of
/// a directory (sorted by name, `schema.json` skipped).
pub fn load_dataset(path: &Path, format: Format) -> Result<Vec<Dialogue>> {
    let meta = std::fs::metadata(path).map_err(|e| CoreError::io(path, e))?;
    let files: Vec<PathBuf> = if meta.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| CoreError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "schema.json"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| CoreError::io(&f, e))?;
        out.extend(parse_dataset(&text, format).map_err(|e| match e {
            CoreError::Parse { offset, msg, .. } => CoreError::Parse { path: f.clone(), offset, msg },
            other => other,
        })?);
    }
    validate_dataset(&out)?;
    Ok(out)
}

/// Byte offset of a 1-based line/column position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

pub fn parse_dataset(text: &str, format: Format) -> Result<Vec<Dialogue>> {
    let v: Value = serde_json::from_str(text).map_err(|e| CoreError::Parse {
        path: PathBuf::new(),
        offset: byte_offset(text, e.line(), e.column()),
        msg: e.to_string(),
    })?;
    let list = match v {
        Value::Array(a) => a,
        _ => return Err(CoreError::validation("<file>", None, "top level must be a list of dialogues")),
    };
    list.iter().enumerate().map(|(i, d)| parse_dialogue(d, i, format)).collect()
}

fn str_field<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str)
}

fn parse_dialogue(v: &Value, index: usize, format: Format) -> Result<Dialogue> {
    let id = str_field(v, "dialogue_id").map(str::to_string).unwrap_or_else(|| format!("#{index}"));
    let bad = |turn: Option<usize>, msg: &str| CoreError::validation(&id, turn, msg);
    if !v.is_object() {
        return Err(bad(None, "dialogue is not an object"));
    }
    if str_field(v, "dialogue_id").is_none() {
        return Err(bad(None, "missing dialogue_id"));
    }
    let mut domains: Vec<String> = Vec::new();
    for s in v.get("services").and_then(Value::as_array).into_iter().flatten() {
        let s = s.as_str().ok_or_else(|| bad(None, "services must be strings"))?;
        let d = domain_of(s);
        if !domains.contains(&d) {
            domains.push(d);
        }
    }
    let raw_turns = v.get("turns").and_then(Value::as_array).ok_or_else(|| bad(None, "missing turns list"))?;
    let mut turns = Vec::with_capacity(raw_turns.len());
    let mut state: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for (ti, t) in raw_turns.iter().enumerate() {
        turns.push(parse_turn(t, &mut state).map_err(|m| bad(Some(ti), &m))?);
    }
    let mut d = Dialogue { id: id.clone(), domains, turns, entities: Vec::new(), knowledge: Vec::new() };
    if let Some(es) = v.get("entities").and_then(Value::as_array) {
        for e in es {
            let e: Entity = serde_json::from_value(e.clone()).map_err(|e| bad(None, &format!("bad entity: {e}")))?;
            d.entities.push(e);
        }
    }
    if format == Format::Ketod {
        ketod::apply(v, &mut d).map_err(|(turn, m)| bad(turn, &m))?;
    }
    Ok(d)
}

fn parse_turn(t: &Value, state: &mut BTreeMap<String, BTreeMap<String, String>>) -> std::result::Result<Turn, String> {
    let speaker = match str_field(t, "speaker") {
        Some(s) if s.eq_ignore_ascii_case("user") => Speaker::User,
        Some(s) if s.eq_ignore_ascii_case("system") => Speaker::System,
        other => return Err(format!("bad speaker {other:?}")),
    };
    let utterance = str_field(t, "utterance").ok_or("missing utterance")?.to_string();
    let mut acts = Vec::new();
    let mut db = None;
    for f in t.get("frames").and_then(Value::as_array).into_iter().flatten() {
        let service = str_field(f, "service").ok_or("frame without service")?;
        let domain = domain_of(service);
        if let Some(st) = f.get("state") {
            let mut slots = BTreeMap::new();
            for (k, vals) in st.get("slot_values").and_then(Value::as_object).into_iter().flatten() {
                let first = match vals {
                    Value::Array(a) => a.first().and_then(Value::as_str),
                    Value::String(s) => Some(s.as_str()),
                    _ => None,
                };
                if let Some(v) = first {
                    slots.insert(k.clone(), v.to_string());
                }
            }
            state.insert(domain.clone(), slots);
        }
        for a in f.get("actions").and_then(Value::as_array).into_iter().flatten() {
            let act = str_field(a, "act").ok_or("action without act")?.to_string();
            let slot = str_field(a, "slot").filter(|s| !s.is_empty()).map(str::to_string);
            let values: Vec<String> = a
                .get("values")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
                .map(|x| x.as_str().map(str::to_string).ok_or("non-string act value"))
                .collect::<std::result::Result<_, _>>()?;
            acts.push(DialogAct { act, slot, values });
        }
        if db.is_none() {
            if let Some(results) = f.get("service_results").and_then(Value::as_array) {
                let mut records = Vec::new();
                for r in results {
                    let mut rec = BTreeMap::new();
                    for (k, v) in r.as_object().ok_or("service result is not an object")? {
                        rec.insert(k.clone(), v.as_str().ok_or("non-string service result")?.to_string());
                    }
                    records.push(rec);
                }
                let match_count = f.get("match_count").and_then(Value::as_u64).map_or(records.len(), |n| n as usize);
                db = Some(DbResult { service: domain.clone(), match_count, records });
            }
        }
    }
    // An explicit belief list, when present, is authoritative.
    let belief = match t.get("belief") {
        Some(b) => serde_json::from_value::<BeliefState>(b.clone()).map_err(|e| format!("bad belief: {e}"))?,
        None => state.iter().flat_map(|(d, m)| m.iter().map(move |(s, v)| SlotValue::new(d, s, v))).collect(),
    };
    let mut turn = Turn::user(&utterance, belief, acts);
    turn.speaker = speaker;
    turn.db = db;
    Ok(turn)
}

/// Writes dialogues in the KETOD-compatible layout read by [`load_dataset`].
pub fn save_dataset(path: &Path, ds: &[Dialogue]) -> Result<()> {
    let text = serde_json::to_string(&dataset_json(ds)).map_err(|e| CoreError::Serialization(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

pub fn dataset_json(ds: &[Dialogue]) -> Value {
    Value::Array(ds.iter().map(dialogue_json).collect())
}

fn dialogue_json(d: &Dialogue) -> Value {
    let turns: Vec<Value> = d.turns.iter().map(|t| turn_json(d, t)).collect();
    let mut m = Map::new();
    m.insert("dialogue_id".into(), json!(d.id));
    m.insert("services".into(), json!(d.domains));
    m.insert("turns".into(), Value::Array(turns));
    if !d.entities.is_empty() {
        m.insert("entities".into(), json!(d.entities));
    }
    if !d.knowledge.is_empty() {
        m.insert(ketod::KNOWLEDGE.into(), json!(d.knowledge));
    }
    Value::Object(m)
}

fn turn_json(d: &Dialogue, t: &Turn) -> Value {
    let acts: Vec<Value> = t
        .acts
        .iter()
        .map(|a| json!({"act": a.act, "slot": a.slot.clone().unwrap_or_default(), "values": a.values}))
        .collect();
    let mut frames = Vec::new();
    let main = t.db.as_ref().map(|x| x.service.clone()).or_else(|| d.domains.first().cloned()).unwrap_or_default();
    let mut frame = Map::new();
    frame.insert("service".into(), json!(main));
    frame.insert("actions".into(), Value::Array(acts));
    if let Some(db) = &t.db {
        frame.insert("service_results".into(), json!(db.records));
        frame.insert("match_count".into(), json!(db.match_count));
    }
    frames.push(Value::Object(frame));
    let mut m = Map::new();
    m.insert("speaker".into(), json!(t.speaker));
    m.insert("utterance".into(), json!(t.utterance));
    m.insert("frames".into(), Value::Array(frames));
    m.insert("belief".into(), json!(t.belief));
    ketod::write_turn(d, t, &mut m);
    Value::Object(m)
}

/// Mapping of the KETOD release's enrichment fields.
pub mod ketod {
    use super::*;
    use crate::retrieval::{chunk_snippets, Article, SnippetId};

    pub const ENRICH: &str = "enrich";
    pub const ENRICHED_UTTER: &str = "enriched_utter";
    pub const ENTITY_QUERY: &str = "entity_query";
    pub const SNIPPET_IDS: &str = "kg_snippets";
    pub const SNIPPET_TEXTS: &str = "kg_snippets_text";
    pub const ENTITY_PASSAGES: &str = "entity_passages";
    /// Candidate snippets with full provenance (written by this crate).
    pub const KNOWLEDGE: &str = "knowledge";

    type Fail = (Option<usize>, String);

    pub(super) fn apply(v: &Value, d: &mut Dialogue) -> std::result::Result<(), Fail> {
        if let Some(k) = v.get(KNOWLEDGE) {
            d.knowledge = serde_json::from_value(k.clone()).map_err(|e| (None, format!("bad knowledge: {e}")))?;
        }
        if let Some(passages) = v.get(ENTITY_PASSAGES).and_then(Value::as_object) {
            for (entity, list) in passages {
                let e = Entity::new(entity.as_str(), d.domains.first().map_or("", String::as_str));
                let arts = passage_articles(entity, list);
                let refs: Vec<&Article> = arts.iter().collect();
                for s in chunk_snippets(&refs, &e) {
                    if !d.knowledge.iter().any(|k| k.text == s.text) {
                        d.knowledge.push(s);
                    }
                }
            }
        }
        let turns = v.get("turns").and_then(Value::as_array).cloned().unwrap_or_default();
        let mut queried = Vec::new();
        let dialogue_id = d.id.clone();
        let mut knowledge = std::mem::take(&mut d.knowledge);
        for (ti, (raw, turn)) in turns.iter().zip(d.turns.iter_mut()).enumerate() {
            let fail = |m: String| (Some(ti), m);
            turn.enriched = raw.get(ENRICH).and_then(Value::as_bool).unwrap_or(false);
            turn.enriched_utterance = raw.get(ENRICHED_UTTER).and_then(Value::as_str).map(str::to_string);
            for q in raw.get(ENTITY_QUERY).and_then(Value::as_array).into_iter().flatten() {
                // Either ["name", ...] or [["name", ...], ...].
                let name = q.as_str().or_else(|| q.as_array().and_then(|a| a.first()).and_then(Value::as_str));
                if let Some(n) = name {
                    queried.push(n.to_string());
                }
            }
            let ids = raw.get(SNIPPET_IDS).and_then(Value::as_array).cloned().unwrap_or_default();
            let texts = raw.get(SNIPPET_TEXTS).and_then(Value::as_array).cloned().unwrap_or_default();
            turn.gold_snippet_ids.clear();
            for (k, id) in ids.iter().enumerate() {
                let text = texts.get(k).and_then(Value::as_str);
                let parsed = id.as_str().and_then(|s| s.parse::<SnippetId>().ok());
                let id = match parsed {
                    Some(p) => p,
                    // Release ids that are plain indices become turn-local ids.
                    None => SnippetId::new(&format!("{dialogue_id}/{ti}"), 0, 0, k),
                };
                if let Some(t) = text {
                    if !knowledge.iter().any(|x| x.id == id) {
                        knowledge.push(KnowledgeSnippet {
                            id: id.clone(),
                            text: t.to_string(),
                            source_title: String::new(),
                        });
                    }
                }
                if !turn.gold_snippet_ids.contains(&id) {
                    turn.gold_snippet_ids.push(id);
                }
            }
            if turn.enriched && turn.gold_snippet_ids.is_empty() {
                return Err(fail("enriched turn without snippet ids".into()));
            }
            if !turn.enriched && !turn.gold_snippet_ids.is_empty() {
                return Err(fail("snippet ids on a turn that is not enriched".into()));
            }
        }
        d.knowledge = knowledge;
        if d.entities.is_empty() {
            let mut c = crate::entities::EntityCollector::default();
            for q in queried {
                c.push(&q, d.domains.first().map_or("", String::as_str));
            }
            d.entities = c.finish();
        }
        Ok(())
    }

    fn passage_articles(entity: &str, list: &Value) -> Vec<Article> {
        let mut arts: Vec<Article> = Vec::new();
        for p in list.as_array().into_iter().flatten() {
            let (title, text) = match p {
                Value::String(s) => (entity.to_string(), s.clone()),
                Value::Array(a) => match (a.first().and_then(Value::as_str), a.get(1).and_then(Value::as_str)) {
                    (Some(t), Some(x)) => (t.to_string(), x.to_string()),
                    _ => continue,
                },
                _ => continue,
            };
            if let Some(a) = arts.iter_mut().find(|a| a.title == title) {
                a.paragraphs.push(text);
            } else if arts.len() < crate::retrieval::ARTICLES_PER_QUERY {
                arts.push(Article::new(title, vec![text]));
            }
        }
        arts
    }

    pub(super) fn write_turn(d: &Dialogue, t: &Turn, m: &mut Map<String, Value>) {
        if !t.is_system() {
            return;
        }
        m.insert(ENRICH.into(), json!(t.enriched));
        if let Some(u) = &t.enriched_utterance {
            m.insert(ENRICHED_UTTER.into(), json!(u));
        }
        if !t.gold_snippet_ids.is_empty() {
            m.insert(SNIPPET_IDS.into(), json!(t.gold_snippet_ids));
            let texts: Vec<Option<&str>> =
                t.gold_snippet_ids.iter().map(|id| d.snippet(id).map(|k| k.text.as_str())).collect();
            m.insert(SNIPPET_TEXTS.into(), json!(texts));
        }
    }
}
