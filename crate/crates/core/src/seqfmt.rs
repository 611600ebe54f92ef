//! Linearization of structured turns into flat delimiter-tagged sequences and
//! best-effort parsing back. The grammar is described in
//! `docs/sequence-grammar.md`; `GRAMMAR_VERSION` changes whenever the byte
//! format does.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{BeliefState, DbResult, DialogAct, Speaker};
use crate::error::{CoreError, Result};
use crate::retrieval::{KnowledgeSnippet, SnippetId};

pub const GRAMMAR_VERSION: u32 = 1;
pub const SNIPPETS_PER_SEQUENCE: usize = 3;
pub const DEFAULT_CONTEXT_BUDGET: usize = 512;

pub const USER_MARK: &str = "<|user|>";
pub const SYSTEM_MARK: &str = "<|system|>";
pub const SNIPPET_MARK: &str = "<|snippet|>";
pub const CHITCHAT: &str = "<chitchat>";
pub const NOCHITCHAT: &str = "<nochitchat>";

const FIELD_SPECIALS: &[char] = &['\\', '<', ';', '=', ','];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SegmentTag {
    Context,
    Belief,
    Db,
    Action,
    Knowledge,
    Decision,
    Response,
}

impl SegmentTag {
    pub const ALL: [SegmentTag; 7] = [
        SegmentTag::Context,
        SegmentTag::Belief,
        SegmentTag::Db,
        SegmentTag::Action,
        SegmentTag::Knowledge,
        SegmentTag::Decision,
        SegmentTag::Response,
    ];

    pub fn open(self) -> &'static str {
        match self {
            SegmentTag::Context => "<|context|>",
            SegmentTag::Belief => "<|belief|>",
            SegmentTag::Db => "<|dbresults|>",
            SegmentTag::Action => "<|action|>",
            SegmentTag::Knowledge => "<|knowledge|>",
            SegmentTag::Decision => "<|decision|>",
            SegmentTag::Response => "<|response|>",
        }
    }

    pub fn close(self) -> &'static str {
        match self {
            SegmentTag::Context => "<|endofcontext|>",
            SegmentTag::Belief => "<|endofbelief|>",
            SegmentTag::Db => "<|endofdbresults|>",
            SegmentTag::Action => "<|endofaction|>",
            SegmentTag::Knowledge => "<|endofknowledge|>",
            SegmentTag::Decision => "<|endofdecision|>",
            SegmentTag::Response => "<|endofresponse|>",
        }
    }
}

/// Every delimiter and decision token; these must be single vocabulary entries.
pub fn special_tokens() -> Vec<&'static str> {
    let mut v: Vec<&str> = SegmentTag::ALL.iter().flat_map(|t| [t.open(), t.close()]).collect();
    v.extend([USER_MARK, SYSTEM_MARK, SNIPPET_MARK, CHITCHAT, NOCHITCHAT]);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Chitchat,
    Nochitchat,
}

impl Decision {
    pub fn token(self) -> &'static str {
        match self {
            Decision::Chitchat => CHITCHAT,
            Decision::Nochitchat => NOCHITCHAT,
        }
    }

    pub fn from_flag(enriched: bool) -> Self {
        if enriched {
            Decision::Chitchat
        } else {
            Decision::Nochitchat
        }
    }

    pub fn is_chitchat(self) -> bool {
        self == Decision::Chitchat
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SequenceKind {
    /// `[C, B, D, A, K, decision, T]`
    Full,
    /// `[C, B, D, A]`
    TodOnly,
    /// `[C, A, K, decision, T]`; the target starts at the decision.
    ResponsePrompt,
    /// `[C, B, D, A, T]`, the knowledge-free baseline.
    TodResponse,
}

impl SequenceKind {
    pub fn segments(self) -> &'static [SegmentTag] {
        use SegmentTag::*;
        match self {
            SequenceKind::Full => &[Context, Belief, Db, Action, Knowledge, Decision, Response],
            SequenceKind::TodOnly => &[Context, Belief, Db, Action],
            SequenceKind::ResponsePrompt => &[Context, Action, Knowledge, Decision, Response],
            SequenceKind::TodResponse => &[Context, Belief, Db, Action, Response],
        }
    }

    pub fn has(self, tag: SegmentTag) -> bool {
        self.segments().contains(&tag)
    }

    /// First segment the model is trained to produce.
    pub fn target_start(self) -> SegmentTag {
        match self {
            SequenceKind::ResponsePrompt => SegmentTag::Decision,
            _ => SegmentTag::Belief,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Self { speaker, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSequence {
    pub kind: SequenceKind,
    pub text: String,
    pub dialogue_id: String,
    pub turn_index: usize,
    /// Ids of the serialized snippets, in order. Only the text goes into the sequence.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snippet_ids: Vec<SnippetId>,
    /// Byte offset in `text` where the target segments begin.
    pub target_offset: usize,
}

impl TrainingSequence {
    /// Number of whitespace tokens before the target.
    pub fn prompt_tokens(&self) -> usize {
        self.text[..self.target_offset].split_whitespace().count()
    }
}

/// Structured content of one system turn, as linearized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnInput<'a> {
    pub context: &'a [Utterance],
    pub belief: &'a BeliefState,
    pub db: Option<&'a DbResult>,
    pub acts: &'a [DialogAct],
    pub knowledge: &'a [KnowledgeSnippet],
    pub decision: Decision,
    pub response: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecodeOutput {
    pub belief: BeliefState,
    pub acts: Vec<DialogAct>,
    pub decision: Option<Decision>,
    pub response: String,
    pub parse_warnings: Vec<String>,
}

impl DecodeOutput {
    /// The decision, with the conservative default.
    pub fn decision_or_default(&self) -> Decision {
        self.decision.unwrap_or(Decision::Nochitchat)
    }
}

/// Everything recoverable from a sequence. Knowledge comes back as texts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedSequence {
    pub context: Option<Vec<Utterance>>,
    pub belief: Option<BeliefState>,
    pub db: Option<Option<DbResult>>,
    pub acts: Option<Vec<DialogAct>>,
    pub knowledge: Option<Vec<String>>,
    pub decision: Option<Decision>,
    pub response: Option<String>,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Escaping

pub fn escape_text(s: &str) -> String {
    escape_with(s, &['\\', '<'])
}

pub fn escape_field(s: &str) -> String {
    escape_with(s, FIELD_SPECIALS)
}

fn escape_with(s: &str, specials: &[char]) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if specials.contains(&c) {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

pub fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(n) = chars.next() {
                out.push(n);
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn check_ident(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || FIELD_SPECIALS.contains(&c)) {
        return Err(CoreError::Serialization(format!("{kind} {s:?} is not a valid identifier")));
    }
    Ok(())
}

/// Byte offsets of unescaped occurrences of `needle` in `s`.
fn find_unescaped(s: &str, needle: &str, from: usize) -> Option<usize> {
    let b = s.as_bytes();
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'\\' {
            i += 2;
            continue;
        }
        if i >= from && b[i..].starts_with(needle.as_bytes()) {
            return Some(i);
        }
        i += 1;
    }
    None
}

/// Splits at unescaped single-character separators.
fn split_unescaped(s: &str, sep: u8) -> Vec<&str> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'\\' {
            i += 2;
            continue;
        }
        if b[i] == sep {
            out.push(&s[start..i]);
            start = i + 1;
        }
        i += 1;
    }
    out.push(&s[start.min(s.len())..]);
    out
}

/// Separator-joined pieces carry one space on each side of the separator.
fn trim_piece(piece: &str, first: bool, last: bool) -> &str {
    let mut p = piece;
    if !first {
        p = p.strip_prefix(' ').unwrap_or(p);
    }
    if !last {
        p = p.strip_suffix(' ').unwrap_or(p);
    }
    p
}

fn split_list(s: &str, sep: u8) -> Vec<&str> {
    let parts = split_unescaped(s, sep);
    let n = parts.len();
    parts.into_iter().enumerate().map(|(i, p)| trim_piece(p, i == 0, i + 1 == n)).collect()
}

// ---------------------------------------------------------------------------
// Serialization

pub fn segment(tag: SegmentTag, payload: &str) -> String {
    if payload.is_empty() {
        format!("{} {}", tag.open(), tag.close())
    } else {
        format!("{} {} {}", tag.open(), payload, tag.close())
    }
}

fn marked_list<'a>(items: impl Iterator<Item = (&'static str, &'a str)>) -> String {
    items.map(|(m, t)| format!("{m} {}", escape_text(t))).collect::<Vec<_>>().join(" ")
}

pub fn context_payload(context: &[Utterance]) -> String {
    marked_list(context.iter().map(|u| {
        (
            match u.speaker {
                Speaker::User => USER_MARK,
                Speaker::System => SYSTEM_MARK,
            },
            u.text.as_str(),
        )
    }))
}

pub fn belief_payload(b: &BeliefState) -> Result<String> {
    let mut parts = Vec::new();
    for sv in b.iter() {
        check_ident("domain", &sv.domain)?;
        check_ident("slot", &sv.slot)?;
        parts.push(format!("{} {} = {}", sv.domain, sv.slot, escape_field(&sv.value)));
    }
    Ok(parts.join(" ; "))
}

pub fn acts_payload(acts: &[DialogAct]) -> Result<String> {
    let mut parts = Vec::new();
    for a in acts {
        a.validate().map_err(CoreError::Serialization)?;
        check_ident("act", &a.act)?;
        let mut s = a.act.clone();
        if let Some(slot) = &a.slot {
            check_ident("slot", slot)?;
            s.push(' ');
            s.push_str(slot);
            if !a.values.is_empty() {
                s.push_str(" = ");
                s.push_str(&a.values.iter().map(|v| escape_field(v)).collect::<Vec<_>>().join(" , "));
            }
        }
        parts.push(s);
    }
    Ok(parts.join(" ; "))
}

/// `service count` followed by the first record's fields. A record without
/// fields is indistinguishable from no record.
pub fn db_payload(db: Option<&DbResult>) -> Result<String> {
    let Some(db) = db else { return Ok(String::new()) };
    check_ident("service", &db.service)?;
    let mut parts = vec![format!("{} {}", db.service, db.match_count)];
    if let Some(rec) = db.records.first() {
        for (k, v) in rec {
            check_ident("field", k)?;
            parts.push(format!("{k} = {}", escape_field(v)));
        }
    }
    Ok(parts.join(" ; "))
}

pub fn knowledge_payload<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    marked_list(texts.into_iter().map(|t| (SNIPPET_MARK, t)))
}

/// Serializes one turn. Knowledge-bearing kinds require exactly three snippets.
pub fn linearize(input: &TurnInput<'_>, kind: SequenceKind) -> Result<(String, usize)> {
    if kind.has(SegmentTag::Knowledge) && input.knowledge.len() != SNIPPETS_PER_SEQUENCE {
        return Err(CoreError::Contract(format!(
            "{kind:?} sequences need exactly {SNIPPETS_PER_SEQUENCE} snippets, got {}",
            input.knowledge.len()
        )));
    }
    linearize_unchecked(input, kind)
}

/// As `linearize` but accepting any number of snippets (inference prompts
/// can have fewer when retrieval finds nothing).
pub fn linearize_unchecked(input: &TurnInput<'_>, kind: SequenceKind) -> Result<(String, usize)> {
    let mut parts: Vec<String> = Vec::new();
    let mut target = None;
    let mut len = 0;
    for &tag in kind.segments() {
        let payload = match tag {
            SegmentTag::Context => context_payload(input.context),
            SegmentTag::Belief => belief_payload(input.belief)?,
            SegmentTag::Db => db_payload(input.db)?,
            SegmentTag::Action => acts_payload(input.acts)?,
            SegmentTag::Knowledge => knowledge_payload(input.knowledge.iter().map(|k| k.text.as_str())),
            SegmentTag::Decision => input.decision.token().to_string(),
            SegmentTag::Response => escape_text(input.response),
        };
        if !parts.is_empty() {
            len += 1;
        }
        if tag == kind.target_start() {
            target = Some(len);
        }
        let s = segment(tag, &payload);
        len += s.len();
        parts.push(s);
    }
    Ok((parts.join(" "), target.unwrap_or(len)))
}

/// Builds a `TrainingSequence` for a turn.
pub fn training_sequence(
    input: &TurnInput<'_>,
    kind: SequenceKind,
    dialogue_id: &str,
    turn_index: usize,
) -> Result<TrainingSequence> {
    let (text, target_offset) = linearize(input, kind)?;
    let snippet_ids = if kind.has(SegmentTag::Knowledge) {
        input.knowledge.iter().map(|k| k.id.clone()).collect()
    } else {
        Vec::new()
    };
    Ok(TrainingSequence { kind, text, dialogue_id: dialogue_id.to_string(), turn_index, snippet_ids, target_offset })
}

/// Drops the oldest utterances until the serialized context fits `budget`
/// whitespace tokens. The newest utterance is always kept.
pub fn truncate_context(context: &[Utterance], budget: usize) -> &[Utterance] {
    let cost = |u: &Utterance| 1 + escape_text(&u.text).split_whitespace().count();
    let mut total = 2 + context.iter().map(cost).sum::<usize>();
    let mut start = 0;
    while total > budget && start + 1 < context.len() {
        total -= cost(&context[start]);
        start += 1;
    }
    &context[start..]
}

// ---------------------------------------------------------------------------
// Parsing

struct Region<'a> {
    payload: &'a str,
    closed: bool,
}

/// Finds the first occurrence of `tag`'s segment. Without a close delimiter
/// the payload runs to the next segment delimiter or the end of input.
fn find_segment<'a>(text: &'a str, tag: SegmentTag) -> Option<Region<'a>> {
    let open = find_unescaped(text, tag.open(), 0)?;
    let start = open + tag.open().len();
    let (end, closed) = match find_unescaped(text, tag.close(), start) {
        Some(c) if next_segment_delim(text, start).is_none_or(|n| n >= c) => (c, true),
        _ => (next_segment_delim(text, start).unwrap_or(text.len()), false),
    };
    let raw = &text[start..end];
    let payload = if raw == " " || raw.is_empty() {
        ""
    } else {
        let p = raw.strip_prefix(' ').unwrap_or(raw);
        if closed {
            p.strip_suffix(' ').unwrap_or(p)
        } else {
            p.trim_end()
        }
    };
    Some(Region { payload, closed })
}

fn next_segment_delim(text: &str, from: usize) -> Option<usize> {
    SegmentTag::ALL.iter().flat_map(|t| [t.open(), t.close()]).filter_map(|d| find_unescaped(text, d, from)).min()
}

/// Splits a marker-separated payload (`<|user|> a <|system|> b`).
fn parse_marked(payload: &str, markers: &[&str], warnings: &mut Vec<String>, what: &str) -> Vec<(usize, String)> {
    let mut hits: Vec<(usize, usize)> = Vec::new();
    for (mi, m) in markers.iter().enumerate() {
        let mut from = 0;
        while let Some(p) = find_unescaped(payload, m, from) {
            hits.push((p, mi));
            from = p + m.len();
        }
    }
    hits.sort();
    let mut out = Vec::new();
    if payload.is_empty() {
        return out;
    }
    if hits.first().is_none_or(|h| h.0 != 0) {
        warnings.push(format!("{what}: text before the first marker"));
    }
    for (i, &(p, mi)) in hits.iter().enumerate() {
        let start = p + markers[mi].len();
        let end = hits.get(i + 1).map_or(payload.len(), |h| h.0);
        let mut t = &payload[start..end];
        t = t.strip_prefix(' ').unwrap_or(t);
        if i + 1 < hits.len() {
            t = t.strip_suffix(' ').unwrap_or(t);
        }
        out.push((mi, unescape(t)));
    }
    out
}

fn parse_ident(s: &str) -> Option<String> {
    let ok = !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || FIELD_SPECIALS.contains(&c));
    ok.then(|| s.to_string())
}

/// Splits `left = right` at the first unescaped `=`.
fn split_eq(s: &str) -> Option<(&str, &str)> {
    let at = find_unescaped(s, "=", 0)?;
    let l = &s[..at];
    let r = &s[at + 1..];
    Some((l.strip_suffix(' ').unwrap_or(l), r.strip_prefix(' ').unwrap_or(r)))
}

pub fn parse_belief(payload: &str) -> std::result::Result<BeliefState, String> {
    let mut b = BeliefState::new();
    if payload.is_empty() {
        return Ok(b);
    }
    for piece in split_list(payload, b';') {
        let (lhs, value) = split_eq(piece).ok_or_else(|| format!("belief entry {piece:?} has no '='"))?;
        let mut it = lhs.split(' ');
        let (Some(d), Some(s), None) = (it.next().and_then(parse_ident), it.next().and_then(parse_ident), it.next())
        else {
            return Err(format!("belief entry {piece:?} needs 'domain slot'"));
        };
        if b.set(&d, &s, &unescape(value)).is_some() {
            return Err(format!("duplicate belief slot {d} {s}"));
        }
    }
    Ok(b)
}

pub fn parse_acts(payload: &str) -> std::result::Result<Vec<DialogAct>, String> {
    let mut out = Vec::new();
    if payload.is_empty() {
        return Ok(out);
    }
    for piece in split_list(payload, b';') {
        let (head, values) = match split_eq(piece) {
            Some((h, v)) => (h, Some(v)),
            None => (piece, None),
        };
        let mut it = head.split(' ');
        let act = it.next().and_then(parse_ident).ok_or_else(|| format!("bad act {piece:?}"))?;
        let slot = match it.next() {
            Some(s) => Some(parse_ident(s).ok_or_else(|| format!("bad slot in {piece:?}"))?),
            None => None,
        };
        if it.next().is_some() {
            return Err(format!("trailing words in act {piece:?}"));
        }
        let values: Vec<String> = match values {
            Some(v) => split_list(v, b',').into_iter().map(unescape).collect(),
            None => Vec::new(),
        };
        if slot.is_none() && !values.is_empty() {
            return Err(format!("act {piece:?} has values but no slot"));
        }
        out.push(DialogAct { act, slot, values });
    }
    Ok(out)
}

pub fn parse_db(payload: &str) -> std::result::Result<Option<DbResult>, String> {
    if payload.is_empty() {
        return Ok(None);
    }
    let pieces = split_list(payload, b';');
    let mut head = pieces[0].split(' ');
    let (Some(service), Some(count), None) = (head.next().and_then(parse_ident), head.next(), head.next()) else {
        return Err(format!("bad db header {:?}", pieces[0]));
    };
    let match_count = count.parse().map_err(|_| format!("bad match count {count:?}"))?;
    let mut rec = BTreeMap::new();
    for piece in &pieces[1..] {
        let (k, v) = split_eq(piece).ok_or_else(|| format!("db field {piece:?} has no '='"))?;
        let k = parse_ident(k).ok_or_else(|| format!("bad db field name {k:?}"))?;
        if rec.insert(k, unescape(v)).is_some() {
            return Err(format!("duplicate db field in {piece:?}"));
        }
    }
    let records = if pieces.len() > 1 { vec![rec] } else { Vec::new() };
    if match_count < records.len() {
        return Err("match count below record count".into());
    }
    Ok(Some(DbResult { service, match_count, records }))
}

fn parse_decision(payload: &str) -> Option<Decision> {
    match payload.trim() {
        CHITCHAT => Some(Decision::Chitchat),
        NOCHITCHAT => Some(Decision::Nochitchat),
        _ => None,
    }
}

/// Parses every segment present in `text`. Never fails: malformed segments
/// are left `None` and reported in `warnings`.
pub fn parse_sequence(text: &str) -> ParsedSequence {
    let mut p = ParsedSequence::default();
    let w = &mut p.warnings;
    let region = |tag: SegmentTag, w: &mut Vec<String>| {
        let r = find_segment(text, tag)?;
        if !r.closed {
            w.push(format!("{tag:?} segment is not terminated"));
        }
        Some(r)
    };
    if let Some(r) = region(SegmentTag::Context, w) {
        let items = parse_marked(r.payload, &[USER_MARK, SYSTEM_MARK], w, "context");
        p.context = Some(
            items
                .into_iter()
                .map(|(m, t)| Utterance::new(if m == 0 { Speaker::User } else { Speaker::System }, t))
                .collect(),
        );
    }
    if let Some(r) = region(SegmentTag::Belief, w) {
        match parse_belief(r.payload) {
            Ok(b) if r.closed => p.belief = Some(b),
            Ok(_) => {}
            Err(e) => w.push(format!("belief: {e}")),
        }
    }
    if let Some(r) = region(SegmentTag::Db, w) {
        match parse_db(r.payload) {
            Ok(d) => p.db = Some(d),
            Err(e) => w.push(format!("db: {e}")),
        }
    }
    if let Some(r) = region(SegmentTag::Action, w) {
        match parse_acts(r.payload) {
            Ok(a) if r.closed => p.acts = Some(a),
            Ok(_) => {}
            Err(e) => w.push(format!("acts: {e}")),
        }
    }
    if let Some(r) = region(SegmentTag::Knowledge, w) {
        p.knowledge = Some(parse_marked(r.payload, &[SNIPPET_MARK], w, "knowledge").into_iter().map(|x| x.1).collect());
    }
    if let Some(r) = region(SegmentTag::Decision, w) {
        p.decision = parse_decision(r.payload);
        if p.decision.is_none() {
            w.push(format!("unrecognized decision {:?}", r.payload));
        }
    }
    if let Some(r) = region(SegmentTag::Response, w) {
        p.response = Some(unescape(r.payload));
    }
    p
}

/// Recovers belief, acts, decision and response from model output of the
/// given kind, substituting conservative defaults for anything missing.
pub fn parse_decode(text: &str, kind: SequenceKind) -> DecodeOutput {
    let p = parse_sequence(text);
    let mut warnings = p.warnings;
    let mut need = |tag: SegmentTag, present: bool| {
        if kind.has(tag) && !present {
            warnings.push(format!("missing or malformed {tag:?} segment"));
        }
    };
    need(SegmentTag::Belief, p.belief.is_some());
    need(SegmentTag::Action, p.acts.is_some());
    need(SegmentTag::Decision, p.decision.is_some());
    need(SegmentTag::Response, p.response.is_some());
    // Unrecognized decisions were reported above; avoid a duplicate line.
    warnings.dedup();
    DecodeOutput {
        belief: p.belief.unwrap_or_default(),
        acts: p.acts.unwrap_or_default(),
        decision: if kind.has(SegmentTag::Decision) { Some(p.decision.unwrap_or(Decision::Nochitchat)) } else { None },
        response: p.response.unwrap_or_default(),
        parse_warnings: warnings,
    }
}

/// Gold ids first, then ranked ids in order, without duplicates, cut to three.
pub fn merge_snippets(gold: &[SnippetId], ranked: &[SnippetId]) -> Result<Vec<SnippetId>> {
    if gold.len() > SNIPPETS_PER_SEQUENCE {
        return Err(CoreError::Contract(format!("{} gold snippets (at most {SNIPPETS_PER_SEQUENCE})", gold.len())));
    }
    let mut seen = HashSet::new();
    let out: Vec<SnippetId> = gold
        .iter()
        .chain(ranked)
        .filter(|id| seen.insert((*id).clone()))
        .take(SNIPPETS_PER_SEQUENCE)
        .cloned()
        .collect();
    if out.len() < SNIPPETS_PER_SEQUENCE {
        return Err(CoreError::Contract(format!("only {} distinct snippet ids available", out.len())));
    }
    Ok(out)
}
