//! Training-data construction, staged inference and evaluation for the three
//! architectures.
//!
//! * `Baseline`: one model over `[C, B, D, A, T]`, never sees knowledge.
//! * `Plus`: one model over `[C, B, D, A, K, decision, T]`.
//! * `Combiner`: a TOD model over `[C, B, D, A]` and a response model over
//!   `[C, A, K, decision, T]`.
//!
//! Inference runs belief, then acts (after the gold DB result), then
//! knowledge selection over entities of the belief and acts, then decision
//! and response. A [`StageSpec`] replaces stages with gold values.
//!
//! Everything the language model reads or writes is in "LM form": free text
//! through [`lm_text`], structured values through [`normalize_value`].

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use kgtod_lm::{
    load_checkpoint, save_checkpoint, train_from, Example, LmConfig, ModelParams, Session, TrainReport, Vocab,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BeliefState, DbResult, DialogAct, Dialogue, Entity, Speaker, Turn};
use crate::entities::{turn_entities, EntitySlots};
use crate::error::{CoreError, Result};
use crate::metrics::{
    act_slot_f1, avg_ga, bleu4_subset, decision_f1, joint_ga, selection_recall, BleuSubset, EvalReport,
};
use crate::retrieval::{candidates_for_dialogue, CorpusIndex, KnowledgeSnippet, SnippetId};
use crate::select::{random_top, rank, recent_context, select_top, RankExample, RankerModel, CONTEXT_WINDOW, TOP_K};
use crate::seqfmt::{
    acts_payload, belief_payload, context_payload, db_payload, knowledge_payload, linearize_unchecked, merge_snippets,
    parse_acts, parse_belief, special_tokens, training_sequence, truncate_context, unescape, Decision, SegmentTag,
    SequenceKind, TrainingSequence, TurnInput, Utterance, CHITCHAT, NOCHITCHAT,
};
use crate::text::{lm_text, normalize_value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Baseline,
    Plus,
    Combiner,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Baseline, Architecture::Plus, Architecture::Combiner];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Baseline => "baseline",
            Architecture::Plus => "plus",
            Architecture::Combiner => "combiner",
        }
    }

    pub fn uses_knowledge(self) -> bool {
        self != Architecture::Baseline
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown architecture {s:?} (baseline, plus, combiner)")))
    }
}

/// Which stages are replaced by gold values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageSpec {
    pub gold_tod: bool,
    pub gold_decision: bool,
    pub gold_knowledge: bool,
}

impl StageSpec {
    pub const END_TO_END: StageSpec = StageSpec { gold_tod: false, gold_decision: false, gold_knowledge: false };
    pub const GOLD_TOD: StageSpec = StageSpec { gold_tod: true, gold_decision: false, gold_knowledge: false };
    pub const ALL_ORACLE: StageSpec = StageSpec { gold_tod: true, gold_decision: true, gold_knowledge: true };

    pub fn new(gold_tod: bool, gold_decision: bool, gold_knowledge: bool) -> Result<Self> {
        let s = StageSpec { gold_tod, gold_decision, gold_knowledge };
        s.validate()?;
        Ok(s)
    }

    /// Gold decision or knowledge presuppose gold belief and acts.
    pub fn validate(&self) -> Result<()> {
        if (self.gold_decision || self.gold_knowledge) && !self.gold_tod {
            return Err(CoreError::Config("gold decision or knowledge requires gold TOD".into()));
        }
        Ok(())
    }

    /// Rows of the stage grid sort all-oracle first and end-to-end last.
    pub fn rank(&self) -> u8 {
        3 - (self.gold_tod as u8 + self.gold_decision as u8 + self.gold_knowledge as u8)
    }

    pub fn label(&self) -> String {
        match (self.gold_tod, self.gold_decision, self.gold_knowledge) {
            (false, _, _) => "end-to-end".into(),
            (true, false, false) => "gold TOD".into(),
            (true, true, true) => "all-oracle".into(),
            (true, true, false) => "gold TOD+decision".into(),
            (true, false, true) => "gold TOD+knowledge".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Gold,
    Predicted,
    /// The architecture has no such stage.
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub belief: Source,
    pub acts: Source,
    pub knowledge: Source,
    pub decision: Source,
    pub response: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnPrediction {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub belief: BeliefState,
    pub acts: Vec<DialogAct>,
    pub decision: Option<Decision>,
    pub selected: Vec<SnippetId>,
    pub response: String,
    pub provenance: Provenance,
    pub gold_enriched: bool,
    pub gold_snippet_ids: Vec<SnippetId>,
    pub gold_response: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Whitespace-token budget for the serialized context.
    pub context_budget: usize,
    pub max_belief_tokens: usize,
    pub max_action_tokens: usize,
    pub max_response_tokens: usize,
    pub entity_slots: EntitySlots,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            context_budget: 160,
            max_belief_tokens: 80,
            max_action_tokens: 80,
            max_response_tokens: 90,
            entity_slots: EntitySlots::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// LM form

pub fn lm_belief(b: &BeliefState) -> BeliefState {
    b.iter().map(|sv| crate::data::SlotValue::new(sv.domain, sv.slot, normalize_value(&sv.value))).collect()
}

pub fn lm_acts(acts: &[DialogAct]) -> Vec<DialogAct> {
    acts.iter()
        .map(|a| DialogAct {
            act: a.act.clone(),
            slot: a.slot.clone(),
            values: a.values.iter().map(|v| normalize_value(v)).collect(),
        })
        .collect()
}

pub fn lm_db(db: &DbResult) -> DbResult {
    DbResult {
        service: db.service.clone(),
        match_count: db.match_count,
        records: db.records.iter().map(|r| r.iter().map(|(k, v)| (k.clone(), normalize_value(v))).collect()).collect(),
    }
}

pub fn lm_snippet(k: &KnowledgeSnippet) -> KnowledgeSnippet {
    KnowledgeSnippet { id: k.id.clone(), text: lm_text(&k.text), source_title: k.source_title.clone() }
}

/// LM-form context preceding turn `t`, cut to `budget`.
pub fn lm_context(d: &Dialogue, t: usize, budget: usize) -> Vec<Utterance> {
    let all: Vec<Utterance> = d.turns[..t].iter().map(|x| Utterance::new(x.speaker, lm_text(x.text()))).collect();
    truncate_context(&all, budget).to_vec()
}

/// Raw texts of the ranker's context window before turn `t`.
pub fn ranker_context(d: &Dialogue, t: usize) -> Vec<String> {
    let all: Vec<String> = d.turns[..t].iter().map(|x| x.text().to_string()).collect();
    recent_context(&all, CONTEXT_WINDOW).to_vec()
}

// ---------------------------------------------------------------------------
// Knowledge candidates

/// Where candidate snippets come from: the corpus index, or the snippets the
/// dialogue itself carries.
#[derive(Clone, Copy)]
pub enum KnowledgeSource<'a> {
    Index(&'a CorpusIndex),
    Dialogue,
}

pub fn candidates(src: KnowledgeSource<'_>, d: &Dialogue, entities: &[Entity]) -> Vec<KnowledgeSnippet> {
    if entities.is_empty() {
        return Vec::new();
    }
    match src {
        KnowledgeSource::Index(index) => candidates_for_dialogue(index, entities),
        KnowledgeSource::Dialogue => {
            let names: Vec<String> = entities.iter().map(|e| normalize_value(&e.name)).collect();
            let own: Vec<KnowledgeSnippet> =
                d.knowledge.iter().filter(|k| names.contains(&k.id.entity)).cloned().collect();
            if own.is_empty() {
                d.knowledge.clone()
            } else {
                own
            }
        }
    }
}

fn gold_entities(d: &Dialogue, t: usize, slots: &EntitySlots) -> Vec<Entity> {
    turn_entities(&d.turns[t].belief, &d.turns[t].acts, &d.domains, slots)
}

/// Gold snippets first, then ranked ones, up to three. Fewer than three when
/// the pool is smaller.
fn merged_knowledge(turn: &Turn, d: &Dialogue, ranked: &[KnowledgeSnippet]) -> Vec<KnowledgeSnippet> {
    let ranked_ids: Vec<SnippetId> = ranked.iter().map(|k| k.id.clone()).collect();
    let ids = merge_snippets(&turn.gold_snippet_ids, &ranked_ids).unwrap_or_else(|_| {
        let mut v: Vec<SnippetId> = Vec::new();
        for id in turn.gold_snippet_ids.iter().chain(&ranked_ids) {
            if !v.contains(id) && v.len() < TOP_K {
                v.push(id.clone());
            }
        }
        v
    });
    ids.iter().filter_map(|id| ranked.iter().chain(&d.knowledge).find(|k| &k.id == id).cloned()).collect()
}

fn ranked_pool(
    ranker: &RankerModel,
    d: &Dialogue,
    t: usize,
    pool: &[KnowledgeSnippet],
) -> Result<Vec<KnowledgeSnippet>> {
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    Ok(rank(ranker, &ranker_context(d, t), pool)?.into_iter().map(|r| r.snippet).collect())
}

/// Ranking examples from every enriched turn, with candidates from gold entities.
pub fn ranker_examples(ds: &[Dialogue], src: KnowledgeSource<'_>, slots: &EntitySlots) -> Vec<RankExample> {
    let mut out = Vec::new();
    for d in ds {
        for (t, turn) in d.system_turns().filter(|(_, x)| x.enriched) {
            let pool = candidates(src, d, &gold_entities(d, t, slots));
            if !pool.is_empty() {
                out.push(RankExample {
                    context: ranker_context(d, t),
                    candidates: pool,
                    gold: turn.gold_snippet_ids.clone(),
                });
            }
        }
    }
    out
}

pub enum Selector<'a> {
    Ranker(&'a RankerModel),
    Random(u64),
}

/// Selection recall over enriched turns with candidates from gold entities.
pub fn selection_recall_with(
    ds: &[Dialogue],
    src: KnowledgeSource<'_>,
    slots: &EntitySlots,
    selector: Selector<'_>,
) -> Result<Option<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(if let Selector::Random(s) = selector { s } else { 0 });
    let (mut selected, mut gold) = (Vec::new(), Vec::new());
    for d in ds {
        for (t, turn) in d.system_turns().filter(|(_, x)| x.enriched && !x.gold_snippet_ids.is_empty()) {
            let pool = candidates(src, d, &gold_entities(d, t, slots));
            let top = match (&selector, pool.is_empty()) {
                (_, true) => Vec::new(),
                (Selector::Ranker(r), false) => select_top(&rank(r, &ranker_context(d, t), &pool)?, TOP_K),
                (Selector::Random(_), false) => random_top(&pool, TOP_K, &mut rng),
            };
            selected.push(top.into_iter().map(|k| k.id).collect());
            gold.push(turn.gold_snippet_ids.clone());
        }
    }
    selection_recall(&selected, &gold)
}

// ---------------------------------------------------------------------------
// Training data

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MakeDataReport {
    pub sequences: usize,
    /// Knowledge-bearing sequences with fewer than three snippets available.
    pub short_knowledge: usize,
    /// Enriched turns whose gold snippet could not be found.
    pub missing_gold: usize,
}

/// Training sequences for `arch`: one per system turn (two for the Combiner).
pub fn make_training_data(
    arch: Architecture,
    ds: &[Dialogue],
    src: KnowledgeSource<'_>,
    ranker: &RankerModel,
    config: &PipelineConfig,
) -> Result<(Vec<TrainingSequence>, MakeDataReport)> {
    let mut out = Vec::new();
    let mut rep = MakeDataReport::default();
    for d in ds {
        for (t, turn) in d.system_turns() {
            let context = lm_context(d, t, config.context_budget);
            let belief = lm_belief(&turn.belief);
            let acts = lm_acts(&turn.acts);
            let db = turn.db.as_ref().map(lm_db);
            let response = lm_text(turn.text());
            let mut knowledge = Vec::new();
            if arch.uses_knowledge() {
                let pool = candidates(src, d, &gold_entities(d, t, &config.entity_slots));
                let ranked = ranked_pool(ranker, d, t, &pool)?;
                let k = merged_knowledge(turn, d, &ranked);
                if k.len() < TOP_K {
                    rep.short_knowledge += 1;
                }
                if turn.gold_snippet_ids.iter().any(|g| !k.iter().any(|x| &x.id == g)) {
                    rep.missing_gold += 1;
                }
                knowledge = k.iter().map(lm_snippet).collect();
            }
            let input = TurnInput {
                context: &context,
                belief: &belief,
                db: db.as_ref(),
                acts: &acts,
                knowledge: &knowledge,
                decision: Decision::from_flag(turn.enriched),
                response: &response,
            };
            let kinds: &[SequenceKind] = match arch {
                Architecture::Baseline => &[SequenceKind::TodResponse],
                Architecture::Plus => &[SequenceKind::Full],
                Architecture::Combiner => &[SequenceKind::TodOnly, SequenceKind::ResponsePrompt],
            };
            for &kind in kinds {
                let seq = if knowledge.len() == TOP_K || !kind.has(SegmentTag::Knowledge) {
                    training_sequence(&input, kind, &d.id, t)?
                } else {
                    let (text, target_offset) = linearize_unchecked(&input, kind)?;
                    TrainingSequence {
                        kind,
                        text,
                        dialogue_id: d.id.clone(),
                        turn_index: t,
                        snippet_ids: knowledge.iter().map(|k| k.id.clone()).collect(),
                        target_offset,
                    }
                };
                out.push(seq);
            }
        }
    }
    rep.sequences = out.len();
    if rep.short_knowledge > 0 {
        log::info!("{} sequences carry fewer than {TOP_K} snippets", rep.short_knowledge);
    }
    Ok((out, rep))
}

// ---------------------------------------------------------------------------
// Models

/// Vocabulary over the training sequences plus any extra texts (for example
/// the LM form of every corpus snippet).
pub fn build_vocab<'a>(seqs: &'a [TrainingSequence], extra: impl IntoIterator<Item = &'a str>) -> Vocab {
    Vocab::build(seqs.iter().map(|s| s.text.as_str()).chain(extra), special_tokens())
}

pub fn to_example(seq: &TrainingSequence, vocab: &Vocab) -> Example {
    let mut ids = vec![Vocab::BOS_ID];
    ids.extend(vocab.encode(&seq.text));
    Example { ids, loss_from: 1 + seq.prompt_tokens() }
}

#[derive(Debug, Clone)]
pub struct LanguageModel {
    pub vocab: Vocab,
    pub params: ModelParams<f32>,
}

impl LanguageModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        save_checkpoint(&self.params, &dir.join("model.ckpt"))?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        for f in ["model.ckpt", "vocab.txt"] {
            if !dir.join(f).exists() {
                return Err(CoreError::Config(format!("missing checkpoint file {}", dir.join(f).display())));
            }
        }
        let params = load_checkpoint(&dir.join("model.ckpt"))?;
        let vocab = Vocab::load(&dir.join("vocab.txt"))?;
        if vocab.len() != params.vocab_size() {
            return Err(CoreError::Config(format!("{}: vocabulary does not match checkpoint", dir.display())));
        }
        Ok(Self { vocab, params })
    }

    fn id(&self, token: &str) -> u32 {
        self.vocab.id(token).expect("special tokens are in every vocabulary")
    }
}

/// Trains one model on `seqs`; `on_epoch` receives `(epoch, loss)`.
pub fn train_language_model(
    seqs: &[TrainingSequence],
    vocab: &Vocab,
    config: &LmConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(LanguageModel, TrainReport)> {
    let examples: Vec<Example> = seqs.iter().map(|s| to_example(s, vocab)).collect();
    let params = ModelParams::init(config, vocab.len(), config.seed)?;
    let (params, report) = train_from(params, &examples, config, on_epoch)?;
    Ok((LanguageModel { vocab: vocab.clone(), params }, report))
}

/// The trained model(s) of one architecture.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub arch: Architecture,
    /// The single model, or the Combiner's TOD model.
    pub main: LanguageModel,
    /// The Combiner's response model.
    pub response: Option<LanguageModel>,
}

#[derive(Serialize, Deserialize)]
struct ModelSetManifest {
    version: u32,
    arch: Architecture,
}

impl ModelSet {
    pub fn new(arch: Architecture, main: LanguageModel, response: Option<LanguageModel>) -> Result<Self> {
        if (arch == Architecture::Combiner) != response.is_some() {
            return Err(CoreError::Config("the combiner needs exactly two models, other architectures one".into()));
        }
        Ok(Self { arch, main, response })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let m = serde_json::to_string_pretty(&ModelSetManifest { version: 1, arch: self.arch })
            .map_err(|e| CoreError::Serialization(e.to_string()))?;
        std::fs::write(dir.join("models.json"), m).map_err(|e| CoreError::io(dir.join("models.json"), e))?;
        self.main.save(&dir.join("main"))?;
        if let Some(r) = &self.response {
            r.save(&dir.join("response"))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("models.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|_| CoreError::Config(format!("missing checkpoint manifest {}", path.display())))?;
        let m: ModelSetManifest =
            serde_json::from_str(&text).map_err(|e| CoreError::Serialization(format!("{}: {e}", path.display())))?;
        let main = LanguageModel::load(&dir.join("main"))?;
        let response =
            if m.arch == Architecture::Combiner { Some(LanguageModel::load(&dir.join("response"))?) } else { None };
        Self::new(m.arch, main, response)
    }
}

/// Trains every model of `arch` on sequences from `make_training_data`.
pub fn train_models(
    arch: Architecture,
    seqs: &[TrainingSequence],
    vocab: &Vocab,
    config: &LmConfig,
    mut on_epoch: impl FnMut(&str, usize, f64),
) -> Result<(ModelSet, Vec<TrainReport>)> {
    let of = |k: SequenceKind| -> Vec<TrainingSequence> { seqs.iter().filter(|s| s.kind == k).cloned().collect() };
    let main_kind = match arch {
        Architecture::Baseline => SequenceKind::TodResponse,
        Architecture::Plus => SequenceKind::Full,
        Architecture::Combiner => SequenceKind::TodOnly,
    };
    let (main, r1) = train_language_model(&of(main_kind), vocab, config, |e, l| on_epoch("main", e, l))?;
    let mut reports = vec![r1];
    let response = if arch == Architecture::Combiner {
        let (m, r2) =
            train_language_model(&of(SequenceKind::ResponsePrompt), vocab, config, |e, l| on_epoch("response", e, l))?;
        reports.push(r2);
        Some(m)
    } else {
        None
    };
    Ok((ModelSet::new(arch, main, response)?, reports))
}

// ---------------------------------------------------------------------------
// Inference

/// Incremental decoding over whitespace-token text.
struct Decoder<'m> {
    lm: &'m LanguageModel,
    session: Session<'m>,
    warnings: Vec<String>,
    full: bool,
}

impl<'m> Decoder<'m> {
    fn new(lm: &'m LanguageModel) -> Result<Self> {
        let mut session = Session::new(&lm.params);
        session.feed(&[Vocab::BOS_ID])?;
        Ok(Self { lm, session, warnings: Vec::new(), full: false })
    }

    fn feed(&mut self, text: &str) -> Result<()> {
        let ids = self.lm.vocab.encode(text);
        let room = self.session.capacity() - self.session.len();
        if ids.len() > room {
            self.full = true;
            self.warnings.push("context length exhausted".into());
            self.session.feed(&ids[..room])?;
            return Ok(());
        }
        self.session.feed(&ids)?;
        Ok(())
    }

    /// Generates the payload of the segment whose opening tag was just fed,
    /// then feeds the closing tag. `None` when the segment did not close.
    fn payload(&mut self, tag: SegmentTag, max: usize) -> Result<Option<String>> {
        if self.full {
            return Ok(None);
        }
        let close = self.lm.id(tag.close());
        let out = self.session.generate(&[close], max)?;
        let closed = out.last() == Some(&close);
        let body = if closed { &out[..out.len() - 1] } else { &out[..] };
        let text = self.lm.vocab.decode(body);
        if !closed {
            self.warnings.push(format!("{tag:?} segment not terminated"));
            self.full = true;
            return Ok(None);
        }
        if self.session.len() < self.session.capacity() {
            self.session.feed(&[close])?;
        } else {
            self.full = true;
        }
        Ok(Some(text))
    }
}

fn seg(tag: SegmentTag, payload: &str) -> String {
    crate::seqfmt::segment(tag, payload)
}

fn parse_decision_payload(p: &str) -> Option<Decision> {
    match p.trim() {
        CHITCHAT => Some(Decision::Chitchat),
        NOCHITCHAT => Some(Decision::Nochitchat),
        _ => None,
    }
}

/// Runs one architecture over dialogues under a stage specification.
pub struct Engine<'a> {
    pub models: &'a ModelSet,
    pub knowledge: KnowledgeSource<'a>,
    pub ranker: &'a RankerModel,
    pub config: &'a PipelineConfig,
}

impl<'a> Engine<'a> {
    /// Predicts system turn `t` of `d` from its gold history.
    pub fn infer_turn(&self, d: &Dialogue, t: usize, stage: StageSpec) -> Result<TurnPrediction> {
        stage.validate()?;
        let turn = &d.turns[t];
        if turn.speaker != Speaker::System {
            return Err(CoreError::Contract(format!("turn {t} of {} is not a system turn", d.id)));
        }
        let arch = self.models.arch;
        let context = lm_context(d, t, self.config.context_budget);
        let ctx_seg = seg(SegmentTag::Context, &context_payload(&context));
        let db_seg = seg(SegmentTag::Db, &db_payload(turn.db.as_ref().map(lm_db).as_ref())?);

        // Belief and acts.
        let mut tod = Decoder::new(&self.models.main)?;
        tod.feed(&ctx_seg)?;
        let (belief, acts, tod_src) = if stage.gold_tod {
            tod.feed(&seg(SegmentTag::Belief, &belief_payload(&lm_belief(&turn.belief))?))?;
            tod.feed(&db_seg)?;
            tod.feed(&seg(SegmentTag::Action, &acts_payload(&lm_acts(&turn.acts))?))?;
            (turn.belief.clone(), turn.acts.clone(), Source::Gold)
        } else {
            tod.feed(SegmentTag::Belief.open())?;
            let belief = match tod.payload(SegmentTag::Belief, self.config.max_belief_tokens)? {
                Some(p) => parse_belief(&p).unwrap_or_else(|e| {
                    tod.warnings.push(format!("belief: {e}"));
                    BeliefState::new()
                }),
                None => BeliefState::new(),
            };
            tod.feed(&db_seg)?;
            tod.feed(SegmentTag::Action.open())?;
            let acts = match tod.payload(SegmentTag::Action, self.config.max_action_tokens)? {
                Some(p) => parse_acts(&p).unwrap_or_else(|e| {
                    tod.warnings.push(format!("acts: {e}"));
                    Vec::new()
                }),
                None => Vec::new(),
            };
            (belief, acts, Source::Predicted)
        };

        let mut pred = TurnPrediction {
            dialogue_id: d.id.clone(),
            turn_index: t,
            belief,
            acts,
            decision: None,
            selected: Vec::new(),
            response: String::new(),
            provenance: Provenance {
                belief: tod_src,
                acts: tod_src,
                knowledge: Source::Absent,
                decision: Source::Absent,
                response: Source::Predicted,
            },
            gold_enriched: turn.enriched,
            gold_snippet_ids: turn.gold_snippet_ids.clone(),
            gold_response: turn.text().to_string(),
            warnings: Vec::new(),
        };

        if arch == Architecture::Baseline {
            tod.feed(SegmentTag::Response.open())?;
            pred.response = tod
                .payload(SegmentTag::Response, self.config.max_response_tokens)?
                .map(|p| unescape(&p))
                .unwrap_or_default();
            pred.warnings = tod.warnings;
            return Ok(pred);
        }

        // Knowledge.
        let knowledge = if stage.gold_knowledge {
            let pool = candidates(self.knowledge, d, &gold_entities(d, t, &self.config.entity_slots));
            merged_knowledge(turn, d, &ranked_pool(self.ranker, d, t, &pool)?)
        } else {
            let entities = turn_entities(&pred.belief, &pred.acts, &d.domains, &self.config.entity_slots);
            let pool = candidates(self.knowledge, d, &entities);
            ranked_pool(self.ranker, d, t, &pool)?.into_iter().take(TOP_K).collect()
        };
        pred.provenance.knowledge = if stage.gold_knowledge { Source::Gold } else { Source::Predicted };
        pred.selected = knowledge.iter().map(|k| k.id.clone()).collect();
        let k_seg = seg(
            SegmentTag::Knowledge,
            &knowledge_payload(
                knowledge.iter().map(|k| lm_text(&k.text)).collect::<Vec<_>>().iter().map(String::as_str),
            ),
        );

        // Decision and response.
        let mut gen = match arch {
            Architecture::Plus => tod,
            _ => {
                let mut r = Decoder::new(self.models.response.as_ref().expect("combiner has a response model"))?;
                r.warnings = std::mem::take(&mut tod.warnings);
                r.feed(&ctx_seg)?;
                let acts = if stage.gold_tod { lm_acts(&turn.acts) } else { pred.acts.clone() };
                r.feed(&seg(SegmentTag::Action, &acts_payload(&acts).unwrap_or_default()))?;
                r
            }
        };
        gen.feed(&k_seg)?;
        let forced = if stage.gold_decision {
            Some(Decision::from_flag(turn.enriched))
        } else if knowledge.is_empty() {
            Some(Decision::Nochitchat)
        } else {
            None
        };
        let decision = match forced {
            Some(dec) => {
                gen.feed(&seg(SegmentTag::Decision, dec.token()))?;
                dec
            }
            None => {
                gen.feed(SegmentTag::Decision.open())?;
                let p = gen.payload(SegmentTag::Decision, 4)?;
                p.as_deref().and_then(parse_decision_payload).unwrap_or_else(|| {
                    gen.warnings.push(format!("unrecognized decision {p:?}"));
                    Decision::Nochitchat
                })
            }
        };
        pred.decision = Some(decision);
        pred.provenance.decision = if stage.gold_decision { Source::Gold } else { Source::Predicted };
        gen.feed(SegmentTag::Response.open())?;
        pred.response = gen
            .payload(SegmentTag::Response, self.config.max_response_tokens)?
            .map(|p| unescape(&p))
            .unwrap_or_default();
        pred.warnings = gen.warnings;
        Ok(pred)
    }

    /// Predicts every system turn, in dialogue order.
    pub fn predict(&self, ds: &[Dialogue], stage: StageSpec) -> Result<Vec<TurnPrediction>> {
        let mut out = Vec::new();
        for d in ds {
            for (t, _) in d.system_turns() {
                out.push(self.infer_turn(d, t, stage)?);
            }
        }
        Ok(out)
    }

    pub fn run_eval(
        &self,
        ds: &[Dialogue],
        stage: StageSpec,
        ranker_name: &str,
    ) -> Result<(EvalReport, Vec<TurnPrediction>)> {
        let preds = self.predict(ds, stage)?;
        let mut report = evaluate_predictions(&preds, ds)?;
        report.arch = self.models.arch.name().to_string();
        report.stage = stage.label();
        report.ranker = if self.models.arch.uses_knowledge() { ranker_name.to_string() } else { "-".to_string() };
        Ok((report, preds))
    }
}

/// Metrics of predictions against the gold turns they name.
pub fn evaluate_predictions(preds: &[TurnPrediction], ds: &[Dialogue]) -> Result<EvalReport> {
    let gold_turn = |p: &TurnPrediction| -> Result<&Turn> {
        ds.iter()
            .find(|d| d.id == p.dialogue_id)
            .and_then(|d| d.turns.get(p.turn_index))
            .ok_or_else(|| CoreError::Contract(format!("no gold turn {} of {}", p.turn_index, p.dialogue_id)))
    };
    let golds: Vec<&Turn> = preds.iter().map(gold_turn).collect::<Result<_>>()?;
    let pb: Vec<BeliefState> = preds.iter().map(|p| p.belief.clone()).collect();
    let gb: Vec<BeliefState> = golds.iter().map(|g| g.belief.clone()).collect();
    let pa: Vec<Vec<DialogAct>> = preds.iter().map(|p| p.acts.clone()).collect();
    let ga: Vec<Vec<DialogAct>> = golds.iter().map(|g| g.acts.clone()).collect();
    let pr: Vec<String> = preds.iter().map(|p| p.response.clone()).collect();
    let gr: Vec<String> = golds.iter().map(|g| g.text().to_string()).collect();
    let enriched: Vec<bool> = golds.iter().map(|g| g.enriched).collect();

    let with_decision: Vec<(Decision, Decision)> = preds
        .iter()
        .zip(&golds)
        .filter_map(|(p, g)| p.decision.map(|d| (d, Decision::from_flag(g.enriched))))
        .collect();
    let decision = if with_decision.is_empty() {
        None
    } else {
        let (p, g): (Vec<Decision>, Vec<Decision>) = with_decision.into_iter().unzip();
        Some(decision_f1(&p, &g)?)
    };
    let knowledge_used = preds.iter().any(|p| p.provenance.knowledge != Source::Absent);
    let recall = if knowledge_used {
        let (s, g): (Vec<Vec<SnippetId>>, Vec<Vec<SnippetId>>) = preds
            .iter()
            .zip(&golds)
            .filter(|(_, g)| g.enriched && !g.gold_snippet_ids.is_empty())
            .map(|(p, g)| (p.selected.clone(), g.gold_snippet_ids.clone()))
            .unzip();
        selection_recall(&s, &g)?
    } else {
        None
    };
    Ok(EvalReport {
        joint_ga: joint_ga(&pb, &gb)?,
        avg_ga: avg_ga(&pb, &gb)?,
        act_slot_f1: (!pa.is_empty()).then(|| act_slot_f1(&pa, &ga)).transpose()?,
        bleu4_aug: bleu4_subset(&pr, &gr, &enriched, BleuSubset::Aug)?,
        bleu4_orig: bleu4_subset(&pr, &gr, &enriched, BleuSubset::Orig)?,
        bleu4_all: bleu4_subset(&pr, &gr, &enriched, BleuSubset::All)?,
        selection_recall: recall,
        decision_f1: decision,
        n_turns: preds.len(),
        n_aug: enriched.iter().filter(|&&e| e).count(),
        n_orig: enriched.iter().filter(|&&e| !e).count(),
        n_parse_warnings: preds.iter().map(|p| p.warnings.len()).sum(),
        ..Default::default()
    })
}

/// One JSON record per line.
pub fn write_predictions(path: &Path, preds: &[TurnPrediction]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?);
    for p in preds {
        let line = serde_json::to_string(p).map_err(|e| CoreError::Serialization(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| CoreError::io(path, e))?;
    }
    f.flush().map_err(|e| CoreError::io(path, e))
}

/// Orders reports for the stage grid: all-oracle, gold TOD, end-to-end.
pub fn sort_reports(reports: &mut [EvalReport]) {
    let stage_rank = |s: &str| match s {
        "all-oracle" => 0,
        "gold TOD+knowledge" | "gold TOD+decision" => 1,
        "gold TOD" => 2,
        "end-to-end" => 3,
        _ => 4,
    };
    let arch_rank = |a: &str| Architecture::from_str(a).map_or(9, |x| x as u8);
    reports.sort_by_key(|r| (stage_rank(&r.stage), arch_rank(&r.arch)));
}
