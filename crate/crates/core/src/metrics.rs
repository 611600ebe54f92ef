//! Evaluation metrics: goal accuracy, act-slot F1, corpus BLEU-4, knowledge
//! selection recall and enrichment-decision F1.
//!
//! Metrics that are undefined on their input (no turns, no gold slots, an
//! empty BLEU subset) return `None` rather than a number.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{BeliefState, DialogAct};
use crate::error::{CoreError, Result};
use crate::retrieval::SnippetId;
use crate::seqfmt::Decision;
use crate::text::{lower_tokens, normalize_value};

fn aligned<A, B>(what: &str, a: &[A], b: &[B]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CoreError::Contract(format!("{what}: {} predictions for {} gold items", a.len(), b.len())));
    }
    Ok(())
}

/// Fraction of turns whose normalized belief equals gold exactly.
pub fn joint_ga(preds: &[BeliefState], golds: &[BeliefState]) -> Result<Option<f64>> {
    aligned("joint_ga", preds, golds)?;
    if golds.is_empty() {
        return Ok(None);
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p.normalized_set() == g.normalized_set()).count();
    Ok(Some(hits as f64 / golds.len() as f64))
}

/// Fraction of gold `(domain, slot)` entries predicted with the right value.
/// Extra predicted slots are ignored.
pub fn avg_ga(preds: &[BeliefState], golds: &[BeliefState]) -> Result<Option<f64>> {
    aligned("avg_ga", preds, golds)?;
    let mut total = 0usize;
    let mut hits = 0usize;
    for (p, g) in preds.iter().zip(golds) {
        for sv in g.iter() {
            total += 1;
            if p.get(&sv.domain, &sv.slot).is_some_and(|v| normalize_value(v) == normalize_value(&sv.value)) {
                hits += 1;
            }
        }
    }
    Ok((total > 0).then(|| hits as f64 / total as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    /// F1, with 1.0 when there is nothing to find and nothing predicted.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn act_keys(acts: &[DialogAct], with_values: bool) -> HashMap<(String, Option<String>, Option<String>), usize> {
    let mut m = HashMap::new();
    for a in acts {
        let slot = a.slot.clone();
        if with_values && !a.values.is_empty() {
            for v in &a.values {
                *m.entry((a.act.clone(), slot.clone(), Some(normalize_value(v)))).or_insert(0) += 1;
            }
        } else {
            *m.entry((a.act.clone(), slot, None)).or_insert(0) += 1;
        }
    }
    m
}

/// Pooled multiset counts of `(act, slot)` pairs, or `(act, slot, value)`
/// triples with `with_values`.
pub fn act_slot_counts(preds: &[Vec<DialogAct>], golds: &[Vec<DialogAct>], with_values: bool) -> Result<Counts> {
    aligned("act_slot_f1", preds, golds)?;
    let mut c = Counts::default();
    for (p, g) in preds.iter().zip(golds) {
        let pk = act_keys(p, with_values);
        let gk = act_keys(g, with_values);
        let pn: usize = pk.values().sum();
        let gn: usize = gk.values().sum();
        let tp: usize = pk.iter().map(|(k, &n)| n.min(gk.get(k).copied().unwrap_or(0))).sum();
        c.tp += tp;
        c.fp += pn - tp;
        c.fn_ += gn - tp;
    }
    Ok(c)
}

/// Micro-averaged F1 over `(act, slot)` pairs.
pub fn act_slot_f1(preds: &[Vec<DialogAct>], golds: &[Vec<DialogAct>]) -> Result<f64> {
    Ok(act_slot_counts(preds, golds, false)?.f1())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuSubset {
    Aug,
    Orig,
    All,
}

impl BleuSubset {
    pub fn includes(self, enriched: bool) -> bool {
        match self {
            BleuSubset::Aug => enriched,
            BleuSubset::Orig => !enriched,
            BleuSubset::All => true,
        }
    }
}

pub const BLEU_ORDER: usize = 4;

/// Pooled BLEU statistics: clipped matches and candidate n-gram totals per
/// order, plus candidate and reference lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BleuStats {
    pub matches: [usize; BLEU_ORDER],
    pub totals: [usize; BLEU_ORDER],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add(&mut self, candidate: &[String], reference: &[String]) {
        self.cand_len += candidate.len();
        self.ref_len += reference.len();
        for n in 1..=BLEU_ORDER {
            let c = ngrams(candidate, n);
            let r = ngrams(reference, n);
            self.totals[n - 1] += c.values().sum::<usize>();
            self.matches[n - 1] += c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }

    /// Geometric mean of the four precisions times the brevity penalty; 0
    /// when any order has no matches.
    pub fn score(&self) -> f64 {
        if self.cand_len == 0 || self.matches.contains(&0) {
            return 0.0;
        }
        let log_p: f64 = (0..BLEU_ORDER).map(|i| (self.matches[i] as f64 / self.totals[i] as f64).ln()).sum::<f64>()
            / BLEU_ORDER as f64;
        let bp =
            if self.cand_len > self.ref_len { 1.0 } else { (1.0 - self.ref_len as f64 / self.cand_len as f64).exp() };
        bp * log_p.exp()
    }
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Corpus BLEU-4 over candidate/reference pairs, both lowercased and
/// tokenized. `None` for an empty corpus.
pub fn bleu4(candidates: &[String], references: &[String]) -> Result<Option<f64>> {
    aligned("bleu4", candidates, references)?;
    if candidates.is_empty() {
        return Ok(None);
    }
    let mut s = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        s.add(&lower_tokens(c), &lower_tokens(r));
    }
    Ok(Some(s.score()))
}

/// BLEU-4 restricted to turns whose gold enrichment flag falls in `subset`.
pub fn bleu4_subset(
    candidates: &[String],
    references: &[String],
    enriched: &[bool],
    subset: BleuSubset,
) -> Result<Option<f64>> {
    aligned("bleu4", candidates, references)?;
    aligned("bleu4 subset labels", enriched, references)?;
    let (c, r): (Vec<String>, Vec<String>) = candidates
        .iter()
        .zip(references)
        .zip(enriched)
        .filter(|(_, &e)| subset.includes(e))
        .map(|((c, r), _)| (c.clone(), r.clone()))
        .unzip();
    bleu4(&c, &r)
}

/// Mean over enriched turns of the fraction of gold ids found in the
/// selected set.
pub fn selection_recall(selected: &[Vec<SnippetId>], gold: &[Vec<SnippetId>]) -> Result<Option<f64>> {
    aligned("selection_recall", selected, gold)?;
    let mut sum = 0.0;
    for (i, (s, g)) in selected.iter().zip(gold).enumerate() {
        let g: HashSet<&SnippetId> = g.iter().collect();
        if g.is_empty() {
            return Err(CoreError::Contract(format!("selection_recall: turn {i} has no gold snippets")));
        }
        let s: HashSet<&SnippetId> = s.iter().collect();
        sum += g.intersection(&s).count() as f64 / g.len() as f64;
    }
    Ok((!gold.is_empty()).then(|| sum / gold.len() as f64))
}

pub fn decision_counts(preds: &[Decision], golds: &[Decision]) -> Result<Counts> {
    aligned("decision_f1", preds, golds)?;
    let mut c = Counts::default();
    for (p, g) in preds.iter().zip(golds) {
        match (p.is_chitchat(), g.is_chitchat()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

/// Binary F1 with chit-chat as the positive class.
pub fn decision_f1(preds: &[Decision], golds: &[Decision]) -> Result<f64> {
    Ok(decision_counts(preds, golds)?.f1())
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub arch: String,
    pub stage: String,
    pub ranker: String,
    pub joint_ga: Option<f64>,
    pub avg_ga: Option<f64>,
    pub act_slot_f1: Option<f64>,
    pub bleu4_aug: Option<f64>,
    pub bleu4_orig: Option<f64>,
    pub bleu4_all: Option<f64>,
    pub selection_recall: Option<f64>,
    pub decision_f1: Option<f64>,
    pub n_turns: usize,
    pub n_aug: usize,
    pub n_orig: usize,
    pub n_parse_warnings: usize,
}

impl EvalReport {
    pub fn values(&self) -> [(&'static str, Option<f64>); 8] {
        [
            ("joint_ga", self.joint_ga),
            ("avg_ga", self.avg_ga),
            ("act_slot_f1", self.act_slot_f1),
            ("bleu4_aug", self.bleu4_aug),
            ("bleu4_orig", self.bleu4_orig),
            ("bleu4_all", self.bleu4_all),
            ("selection_recall", self.selection_recall),
            ("decision_f1", self.decision_f1),
        ]
    }

    /// Every present value lies in `[0, 1]`.
    pub fn in_range(&self) -> bool {
        self.values().iter().all(|(_, v)| v.is_none_or(|x| (0.0..=1.0).contains(&x)))
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x))
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// One row per report: model, goal accuracies, act-slot F1 and the three
/// BLEU-4 columns, in percent.
pub fn render_main_table(reports: &[EvalReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                format!("{} [{}]", r.arch, r.stage),
                pct(r.joint_ga),
                pct(r.avg_ga),
                pct(r.act_slot_f1),
                pct(r.bleu4_aug),
                pct(r.bleu4_orig),
                pct(r.bleu4_all),
            ]
        })
        .collect();
    render(&["Model", "Joint GA", "Avg GA", "Act-Slot F1", "BLEU-4 aug", "BLEU-4 orig", "BLEU-4 all"], &rows)
}

/// Stage ablation grid: one column per architecture, one row block per stage.
pub fn render_stage_grid(reports: &[EvalReport]) -> String {
    let mut archs: Vec<&str> = Vec::new();
    let mut stages: Vec<&str> = Vec::new();
    for r in reports {
        if !archs.contains(&r.arch.as_str()) {
            archs.push(&r.arch);
        }
        if !stages.contains(&r.stage.as_str()) {
            stages.push(&r.stage);
        }
    }
    let by: BTreeMap<(&str, &str), &EvalReport> =
        reports.iter().map(|r| ((r.arch.as_str(), r.stage.as_str()), r)).collect();
    let mut rows = Vec::new();
    for &s in &stages {
        for (metric, get) in [
            ("BLEU-4 aug", (|r: &EvalReport| r.bleu4_aug) as fn(&EvalReport) -> Option<f64>),
            ("BLEU-4 all", |r: &EvalReport| r.bleu4_all),
            ("selection recall", |r: &EvalReport| r.selection_recall),
            ("decision F1", |r: &EvalReport| r.decision_f1),
        ] {
            let mut row = vec![format!("{s}: {metric}")];
            row.extend(archs.iter().map(|a| pct(by.get(&(*a, s)).and_then(|r| get(r)))));
            rows.push(row);
        }
    }
    let mut header = vec!["Stage"];
    header.extend(archs.iter().copied());
    render(&header, &rows)
}
